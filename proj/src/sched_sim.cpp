#include "tableqa/sched_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "tableqa/config.hpp"

namespace tableqa::sim {

namespace {
constexpr double kMaxUnits = 1e12;
}

Tick to_ticks(double units) {
  if (!std::isfinite(units) || units < 0.0 || units > kMaxUnits)
    throw std::out_of_range(fmt::format("sim: duration {} out of range", units));
  return std::max<Tick>(1, std::llround(units * static_cast<double>(kTicksPerUnit)));
}

double to_units(Tick ticks) { return static_cast<double>(ticks) / static_cast<double>(kTicksPerUnit); }

std::string_view to_string(GenDistribution d) {
  switch (d) {
    case GenDistribution::constant: return "constant";
    case GenDistribution::uniform: return "uniform";
    case GenDistribution::exponential: return "exponential";
    case GenDistribution::lognormal: return "lognormal";
  }
  return "?";
}

std::optional<GenDistribution> parse_gen_distribution(std::string_view name) {
  for (auto d : {GenDistribution::constant, GenDistribution::uniform, GenDistribution::exponential,
                 GenDistribution::lognormal})
    if (to_string(d) == name) return d;
  return std::nullopt;
}

std::string_view to_string(Mode m) { return m == Mode::plain ? "plain" : "async"; }

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::gen_start: return "gen_start";
    case EventKind::gen_end: return "gen_end";
    case EventKind::train_start: return "train_start";
    case EventKind::train_end: return "train_end";
    case EventKind::sync: return "sync";
    case EventKind::idle_start: return "idle_start";
    case EventKind::idle_end: return "idle_end";
  }
  return "?";
}

void SimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("sim: " + msg); };
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0 && v <= kMaxUnits; };
  if (num_engines < 1) fail("num_engines must be >= 1");
  if (rollout_batch < 1) fail("rollout_batch must be >= 1");
  if (training_batch < 1) fail("training_batch must be >= 1");
  if (rollout_batch % training_batch != 0) fail("rollout_batch must be a multiple of training_batch");
  if (buffer_size < 0) fail("buffer_size must be >= 0");
  if (num_cycles < 1) fail("num_cycles must be >= 1");
  if (!positive(train_step_time)) fail("train_step_time must be positive");
  if (!positive(sync_time)) fail("sync_time must be positive");
  const auto& g = gen_time;
  switch (g.family) {
    case GenDistribution::constant:
      if (!positive(g.constant)) fail("gen_constant must be positive");
      break;
    case GenDistribution::uniform:
      if (!positive(g.low) || !positive(g.high) || g.low > g.high) fail("gen_low/gen_high must satisfy 0 < low <= high");
      break;
    case GenDistribution::exponential:
      if (!positive(g.mean)) fail("gen_mean must be positive");
      break;
    case GenDistribution::lognormal:
      if (!std::isfinite(g.log_mu) || !std::isfinite(g.log_sigma) || g.log_sigma < 0.0)
        fail("gen_log_mu must be finite and gen_log_sigma >= 0");
      break;
  }
}

namespace {

// Uniform double in [0, 1) from the top 53 bits, identical on every platform
// (std::uniform_real_distribution is not).
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double draw_units(const GenTimeRule& g, std::mt19937_64& rng) {
  switch (g.family) {
    case GenDistribution::constant: return g.constant;
    case GenDistribution::uniform: return g.low + (g.high - g.low) * unit_uniform(rng);
    case GenDistribution::exponential: return -g.mean * std::log1p(-unit_uniform(rng));
    case GenDistribution::lognormal: {
      double u1 = 1.0 - unit_uniform(rng);  // (0, 1]
      double u2 = unit_uniform(rng);
      double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      return std::exp(g.log_mu + g.log_sigma * z);
    }
  }
  return g.constant;
}

}  // namespace

std::vector<Tick> draw_generation_times(const SimConfig& cfg, std::size_t count) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Tick> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(to_ticks(std::min(draw_units(cfg.gen_time, rng), kMaxUnits)));
  return out;
}

std::size_t generation_draws_needed(const SimConfig& cfg) {
  return static_cast<std::size_t>(cfg.num_cycles + 1) * static_cast<std::size_t>(cfg.rollout_batch);
}

namespace {

int kind_rank(EventKind k) {
  switch (k) {
    case EventKind::gen_end: return 0;
    case EventKind::train_end: return 1;
    case EventKind::sync: return 2;
    case EventKind::idle_start: return 3;
    case EventKind::idle_end: return 4;
    case EventKind::train_start: return 5;
    case EventKind::gen_start: return 6;
  }
  return 7;
}

struct EngineState {
  bool busy = false;
  Tick until = 0;
  std::int64_t sample = -1;
};

enum class Phase { idle, training, syncing };

int version_at(const std::vector<Tick>& sync_end, Tick t) {
  return static_cast<int>(std::upper_bound(sync_end.begin(), sync_end.end(), t) - sync_end.begin());
}

ScheduleTrace run(const SimConfig& cfg, std::span<const Tick> times, Mode mode) {
  cfg.validate();
  const int cycles = cfg.num_cycles;
  const int rb = cfg.rollout_batch;
  const int tb = cfg.training_batch;
  const int steps = cfg.steps_per_cycle();
  const int buffer_cap = mode == Mode::async ? std::min(cfg.buffer_size, rb) : 0;
  const Tick train_ticks = to_ticks(cfg.train_step_time);
  const Tick sync_ticks = to_ticks(cfg.sync_time);

  ScheduleTrace tr;
  tr.mode = mode;
  tr.config = cfg;
  tr.buffered_per_cycle.assign(static_cast<std::size_t>(cycles), 0);

  std::vector<int> charged(static_cast<std::size_t>(cycles) + 1, 0);
  std::vector<std::vector<std::int64_t>> done(static_cast<std::size_t>(cycles) + 1);
  std::vector<std::size_t> consumed(static_cast<std::size_t>(cycles) + 1, 0);
  std::vector<EngineState> engines(static_cast<std::size_t>(cfg.num_engines));

  int version = 0;
  int fresh_left = rb;
  Phase phase = Phase::idle;
  Tick trainer_until = 0;
  int step_in_cycle = 0;
  bool finished = false;
  Tick now = 0;

  auto emit = [&](int actor, EventKind kind, std::optional<std::int64_t> sample, int v) {
    tr.events.push_back({now, actor, kind, sample, v});
  };

  while (true) {
    for (std::size_t e = 0; e < engines.size(); ++e) {
      auto& eng = engines[e];
      if (!eng.busy || eng.until != now) continue;
      auto& s = tr.samples[static_cast<std::size_t>(eng.sample)];
      done[static_cast<std::size_t>(s.cycle)].push_back(s.id);
      emit(static_cast<int>(e), EventKind::gen_end, s.id, s.version);
      eng.busy = false;
    }

    if (phase == Phase::training && trainer_until == now) {
      emit(kTrainerActor, EventKind::train_end, std::nullopt, version);
      if (++step_in_cycle == steps) {
        phase = Phase::syncing;
        trainer_until = now + sync_ticks;
      } else {
        phase = Phase::idle;
      }
    } else if (phase == Phase::syncing && trainer_until == now) {
      ++version;
      tr.sync_end.push_back(now);
      emit(kTrainerActor, EventKind::sync, std::nullopt, version);
      phase = Phase::idle;
      step_in_cycle = 0;
      if (version == cycles) {
        finished = true;
        tr.makespan = now;
      } else {
        fresh_left = rb - charged[static_cast<std::size_t>(version)];
      }
    }

    if (!finished && phase == Phase::idle) {
      auto c = static_cast<std::size_t>(version);
      auto available = done[c].size() - consumed[c];
      bool ready = cfg.strict_barrier ? done[c].size() == static_cast<std::size_t>(rb) : true;
      if (ready && available >= static_cast<std::size_t>(tb)) {
        TrainStepRecord step;
        step.cycle = version;
        step.index = step_in_cycle;
        step.start = now;
        step.end = now + train_ticks;
        auto global = static_cast<int>(tr.steps.size());
        for (std::size_t i = 0; i < static_cast<std::size_t>(tb); ++i) {
          auto id = done[c][consumed[c] + i];
          step.samples.push_back(id);
          tr.samples[static_cast<std::size_t>(id)].train_step = global;
        }
        consumed[c] += static_cast<std::size_t>(tb);
        tr.steps.push_back(std::move(step));
        phase = Phase::training;
        trainer_until = now + train_ticks;
        emit(kTrainerActor, EventKind::train_start, std::nullopt, version);
      }
    }

    if (!finished) {
      for (std::size_t e = 0; e < engines.size(); ++e) {
        auto& eng = engines[e];
        if (eng.busy) continue;
        int cycle;
        if (fresh_left > 0) {
          cycle = version;
          --fresh_left;
        } else if (charged[static_cast<std::size_t>(version) + 1] < buffer_cap) {
          cycle = version + 1;
          ++tr.buffered_per_cycle[static_cast<std::size_t>(version)];
        } else {
          break;
        }
        ++charged[static_cast<std::size_t>(cycle)];
        auto id = static_cast<std::int64_t>(tr.samples.size());
        if (static_cast<std::size_t>(id) >= times.size())
          throw std::invalid_argument(fmt::format("sim: generation times exhausted after {} samples", times.size()));
        SampleRecord s;
        s.id = id;
        s.engine = static_cast<int>(e);
        s.cycle = cycle;
        s.version = version;
        s.start = now;
        s.end = now + times[static_cast<std::size_t>(id)];
        tr.samples.push_back(s);
        eng = {true, s.end, id};
        emit(static_cast<int>(e), EventKind::gen_start, id, version);
      }
    }

    Tick next = std::numeric_limits<Tick>::max();
    for (const auto& eng : engines)
      if (eng.busy) next = std::min(next, eng.until);
    if (phase != Phase::idle) next = std::min(next, trainer_until);
    if (next == std::numeric_limits<Tick>::max()) {
      if (finished) break;
      throw std::logic_error("sim: no pending events before the last cycle finished");
    }
    now = next;
  }

  for (const auto& s : tr.samples)
    if (s.cycle == cycles) tr.final_buffer.push_back(s.id);

  // Idle intervals fill the gaps between an engine's samples up to the makespan.
  tr.engine_idle.assign(engines.size(), 0);
  std::vector<std::vector<const SampleRecord*>> per_engine(engines.size());
  for (const auto& s : tr.samples) per_engine[static_cast<std::size_t>(s.engine)].push_back(&s);
  for (std::size_t e = 0; e < engines.size(); ++e) {
    Tick cursor = 0;
    auto add_idle = [&](Tick from, Tick to) {
      to = std::min(to, tr.makespan);
      if (from >= to) return;
      tr.engine_idle[e] += to - from;
      tr.events.push_back({from, static_cast<int>(e), EventKind::idle_start, std::nullopt, version_at(tr.sync_end, from)});
      tr.events.push_back({to, static_cast<int>(e), EventKind::idle_end, std::nullopt, version_at(tr.sync_end, to)});
    };
    for (const auto* s : per_engine[e]) {
      add_idle(cursor, s->start);
      cursor = std::max(cursor, s->end);
    }
    add_idle(cursor, tr.makespan);
  }

  std::stable_sort(tr.events.begin(), tr.events.end(), [](const TraceEvent& a, const TraceEvent& b) {
    if (a.t != b.t) return a.t < b.t;
    return kind_rank(a.kind) < kind_rank(b.kind);
  });
  return tr;
}

}  // namespace

ScheduleTrace simulate_plain(const SimConfig& cfg) {
  auto times = draw_generation_times(cfg, generation_draws_needed(cfg));
  return simulate_plain(cfg, times);
}

ScheduleTrace simulate_plain(const SimConfig& cfg, std::span<const Tick> generation_times) {
  return run(cfg, generation_times, Mode::plain);
}

ScheduleTrace simulate_async(const SimConfig& cfg) {
  auto times = draw_generation_times(cfg, generation_draws_needed(cfg));
  return simulate_async(cfg, times);
}

ScheduleTrace simulate_async(const SimConfig& cfg, std::span<const Tick> generation_times) {
  return run(cfg, generation_times, Mode::async);
}

namespace {

struct Interval {
  Tick from;
  Tick to;
};

std::vector<Interval> merge(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.from < b.from; });
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (iv.from >= iv.to) continue;
    if (!out.empty() && iv.from <= out.back().to)
      out.back().to = std::max(out.back().to, iv.to);
    else
      out.push_back(iv);
  }
  return out;
}

// Overlap of `iv` with a sorted, disjoint interval list.
Tick overlap(const Interval& iv, const std::vector<Interval>& sorted) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), iv.from,
                             [](const Interval& s, Tick t) { return s.to <= t; });
  Tick total = 0;
  for (; it != sorted.end() && it->from < iv.to; ++it) total += std::min(iv.to, it->to) - std::max(iv.from, it->from);
  return total;
}

[[noreturn]] void malformed(const std::string& msg) { throw std::invalid_argument("malformed trace: " + msg); }

}  // namespace

IdleReport idle_report(const ScheduleTrace& trace) {
  const auto& cfg = trace.config;
  if (cfg.num_engines < 1) malformed("no engines");
  if (trace.makespan <= 0) malformed("non-positive makespan");
  const auto engines = static_cast<std::size_t>(cfg.num_engines);
  const Tick sync_ticks = to_ticks(cfg.sync_time);
  const Tick makespan = trace.makespan;

  std::vector<std::optional<std::pair<std::int64_t, Tick>>> open_gen(engines);
  std::vector<std::optional<Tick>> open_idle(engines);
  std::vector<std::vector<Interval>> busy(engines), idle(engines);
  std::vector<Interval> trainer;
  std::optional<Tick> open_train;
  Tick last_t = std::numeric_limits<Tick>::min();

  for (const auto& ev : trace.events) {
    if (ev.t < last_t) malformed(fmt::format("event at t={} after t={}", ev.t, last_t));
    last_t = ev.t;
    if (ev.actor == kTrainerActor) {
      switch (ev.kind) {
        case EventKind::train_start:
          if (open_train) malformed("overlapping training steps");
          open_train = ev.t;
          break;
        case EventKind::train_end:
          if (!open_train) malformed("train_end without train_start");
          trainer.push_back({*open_train, ev.t});
          open_train.reset();
          break;
        case EventKind::sync:
          if (open_train) malformed("sync during a training step");
          trainer.push_back({ev.t - sync_ticks, ev.t});
          break;
        default: malformed(fmt::format("trainer emitted {}", to_string(ev.kind)));
      }
      continue;
    }
    if (ev.actor < 0 || static_cast<std::size_t>(ev.actor) >= engines) malformed(fmt::format("unknown actor {}", ev.actor));
    auto e = static_cast<std::size_t>(ev.actor);
    switch (ev.kind) {
      case EventKind::gen_start:
        if (!ev.sample) malformed("gen_start without a sample");
        if (open_gen[e]) malformed(fmt::format("engine {} starts sample {} while busy", e, *ev.sample));
        if (open_idle[e]) malformed(fmt::format("engine {} starts sample {} while idle", e, *ev.sample));
        open_gen[e] = std::make_pair(*ev.sample, ev.t);
        break;
      case EventKind::gen_end:
        if (!ev.sample || !open_gen[e] || open_gen[e]->first != *ev.sample)
          malformed(fmt::format("engine {} ends a sample it did not start", e));
        busy[e].push_back({open_gen[e]->second, ev.t});
        open_gen[e].reset();
        break;
      case EventKind::idle_start:
        if (open_gen[e] || open_idle[e]) malformed(fmt::format("engine {} goes idle while not available", e));
        open_idle[e] = ev.t;
        break;
      case EventKind::idle_end:
        if (!open_idle[e]) malformed(fmt::format("engine {} ends an idle period it did not start", e));
        if (ev.t > makespan) malformed(fmt::format("engine {} idle past the makespan", e));
        idle[e].push_back({*open_idle[e], ev.t});
        open_idle[e].reset();
        break;
      default: malformed(fmt::format("engine {} emitted {}", e, to_string(ev.kind)));
    }
  }
  if (open_train) malformed("unfinished training step");
  for (std::size_t e = 0; e < engines; ++e)
    if (open_gen[e] || open_idle[e]) malformed(fmt::format("engine {} has an unfinished interval", e));

  std::vector<Interval> all_busy;
  for (std::size_t e = 0; e < engines; ++e) {
    Tick covered = 0;
    for (const auto& iv : busy[e]) {
      all_busy.push_back(iv);
      covered += std::max<Tick>(0, std::min(iv.to, makespan) - iv.from);
    }
    for (const auto& iv : idle[e]) covered += iv.to - iv.from;
    if (covered != makespan)
      malformed(fmt::format("engine {} busy and idle time covers {} of {} ticks", e, covered, makespan));
  }
  auto union_busy = merge(std::move(all_busy));
  auto trainer_busy = merge(std::move(trainer));

  IdleReport r;
  r.makespan = to_units(makespan);
  Tick total = 0;
  Tick straggler = 0;
  Tick during_training = 0;
  for (std::size_t e = 0; e < engines; ++e) {
    Tick mine = 0;
    for (const auto& iv : idle[e]) {
      mine += iv.to - iv.from;
      // This engine is idle here, so any busy engine in the union is a peer.
      straggler += overlap(iv, union_busy);
      during_training += overlap(iv, trainer_busy);
    }
    r.per_engine_idle.push_back(to_units(mine));
    total += mine;
  }
  r.total_idle = to_units(total);
  r.idle_fraction = static_cast<double>(total) / (static_cast<double>(engines) * static_cast<double>(makespan));
  r.straggler_idle = to_units(straggler);
  r.idle_during_training = to_units(during_training);
  return r;
}

std::vector<std::string> check_trace_invariants(const ScheduleTrace& trace) {
  std::vector<std::string> bad;
  const auto& cfg = trace.config;
  const auto cycles = static_cast<std::size_t>(cfg.num_cycles);
  const auto rb = static_cast<std::size_t>(cfg.rollout_batch);

  for (std::size_t i = 1; i < trace.events.size(); ++i)
    if (trace.events[i].t < trace.events[i - 1].t) {
      bad.push_back(fmt::format("event {} is earlier than event {}", i, i - 1));
      break;
    }
  try {
    idle_report(trace);
  } catch (const std::invalid_argument& e) {
    bad.emplace_back(e.what());
  }

  if (trace.sync_end.size() != cycles)
    bad.push_back(fmt::format("{} syncs for {} cycles", trace.sync_end.size(), cycles));
  else if (trace.makespan != trace.sync_end.back())
    bad.push_back("makespan is not the end of the last sync");

  if (trace.steps.size() != cycles * static_cast<std::size_t>(cfg.steps_per_cycle()))
    bad.push_back(fmt::format("{} training steps, expected {}", trace.steps.size(),
                              cycles * static_cast<std::size_t>(cfg.steps_per_cycle())));

  std::vector<int> trained(trace.samples.size(), 0);
  std::vector<std::size_t> per_cycle(cycles, 0);
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& step = trace.steps[k];
    if (k > 0 && step.start < trace.steps[k - 1].end) bad.push_back(fmt::format("step {} overlaps step {}", k, k - 1));
    if (step.samples.size() != static_cast<std::size_t>(cfg.training_batch))
      bad.push_back(fmt::format("step {} trains on {} samples", k, step.samples.size()));
    auto c = static_cast<std::size_t>(step.cycle);
    if (c >= cycles) {
      bad.push_back(fmt::format("step {} belongs to cycle {}", k, step.cycle));
      continue;
    }
    ++per_cycle[c];
    if (c > 0 && c - 1 < trace.sync_end.size() && step.start < trace.sync_end[c - 1])
      bad.push_back(fmt::format("step {} starts before version {} is synced", k, c));
    if (c < trace.sync_end.size() && step.end > trace.sync_end[c])
      bad.push_back(fmt::format("step {} ends after its cycle's sync", k));
    for (auto id : step.samples) {
      if (id < 0 || static_cast<std::size_t>(id) >= trace.samples.size()) {
        bad.push_back(fmt::format("step {} trains on unknown sample {}", k, id));
        continue;
      }
      const auto& s = trace.samples[static_cast<std::size_t>(id)];
      ++trained[static_cast<std::size_t>(id)];
      if (s.end > step.start) bad.push_back(fmt::format("sample {} trained before it finished", id));
      if (s.cycle != step.cycle) bad.push_back(fmt::format("sample {} of cycle {} trained in cycle {}", id, s.cycle, step.cycle));
    }
  }

  std::vector<bool> in_final(trace.samples.size(), false);
  for (auto id : trace.final_buffer)
    if (id >= 0 && static_cast<std::size_t>(id) < trace.samples.size()) in_final[static_cast<std::size_t>(id)] = true;
  std::vector<std::size_t> charged(cycles + 1, 0);
  for (const auto& s : trace.samples) {
    auto i = static_cast<std::size_t>(s.id);
    if (s.end <= s.start) bad.push_back(fmt::format("sample {} has no duration", s.id));
    if (s.cycle < 0 || static_cast<std::size_t>(s.cycle) > cycles) {
      bad.push_back(fmt::format("sample {} charged to cycle {}", s.id, s.cycle));
      continue;
    }
    ++charged[static_cast<std::size_t>(s.cycle)];
    bool leftover = in_final[i];
    if (trained[i] + (leftover ? 1 : 0) != 1)
      bad.push_back(fmt::format("sample {} trained {} times (left in buffer: {})", s.id, trained[i], leftover));
    if (s.version > 0 && static_cast<std::size_t>(s.version) <= trace.sync_end.size() &&
        s.start < trace.sync_end[static_cast<std::size_t>(s.version) - 1])
      bad.push_back(fmt::format("sample {} uses version {} before it was synced", s.id, s.version));
    int staleness = s.cycle - s.version;
    if (staleness < 0 || staleness > (trace.mode == Mode::async ? 1 : 0))
      bad.push_back(fmt::format("sample {} of cycle {} generated with version {}", s.id, s.cycle, s.version));
  }
  for (std::size_t c = 0; c < cycles; ++c) {
    if (charged[c] != rb) bad.push_back(fmt::format("cycle {} has {} samples, expected {}", c, charged[c], rb));
    if (per_cycle[c] != static_cast<std::size_t>(cfg.steps_per_cycle()))
      bad.push_back(fmt::format("cycle {} has {} steps", c, per_cycle[c]));
  }
  if (charged[cycles] != trace.final_buffer.size()) bad.push_back("final buffer does not match the samples charged past the last cycle");
  if (trace.mode == Mode::plain && !trace.final_buffer.empty()) bad.push_back("plain schedule left samples in a buffer");
  return bad;
}

double ComparisonReport::mean_plain_straggler() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.plain.straggler_idle;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double ComparisonReport::mean_async_straggler() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.async.straggler_idle;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

ComparisonReport compare(const SimConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("compare: no seeds");
  ComparisonReport report;
  report.config = cfg;
  for (auto seed : seeds) {
    auto c = cfg;
    c.seed = seed;
    auto times = draw_generation_times(c, generation_draws_needed(c));
    report.rows.push_back({seed, idle_report(simulate_plain(c, times)), idle_report(simulate_async(c, times))});
  }
  return report;
}

std::string render_comparison(const ComparisonReport& report) {
  std::string out = fmt::format("{:>6}  {:>12}  {:>12}  {:>10}  {:>10}  {:>14}  {:>14}\n", "seed", "plain_span",
                                "async_span", "plain_idle", "async_idle", "plain_straggle", "async_straggle");
  for (const auto& r : report.rows)
    out += fmt::format("{:>6}  {:>12.3f}  {:>12.3f}  {:>10.4f}  {:>10.4f}  {:>14.3f}  {:>14.3f}\n", r.seed,
                       r.plain.makespan, r.async.makespan, r.plain.idle_fraction, r.async.idle_fraction,
                       r.plain.straggler_idle, r.async.straggler_idle);
  out += fmt::format("mean straggler idle: plain {:.3f}, async {:.3f}\n", report.mean_plain_straggler(),
                     report.mean_async_straggler());
  return out;
}

nlohmann::ordered_json sim_config_to_json(const SimConfig& cfg) {
  nlohmann::ordered_json j;
  j["num_engines"] = cfg.num_engines;
  j["rollout_batch"] = cfg.rollout_batch;
  j["training_batch"] = cfg.training_batch;
  j["buffer_size"] = cfg.buffer_size;
  j["num_cycles"] = cfg.num_cycles;
  j["gen_time"] = std::string(to_string(cfg.gen_time.family));
  switch (cfg.gen_time.family) {
    case GenDistribution::constant: j["gen_constant"] = cfg.gen_time.constant; break;
    case GenDistribution::uniform:
      j["gen_low"] = cfg.gen_time.low;
      j["gen_high"] = cfg.gen_time.high;
      break;
    case GenDistribution::exponential: j["gen_mean"] = cfg.gen_time.mean; break;
    case GenDistribution::lognormal:
      j["gen_log_mu"] = cfg.gen_time.log_mu;
      j["gen_log_sigma"] = cfg.gen_time.log_sigma;
      break;
  }
  j["train_step_time"] = cfg.train_step_time;
  j["sync_time"] = cfg.sync_time;
  j["strict_barrier"] = cfg.strict_barrier;
  j["seed"] = cfg.seed;
  return j;
}

std::string export_trace_jsonl(const ScheduleTrace& trace) {
  std::string out;
  for (const auto& ev : trace.events) {
    nlohmann::ordered_json j;
    j["t"] = to_units(ev.t);
    j["actor"] = ev.actor == kTrainerActor ? std::string("trainer") : fmt::format("engine-{}", ev.actor);
    j["kind"] = std::string(to_string(ev.kind));
    j["sample"] = ev.sample ? nlohmann::ordered_json(*ev.sample) : nlohmann::ordered_json(nullptr);
    j["version"] = ev.version;
    out += j.dump() + "\n";
  }
  auto report = idle_report(trace);
  nlohmann::ordered_json s;
  s["mode"] = std::string(to_string(trace.mode));
  s["config"] = sim_config_to_json(trace.config);
  s["makespan"] = report.makespan;
  s["samples"] = trace.samples.size();
  s["training_steps"] = trace.steps.size();
  s["buffered_per_cycle"] = trace.buffered_per_cycle;
  s["left_in_buffer"] = trace.final_buffer.size();
  s["engine_idle"] = report.per_engine_idle;
  s["total_idle"] = report.total_idle;
  s["idle_fraction"] = report.idle_fraction;
  s["straggler_idle"] = report.straggler_idle;
  s["idle_during_training"] = report.idle_during_training;
  out += nlohmann::ordered_json{{"summary", s}}.dump() + "\n";
  return out;
}

std::string render_gantt(const ScheduleTrace& trace, int width) {
  if (width < 10) throw std::invalid_argument("gantt: width must be >= 10");
  Tick span = trace.makespan;
  for (const auto& s : trace.samples) span = std::max(span, s.end);
  if (span <= 0) throw std::invalid_argument("gantt: empty trace");
  const auto w = static_cast<std::size_t>(width);
  auto column = [&](Tick t) {
    // Column x covers the midpoint (x + 0.5) * span / width.
    double x = static_cast<double>(t) * static_cast<double>(width) / static_cast<double>(span) - 0.5;
    return static_cast<std::ptrdiff_t>(std::ceil(x));
  };
  auto fill = [&](std::string& row, Tick from, Tick to, char c) {
    auto a = std::max<std::ptrdiff_t>(0, column(from));
    auto b = std::min<std::ptrdiff_t>(width, column(to));
    for (auto x = a; x < b; ++x) row[static_cast<std::size_t>(x)] = c;
  };

  const auto engines = static_cast<std::size_t>(trace.config.num_engines);
  std::vector<std::string> rows(engines, std::string(w, '.'));
  for (const auto& s : trace.samples)
    fill(rows[static_cast<std::size_t>(s.engine)], s.start, s.end, s.cycle == s.version ? '#' : '+');
  std::string trainer(w, '.');
  for (const auto& st : trace.steps) fill(trainer, st.start, st.end, 'T');
  const Tick sync_ticks = to_ticks(trace.config.sync_time);
  for (auto t : trace.sync_end) fill(trainer, t - sync_ticks, t, 'S');

  auto label_width = std::max<std::size_t>(7, fmt::format("e{}", engines - 1).size());
  std::string out = fmt::format("{} schedule, makespan {:.3f}, {:.3f} units per column\n", to_string(trace.mode),
                                to_units(trace.makespan), to_units(span) / width);
  std::string axis(w, ' ');
  auto m = std::clamp<std::ptrdiff_t>(column(trace.makespan), 0, width - 1);
  if (trace.makespan < span) axis[static_cast<std::size_t>(m)] = '|';
  out += fmt::format("{:<{}} {}\n", "", label_width, axis);
  out += fmt::format("{:<{}} {}\n", "trainer", label_width, trainer);
  for (std::size_t e = 0; e < engines; ++e) out += fmt::format("{:<{}} {}\n", fmt::format("e{}", e), label_width, rows[e]);
  return out;
}

SimConfig sim_config_from_kv(std::string_view text, SimConfig base) {
  for (const auto& kv : parse_key_values(text)) {
    const auto& k = kv.key;
    auto as_int = [&] {
      auto v = kv_int(kv);
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw std::invalid_argument(fmt::format("line {}: '{}' out of range", kv.line, k));
      return static_cast<int>(v);
    };
    if (k == "num_engines") base.num_engines = as_int();
    else if (k == "rollout_batch") base.rollout_batch = as_int();
    else if (k == "training_batch") base.training_batch = as_int();
    else if (k == "buffer_size") base.buffer_size = as_int();
    else if (k == "num_cycles") base.num_cycles = as_int();
    else if (k == "gen_time") {
      auto d = parse_gen_distribution(kv.value);
      if (!d) throw std::invalid_argument(fmt::format("line {}: unknown gen_time '{}'", kv.line, kv.value));
      base.gen_time.family = *d;
    } else if (k == "gen_constant") base.gen_time.constant = kv_double(kv);
    else if (k == "gen_low") base.gen_time.low = kv_double(kv);
    else if (k == "gen_high") base.gen_time.high = kv_double(kv);
    else if (k == "gen_mean") base.gen_time.mean = kv_double(kv);
    else if (k == "gen_log_mu") base.gen_time.log_mu = kv_double(kv);
    else if (k == "gen_log_sigma") base.gen_time.log_sigma = kv_double(kv);
    else if (k == "train_step_time") base.train_step_time = kv_double(kv);
    else if (k == "sync_time") base.sync_time = kv_double(kv);
    else if (k == "strict_barrier") base.strict_barrier = kv_bool(kv);
    else if (k == "seed") base.seed = kv_uint(kv);
    else kv_unknown(kv);
  }
  base.validate();
  return base;
}

}  // namespace tableqa::sim
