#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tableqa::sim {

/// Simulated time. All arithmetic happens on integer ticks so traces are
/// identical across platforms; one time unit is kTicksPerUnit ticks.
using Tick = std::int64_t;
inline constexpr Tick kTicksPerUnit = 1'000'000;

/// Rounds to the nearest tick, never below one tick.
Tick to_ticks(double units);
double to_units(Tick ticks);

enum class GenDistribution { constant, uniform, exponential, lognormal };

std::string_view to_string(GenDistribution d);
std::optional<GenDistribution> parse_gen_distribution(std::string_view name);

/// Per-sample generation duration. Only the fields of the selected family
/// are read: constant -> `constant`; uniform -> [`low`, `high`];
/// exponential -> `mean`; lognormal -> exp(N(`log_mu`, `log_sigma`^2)).
struct GenTimeRule {
  GenDistribution family = GenDistribution::lognormal;
  double constant = 1.0;
  double low = 0.5;
  double high = 1.5;
  double mean = 1.0;
  double log_mu = 0.0;
  double log_sigma = 1.0;

  bool operator==(const GenTimeRule&) const = default;
};

struct SimConfig {
  int num_engines = 16;
  int rollout_batch = 512;
  int training_batch = 64;
  /// Samples per cycle generated under the previous adapter. Ignored by
  /// simulate_plain().
  int buffer_size = 512;
  int num_cycles = 4;
  GenTimeRule gen_time;
  double train_step_time = 2.0;
  double sync_time = 4.0;
  /// Train only after the whole rollout batch is generated instead of as
  /// soon as each training slice is ready.
  bool strict_barrier = false;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on a config that cannot be simulated.
  void validate() const;
  int steps_per_cycle() const { return rollout_batch / training_batch; }

  bool operator==(const SimConfig&) const = default;
};

/// The common-random-numbers stream: `count` durations drawn from
/// mt19937_64(cfg.seed) with portable transforms.
std::vector<Tick> draw_generation_times(const SimConfig& cfg, std::size_t count);

/// Upper bound on the number of samples either simulator can draw.
std::size_t generation_draws_needed(const SimConfig& cfg);

enum class Mode { plain, async };
std::string_view to_string(Mode m);

enum class EventKind { gen_start, gen_end, train_start, train_end, sync, idle_start, idle_end };
std::string_view to_string(EventKind k);

inline constexpr int kTrainerActor = -1;

struct TraceEvent {
  Tick t = 0;
  int actor = kTrainerActor;  // engine index, or kTrainerActor
  EventKind kind = EventKind::gen_start;
  std::optional<std::int64_t> sample;
  int version = 0;

  bool operator==(const TraceEvent&) const = default;
};

struct SampleRecord {
  std::int64_t id = 0;
  int engine = 0;
  int cycle = 0;    // training cycle the sample is charged to
  int version = 0;  // adapter version current at gen_start
  Tick start = 0;
  Tick end = 0;
  int train_step = -1;  // global training-step index, -1 if never consumed

  bool operator==(const SampleRecord&) const = default;
};

struct TrainStepRecord {
  int cycle = 0;
  int index = 0;  // position within the cycle
  Tick start = 0;
  Tick end = 0;
  std::vector<std::int64_t> samples;

  bool operator==(const TrainStepRecord&) const = default;
};

struct ScheduleTrace {
  Mode mode = Mode::plain;
  SimConfig config;
  std::vector<TraceEvent> events;  // sorted by time
  std::vector<SampleRecord> samples;
  std::vector<TrainStepRecord> steps;
  std::vector<Tick> sync_end;            // per cycle, when the next version became available
  std::vector<int> buffered_per_cycle;   // samples charged to cycle c+1 generated with version c
  std::vector<std::int64_t> final_buffer;  // buffered samples left over after the last cycle
  Tick makespan = 0;                     // end of the last sync
  std::vector<Tick> engine_idle;

  bool operator==(const ScheduleTrace&) const = default;
};

/// Plain GRPO: the next rollout batch starts only after the trainer has
/// consumed the current one and synced the new weights.
ScheduleTrace simulate_plain(const SimConfig& cfg);
ScheduleTrace simulate_plain(const SimConfig& cfg, std::span<const Tick> generation_times);

/// Async GRPO: once a batch's fresh samples are all dispatched, free engines
/// keep generating with the current adapter into the rollout buffer (up to
/// min(buffer_size, rollout_batch) per cycle). Those samples count toward the
/// next cycle's quota, which is topped up with fresh samples once the new
/// adapter is synced.
ScheduleTrace simulate_async(const SimConfig& cfg);
ScheduleTrace simulate_async(const SimConfig& cfg, std::span<const Tick> generation_times);

struct IdleReport {
  std::vector<double> per_engine_idle;
  double total_idle = 0.0;
  double idle_fraction = 0.0;
  double makespan = 0.0;
  /// Idle time during which at least one other engine was still generating.
  double straggler_idle = 0.0;
  /// Idle time overlapping a training step or a weight sync.
  double idle_during_training = 0.0;
};

/// Rebuilt from the event list alone. Throws std::invalid_argument on a
/// malformed trace (unordered events, unmatched start/end, overlaps).
IdleReport idle_report(const ScheduleTrace& trace);

/// Returns one message per violated invariant (time order, one sample per
/// engine, causality, conservation, version discipline); empty when sound.
std::vector<std::string> check_trace_invariants(const ScheduleTrace& trace);

struct ComparisonRow {
  std::uint64_t seed = 0;
  IdleReport plain;
  IdleReport async;
};

struct ComparisonReport {
  SimConfig config;
  std::vector<ComparisonRow> rows;

  double mean_plain_straggler() const;
  double mean_async_straggler() const;
};

/// Runs both simulators per seed on one shared duration stream.
ComparisonReport compare(const SimConfig& cfg, const std::vector<std::uint64_t>& seeds);

std::string render_comparison(const ComparisonReport& report);

/// One line per event plus a trailing {"summary": ...} record.
std::string export_trace_jsonl(const ScheduleTrace& trace);

/// Text timeline: one row per engine ('#' fresh sample, '+' buffered sample,
/// '.' idle) and one trainer row ('T' training, 'S' syncing).
std::string render_gantt(const ScheduleTrace& trace, int width = 100);

/// Applies `key = value` settings onto `base`. Unknown keys throw.
SimConfig sim_config_from_kv(std::string_view text, SimConfig base = {});
nlohmann::ordered_json sim_config_to_json(const SimConfig& cfg);

}  // namespace tableqa::sim
