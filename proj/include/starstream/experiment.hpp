#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "starstream/controller.hpp"
#include "starstream/pipeline_sim.hpp"
#include "starstream/profiler.hpp"

namespace starstream {

/// Everything a batch run needs. Loaded from a JSON document; any scalar key
/// can be overridden by an environment variable STARSTREAM_<KEY>.
struct RunConfig {
  std::vector<std::filesystem::path> network_traces;  ///< CSV files or directories of them
  std::vector<std::filesystem::path> video_traces;    ///< video trace set directories
  std::string predictor = "hm";
  std::string controller = "starstream";
  std::string ablation;  ///< "", "v1" (gamma frozen) or "v2" (alternate predictor)
  std::string v2_predictor;  ///< predictor spec used under ablation v2
  Fidelity fidelity = Fidelity::kEventDriven;
  ControllerParams params;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "results";
  unsigned jobs = 1;
  double trace_offset = kDefaultTraceOffset;
  int content_duration = 0;
};

RunConfig load_run_config(const std::filesystem::path& path);
/// Applies STARSTREAM_* environment overrides in place.
void apply_env_overrides(RunConfig& config);
/// Checks that referenced paths exist and parameters are usable.
void validate(const RunConfig& config);
/// Ablation flags applied on top of `params`.
ControllerParams effective_params(const RunConfig& config);
/// Predictor spec in effect: v2_predictor under ablation v2, else predictor.
std::string effective_predictor(const RunConfig& config);

/// Expands directories to their sorted *.csv contents.
std::vector<std::filesystem::path> expand_trace_paths(const std::vector<std::filesystem::path>& paths);

/// A video with its profile and the stream format chosen by pruning.
struct PreparedVideo {
  VideoTraceSet set;
  std::shared_ptr<const ProfileTable> profile;
  StreamSettings stream;
};

PreparedVideo prepare_video(VideoTraceSet set);

struct PairOutcome {
  std::string video_id;
  std::string trace_id;
  bool stalled = false;
  std::string error;
  std::optional<SessionResult> session;
  std::size_t predictor_fallbacks = 0;
  double probe_budget = 0.0;
};

/// Runs one (video, trace) session under `config`. A stall is recorded in the
/// outcome rather than thrown.
PairOutcome run_pair(const PreparedVideo& video, const NetworkTrace& trace, const RunConfig& config);

/// Runs every pair, `config.jobs` at a time, and writes per-pair JSON and CSV
/// logs plus summary.json under config.out. Returns outcomes in pair order.
std::vector<PairOutcome> run_simulation(const RunConfig& config);

struct PairMetrics {
  std::string video_id;
  std::string trace_id;
  bool stalled = false;
  double accuracy = 0.0;
  double normalized_tp = 0.0;
  double ol_delay = 0.0;
  double response_delay = 0.0;
};

std::vector<PairMetrics> load_summary(const std::filesystem::path& result_dir);

/// Empirical CDF points (value, fraction ≤ value) per result set for accuracy,
/// normalized TP, OL delay and response delay, plus deltas.csv of each set
/// against the first. Throws ValidationError when pair sets differ.
void compare_results(const std::vector<std::filesystem::path>& result_dirs, const std::filesystem::path& out);

}  // namespace starstream
