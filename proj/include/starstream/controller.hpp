#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "starstream/decision.hpp"
#include "starstream/pipeline_sim.hpp"
#include "starstream/predictor.hpp"
#include "starstream/profiler.hpp"

namespace starstream {

inline constexpr double kDefaultAlpha = 1.0;
inline constexpr double kDefaultBeta = 0.02;
inline constexpr std::size_t kDefaultHorizon = 3;
inline constexpr double kDefaultTimeCell = 0.01;
inline constexpr int kBaselineGopLength = 2;
inline constexpr std::size_t kPrestreamWindow = 60;
inline constexpr std::size_t kMpcHistory = 5;
/// Upper bound on |C|^H for exhaustive enumeration.
inline constexpr std::uint64_t kOracleCap = 1'000'000;

// ---------------------------------------------------------------------------
// GOP length selection
// ---------------------------------------------------------------------------

struct GopChoice {
  int gop_length = 1;
  std::size_t steps_consumed = 0;
};

/// GOP length = number of leading non-shift steps, clipped to the candidate
/// range; no shift in the window selects the longest candidate.
GopChoice select_gop_length(std::span<const std::uint8_t> shifts, std::span<const int> candidates);

/// Mean of predicted[offset, offset + length); steps past the end reuse the
/// last prediction.
double mean_predicted_throughput(std::span<const double> predicted, std::size_t offset, int length);

struct HorizonGop {
  int gop_length = 1;
  double mean_throughput = 0.0;  ///< Mbps
};

/// Applies select_gop_length recursively over the lookahead window. The shift
/// that closed GOP k sits on GOP k+1's leading boundary and is not counted
/// again. Stops early when `content_remaining` seconds are used up.
std::vector<HorizonGop> plan_horizon(const PredictionResult& prediction,
                                     std::span<const int> candidates, std::size_t horizon,
                                     int content_remaining);

// ---------------------------------------------------------------------------
// Horizon optimizer
// ---------------------------------------------------------------------------

/// Profiled cost and value of streaming one GOP with a given bitrate/length.
struct UnitModel {
  std::vector<double> encode_delays;  ///< per frame, s
  std::vector<double> frame_bits;     ///< per frame
  double accuracy = 0.0;              ///< reference A(c)
};

/// Lookup of UnitModel by (bitrate index, GOP length).
class PlannerVideo {
 public:
  PlannerVideo() = default;
  PlannerVideo(std::vector<double> bitrates, int frame_rate);

  /// Builds uniform per-frame models from profile means at `stream`.
  static PlannerVideo from_profile(const ProfileTable& profile, const StreamSettings& stream);

  void set(std::size_t bitrate_index, int gop_length, UnitModel model);
  const UnitModel& at(std::size_t bitrate_index, int gop_length) const;
  const std::vector<double>& bitrates() const { return bitrates_; }
  int frame_rate() const { return frame_rate_; }

 private:
  std::vector<double> bitrates_;
  int frame_rate_ = 15;
  std::map<std::pair<std::size_t, int>, UnitModel> models_;
};

struct PlannerInput {
  AnalyticState start;           ///< t_{k-1} and Q_{k-1} when planning
  double content_start = 0.0;    ///< capture time of the first planned GOP
  std::vector<HorizonGop> gops;  ///< fixed lengths and predicted throughputs
  const PlannerVideo* video = nullptr;
  double gamma = 1.0;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  /// DP time cell in seconds; 0 keys states by exact completion time.
  double time_cell = kDefaultTimeCell;
  double stall_cap = kDefaultStallCap;
};

struct Plan {
  std::vector<std::size_t> bitrate_indices;
  std::vector<double> bitrates;
  double objective = 0.0;
  bool stall = false;
  std::size_t states_explored = 0;
};

/// Exact objective of a bitrate sequence; nullopt if any GOP exceeds the stall cap.
std::optional<double> evaluate_plan(const PlannerInput& input, std::span<const std::size_t> bitrate_indices);

/// Maximizes Σ α·γ·A_k − β·Q_k over the horizon by DP over quantized
/// completion times, keeping per cell the Pareto set of (value, Q).
/// Ties go to the lexicographically smallest bitrate sequence.
Plan optimize_dp(const PlannerInput& input);

/// Exhaustive enumeration under identical dynamics and tie-breaking.
/// Throws ValidationError when |C|^H exceeds kOracleCap.
Plan brute_force_oracle(const PlannerInput& input);

/// Worst-case objective loss of optimize_dp from time quantization.
double quantization_bound(const PlannerInput& input);

// ---------------------------------------------------------------------------
// Baseline rules
// ---------------------------------------------------------------------------

/// Largest candidate strictly below `estimate`; the smallest candidate when none is.
double highest_bitrate_below(double estimate, std::span<const double> candidates);

/// Mean of the pre-stream window fed through highest_bitrate_below; the
/// smallest candidate for an empty window.
double baseline_fixed(std::span<const NetworkSample> prestream, std::span<const double> candidates);

double baseline_adarate(double predicted_throughput, std::span<const double> candidates);

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

struct ControllerParams {
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::size_t horizon = kDefaultHorizon;
  std::vector<int> gop_candidates{1, 2, 3, 4, 5};
  std::size_t lookback = kDefaultLookback;
  std::size_t lookahead = kDefaultLookahead;
  std::size_t context = kDefaultContext;
  double delta = kDefaultShiftDelta;
  double time_cell = kDefaultTimeCell;
  double stall_cap = kDefaultStallCap;
  double gamma_period = 30.0;
  double probe_length = 5.0;
  double probe_cost = 1.44;  ///< GPU seconds per probe, charged off-pipeline
  /// Ablation V1: gamma stays 1.
  bool freeze_gamma = false;
  /// Nonzero pins every GOP to this length.
  int fixed_gop = 0;
  /// Feed the predictor per-GOP realized throughputs instead of per-second samples.
  bool gop_history = false;
  std::size_t hm_window = kDefaultBaselineWindow;
};

void validate(const ControllerParams& params);

/// Shared state every closed-loop policy needs.
struct PolicyContext {
  std::shared_ptr<const ProfileTable> profile;
  StreamSettings stream;
  PlannerVideo planner;
};

PolicyContext make_policy_context(std::shared_ptr<const ProfileTable> profile, const StreamSettings& stream);

/// Shift-guided GOP selection + DP bitrate optimization under MPC.
class StarStreamController final : public DecisionSource {
 public:
  StarStreamController(PolicyContext context, ControllerParams params,
                       std::unique_ptr<Predictor> predictor);

  Decision decide(const DecisionContext& ctx) override;
  void observe(const GopFeedback& feedback) override;
  std::string name() const override { return "starstream"; }

  double gamma() const { return gamma_.gamma; }
  double probe_budget_used() const { return probe_budget_used_; }
  std::size_t fallbacks() const { return fallbacks_; }

 private:
  void refresh_gamma(const DecisionContext& ctx);
  PredictionRequest make_request(const DecisionContext& ctx) const;

  PolicyContext context_;
  ControllerParams params_;
  std::unique_ptr<Predictor> predictor_;
  GammaState gamma_;
  double probe_budget_used_ = 0.0;
  std::size_t fallbacks_ = 0;
  std::vector<double> gop_throughputs_;
};

class FixedPolicy final : public DecisionSource {
 public:
  explicit FixedPolicy(PolicyContext context);
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "fixed"; }

 private:
  PolicyContext context_;
  std::optional<double> bitrate_;
};

class AdaRatePolicy final : public DecisionSource {
 public:
  AdaRatePolicy(PolicyContext context, ControllerParams params, std::unique_ptr<Predictor> predictor);
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "adarate"; }

 private:
  PolicyContext context_;
  ControllerParams params_;
  std::unique_ptr<Predictor> predictor_;
};

/// Horizon-3 DP with 2 s GOPs, harmonic mean of the last 5 GOP throughputs
/// and no content awareness.
Decision baseline_mpc(const PolicyContext& context, const ControllerParams& params,
                      const DecisionContext& ctx, std::span<const double> gop_history);

class MpcPolicy final : public DecisionSource {
 public:
  MpcPolicy(PolicyContext context, ControllerParams params);
  Decision decide(const DecisionContext& ctx) override;
  void observe(const GopFeedback& feedback) override;
  std::string name() const override { return "mpc"; }

 private:
  PolicyContext context_;
  ControllerParams params_;
  std::vector<double> history_;
};

/// Names accepted by make_policy: fixed, adarate, mpc, starstream.
std::unique_ptr<DecisionSource> make_policy(const std::string& name, PolicyContext context,
                                            ControllerParams params,
                                            std::unique_ptr<Predictor> predictor);

}  // namespace starstream
