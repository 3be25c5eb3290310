#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "starstream/decision.hpp"
#include "starstream/trace_model.hpp"

namespace starstream {

inline constexpr double kDefaultStallCap = 120.0;
inline constexpr double kDefaultTraceOffset = 60.0;

/// Piecewise-constant throughput of a network trace, seen on the session's
/// wall clock (wall 0 = trace second `offset`). Past the last sample the final
/// rate continues.
class ThroughputIntegrator {
 public:
  ThroughputIntegrator(const NetworkTrace& trace, double offset = 0.0,
                       double stall_cap = kDefaultStallCap);

  /// Mbps in effect at wall time `t`.
  double rate_at(double t) const;
  /// Exact time at which `bits` finish when sending starts at `start`.
  /// Throws StallError if that takes longer than the stall cap.
  double transmit(double start, double bits);
  /// Mean Mbps over [t0, t1]; rate_at(t0) for an empty interval.
  double average(double t0, double t1) const;
  /// Last transmit finish time; never decreases.
  double cursor() const { return cursor_; }

 private:
  const NetworkTrace* trace_;
  double offset_;
  double stall_cap_;
  double cursor_ = 0.0;
};

struct AnalyticState {
  double t_prev = 0.0;  ///< t_{k-1}
  double q_prev = 0.0;  ///< Q_{k-1}
};

/// Frames of one GOP as the analytic model sees them.
struct GopWorkload {
  double capture_start = 0.0;  ///< wall time of the first frame's capture
  double frame_interval = 1.0; ///< 1 / frame rate
  std::span<const double> encode_delays;  ///< e_j, seconds
  std::span<const double> frame_bits;     ///< d_j, bits
};

struct GopTiming {
  double t_end = 0.0;  ///< t_k
  double queue = 0.0;  ///< Q_k
  double wait = 0.0;   ///< Δt_k
};

/// Sequential encode-then-send of each frame at constant `mean_throughput`
/// (Mbps), waiting for captures; Q_k = max(0, Q_{k-1} + t_k - t_{k-1} - L_k).
GopTiming simulate_gop_analytic(const AnalyticState& state, const GopWorkload& gop,
                                int gop_length, double mean_throughput);

enum class Fidelity { kEventDriven, kAnalytic };
std::string to_string(Fidelity f);
Fidelity parse_fidelity(const std::string& text);

struct GopOutcome {
  std::size_t index = 0;
  EncodingConfig config;
  int gop_length = 0;
  int content_start = 0;
  double t_start = 0.0;  ///< t_{k-1}
  double t_end = 0.0;    ///< t_k
  double wait = 0.0;     ///< Δt_k
  double queue = 0.0;    ///< Q_k
  double first_capture = 0.0;
  double encode_start = 0.0;
  double last_decode_end = 0.0;
  double last_inference_end = 0.0;
  double ol_delay = 0.0;
  double response_delay = 0.0;
  double accuracy = 0.0;
  double realized_throughput = 0.0;
  double bits = 0.0;
  std::size_t frames = 0;
  Decision decision;
};

struct SessionResult {
  std::string video_id;
  std::string trace_id;
  std::string policy;
  Fidelity fidelity = Fidelity::kEventDriven;
  int frame_rate = 15;
  std::vector<GopOutcome> gops;

  // Filled by compute_metrics.
  std::vector<double> per_second_ol;
  std::vector<double> per_second_response;
  std::vector<double> per_second_accuracy;
  double mean_accuracy = 0.0;
  double mean_ol_delay = 0.0;
  double mean_response_delay = 0.0;
  double normalized_tp = 0.0;
  std::size_t frames = 0;
  double elapsed = 0.0;  ///< first capture to last analysis result
};

struct SessionOptions {
  Fidelity fidelity = Fidelity::kEventDriven;
  StreamSettings stream{};
  double trace_offset = kDefaultTraceOffset;
  double stall_cap = kDefaultStallCap;
  /// Seconds of content to stream; 0 streams the whole video.
  int content_duration = 0;
};

/// Replays `trace` under the decisions of `source`. Throws StallError, or
/// ValidationError naming the GOP index for an unusable decision.
SessionResult simulate_session(const NetworkTrace& trace, DecisionSource& source,
                               const VideoTraceSet& video, const SessionOptions& options);

/// Per-second delay attribution and session means. Throws on an empty session.
void compute_metrics(SessionResult& session);

void write_session_json(const SessionResult& session, const std::filesystem::path& path);
SessionResult load_session_json(const std::filesystem::path& path);
/// k, c_k, L_k, t_k, Q_k, OL, response, accuracy
void write_gop_log(const SessionResult& session, const std::filesystem::path& path);
/// timestamp, L, bitrate, predicted b̄, realized b̄, gamma, Q, objective
void write_decision_log(const SessionResult& session, const std::filesystem::path& path);

}  // namespace starstream
