#pragma once

#include <span>
#include <string>
#include <vector>

#include "starstream/trace_model.hpp"

namespace starstream {

/// Stream format fixed for a session after pruning.
struct StreamSettings {
  int frame_rate = 15;
  Resolution resolution{};
};

/// One committed per-GOP decision.
struct Decision {
  int gop_length = 2;                ///< seconds
  double bitrate = 1.5;              ///< Mbps
  double predicted_throughput = 0.0; ///< Mbps, mean over the GOP
  double objective = 0.0;            ///< planner objective of the chosen horizon plan
  double gamma = 1.0;
  bool stall = false;                ///< no horizon plan stayed below the stall cap
  bool predictor_fallback = false;   ///< predictor failed; harmonic mean used instead
};

/// What a policy may observe when deciding GOP k. Everything here is known
/// to the client at wall time `now`.
struct DecisionContext {
  std::size_t gop_index = 0;
  double now = 0.0;           ///< wall seconds since capture start (t_{k-1})
  int content_start = 0;      ///< content second of the GOP's first frame
  int content_remaining = 0;  ///< seconds of content left to stream
  double queue = 0.0;         ///< camera-buffer backlog Q_{k-1}, seconds
  const NetworkTrace* trace = nullptr;
  double trace_offset = 0.0;  ///< trace second aligned with wall time 0
  const VideoTraceSet* video = nullptr;
  StreamSettings stream{};

  /// Samples fully observed by `now`, at most `max_count`, oldest first.
  std::vector<NetworkSample> observed_samples(std::size_t max_count) const;
  /// Samples that end at or before wall time 0 within `window_s` seconds.
  std::vector<NetworkSample> prestream_samples(std::size_t window_s) const;
};

/// Per-GOP facts reported back to the policy after the GOP has been sent.
struct GopFeedback {
  std::size_t gop_index = 0;
  int gop_length = 0;
  double bitrate = 0.0;
  double t_start = 0.0;             ///< t_{k-1}
  double t_end = 0.0;               ///< t_k
  double queue = 0.0;               ///< Q_k
  double realized_throughput = 0.0; ///< mean trace throughput over [t_{k-1}, t_k]
};

class DecisionSource {
 public:
  virtual ~DecisionSource() = default;
  virtual Decision decide(const DecisionContext& ctx) = 0;
  virtual void observe(const GopFeedback&) {}
  virtual std::string name() const = 0;
};

/// Open-loop schedule of (gop_length, bitrate) pairs, repeated cyclically.
class FixedSchedule final : public DecisionSource {
 public:
  struct Entry {
    int gop_length;
    double bitrate;
  };
  explicit FixedSchedule(std::vector<Entry> entries);
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "schedule"; }

 private:
  std::vector<Entry> entries_;
};

}  // namespace starstream
