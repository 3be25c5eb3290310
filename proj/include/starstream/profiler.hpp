#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "starstream/trace_model.hpp"

namespace starstream {

inline constexpr int kProfileSpanSeconds = 20;
inline constexpr double kUncertainConfidence = 0.5;
inline constexpr double kGammaMin = 1.0 / 3.0;
inline constexpr double kGammaMax = 3.0;
inline constexpr double kUncertaintyFloor = 0.01;
inline constexpr double kMatchIou = 0.5;

struct ProfileEntry {
  double accuracy = 0.0;             ///< reference accuracy A(c)
  double encode_delay = 0.0;         ///< mean per frame, s
  double decode_delay = 0.0;         ///< mean per frame, s
  double inference_delay = 0.0;      ///< mean per frame, s
  double frame_size = 0.0;           ///< mean per frame, bits
  double uncertainty = 0.0;          ///< profiled u_p of this entry
  bool operator==(const ProfileEntry&) const = default;
};

/// Offline profile built from the first 20 s of a video.
struct ProfileTable {
  std::string video_id;
  CandidateSpace space;
  std::map<VideoTraceSet::Key, ProfileEntry> entries;
  /// Compact-model uncertainty over the profiled span; the denominator of gamma.
  double content_uncertainty = 0.0;

  const ProfileEntry& at(const EncodingConfig& config, int gop_length) const;
  bool operator==(const ProfileTable&) const = default;
};

/// Throws ValidationError listing every candidate without full coverage of [0, 20) s.
ProfileTable build_profile(const VideoTraceSet& set);

void write_profile(const ProfileTable& table, const std::filesystem::path& path);
ProfileTable load_profile(const std::filesystem::path& path);

struct StreamFormat {
  int frame_rate = 15;
  Resolution resolution{};
  auto operator<=>(const StreamFormat&) const = default;
};

/// Picks the (frame rate, resolution) pair that lands in the per-bitrate
/// top 3 most often. Each pair is ranked by its accuracy averaged over GOP
/// lengths. Ties: higher mean accuracy, then smaller mean frame size.
StreamFormat prune_configs(const ProfileTable& table, std::span<const double> bitrates);

/// Fraction of detections with confidence below 0.5; 0 for an empty window.
double compute_uncertainty(std::span<const FrameDetections> frames);

struct GammaState {
  double gamma = 1.0;
  double last_update_time = 0.0;  ///< wall seconds
  double update_period = 30.0;
  double probe_length = 5.0;
  double gamma_min = kGammaMin;
  double gamma_max = kGammaMax;
};

/// gamma = clamp(u_n / max(u_p, 0.01), gamma_min, gamma_max); also stores it in `state`.
double update_gamma(GammaState& state, double new_uncertainty, double profiled_uncertainty);

/// min(gamma * A, 1); the optimizer ranks with the unclamped product.
double estimate_accuracy(double gamma, double reference_accuracy);
inline double scaled_accuracy(double gamma, double reference_accuracy) {
  return gamma * reference_accuracy;
}

double iou(const BoundingBox& a, const BoundingBox& b);

struct MatchCounts {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// Greedy confidence-ordered matching per frame, IoU strictly above 0.5 and
/// equal categories.
MatchCounts match_detections(std::span<const FrameDetections> predicted,
                             std::span<const FrameDetections> truth);

/// F1 over the span; 1 when both sides are empty.
double compute_f1(std::span<const FrameDetections> predicted, std::span<const FrameDetections> truth);

}  // namespace starstream
