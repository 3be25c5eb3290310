#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace starstream {

using WallClock = std::chrono::sys_seconds;

/// Default shift threshold in Mbps.
inline constexpr double kDefaultShiftDelta = 2.5;

// ---------------------------------------------------------------------------
// Network traces
// ---------------------------------------------------------------------------

/// One 1 Hz uplink observation. TCP fields are per-interval snapshots as
/// recorded by the measurement client, not cumulative counters.
struct NetworkSample {
  std::int64_t timestamp = 0;  ///< seconds since trace start
  WallClock wall_clock{};
  double throughput = 0.0;  ///< Mbps
  std::int64_t retransmits = 0;
  std::int64_t cwnd = 0;  ///< bytes
  double srtt = 0.0;      ///< ms
  double rtt_var = 0.0;   ///< ms
  std::uint8_t shift = 0;

  bool operator==(const NetworkSample&) const = default;
};

struct NetworkTrace {
  std::string trace_id;
  std::string location_tag;
  std::vector<NetworkSample> samples;
  double delta = kDefaultShiftDelta;

  std::size_t duration() const { return samples.size(); }
  std::vector<double> throughputs() const;

  bool operator==(const NetworkTrace&) const = default;
};

/// shift[t] = 1 iff |b_t - b_{t-1}| > delta; shift[0] = 0.
std::vector<std::uint8_t> annotate_shifts(std::span<const double> throughputs, double delta);

/// Checks ordering, throughput sign and shift encoding; throws ValidationError.
void validate(const NetworkTrace& trace);

/// Reads the CSV format written by write_network_trace. The stored shift
/// column (if any) is ignored and recomputed with `delta`.
NetworkTrace load_network_trace(const std::filesystem::path& path, double delta);
void write_network_trace(const NetworkTrace& trace, const std::filesystem::path& path);

/// "YYYY-MM-DDTHH:MM:SSZ"
std::string format_wall_clock(WallClock t);
std::optional<WallClock> parse_wall_clock(std::string_view text);

struct SyntheticNetworkParams {
  double good_mean = 12.0;  ///< Mbps
  double bad_mean = 3.0;    ///< Mbps
  double noise_sigma = 0.8;
  double p_good_to_bad = 0.02;  ///< per-second transition probabilities
  double p_bad_to_good = 0.08;
  /// Additive level change every `handover_period` seconds, alternating sign.
  /// Zero disables it.
  double handover_step = 0.0;
  int handover_period = 15;
  /// Deterministic square wave (no Markov process, no noise) between
  /// good_mean and bad_mean with this half period. Zero disables it.
  int square_wave_period = 0;
  std::string location_tag = "synthetic";
  WallClock start = WallClock{std::chrono::seconds{1704067200}};  // 2024-01-01T00:00:00Z
};

NetworkTrace gen_synthetic_network_trace(std::uint64_t seed, std::size_t duration_s,
                                         const SyntheticNetworkParams& params,
                                         double delta = kDefaultShiftDelta);

/// Piecewise-constant capacity schedule: `segments` of (duration_s, Mbps).
/// Used for the controlled drop scenarios.
NetworkTrace make_step_trace(std::string trace_id,
                             std::span<const std::pair<std::size_t, double>> segments,
                             double delta = kDefaultShiftDelta);

// ---------------------------------------------------------------------------
// Encoding configurations
// ---------------------------------------------------------------------------

struct Resolution {
  int width = 1280;
  int height = 720;

  auto operator<=>(const Resolution&) const = default;
  long pixels() const { return static_cast<long>(width) * height; }
};

struct EncodingConfig {
  double bitrate = 3.0;  ///< Mbps
  int frame_rate = 15;
  Resolution resolution{};

  auto operator<=>(const EncodingConfig&) const = default;
};

std::string to_string(const Resolution& r);
std::string to_string(const EncodingConfig& c);

struct CandidateSpace {
  std::vector<double> bitrates{1.5, 3.0, 4.5, 6.0, 7.5, 9.0};
  std::vector<int> frame_rates{1, 3, 5, 15};
  std::vector<Resolution> resolutions{{1920, 1080}, {1280, 720}, {640, 320}};
  std::vector<int> gop_lengths{1, 2, 3, 4, 5};

  std::vector<EncodingConfig> configs() const;
  bool operator==(const CandidateSpace&) const = default;
};

// ---------------------------------------------------------------------------
// Video processing traces
// ---------------------------------------------------------------------------

struct VideoUnitRecord {
  std::string video_id;
  EncodingConfig config;
  int gop_start = 0;   ///< content seconds
  int gop_length = 1;  ///< seconds
  std::vector<double> frame_sizes;       ///< bits
  std::vector<double> encode_delays;     ///< s
  std::vector<double> decode_delays;     ///< s
  std::vector<double> inference_delays;  ///< s
  double accuracy = 0.0;                 ///< F1
  double uncertainty = 0.0;              ///< fraction of low-confidence detections

  std::size_t frame_count() const { return frame_sizes.size(); }
  double total_bits() const;
  bool operator==(const VideoUnitRecord&) const = default;
};

/// Throws ValidationError when list lengths or value ranges are off.
void validate(const VideoUnitRecord& record);

struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const BoundingBox&) const = default;
};

struct Detection {
  BoundingBox box;
  std::string category;
  double confidence = 0.0;
  bool operator==(const Detection&) const = default;
};

/// Detections of one frame.
using FrameDetections = std::vector<Detection>;

class VideoTraceSet {
 public:
  struct Key {
    EncodingConfig config;
    int gop_length = 0;
    auto operator<=>(const Key&) const = default;
  };

  VideoTraceSet() = default;
  /// Builds the (config, gop_length) index and verifies that each series
  /// tiles [0, duration) without gaps or overlaps. Throws AlignmentError.
  VideoTraceSet(std::string video_id, int native_frame_rate, CandidateSpace space,
                std::vector<VideoUnitRecord> records,
                std::vector<FrameDetections> probe_detections = {});

  const std::string& video_id() const { return video_id_; }
  int native_frame_rate() const { return native_frame_rate_; }
  int duration() const { return duration_; }
  const CandidateSpace& space() const { return space_; }
  const std::map<Key, std::vector<VideoUnitRecord>>& series() const { return series_; }
  /// Compact-model detections at the native frame rate, possibly empty.
  const std::vector<FrameDetections>& probe_detections() const { return probe_detections_; }

  bool has(const EncodingConfig& config, int gop_length) const;

  /// Record starting exactly at `gop_start`; nullptr when the start is not on
  /// the series' grid.
  const VideoUnitRecord* find(const EncodingConfig& config, int gop_length, int gop_start) const;

  /// Unit used when streaming a GOP of `gop_length` seconds starting at
  /// `gop_start`. Off-grid starts reuse the recorded GOP covering
  /// `gop_start`, retimed. Throws ValidationError for unknown series and for
  /// GOPs running past the end of the content.
  VideoUnitRecord gop(const EncodingConfig& config, int gop_length, int gop_start) const;

  bool operator==(const VideoTraceSet&) const = default;

 private:
  std::string video_id_;
  int native_frame_rate_ = 15;
  int duration_ = 0;
  CandidateSpace space_;
  std::map<Key, std::vector<VideoUnitRecord>> series_;
  std::vector<FrameDetections> probe_detections_;
};

/// Directory layout: meta.json, one <config>_g<L>.jsonl per series,
/// optional probe_detections.jsonl.
VideoTraceSet load_video_trace_set(const std::filesystem::path& dir);
void write_video_trace_set(const VideoTraceSet& set, const std::filesystem::path& dir);

std::string series_file_name(const EncodingConfig& config, int gop_length);

std::vector<FrameDetections> load_detection_file(const std::filesystem::path& path);
void write_detection_file(std::span<const FrameDetections> frames, const std::filesystem::path& path);

struct SyntheticVideoParams {
  /// Per-second hardness multiplies accuracy gaps between configurations;
  /// it follows a bounded random walk in [hardness_min, hardness_max].
  double hardness_min = 0.7;
  double hardness_max = 1.5;
  double hardness_step = 0.05;
  /// Ratio of I-frame size to mean P-frame size.
  double iframe_ratio = 5.0;
  /// Fractional per-GOP CBR deviation; kept below the ±10% contract.
  double cbr_jitter = 0.05;
  int detections_per_frame = 4;
};

VideoTraceSet gen_synthetic_video_trace(std::uint64_t seed, int duration_s, int native_frame_rate,
                                        const CandidateSpace& space,
                                        const SyntheticVideoParams& params = {},
                                        std::string video_id = "synthetic");

// ---------------------------------------------------------------------------
// Dataset split
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  bool operator==(const DatasetSplit&) const = default;
};

/// 70/10/20 split; floor for train and validation, remainder to test.
DatasetSplit split_dataset(std::vector<std::string> trace_ids, std::uint64_t seed);

}  // namespace starstream
