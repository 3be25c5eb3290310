#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "starstream/trace_model.hpp"

namespace starstream {

inline constexpr std::size_t kDefaultLookback = 60;
inline constexpr std::size_t kDefaultLookahead = 15;
inline constexpr std::size_t kDefaultContext = 15;
inline constexpr std::size_t kDefaultBaselineWindow = 5;

/// Throughput floor applied before taking a harmonic mean (Mbps).
inline constexpr double kHarmonicFloor = 0.01;
/// Denominator floor for MAPE (Mbps).
inline constexpr double kMapeFloor = 0.1;

struct PredictionRequest {
  std::string trace_id;
  /// Most recent observations, oldest first; at most m entries.
  std::vector<NetworkSample> lookback;
  std::size_t m = kDefaultLookback;
  std::size_t n = kDefaultLookahead;
  std::size_t p = kDefaultContext;
  double delta = kDefaultShiftDelta;

  /// Trace second of the first predicted step.
  std::int64_t decision_time() const;
};

/// Throws ValidationError unless m >= p >= 1, n >= 1, delta > 0 and the
/// lookback is non-empty and no longer than m.
void validate(const PredictionRequest& req);

struct PredictionResult {
  std::vector<double> throughputs;
  std::vector<std::uint8_t> shifts;
  std::optional<std::vector<double>> probabilities;

  bool operator==(const PredictionResult&) const = default;
};

/// Throws ProtocolError if the result violates the response contract for n steps.
void validate_prediction(const PredictionResult& result, std::size_t n);

/// shift[0] compares predicted[0] with the last observation, later steps
/// compare consecutive predictions.
std::vector<std::uint8_t> derive_shifts_from_throughput(std::span<const double> predicted,
                                                        double last_observed, double delta);

double harmonic_mean(std::span<const double> values);

PredictionResult predict_hm(const PredictionRequest& req, std::size_t window = kDefaultBaselineWindow);
PredictionResult predict_ma(const PredictionRequest& req, std::size_t window = kDefaultBaselineWindow);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual PredictionResult predict(const PredictionRequest& req) = 0;
  virtual std::string name() const = 0;
};

class HarmonicMeanPredictor final : public Predictor {
 public:
  explicit HarmonicMeanPredictor(std::size_t window = kDefaultBaselineWindow);
  PredictionResult predict(const PredictionRequest& req) override { return predict_hm(req, window_); }
  std::string name() const override { return "hm"; }

 private:
  std::size_t window_;
};

class MovingAveragePredictor final : public Predictor {
 public:
  explicit MovingAveragePredictor(std::size_t window = kDefaultBaselineWindow);
  PredictionResult predict(const PredictionRequest& req) override { return predict_ma(req, window_); }
  std::string name() const override { return "ma"; }

 private:
  std::size_t window_;
};

// ---------------------------------------------------------------------------
// External predictor bridge
// ---------------------------------------------------------------------------

/// Newline-delimited JSON request line (no trailing newline).
std::string encode_request(const PredictionRequest& req);
/// Parses and validates one response line for n steps. Throws ProtocolError.
PredictionResult decode_response(const std::string& line, std::size_t n);
/// Serializes a response; `t` and `trace_id` are emitted for prediction files.
std::string encode_response(const PredictionResult& result,
                            std::optional<std::int64_t> t = std::nullopt,
                            const std::string& trace_id = {});

/// Live mode: a child process speaking the wire protocol on stdin/stdout.
/// One request in flight at a time; a timed-out child is killed and
/// restarted on the next request.
class PipePredictor final : public Predictor {
 public:
  explicit PipePredictor(std::string command,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds{1000});
  ~PipePredictor() override;
  PipePredictor(const PipePredictor&) = delete;
  PipePredictor& operator=(const PipePredictor&) = delete;

  /// Throws PredictorTimeout or ProtocolError.
  PredictionResult predict(const PredictionRequest& req) override;
  std::string name() const override { return "pipe:" + command_; }

 private:
  void start();
  void stop();
  std::string read_line(std::chrono::steady_clock::time_point deadline);

  std::string command_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

/// Batch mode: replays a JSON-lines prediction file keyed by
/// (trace_id, decision time). Lines without trace_id match any trace.
class PredictionFile final : public Predictor {
 public:
  explicit PredictionFile(const std::filesystem::path& path);

  /// Throws ProtocolError when no line covers the request.
  PredictionResult predict(const PredictionRequest& req) override;
  std::string name() const override { return "file:" + path_.string(); }
  bool covers(const std::string& trace_id, std::int64_t t) const;

 private:
  std::filesystem::path path_;
  std::map<std::pair<std::string, std::int64_t>, PredictionResult> lines_;
};

/// "hm", "ma", "hm:<window>", "ma:<window>", "file:<path>", "pipe:<command>".
std::unique_ptr<Predictor> make_predictor(const std::string& spec);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct PredictorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  ///< percent
  double r2 = 0.0;    ///< NaN when the truth has zero variance
  double shift_accuracy = 0.0;
  double shift_f1 = 0.0;
  std::size_t count = 0;
};

/// F1 is reported as 1 when neither series contains a positive.
PredictorMetrics eval_predictor(std::span<const double> predicted, std::span<const double> truth,
                                std::span<const std::uint8_t> predicted_shifts,
                                std::span<const std::uint8_t> true_shifts);

/// Builds the request a predictor sees at trace second `t` (samples [t-m, t)).
PredictionRequest make_request(const NetworkTrace& trace, std::size_t t, std::size_t m,
                               std::size_t n, std::size_t p);

/// Sliding-window evaluation at every t in [m, len - n], pooling all steps.
PredictorMetrics evaluate_on_traces(Predictor& predictor, std::span<const NetworkTrace> traces,
                                    std::size_t m = kDefaultLookback,
                                    std::size_t n = kDefaultLookahead,
                                    std::size_t p = kDefaultContext);

}  // namespace starstream
