#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "starstream/errors.hpp"
#include "starstream/predictor.hpp"

namespace starstream {

using nlohmann::json;

std::int64_t PredictionRequest::decision_time() const {
  return lookback.empty() ? 0 : lookback.back().timestamp + 1;
}

void validate(const PredictionRequest& req) {
  if (req.p < 1 || req.p > req.m) throw ValidationError("prediction context p must satisfy 1 <= p <= m");
  if (req.n < 1) throw ValidationError("prediction horizon n must be at least 1");
  if (!(req.delta > 0.0)) throw ValidationError("shift threshold must be positive");
  if (req.lookback.empty()) throw ValidationError("prediction lookback is empty");
  if (req.lookback.size() > req.m) throw ValidationError("prediction lookback longer than m");
}

void validate_prediction(const PredictionResult& result, std::size_t n) {
  if (result.throughputs.size() != n) {
    throw ProtocolError("expected " + std::to_string(n) + " throughputs, got " +
                        std::to_string(result.throughputs.size()));
  }
  if (result.shifts.size() != n) {
    throw ProtocolError("expected " + std::to_string(n) + " shifts, got " +
                        std::to_string(result.shifts.size()));
  }
  for (double b : result.throughputs) {
    if (!std::isfinite(b) || b < 0.0) throw ProtocolError("predicted throughput must be finite and >= 0");
  }
  for (auto s : result.shifts) {
    if (s > 1) throw ProtocolError("shift indicators must be 0 or 1");
  }
  if (result.probabilities) {
    if (result.probabilities->size() != n) throw ProtocolError("probabilities length differs from n");
    for (double q : *result.probabilities) {
      if (!(q >= 0.0 && q <= 1.0)) throw ProtocolError("shift probabilities must lie in [0,1]");
    }
  }
}

std::vector<std::uint8_t> derive_shifts_from_throughput(std::span<const double> predicted,
                                                        double last_observed, double delta) {
  if (!(delta > 0.0)) throw ValidationError("shift threshold must be positive");
  std::vector<std::uint8_t> shifts(predicted.size(), 0);
  double previous = last_observed;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    shifts[i] = std::abs(predicted[i] - previous) > delta ? 1 : 0;
    previous = predicted[i];
  }
  return shifts;
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) throw ValidationError("harmonic mean of an empty window");
  double inv = 0.0;
  for (double v : values) inv += 1.0 / std::max(v, kHarmonicFloor);
  return static_cast<double>(values.size()) / inv;
}

namespace {

std::vector<double> tail(const PredictionRequest& req, std::size_t window) {
  validate(req);
  if (window < 1) throw ValidationError("predictor window must be at least 1");
  const std::size_t count = std::min(window, req.lookback.size());
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = req.lookback.size() - count; i < req.lookback.size(); ++i) {
    out.push_back(req.lookback[i].throughput);
  }
  return out;
}

PredictionResult flat_prediction(const PredictionRequest& req, double level) {
  PredictionResult result;
  result.throughputs.assign(req.n, level);
  result.shifts = derive_shifts_from_throughput(result.throughputs, req.lookback.back().throughput,
                                                req.delta);
  return result;
}

}  // namespace

PredictionResult predict_hm(const PredictionRequest& req, std::size_t window) {
  const auto values = tail(req, window);
  return flat_prediction(req, harmonic_mean(values));
}

PredictionResult predict_ma(const PredictionRequest& req, std::size_t window) {
  const auto values = tail(req, window);
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return flat_prediction(req, mean);
}

HarmonicMeanPredictor::HarmonicMeanPredictor(std::size_t window) : window_(window) {
  if (window_ < 1) throw ValidationError("predictor window must be at least 1");
}

MovingAveragePredictor::MovingAveragePredictor(std::size_t window) : window_(window) {
  if (window_ < 1) throw ValidationError("predictor window must be at least 1");
}

// ---------------------------------------------------------------------------
// Wire protocol
// ---------------------------------------------------------------------------

std::string encode_request(const PredictionRequest& req) {
  json samples = json::array();
  for (const auto& s : req.lookback) {
    samples.push_back({{"t", s.timestamp},
                       {"wall_clock", format_wall_clock(s.wall_clock)},
                       {"throughput", s.throughput},
                       {"retransmits", s.retransmits},
                       {"cwnd", s.cwnd},
                       {"srtt", s.srtt},
                       {"rtt_var", s.rtt_var},
                       {"shift", static_cast<int>(s.shift)}});
  }
  return json{{"m", req.m}, {"n", req.n}, {"p", req.p}, {"delta", req.delta}, {"samples", samples}}
      .dump();
}

namespace {

PredictionResult result_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("response is not a JSON object");
  if (j.contains("error")) throw ProtocolError("predictor reported: " + j.at("error").dump());
  if (!j.contains("throughputs") || !j.contains("shifts")) {
    throw ProtocolError("response lacks throughputs or shifts");
  }
  PredictionResult r;
  for (const auto& v : j.at("throughputs")) {
    if (!v.is_number()) throw ProtocolError("non-numeric throughput");
    r.throughputs.push_back(v.get<double>());
  }
  for (const auto& v : j.at("shifts")) {
    if (v.is_boolean()) {
      r.shifts.push_back(v.get<bool>() ? 1 : 0);
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      r.shifts.push_back(static_cast<std::uint8_t>(v.get<int>()));
    } else {
      throw ProtocolError("shift indicators must be 0 or 1");
    }
  }
  if (j.contains("probabilities") && !j.at("probabilities").is_null()) {
    std::vector<double> probs;
    for (const auto& v : j.at("probabilities")) {
      if (!v.is_number()) throw ProtocolError("non-numeric probability");
      probs.push_back(v.get<double>());
    }
    r.probabilities = std::move(probs);
  }
  return r;
}

}  // namespace

PredictionResult decode_response(const std::string& line, std::size_t n) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
  auto r = result_from_json(j);
  validate_prediction(r, n);
  return r;
}

std::string encode_response(const PredictionResult& result, std::optional<std::int64_t> t,
                            const std::string& trace_id) {
  json j;
  if (!trace_id.empty()) j["trace_id"] = trace_id;
  if (t) j["t"] = *t;
  j["throughputs"] = result.throughputs;
  json shifts = json::array();
  for (auto s : result.shifts) shifts.push_back(static_cast<int>(s));
  j["shifts"] = shifts;
  if (result.probabilities) j["probabilities"] = *result.probabilities;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

PredictionFile::PredictionFile(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prediction file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    if (!j.contains("t") || !j.at("t").is_number_integer()) {
      throw ParseError(path.string(), line_no, "prediction line lacks integer \"t\"");
    }
    const auto id = j.value("trace_id", std::string{});
    try {
      lines_[{id, j.at("t").get<std::int64_t>()}] = result_from_json(j);
    } catch (const ProtocolError& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
}

bool PredictionFile::covers(const std::string& trace_id, std::int64_t t) const {
  return lines_.contains({trace_id, t}) || lines_.contains({std::string{}, t});
}

PredictionResult PredictionFile::predict(const PredictionRequest& req) {
  validate(req);
  const auto t = req.decision_time();
  auto it = lines_.find({req.trace_id, t});
  if (it == lines_.end()) it = lines_.find({std::string{}, t});
  if (it == lines_.end()) {
    throw ProtocolError("prediction file " + path_.string() + " has no entry for trace '" +
                        req.trace_id + "' at t=" + std::to_string(t));
  }
  PredictionResult r = it->second;
  if (r.throughputs.size() < req.n) {
    throw ProtocolError("prediction file " + path_.string() + " covers only " +
                        std::to_string(r.throughputs.size()) + " steps at t=" + std::to_string(t) +
                        ", need " + std::to_string(req.n));
  }
  r.throughputs.resize(req.n);
  r.shifts.resize(std::min(r.shifts.size(), req.n));
  if (r.probabilities) r.probabilities->resize(std::min(r.probabilities->size(), req.n));
  validate_prediction(r, req.n);
  return r;
}

std::unique_ptr<Predictor> make_predictor(const std::string& spec) {
  const auto colon = spec.find(':');
  const auto kind = spec.substr(0, colon);
  const auto arg = colon == std::string::npos ? std::string{} : spec.substr(colon + 1);
  const auto window = [&] {
    if (arg.empty()) return kDefaultBaselineWindow;
    try {
      const long w = std::stol(arg);
      if (w >= 1) return static_cast<std::size_t>(w);
    } catch (const std::exception&) {
    }
    throw UsageError("bad predictor window in '" + spec + "'");
  };
  if (kind == "hm") return std::make_unique<HarmonicMeanPredictor>(window());
  if (kind == "ma") return std::make_unique<MovingAveragePredictor>(window());
  if (kind == "file" && !arg.empty()) return std::make_unique<PredictionFile>(arg);
  if (kind == "pipe" && !arg.empty()) return std::make_unique<PipePredictor>(arg);
  throw UsageError("unknown predictor '" + spec + "' (expected hm, ma, file:<path>, pipe:<command>)");
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

PredictorMetrics eval_predictor(std::span<const double> predicted, std::span<const double> truth,
                                std::span<const std::uint8_t> predicted_shifts,
                                std::span<const std::uint8_t> true_shifts) {
  if (predicted.size() != truth.size() || predicted_shifts.size() != true_shifts.size()) {
    throw ValidationError("predicted and true series differ in length");
  }
  PredictorMetrics m;
  m.count = truth.size();
  if (!truth.empty()) {
    const double n = static_cast<double>(truth.size());
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const double err = predicted[i] - truth[i];
      abs_sum += std::abs(err);
      sq_sum += err * err;
      pct_sum += std::abs(err) / std::max(std::abs(truth[i]), kMapeFloor);
      sst += (truth[i] - mean) * (truth[i] - mean);
    }
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    m.mape = 100.0 * pct_sum / n;
    m.r2 = sst > 0.0 ? 1.0 - sq_sum / sst : std::numeric_limits<double>::quiet_NaN();
  }
  std::size_t tp = 0, fp = 0, fn = 0, agree = 0;
  for (std::size_t i = 0; i < true_shifts.size(); ++i) {
    const bool p = predicted_shifts[i] != 0, t = true_shifts[i] != 0;
    agree += p == t;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  m.shift_accuracy = true_shifts.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(true_shifts.size());
  m.shift_f1 = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  return m;
}

PredictionRequest make_request(const NetworkTrace& trace, std::size_t t, std::size_t m,
                               std::size_t n, std::size_t p) {
  if (t == 0 || t > trace.samples.size()) throw ValidationError("request time outside trace");
  PredictionRequest req;
  req.trace_id = trace.trace_id;
  req.m = m;
  req.n = n;
  req.p = p;
  req.delta = trace.delta;
  const std::size_t begin = t > m ? t - m : 0;
  req.lookback.assign(trace.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                      trace.samples.begin() + static_cast<std::ptrdiff_t>(t));
  return req;
}

PredictorMetrics evaluate_on_traces(Predictor& predictor, std::span<const NetworkTrace> traces,
                                    std::size_t m, std::size_t n, std::size_t p) {
  std::vector<double> pred, truth;
  std::vector<std::uint8_t> pred_shift, true_shift;
  for (const auto& trace : traces) {
    if (trace.samples.size() < m + n) {
      throw ValidationError(trace.trace_id + ": trace shorter than m + n");
    }
    for (std::size_t t = m; t + n <= trace.samples.size(); ++t) {
      const auto req = make_request(trace, t, m, n, p);
      const auto result = predictor.predict(req);
      validate_prediction(result, n);
      for (std::size_t i = 0; i < n; ++i) {
        pred.push_back(result.throughputs[i]);
        pred_shift.push_back(result.shifts[i]);
        truth.push_back(trace.samples[t + i].throughput);
        true_shift.push_back(trace.samples[t + i].shift);
      }
    }
  }
  return eval_predictor(pred, truth, pred_shift, true_shift);
}

}  // namespace starstream
