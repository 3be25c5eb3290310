#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "starstream/errors.hpp"
#include "starstream/pipeline_sim.hpp"

namespace starstream {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Decision plumbing shared by all policies
// ---------------------------------------------------------------------------

std::vector<NetworkSample> DecisionContext::observed_samples(std::size_t max_count) const {
  std::vector<NetworkSample> out;
  if (trace == nullptr || trace->samples.empty()) return out;
  // Sample i covers trace seconds [i, i+1); it is observed once that interval has ended.
  const double horizon = trace_offset + now;
  const auto first_ts = trace->samples.front().timestamp;
  auto end = static_cast<std::int64_t>(std::floor(horizon + 1e-9)) - first_ts;
  end = std::clamp<std::int64_t>(end, 0, static_cast<std::int64_t>(trace->samples.size()));
  const auto begin = std::max<std::int64_t>(0, end - static_cast<std::int64_t>(max_count));
  out.assign(trace->samples.begin() + begin, trace->samples.begin() + end);
  return out;
}

std::vector<NetworkSample> DecisionContext::prestream_samples(std::size_t window_s) const {
  DecisionContext at_start = *this;
  at_start.now = 0.0;
  return at_start.observed_samples(window_s);
}

FixedSchedule::FixedSchedule(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ValidationError("fixed schedule is empty");
}

Decision FixedSchedule::decide(const DecisionContext& ctx) {
  const auto& e = entries_[ctx.gop_index % entries_.size()];
  Decision d;
  d.gop_length = std::min(e.gop_length, ctx.content_remaining);
  d.bitrate = e.bitrate;
  return d;
}

// ---------------------------------------------------------------------------
// Throughput replay
// ---------------------------------------------------------------------------

ThroughputIntegrator::ThroughputIntegrator(const NetworkTrace& trace, double offset, double stall_cap)
    : trace_(&trace), offset_(offset), stall_cap_(stall_cap) {
  if (trace.samples.empty()) throw ValidationError("cannot replay an empty network trace");
}

namespace {

std::int64_t segment_of(double trace_time) {
  return static_cast<std::int64_t>(std::floor(trace_time));
}

}  // namespace

double ThroughputIntegrator::rate_at(double t) const {
  const auto idx = segment_of(offset_ + t);
  const auto last = static_cast<std::int64_t>(trace_->samples.size()) - 1;
  return trace_->samples[static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, last))].throughput;
}

double ThroughputIntegrator::transmit(double start, double bits) {
  if (bits < 0.0) throw ValidationError("cannot transmit a negative number of bits");
  if (bits == 0.0) {
    cursor_ = std::max(cursor_, start);
    return start;
  }
  const auto last = static_cast<std::int64_t>(trace_->samples.size()) - 1;
  double remaining = bits / 1e6;  // Mbit
  double t = start;
  auto idx = segment_of(offset_ + start);
  for (;;) {
    const auto clamped = std::clamp<std::int64_t>(idx, 0, last);
    const double rate = trace_->samples[static_cast<std::size_t>(clamped)].throughput;
    const bool open_ended = idx >= last;
    const double seg_end = open_ended ? std::numeric_limits<double>::infinity()
                                      : static_cast<double>(idx + 1) - offset_;
    if (rate > 0.0 && (open_ended || rate * (seg_end - t) >= remaining)) {
      const double finish = t + remaining / rate;
      if (finish - start > stall_cap_) break;
      cursor_ = std::max(cursor_, finish);
      return finish;
    }
    if (open_ended) break;  // zero rate forever
    remaining -= rate * (seg_end - t);
    t = seg_end;
    ++idx;
    if (t - start > stall_cap_) break;
  }
  throw StallError("transmission starting at t=" + std::to_string(start) + " s exceeded the " +
                   std::to_string(stall_cap_) + " s stall cap");
}

double ThroughputIntegrator::average(double t0, double t1) const {
  if (!(t1 > t0)) return rate_at(t0);
  const auto last = static_cast<std::int64_t>(trace_->samples.size()) - 1;
  double integral = 0.0;
  double t = t0;
  auto idx = segment_of(offset_ + t0);
  while (t < t1) {
    const double rate = trace_->samples[static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, last))].throughput;
    const double seg_end = idx >= last ? t1 : std::min(t1, static_cast<double>(idx + 1) - offset_);
    integral += rate * (seg_end - t);
    t = seg_end;
    ++idx;
  }
  return integral / (t1 - t0);
}

// ---------------------------------------------------------------------------
// Analytic GOP model
// ---------------------------------------------------------------------------

GopTiming simulate_gop_analytic(const AnalyticState& state, const GopWorkload& gop, int gop_length,
                                double mean_throughput) {
  if (!(mean_throughput > 0.0)) throw ValidationError("analytic model needs a positive throughput");
  if (gop.encode_delays.size() != gop.frame_bits.size()) {
    throw ValidationError("analytic workload lists differ in length");
  }
  const double rate = mean_throughput * 1e6;
  double free = state.t_prev;
  double wait = 0.0;
  for (std::size_t j = 0; j < gop.frame_bits.size(); ++j) {
    const double capture = gop.capture_start + static_cast<double>(j) * gop.frame_interval;
    const double ready = std::max(free, capture);
    wait += ready - free;
    const double encoded = ready + gop.encode_delays[j];
    free = encoded + gop.frame_bits[j] / rate;
  }
  GopTiming out;
  out.t_end = free;
  out.wait = wait;
  out.queue = std::max(0.0, state.q_prev + (out.t_end - state.t_prev) - gop_length);
  return out;
}

std::string to_string(Fidelity f) {
  return f == Fidelity::kEventDriven ? "event" : "analytic";
}

Fidelity parse_fidelity(const std::string& text) {
  if (text == "event" || text == "event-driven") return Fidelity::kEventDriven;
  if (text == "analytic") return Fidelity::kAnalytic;
  throw UsageError("unknown fidelity '" + text + "' (expected event or analytic)");
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

namespace {

struct StageClock {
  double decoder_free = 0.0;
  double inference_free = 0.0;
};

/// Walks one GOP frame by frame. `send(encoded_at, bits)` returns the
/// receive time of a frame.
template <typename Send>
GopOutcome run_gop(const VideoUnitRecord& unit, double t_prev, int frame_rate, StageClock& clock,
                   Send&& send) {
  GopOutcome g;
  g.config = unit.config;
  g.gop_length = unit.gop_length;
  g.content_start = unit.gop_start;
  g.t_start = t_prev;
  g.frames = unit.frame_count();
  g.accuracy = unit.accuracy;
  g.bits = unit.total_bits();

  const double interval = 1.0 / frame_rate;
  double free = t_prev;
  for (std::size_t j = 0; j < unit.frame_count(); ++j) {
    const double capture = unit.gop_start + static_cast<double>(j) * interval;
    const double ready = std::max(free, capture);
    g.wait += ready - free;
    if (j == 0) {
      g.first_capture = capture;
      g.encode_start = ready;
    }
    const double encoded = ready + unit.encode_delays[j];
    const double received = send(encoded, unit.frame_sizes[j]);
    free = received;
    // Frame j decodes after it and its predecessors are in; inference follows decode.
    const double decoded = std::max(received, clock.decoder_free) + unit.decode_delays[j];
    clock.decoder_free = decoded;
    const double analyzed = std::max(decoded, clock.inference_free) + unit.inference_delays[j];
    clock.inference_free = analyzed;
    g.last_decode_end = decoded;
    g.last_inference_end = analyzed;
  }
  g.t_end = free;
  g.ol_delay = g.last_decode_end - g.encode_start;
  g.response_delay = g.last_inference_end - g.first_capture;
  return g;
}

void check_decision(const Decision& d, const DecisionContext& ctx, const VideoTraceSet& video,
                    const EncodingConfig& config) {
  const auto fail = [&](const std::string& why) {
    throw ValidationError("GOP " + std::to_string(ctx.gop_index) + ": " + why);
  };
  if (d.gop_length < 1 || d.gop_length > ctx.content_remaining) {
    fail("GOP length " + std::to_string(d.gop_length) + " outside [1, " +
         std::to_string(ctx.content_remaining) + "]");
  }
  if (!video.has(config, d.gop_length)) {
    fail("no video records for " + to_string(config) + " gop_length=" + std::to_string(d.gop_length));
  }
}

}  // namespace

SessionResult simulate_session(const NetworkTrace& trace, DecisionSource& source,
                               const VideoTraceSet& video, const SessionOptions& options) {
  SessionResult result;
  result.video_id = video.video_id();
  result.trace_id = trace.trace_id;
  result.policy = source.name();
  result.fidelity = options.fidelity;
  result.frame_rate = options.stream.frame_rate;

  const int duration = options.content_duration > 0 ? std::min(options.content_duration, video.duration())
                                                    : video.duration();
  if (duration <= 0) throw ValidationError("session has no content to stream");

  ThroughputIntegrator link(trace, options.trace_offset, options.stall_cap);
  StageClock clock;
  double t_prev = 0.0;
  double q_prev = 0.0;
  int content = 0;

  while (content < duration) {
    DecisionContext ctx;
    ctx.gop_index = result.gops.size();
    ctx.now = t_prev;
    ctx.content_start = content;
    ctx.content_remaining = duration - content;
    ctx.queue = q_prev;
    ctx.trace = &trace;
    ctx.trace_offset = options.trace_offset;
    ctx.video = &video;
    ctx.stream = options.stream;

    const Decision decision = source.decide(ctx);
    const EncodingConfig config{decision.bitrate, options.stream.frame_rate, options.stream.resolution};
    check_decision(decision, ctx, video, config);
    const VideoUnitRecord unit = video.gop(config, decision.gop_length, content);

    GopOutcome g;
    if (options.fidelity == Fidelity::kEventDriven) {
      g = run_gop(unit, t_prev, options.stream.frame_rate, clock,
                  [&](double at, double bits) { return link.transmit(at, bits); });
      g.realized_throughput = link.average(g.t_start, g.t_end);
    } else {
      // Realized mean throughput over [t_{k-1}, t_k] is a fixed point of the
      // analytic model; start from the window needed to push the raw bits.
      const GopWorkload work{static_cast<double>(content), 1.0 / options.stream.frame_rate,
                             unit.encode_delays, unit.frame_sizes};
      ThroughputIntegrator probe(trace, options.trace_offset, options.stall_cap);
      double encode_total = 0.0;
      for (double e : unit.encode_delays) encode_total += e;
      const double start = std::max(t_prev, static_cast<double>(content));
      double mean = probe.average(t_prev, probe.transmit(start + encode_total, unit.total_bits()));
      double t_end = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        if (!(mean > 0.0)) {
          throw StallError("GOP " + std::to_string(ctx.gop_index) + ": zero mean throughput");
        }
        const auto timing = simulate_gop_analytic({t_prev, q_prev}, work, decision.gop_length, mean);
        if (timing.t_end - t_prev > options.stall_cap) {
          throw StallError("GOP " + std::to_string(ctx.gop_index) + " exceeded the stall cap");
        }
        const double next = probe.average(t_prev, timing.t_end);
        const bool settled = std::abs(timing.t_end - t_end) < 1e-12;
        t_end = timing.t_end;
        if (settled || next == mean) break;
        mean = next;
      }
      g = run_gop(unit, t_prev, options.stream.frame_rate, clock, [&](double at, double bits) {
        return at + bits / (mean * 1e6);
      });
      g.realized_throughput = mean;
    }
    g.index = ctx.gop_index;
    g.queue = std::max(0.0, q_prev + (g.t_end - t_prev) - decision.gop_length);
    g.decision = decision;

    source.observe(GopFeedback{g.index, g.gop_length, decision.bitrate, g.t_start, g.t_end, g.queue,
                               g.realized_throughput});
    t_prev = g.t_end;
    q_prev = g.queue;
    content += decision.gop_length;
    result.gops.push_back(std::move(g));
  }
  compute_metrics(result);
  return result;
}

void compute_metrics(SessionResult& s) {
  if (s.gops.empty()) throw ValidationError("cannot compute metrics of an empty session");
  s.per_second_ol.clear();
  s.per_second_response.clear();
  s.per_second_accuracy.clear();
  s.frames = 0;
  double last_result = 0.0;
  for (const auto& g : s.gops) {
    for (int i = 0; i < g.gop_length; ++i) {
      s.per_second_ol.push_back(g.ol_delay);
      s.per_second_response.push_back(g.response_delay);
      s.per_second_accuracy.push_back(g.accuracy);
    }
    s.frames += g.frames;
    last_result = std::max(last_result, g.last_inference_end);
  }
  const auto mean = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  };
  s.mean_ol_delay = mean(s.per_second_ol);
  s.mean_response_delay = mean(s.per_second_response);
  s.mean_accuracy = mean(s.per_second_accuracy);
  s.elapsed = last_result - s.gops.front().first_capture;
  // The capture of n frames itself spans n / f seconds.
  const double capture_span = static_cast<double>(s.frames) / s.frame_rate;
  s.normalized_tp = static_cast<double>(s.frames) / (std::max(s.elapsed, capture_span) * s.frame_rate);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json decision_to_json(const Decision& d) {
  return json{{"gop_length", d.gop_length},
              {"bitrate", d.bitrate},
              {"predicted_throughput", d.predicted_throughput},
              {"objective", d.objective},
              {"gamma", d.gamma},
              {"stall", d.stall},
              {"predictor_fallback", d.predictor_fallback}};
}

Decision decision_from_json(const json& j) {
  Decision d;
  d.gop_length = j.at("gop_length").get<int>();
  d.bitrate = j.at("bitrate").get<double>();
  d.predicted_throughput = j.at("predicted_throughput").get<double>();
  d.objective = j.at("objective").get<double>();
  d.gamma = j.at("gamma").get<double>();
  d.stall = j.at("stall").get<bool>();
  d.predictor_fallback = j.at("predictor_fallback").get<bool>();
  return d;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_session_json(const SessionResult& s, const std::filesystem::path& path) {
  json gops = json::array();
  for (const auto& g : s.gops) {
    gops.push_back({{"k", g.index},
                    {"bitrate", g.config.bitrate},
                    {"frame_rate", g.config.frame_rate},
                    {"width", g.config.resolution.width},
                    {"height", g.config.resolution.height},
                    {"gop_length", g.gop_length},
                    {"content_start", g.content_start},
                    {"t_start", g.t_start},
                    {"t_end", g.t_end},
                    {"wait", g.wait},
                    {"queue", g.queue},
                    {"first_capture", g.first_capture},
                    {"encode_start", g.encode_start},
                    {"last_decode_end", g.last_decode_end},
                    {"last_inference_end", g.last_inference_end},
                    {"ol_delay", g.ol_delay},
                    {"response_delay", g.response_delay},
                    {"accuracy", g.accuracy},
                    {"realized_throughput", g.realized_throughput},
                    {"bits", g.bits},
                    {"frames", g.frames},
                    {"decision", decision_to_json(g.decision)}});
  }
  const json doc{{"video_id", s.video_id},
                 {"trace_id", s.trace_id},
                 {"policy", s.policy},
                 {"fidelity", to_string(s.fidelity)},
                 {"frame_rate", s.frame_rate},
                 {"mean_accuracy", s.mean_accuracy},
                 {"mean_ol_delay", s.mean_ol_delay},
                 {"mean_response_delay", s.mean_response_delay},
                 {"normalized_tp", s.normalized_tp},
                 {"frames", s.frames},
                 {"elapsed", s.elapsed},
                 {"gops", gops}};
  write_atomically(path, doc.dump(2) + "\n");
}

SessionResult load_session_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open session result " + path.string());
  try {
    const json doc = json::parse(in);
    SessionResult s;
    s.video_id = doc.at("video_id").get<std::string>();
    s.trace_id = doc.at("trace_id").get<std::string>();
    s.policy = doc.at("policy").get<std::string>();
    s.fidelity = parse_fidelity(doc.at("fidelity").get<std::string>());
    s.frame_rate = doc.at("frame_rate").get<int>();
    for (const auto& j : doc.at("gops")) {
      GopOutcome g;
      g.index = j.at("k").get<std::size_t>();
      g.config = {j.at("bitrate").get<double>(), j.at("frame_rate").get<int>(),
                  {j.at("width").get<int>(), j.at("height").get<int>()}};
      g.gop_length = j.at("gop_length").get<int>();
      g.content_start = j.at("content_start").get<int>();
      g.t_start = j.at("t_start").get<double>();
      g.t_end = j.at("t_end").get<double>();
      g.wait = j.at("wait").get<double>();
      g.queue = j.at("queue").get<double>();
      g.first_capture = j.at("first_capture").get<double>();
      g.encode_start = j.at("encode_start").get<double>();
      g.last_decode_end = j.at("last_decode_end").get<double>();
      g.last_inference_end = j.at("last_inference_end").get<double>();
      g.ol_delay = j.at("ol_delay").get<double>();
      g.response_delay = j.at("response_delay").get<double>();
      g.accuracy = j.at("accuracy").get<double>();
      g.realized_throughput = j.at("realized_throughput").get<double>();
      g.bits = j.at("bits").get<double>();
      g.frames = j.at("frames").get<std::size_t>();
      g.decision = decision_from_json(j.at("decision"));
      s.gops.push_back(std::move(g));
    }
    compute_metrics(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

void write_gop_log(const SessionResult& s, const std::filesystem::path& path) {
  std::string text = "k,config,gop_length,t_k,queue,ol_delay,response_delay,accuracy\n";
  for (const auto& g : s.gops) {
    text += std::to_string(g.index) + "," + to_string(g.config) + "," + std::to_string(g.gop_length) +
            "," + fmt(g.t_end) + "," + fmt(g.queue) + "," + fmt(g.ol_delay) + "," +
            fmt(g.response_delay) + "," + fmt(g.accuracy) + "\n";
  }
  write_atomically(path, text);
}

void write_decision_log(const SessionResult& s, const std::filesystem::path& path) {
  std::string text =
      "timestamp,gop_length,bitrate,predicted_throughput,realized_throughput,gamma,queue,objective,"
      "predictor_fallback,stall\n";
  double queue = 0.0;
  for (const auto& g : s.gops) {
    const auto& d = g.decision;
    text += fmt(g.t_start) + "," + std::to_string(d.gop_length) + "," + fmt(d.bitrate) + "," +
            fmt(d.predicted_throughput) + "," + fmt(g.realized_throughput) + "," + fmt(d.gamma) + "," +
            fmt(queue) + "," + fmt(d.objective) + "," + (d.predictor_fallback ? "1" : "0") + "," +
            (d.stall ? "1" : "0") + "\n";
    queue = g.queue;
  }
  write_atomically(path, text);
}

}  // namespace starstream
