#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "starstream/controller.hpp"
#include "starstream/errors.hpp"

namespace starstream {

// ---------------------------------------------------------------------------
// GOP length selection
// ---------------------------------------------------------------------------

GopChoice select_gop_length(std::span<const std::uint8_t> shifts, std::span<const int> candidates) {
  if (candidates.empty()) throw ValidationError("no GOP length candidates");
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  const auto first_shift = std::find(shifts.begin(), shifts.end(), std::uint8_t{1});
  int wanted = sorted.back();
  if (first_shift != shifts.end()) {
    wanted = std::clamp(static_cast<int>(first_shift - shifts.begin()), sorted.front(), sorted.back());
  }
  // Largest candidate not exceeding the wanted length.
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), wanted);
  const int length = it == sorted.begin() ? sorted.front() : *std::prev(it);
  return {length, static_cast<std::size_t>(length)};
}

double mean_predicted_throughput(std::span<const double> predicted, std::size_t offset, int length) {
  if (predicted.empty()) throw ValidationError("no predicted throughputs");
  if (length < 1) throw ValidationError("GOP length must be positive");
  double sum = 0.0;
  for (int i = 0; i < length; ++i) {
    const auto idx = std::min(offset + static_cast<std::size_t>(i), predicted.size() - 1);
    sum += predicted[idx];
  }
  return sum / length;
}

std::vector<HorizonGop> plan_horizon(const PredictionResult& prediction, std::span<const int> candidates,
                                     std::size_t horizon, int content_remaining) {
  std::vector<HorizonGop> gops;
  std::size_t offset = 0;
  int left = content_remaining;
  for (std::size_t k = 0; k < horizon && left > 0; ++k) {
    std::vector<std::uint8_t> window;
    if (offset < prediction.shifts.size()) {
      window.assign(prediction.shifts.begin() + static_cast<std::ptrdiff_t>(offset), prediction.shifts.end());
    }
    if (k > 0 && !window.empty()) window[0] = 0;
    const auto choice = select_gop_length(window, candidates);
    const int length = std::min(choice.gop_length, left);
    gops.push_back({length, mean_predicted_throughput(prediction.throughputs, offset, length)});
    offset += static_cast<std::size_t>(length);
    left -= length;
  }
  return gops;
}

// ---------------------------------------------------------------------------
// Planner video model
// ---------------------------------------------------------------------------

PlannerVideo::PlannerVideo(std::vector<double> bitrates, int frame_rate)
    : bitrates_(std::move(bitrates)), frame_rate_(frame_rate) {
  if (!std::is_sorted(bitrates_.begin(), bitrates_.end())) {
    throw ValidationError("planner bitrates must be sorted ascending");
  }
}

PlannerVideo PlannerVideo::from_profile(const ProfileTable& profile, const StreamSettings& stream) {
  auto bitrates = profile.space.bitrates;
  std::sort(bitrates.begin(), bitrates.end());
  PlannerVideo video(bitrates, stream.frame_rate);
  for (std::size_t i = 0; i < bitrates.size(); ++i) {
    for (int gop : profile.space.gop_lengths) {
      const auto& e = profile.at({bitrates[i], stream.frame_rate, stream.resolution}, gop);
      const auto frames = static_cast<std::size_t>(gop * stream.frame_rate);
      video.set(i, gop,
                UnitModel{std::vector<double>(frames, e.encode_delay),
                          std::vector<double>(frames, e.frame_size), e.accuracy});
    }
  }
  return video;
}

void PlannerVideo::set(std::size_t bitrate_index, int gop_length, UnitModel model) {
  if (bitrate_index >= bitrates_.size()) throw ValidationError("bitrate index out of range");
  if (model.encode_delays.size() != model.frame_bits.size()) {
    throw ValidationError("unit model lists differ in length");
  }
  models_[{bitrate_index, gop_length}] = std::move(model);
}

const UnitModel& PlannerVideo::at(std::size_t bitrate_index, int gop_length) const {
  const auto it = models_.find({bitrate_index, gop_length});
  if (it == models_.end()) {
    throw ValidationError("planner has no model for bitrate index " + std::to_string(bitrate_index) +
                          " gop_length=" + std::to_string(gop_length));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Horizon optimizer
// ---------------------------------------------------------------------------

namespace {

constexpr double kTieTolerance = 1e-12;

struct Step {
  bool feasible = false;
  AnalyticState next;
  double reward = 0.0;
};

Step advance(const PlannerInput& in, std::size_t stage, double capture_start, const AnalyticState& from,
             std::size_t bitrate_index) {
  const auto& g = in.gops[stage];
  const auto& unit = in.video->at(bitrate_index, g.gop_length);
  const GopWorkload work{capture_start, 1.0 / in.video->frame_rate(), unit.encode_delays, unit.frame_bits};
  const auto timing = simulate_gop_analytic(from, work, g.gop_length, g.mean_throughput);
  Step s;
  s.feasible = timing.t_end - from.t_prev <= in.stall_cap;
  s.next = {timing.t_end, timing.queue};
  s.reward = in.alpha * scaled_accuracy(in.gamma, unit.accuracy) - in.beta * timing.queue;
  return s;
}

std::vector<double> capture_starts(const PlannerInput& in) {
  std::vector<double> starts;
  double s = in.content_start;
  for (const auto& g : in.gops) {
    starts.push_back(s);
    s += g.gop_length;
  }
  return starts;
}

void check_input(const PlannerInput& in) {
  if (in.video == nullptr || in.video->bitrates().empty()) throw ValidationError("planner has no video model");
  if (in.gops.empty()) throw ValidationError("planner horizon is empty");
  if (in.alpha < 0.0 || in.beta < 0.0) throw ValidationError("objective weights must be non-negative");
  if (in.time_cell < 0.0) throw ValidationError("time cell must be non-negative");
  for (const auto& g : in.gops) {
    if (!(g.mean_throughput > 0.0)) throw ValidationError("planner needs positive predicted throughputs");
  }
}

/// True if (value_a, seq_a) ranks strictly ahead of (value_b, seq_b).
bool better(double value_a, const std::vector<std::size_t>& seq_a, double value_b,
            const std::vector<std::size_t>& seq_b) {
  if (std::abs(value_a - value_b) > kTieTolerance) return value_a > value_b;
  return seq_a < seq_b;
}

Plan stalled_plan(const PlannerInput& in) {
  Plan p;
  p.stall = true;
  p.bitrate_indices.assign(in.gops.size(), 0);
  p.bitrates.assign(in.gops.size(), in.video->bitrates().front());
  p.objective = -std::numeric_limits<double>::infinity();
  return p;
}

Plan finish(const PlannerInput& in, std::vector<std::size_t> seq, double value, std::size_t explored) {
  Plan p;
  p.bitrate_indices = std::move(seq);
  for (auto i : p.bitrate_indices) p.bitrates.push_back(in.video->bitrates()[i]);
  p.objective = value;
  p.states_explored = explored;
  return p;
}

struct Label {
  AnalyticState state;
  double value = 0.0;
  std::vector<std::size_t> seq;
};

/// Inserts `label` into a cell's Pareto set over (value up, Q down).
void insert_pareto(std::vector<Label>& cell, Label label) {
  for (const auto& other : cell) {
    const bool no_worse_value = other.value >= label.value - kTieTolerance;
    const bool no_worse_queue = other.state.q_prev <= label.state.q_prev + kTieTolerance;
    if (no_worse_value && no_worse_queue) {
      const bool equal = std::abs(other.value - label.value) <= kTieTolerance &&
                         std::abs(other.state.q_prev - label.state.q_prev) <= kTieTolerance;
      if (!equal || other.seq <= label.seq) return;
    }
  }
  std::erase_if(cell, [&](const Label& other) {
    return label.value >= other.value - kTieTolerance && label.state.q_prev <= other.state.q_prev + kTieTolerance;
  });
  cell.push_back(std::move(label));
}

}  // namespace

std::optional<double> evaluate_plan(const PlannerInput& input, std::span<const std::size_t> bitrate_indices) {
  check_input(input);
  if (bitrate_indices.size() != input.gops.size()) throw ValidationError("plan length differs from horizon");
  const auto starts = capture_starts(input);
  AnalyticState state = input.start;
  double value = 0.0;
  for (std::size_t k = 0; k < input.gops.size(); ++k) {
    const auto step = advance(input, k, starts[k], state, bitrate_indices[k]);
    if (!step.feasible) return std::nullopt;
    value += step.reward;
    state = step.next;
  }
  return value;
}

Plan optimize_dp(const PlannerInput& input) {
  check_input(input);
  const auto starts = capture_starts(input);
  const std::size_t options = input.video->bitrates().size();

  std::vector<Label> frontier{Label{input.start, 0.0, {}}};
  std::size_t explored = 0;
  for (std::size_t k = 0; k < input.gops.size(); ++k) {
    // Cells keyed by quantized completion time, or by the exact bit pattern.
    std::unordered_map<std::int64_t, std::vector<Label>> cells;
    for (const auto& label : frontier) {
      for (std::size_t b = 0; b < options; ++b) {
        const auto step = advance(input, k, starts[k], label.state, b);
        ++explored;
        if (!step.feasible) continue;
        std::int64_t key = 0;
        if (input.time_cell > 0.0) {
          key = static_cast<std::int64_t>(std::floor(step.next.t_prev / input.time_cell));
        } else {
          static_assert(sizeof(double) == sizeof(std::int64_t));
          std::memcpy(&key, &step.next.t_prev, sizeof key);
        }
        Label next{step.next, label.value + step.reward, label.seq};
        next.seq.push_back(b);
        insert_pareto(cells[key], std::move(next));
      }
    }
    frontier.clear();
    for (auto& [key, cell] : cells) {
      for (auto& l : cell) frontier.push_back(std::move(l));
    }
    if (frontier.empty()) return stalled_plan(input);
  }
  const Label* best = nullptr;
  for (const auto& l : frontier) {
    if (best == nullptr || better(l.value, l.seq, best->value, best->seq)) best = &l;
  }
  return finish(input, best->seq, best->value, explored);
}

Plan brute_force_oracle(const PlannerInput& input) {
  check_input(input);
  const std::size_t options = input.video->bitrates().size();
  const std::size_t horizon = input.gops.size();
  std::uint64_t total = 1;
  for (std::size_t k = 0; k < horizon; ++k) {
    total *= options;
    if (total > kOracleCap) {
      throw ValidationError("brute-force oracle limited to " + std::to_string(kOracleCap) + " sequences");
    }
  }
  std::vector<std::size_t> seq(horizon, 0);
  std::vector<std::size_t> best_seq;
  double best_value = 0.0;
  bool found = false;
  for (std::uint64_t n = 0; n < total; ++n) {
    // Enumerate in lexicographic order: position 0 is the most significant digit.
    std::uint64_t rest = n;
    for (std::size_t k = horizon; k-- > 0;) {
      seq[k] = rest % options;
      rest /= options;
    }
    const auto value = evaluate_plan(input, seq);
    if (!value) continue;
    if (!found || better(*value, seq, best_value, best_seq)) {
      best_value = *value;
      best_seq = seq;
      found = true;
    }
  }
  if (!found) return stalled_plan(input);
  return finish(input, best_seq, best_value, total);
}

double quantization_bound(const PlannerInput& input) {
  const auto h = static_cast<double>(input.gops.size());
  return input.beta * input.time_cell * h * (h - 1.0) / 2.0 + 1e-9;
}

// ---------------------------------------------------------------------------
// Baseline rules
// ---------------------------------------------------------------------------

double highest_bitrate_below(double estimate, std::span<const double> candidates) {
  if (candidates.empty()) throw ValidationError("no bitrate candidates");
  double best = -1.0;
  for (double c : candidates) {
    if (c < estimate) best = std::max(best, c);
  }
  return best >= 0.0 ? best : *std::min_element(candidates.begin(), candidates.end());
}

double baseline_fixed(std::span<const NetworkSample> prestream, std::span<const double> candidates) {
  if (prestream.empty()) return highest_bitrate_below(0.0, candidates);
  double sum = 0.0;
  for (const auto& s : prestream) sum += s.throughput;
  return highest_bitrate_below(sum / static_cast<double>(prestream.size()), candidates);
}

double baseline_adarate(double predicted_throughput, std::span<const double> candidates) {
  return highest_bitrate_below(predicted_throughput, candidates);
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

void validate(const ControllerParams& p) {
  if (!(p.alpha >= 0.0) || !(p.beta >= 0.0)) throw ValidationError("alpha and beta must be non-negative");
  if (p.horizon < 1) throw ValidationError("horizon must be at least 1 GOP");
  if (p.gop_candidates.empty()) throw ValidationError("no GOP length candidates");
  if (p.context < 1 || p.context > p.lookback) throw ValidationError("context must satisfy 1 <= p <= m");
  if (p.lookahead < 1) throw ValidationError("lookahead must be at least 1");
  if (!(p.delta > 0.0)) throw ValidationError("shift threshold must be positive");
  if (p.time_cell < 0.0) throw ValidationError("time cell must be non-negative");
}

PolicyContext make_policy_context(std::shared_ptr<const ProfileTable> profile, const StreamSettings& stream) {
  if (!profile) throw ValidationError("policy needs a profile table");
  PolicyContext c;
  c.planner = PlannerVideo::from_profile(*profile, stream);
  c.profile = std::move(profile);
  c.stream = stream;
  return c;
}

namespace {

std::vector<double> sorted_bitrates(const PolicyContext& c) { return c.planner.bitrates(); }

PlannerInput planner_input(const PolicyContext& context, const ControllerParams& params,
                           const DecisionContext& ctx, std::vector<HorizonGop> gops, double gamma) {
  PlannerInput in;
  in.start = {ctx.now, ctx.queue};
  in.content_start = ctx.content_start;
  in.gops = std::move(gops);
  for (auto& g : in.gops) g.mean_throughput = std::max(g.mean_throughput, kHarmonicFloor);
  in.video = &context.planner;
  in.gamma = gamma;
  in.alpha = params.alpha;
  in.beta = params.beta;
  in.time_cell = params.time_cell;
  in.stall_cap = params.stall_cap;
  return in;
}

Decision decision_from_plan(const Plan& plan, const std::vector<HorizonGop>& gops, double gamma) {
  Decision d;
  d.gop_length = gops.front().gop_length;
  d.bitrate = plan.bitrates.front();
  d.predicted_throughput = gops.front().mean_throughput;
  d.objective = plan.objective;
  d.gamma = gamma;
  d.stall = plan.stall;
  return d;
}

/// Compact-model uncertainty over content seconds [from, to).
double probe_uncertainty(const VideoTraceSet& video, const StreamSettings& stream, int from, int to) {
  const auto& probes = video.probe_detections();
  const auto fps = static_cast<std::size_t>(video.native_frame_rate());
  const auto first = static_cast<std::size_t>(from) * fps;
  const auto last = static_cast<std::size_t>(to) * fps;
  if (last <= probes.size()) {
    return compute_uncertainty(std::span(probes).subspan(first, last - first));
  }
  // No detection trace: fall back to the recorded per-GOP uncertainty.
  const EncodingConfig config{video.space().bitrates.front(), stream.frame_rate, stream.resolution};
  double sum = 0.0;
  for (int s = from; s < to; ++s) sum += video.gop(config, 1, s).uncertainty;
  return sum / std::max(1, to - from);
}

std::vector<NetworkSample> gop_history_samples(std::span<const double> history, std::size_t window) {
  std::vector<NetworkSample> out;
  const std::size_t begin = history.size() > window ? history.size() - window : 0;
  for (std::size_t i = begin; i < history.size(); ++i) {
    NetworkSample s;
    s.timestamp = static_cast<std::int64_t>(i);
    s.throughput = history[i];
    out.push_back(s);
  }
  return out;
}

}  // namespace

StarStreamController::StarStreamController(PolicyContext context, ControllerParams params,
                                           std::unique_ptr<Predictor> predictor)
    : context_(std::move(context)), params_(std::move(params)), predictor_(std::move(predictor)) {
  validate(params_);
  if (!predictor_) predictor_ = std::make_unique<HarmonicMeanPredictor>(params_.hm_window);
  gamma_.update_period = params_.gamma_period;
  gamma_.probe_length = params_.probe_length;
}

void StarStreamController::refresh_gamma(const DecisionContext& ctx) {
  if (params_.freeze_gamma || ctx.video == nullptr) return;
  if (ctx.now - gamma_.last_update_time < gamma_.update_period) return;
  const int captured = std::min(static_cast<int>(std::floor(ctx.now)), ctx.video->duration());
  const int probe = static_cast<int>(std::lround(gamma_.probe_length));
  if (captured < probe) return;
  const double fresh = probe_uncertainty(*ctx.video, context_.stream, captured - probe, captured);
  update_gamma(gamma_, fresh, context_.profile->content_uncertainty);
  gamma_.last_update_time = ctx.now;
  probe_budget_used_ += params_.probe_cost;
}

PredictionRequest StarStreamController::make_request(const DecisionContext& ctx) const {
  PredictionRequest req;
  req.trace_id = ctx.trace != nullptr ? ctx.trace->trace_id : std::string{};
  req.m = params_.lookback;
  req.n = params_.lookahead;
  req.p = params_.context;
  req.delta = params_.delta;
  req.lookback = params_.gop_history ? gop_history_samples(gop_throughputs_, params_.lookback)
                                     : ctx.observed_samples(params_.lookback);
  return req;
}

Decision StarStreamController::decide(const DecisionContext& ctx) {
  refresh_gamma(ctx);
  const auto req = make_request(ctx);
  const auto bitrates = sorted_bitrates(context_);
  if (req.lookback.empty()) {
    Decision d;
    d.gop_length = std::min(params_.fixed_gop > 0 ? params_.fixed_gop : kBaselineGopLength, ctx.content_remaining);
    d.bitrate = baseline_fixed(ctx.prestream_samples(kPrestreamWindow), bitrates);
    d.gamma = gamma_.gamma;
    return d;
  }
  PredictionResult prediction;
  bool fallback = false;
  try {
    prediction = predictor_->predict(req);
    validate_prediction(prediction, req.n);
  } catch (const ProtocolError&) {
    prediction = predict_hm(req, params_.hm_window);
    fallback = true;
    ++fallbacks_;
  }
  std::vector<HorizonGop> gops;
  if (params_.fixed_gop > 0) {
    std::size_t offset = 0;
    int left = ctx.content_remaining;
    for (std::size_t k = 0; k < params_.horizon && left > 0; ++k) {
      const int length = std::min(params_.fixed_gop, left);
      gops.push_back({length, mean_predicted_throughput(prediction.throughputs, offset, length)});
      offset += static_cast<std::size_t>(length);
      left -= length;
    }
  } else {
    gops = plan_horizon(prediction, params_.gop_candidates, params_.horizon, ctx.content_remaining);
  }
  const double gamma = gamma_.gamma;
  const auto input = planner_input(context_, params_, ctx, gops, gamma);
  const auto plan = optimize_dp(input);
  Decision d = decision_from_plan(plan, input.gops, gamma);
  d.predictor_fallback = fallback;
  return d;
}

void StarStreamController::observe(const GopFeedback& feedback) {
  gop_throughputs_.push_back(feedback.realized_throughput);
}

FixedPolicy::FixedPolicy(PolicyContext context) : context_(std::move(context)) {}

Decision FixedPolicy::decide(const DecisionContext& ctx) {
  if (!bitrate_) bitrate_ = baseline_fixed(ctx.prestream_samples(kPrestreamWindow), sorted_bitrates(context_));
  Decision d;
  d.gop_length = std::min(kBaselineGopLength, ctx.content_remaining);
  d.bitrate = *bitrate_;
  return d;
}

AdaRatePolicy::AdaRatePolicy(PolicyContext context, ControllerParams params, std::unique_ptr<Predictor> predictor)
    : context_(std::move(context)), params_(std::move(params)), predictor_(std::move(predictor)) {
  validate(params_);
  if (!predictor_) predictor_ = std::make_unique<HarmonicMeanPredictor>(params_.hm_window);
}

Decision AdaRatePolicy::decide(const DecisionContext& ctx) {
  Decision d;
  d.gop_length = std::min(kBaselineGopLength, ctx.content_remaining);
  const auto bitrates = sorted_bitrates(context_);
  PredictionRequest req;
  req.trace_id = ctx.trace != nullptr ? ctx.trace->trace_id : std::string{};
  req.m = params_.lookback;
  req.n = params_.lookahead;
  req.p = params_.context;
  req.delta = params_.delta;
  req.lookback = ctx.observed_samples(params_.lookback);
  if (req.lookback.empty()) {
    d.bitrate = baseline_fixed(ctx.prestream_samples(kPrestreamWindow), bitrates);
    return d;
  }
  PredictionResult prediction;
  try {
    prediction = predictor_->predict(req);
    validate_prediction(prediction, req.n);
  } catch (const ProtocolError&) {
    prediction = predict_hm(req, params_.hm_window);
    d.predictor_fallback = true;
  }
  d.predicted_throughput = mean_predicted_throughput(prediction.throughputs, 0, d.gop_length);
  d.bitrate = baseline_adarate(d.predicted_throughput, bitrates);
  return d;
}

Decision baseline_mpc(const PolicyContext& context, const ControllerParams& params, const DecisionContext& ctx,
                      std::span<const double> gop_history) {
  const auto bitrates = sorted_bitrates(context);
  if (gop_history.empty()) {
    Decision d;
    d.gop_length = std::min(kBaselineGopLength, ctx.content_remaining);
    d.bitrate = baseline_fixed(ctx.prestream_samples(kPrestreamWindow), bitrates);
    return d;
  }
  const auto recent = gop_history.last(std::min(kMpcHistory, gop_history.size()));
  const double estimate = harmonic_mean(recent);
  std::vector<HorizonGop> gops;
  int left = ctx.content_remaining;
  for (std::size_t k = 0; k < kDefaultHorizon && left > 0; ++k) {
    const int length = std::min(kBaselineGopLength, left);
    gops.push_back({length, estimate});
    left -= length;
  }
  const auto input = planner_input(context, params, ctx, gops, 1.0);
  return decision_from_plan(optimize_dp(input), input.gops, 1.0);
}

MpcPolicy::MpcPolicy(PolicyContext context, ControllerParams params)
    : context_(std::move(context)), params_(std::move(params)) {
  validate(params_);
}

Decision MpcPolicy::decide(const DecisionContext& ctx) { return baseline_mpc(context_, params_, ctx, history_); }

void MpcPolicy::observe(const GopFeedback& feedback) { history_.push_back(feedback.realized_throughput); }

std::unique_ptr<DecisionSource> make_policy(const std::string& name, PolicyContext context, ControllerParams params,
                                            std::unique_ptr<Predictor> predictor) {
  if (name == "fixed") return std::make_unique<FixedPolicy>(std::move(context));
  if (name == "adarate") return std::make_unique<AdaRatePolicy>(std::move(context), std::move(params), std::move(predictor));
  if (name == "mpc") return std::make_unique<MpcPolicy>(std::move(context), std::move(params));
  if (name == "starstream") {
    return std::make_unique<StarStreamController>(std::move(context), std::move(params), std::move(predictor));
  }
  throw UsageError("unknown controller '" + name + "' (expected fixed, adarate, mpc, starstream)");
}

}  // namespace starstream
