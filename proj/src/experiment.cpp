#include "starstream/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "starstream/errors.hpp"

namespace starstream {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::vector<fs::path> path_list(const json& j) {
  std::vector<fs::path> out;
  if (j.is_string()) {
    out.emplace_back(j.get<std::string>());
  } else {
    for (const auto& e : j) out.emplace_back(e.get<std::string>());
  }
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("STARSTREAM_" + key + ": not a number: '" + text + "'");
  }
}

std::string pair_stem(const std::string& video_id, const std::string& trace_id) {
  return video_id + "__" + trace_id;
}

json metrics_json(const PairOutcome& o) {
  json j{{"video_id", o.video_id}, {"trace_id", o.trace_id}, {"stalled", o.stalled}};
  if (!o.error.empty()) j["error"] = o.error;
  if (o.session) {
    const auto& s = *o.session;
    j["accuracy"] = s.mean_accuracy;
    j["normalized_tp"] = s.normalized_tp;
    j["ol_delay"] = s.mean_ol_delay;
    j["response_delay"] = s.mean_response_delay;
    j["gops"] = s.gops.size();
    j["predictor_fallbacks"] = o.predictor_fallbacks;
    j["probe_budget_s"] = o.probe_budget;
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
  RunConfig c;
  try {
    if (doc.contains("network_traces")) c.network_traces = path_list(doc["network_traces"]);
    if (doc.contains("video_traces")) c.video_traces = path_list(doc["video_traces"]);
    c.predictor = doc.value("predictor", c.predictor);
    c.controller = doc.value("controller", c.controller);
    c.ablation = doc.value("ablation", c.ablation);
    c.v2_predictor = doc.value("v2_predictor", c.v2_predictor);
    if (doc.contains("fidelity")) c.fidelity = parse_fidelity(doc["fidelity"].get<std::string>());
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("out")) c.out = doc["out"].get<std::string>();
    c.jobs = doc.value("jobs", c.jobs);
    c.trace_offset = doc.value("trace_offset", c.trace_offset);
    c.content_duration = doc.value("content_duration", c.content_duration);
    auto& p = c.params;
    p.alpha = doc.value("alpha", p.alpha);
    p.beta = doc.value("beta", p.beta);
    p.horizon = doc.value("horizon", p.horizon);
    p.delta = doc.value("delta", p.delta);
    p.time_cell = doc.value("time_cell", p.time_cell);
    p.stall_cap = doc.value("stall_cap", p.stall_cap);
    p.lookback = doc.value("lookback", p.lookback);
    p.lookahead = doc.value("lookahead", p.lookahead);
    p.context = doc.value("context", p.context);
    p.gamma_period = doc.value("gamma_period", p.gamma_period);
    if (doc.contains("gop_candidates")) p.gop_candidates = doc["gop_candidates"].get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  // Relative paths resolve against the config file's directory.
  const auto base = path.parent_path();
  for (auto* list : {&c.network_traces, &c.video_traces}) {
    for (auto& p : *list) {
      if (p.is_relative()) p = base / p;
    }
  }
  return c;
}

void apply_env_overrides(RunConfig& c) {
  const auto env = [](const char* key) -> std::optional<std::string> {
    const std::string name = std::string("STARSTREAM_") + key;
    if (const char* v = std::getenv(name.c_str()); v != nullptr && *v != '\0') return std::string(v);
    return std::nullopt;
  };
  if (auto v = env("PREDICTOR")) c.predictor = *v;
  if (auto v = env("CONTROLLER")) c.controller = *v;
  if (auto v = env("ABLATION")) c.ablation = *v;
  if (auto v = env("V2_PREDICTOR")) c.v2_predictor = *v;
  if (auto v = env("FIDELITY")) c.fidelity = parse_fidelity(*v);
  if (auto v = env("OUT")) c.out = *v;
  if (auto v = env("SEED")) c.seed = static_cast<std::uint64_t>(to_double("SEED", *v));
  if (auto v = env("JOBS")) c.jobs = static_cast<unsigned>(to_double("JOBS", *v));
  if (auto v = env("ALPHA")) c.params.alpha = to_double("ALPHA", *v);
  if (auto v = env("BETA")) c.params.beta = to_double("BETA", *v);
  if (auto v = env("HORIZON")) c.params.horizon = static_cast<std::size_t>(to_double("HORIZON", *v));
  if (auto v = env("DELTA")) c.params.delta = to_double("DELTA", *v);
  if (auto v = env("TIME_CELL")) c.params.time_cell = to_double("TIME_CELL", *v);
  if (auto v = env("TRACE_OFFSET")) c.trace_offset = to_double("TRACE_OFFSET", *v);
}

void validate(const RunConfig& c) {
  if (c.network_traces.empty()) throw UsageError("no network traces given");
  if (c.video_traces.empty()) throw UsageError("no video traces given");
  for (const auto* list : {&c.network_traces, &c.video_traces}) {
    for (const auto& p : *list) {
      if (!fs::exists(p)) throw IoError("path does not exist: " + p.string());
    }
  }
  if (c.ablation != "" && c.ablation != "v1" && c.ablation != "v2") {
    throw UsageError("unknown ablation '" + c.ablation + "' (expected v1 or v2)");
  }
  if (c.ablation == "v2" && c.v2_predictor.empty()) {
    throw UsageError("ablation v2 needs an alternate predictor (v2_predictor / --v2-predictor)");
  }
  if (c.jobs == 0) throw UsageError("--jobs must be at least 1");
  if (c.trace_offset < 0.0) throw ValidationError("trace offset must be non-negative");
  validate(c.params);
}

ControllerParams effective_params(const RunConfig& c) {
  ControllerParams p = c.params;
  if (c.ablation == "v1") p.freeze_gamma = true;
  return p;
}

std::string effective_predictor(const RunConfig& c) {
  return c.ablation == "v2" ? c.v2_predictor : c.predictor;
}

std::vector<fs::path> expand_trace_paths(const std::vector<fs::path>& paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

PreparedVideo prepare_video(VideoTraceSet set) {
  PreparedVideo v;
  auto profile = std::make_shared<ProfileTable>(build_profile(set));
  const auto format = prune_configs(*profile, profile->space.bitrates);
  v.stream = {format.frame_rate, format.resolution};
  v.profile = std::move(profile);
  v.set = std::move(set);
  return v;
}

PairOutcome run_pair(const PreparedVideo& video, const NetworkTrace& trace, const RunConfig& config) {
  PairOutcome o;
  o.video_id = video.set.video_id();
  o.trace_id = trace.trace_id;
  const auto params = effective_params(config);
  auto context = make_policy_context(video.profile, video.stream);
  std::unique_ptr<Predictor> predictor;
  if (config.controller == "starstream" || config.controller == "adarate") {
    predictor = make_predictor(effective_predictor(config));
  }
  auto policy = make_policy(config.controller, std::move(context), params, std::move(predictor));

  SessionOptions options;
  options.fidelity = config.fidelity;
  options.stream = video.stream;
  options.trace_offset = config.trace_offset;
  options.stall_cap = params.stall_cap;
  options.content_duration = config.content_duration;
  try {
    o.session = simulate_session(trace, *policy, video.set, options);
  } catch (const StallError& e) {
    o.stalled = true;
    o.error = e.what();
  }
  if (const auto* ss = dynamic_cast<const StarStreamController*>(policy.get())) {
    o.predictor_fallbacks = ss->fallbacks();
    o.probe_budget = ss->probe_budget_used();
  }
  return o;
}

std::vector<PairOutcome> run_simulation(const RunConfig& config) {
  validate(config);
  std::vector<NetworkTrace> traces;
  for (const auto& p : expand_trace_paths(config.network_traces)) {
    traces.push_back(load_network_trace(p, config.params.delta));
  }
  std::vector<PreparedVideo> videos;
  for (const auto& dir : config.video_traces) videos.push_back(prepare_video(load_video_trace_set(dir)));

  struct Job {
    std::size_t video;
    std::size_t trace;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (std::size_t t = 0; t < traces.size(); ++t) jobs.push_back({v, t});
  }
  const fs::path pair_dir = config.out / "pairs";
  fs::create_directories(pair_dir);

  std::vector<PairOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto& job = jobs[i];
        auto o = run_pair(videos[job.video], traces[job.trace], config);
        const auto stem = pair_stem(o.video_id, o.trace_id);
        if (o.session) {
          write_session_json(*o.session, pair_dir / (stem + ".json"));
          write_gop_log(*o.session, pair_dir / (stem + ".gops.csv"));
          write_decision_log(*o.session, pair_dir / (stem + ".decisions.csv"));
        }
        outcomes[i] = std::move(o);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const unsigned threads = std::min<unsigned>(config.jobs, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  json pairs = json::array();
  double acc = 0.0, tp = 0.0, ol = 0.0, resp = 0.0;
  std::size_t completed = 0, stalled = 0;
  for (const auto& o : outcomes) {
    pairs.push_back(metrics_json(o));
    if (o.session) {
      acc += o.session->mean_accuracy;
      tp += o.session->normalized_tp;
      ol += o.session->mean_ol_delay;
      resp += o.session->mean_response_delay;
      ++completed;
    }
    if (o.stalled) ++stalled;
  }
  json summary{{"controller", config.controller},
               {"ablation", config.ablation},
               {"predictor", effective_predictor(config)},
               {"fidelity", to_string(config.fidelity)},
               {"pairs", pairs},
               {"completed", completed},
               {"stalled", stalled}};
  if (completed > 0) {
    const auto n = static_cast<double>(completed);
    summary["mean"] = {{"accuracy", acc / n}, {"normalized_tp", tp / n}, {"ol_delay", ol / n},
                       {"response_delay", resp / n}};
  }
  if (config.seed) summary["seed"] = *config.seed;
  write_atomic(config.out / "summary.json", summary.dump(2) + "\n");
  return outcomes;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

std::vector<PairMetrics> load_summary(const fs::path& result_dir) {
  const auto path = result_dir / "summary.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    std::vector<PairMetrics> out;
    for (const auto& j : doc.at("pairs")) {
      PairMetrics m;
      m.video_id = j.at("video_id").get<std::string>();
      m.trace_id = j.at("trace_id").get<std::string>();
      m.stalled = j.value("stalled", false);
      if (j.contains("accuracy")) {
        m.accuracy = j.at("accuracy").get<double>();
        m.normalized_tp = j.at("normalized_tp").get<double>();
        m.ol_delay = j.at("ol_delay").get<double>();
        m.response_delay = j.at("response_delay").get<double>();
      }
      out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end(), [](const PairMetrics& a, const PairMetrics& b) {
      return std::tie(a.video_id, a.trace_id) < std::tie(b.video_id, b.trace_id);
    });
    return out;
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

void compare_results(const std::vector<fs::path>& result_dirs, const fs::path& out) {
  if (result_dirs.size() < 2) throw UsageError("compare needs at least two result directories");
  std::vector<std::vector<PairMetrics>> sets;
  for (const auto& d : result_dirs) sets.push_back(load_summary(d));

  using PairKey = std::pair<std::string, std::string>;
  const auto keys = [](const std::vector<PairMetrics>& s) {
    std::set<PairKey> k;
    for (const auto& m : s) k.insert({m.video_id, m.trace_id});
    return k;
  };
  const auto reference = keys(sets.front());
  for (std::size_t i = 1; i < sets.size(); ++i) {
    const auto other = keys(sets[i]);
    if (other == reference) continue;
    std::string msg = "pair sets differ between " + result_dirs.front().string() + " and " +
                      result_dirs[i].string() + ":";
    for (const auto& k : reference) {
      if (!other.count(k)) msg += " -" + k.first + "/" + k.second;
    }
    for (const auto& k : other) {
      if (!reference.count(k)) msg += " +" + k.first + "/" + k.second;
    }
    throw ValidationError(msg);
  }

  fs::create_directories(out);
  struct Metric {
    const char* name;
    double PairMetrics::*field;
  };
  const Metric metrics[] = {{"accuracy", &PairMetrics::accuracy},
                            {"normalized_tp", &PairMetrics::normalized_tp},
                            {"ol_delay", &PairMetrics::ol_delay},
                            {"response_delay", &PairMetrics::response_delay}};
  char buf[160];
  for (const auto& m : metrics) {
    std::string csv = "set,value,cdf\n";
    for (std::size_t i = 0; i < sets.size(); ++i) {
      std::vector<double> values;
      for (const auto& p : sets[i]) {
        if (!p.stalled) values.push_back(p.*(m.field));
      }
      std::sort(values.begin(), values.end());
      for (std::size_t j = 0; j < values.size(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", values[j],
                      static_cast<double>(j + 1) / static_cast<double>(values.size()));
        csv += result_dirs[i].filename().string() + buf;
      }
    }
    write_atomic(out / (std::string("cdf_") + m.name + ".csv"), csv);
  }

  std::string deltas = "set,video_id,trace_id,d_accuracy,d_normalized_tp,d_ol_delay,d_response_delay\n";
  for (std::size_t i = 1; i < sets.size(); ++i) {
    for (std::size_t j = 0; j < sets[i].size(); ++j) {
      const auto& a = sets.front()[j];
      const auto& b = sets[i][j];
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", b.accuracy - a.accuracy,
                    b.normalized_tp - a.normalized_tp, b.ol_delay - a.ol_delay,
                    b.response_delay - a.response_delay);
      deltas += result_dirs[i].filename().string() + "," + b.video_id + "," + b.trace_id + buf;
    }
  }
  write_atomic(out / "deltas.csv", deltas);
}

}  // namespace starstream
