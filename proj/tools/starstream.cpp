#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "starstream/errors.hpp"
#include "starstream/experiment.hpp"
#include "starstream/predictor.hpp"
#include "starstream/profiler.hpp"
#include "starstream/trace_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace starstream;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

/// Replays the ground truth of known traces.
class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(const std::vector<NetworkTrace>& traces) {
    for (const auto& t : traces) traces_[t.trace_id] = &t;
  }
  PredictionResult predict(const PredictionRequest& req) override {
    const auto it = traces_.find(req.trace_id);
    if (it == traces_.end()) throw ProtocolError("oracle has no trace '" + req.trace_id + "'");
    const auto& samples = it->second->samples;
    const auto t = static_cast<std::size_t>(req.decision_time() - samples.front().timestamp);
    if (t + req.n > samples.size()) throw ProtocolError("oracle has no truth past the trace end");
    PredictionResult r;
    for (std::size_t i = 0; i < req.n; ++i) {
      r.throughputs.push_back(samples[t + i].throughput);
      r.shifts.push_back(samples[t + i].shift);
    }
    return r;
  }
  std::string name() const override { return "oracle"; }

 private:
  std::map<std::string, const NetworkTrace*> traces_;
};

// ---------------------------------------------------------------------------

struct GenOptions {
  std::optional<std::uint64_t> seed;
  std::size_t count = 10;
  std::size_t duration = 600;
  int square_wave = 0;
  double good = 12.0;
  double bad = 3.0;
  double delta = kDefaultShiftDelta;
  std::size_t videos = 0;
  int video_duration = 480;
  int video_fps = 15;
  fs::path out = "traces";
};

int cmd_gen_traces(const GenOptions& o) {
  if (!o.seed) throw UsageError("gen-traces requires --seed");
  const fs::path net_dir = o.out / "network";
  fs::create_directories(net_dir);
  SyntheticNetworkParams params;
  params.good_mean = o.good;
  params.bad_mean = o.bad;
  params.square_wave_period = o.square_wave;
  json manifest{{"seed", *o.seed}, {"duration_s", o.duration}, {"delta", o.delta}};
  manifest["network_params"] = {{"good_mean", params.good_mean},       {"bad_mean", params.bad_mean},
                                {"noise_sigma", params.noise_sigma},   {"p_good_to_bad", params.p_good_to_bad},
                                {"p_bad_to_good", params.p_bad_to_good},
                                {"square_wave_period", params.square_wave_period}};
  json files = json::array();
  char name[64];
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::uint64_t seed = *o.seed + i;
    auto trace = gen_synthetic_network_trace(seed, o.duration, params, o.delta);
    std::snprintf(name, sizeof name, "net_%03zu", i);
    trace.trace_id = name;
    const auto path = net_dir / (std::string(name) + ".csv");
    write_network_trace(trace, path);
    files.push_back({{"path", fs::relative(path, o.out).string()}, {"trace_id", trace.trace_id}, {"seed", seed}});
  }
  manifest["network_traces"] = files;
  json videos = json::array();
  for (std::size_t i = 0; i < o.videos; ++i) {
    const std::uint64_t seed = *o.seed + 1000 + i;
    std::snprintf(name, sizeof name, "video_%02zu", i);
    const auto set = gen_synthetic_video_trace(seed, o.video_duration, o.video_fps, CandidateSpace{}, {}, name);
    const auto dir = o.out / "video" / name;
    write_video_trace_set(set, dir);
    videos.push_back({{"path", fs::relative(dir, o.out).string()}, {"video_id", name}, {"seed", seed}});
  }
  manifest["video_traces"] = videos;
  write_text(o.out / "manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote %zu network traces and %zu videos to %s\n", o.count, o.videos, o.out.c_str());
  return 0;
}

struct EvalOptions {
  std::vector<fs::path> traces;
  std::vector<std::string> predictors{"hm", "ma"};
  std::size_t m = kDefaultLookback;
  std::size_t n = kDefaultLookahead;
  std::size_t p = kDefaultContext;
  double delta = kDefaultShiftDelta;
  fs::path out = "predictor_eval";
};

int cmd_eval_predictor(const EvalOptions& o) {
  std::vector<NetworkTrace> traces;
  for (const auto& path : expand_trace_paths(o.traces)) traces.push_back(load_network_trace(path, o.delta));
  if (traces.empty()) throw UsageError("no traces to evaluate");
  fs::create_directories(o.out);
  std::string csv = "predictor,mae,rmse,mape,r2,shift_accuracy,shift_f1,count,error\n";
  json rows = json::array();
  int status = 0;
  char buf[256];
  for (const auto& spec : o.predictors) {
    try {
      std::unique_ptr<Predictor> predictor;
      if (spec == "oracle") {
        predictor = std::make_unique<OraclePredictor>(traces);
      } else {
        predictor = make_predictor(spec);
      }
      const auto m = evaluate_on_traces(*predictor, traces, o.m, o.n, o.p);
      std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%zu,\n", m.mae, m.rmse, m.mape, m.r2,
                    m.shift_accuracy, m.shift_f1, m.count);
      csv += spec + buf;
      rows.push_back({{"predictor", spec}, {"mae", m.mae}, {"rmse", m.rmse}, {"mape", m.mape},
                      {"r2", std::isnan(m.r2) ? json(nullptr) : json(m.r2)}, {"shift_accuracy", m.shift_accuracy},
                      {"shift_f1", m.shift_f1}, {"count", m.count}});
    } catch (const ProtocolError& e) {
      std::fprintf(stderr, "predictor %s: %s\n", spec.c_str(), e.what());
      csv += spec + ",,,,,,,," + "\"" + e.what() + "\"\n";
      rows.push_back({{"predictor", spec}, {"error", e.what()}});
      status = static_cast<int>(ErrorKind::kProtocol);
    }
  }
  write_text(o.out / "predictors.csv", csv);
  write_text(o.out / "predictors.json", rows.dump(2) + "\n");
  std::fputs(csv.c_str(), stdout);
  return status;
}

int cmd_profile(const fs::path& video, const fs::path& out) {
  const auto set = load_video_trace_set(video);
  const auto table = build_profile(set);
  write_profile(table, out);
  const auto format = prune_configs(table, table.space.bitrates);
  std::printf("profiled %zu entries of %s; stream format %d fps %s; u_p=%.4f\n", table.entries.size(),
              table.video_id.c_str(), format.frame_rate, to_string(format.resolution).c_str(),
              table.content_uncertainty);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-driven video analytics streaming over satellite links"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-traces", "Generate synthetic network and video traces");
  gen_cmd->add_option("--seed", gen.seed, "Base seed (required)");
  gen_cmd->add_option("--count", gen.count, "Number of network traces");
  gen_cmd->add_option("--duration", gen.duration, "Network trace length, seconds");
  gen_cmd->add_option("--square-wave", gen.square_wave, "Square-wave period (0 = Markov model)");
  gen_cmd->add_option("--good", gen.good, "Good-state mean, Mbps");
  gen_cmd->add_option("--bad", gen.bad, "Bad-state mean, Mbps");
  gen_cmd->add_option("--delta", gen.delta, "Shift threshold, Mbps");
  gen_cmd->add_option("--videos", gen.videos, "Number of synthetic videos");
  gen_cmd->add_option("--video-duration", gen.video_duration, "Video length, seconds");
  gen_cmd->add_option("--video-fps", gen.video_fps, "Native frame rate of synthetic videos");
  gen_cmd->add_option("--out", gen.out, "Output directory");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval-predictor", "Sliding-window evaluation of throughput predictors");
  eval_cmd->add_option("--traces", eval.traces, "Trace files or directories")->required();
  eval_cmd->add_option("--predictor", eval.predictors, "hm[:w], ma[:w], oracle, file:PATH, pipe:CMD");
  eval_cmd->add_option("-m,--lookback", eval.m);
  eval_cmd->add_option("-n,--lookahead", eval.n);
  eval_cmd->add_option("-p,--context", eval.p);
  eval_cmd->add_option("--delta", eval.delta);
  eval_cmd->add_option("--out", eval.out);

  fs::path config_path;
  RunConfig run;
  std::vector<fs::path> traces, videos;
  std::string controller, ablation, predictor, v2_predictor, fidelity, out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
  int content_duration = -1;
  auto* sim_cmd = app.add_subcommand("simulate", "Replay (video, trace) pairs under a controller");
  sim_cmd->add_option("--config", config_path, "JSON run configuration");
  sim_cmd->add_option("--traces", traces, "Network trace files or directories");
  sim_cmd->add_option("--videos", videos, "Video trace set directories");
  sim_cmd->add_option("--controller", controller)->check(CLI::IsMember({"fixed", "adarate", "mpc", "starstream"}));
  sim_cmd->add_option("--ablation", ablation)->check(CLI::IsMember({"v1", "v2"}));
  sim_cmd->add_option("--predictor", predictor, "hm[:w], ma[:w], file:PATH, pipe:CMD");
  sim_cmd->add_option("--v2-predictor", v2_predictor, "Alternate predictor used by --ablation v2");
  sim_cmd->add_option("--fidelity", fidelity)->check(CLI::IsMember({"event", "analytic"}));
  sim_cmd->add_option("--seed", seed);
  sim_cmd->add_option("--jobs", jobs);
  sim_cmd->add_option("--content-duration", content_duration, "Seconds of each video to stream");
  sim_cmd->add_option("--out", out);

  std::vector<fs::path> compare_dirs;
  fs::path compare_out = "comparison";
  auto* cmp_cmd = app.add_subcommand("compare", "CDF plot data and paired deltas across result sets");
  cmp_cmd->add_option("results", compare_dirs, "Result directories (first is the reference)")->required();
  cmp_cmd->add_option("--out", compare_out);

  fs::path profile_video, profile_out = "profile.json";
  auto* prof_cmd = app.add_subcommand("profile", "Build the reference profile table of a video");
  prof_cmd->add_option("--video", profile_video)->required();
  prof_cmd->add_option("--out", profile_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (*gen_cmd) return cmd_gen_traces(gen);
    if (*eval_cmd) return cmd_eval_predictor(eval);
    if (*prof_cmd) return cmd_profile(profile_video, profile_out);
    if (*cmp_cmd) {
      compare_results(compare_dirs, compare_out);
      std::printf("wrote comparison of %zu result sets to %s\n", compare_dirs.size(), compare_out.c_str());
      return 0;
    }
    if (*sim_cmd) {
      if (!config_path.empty()) run = load_run_config(config_path);
      apply_env_overrides(run);
      if (!traces.empty()) run.network_traces = traces;
      if (!videos.empty()) run.video_traces = videos;
      if (!controller.empty()) run.controller = controller;
      if (!ablation.empty()) run.ablation = ablation;
      if (!predictor.empty()) run.predictor = predictor;
      if (!v2_predictor.empty()) run.v2_predictor = v2_predictor;
      if (!fidelity.empty()) run.fidelity = parse_fidelity(fidelity);
      if (!out.empty()) run.out = out;
      if (seed) run.seed = seed;
      if (jobs > 0) run.jobs = jobs;
      if (content_duration >= 0) run.content_duration = content_duration;
      const auto outcomes = run_simulation(run);
      std::size_t stalled = 0;
      for (const auto& o : outcomes) {
        if (o.stalled) {
          ++stalled;
          std::fprintf(stderr, "stall: %s/%s: %s\n", o.video_id.c_str(), o.trace_id.c_str(), o.error.c_str());
        }
      }
      std::printf("simulated %zu pairs (%zu stalled) into %s\n", outcomes.size(), stalled, run.out.c_str());
      return stalled > 0 ? static_cast<int>(ErrorKind::kStall) : 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kIo);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kValidation);
  }
  return 0;
}
