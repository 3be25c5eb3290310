#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "starstream/errors.hpp"
#include "starstream/experiment.hpp"

using namespace starstream;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(STARSTREAM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

/// One generated corpus shared by every test in this binary.
struct Corpus {
  fs::path root;
  Corpus() {
    root = fs::temp_directory_path() / ("starstream_exp_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const int rc = cli("gen-traces --seed 1 --count 10 --duration 300 --videos 4 --video-duration 60 --out " +
                       (root / "gen").string());
    REQUIRE(rc == 0);
  }
  ~Corpus() { fs::remove_all(root); }
  fs::path network() const { return root / "gen" / "network"; }
  fs::path video(int i) const { return root / "gen" / "video" / ("video_0" + std::to_string(i)); }
  std::string first_traces(int n) const {
    std::string out;
    for (int i = 0; i < n; ++i) out += " " + (network() / ("net_00" + std::to_string(i) + ".csv")).string();
    return out;
  }
};

const Corpus& corpus() {
  static const Corpus c;
  return c;
}

std::string sim_args(const fs::path& out, const std::string& extra) {
  const auto& c = corpus();
  return "simulate --traces" + c.first_traces(2) + " --videos " + c.video(0).string() +
         " --content-duration 20 --out " + out.string() + " " + extra;
}

}  // namespace

TEST_CASE("gen-traces writes a reproducible corpus") {
  const auto& c = corpus();
  CHECK(count_files(c.network(), ".csv") == 10);
  CHECK(fs::exists(c.root / "gen" / "manifest.json"));
  const auto manifest = json::parse(slurp(c.root / "gen" / "manifest.json"));
  CHECK(manifest.at("seed") == 1);
  CHECK(manifest.at("network_traces").size() == 10);
  CHECK(manifest.at("video_traces").size() == 4);

  const auto again = c.root / "again";
  REQUIRE(cli("gen-traces --seed 1 --count 10 --duration 300 --videos 4 --video-duration 60 --out " +
              again.string()) == 0);
  for (const auto& e : fs::recursive_directory_iterator(c.root / "gen")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), c.root / "gen");
    CAPTURE(rel.string());
    CHECK(slurp(e.path()) == slurp(again / rel));
  }
  fs::remove_all(again);

  CHECK(cli("gen-traces --count 2 --out " + (c.root / "noseed").string()) == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("") == 2);
}

TEST_CASE("eval-predictor reports one row per predictor") {
  const auto& c = corpus();
  const auto out = c.root / "eval";
  REQUIRE(cli("eval-predictor --traces " + c.network().string() + " --predictor hm ma oracle --out " +
              out.string()) == 0);
  const auto rows = json::parse(slurp(out / "predictors.json"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].at("predictor") == "hm");
  CHECK(rows[0].at("mape").get<double>() >= 0.0);
  CHECK(rows[1].at("predictor") == "ma");
  CHECK(rows[2].at("mae").get<double>() == 0.0);
  CHECK(rows[2].at("shift_f1").get<double>() == 1.0);
  std::istringstream csv(slurp(out / "predictors.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == 4);

  SUBCASE("a prediction file that stops early is a coverage error") {
    const auto file = c.root / "short.jsonl";
    {
      std::ofstream f(file);
      for (int t = 60; t < 70; ++t) {
        f << encode_response({std::vector<double>(15, 5.0), std::vector<std::uint8_t>(15, 0), std::nullopt}, t)
          << '\n';
      }
    }
    CHECK(cli("eval-predictor --traces" + c.first_traces(1) + " --predictor file:" + file.string() +
              " --out " + out.string()) == 4);
    const auto bad = json::parse(slurp(out / "predictors.json"));
    REQUIRE(bad.size() == 1);
    CHECK(bad[0].at("error").get<std::string>().find("no entry") != std::string::npos);
  }
  SUBCASE("a broken pipe predictor is a protocol error") {
    CHECK(cli("eval-predictor --traces" + c.first_traces(1) + " --predictor 'pipe:" + FAKE_PREDICTOR +
              " short' --out " + out.string()) == 4);
  }
  CHECK(cli("eval-predictor --traces " + (c.root / "missing").string()) != 0);
}

TEST_CASE("simulate runs every controller") {
  const auto& c = corpus();
  for (const std::string controller : {"fixed", "adarate", "mpc", "starstream"}) {
    CAPTURE(controller);
    const auto out = c.root / ("sim_" + controller);
    REQUIRE(cli(sim_args(out, "--controller " + controller)) == 0);
    const auto summary = json::parse(slurp(out / "summary.json"));
    CHECK(summary.at("completed") == 2);
    CHECK(summary.at("stalled") == 0);
    CHECK(count_files(out / "pairs", ".json") == 2);
    CHECK(count_files(out / "pairs", ".csv") == 4);
    for (const auto& m : load_summary(out)) {
      CHECK(m.normalized_tp > 0.0);
      CHECK(m.normalized_tp <= 1.0 + 1e-12);
      CHECK(m.accuracy > 0.0);
    }
  }
  SUBCASE("ablations") {
    CHECK(cli(sim_args(c.root / "sim_v1", "--ablation v1")) == 0);
    CHECK(cli(sim_args(c.root / "sim_v2", "--ablation v2 --v2-predictor ma")) == 0);
    CHECK(cli(sim_args(c.root / "sim_v2_missing", "--ablation v2")) == 2);
    CHECK(cli(sim_args(c.root / "sim_bad", "--controller pensieve")) == 2);
  }
  SUBCASE("analytic fidelity") {
    CHECK(cli(sim_args(c.root / "sim_analytic", "--fidelity analytic")) == 0);
  }
}

TEST_CASE("simulate reads recorded predictions") {
  const auto& c = corpus();
  const fs::path fixtures = FIXTURE_DIR;
  const auto out = c.root / "sim_file";
  REQUIRE(cli("simulate --traces " + (fixtures / "square_wave.csv").string() + " --videos " + c.video(0).string() +
              " --predictor file:" + (fixtures / "square_wave_predictions.jsonl").string() +
              " --content-duration 30 --out " + out.string()) == 0);
  std::istringstream log(slurp(out / "pairs" / "video_00__square_wave.decisions.csv"));
  std::string line;
  std::getline(log, line);
  std::size_t rows = 0;
  while (std::getline(log, line)) {
    ++rows;
    CHECK(line.substr(line.size() - 4) == ",0,0");
  }
  CHECK(rows > 1);
}

TEST_CASE("simulate covers every video and trace pair") {
  const auto& c = corpus();
  const auto out = c.root / "grid";
  std::string videos;
  for (int i = 0; i < 4; ++i) videos += " " + c.video(i).string();
  REQUIRE(cli("simulate --traces" + c.first_traces(5) + " --videos" + videos +
              " --content-duration 10 --jobs 4 --controller mpc --out " + out.string()) == 0);
  CHECK(count_files(out / "pairs", ".json") == 20);
  const auto summary = json::parse(slurp(out / "summary.json"));
  CHECK(summary.at("pairs").size() == 20);

  SUBCASE("results do not depend on the worker count") {
    const auto serial = c.root / "grid_serial";
    REQUIRE(cli("simulate --traces" + c.first_traces(5) + " --videos" + videos +
                " --content-duration 10 --jobs 1 --controller mpc --out " + serial.string()) == 0);
    CHECK(slurp(serial / "summary.json") == slurp(out / "summary.json"));
  }
}

TEST_CASE("simulate reports stalls and bad inputs") {
  const auto& c = corpus();
  const auto dead = c.root / "dead.csv";
  {
    std::ofstream f(dead);
    f << "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms\n";
    for (int t = 0; t < 300; ++t) f << t << ",2024-01-01T00:00:00Z,0,0,0,0,0\n";
  }
  CHECK(cli("simulate --traces " + dead.string() + " --videos " + c.video(0).string() +
            " --content-duration 10 --controller fixed --out " + (c.root / "stall").string()) == 5);
  CHECK(json::parse(slurp(c.root / "stall" / "summary.json")).at("stalled") == 1);
  CHECK(cli("simulate --traces " + (c.root / "nope.csv").string() + " --videos " + c.video(0).string() +
            " --out " + (c.root / "nope").string()) == 1);
}

TEST_CASE("compare writes CDFs and paired deltas") {
  const auto& c = corpus();
  const auto a = c.root / "cmp_a", b = c.root / "cmp_b";
  REQUIRE(cli(sim_args(a, "--controller mpc")) == 0);
  REQUIRE(cli(sim_args(b, "--controller starstream")) == 0);
  const auto out = c.root / "cmp_out";
  REQUIRE(cli("compare " + a.string() + " " + b.string() + " --out " + out.string()) == 0);
  for (const char* m : {"accuracy", "normalized_tp", "ol_delay", "response_delay"}) {
    CHECK(fs::exists(out / (std::string("cdf_") + m + ".csv")));
  }
  CHECK(fs::exists(out / "deltas.csv"));

  SUBCASE("identical sets have zero deltas") {
    const auto same = c.root / "cmp_same";
    REQUIRE(cli("compare " + a.string() + " " + a.string() + " --out " + same.string()) == 0);
    std::istringstream rows(slurp(same / "deltas.csv"));
    std::string line;
    std::getline(rows, line);
    std::size_t n = 0;
    while (std::getline(rows, line)) {
      ++n;
      std::istringstream cells(line);
      std::string cell;
      for (int i = 0; i < 3; ++i) std::getline(cells, cell, ',');
      while (std::getline(cells, cell, ',')) CHECK(std::stod(cell) == 0.0);
    }
    CHECK(n == 2);
  }
  SUBCASE("mismatched pair sets are rejected") {
    const auto other = c.root / "cmp_other";
    REQUIRE(cli("simulate --traces" + c.first_traces(1) + " --videos " + c.video(1).string() +
                " --content-duration 10 --out " + other.string()) == 0);
    CHECK(cli("compare " + a.string() + " " + other.string() + " --out " + (c.root / "cmp_x").string()) == 3);
    CHECK_THROWS_AS(compare_results({a, other}, c.root / "cmp_y"), ValidationError);
  }
  CHECK(cli("compare " + a.string()) != 0);
}

TEST_CASE("run configs load from JSON with environment overrides") {
  const auto& c = corpus();
  const auto path = c.root / "run.json";
  {
    std::ofstream f(path);
    f << R"({"network_traces": ["gen/network"], "video_traces": ["gen/video/video_00"],
            "controller": "mpc", "beta": 0.1, "horizon": 4, "seed": 9, "content_duration": 10})";
  }
  auto cfg = load_run_config(path);
  CHECK(cfg.controller == "mpc");
  CHECK(cfg.params.beta == 0.1);
  CHECK(cfg.params.horizon == 4);
  CHECK(cfg.seed == 9u);
  CHECK(cfg.network_traces.front() == c.root / "gen/network");
  CHECK_NOTHROW(validate(cfg));
  CHECK(expand_trace_paths(cfg.network_traces).size() == 10);

  ::setenv("STARSTREAM_BETA", "0.3", 1);
  ::setenv("STARSTREAM_CONTROLLER", "adarate", 1);
  ::setenv("STARSTREAM_ABLATION", "v1", 1);
  apply_env_overrides(cfg);
  ::unsetenv("STARSTREAM_BETA");
  ::unsetenv("STARSTREAM_CONTROLLER");
  ::unsetenv("STARSTREAM_ABLATION");
  CHECK(cfg.params.beta == 0.3);
  CHECK(cfg.controller == "adarate");
  CHECK(effective_params(cfg).freeze_gamma);
  CHECK(effective_predictor(cfg) == "hm");
  cfg.ablation = "v2";
  cfg.v2_predictor = "ma";
  CHECK(effective_predictor(cfg) == "ma");

  ::setenv("STARSTREAM_BETA", "lots", 1);
  CHECK_THROWS_AS(apply_env_overrides(cfg), ValidationError);
  ::unsetenv("STARSTREAM_BETA");

  {
    std::ofstream f(c.root / "broken.json");
    f << "{";
  }
  CHECK_THROWS_AS(load_run_config(c.root / "broken.json"), ParseError);
  CHECK_THROWS_AS(load_run_config(c.root / "absent.json"), IoError);

  const auto out = c.root / "from_config";
  CHECK(cli("simulate --config " + path.string() + " --out " + out.string()) == 0);
  CHECK(json::parse(slurp(out / "summary.json")).at("seed") == 9);
}
