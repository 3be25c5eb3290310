#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "starstream/errors.hpp"
#include "starstream/predictor.hpp"

using namespace starstream;
namespace fs = std::filesystem;

namespace {

PredictionRequest request(const std::vector<double>& throughputs, std::size_t n = 3) {
  PredictionRequest req;
  req.trace_id = "r";
  req.n = n;
  for (std::size_t i = 0; i < throughputs.size(); ++i) {
    NetworkSample s;
    s.timestamp = static_cast<std::int64_t>(i);
    s.throughput = throughputs[i];
    req.lookback.push_back(s);
  }
  return req;
}

std::string fake(const std::string& mode) { return std::string(FAKE_PREDICTOR) + " " + mode; }

fs::path scratch_file(const std::string& name) {
  return fs::temp_directory_path() / ("starstream_pred_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST_CASE("harmonic and moving averages over the last window") {
  CHECK(predict_hm(request({2, 4, 4})).throughputs == std::vector<double>{3, 3, 3});
  CHECK(predict_ma(request({2, 4, 6})).throughputs == std::vector<double>{4, 4, 4});
  CHECK(predict_ma(request({5})).throughputs == std::vector<double>{5, 5, 5});
  CHECK(predict_ma(request({100, 1, 1, 1, 1, 1})).throughputs[0] == doctest::Approx(1.0));
  CHECK(predict_hm(request({0, 0})).throughputs[0] == doctest::Approx(kHarmonicFloor));
  CHECK(predict_hm(request({2, 4, 4}), 1).throughputs[0] == 4.0);
  CHECK_THROWS_AS(predict_hm(request({})), ValidationError);
}

TEST_CASE("baseline shifts compare against the last observation") {
  const std::vector<double> a{8, 8, 4};
  CHECK(derive_shifts_from_throughput(a, 5, 2.5) == std::vector<std::uint8_t>{1, 0, 1});
  const std::vector<double> b{7.4};
  CHECK(derive_shifts_from_throughput(b, 5, 2.5) == std::vector<std::uint8_t>{0});
  CHECK(predict_ma(request({9, 9, 9, 9, 1})).shifts == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("property: harmonic mean never exceeds the arithmetic mean") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng() % 10);
    for (auto& x : v) x = u(rng);
    const auto req = request(v, 1 + rng() % 15);
    const double hm = predict_hm(req).throughputs[0];
    const double ma = predict_ma(req).throughputs[0];
    CHECK(hm <= ma + 1e-9);
    CHECK(hm >= kHarmonicFloor - 1e-12);
    CHECK(predict_hm(req).throughputs.size() == req.n);
  }
}

TEST_CASE("request validation") {
  auto req = request({1, 2});
  CHECK_NOTHROW(validate(req));
  req.p = 0;
  CHECK_THROWS_AS(validate(req), ValidationError);
  req = request({1, 2});
  req.m = 1;
  req.p = 1;
  CHECK_THROWS_AS(validate(req), ValidationError);
  req = request({1, 2}, 0);
  CHECK_THROWS_AS(validate(req), ValidationError);
  CHECK(request({1, 2, 3}).decision_time() == 3);
}

TEST_CASE("evaluation metrics") {
  SUBCASE("perfect prediction") {
    const std::vector<double> t{1, 5, 2, 8};
    const std::vector<std::uint8_t> s{0, 1, 1, 1};
    const auto m = eval_predictor(t, t, s, s);
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.mape == 0.0);
    CHECK(m.r2 == 1.0);
    CHECK(m.shift_accuracy == 1.0);
    CHECK(m.shift_f1 == 1.0);
  }
  SUBCASE("predicting the mean scores zero R squared") {
    const std::vector<double> truth{2, 4, 6}, mean{4, 4, 4};
    const std::vector<std::uint8_t> none{0, 0, 0};
    CHECK(eval_predictor(mean, truth, none, none).r2 == doctest::Approx(0.0));
  }
  SUBCASE("constant truth leaves R squared undefined") {
    const std::vector<double> truth{3, 3}, pred{2, 4};
    const std::vector<std::uint8_t> none{0, 0};
    CHECK(std::isnan(eval_predictor(pred, truth, none, none).r2));
  }
  SUBCASE("shift scores") {
    const std::vector<double> x{1, 1, 1};
    const std::vector<std::uint8_t> pred{0, 1, 0}, truth{0, 1, 1};
    const auto m = eval_predictor(x, x, pred, truth);
    CHECK(m.shift_accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(m.shift_f1 == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("MAPE floors tiny denominators") {
    const std::vector<double> truth{0.0}, pred{0.05};
    const std::vector<std::uint8_t> none{0};
    CHECK(eval_predictor(pred, truth, none, none).mape == doctest::Approx(50.0));
  }
  const std::vector<double> a{1, 2}, b{1};
  const std::vector<std::uint8_t> s{0};
  CHECK_THROWS_AS(eval_predictor(a, b, s, s), ValidationError);
}

TEST_CASE("sliding evaluation pools every window") {
  const std::pair<std::size_t, double> seg[] = {{40, 6.0}, {40, 2.0}};
  const auto trace = make_step_trace("step", seg);
  HarmonicMeanPredictor hm;
  const auto m = evaluate_on_traces(hm, std::span(&trace, 1), 10, 5, 5);
  CHECK(m.count == (80 - 10 - 5 + 1) * 5);
  CHECK(m.mae > 0.0);
  CHECK_THROWS_AS(evaluate_on_traces(hm, std::span(&trace, 1), 79, 5, 5), ValidationError);
}

TEST_CASE("wire protocol") {
  auto req = request({4, 5}, 2);
  req.lookback[1].shift = 1;
  const auto line = encode_request(req);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("\"samples\"") != std::string::npos);
  CHECK(line.find("\"n\":2") != std::string::npos);

  const PredictionResult r{{4.5, 5.5}, {0, 1}, std::vector<double>{0.1, 0.9}};
  CHECK(decode_response(encode_response(r), 2) == r);
  CHECK(decode_response(R"({"throughputs":[1,2],"shifts":[false,true]})", 2).shifts ==
        std::vector<std::uint8_t>{0, 1});
  CHECK_THROWS_AS(decode_response(encode_response(r), 3), ProtocolError);
  CHECK_THROWS_AS(decode_response(R"({"error":"boom"})", 2), ProtocolError);
  CHECK_THROWS_AS(decode_response("nope", 2), ProtocolError);
  CHECK_THROWS_AS(decode_response(R"({"throughputs":[1,-2],"shifts":[0,0]})", 2), ProtocolError);
  CHECK_THROWS_AS(decode_response(R"({"throughputs":[1,2],"shifts":[0,2]})", 2), ProtocolError);
  CHECK_THROWS_AS(decode_response(R"({"throughputs":[1,2],"shifts":[0,0],"probabilities":[0,1.5]})", 2),
                  ProtocolError);
}

TEST_CASE("prediction files replay by trace and decision time") {
  const auto path = scratch_file("file.jsonl");
  {
    std::ofstream out(path);
    out << encode_response({{7, 7, 7}, {0, 0, 0}, std::nullopt}, 2, "r") << '\n';
    out << encode_response({{1, 1}, {0, 0}, std::nullopt}, 3) << '\n';
  }
  PredictionFile file(path);
  CHECK(file.covers("r", 2));
  CHECK(file.covers("other", 3));
  CHECK_FALSE(file.covers("other", 2));
  CHECK(file.predict(request({1, 2}, 2)).throughputs == std::vector<double>{7, 7});
  CHECK_THROWS_AS(file.predict(request({1, 2, 3}, 3)), ProtocolError);
  CHECK_THROWS_AS(file.predict(request({1, 2, 3, 4}, 1)), ProtocolError);
  {
    std::ofstream out(path);
    out << R"({"throughputs":[1],"shifts":[0]})" << '\n';
  }
  CHECK_THROWS_AS(PredictionFile{path}, ParseError);
  fs::remove(path);
  CHECK_THROWS_AS(PredictionFile{path}, IoError);
}

TEST_CASE("pipe predictor talks to a child process") {
  SUBCASE("valid answers over several requests") {
    PipePredictor p(fake("valid"));
    CHECK(p.predict(request({3, 6}, 4)).throughputs == std::vector<double>{6, 6, 6, 6});
    CHECK(p.predict(request({2}, 1)).throughputs == std::vector<double>{2});
  }
  SUBCASE("short answers are protocol errors") {
    PipePredictor p(fake("short"));
    CHECK_THROWS_AS(p.predict(request({3, 6}, 4)), ProtocolError);
  }
  SUBCASE("error objects are protocol errors") {
    PipePredictor p(fake("error"));
    CHECK_THROWS_AS(p.predict(request({3}, 2)), ProtocolError);
  }
  SUBCASE("garbage is a protocol error") {
    PipePredictor p(fake("garbage"));
    CHECK_THROWS_AS(p.predict(request({3}, 2)), ProtocolError);
  }
  SUBCASE("a silent child times out") {
    PipePredictor p(fake("sleep"), std::chrono::milliseconds{200});
    const auto begin = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(p.predict(request({3}, 2)), PredictorTimeout);
    CHECK(std::chrono::steady_clock::now() - begin < std::chrono::seconds{5});
  }
  SUBCASE("a crashed child is restarted") {
    PipePredictor p(fake("crash"));
    CHECK_THROWS_AS(p.predict(request({3}, 2)), ProtocolError);
    CHECK_THROWS_AS(p.predict(request({3}, 2)), ProtocolError);
  }
  SUBCASE("a missing command fails cleanly") {
    PipePredictor p("/nonexistent/predictor");
    CHECK_THROWS_AS(p.predict(request({3}, 2)), ProtocolError);
  }
}

TEST_CASE("predictor specs") {
  CHECK(make_predictor("hm")->name() == "hm");
  CHECK(make_predictor("ma:3")->name() == "ma");
  CHECK(make_predictor("pipe:" + fake("valid"))->name() == "pipe:" + fake("valid"));
  CHECK_THROWS_AS(make_predictor("hm:0"), UsageError);
  CHECK_THROWS_AS(make_predictor("lstm"), UsageError);
  CHECK_THROWS_AS(make_predictor("file:"), UsageError);
}

TEST_CASE("a recorded prediction file replays the truth") {
  const fs::path dir = FIXTURE_DIR;
  const auto trace = load_network_trace(dir / "square_wave.csv", kDefaultShiftDelta);
  PredictionFile file(dir / "square_wave_predictions.jsonl");
  const auto m = evaluate_on_traces(file, std::span(&trace, 1));
  CHECK(m.count == (200 - 60 - 15 + 1) * 15);
  CHECK(m.mae == 0.0);
  CHECK(m.shift_f1 == 1.0);
  HarmonicMeanPredictor hm;
  CHECK(evaluate_on_traces(hm, std::span(&trace, 1)).shift_f1 < 0.5);
}
