#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "starstream/errors.hpp"
#include "starstream/trace_model.hpp"
#include "support.hpp"

using namespace starstream;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("starstream_tm_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_csv(const fs::path& dir, const std::vector<double>& throughputs) {
  const auto path = dir / "trace.csv";
  std::ofstream out(path);
  out << "# trace_id=t1\n# location=test\n";
  out << "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms\n";
  for (std::size_t i = 0; i < throughputs.size(); ++i) {
    const WallClock wall{std::chrono::seconds{1704067200 + static_cast<long>(i)}};
    out << i << ',' << format_wall_clock(wall) << ',' << throughputs[i] << ",0,65536,40,5\n";
  }
  return path;
}

std::vector<std::uint8_t> shifts(std::vector<double> v, double delta = 2.5) { return annotate_shifts(v, delta); }

}  // namespace

TEST_CASE("shift annotation uses a strict absolute threshold") {
  CHECK(shifts({5, 8}) == std::vector<std::uint8_t>{0, 1});
  CHECK(shifts({8, 5}) == std::vector<std::uint8_t>{0, 1});
  CHECK(shifts({5, 7.5}) == std::vector<std::uint8_t>{0, 0});
  CHECK(shifts({5, 8, 7}) == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(shifts({}).empty());
  CHECK_THROWS_AS(shifts({1, 2}, 0.0), ValidationError);
}

TEST_CASE("network trace files load with recomputed shifts") {
  const auto dir = scratch("load");
  SUBCASE("three samples") {
    const auto t = load_network_trace(write_csv(dir, {5.0, 8.0, 7.0}), 2.5);
    CHECK(t.trace_id == "t1");
    CHECK(t.location_tag == "test");
    REQUIRE(t.samples.size() == 3);
    CHECK(t.samples[1].shift == 1);
    CHECK(t.samples[2].shift == 0);
    CHECK(t.samples[0].cwnd == 65536);
  }
  SUBCASE("flat pair") {
    const auto t = load_network_trace(write_csv(dir, {4.0, 4.0}), 2.5);
    CHECK(t.samples[0].shift == 0);
    CHECK(t.samples[1].shift == 0);
  }
  SUBCASE("ten minutes") {
    std::vector<double> v(600, 6.0);
    CHECK(load_network_trace(write_csv(dir, v), 2.5).duration() == 600);
  }
  SUBCASE("a single sample is rejected") {
    CHECK_THROWS_AS(load_network_trace(write_csv(dir, {4.0}), 2.5), ValidationError);
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed trace rows name the line") {
  const auto dir = scratch("bad");
  const auto path = dir / "bad.csv";
  {
    std::ofstream out(path);
    out << "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms\n";
    out << "0,2024-01-01T00:00:00Z,5,0,1,1,1\n";
    out << "1,2024-01-01T00:00:01Z,abc,0,1,1,1\n";
  }
  try {
    load_network_trace(path, 2.5);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(load_network_trace(dir / "missing.csv", 2.5), IoError);
  fs::remove_all(dir);
}

TEST_CASE("network traces round-trip through CSV") {
  const auto dir = scratch("roundtrip");
  SyntheticNetworkParams p;
  p.handover_step = 1.0;
  auto trace = gen_synthetic_network_trace(9, 120, p);
  trace.trace_id = "rt";
  write_network_trace(trace, dir / "rt.csv");
  const auto back = load_network_trace(dir / "rt.csv", trace.delta);
  CHECK(back == trace);
  fs::remove_all(dir);
}

TEST_CASE("wall clock formatting is reversible") {
  const WallClock t{std::chrono::seconds{1704067200 + 3600 + 62}};
  CHECK(format_wall_clock(t) == "2024-01-01T01:01:02Z");
  CHECK(parse_wall_clock("2024-01-01T01:01:02Z") == t);
  CHECK_FALSE(parse_wall_clock("yesterday").has_value());
}

TEST_CASE("synthetic network traces") {
  SyntheticNetworkParams p;
  SUBCASE("deterministic per seed") {
    CHECK(gen_synthetic_network_trace(1, 300, p) == gen_synthetic_network_trace(1, 300, p));
    CHECK_FALSE(gen_synthetic_network_trace(1, 300, p) == gen_synthetic_network_trace(2, 300, p));
  }
  SUBCASE("bounded by good + 5 sigma") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (const auto& s : gen_synthetic_network_trace(seed, 600, p).samples) {
        CHECK(s.throughput >= 0.0);
        CHECK(s.throughput <= p.good_mean + 5.0 * p.noise_sigma);
      }
    }
  }
  SUBCASE("square wave shifts fire on period boundaries") {
    p.square_wave_period = 15;
    const auto t = gen_synthetic_network_trace(3, 300, p);
    for (std::size_t i = 0; i < t.samples.size(); ++i) {
      CHECK(t.samples[i].shift == (i > 0 && i % 15 == 0 ? 1 : 0));
    }
  }
}

TEST_CASE("step traces hold each level for its segment") {
  const std::vector<std::pair<std::size_t, double>> seg{{3, 9.0}, {2, 2.5}};
  const auto t = make_step_trace("s", seg);
  REQUIRE(t.samples.size() == 5);
  CHECK(t.samples[2].throughput == 9.0);
  CHECK(t.samples[3].throughput == 2.5);
  CHECK(t.samples[3].shift == 1);
}

TEST_CASE("synthetic video traces obey the generator constraints") {
  const auto set = gen_synthetic_video_trace(4, 60, 15, CandidateSpace{});
  CHECK(set.duration() == 60);
  const Resolution hd{1280, 720};
  SUBCASE("CBR sizes within 10 percent") {
    for (const auto& [key, series] : set.series()) {
      for (const auto& r : series) {
        const double nominal = key.config.bitrate * 1e6 * key.gop_length;
        CHECK(r.total_bits() >= 0.9 * nominal);
        CHECK(r.total_bits() <= 1.1 * nominal);
      }
    }
    const auto* r = set.find({3.0, 15, hd}, 2, 10);
    REQUIRE(r != nullptr);
    CHECK(r->total_bits() >= 5.4e6);
    CHECK(r->total_bits() <= 6.6e6);
    CHECK(r->frame_count() == 30);
  }
  SUBCASE("accuracy monotone in bitrate at a fixed GOP") {
    for (int start = 0; start < 60; start += 2) {
      CHECK(set.find({9.0, 15, hd}, 2, start)->accuracy >= set.find({1.5, 15, hd}, 2, start)->accuracy);
    }
  }
  SUBCASE("accuracy monotone in GOP length at a fixed bitrate") {
    for (int start = 0; start < 60; start += 5) {
      CHECK(set.find({3.0, 15, hd}, 5, start)->accuracy >= set.find({3.0, 15, hd}, 1, start)->accuracy);
    }
  }
  SUBCASE("probe detections cover every native frame") {
    CHECK(set.probe_detections().size() == 60u * 15u);
  }
  SUBCASE("off-grid GOP lookups reuse the covering unit") {
    const auto unit = set.gop({3.0, 15, hd}, 2, 3);
    CHECK(unit.gop_start == 3);
    CHECK(unit.frame_sizes == set.find({3.0, 15, hd}, 2, 2)->frame_sizes);
    CHECK_THROWS_AS(set.gop({3.0, 15, hd}, 2, 59), ValidationError);
  }
  CHECK_THROWS_AS(gen_synthetic_video_trace(4, 7, 15, CandidateSpace{}), ValidationError);
}

TEST_CASE("video trace sets must tile the content") {
  const auto base = gen_synthetic_video_trace(5, 60, 15, starstream::testing::small_space());
  auto records = starstream::testing::all_records(base);
  CHECK_NOTHROW(starstream::testing::rebuild(base, records));
  SUBCASE("480 s tiling") {
    CHECK(gen_synthetic_video_trace(5, 480, 15, starstream::testing::small_space()).duration() == 480);
  }
  SUBCASE("missing unit") {
    std::erase_if(records, [](const VideoUnitRecord& r) { return r.gop_length == 2 && r.gop_start == 10; });
    CHECK_THROWS_AS(starstream::testing::rebuild(base, records), AlignmentError);
  }
  SUBCASE("overlapping units") {
    for (auto& r : records) {
      if (r.gop_length == 2 && r.gop_start == 12 && r.config.bitrate == 3.0) r.gop_start = 11;
    }
    CHECK_THROWS_AS(starstream::testing::rebuild(base, records), AlignmentError);
  }
}

TEST_CASE("video trace sets round-trip through a directory") {
  const auto dir = scratch("video");
  const auto set = gen_synthetic_video_trace(6, 60, 15, starstream::testing::small_space(), {}, "clip");
  write_video_trace_set(set, dir / "clip");
  const auto back = load_video_trace_set(dir / "clip");
  CHECK(back == set);
  CHECK(fs::exists(dir / "clip" / series_file_name({1.5, 15, {1280, 720}}, 3)));
  CHECK_THROWS_AS(load_video_trace_set(dir / "nothing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset split sizes follow the floor rule") {
  const auto ids = [](std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("trace_" + std::to_string(i));
    return v;
  };
  const auto small = split_dataset(ids(10), 1);
  CHECK(small.train.size() == 7);
  CHECK(small.validation.size() == 1);
  CHECK(small.test.size() == 2);
  const auto big = split_dataset(ids(504), 1);
  CHECK(big.train.size() == 352);
  CHECK(big.validation.size() == 50);
  CHECK(big.test.size() == 102);
  CHECK(split_dataset(ids(504), 1) == big);
  std::set<std::string> all(big.train.begin(), big.train.end());
  all.insert(big.validation.begin(), big.validation.end());
  all.insert(big.test.begin(), big.test.end());
  CHECK(all.size() == 504);
}
