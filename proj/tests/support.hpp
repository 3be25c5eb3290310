// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "starstream/controller.hpp"
#include "starstream/pipeline_sim.hpp"
#include "starstream/profiler.hpp"
#include "starstream/trace_model.hpp"

namespace starstream::testing {

/// Six bitrates, one frame rate and resolution, GOP lengths 1..5.
inline CandidateSpace small_space(int fps = 15) {
  CandidateSpace s;
  s.frame_rates = {fps};
  s.resolutions = {{1280, 720}};
  return s;
}

inline VideoTraceSet rebuild(const VideoTraceSet& set, std::vector<VideoUnitRecord> records) {
  return VideoTraceSet(set.video_id(), set.native_frame_rate(), set.space(), std::move(records),
                       set.probe_detections());
}

inline std::vector<VideoUnitRecord> all_records(const VideoTraceSet& set) {
  std::vector<VideoUnitRecord> out;
  for (const auto& [key, series] : set.series()) out.insert(out.end(), series.begin(), series.end());
  return out;
}

/// Synthetic video with decode and inference delays zeroed.
inline VideoTraceSet transmit_only_video(std::uint64_t seed, int duration, const CandidateSpace& space) {
  const auto set = gen_synthetic_video_trace(seed, duration, 15, space);
  auto records = all_records(set);
  for (auto& r : records) {
    std::fill(r.decode_delays.begin(), r.decode_delays.end(), 0.0);
    std::fill(r.inference_delays.begin(), r.inference_delays.end(), 0.0);
  }
  return rebuild(set, std::move(records));
}

inline NetworkTrace constant_trace(double mbps, std::size_t seconds, std::string id = "constant") {
  const std::pair<std::size_t, double> seg{seconds, mbps};
  return make_step_trace(std::move(id), std::span(&seg, 1));
}

struct PreparedPolicyVideo {
  VideoTraceSet set;
  std::shared_ptr<const ProfileTable> profile;
  StreamSettings stream;
};

inline PreparedPolicyVideo prepare(VideoTraceSet set, StreamSettings stream = {}) {
  PreparedPolicyVideo v;
  v.profile = std::make_shared<ProfileTable>(build_profile(set));
  v.stream = stream;
  v.set = std::move(set);
  return v;
}

/// Random planner instance: 6 bitrates, models for GOP lengths 1..5, a horizon
/// of `horizon` GOPs with random lengths and predicted throughputs.
struct RandomInstance {
  PlannerVideo video;
  PlannerInput input;

  PlannerInput planner(double time_cell = kDefaultTimeCell) const {
    PlannerInput in = input;
    in.video = &video;
    in.time_cell = time_cell;
    return in;
  }
};

inline RandomInstance random_instance(std::uint64_t seed, std::size_t horizon = 3, int fps = 15) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> bitrates{1.5, 3.0, 4.5, 6.0, 7.5, 9.0};
  RandomInstance inst{PlannerVideo(bitrates, fps), {}};
  for (int L = 1; L <= 5; ++L) {
    std::vector<double> acc;
    for (std::size_t i = 0; i < bitrates.size(); ++i) acc.push_back(0.3 + 0.65 * u(rng));
    std::sort(acc.begin(), acc.end());
    for (std::size_t i = 0; i < bitrates.size(); ++i) {
      const auto frames = static_cast<std::size_t>(L * fps);
      UnitModel m;
      double weight_sum = 0.0;
      std::vector<double> weights;
      for (std::size_t j = 0; j < frames; ++j) {
        weights.push_back(j % static_cast<std::size_t>(fps) == 0 ? 5.0 : 0.9 + 0.2 * u(rng));
        weight_sum += weights.back();
      }
      const double total = bitrates[i] * 1e6 * L * (0.95 + 0.1 * u(rng));
      for (std::size_t j = 0; j < frames; ++j) {
        m.frame_bits.push_back(total * weights[j] / weight_sum);
        m.encode_delays.push_back(0.002 + 0.02 * u(rng));
      }
      m.accuracy = std::min(1.0, acc[i] + 0.01 * (L - 1));
      inst.video.set(i, L, std::move(m));
    }
  }
  auto& in = inst.input;
  in.start = {5.0 * u(rng), 4.0 * u(rng)};
  in.content_start = std::floor(in.start.t_prev + 2.0 * u(rng));
  for (std::size_t k = 0; k < horizon; ++k) {
    in.gops.push_back({1 + static_cast<int>(rng() % 5), 1.0 + 11.0 * u(rng)});
  }
  in.gamma = 1.0 / 3.0 + (3.0 - 1.0 / 3.0) * u(rng);
  in.alpha = 1.0;
  in.beta = 0.01 + 0.5 * u(rng);
  return inst;
}

}  // namespace starstream::testing
