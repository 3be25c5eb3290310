#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "starstream/errors.hpp"
#include "starstream/profiler.hpp"

namespace starstream {

using nlohmann::json;

const ProfileEntry& ProfileTable::at(const EncodingConfig& config, int gop_length) const {
  const auto it = entries.find(VideoTraceSet::Key{config, gop_length});
  if (it == entries.end()) {
    throw ValidationError("profile has no entry for " + to_string(config) +
                          " gop_length=" + std::to_string(gop_length));
  }
  return it->second;
}

ProfileTable build_profile(const VideoTraceSet& set) {
  ProfileTable table;
  table.video_id = set.video_id();
  table.space = set.space();

  std::vector<std::string> missing;
  double record_u_sum = 0.0;
  std::size_t record_u_count = 0;
  for (const auto& config : set.space().configs()) {
    for (int gop : set.space().gop_lengths) {
      const auto label = to_string(config) + "_g" + std::to_string(gop);
      if (!set.has(config, gop) || set.duration() < kProfileSpanSeconds) {
        missing.push_back(label);
        continue;
      }
      ProfileEntry e;
      double frames = 0.0, acc = 0.0, u = 0.0;
      std::size_t units = 0;
      for (int start = 0; start < kProfileSpanSeconds; start += gop) {
        const auto* r = set.find(config, gop, start);
        if (r == nullptr) break;
        for (std::size_t j = 0; j < r->frame_count(); ++j) {
          e.encode_delay += r->encode_delays[j];
          e.decode_delay += r->decode_delays[j];
          e.inference_delay += r->inference_delays[j];
          e.frame_size += r->frame_sizes[j];
        }
        frames += static_cast<double>(r->frame_count());
        acc += r->accuracy;
        u += r->uncertainty;
        ++units;
      }
      if (units == 0) {
        missing.push_back(label);
        continue;
      }
      e.encode_delay /= frames;
      e.decode_delay /= frames;
      e.inference_delay /= frames;
      e.frame_size /= frames;
      e.accuracy = acc / static_cast<double>(units);
      e.uncertainty = u / static_cast<double>(units);
      record_u_sum += u;
      record_u_count += units;
      table.entries[{config, gop}] = e;
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw ValidationError(set.video_id() + ": first " + std::to_string(kProfileSpanSeconds) +
                          " s not covered for:" + list);
  }
  const auto probe_frames =
      static_cast<std::size_t>(kProfileSpanSeconds) * static_cast<std::size_t>(set.native_frame_rate());
  if (set.probe_detections().size() >= probe_frames) {
    table.content_uncertainty =
        compute_uncertainty(std::span(set.probe_detections()).first(probe_frames));
  } else {
    table.content_uncertainty = record_u_count ? record_u_sum / static_cast<double>(record_u_count) : 0.0;
  }
  return table;
}

void write_profile(const ProfileTable& table, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& [key, e] : table.entries) {
    entries.push_back({{"bitrate", key.config.bitrate},
                       {"frame_rate", key.config.frame_rate},
                       {"width", key.config.resolution.width},
                       {"height", key.config.resolution.height},
                       {"gop_length", key.gop_length},
                       {"accuracy", e.accuracy},
                       {"encode_delay", e.encode_delay},
                       {"decode_delay", e.decode_delay},
                       {"inference_delay", e.inference_delay},
                       {"frame_size", e.frame_size},
                       {"uncertainty", e.uncertainty}});
  }
  json res = json::array();
  for (const auto& r : table.space.resolutions) res.push_back({r.width, r.height});
  const json doc{{"video_id", table.video_id},
                 {"content_uncertainty", table.content_uncertainty},
                 {"space",
                  {{"bitrates", table.space.bitrates},
                   {"frame_rates", table.space.frame_rates},
                   {"resolutions", res},
                   {"gop_lengths", table.space.gop_lengths}}},
                 {"entries", entries}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write profile " + path.string());
  out << doc.dump(2) << '\n';
}

ProfileTable load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile " + path.string());
  try {
    const json doc = json::parse(in);
    ProfileTable t;
    t.video_id = doc.at("video_id").get<std::string>();
    t.content_uncertainty = doc.at("content_uncertainty").get<double>();
    const auto& s = doc.at("space");
    t.space.bitrates = s.at("bitrates").get<std::vector<double>>();
    t.space.frame_rates = s.at("frame_rates").get<std::vector<int>>();
    t.space.resolutions.clear();
    for (const auto& r : s.at("resolutions")) t.space.resolutions.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
    t.space.gop_lengths = s.at("gop_lengths").get<std::vector<int>>();
    for (const auto& e : doc.at("entries")) {
      const EncodingConfig c{e.at("bitrate").get<double>(), e.at("frame_rate").get<int>(),
                             {e.at("width").get<int>(), e.at("height").get<int>()}};
      t.entries[{c, e.at("gop_length").get<int>()}] =
          ProfileEntry{e.at("accuracy").get<double>(),        e.at("encode_delay").get<double>(),
                       e.at("decode_delay").get<double>(),    e.at("inference_delay").get<double>(),
                       e.at("frame_size").get<double>(),      e.at("uncertainty").get<double>()};
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

StreamFormat prune_configs(const ProfileTable& table, std::span<const double> bitrates) {
  struct Candidate {
    StreamFormat format;
    int hits = 0;
    double mean_accuracy = 0.0;
    double mean_size = 0.0;
  };
  std::vector<double> rates(bitrates.begin(), bitrates.end());
  std::sort(rates.begin(), rates.end());
  if (rates.empty()) throw ValidationError("pruning needs at least one bitrate");

  const auto& space = table.space;
  std::vector<Candidate> candidates;
  for (int f : space.frame_rates)
    for (const auto& r : space.resolutions) candidates.push_back({{f, r}});

  const auto averaged = [&](const StreamFormat& fmt, double bitrate) {
    double acc = 0.0, size = 0.0;
    for (int gop : space.gop_lengths) {
      const auto& e = table.at({bitrate, fmt.frame_rate, fmt.resolution}, gop);
      acc += e.accuracy;
      size += e.frame_size;
    }
    const auto n = static_cast<double>(space.gop_lengths.size());
    return std::pair{acc / n, size / n};
  };

  for (auto& c : candidates) {
    for (double b : rates) {
      const auto [acc, size] = averaged(c.format, b);
      c.mean_accuracy += acc / static_cast<double>(rates.size());
      c.mean_size += size / static_cast<double>(rates.size());
    }
  }
  for (double b : rates) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      ranked.emplace_back(averaged(candidates[i].format, b).first, i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t k = 0; k < std::min<std::size_t>(3, ranked.size()); ++k) {
      ++candidates[ranked[k].second].hits;
    }
  }
  const auto best = std::min_element(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    if (x.hits != y.hits) return x.hits > y.hits;
    if (x.mean_accuracy != y.mean_accuracy) return x.mean_accuracy > y.mean_accuracy;
    if (x.mean_size != y.mean_size) return x.mean_size < y.mean_size;
    return x.format < y.format;
  });
  return best->format;
}

double compute_uncertainty(std::span<const FrameDetections> frames) {
  std::size_t total = 0, uncertain = 0;
  for (const auto& frame : frames) {
    for (const auto& d : frame) {
      ++total;
      uncertain += d.confidence < kUncertainConfidence;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(uncertain) / static_cast<double>(total);
}

double update_gamma(GammaState& state, double new_uncertainty, double profiled_uncertainty) {
  if (!(new_uncertainty >= 0.0 && new_uncertainty <= 1.0) ||
      !(profiled_uncertainty >= 0.0 && profiled_uncertainty <= 1.0)) {
    throw ValidationError("uncertainty values must lie in [0,1]");
  }
  state.gamma = std::clamp(new_uncertainty / std::max(profiled_uncertainty, kUncertaintyFloor),
                           state.gamma_min, state.gamma_max);
  return state.gamma;
}

double estimate_accuracy(double gamma, double reference_accuracy) {
  return std::min(gamma * reference_accuracy, 1.0);
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

MatchCounts match_detections(std::span<const FrameDetections> predicted,
                             std::span<const FrameDetections> truth) {
  if (predicted.size() != truth.size()) {
    throw ValidationError("predicted and ground-truth detections are not frame aligned");
  }
  MatchCounts counts;
  for (std::size_t f = 0; f < truth.size(); ++f) {
    const auto& preds = predicted[f];
    const auto& gts = truth[f];
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return preds[a].confidence > preds[b].confidence;
    });
    std::vector<bool> used(gts.size(), false);
    std::size_t matched = 0;
    for (std::size_t pi : order) {
      double best_iou = kMatchIou;
      std::size_t best = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].category != preds[pi].category) continue;
        const double v = iou(preds[pi].box, gts[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      if (best < gts.size()) {
        used[best] = true;
        ++matched;
      }
    }
    counts.true_positives += matched;
    counts.false_positives += preds.size() - matched;
    counts.false_negatives += gts.size() - matched;
  }
  return counts;
}

double compute_f1(std::span<const FrameDetections> predicted, std::span<const FrameDetections> truth) {
  const auto c = match_detections(predicted, truth);
  const auto denom = 2 * c.true_positives + c.false_positives + c.false_negatives;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.true_positives) / static_cast<double>(denom);
}

}  // namespace starstream
