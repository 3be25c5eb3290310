#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "json.hpp"
#include "starstream/errors.hpp"
#include "starstream/trace_model.hpp"

namespace starstream {

using nlohmann::json;

std::string to_string(const Resolution& r) {
  return std::to_string(r.width) + "x" + std::to_string(r.height);
}

std::string to_string(const EncodingConfig& c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", c.bitrate);
  return std::string("b") + buf + "_f" + std::to_string(c.frame_rate) + "_" +
         to_string(c.resolution);
}

std::string series_file_name(const EncodingConfig& config, int gop_length) {
  return to_string(config) + "_g" + std::to_string(gop_length) + ".jsonl";
}

std::vector<EncodingConfig> CandidateSpace::configs() const {
  std::vector<EncodingConfig> out;
  for (double b : bitrates)
    for (int f : frame_rates)
      for (const auto& r : resolutions) out.push_back({b, f, r});
  return out;
}

double VideoUnitRecord::total_bits() const {
  double sum = 0.0;
  for (double d : frame_sizes) sum += d;
  return sum;
}

void validate(const VideoUnitRecord& r) {
  const auto where = [&] {
    return r.video_id + " " + to_string(r.config) + " gop_start=" + std::to_string(r.gop_start) +
           " gop_length=" + std::to_string(r.gop_length);
  };
  if (r.gop_length < 1 || r.gop_start < 0 || r.config.frame_rate < 1) {
    throw ValidationError(where() + ": bad GOP geometry");
  }
  const auto frames = static_cast<std::size_t>(r.gop_length) * r.config.frame_rate;
  if (r.frame_sizes.size() != frames || r.encode_delays.size() != frames ||
      r.decode_delays.size() != frames || r.inference_delays.size() != frames) {
    throw ValidationError(where() + ": per-frame lists must have " + std::to_string(frames) +
                          " entries");
  }
  const auto non_negative = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && std::isfinite(x); });
  };
  if (!non_negative(r.frame_sizes) || !non_negative(r.encode_delays) ||
      !non_negative(r.decode_delays) || !non_negative(r.inference_delays)) {
    throw ValidationError(where() + ": sizes and delays must be non-negative");
  }
  if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0) || !(r.uncertainty >= 0.0 && r.uncertainty <= 1.0)) {
    throw ValidationError(where() + ": accuracy and uncertainty must lie in [0,1]");
  }
}

VideoTraceSet::VideoTraceSet(std::string video_id, int native_frame_rate, CandidateSpace space,
                             std::vector<VideoUnitRecord> records,
                             std::vector<FrameDetections> probe_detections)
    : video_id_(std::move(video_id)),
      native_frame_rate_(native_frame_rate),
      space_(std::move(space)),
      probe_detections_(std::move(probe_detections)) {
  if (native_frame_rate_ < 1) throw ValidationError("native frame rate must be positive");
  for (auto& r : records) {
    validate(r);
    series_[{r.config, r.gop_length}].push_back(std::move(r));
  }
  bool first = true;
  for (auto& [key, list] : series_) {
    std::sort(list.begin(), list.end(),
              [](const auto& a, const auto& b) { return a.gop_start < b.gop_start; });
    int cursor = 0;
    for (const auto& r : list) {
      if (r.gop_start != cursor) {
        const char* what = r.gop_start > cursor ? "gap" : "overlap";
        throw AlignmentError(video_id_ + " " + to_string(key.config) + " gop_length=" +
                             std::to_string(key.gop_length) + ": " + what + " at gop_start=" +
                             std::to_string(r.gop_start) + " (expected " +
                             std::to_string(cursor) + ")");
      }
      cursor += r.gop_length;
    }
    if (first) {
      duration_ = cursor;
      first = false;
    } else if (cursor != duration_) {
      throw AlignmentError(video_id_ + " " + to_string(key.config) + " gop_length=" +
                           std::to_string(key.gop_length) + ": covers " + std::to_string(cursor) +
                           " s, other series cover " + std::to_string(duration_) + " s");
    }
  }
}

bool VideoTraceSet::has(const EncodingConfig& config, int gop_length) const {
  return series_.contains(Key{config, gop_length});
}

const VideoUnitRecord* VideoTraceSet::find(const EncodingConfig& config, int gop_length,
                                           int gop_start) const {
  const auto it = series_.find(Key{config, gop_length});
  if (it == series_.end() || gop_start < 0 || gop_start % gop_length != 0) return nullptr;
  const auto idx = static_cast<std::size_t>(gop_start / gop_length);
  return idx < it->second.size() ? &it->second[idx] : nullptr;
}

VideoUnitRecord VideoTraceSet::gop(const EncodingConfig& config, int gop_length,
                                   int gop_start) const {
  const auto it = series_.find(Key{config, gop_length});
  if (it == series_.end()) {
    throw ValidationError(video_id_ + ": no records for " + to_string(config) +
                          " gop_length=" + std::to_string(gop_length));
  }
  if (gop_start < 0 || gop_start + gop_length > duration_) {
    throw ValidationError(video_id_ + ": GOP [" + std::to_string(gop_start) + ", " +
                          std::to_string(gop_start + gop_length) + ") outside content of " +
                          std::to_string(duration_) + " s");
  }
  VideoUnitRecord unit = it->second[static_cast<std::size_t>(gop_start / gop_length)];
  unit.gop_start = gop_start;
  return unit;
}

// ---------------------------------------------------------------------------
// JSON-lines I/O
// ---------------------------------------------------------------------------

namespace {

json to_json(const VideoUnitRecord& r) {
  return json{{"video_id", r.video_id},
              {"bitrate", r.config.bitrate},
              {"frame_rate", r.config.frame_rate},
              {"width", r.config.resolution.width},
              {"height", r.config.resolution.height},
              {"gop_start", r.gop_start},
              {"gop_length", r.gop_length},
              {"frame_sizes", r.frame_sizes},
              {"encode_delays", r.encode_delays},
              {"decode_delays", r.decode_delays},
              {"inference_delays", r.inference_delays},
              {"accuracy", r.accuracy},
              {"mean_confidence_uncertainty", r.uncertainty}};
}

VideoUnitRecord record_from_json(const json& j) {
  VideoUnitRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.config.bitrate = j.at("bitrate").get<double>();
  r.config.frame_rate = j.at("frame_rate").get<int>();
  r.config.resolution = {j.at("width").get<int>(), j.at("height").get<int>()};
  r.gop_start = j.at("gop_start").get<int>();
  r.gop_length = j.at("gop_length").get<int>();
  r.frame_sizes = j.at("frame_sizes").get<std::vector<double>>();
  r.encode_delays = j.at("encode_delays").get<std::vector<double>>();
  r.decode_delays = j.at("decode_delays").get<std::vector<double>>();
  r.inference_delays = j.at("inference_delays").get<std::vector<double>>();
  r.accuracy = j.at("accuracy").get<double>();
  r.uncertainty = j.at("mean_confidence_uncertainty").get<double>();
  return r;
}

json space_to_json(const CandidateSpace& s) {
  json res = json::array();
  for (const auto& r : s.resolutions) res.push_back({r.width, r.height});
  return json{{"bitrates", s.bitrates},
              {"frame_rates", s.frame_rates},
              {"resolutions", res},
              {"gop_lengths", s.gop_lengths}};
}

CandidateSpace space_from_json(const json& j) {
  CandidateSpace s;
  s.bitrates = j.at("bitrates").get<std::vector<double>>();
  s.frame_rates = j.at("frame_rates").get<std::vector<int>>();
  s.resolutions.clear();
  for (const auto& r : j.at("resolutions")) s.resolutions.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
  s.gop_lengths = j.at("gop_lengths").get<std::vector<int>>();
  return s;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
}

void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
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

std::vector<FrameDetections> load_detection_file(const std::filesystem::path& path) {
  std::vector<FrameDetections> frames;
  std::size_t line_no = 0;
  for_each_json_line(path, [&](const json& j) {
    ++line_no;
    const auto idx = j.at("frame_idx").get<std::size_t>();
    if (idx != frames.size()) {
      throw ParseError(path.string(), line_no,
                       "frame_idx " + std::to_string(idx) + " out of order");
    }
    FrameDetections dets;
    for (const auto& d : j.at("detections")) {
      Detection det;
      const auto& box = d.at("box");
      det.box = {box.at(0).get<double>(), box.at(1).get<double>(), box.at(2).get<double>(),
                 box.at(3).get<double>()};
      det.category = d.at("category").get<std::string>();
      det.confidence = d.at("confidence").get<double>();
      if (!(det.box.x2 > det.box.x1 && det.box.y2 > det.box.y1)) {
        throw ParseError(path.string(), line_no, "degenerate bounding box");
      }
      dets.push_back(std::move(det));
    }
    frames.push_back(std::move(dets));
  });
  return frames;
}

void write_detection_file(std::span<const FrameDetections> frames,
                          const std::filesystem::path& path) {
  std::string text;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    json dets = json::array();
    for (const auto& d : frames[i]) {
      dets.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                      {"category", d.category},
                      {"confidence", d.confidence}});
    }
    text += json{{"frame_idx", i}, {"detections", dets}}.dump();
    text += '\n';
  }
  write_text_atomically(path, text);
}

VideoTraceSet load_video_trace_set(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IoError("cannot open " + meta_path.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string(), 1, e.what());
  }
  const auto video_id = meta.at("video_id").get<std::string>();
  const auto fps = meta.at("native_frame_rate").get<int>();
  const auto space = space_from_json(meta.at("space"));

  std::vector<VideoUnitRecord> records;
  std::vector<std::string> missing;
  for (const auto& config : space.configs()) {
    for (int gop : space.gop_lengths) {
      const auto path = dir / series_file_name(config, gop);
      if (!std::filesystem::exists(path)) {
        missing.push_back(path.filename().string());
        continue;
      }
      std::size_t line_no = 0;
      for_each_json_line(path, [&](const json& j) {
        ++line_no;
        auto r = record_from_json(j);
        if (r.config != config || r.gop_length != gop) {
          throw ParseError(path.string(), line_no, "record does not belong to this series file");
        }
        records.push_back(std::move(r));
      });
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw ValidationError(dir.string() + ": missing series files:" + list);
  }
  std::vector<FrameDetections> probes;
  if (std::filesystem::exists(dir / "probe_detections.jsonl")) {
    probes = load_detection_file(dir / "probe_detections.jsonl");
  }
  return VideoTraceSet(video_id, fps, space, std::move(records), std::move(probes));
}

void write_video_trace_set(const VideoTraceSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta{{"video_id", set.video_id()},
            {"native_frame_rate", set.native_frame_rate()},
            {"duration", set.duration()},
            {"space", space_to_json(set.space())}};
  write_text_atomically(dir / "meta.json", meta.dump(2) + "\n");
  for (const auto& [key, list] : set.series()) {
    std::string text;
    for (const auto& r : list) {
      text += to_json(r).dump();
      text += '\n';
    }
    write_text_atomically(dir / series_file_name(key.config, key.gop_length), text);
  }
  if (!set.probe_detections().empty()) {
    write_detection_file(set.probe_detections(), dir / "probe_detections.jsonl");
  }
}

// ---------------------------------------------------------------------------
// Synthetic video traces
// ---------------------------------------------------------------------------

namespace {

constexpr double kReferencePixels = 1280.0 * 720.0;

double accuracy_ceiling(const EncodingConfig& c) {
  const double px = static_cast<double>(c.resolution.pixels()) / kReferencePixels;
  const double spatial = std::clamp(0.80 + 0.12 * std::log2(1.0 + px), 0.0, 0.97);
  const double temporal = c.frame_rate >= 15 ? 1.0 : c.frame_rate >= 5 ? 0.97 : c.frame_rate >= 3 ? 0.94 : 0.88;
  return spatial * temporal;
}

/// Share of the ceiling reached at vanishing bitrate.
constexpr double kAccuracyFloor = 0.8;

/// Reference accuracy for hardness 1. Strictly increasing in bitrate and GOP length.
double reference_accuracy(const EncodingConfig& c, int gop_length) {
  const double px = static_cast<double>(c.resolution.pixels()) / kReferencePixels;
  const double scale = 2.0 * std::sqrt(px) * std::sqrt(c.frame_rate / 15.0);
  const double effective = c.bitrate * (1.0 + 0.08 * (gop_length - 1));
  return accuracy_ceiling(c) * (kAccuracyFloor + (1.0 - kAccuracyFloor) * (1.0 - std::exp(-effective / scale)));
}

double frame_encode_delay(const Resolution& r) {
  return 0.002 + 0.004 * static_cast<double>(r.pixels()) / kReferencePixels;
}

}  // namespace

VideoTraceSet gen_synthetic_video_trace(std::uint64_t seed, int duration_s, int native_frame_rate,
                                        const CandidateSpace& space,
                                        const SyntheticVideoParams& params, std::string video_id) {
  if (duration_s <= 0) throw ValidationError("synthetic video duration must be positive");
  for (int gop : space.gop_lengths) {
    if (gop < 1 || duration_s % gop != 0) {
      throw ValidationError("synthetic video duration must be a multiple of every GOP length");
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Content hardness per second.
  std::vector<double> hardness(static_cast<std::size_t>(duration_s));
  double h = 0.5 * (params.hardness_min + params.hardness_max);
  for (auto& v : hardness) {
    h = std::clamp(h + params.hardness_step * gauss(rng), params.hardness_min, params.hardness_max);
    v = h;
  }
  const auto uncertainty_at = [&](int second) {
    return std::clamp(0.12 * hardness[static_cast<std::size_t>(second)], 0.0, 1.0);
  };

  std::vector<VideoUnitRecord> records;
  for (const auto& config : space.configs()) {
    const double ceiling = accuracy_ceiling(config);
    const double enc = frame_encode_delay(config.resolution);
    for (int gop : space.gop_lengths) {
      const double reference = reference_accuracy(config, gop);
      for (int start = 0; start < duration_s; start += gop) {
        VideoUnitRecord r;
        r.video_id = video_id;
        r.config = config;
        r.gop_start = start;
        r.gop_length = gop;
        const auto frames = static_cast<std::size_t>(gop * config.frame_rate);

        const double total =
            config.bitrate * 1e6 * gop * (1.0 + params.cbr_jitter * (2.0 * unit(rng) - 1.0));
        std::vector<double> weights(frames);
        weights[0] = params.iframe_ratio;
        for (std::size_t j = 1; j < frames; ++j) weights[j] = 1.0 + 0.1 * (2.0 * unit(rng) - 1.0);
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        r.frame_sizes.resize(frames);
        r.encode_delays.resize(frames);
        r.decode_delays.resize(frames);
        r.inference_delays.resize(frames);
        for (std::size_t j = 0; j < frames; ++j) {
          r.frame_sizes[j] = total * weights[j] / wsum;
          const double jitter = 1.0 + 0.2 * (2.0 * unit(rng) - 1.0);
          const double iframe = j == 0 ? 1.6 : 1.0;
          r.encode_delays[j] = enc * iframe * jitter;
          r.decode_delays[j] = 0.4 * enc * iframe * jitter;
          r.inference_delays[j] = 0.012 + 0.010 * static_cast<double>(config.resolution.pixels()) /
                                              kReferencePixels * jitter;
        }
        const double hs = hardness[static_cast<std::size_t>(start)];
        r.accuracy = std::clamp(ceiling - (ceiling - reference) * hs, 0.0, 1.0);
        r.uncertainty = uncertainty_at(start);
        records.push_back(std::move(r));
      }
    }
  }

  // Compact-model detections at the native rate: each detection is uncertain
  // with probability equal to the content uncertainty of its second.
  static const char* kCategories[] = {"person", "car", "truck", "bicycle"};
  std::vector<FrameDetections> probes(static_cast<std::size_t>(duration_s * native_frame_rate));
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const int second = static_cast<int>(i / static_cast<std::size_t>(native_frame_rate));
    const double u = uncertainty_at(second);
    for (int d = 0; d < params.detections_per_frame; ++d) {
      Detection det;
      const double x = 1800.0 * unit(rng), y = 1000.0 * unit(rng);
      det.box = {x, y, x + 20.0 + 100.0 * unit(rng), y + 20.0 + 60.0 * unit(rng)};
      det.category = kCategories[static_cast<std::size_t>(d) % 4];
      det.confidence = unit(rng) < u ? 0.05 + 0.44 * unit(rng) : 0.5 + 0.49 * unit(rng);
      probes[i].push_back(std::move(det));
    }
  }
  return VideoTraceSet(std::move(video_id), native_frame_rate, space, std::move(records),
                       std::move(probes));
}

}  // namespace starstream
