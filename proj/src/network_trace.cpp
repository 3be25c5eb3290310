#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "starstream/errors.hpp"
#include "starstream/trace_model.hpp"

namespace starstream {

namespace {

constexpr const char* kCsvHeader =
    "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms,shift";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& source, std::size_t line,
               const char* column) {
  T value{};
  std::size_t used = 0;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else {
      value = static_cast<T>(std::stoll(text, &used));
    }
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ParseError(source, line, std::string("bad ") + column + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<double> NetworkTrace::throughputs() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.throughput);
  return out;
}

std::vector<std::uint8_t> annotate_shifts(std::span<const double> throughputs, double delta) {
  if (!(delta > 0.0)) throw ValidationError("shift threshold must be positive");
  std::vector<std::uint8_t> shifts(throughputs.size(), 0);
  for (std::size_t t = 1; t < throughputs.size(); ++t) {
    shifts[t] = std::abs(throughputs[t] - throughputs[t - 1]) > delta ? 1 : 0;
  }
  return shifts;
}

void validate(const NetworkTrace& trace) {
  if (!(trace.delta > 0.0)) throw ValidationError(trace.trace_id + ": delta must be positive");
  for (std::size_t i = 0; i < trace.samples.size(); ++i) {
    const auto& s = trace.samples[i];
    if (i > 0 && s.timestamp != trace.samples[i - 1].timestamp + 1) {
      throw ValidationError(trace.trace_id + ": timestamps must increase by 1 at sample " +
                            std::to_string(i));
    }
    if (!(s.throughput >= 0.0)) {
      throw ValidationError(trace.trace_id + ": negative throughput at sample " +
                            std::to_string(i));
    }
    if (s.shift > 1 || (i == 0 && s.shift != 0)) {
      throw ValidationError(trace.trace_id + ": bad shift flag at sample " + std::to_string(i));
    }
  }
}

std::string format_wall_clock(WallClock t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long long>(hms.seconds().count()));
  return buf;
}

std::optional<WallClock> parse_wall_clock(std::string_view text) {
  using namespace std::chrono;
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  const std::string str(text);
  if (std::sscanf(str.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%c", &y, &mo, &d, &h, &mi, &s, &tail) != 7 ||
      tail != 'Z' || str.size() != 20) {
    return std::nullopt;
  }
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return std::nullopt;
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

NetworkTrace load_network_trace(const std::filesystem::path& path, double delta) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network trace " + path.string());
  const std::string source = path.string();

  NetworkTrace trace;
  trace.trace_id = path.stem().string();
  trace.delta = delta;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        auto key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        const auto value = line.substr(eq + 1);
        if (key == "trace_id") trace.trace_id = value;
        if (key == "location") trace.location_tag = value;
      }
      continue;
    }
    if (!header_seen) {
      if (line.rfind("timestamp,", 0) != 0) throw ParseError(source, line_no, "missing header");
      header_seen = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 7 && cells.size() != 8) {
      throw ParseError(source, line_no, "expected 7 or 8 columns, got " + std::to_string(cells.size()));
    }
    NetworkSample s;
    s.timestamp = parse_number<std::int64_t>(cells[0], source, line_no, "timestamp");
    const auto wall = parse_wall_clock(cells[1]);
    if (!wall) throw ParseError(source, line_no, "bad wall_clock '" + cells[1] + "'");
    s.wall_clock = *wall;
    s.throughput = parse_number<double>(cells[2], source, line_no, "throughput_mbps");
    s.retransmits = parse_number<std::int64_t>(cells[3], source, line_no, "retransmits");
    s.cwnd = parse_number<std::int64_t>(cells[4], source, line_no, "cwnd_bytes");
    s.srtt = parse_number<double>(cells[5], source, line_no, "srtt_ms");
    s.rtt_var = parse_number<double>(cells[6], source, line_no, "rtt_var_ms");
    if (!std::isfinite(s.throughput)) throw ParseError(source, line_no, "non-finite throughput");
    trace.samples.push_back(s);
  }
  if (trace.samples.size() < 2) {
    throw ValidationError(source + ": a network trace needs at least 2 samples");
  }
  const auto tp = trace.throughputs();
  const auto shifts = annotate_shifts(tp, delta);
  for (std::size_t i = 0; i < shifts.size(); ++i) trace.samples[i].shift = shifts[i];
  validate(trace);
  return trace;
}

void write_network_trace(const NetworkTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write network trace " + path.string());
  out << "# trace_id=" << trace.trace_id << '\n';
  out << "# location=" << trace.location_tag << '\n';
  out << kCsvHeader << '\n';
  char buf[64];
  for (const auto& s : trace.samples) {
    out << s.timestamp << ',' << format_wall_clock(s.wall_clock) << ',';
    // %.17g keeps the round trip exact.
    std::snprintf(buf, sizeof buf, "%.17g", s.throughput);
    out << buf << ',' << s.retransmits << ',' << s.cwnd << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.srtt);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.rtt_var);
    out << buf << ',' << static_cast<int>(s.shift) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

void fill_tcp_fields(std::mt19937_64& rng, NetworkTrace& trace) {
  // AR(1) noise around a throughput-dependent operating point.
  std::normal_distribution<double> unit(0.0, 1.0);
  double rtt_noise = 0.0;
  for (auto& s : trace.samples) {
    rtt_noise = 0.8 * rtt_noise + 0.6 * unit(rng);
    const double load = 1.0 / (1.0 + s.throughput);
    s.srtt = std::max(20.0, 45.0 + 60.0 * load + 8.0 * rtt_noise);
    s.rtt_var = std::max(1.0, 5.0 + 15.0 * load + 2.0 * std::abs(rtt_noise));
    s.cwnd = static_cast<std::int64_t>(std::max(14600.0, s.throughput * 1e6 / 8.0 * s.srtt / 1000.0));
    std::poisson_distribution<int> retx(0.5 + 6.0 * load);
    s.retransmits = retx(rng);
  }
}

}  // namespace

NetworkTrace gen_synthetic_network_trace(std::uint64_t seed, std::size_t duration_s,
                                         const SyntheticNetworkParams& params, double delta) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  NetworkTrace trace;
  trace.trace_id = "synthetic-" + std::to_string(seed);
  trace.location_tag = params.location_tag;
  trace.delta = delta;
  trace.samples.resize(duration_s);

  const double ceiling = params.good_mean + 5.0 * params.noise_sigma;
  bool good = true;
  for (std::size_t t = 0; t < duration_s; ++t) {
    auto& s = trace.samples[t];
    s.timestamp = static_cast<std::int64_t>(t);
    s.wall_clock = params.start + std::chrono::seconds{t};
    double level = 0.0;
    if (params.square_wave_period > 0) {
      const auto phase = (t / static_cast<std::size_t>(params.square_wave_period)) % 2;
      level = phase == 0 ? params.good_mean : params.bad_mean;
    } else {
      if (t > 0) {
        const double p = good ? params.p_good_to_bad : params.p_bad_to_good;
        if (coin(rng) < p) good = !good;
      }
      level = good ? params.good_mean : params.bad_mean;
      if (params.handover_step != 0.0 && params.handover_period > 0) {
        const auto block = t / static_cast<std::size_t>(params.handover_period);
        level += (block % 2 == 0 ? 0.5 : -0.5) * params.handover_step;
      }
      level += noise(rng);
    }
    s.throughput = std::clamp(level, 0.0, ceiling);
  }
  fill_tcp_fields(rng, trace);
  const auto shifts = annotate_shifts(trace.throughputs(), delta);
  for (std::size_t i = 0; i < shifts.size(); ++i) trace.samples[i].shift = shifts[i];
  return trace;
}

NetworkTrace make_step_trace(std::string trace_id,
                             std::span<const std::pair<std::size_t, double>> segments,
                             double delta) {
  NetworkTrace trace;
  trace.trace_id = std::move(trace_id);
  trace.location_tag = "step";
  trace.delta = delta;
  const WallClock start{std::chrono::seconds{1704067200}};
  for (const auto& [length, rate] : segments) {
    for (std::size_t i = 0; i < length; ++i) {
      NetworkSample s;
      s.timestamp = static_cast<std::int64_t>(trace.samples.size());
      s.wall_clock = start + std::chrono::seconds{s.timestamp};
      s.throughput = rate;
      trace.samples.push_back(s);
    }
  }
  std::mt19937_64 rng(0x5eed);
  fill_tcp_fields(rng, trace);
  const auto shifts = annotate_shifts(trace.throughputs(), delta);
  for (std::size_t i = 0; i < shifts.size(); ++i) trace.samples[i].shift = shifts[i];
  return trace;
}

DatasetSplit split_dataset(std::vector<std::string> trace_ids, std::uint64_t seed) {
  if (trace_ids.size() < 10) {
    throw ValidationError("dataset split needs at least 10 traces, got " +
                          std::to_string(trace_ids.size()));
  }
  std::sort(trace_ids.begin(), trace_ids.end());
  if (std::adjacent_find(trace_ids.begin(), trace_ids.end()) != trace_ids.end()) {
    throw ValidationError("duplicate trace ids in dataset split");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(trace_ids.begin(), trace_ids.end(), rng);

  const std::size_t n = trace_ids.size();
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n / 10;
  DatasetSplit split;
  auto it = trace_ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
  it += static_cast<std::ptrdiff_t>(n_val);
  split.test.assign(it, trace_ids.end());
  return split;
}

}  // namespace starstream
