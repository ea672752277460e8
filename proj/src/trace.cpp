#include "vitcat/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "vitcat/errors.hpp"
#include "vitcat/rng.hpp"

namespace vitcat::trace {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_int(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Accepts "4.0"-style ratings or plain integers; value is discarded anyway.
bool looks_numeric(std::string_view s) {
  s = trim(s);
  if (s.empty()) return false;
  for (char c : s) {
    if ((c < '0' || c > '9') && c != '.' && c != '-' && c != '+') return false;
  }
  return true;
}

bool parse_row(const std::vector<std::string_view>& fields, TraceFormat format,
               RequestEvent& ev) {
  if (format == TraceFormat::movielens_ratings) {
    // userId,movieId,rating,timestamp
    if (fields.size() < 4) return false;
    uint64_t content = 0;
    if (!parse_int(fields[0], ev.user_id) || !parse_int(fields[1], content) ||
        !looks_numeric(fields[2]) || !parse_int(fields[3], ev.timestamp)) {
      return false;
    }
    if (ev.timestamp < 0 || content > UINT32_MAX) return false;
    ev.content_id = static_cast<uint32_t>(content);
    ev.zip = fields.size() >= 5 ? std::string(trim(fields[4])) : "0";
    return true;
  }
  // user_id,content_id,timestamp[,zip]
  if (fields.size() < 3) return false;
  uint64_t content = 0;
  if (!parse_int(fields[0], ev.user_id) || !parse_int(fields[1], content) ||
      !parse_int(fields[2], ev.timestamp)) {
    return false;
  }
  if (ev.timestamp < 0 || content > UINT32_MAX) return false;
  ev.content_id = static_cast<uint32_t>(content);
  ev.zip = fields.size() >= 4 ? std::string(trim(fields[3])) : "0";
  return true;
}

}  // namespace

std::pair<std::vector<RequestEvent>, TraceMeta> parse_trace(
    const std::string& path, TraceFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);

  std::vector<RequestEvent> events;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    RequestEvent ev;
    if (!parse_row(split_csv(view), format, ev)) {
      if (line_no == 1) continue;  // header row
      throw ParseError(path + ": malformed row at line " + std::to_string(line_no));
    }
    events.push_back(std::move(ev));
  }
  if (events.empty()) throw ParseError(path + ": empty trace");

  std::stable_sort(events.begin(), events.end(),
                   [](const RequestEvent& a, const RequestEvent& b) {
                     return a.timestamp < b.timestamp;
                   });

  // Dense re-index by ascending original content id, shared by all nodes.
  std::map<uint32_t, uint32_t> remap;
  for (const RequestEvent& ev : events) remap.emplace(ev.content_id, 0);
  uint32_t next = 0;
  for (auto& [orig, dense] : remap) dense = next++;
  for (RequestEvent& ev : events) ev.content_id = remap.at(ev.content_id);

  TraceMeta meta;
  meta.n_contents = next;
  meta.n_events = events.size();
  meta.t_min = events.front().timestamp;
  meta.t_max = events.back().timestamp;
  return {std::move(events), meta};
}

uint32_t node_of_zip(std::string_view zip, uint32_t n_nodes) {
  if (n_nodes == 0) throw ConfigError("node_of_zip: n_nodes must be >= 1");
  return static_cast<uint32_t>(fnv1a64(zip) % n_nodes);
}

std::vector<std::vector<RequestEvent>> partition_by_node(
    const std::vector<RequestEvent>& events, uint32_t n_nodes) {
  if (n_nodes == 0) throw ConfigError("partition_by_node: n_nodes must be >= 1");
  std::vector<std::vector<RequestEvent>> parts(n_nodes);
  for (const RequestEvent& ev : events) {
    parts[node_of_zip(ev.zip, n_nodes)].push_back(ev);
  }
  return parts;
}

std::vector<RequestEvent> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_contents == 0 || spec.n_events == 0) {
    throw ConfigError("generate_synthetic: need at least one content and one event");
  }
  if (spec.n_regimes == 0 || spec.n_regimes > spec.n_events) {
    throw ConfigError("generate_synthetic: n_regimes must be in [1, n_events]");
  }
  if (!(spec.zipf_alpha > 0.0)) {
    throw ConfigError("generate_synthetic: zipf_alpha must be > 0");
  }
  if (spec.horizon < static_cast<int64_t>(spec.n_regimes)) {
    throw ConfigError("generate_synthetic: horizon too short for regime count");
  }

  // Zipf rank weights -> cumulative table for inverse-CDF sampling.
  std::vector<double> cum(spec.n_contents);
  double total = 0.0;
  for (uint32_t r = 0; r < spec.n_contents; ++r) {
    total += std::pow(static_cast<double>(r + 1), -spec.zipf_alpha);
    cum[r] = total;
  }

  constexpr uint64_t kUserPool = 997;
  constexpr uint64_t kZipPool = 60;

  std::vector<RequestEvent> events;
  events.reserve(spec.n_events);
  const int64_t slice = spec.horizon / spec.n_regimes;
  for (uint32_t regime = 0; regime < spec.n_regimes; ++regime) {
    // Per-regime popularity permutation: rank r maps to perm[r].
    Rng perm_rng = Rng::stream(spec.seed, "perm-" + std::to_string(regime));
    std::vector<uint32_t> perm(spec.n_contents);
    std::iota(perm.begin(), perm.end(), 0u);
    perm_rng.shuffle(perm);

    Rng ev_rng = Rng::stream(spec.seed, "events-" + std::to_string(regime));
    const uint64_t lo = spec.n_events * regime / spec.n_regimes;
    const uint64_t hi = spec.n_events * (regime + 1) / spec.n_regimes;
    const int64_t t0 = slice * regime;
    for (uint64_t i = lo; i < hi; ++i) {
      RequestEvent ev;
      const double u = ev_rng.uniform01() * total;
      const auto it = std::lower_bound(cum.begin(), cum.end(), u);
      const auto rank = static_cast<uint32_t>(it - cum.begin());
      ev.content_id = perm[std::min(rank, spec.n_contents - 1)];
      ev.user_id = ev_rng.uniform_int(kUserPool);
      ev.timestamp = t0 + static_cast<int64_t>(ev_rng.uniform_int(
                              static_cast<uint64_t>(slice)));
      ev.zip = std::to_string(10000 + (ev.user_id * 2654435761ull) % kZipPool);
      events.push_back(std::move(ev));
    }
  }

  std::stable_sort(events.begin(), events.end(),
                   [](const RequestEvent& a, const RequestEvent& b) {
                     return a.timestamp < b.timestamp;
                   });
  return events;
}

void write_trace(const std::string& path, const std::vector<RequestEvent>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write trace file: " + path);
  out << "user_id,content_id,timestamp,zip\n";
  for (const RequestEvent& ev : events) {
    out << ev.user_id << ',' << ev.content_id << ',' << ev.timestamp << ','
        << ev.zip << '\n';
  }
  if (!out) throw IoError("failed while writing trace file: " + path);
}

}  // namespace vitcat::trace
