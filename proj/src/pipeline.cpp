#include "vitcat/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vitcat/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "sample files are little-endian");

namespace vitcat::pipeline {

void LabelParams::validate(size_t n_contents) const {
  if (k < 1 || k > n_contents) {
    throw ConfigError("label params: need 1 <= K <= N_c");
  }
  if (l_history < 2) throw ConfigError("label params: L must be >= 2");
  if (eps < 0.0) throw ConfigError("label params: eps must be >= 0");
}

RequestMatrix build_request_matrix(std::span<const trace::RequestEvent> events,
                                   int64_t resolution, size_t n_contents) {
  if (events.empty()) throw ConfigError("build_request_matrix: empty event list");
  if (resolution < 1) throw ConfigError("build_request_matrix: resolution must be >= 1");

  const int64_t t_min = events.front().timestamp;
  const int64_t t_max = events.back().timestamp;
  uint32_t max_content = 0;
  int64_t prev = t_min;
  for (const auto& ev : events) {
    if (ev.timestamp < prev) {
      throw ConfigError("build_request_matrix: events not sorted by timestamp");
    }
    prev = ev.timestamp;
    max_content = std::max(max_content, ev.content_id);
  }
  if (n_contents != 0 && n_contents <= max_content) {
    throw ConfigError("build_request_matrix: content id exceeds catalog size");
  }

  RequestMatrix m;
  m.n_contents = n_contents != 0 ? n_contents : static_cast<size_t>(max_content) + 1;
  m.t_rows = static_cast<size_t>((t_max - t_min) / resolution) + 1;
  m.t0 = t_min;
  m.resolution = resolution;
  m.values.assign(m.t_rows * m.n_contents, 0);
  for (const auto& ev : events) {
    const auto bucket = static_cast<size_t>((ev.timestamp - t_min) / resolution);
    ++m.at(bucket, ev.content_id);
  }
  return m;
}

WindowedMatrix window_requests(const RequestMatrix& m, size_t w) {
  if (w < 1) throw ConfigError("window_requests: window length must be >= 1");
  if (w > m.t_rows) throw ConfigError("window_requests: window longer than trace");

  WindowedMatrix out;
  out.window_len = w;
  out.n_contents = m.n_contents;
  out.n_windows = m.t_rows / w;
  out.values.assign(out.n_windows * out.n_contents, 0);
  for (size_t u = 0; u < out.n_windows; ++u) {
    for (size_t t = u * w; t < (u + 1) * w; ++t) {
      for (size_t l = 0; l < m.n_contents; ++l) out.at(u, l) += m.at(t, l);
    }
  }
  return out;
}

std::vector<double> request_probability(std::span<const int64_t> row, double eps) {
  int64_t total = 0;
  for (int64_t v : row) {
    if (v < 0) throw ConfigError("request_probability: negative count");
    total += v;
  }
  std::vector<double> p(row.size(), 0.0);
  if (total == 0) return p;
  const double denom = std::max(static_cast<double>(total), eps);
  for (size_t l = 0; l < row.size(); ++l) {
    p[l] = static_cast<double>(row[l]) / denom;
  }
  return p;
}

double skewness(std::span<const int64_t> history) {
  if (history.size() < 2) throw ConfigError("skewness: history must have L >= 2");
  // Integer central sums keep time-reversal antisymmetry bit-exact: with
  // W = sum(w), S1 = sum(w*t) and d_t = W*t - S1, reversal maps d_t -> -d_t
  // exactly, so S2 is unchanged and S3 flips sign before any rounding.
  __int128 w_total = 0, s1 = 0;
  for (size_t i = 0; i < history.size(); ++i) {
    if (history[i] < 0) throw ConfigError("skewness: negative count");
    const auto t = static_cast<__int128>(i + 1);
    w_total += history[i];
    s1 += static_cast<__int128>(history[i]) * t;
  }
  if (w_total == 0) return 0.0;
  __int128 s2 = 0, s3 = 0;
  for (size_t i = 0; i < history.size(); ++i) {
    const auto t = static_cast<__int128>(i + 1);
    const __int128 d = w_total * t - s1;
    s2 += static_cast<__int128>(history[i]) * d * d;
    s3 += static_cast<__int128>(history[i]) * d * d * d;
  }
  if (s2 == 0) return 0.0;
  // m3 / m2^(3/2) with m_k = sum(w*(t-mu)^k)/W reduces to sqrt(W)*S3/S2^(3/2).
  const double s2d = static_cast<double>(s2);
  return std::sqrt(static_cast<double>(w_total)) * static_cast<double>(s3) /
         (s2d * std::sqrt(s2d));
}

std::vector<uint8_t> label_topk(std::span<const int64_t> window_row,
                                std::span<const int64_t> histories,
                                const LabelParams& params) {
  const size_t n = window_row.size();
  params.validate(n);
  if (histories.size() != params.l_history * n) {
    throw ShapeError("label_topk: history block must be L x N_c");
  }

  const std::vector<double> prob = request_probability(window_row, params.eps);
  std::vector<int64_t> column(params.l_history);
  std::vector<uint32_t> eligible, rest;
  for (size_t l = 0; l < n; ++l) {
    for (size_t t = 0; t < params.l_history; ++t) column[t] = histories[t * n + l];
    (skewness(column) < 0.0 ? eligible : rest).push_back(static_cast<uint32_t>(l));
  }

  auto by_prob = [&prob](uint32_t a, uint32_t b) {
    if (prob[a] != prob[b]) return prob[a] > prob[b];
    return a < b;
  };
  std::sort(eligible.begin(), eligible.end(), by_prob);
  std::sort(rest.begin(), rest.end(), by_prob);

  std::vector<uint8_t> label(n, 0);
  size_t chosen = 0;
  for (uint32_t id : eligible) {
    if (chosen == params.k) break;
    label[id] = 1;
    ++chosen;
  }
  for (uint32_t id : rest) {
    if (chosen == params.k) break;
    label[id] = 1;
    ++chosen;
  }
  return label;
}

std::vector<Sample> segment(const WindowedMatrix& m, const LabelParams& params) {
  params.validate(m.n_contents);
  const size_t l = params.l_history;
  if (m.n_windows <= l) {
    throw ConfigError("segment: trace too short, need N_W > L");
  }

  std::vector<Sample> samples;
  samples.reserve(m.n_windows - l);
  for (size_t u = l; u < m.n_windows; ++u) {
    Sample s;
    s.u = u;
    const auto hist = m.history(u, l);
    std::vector<double> x(hist.size());
    for (size_t i = 0; i < hist.size(); ++i) x[i] = static_cast<double>(hist[i]);
    s.x = Tensor({l, m.n_contents}, std::move(x));
    s.y = label_topk(m.row(u), hist, params);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::pair<std::vector<Sample>, std::vector<Sample>> chronological_split(
    std::vector<Sample> samples, double train_frac) {
  if (samples.size() < 2) {
    throw ConfigError("chronological_split: need at least 2 samples");
  }
  if (!(train_frac > 0.0) || !(train_frac < 1.0)) {
    throw ConfigError("chronological_split: train_frac must be in (0, 1)");
  }
  const auto n_train = static_cast<size_t>(
      std::ceil(train_frac * static_cast<double>(samples.size())));
  std::vector<Sample> test(std::make_move_iterator(samples.begin() +
                                                   static_cast<ptrdiff_t>(n_train)),
                           std::make_move_iterator(samples.end()));
  samples.resize(n_train);
  return {std::move(samples), std::move(test)};
}

namespace {

constexpr char kMagic[4] = {'V', 'C', 'A', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_raw(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated sample file: " + path);
}

}  // namespace

void write_samples(const std::string& path, std::span<const Sample> samples,
                   const LabelParams& params, size_t n_contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write sample file: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<uint32_t>(samples.size()));
  write_raw(out, static_cast<uint32_t>(params.l_history));
  write_raw(out, static_cast<uint32_t>(n_contents));
  write_raw(out, static_cast<uint32_t>(params.k));
  std::vector<float> xbuf(params.l_history * n_contents);
  for (const Sample& s : samples) {
    const auto x = s.x.data();
    for (size_t i = 0; i < x.size(); ++i) xbuf[i] = static_cast<float>(x[i]);
    out.write(reinterpret_cast<const char*>(xbuf.data()),
              static_cast<std::streamsize>(xbuf.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(s.y.data()),
              static_cast<std::streamsize>(s.y.size()));
  }
  if (!out) throw IoError("failed while writing sample file: " + path);
}

std::pair<std::vector<Sample>, SampleFileHeader> read_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sample file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a sample file (bad magic): " + path);
  }
  uint32_t version = 0;
  read_raw(in, version, path);
  if (version != kVersion) {
    throw IoError("unsupported sample file version: " + path);
  }
  SampleFileHeader h;
  read_raw(in, h.n_samples, path);
  read_raw(in, h.l_history, path);
  read_raw(in, h.n_contents, path);
  read_raw(in, h.k, path);
  if (h.l_history == 0 || h.n_contents == 0) {
    throw IoError("corrupt sample file header: " + path);
  }

  std::vector<Sample> samples;
  samples.reserve(h.n_samples);
  std::vector<float> xbuf(static_cast<size_t>(h.l_history) * h.n_contents);
  for (uint32_t i = 0; i < h.n_samples; ++i) {
    in.read(reinterpret_cast<char*>(xbuf.data()),
            static_cast<std::streamsize>(xbuf.size() * sizeof(float)));
    if (!in) throw IoError("truncated sample file: " + path);
    Sample s;
    std::vector<double> x(xbuf.size());
    for (size_t j = 0; j < xbuf.size(); ++j) x[j] = static_cast<double>(xbuf[j]);
    s.x = Tensor({h.l_history, h.n_contents}, std::move(x));
    s.y.resize(h.n_contents);
    in.read(reinterpret_cast<char*>(s.y.data()),
            static_cast<std::streamsize>(s.y.size()));
    if (!in) throw IoError("truncated sample file: " + path);
    s.u = h.l_history + i;
    samples.push_back(std::move(s));
  }
  return {std::move(samples), h};
}

}  // namespace vitcat::pipeline
