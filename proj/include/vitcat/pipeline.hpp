#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitcat/tensor.hpp"
#include "vitcat/trace.hpp"

namespace vitcat::pipeline {

// T x N_c per-bucket request counts. Generalizes the 0/1 indicator: a bucket
// entry counts every request for that content in the bucket.
struct RequestMatrix {
  size_t t_rows = 0;
  size_t n_contents = 0;
  std::vector<int64_t> values;  // row-major
  int64_t t0 = 0;               // timestamp of row 0
  int64_t resolution = 1;       // seconds per row

  int64_t at(size_t t, size_t l) const { return values[t * n_contents + l]; }
  int64_t& at(size_t t, size_t l) { return values[t * n_contents + l]; }
};

// N_W x N_c window-aggregated counts; entry (u, l) sums window_len
// consecutive RequestMatrix rows. The trailing partial window is dropped.
struct WindowedMatrix {
  size_t n_windows = 0;
  size_t n_contents = 0;
  std::vector<int64_t> values;  // row-major
  size_t window_len = 1;

  int64_t at(size_t u, size_t l) const { return values[u * n_contents + l]; }
  int64_t& at(size_t u, size_t l) { return values[u * n_contents + l]; }
  std::span<const int64_t> row(size_t u) const {
    return {values.data() + u * n_contents, n_contents};
  }
  // Rows [u - l, u), flattened row-major: the request history feeding the
  // prediction for window u.
  std::span<const int64_t> history(size_t u, size_t l) const {
    return {values.data() + (u - l) * n_contents, l * n_contents};
  }
};

struct Sample {
  Tensor x;                // L x N_c request history
  std::vector<uint8_t> y;  // K ones marking the contents to cache
  size_t u = 0;            // updating-time index of the labeled window
};

struct LabelParams {
  size_t k = 1;          // cache capacity in contents
  size_t l_history = 2;  // L
  double eps = 1e-12;    // denominator guard

  void validate(size_t n_contents) const;
};

// n_contents = 0 infers the catalog size from the events; per-node pipelines
// pass the global count so every node shares one label dimension.
RequestMatrix build_request_matrix(std::span<const trace::RequestEvent> events,
                                   int64_t resolution, size_t n_contents = 0);

WindowedMatrix window_requests(const RequestMatrix& m, size_t w);

// p_l = row_l / sum(row); all-zeros when the row sums to zero.
std::vector<double> request_probability(std::span<const int64_t> row,
                                        double eps = 1e-12);

// Weighted skewness of the request-time distribution: time indices 1..L
// weighted by the per-slot request counts. Negative values mean the demand
// mass sits late in the window, i.e. an ascending request pattern. Returns 0
// when the history is empty or constant-concentrated (zero variance).
double skewness(std::span<const int64_t> history);

// Top-K labeling: contents with negative skewness ranked by request
// probability (descending, ties to the lower index); if fewer than K
// qualify, the remaining slots are filled from the rest by probability.
std::vector<uint8_t> label_topk(std::span<const int64_t> window_row,
                                std::span<const int64_t> histories,
                                const LabelParams& params);

// Overlapping stride-1 segmentation: sample u (for u in [L, N_W)) pairs the
// history rows [u-L, u) with the label for window u. M = N_W - L samples.
std::vector<Sample> segment(const WindowedMatrix& m, const LabelParams& params);

// First ceil(train_frac * M) samples train, remainder test; order preserved.
std::pair<std::vector<Sample>, std::vector<Sample>> chronological_split(
    std::vector<Sample> samples, double train_frac);

struct SampleFileHeader {
  uint32_t n_samples = 0;
  uint32_t l_history = 0;
  uint32_t n_contents = 0;
  uint32_t k = 0;
};

// Flat binary sample file: little-endian header (magic "VCAT", version, M, L,
// N_c, K), then per sample a row-major f32 x block and a u8 y block.
void write_samples(const std::string& path, std::span<const Sample> samples,
                   const LabelParams& params, size_t n_contents);
std::pair<std::vector<Sample>, SampleFileHeader> read_samples(const std::string& path);

}  // namespace vitcat::pipeline
