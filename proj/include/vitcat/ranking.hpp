#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace vitcat {

// Indices of the k largest values, ordered by descending value with ties
// broken by the lower index. k is clamped to the input length.
template <class T>
std::vector<uint32_t> topk_indices(std::span<const T> values, size_t k) {
  std::vector<uint32_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0u);
  k = std::min(k, values.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(k), idx.end(),
                    [&values](uint32_t a, uint32_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

inline std::vector<uint32_t> topk_indices(const std::vector<double>& v, size_t k) {
  return topk_indices(std::span<const double>(v), k);
}

inline std::vector<uint32_t> topk_indices(const std::vector<int64_t>& v, size_t k) {
  return topk_indices(std::span<const int64_t>(v), k);
}

}  // namespace vitcat
