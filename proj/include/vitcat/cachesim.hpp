#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vitcat/model.hpp"
#include "vitcat/pipeline.hpp"
#include "vitcat/trace.hpp"

namespace vitcat::cachesim {

enum class PolicyKind { vitcat, lru, lfu, popcaching, clairvoyant };

std::string policy_name(PolicyKind kind);
PolicyKind policy_from_name(const std::string& name);

// Per-updating-time hit accounting for one node and one policy.
struct PolicyResult {
  struct Row {
    size_t u = 0;
    uint64_t hits = 0;
    uint64_t requests = 0;
    double cumulative_ratio = 0.0;
  };
  std::vector<Row> rows;
  uint64_t total_hits = 0;
  uint64_t total_requests = 0;

  double hit_ratio() const {
    return total_requests == 0
               ? 0.0
               : static_cast<double>(total_hits) / static_cast<double>(total_requests);
  }
};

// Picks the K contents to cache for window u given the history rows
// [u-L, u), flattened row-major (L x N_c).
using ChooseFn = std::function<std::vector<uint32_t>(
    std::span<const int64_t> history, size_t n_contents, size_t u)>;

// Proactive refresh protocol: at each updating time u in [L, N_W) the cache
// is repopulated from the policy's choice and the window's requests score
// hits against it. Warm-up windows (u < L) are not evaluated.
PolicyResult simulate_refresh_policy(const pipeline::WindowedMatrix& m,
                                     const ChooseFn& choose, size_t l_history,
                                     size_t k);

// The K contents with the largest counts in window u itself.
std::vector<uint32_t> clairvoyant_topk(const pipeline::WindowedMatrix& m, size_t u,
                                       size_t k);

// K ids with the largest column sums over the history window.
std::vector<uint32_t> popcaching_predict(std::span<const int64_t> history,
                                         size_t n_contents, size_t k);

// K largest model outputs for the given history.
std::vector<uint32_t> vitcat_choose(const model::ModelParams& params,
                                    const model::ViTConfig& cfg, const Tensor& history);

// Reactive per-request replay. The cache state evolves over the whole
// event list, but hits/requests only count inside [eval_start, eval_end)
// so results are comparable with the refresh policies' evaluated windows.
// Rows are bucketed by updating time (window_seconds per window, counted
// from t0).
struct ReplayWindows {
  int64_t t0 = 0;
  int64_t window_seconds = 1;
  size_t first_window = 0;  // L
  size_t n_windows = 0;     // N_W
};

PolicyResult lru_replay(std::span<const trace::RequestEvent> events, size_t capacity,
                        const ReplayWindows& w);
PolicyResult lfu_replay(std::span<const trace::RequestEvent> events, size_t capacity,
                        const ReplayWindows& w);

}  // namespace vitcat::cachesim
