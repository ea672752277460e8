#include "vitcat/cachesim.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "vitcat/errors.hpp"
#include "vitcat/ranking.hpp"

namespace vitcat::cachesim {

std::string policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::vitcat: return "vitcat";
    case PolicyKind::lru: return "lru";
    case PolicyKind::lfu: return "lfu";
    case PolicyKind::popcaching: return "popcaching";
    case PolicyKind::clairvoyant: return "clairvoyant";
  }
  throw ConfigError("unknown policy kind");
}

PolicyKind policy_from_name(const std::string& name) {
  if (name == "vitcat") return PolicyKind::vitcat;
  if (name == "lru") return PolicyKind::lru;
  if (name == "lfu") return PolicyKind::lfu;
  if (name == "popcaching") return PolicyKind::popcaching;
  if (name == "clairvoyant") return PolicyKind::clairvoyant;
  throw ConfigError("unknown policy: " + name);
}

PolicyResult simulate_refresh_policy(const pipeline::WindowedMatrix& m,
                                     const ChooseFn& choose, size_t l_history,
                                     size_t k) {
  if (k < 1 || k > m.n_contents) {
    throw ConfigError("simulate_refresh_policy: need 1 <= K <= N_c");
  }
  if (m.n_windows <= l_history) {
    throw ConfigError("simulate_refresh_policy: need N_W > L");
  }

  PolicyResult result;
  for (size_t u = l_history; u < m.n_windows; ++u) {
    const std::vector<uint32_t> cache = choose(m.history(u, l_history), m.n_contents, u);
    if (cache.size() != k) {
      throw ShapeError("simulate_refresh_policy: policy returned wrong cache size");
    }
    PolicyResult::Row row;
    row.u = u;
    for (uint32_t id : cache) {
      if (id >= m.n_contents) {
        throw ShapeError("simulate_refresh_policy: content id out of range");
      }
      row.hits += static_cast<uint64_t>(m.at(u, id));
    }
    for (size_t l = 0; l < m.n_contents; ++l) {
      row.requests += static_cast<uint64_t>(m.at(u, l));
    }
    result.total_hits += row.hits;
    result.total_requests += row.requests;
    row.cumulative_ratio = result.hit_ratio();
    result.rows.push_back(row);
  }
  return result;
}

std::vector<uint32_t> clairvoyant_topk(const pipeline::WindowedMatrix& m, size_t u,
                                       size_t k) {
  if (u >= m.n_windows) throw ConfigError("clairvoyant_topk: window out of range");
  return topk_indices(m.row(u), std::min(k, m.n_contents));
}

std::vector<uint32_t> popcaching_predict(std::span<const int64_t> history,
                                         size_t n_contents, size_t k) {
  if (n_contents == 0 || history.size() % n_contents != 0) {
    throw ShapeError("popcaching_predict: history must be L x N_c");
  }
  std::vector<int64_t> sums(n_contents, 0);
  for (size_t i = 0; i < history.size(); ++i) {
    if (history[i] < 0) throw ConfigError("popcaching_predict: negative count");
    sums[i % n_contents] += history[i];
  }
  return topk_indices(sums, std::min(k, n_contents));
}

std::vector<uint32_t> vitcat_choose(const model::ModelParams& params,
                                    const model::ViTConfig& cfg,
                                    const Tensor& history) {
  const Tensor pred = model::forward(history, params, cfg);
  std::vector<double> scores(pred.data().begin(), pred.data().end());
  return topk_indices(scores, std::min(cfg.k_top, cfg.n_contents));
}

namespace {

// Shared reactive replay; the eviction rule is the only difference between
// LRU and LFU (LFU breaks frequency ties by least recent use).
PolicyResult reactive_replay(std::span<const trace::RequestEvent> events,
                             size_t capacity, const ReplayWindows& w, bool lfu) {
  if (capacity < 1) throw ConfigError("replay: capacity must be >= 1");
  if (w.window_seconds < 1) throw ConfigError("replay: window length must be >= 1");

  struct Entry {
    uint64_t last_used = 0;
    uint64_t uses = 0;  // accesses since insertion (LFU)
  };
  std::unordered_map<uint32_t, Entry> resident;
  resident.reserve(capacity + 1);

  PolicyResult result;
  std::vector<PolicyResult::Row> rows(w.n_windows);
  for (size_t u = 0; u < w.n_windows; ++u) rows[u].u = u;

  uint64_t clock = 0;
  for (const trace::RequestEvent& ev : events) {
    ++clock;
    const bool hit = resident.contains(ev.content_id);
    if (hit) {
      Entry& e = resident[ev.content_id];
      e.last_used = clock;
      ++e.uses;
    } else {
      if (resident.size() == capacity) {
        uint32_t victim = 0;
        uint64_t best_uses = std::numeric_limits<uint64_t>::max();
        uint64_t best_last = std::numeric_limits<uint64_t>::max();
        for (const auto& [id, e] : resident) {
          const uint64_t uses = lfu ? e.uses : 0;
          if (uses < best_uses || (uses == best_uses && e.last_used < best_last)) {
            victim = id;
            best_uses = uses;
            best_last = e.last_used;
          }
        }
        resident.erase(victim);
      }
      resident.emplace(ev.content_id, Entry{clock, 1});
    }

    if (ev.timestamp < w.t0) continue;
    const auto u = static_cast<size_t>((ev.timestamp - w.t0) / w.window_seconds);
    if (u < w.first_window || u >= w.n_windows) continue;
    ++rows[u].requests;
    rows[u].hits += hit ? 1 : 0;
  }

  for (size_t u = w.first_window; u < w.n_windows; ++u) {
    result.total_hits += rows[u].hits;
    result.total_requests += rows[u].requests;
    rows[u].cumulative_ratio = result.hit_ratio();
    result.rows.push_back(rows[u]);
  }
  return result;
}

}  // namespace

PolicyResult lru_replay(std::span<const trace::RequestEvent> events, size_t capacity,
                        const ReplayWindows& w) {
  return reactive_replay(events, capacity, w, false);
}

PolicyResult lfu_replay(std::span<const trace::RequestEvent> events, size_t capacity,
                        const ReplayWindows& w) {
  return reactive_replay(events, capacity, w, true);
}

}  // namespace vitcat::cachesim
