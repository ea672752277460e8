#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vitcat::trace {

struct RequestEvent {
  uint64_t user_id = 0;
  uint32_t content_id = 0;
  int64_t timestamp = 0;
  std::string zip = "0";  // partition key

  bool operator==(const RequestEvent&) const = default;
};

struct TraceMeta {
  uint32_t n_contents = 0;
  uint64_t n_events = 0;
  int64_t t_min = 0;
  int64_t t_max = 0;
  uint32_t n_nodes = 6;
};

enum class TraceFormat { generic_csv, movielens_ratings };

// Synthetic workload: per regime, content popularity follows a Zipf law over
// a fresh random permutation of the catalog, so regime changes re-shuffle
// which contents are popular.
struct SyntheticSpec {
  uint32_t n_contents = 100;
  uint64_t n_events = 100000;
  double zipf_alpha = 1.0;
  uint32_t n_regimes = 1;
  int64_t horizon = 1000000;  // total simulated seconds
  uint64_t seed = 1;
};

// Parses a request trace. Events come back sorted ascending by timestamp with
// content ids re-indexed densely into [0, N_c); the dense index is assigned
// by ascending original id. Malformed rows are reported with their 1-based
// line number.
std::pair<std::vector<RequestEvent>, TraceMeta> parse_trace(
    const std::string& path, TraceFormat format);

// FNV-1a over the zip bytes, modulo n_nodes.
uint32_t node_of_zip(std::string_view zip, uint32_t n_nodes);

// Splits events across caching nodes by zip hash. The partitions cover the
// input exactly and each keeps the incoming timestamp order.
std::vector<std::vector<RequestEvent>> partition_by_node(
    const std::vector<RequestEvent>& events, uint32_t n_nodes);

// Pure function of the spec: identical spec => byte-identical event list.
std::vector<RequestEvent> generate_synthetic(const SyntheticSpec& spec);

// Writes events in the generic CSV format (with header). Re-parsing the file
// reproduces the same event list when the ids are already dense.
void write_trace(const std::string& path, const std::vector<RequestEvent>& events);

}  // namespace vitcat::trace
