#include "vitcat/config.hpp"

#include <charconv>
#include <fstream>

#include "vitcat/errors.hpp"

namespace vitcat::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::schema() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", "master seed; every random stream derives from it"},
      {"out", "out", "output directory"},
      {"nodes", "6", "number of caching nodes"},
      {"trace.file", "", "input trace CSV; empty means <out>/trace.csv"},
      {"trace.format", "generic", "trace format: generic | movielens"},
      {"synthetic.n_contents", "100", "catalog size for gen-trace"},
      {"synthetic.n_events", "100000", "events for gen-trace"},
      {"synthetic.zipf_alpha", "1.0", "Zipf exponent (> 0)"},
      {"synthetic.n_regimes", "2", "popularity re-shuffles over the horizon"},
      {"synthetic.horizon", "1000000", "simulated seconds"},
      {"pipeline.resolution", "60", "seconds per request-matrix row"},
      {"pipeline.window", "24", "request-matrix rows per updating window (W)"},
      {"pipeline.l_history", "12", "history windows per sample (L)"},
      {"pipeline.k_top", "0", "cache capacity K; 0 = ceil(0.1 * N_c)"},
      {"pipeline.train_frac", "0.8", "chronological train fraction"},
      {"model.preset", "0", "Table-style variant id 1..6; 0 = explicit fields"},
      {"model.t_s", "4", "short horizon T_s (must divide L, T_s <= L/2)"},
      {"model.d_model", "16", "embedding dimension d"},
      {"model.n_heads", "2", "attention heads h"},
      {"model.n_layers", "1", "encoder layers N_L"},
      {"model.mlp_size", "32", "encoder MLP hidden width"},
      {"model.mlp_layers", "1", "encoder MLP hidden layer count"},
      {"model.fusion", "cross_attention",
       "fusion head: cross_attention | fully_connected | self_attention"},
      {"model.activation", "gelu", "encoder MLP activation: gelu | relu"},
      {"train.learning_rate", "0.001", "optimizer step size"},
      {"train.weight_decay", "0.01", "decoupled weight decay"},
      {"train.beta1", "0.9", "first-moment decay"},
      {"train.beta2", "0.999", "second-moment decay"},
      {"train.eps", "1e-8", "optimizer denominator guard"},
      {"train.epochs", "50", "training epochs"},
      {"train.batch_size", "32", "mini-batch size"},
      {"train.decoupled_decay", "true", "true = decoupled decay, false = L2-in-gradient"},
      {"sim.policies", "vitcat,lru,lfu,popcaching,clairvoyant",
       "comma-separated policies for simulate"},
      {"gradcheck.seeds", "20", "random seeds for the gradient suite"},
      {"variants.node", "0", "node whose dataset the variants grid trains on"},
      {"variants.epochs", "0", "epochs for variants training; 0 = train.epochs"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const ConfigKey& k : schema()) values_[k.name] = k.default_value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ": line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    try {
      set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key " + key + " is not an integer: '" + s + "'");
  }
  return v;
}

uint64_t RunConfig::get_uint(const std::string& key) const {
  const int64_t v = get_int(key);
  if (v < 0) throw ConfigError("config key " + key + " must be non-negative");
  return static_cast<uint64_t>(v);
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: '" + s + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key " + key + " must be true or false: '" + s + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  return {values_.begin(), values_.end()};
}

}  // namespace vitcat::cli
