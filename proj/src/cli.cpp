#include "vitcat/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "vitcat/cachesim.hpp"
#include "vitcat/errors.hpp"
#include "vitcat/gradcheck.hpp"
#include "vitcat/model.hpp"
#include "vitcat/pipeline.hpp"
#include "vitcat/rng.hpp"
#include "vitcat/train.hpp"

namespace fs = std::filesystem;

namespace vitcat::cli {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

uint64_t derive_seed(uint64_t master, const std::string& name) {
  return Rng::stream(master, name).next_u64();
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.get("out"));
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Timestamps live only here; every CSV is a pure function of config + seed.
void write_manifest(const RunConfig& cfg, const std::string& command) {
  const fs::path path = out_dir(cfg) / ("manifest_" + command + ".txt");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  const auto now = std::chrono::system_clock::now();
  out << "command = " << command << "\n";
  out << "written_at_unix = "
      << std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count()
      << "\n";
  for (const auto& [key, value] : cfg.resolved()) {
    out << key << " = " << value << "\n";
  }
}

std::string trace_path(const RunConfig& cfg) {
  const std::string explicit_path = cfg.get("trace.file");
  if (!explicit_path.empty()) return explicit_path;
  return (fs::path(cfg.get("out")) / "trace.csv").string();
}

trace::TraceFormat trace_format(const RunConfig& cfg) {
  const std::string f = cfg.get("trace.format");
  if (f == "generic") return trace::TraceFormat::generic_csv;
  if (f == "movielens") return trace::TraceFormat::movielens_ratings;
  throw ConfigError("trace.format must be generic or movielens: '" + f + "'");
}

size_t capacity_for(const RunConfig& cfg, size_t n_contents) {
  const auto k = static_cast<size_t>(cfg.get_uint("pipeline.k_top"));
  if (k != 0) return k;
  return static_cast<size_t>(
      std::ceil(0.1 * static_cast<double>(n_contents)));  // 10% of the catalog
}

model::FusionKind fusion_from(const std::string& s) {
  if (s == "cross_attention") return model::FusionKind::cross_attention;
  if (s == "fully_connected") return model::FusionKind::fully_connected;
  if (s == "self_attention") return model::FusionKind::self_attention;
  throw ConfigError("model.fusion must be cross_attention, fully_connected or "
                    "self_attention: '" + s + "'");
}

model::Activation activation_from(const std::string& s) {
  if (s == "gelu") return model::Activation::gelu;
  if (s == "relu") return model::Activation::relu;
  throw ConfigError("model.activation must be gelu or relu: '" + s + "'");
}

model::ViTConfig make_vit_config(const RunConfig& cfg, size_t l_history,
                                 size_t n_contents, size_t k_top) {
  model::ViTConfig v;
  v.l_history = l_history;
  v.n_contents = n_contents;
  v.k_top = k_top;
  v.t_s = static_cast<size_t>(cfg.get_uint("model.t_s"));
  v.d_model = static_cast<size_t>(cfg.get_uint("model.d_model"));
  v.n_heads = static_cast<size_t>(cfg.get_uint("model.n_heads"));
  v.n_layers = static_cast<size_t>(cfg.get_uint("model.n_layers"));
  v.mlp_size = static_cast<size_t>(cfg.get_uint("model.mlp_size"));
  v.mlp_layers = static_cast<size_t>(cfg.get_uint("model.mlp_layers"));
  v.fusion = fusion_from(cfg.get("model.fusion"));
  v.activation = activation_from(cfg.get("model.activation"));
  const auto preset = static_cast<int>(cfg.get_uint("model.preset"));
  if (preset != 0) v = model::preset_variant(preset, v);
  v.validate();
  return v;
}

train::TrainConfig make_train_config(const RunConfig& cfg, uint64_t seed) {
  train::TrainConfig t;
  t.learning_rate = cfg.get_double("train.learning_rate");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.beta1 = cfg.get_double("train.beta1");
  t.beta2 = cfg.get_double("train.beta2");
  t.eps = cfg.get_double("train.eps");
  t.epochs = static_cast<size_t>(cfg.get_uint("train.epochs"));
  t.batch_size = static_cast<size_t>(cfg.get_uint("train.batch_size"));
  t.decoupled_decay = cfg.get_bool("train.decoupled_decay");
  t.seed = seed;
  t.validate();
  return t;
}

std::string sample_file(const RunConfig& cfg, uint32_t node) {
  return (fs::path(cfg.get("out")) / ("samples_node" + std::to_string(node) + ".bin"))
      .string();
}

std::string checkpoint_file(const RunConfig& cfg, uint32_t node) {
  return (fs::path(cfg.get("out")) /
          ("checkpoint_node" + std::to_string(node) + ".vckp"))
      .string();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    std::string item = s.substr(start, comma - start);
    if (!item.empty()) out.push_back(item);
    start = comma + 1;
  }
  return out;
}

// ---- commands ----

int cmd_gen_trace(const RunConfig& cfg) {
  trace::SyntheticSpec spec;
  spec.n_contents = static_cast<uint32_t>(cfg.get_uint("synthetic.n_contents"));
  spec.n_events = cfg.get_uint("synthetic.n_events");
  spec.zipf_alpha = cfg.get_double("synthetic.zipf_alpha");
  spec.n_regimes = static_cast<uint32_t>(cfg.get_uint("synthetic.n_regimes"));
  spec.horizon = cfg.get_int("synthetic.horizon");
  spec.seed = derive_seed(cfg.get_uint("seed"), "trace");

  const std::vector<trace::RequestEvent> events = trace::generate_synthetic(spec);
  const fs::path path = out_dir(cfg) / "trace.csv";
  trace::write_trace(path.string(), events);
  std::cout << "gen-trace: wrote " << events.size() << " events to " << path.string()
            << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& cfg) {
  auto [events, meta] = trace::parse_trace(trace_path(cfg), trace_format(cfg));
  const auto n_nodes = static_cast<uint32_t>(cfg.get_uint("nodes"));
  const auto parts = trace::partition_by_node(events, n_nodes);

  pipeline::LabelParams label;
  label.k = capacity_for(cfg, meta.n_contents);
  label.l_history = static_cast<size_t>(cfg.get_uint("pipeline.l_history"));
  label.validate(meta.n_contents);
  const int64_t resolution = cfg.get_int("pipeline.resolution");
  const auto window = static_cast<size_t>(cfg.get_uint("pipeline.window"));

  std::ofstream stats = open_csv(out_dir(cfg) / "stats.csv");
  stats << "node_id,events,n_contents,t_rows,n_windows,samples,k\n";
  for (uint32_t node = 0; node < n_nodes; ++node) {
    if (parts[node].empty()) {
      throw ConfigError("preprocess: node " + std::to_string(node) +
                        " received no events; use fewer nodes or more data");
    }
    const auto matrix =
        pipeline::build_request_matrix(parts[node], resolution, meta.n_contents);
    const auto windowed = pipeline::window_requests(matrix, window);
    const auto samples = pipeline::segment(windowed, label);
    pipeline::write_samples(sample_file(cfg, node), samples, label, meta.n_contents);
    stats << node << ',' << parts[node].size() << ',' << meta.n_contents << ','
          << matrix.t_rows << ',' << windowed.n_windows << ',' << samples.size()
          << ',' << label.k << "\n";
  }
  std::cout << "preprocess: " << n_nodes << " nodes, K = " << label.k << "\n";
  return 0;
}

void write_metrics_rows(std::ofstream& out, const std::vector<train::Metrics>& history,
                        uint32_t node) {
  for (const train::Metrics& m : history) {
    out << m.epoch << ',' << (m.train_split ? "train" : "test") << ','
        << fmt_double(m.mean_loss) << ',' << fmt_double(m.topk_accuracy) << ','
        << node << "\n";
  }
}

int cmd_train(const RunConfig& cfg) {
  const auto n_nodes = static_cast<uint32_t>(cfg.get_uint("nodes"));
  const double train_frac = cfg.get_double("pipeline.train_frac");
  const uint64_t seed = cfg.get_uint("seed");

  std::ofstream metrics = open_csv(out_dir(cfg) / "metrics.csv");
  metrics << "epoch,split,loss,topk_accuracy,node_id\n";
  for (uint32_t node = 0; node < n_nodes; ++node) {
    auto [samples, header] = pipeline::read_samples(sample_file(cfg, node));
    auto [train_set, test_set] =
        pipeline::chronological_split(std::move(samples), train_frac);
    const model::ViTConfig vit =
        make_vit_config(cfg, header.l_history, header.n_contents, header.k);

    Rng init_rng = Rng::stream(seed, "init-node" + std::to_string(node));
    model::ModelParams params = model::init_params(vit, init_rng);
    const train::TrainConfig tcfg =
        make_train_config(cfg, derive_seed(seed, "train-node" + std::to_string(node)));

    train::TrainResult result =
        train::train(std::move(params), vit, train_set, test_set, tcfg);
    write_metrics_rows(metrics, result.history, node);
    model::save_checkpoint(checkpoint_file(cfg, node), result.params, vit);

    const train::Metrics& last = result.history.back();
    std::cout << "train: node " << node << " epochs " << tcfg.epochs
              << " test_loss " << fmt_double(last.mean_loss) << " test_acc "
              << fmt_double(last.topk_accuracy) << "\n";
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const auto n_nodes = static_cast<uint32_t>(cfg.get_uint("nodes"));
  const double train_frac = cfg.get_double("pipeline.train_frac");

  std::ofstream out = open_csv(out_dir(cfg) / "accuracy.csv");
  out << "node_id,split,samples,mean_loss,topk_accuracy\n";
  double acc_total = 0.0;
  size_t acc_count = 0;
  for (uint32_t node = 0; node < n_nodes; ++node) {
    auto [samples, header] = pipeline::read_samples(sample_file(cfg, node));
    auto [train_set, test_set] =
        pipeline::chronological_split(std::move(samples), train_frac);
    auto [params, vit] = model::load_checkpoint(checkpoint_file(cfg, node));
    if (vit.n_contents != header.n_contents || vit.l_history != header.l_history ||
        vit.k_top != header.k) {
      throw IoError("eval: checkpoint does not match sample file for node " +
                    std::to_string(node));
    }
    const train::EvalResult tr = train::evaluate(params, vit, train_set);
    const train::EvalResult te = train::evaluate(params, vit, test_set);
    out << node << ",train," << train_set.size() << ',' << fmt_double(tr.mean_loss)
        << ',' << fmt_double(tr.topk_accuracy) << "\n";
    out << node << ",test," << test_set.size() << ',' << fmt_double(te.mean_loss)
        << ',' << fmt_double(te.topk_accuracy) << "\n";
    acc_total += te.topk_accuracy;
    ++acc_count;
  }
  const double mean_acc = acc_count == 0 ? 0.0 : acc_total / static_cast<double>(acc_count);
  out << "all,test_mean,," << ',' << fmt_double(mean_acc) << "\n";
  std::cout << "eval: mean test top-k accuracy " << fmt_double(mean_acc) << "\n";
  return 0;
}

int cmd_simulate(const RunConfig& cfg) {
  auto [events, meta] = trace::parse_trace(trace_path(cfg), trace_format(cfg));
  const auto n_nodes = static_cast<uint32_t>(cfg.get_uint("nodes"));
  const auto parts = trace::partition_by_node(events, n_nodes);

  const size_t k = capacity_for(cfg, meta.n_contents);
  const auto l_history = static_cast<size_t>(cfg.get_uint("pipeline.l_history"));
  const int64_t resolution = cfg.get_int("pipeline.resolution");
  const auto window = static_cast<size_t>(cfg.get_uint("pipeline.window"));

  std::vector<cachesim::PolicyKind> policies;
  for (const std::string& name : split_list(cfg.get("sim.policies"))) {
    policies.push_back(cachesim::policy_from_name(name));
  }
  if (policies.empty()) throw ConfigError("sim.policies is empty");

  std::ofstream report = open_csv(out_dir(cfg) / "report.csv");
  report << "policy,node_id,updating_time,hits,requests,cumulative_hit_ratio\n";
  std::map<std::string, std::pair<uint64_t, uint64_t>> totals;  // policy -> hits/requests

  for (uint32_t node = 0; node < n_nodes; ++node) {
    if (parts[node].empty()) {
      throw ConfigError("simulate: node " + std::to_string(node) + " has no events");
    }
    const auto matrix =
        pipeline::build_request_matrix(parts[node], resolution, meta.n_contents);
    const auto windowed = pipeline::window_requests(matrix, window);
    if (windowed.n_windows <= l_history) {
      throw ConfigError("simulate: node " + std::to_string(node) +
                        " trace too short for L = " + std::to_string(l_history));
    }

    for (cachesim::PolicyKind kind : policies) {
      cachesim::PolicyResult result;
      switch (kind) {
        case cachesim::PolicyKind::lru:
        case cachesim::PolicyKind::lfu: {
          cachesim::ReplayWindows w;
          w.t0 = matrix.t0;
          w.window_seconds = resolution * static_cast<int64_t>(window);
          w.first_window = l_history;
          w.n_windows = windowed.n_windows;
          result = kind == cachesim::PolicyKind::lru
                       ? cachesim::lru_replay(parts[node], k, w)
                       : cachesim::lfu_replay(parts[node], k, w);
          break;
        }
        case cachesim::PolicyKind::popcaching:
          result = cachesim::simulate_refresh_policy(
              windowed,
              [k](std::span<const int64_t> history, size_t n_contents, size_t) {
                return cachesim::popcaching_predict(history, n_contents, k);
              },
              l_history, k);
          break;
        case cachesim::PolicyKind::clairvoyant:
          result = cachesim::simulate_refresh_policy(
              windowed,
              [&windowed, k](std::span<const int64_t>, size_t, size_t u) {
                return cachesim::clairvoyant_topk(windowed, u, k);
              },
              l_history, k);
          break;
        case cachesim::PolicyKind::vitcat: {
          auto [params, vit] = model::load_checkpoint(checkpoint_file(cfg, node));
          if (vit.n_contents != meta.n_contents || vit.l_history != l_history ||
              vit.k_top != k) {
            throw IoError("simulate: checkpoint does not match pipeline shape "
                          "for node " + std::to_string(node));
          }
          result = cachesim::simulate_refresh_policy(
              windowed,
              [&params, &vit](std::span<const int64_t> history, size_t n_contents,
                              size_t) {
                std::vector<double> x(history.size());
                for (size_t i = 0; i < history.size(); ++i) {
                  x[i] = static_cast<double>(history[i]);
                }
                Tensor hist({history.size() / n_contents, n_contents}, std::move(x));
                return cachesim::vitcat_choose(params, vit, hist);
              },
              l_history, k);
          break;
        }
      }
      const std::string name = cachesim::policy_name(kind);
      for (const auto& row : result.rows) {
        report << name << ',' << node << ',' << row.u << ',' << row.hits << ','
               << row.requests << ',' << fmt_double(row.cumulative_ratio) << "\n";
      }
      totals[name].first += result.total_hits;
      totals[name].second += result.total_requests;
    }
  }

  std::ofstream summary = open_csv(out_dir(cfg) / "summary.csv");
  summary << "policy,hits,requests,hit_ratio\n";
  uint64_t any_requests = 0;
  for (const auto& [name, hr] : totals) any_requests = std::max(any_requests, hr.second);
  // the unattainable reference line: every request served from cache
  summary << "optimal," << any_requests << ',' << any_requests << ",1\n";
  for (const auto& [name, hr] : totals) {
    const double ratio = hr.second == 0 ? 0.0
                                        : static_cast<double>(hr.first) /
                                              static_cast<double>(hr.second);
    summary << name << ',' << hr.first << ',' << hr.second << ','
            << fmt_double(ratio) << "\n";
    std::cout << "simulate: " << name << " hit_ratio " << fmt_double(ratio) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  const uint64_t seed = cfg.get_uint("seed");
  const auto n_seeds = static_cast<uint64_t>(cfg.get_uint("gradcheck.seeds"));
  if (n_seeds == 0) throw ConfigError("gradcheck.seeds must be >= 1");

  // worst error per case across seeds
  std::vector<gradcheck::Case> worst;
  for (uint64_t s = 0; s < n_seeds; ++s) {
    const std::vector<gradcheck::Case> cases = gradcheck::run_gradient_suite(seed + s);
    if (worst.empty()) {
      worst = cases;
    } else {
      for (size_t i = 0; i < cases.size(); ++i) {
        worst[i].max_rel_err = std::max(worst[i].max_rel_err, cases[i].max_rel_err);
      }
    }
  }

  std::ofstream out = open_csv(out_dir(cfg) / "gradcheck.csv");
  out << "op,max_rel_err,threshold,status\n";
  bool all_pass = true;
  for (const gradcheck::Case& c : worst) {
    const bool ok = c.passed();
    all_pass = all_pass && ok;
    out << c.name << ',' << fmt_double(c.max_rel_err) << ','
        << fmt_double(c.threshold) << ',' << (ok ? "pass" : "FAIL") << "\n";
    std::printf("%-34s %12.3e  <  %.0e  %s\n", c.name.c_str(), c.max_rel_err,
                c.threshold, ok ? "pass" : "FAIL");
  }
  std::cout << (all_pass ? "gradcheck: all ops pass" : "gradcheck: FAILURES") << "\n";
  return all_pass ? 0 : 1;
}

int cmd_variants(const RunConfig& cfg) {
  const auto node = static_cast<uint32_t>(cfg.get_uint("variants.node"));
  const double train_frac = cfg.get_double("pipeline.train_frac");
  const uint64_t seed = cfg.get_uint("seed");

  auto [samples, header] = pipeline::read_samples(sample_file(cfg, node));
  auto [train_set, test_set] =
      pipeline::chronological_split(std::move(samples), train_frac);

  auto epochs = static_cast<size_t>(cfg.get_uint("variants.epochs"));
  if (epochs == 0) epochs = static_cast<size_t>(cfg.get_uint("train.epochs"));

  std::ofstream out = open_csv(out_dir(cfg) / "variants.csv");
  out << "model_id,n_layers,d_model,mlp_layers,mlp_size,n_heads,params,accuracy\n";
  for (int id = 1; id <= 6; ++id) {
    model::ViTConfig base =
        make_vit_config(cfg, header.l_history, header.n_contents, header.k);
    const model::ViTConfig vit = model::preset_variant(id, base);
    const size_t params_count = model::count_params(vit);

    Rng init_rng = Rng::stream(seed, "init-variant" + std::to_string(id));
    train::TrainConfig tcfg =
        make_train_config(cfg, derive_seed(seed, "train-variant" + std::to_string(id)));
    tcfg.epochs = epochs;
    train::TrainResult result = train::train(model::init_params(vit, init_rng), vit,
                                             train_set, test_set, tcfg);
    const train::EvalResult te = train::evaluate(result.params, vit, test_set);

    out << id << ',' << vit.n_layers << ',' << vit.d_model << ',' << vit.mlp_layers
        << ',' << vit.mlp_size << ',' << vit.n_heads << ',' << params_count << ','
        << fmt_double(te.topk_accuracy) << "\n";
    std::cout << "variants: model " << id << " params " << params_count
              << " test_acc " << fmt_double(te.topk_accuracy) << "\n";
  }
  return 0;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& cfg) {
  int rc = 0;
  if (command == "gen-trace") rc = cmd_gen_trace(cfg);
  else if (command == "preprocess") rc = cmd_preprocess(cfg);
  else if (command == "train") rc = cmd_train(cfg);
  else if (command == "eval") rc = cmd_eval(cfg);
  else if (command == "simulate") rc = cmd_simulate(cfg);
  else if (command == "gradcheck") rc = cmd_gradcheck(cfg);
  else if (command == "variants") rc = cmd_variants(cfg);
  else throw ConfigError("unknown command: " + command);
  write_manifest(cfg, command);
  return rc;
}

}  // namespace vitcat::cli
