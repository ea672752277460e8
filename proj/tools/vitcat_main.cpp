#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vitcat/cli.hpp"
#include "vitcat/errors.hpp"

namespace {

constexpr const char* kCommands[] = {"gen-trace", "preprocess", "train",   "eval",
                                     "simulate",  "gradcheck",  "variants"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ViT-CAT popularity prediction and edge-cache simulation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  int64_t seed_override = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed_override, "override the master seed");
  app.add_option("--out", out_override, "override the output directory");
  app.add_option("--set", overrides, "extra key=value overrides")->take_all();

  std::string chosen;
  for (const char* name : kCommands) {
    app.add_subcommand(name)->callback([&chosen, name] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    vitcat::cli::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        throw vitcat::ConfigError("--set expects key=value, got '" + kv + "'");
      }
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
    if (!out_override.empty()) cfg.set("out", out_override);
    return vitcat::cli::run_command(chosen, cfg);
  } catch (const vitcat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const vitcat::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const vitcat::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const vitcat::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const vitcat::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
