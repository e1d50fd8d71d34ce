#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sgt/experiment.hpp"
#include "sgt/serialization.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Soft graph transformer MIMO detection toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> variant;
  std::vector<std::string> checkpoints;
  std::optional<std::string> ordering;
  double min_snr = 10.0;
  std::vector<int> sizes;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the experiment and training seeds");
    sub->add_option("-o,--out", out_dir, "output directory");
  };

  auto* train = app.add_subcommand("train", "train a model and write checkpoint.sgt + train_log.csv");
  common(train);
  train->add_option("--variant", variant, "full-sgt | no-cross-attention | qr-baseline");

  auto* ber = app.add_subcommand("ber", "Monte-Carlo BER sweep, writes ber.csv");
  common(ber);
  ber->add_option("--checkpoint", checkpoints, "trained model (repeatable)");
  ber->add_option("--assert-ordering", ordering, "e.g. ml<=sgt<=lmmse; exit 3 when violated");
  ber->add_option("--assert-min-snr", min_snr, "lowest SNR (dB) the ordering is checked at");

  auto* ablate = app.add_subcommand("ablate", "train every variant, writes ablation.csv");
  common(ablate);

  auto* complexity = app.add_subcommand("complexity", "MAC counts vs system size");
  common(complexity);
  complexity->add_option("--sizes", sizes, "square system sizes N")->expected(2, -1);
  complexity->add_option("--variant", variant, "architecture variant");

  CLI11_PARSE(app, argc, argv);

  try {
    sgt::ExperimentConfig cfg = sgt::load_experiment(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.train.seed = *seed;
    }
    if (out_dir) cfg.output_dir = *out_dir;
    if (variant) cfg.model.variant = sgt::variant_from_string(*variant);
    if (!sizes.empty()) cfg.complexity_sizes = sizes;
    cfg.model.validate();
    cfg.train.validate();

    if (train->parsed()) return sgt::cmd_train(cfg, std::cerr);
    if (ber->parsed()) return sgt::cmd_ber(cfg, checkpoints, ordering, min_snr, std::cerr);
    if (ablate->parsed()) return sgt::cmd_ablate(cfg, std::cerr);
    return sgt::cmd_complexity(cfg, std::cerr);
  } catch (const sgt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
