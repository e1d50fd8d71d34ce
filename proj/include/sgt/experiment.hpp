#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgt/baselines.hpp"
#include "sgt/model.hpp"
#include "sgt/trainer.hpp"

namespace sgt {

struct EvaluationConfig {
  std::vector<std::string> detectors;  // ml, lmmse, oamp, sgt
  std::vector<double> snr_db;
  std::uint64_t min_trials = 1000;
  std::uint64_t max_trials = 100000;
  std::uint64_t target_errors = 100;
  int oamp_iterations = 10;
};

/// Everything a CLI run depends on. Round-trips through JSON losslessly.
struct ExperimentConfig {
  SystemDims dims{4, 4};
  std::string constellation = "qpsk";
  SgtConfig model;
  TrainConfig train;
  EvaluationConfig evaluation;
  std::vector<int> complexity_sizes{4, 8, 16, 32};
  std::uint64_t seed = 1;
  std::string output_dir = "out";
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Strict: every field must be present. Throws ConfigError naming the field.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

/// "sgt <command> config_hash=<hash> seed=<seed>"; the hash ignores output_dir.
std::string provenance(const std::string& command, const ExperimentConfig& cfg);

/// Hard-decision adapter for a named baseline (ml, lmmse, oamp).
BatchDetector make_baseline_detector(const std::string& name, const Constellation& c,
                                     int oamp_iterations);
/// Hard-decision adapter around a trained model (uninformative priors).
BatchDetector make_sgt_detector(const SgtModel& model);

/// Parses "ml<=sgt<=lmmse" into its detector chain.
std::vector<std::string> parse_ordering(const std::string& expr);

struct OrderingViolation {
  double snr_db;
  std::string lower, upper;
  double ber_lower, ber_upper;
};

/// Checks every adjacent pair of `chain` at each SNR >= min_snr_db.
std::vector<OrderingViolation> check_ordering(const std::vector<BerRecord>& records,
                                              const std::vector<std::string>& chain,
                                              double min_snr_db);

void write_ber_csv(std::ostream& os, const std::vector<BerRecord>& records,
                   const std::string& provenance);

// Commands. Each writes into cfg.output_dir and returns a process exit code.

int cmd_train(const ExperimentConfig& cfg, std::ostream& log);
int cmd_ber(const ExperimentConfig& cfg, const std::vector<std::string>& checkpoints,
            const std::optional<std::string>& assert_ordering, double assert_min_snr,
            std::ostream& log);
int cmd_ablate(const ExperimentConfig& cfg, std::ostream& log);
int cmd_complexity(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace sgt
