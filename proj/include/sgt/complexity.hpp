#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sgt/model.hpp"

namespace sgt {

/// Multiply-accumulate counts of one single-instance forward pass, by
/// category: embedding, projection, attention_score, value_mix, ffn,
/// compress, head.
struct OpCount {
  SystemDims dims;
  SgtConfig config;
  int bits_per_dim = 1;
  std::map<std::string, std::uint64_t> macs;

  std::uint64_t total() const;
  std::uint64_t of(const std::string& category) const;
};

/// Counts MACs by running an instrumented forward pass of a freshly
/// initialised model.
OpCount count_forward(const SgtConfig& config, const SystemDims& dims, int bits_per_dim = 1);

/// Closed-form counts for the same architecture.
OpCount symbolic_count(const SgtConfig& config, const SystemDims& dims, int bits_per_dim = 1);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

struct ScalingReport {
  std::vector<OpCount> instrumented;
  std::vector<OpCount> symbolic;
  /// Slopes vs N for "attention_score", "value_mix", "quadratic" (score + mix
  /// + embedding), "linear" (projection + ffn + head) and "total".
  std::map<std::string, double> slopes;
  bool exact_agreement = false;
};

/// Square systems N x N for each N in `sizes`.
ScalingReport scaling_report(const SgtConfig& config, std::span<const int> sizes,
                             int bits_per_dim = 1);

/// Rows: n_t,n_r,d_model,n_layers,category,macs_instrumented,macs_symbolic.
void write_complexity_csv(std::ostream& os, const ScalingReport& report,
                          const std::string& provenance);
/// Rows: term,slope.
void write_slopes_csv(std::ostream& os, const ScalingReport& report, const std::string& provenance);

}  // namespace sgt
