#include "sgt/complexity.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace sgt {

std::uint64_t OpCount::total() const {
  std::uint64_t t = 0;
  for (const auto& [_, v] : macs) t += v;
  return t;
}

std::uint64_t OpCount::of(const std::string& category) const {
  auto it = macs.find(category);
  return it == macs.end() ? 0 : it->second;
}

OpCount count_forward(const SgtConfig& config, const SystemDims& dims, int bits_per_dim) {
  SgtModel model(config, dims, bits_per_dim, 7);
  Rng rng(11);
  const MimoInstance inst = sample_instance<double>(dims, Constellation(2 * bits_per_dim), 10.0, rng);
  MacCounter counter;
  {
    MacScope scope(&counter, "other");
    forward(model, prepare_batch(model, std::span(&inst, 1)));
  }
  OpCount out;
  out.dims = dims;
  out.config = config;
  out.bits_per_dim = bits_per_dim;
  for (const auto& [k, v] : counter.counts()) {
    if (v) out.macs[k] = v;
  }
  return out;
}

OpCount symbolic_count(const SgtConfig& config, const SystemDims& dims, int bits_per_dim) {
  using u64 = std::uint64_t;
  const u64 t = static_cast<u64>(dims.real_tx());
  const u64 r = config.variant == Variant::QrBaseline ? t : static_cast<u64>(dims.real_rx());
  const u64 d = static_cast<u64>(config.d_model);
  const u64 h = static_cast<u64>(config.ffn_hidden);
  const u64 b = static_cast<u64>(bits_per_dim);
  const u64 layers = static_cast<u64>(config.n_layers);

  OpCount out;
  out.dims = dims;
  out.config = config;
  out.bits_per_dim = bits_per_dim;
  out.macs["embedding"] = t * b * d + t * d * d + r * (t + 2) * d + r * d * d;
  u64 proj = 0, score = 0, ffn = 0;
  if (config.variant == Variant::FullSgt) {
    proj = 4 * t * d * d + 4 * r * d * d + 2 * t * d * d + 2 * r * d * d;
    score = t * t * d + r * r * d + t * r * d;
    if (config.bidirectional_cross) {
      proj += 2 * r * d * d + 2 * t * d * d;
      score += r * t * d;
    }
    ffn = 2 * t * d * h + 2 * r * d * h;
  } else {
    proj = 4 * r * d * d;
    score = r * r * d;
    ffn = 2 * r * d * h;
  }
  out.macs["projection"] = layers * proj;
  out.macs["attention_score"] = layers * score;
  out.macs["value_mix"] = layers * score;
  out.macs["ffn"] = layers * ffn;
  if (config.variant == Variant::NoCrossAttention) out.macs["compress"] = t * r * d;
  out.macs["head"] = t * d * d + t * d * b;
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("loglog_slope: need at least two matching points");
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

ScalingReport scaling_report(const SgtConfig& config, std::span<const int> sizes, int bits_per_dim) {
  ScalingReport rep;
  rep.exact_agreement = true;
  std::vector<double> n;
  std::map<std::string, std::vector<double>> series;
  for (int size : sizes) {
    const SystemDims dims{size, size};
    rep.instrumented.push_back(count_forward(config, dims, bits_per_dim));
    rep.symbolic.push_back(symbolic_count(config, dims, bits_per_dim));
    if (rep.instrumented.back().macs != rep.symbolic.back().macs) rep.exact_agreement = false;
    const OpCount& c = rep.instrumented.back();
    n.push_back(static_cast<double>(size));
    series["attention_score"].push_back(static_cast<double>(c.of("attention_score")));
    series["value_mix"].push_back(static_cast<double>(c.of("value_mix")));
    series["quadratic"].push_back(static_cast<double>(c.of("attention_score") + c.of("value_mix") +
                                                      c.of("embedding") + c.of("compress")));
    series["linear"].push_back(
        static_cast<double>(c.of("projection") + c.of("ffn") + c.of("head")));
    series["total"].push_back(static_cast<double>(c.total()));
  }
  if (n.size() >= 2) {
    for (const auto& [k, v] : series) rep.slopes[k] = loglog_slope(n, v);
  }
  return rep;
}

void write_complexity_csv(std::ostream& os, const ScalingReport& report,
                          const std::string& provenance) {
  os << "# " << provenance << '\n';
  os << "n_t,n_r,d_model,n_layers,category,macs_instrumented,macs_symbolic\n";
  for (std::size_t i = 0; i < report.instrumented.size(); ++i) {
    const OpCount& a = report.instrumented[i];
    const OpCount& s = report.symbolic[i];
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> rows;
    for (const auto& [k, v] : a.macs) rows[k].first = v;
    for (const auto& [k, v] : s.macs) rows[k].second = v;
    for (const auto& [k, v] : rows) {
      os << a.dims.n_t << ',' << a.dims.n_r << ',' << a.config.d_model << ',' << a.config.n_layers
         << ',' << k << ',' << v.first << ',' << v.second << '\n';
    }
    os << a.dims.n_t << ',' << a.dims.n_r << ',' << a.config.d_model << ',' << a.config.n_layers
       << ",total," << a.total() << ',' << s.total() << '\n';
  }
}

void write_slopes_csv(std::ostream& os, const ScalingReport& report, const std::string& provenance) {
  os << "# " << provenance << '\n';
  os << "term,slope\n";
  for (const auto& [k, v] : report.slopes) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    os << k << ',' << buf << '\n';
  }
}

}  // namespace sgt
