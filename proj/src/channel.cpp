#include "sgt/channel.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace sgt {

Constellation::Constellation(int bits_per_symbol) : bits_per_symbol_(bits_per_symbol) {
  if (bits_per_symbol < 2 || bits_per_symbol % 2 != 0 || bits_per_symbol > 12) {
    throw std::invalid_argument("Constellation: bits per symbol must be even and in [2, 12], got " +
                                std::to_string(bits_per_symbol));
  }
  name_ = bits_per_symbol == 2 ? "qpsk" : std::to_string(1 << bits_per_symbol) + "qam";
  const int m = levels_per_dim();
  const double step = std::sqrt(0.5 * 3.0 / (static_cast<double>(m) * m - 1.0));
  level_by_label_.assign(static_cast<std::size_t>(m), 0.0);
  for (int k = 0; k < m; ++k) {
    const unsigned gray = static_cast<unsigned>(k) ^ (static_cast<unsigned>(k) >> 1);
    level_by_label_[gray] = static_cast<double>(m - 1 - 2 * k) * step;
  }
}

Constellation Constellation::from_name(const std::string& name) {
  if (name == "qpsk") return Constellation(2);
  if (name == "16qam") return Constellation(4);
  if (name == "64qam") return Constellation(6);
  throw std::invalid_argument("unknown constellation '" + name + "'");
}

unsigned Constellation::nearest_label(double v) const {
  unsigned best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (unsigned label = 0; label < level_by_label_.size(); ++label) {
    const double d = std::abs(v - level_by_label_[label]);
    if (d < best_d) {
      best_d = d;
      best = label;
    }
  }
  return best;
}

double snr_to_sigma(double snr_db, const Constellation& c, int n_t) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_to_sigma: non-finite SNR");
  return static_cast<double>(n_t) * c.symbol_energy() / std::pow(10.0, snr_db / 10.0);
}

MimoInstance sample_instance_at(const SystemDims& dims, const Constellation& c, double snr_db,
                                std::uint64_t seed, std::uint64_t index) {
  Rng rng(derive_seed(seed, {index}));
  return sample_instance<double>(dims, c, snr_db, rng);
}

namespace {

void put(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << ',' << buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::runtime_error("instances csv: malformed number '" + s + "'");
  return v;
}

}  // namespace

void write_instances_csv(std::ostream& os, std::span<const MimoInstance> batch,
                         const Constellation& c) {
  if (batch.empty()) throw std::invalid_argument("write_instances_csv: empty batch");
  const SystemDims dims = batch.front().dims();
  const Index rr = dims.real_rx(), rt = dims.real_tx();
  const int bpd = c.bits_per_dim();
  os << "# sgt-instances v1 n_t=" << dims.n_t << " n_r=" << dims.n_r << " bits_per_dim=" << bpd
     << '\n';
  os << "snr_db";
  for (Index j = 0; j < rr; ++j) os << ",sigma2_" << j;
  for (Index r = 0; r < rr; ++r)
    for (Index col = 0; col < rt; ++col) os << ",H_" << r << '_' << col;
  for (Index j = 0; j < rr; ++j) os << ",y_" << j;
  for (Index i = 0; i < rt; ++i)
    for (int b = 0; b < bpd; ++b) os << ",bit_" << i << '_' << b;
  os << '\n';
  for (const auto& inst : batch) {
    if (!(inst.dims() == dims)) throw DimensionError("write_instances_csv: mixed dimensions");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", inst.snr_db);
    os << buf;
    for (Index j = 0; j < rr; ++j) put(os, inst.sigma2(j));
    for (Index r = 0; r < rr; ++r)
      for (Index col = 0; col < rt; ++col) put(os, inst.H(r, col));
    for (Index j = 0; j < rr; ++j) put(os, inst.y(j));
    for (Index i = 0; i < rt; ++i)
      for (int b = 0; b < bpd; ++b) os << ',' << static_cast<int>(inst.bits(i, b));
    os << '\n';
  }
}

std::vector<MimoInstance> read_instances_csv(std::istream& is, const Constellation& c) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("instances csv: empty input");
  int n_t = 0, n_r = 0, bpd = 0;
  if (std::sscanf(line.c_str(), "# sgt-instances v1 n_t=%d n_r=%d bits_per_dim=%d", &n_t, &n_r,
                  &bpd) != 3) {
    throw std::runtime_error("instances csv: bad header line '" + line + "'");
  }
  if (bpd != c.bits_per_dim()) {
    throw std::runtime_error("instances csv: bits_per_dim " + std::to_string(bpd) +
                             " does not match constellation " + c.name());
  }
  if (!std::getline(is, line)) throw std::runtime_error("instances csv: missing column header");
  const SystemDims dims{n_t, n_r};
  const Index rr = dims.real_rx(), rt = dims.real_tx();
  const std::size_t expected = 1 + static_cast<std::size_t>(rr + rr * rt + rr + rt * bpd);
  std::vector<MimoInstance> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != expected) {
      throw std::runtime_error("instances csv: expected " + std::to_string(expected) +
                               " fields, got " + std::to_string(fields.size()));
    }
    MimoInstance inst;
    std::size_t k = 0;
    inst.snr_db = parse_double(fields[k++]);
    inst.sigma2.resize(rr);
    for (Index j = 0; j < rr; ++j) inst.sigma2(j) = parse_double(fields[k++]);
    inst.H.resize(rr, rt);
    for (Index r = 0; r < rr; ++r)
      for (Index col = 0; col < rt; ++col) inst.H(r, col) = parse_double(fields[k++]);
    inst.y.resize(rr);
    for (Index j = 0; j < rr; ++j) inst.y(j) = parse_double(fields[k++]);
    inst.bits.resize(rt, bpd);
    for (Index i = 0; i < rt; ++i)
      for (int b = 0; b < bpd; ++b) {
        const int v = std::stoi(fields[k++]);
        if (v != 0 && v != 1) throw std::runtime_error("instances csv: bit out of range");
        inst.bits(i, b) = static_cast<std::uint8_t>(v);
      }
    inst.x = modulate<double>(inst.bits, c);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace sgt
