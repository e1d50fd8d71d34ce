#include "sgt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>

#include "sgt/parallel.hpp"
#include "sgt/random.hpp"

namespace sgt {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (batch_size < 1) fail("train.batch_size must be >= 1");
  if (steps < 1) fail("train.steps must be >= 1");
  if (!(learning_rate > 0.0)) fail("train.learning_rate must be positive");
  if (warmup_steps < 0) fail("train.warmup_steps must be >= 0");
  if (!(snr_max_db > snr_min_db)) fail("train.snr range must be non-degenerate (snr_max_db > snr_min_db)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("train.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("train.epsilon must be positive");
  if (grad_clip < 0.0) fail("train.grad_clip must be >= 0");
  if (prior_fraction < 0.0 || prior_fraction > 1.0) fail("train.prior_fraction must lie in [0, 1]");
  if (prior_max_llr < 0.0) fail("train.prior_max_llr must be >= 0");
  if (grad_chunks < 1 || grad_chunks > batch_size) fail("train.grad_chunks must lie in [1, batch_size]");
  if (checkpoint_every < 0) fail("train.checkpoint_every must be >= 0");
  if (validation_every < 0) fail("train.validation_every must be >= 0");
  if (validation_every > 0 && validation_trials < 1) fail("train.validation_trials must be >= 1");
}

Tensor bit_loss(const Tensor& pred, const Matrix& target) {
  return binary_cross_entropy(pred, Tensor::constant(target));
}

double learning_rate_at(const TrainConfig& cfg, int step) {
  if (step < cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  const double span = std::max(1, cfg.steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Matrix simulated_priors(const BitMatrix& bits, double mu, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix p(bits.rows(), bits.cols());
  const double spread = std::sqrt(2.0 * mu);
  for (Index i = 0; i < bits.rows(); ++i) {
    for (Index b = 0; b < bits.cols(); ++b) {
      const double sign = bits(i, b) ? -1.0 : 1.0;
      p(i, b) = llr_to_prob(sign * mu + spread * normal(rng));
    }
  }
  return p;
}

namespace {

struct Sample {
  MimoInstance instance;
  std::optional<Matrix> priors;
};

Sample draw_sample(const SystemDims& dims, const Constellation& c, const TrainConfig& cfg, int step,
                   int index, std::span<const MimoInstance> dataset) {
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index)}));
  Sample s;
  if (dataset.empty()) {
    std::uniform_real_distribution<double> snr(cfg.snr_min_db, cfg.snr_max_db);
    s.instance = sample_instance<double>(dims, c, snr(rng), rng);
  } else {
    const auto k = (static_cast<std::size_t>(step) * static_cast<std::size_t>(cfg.batch_size) +
                    static_cast<std::size_t>(index)) % dataset.size();
    s.instance = dataset[k];
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < cfg.prior_fraction) {
    s.priors = simulated_priors(s.instance.bits, u(rng) * cfg.prior_max_llr, rng);
  }
  return s;
}

struct AdamState {
  std::vector<Matrix> m, v;
};

}  // namespace

TrainLog train(SgtModel& model, const Constellation& c, const TrainConfig& cfg,
               const TrainHooks& hooks, std::span<const MimoInstance> dataset) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto params = model.parameters();
  AdamState adam;
  for (const auto& [_, p] : params) {
    adam.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    adam.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  std::vector<Matrix> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (const auto& [_, p] : params) snapshot.push_back(p.value());
  };
  take_snapshot();

  const int workers = workers_from_env();
  const int chunks = cfg.grad_chunks;
  TrainLog log;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Sample> samples(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      samples[static_cast<std::size_t>(i)] = draw_sample(model.dims(), c, cfg, step, i, dataset);
    }

    // Per-chunk gradients, reduced below in chunk order.
    std::vector<std::vector<Matrix>> chunk_grads(static_cast<std::size_t>(chunks));
    std::vector<double> chunk_loss(static_cast<std::size_t>(chunks), 0.0);
    std::vector<std::string> chunk_failure(static_cast<std::size_t>(chunks));
    parallel_for(static_cast<std::size_t>(chunks), workers, [&](std::size_t ci) {
      try {
      const int begin = static_cast<int>(ci) * cfg.batch_size / chunks;
      const int end = static_cast<int>(ci + 1) * cfg.batch_size / chunks;
      std::vector<MimoInstance> insts;
      std::vector<std::optional<Matrix>> priors;
      Matrix target(static_cast<Index>(end - begin) * model.sym_tokens(), model.bits_per_dim());
      for (int i = begin; i < end; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(i)];
        insts.push_back(s.instance);
        priors.push_back(s.priors);
        target.middleRows(static_cast<Index>(i - begin) * model.sym_tokens(), model.sym_tokens()) =
            bit_zero_probability(s.instance.bits);
      }
      const Tensor pred = forward(model, prepare_batch(model, insts, priors));
      const double weight = static_cast<double>(end - begin) / static_cast<double>(cfg.batch_size);
      const Tensor loss = scale(bit_loss(pred, target), weight);
      chunk_loss[ci] = loss.item();
      const Gradients g = backward(loss);
      auto& out = chunk_grads[ci];
      for (const auto& [_, p] : params) out.push_back(g.of(p));
      } catch (const NonFiniteError& e) {
        chunk_failure[ci] = e.what();
      }
    });

    std::string failure;
    for (const auto& f : chunk_failure) {
      if (failure.empty()) failure = f;
    }
    double loss = 0.0;
    for (double l : chunk_loss) loss += l;
    std::vector<Matrix> grads;
    double norm2 = 0.0;
    if (failure.empty()) {
      grads = std::move(chunk_grads.front());
      for (std::size_t ci = 1; ci < chunk_grads.size(); ++ci) {
        for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += chunk_grads[ci][k];
      }
      for (const auto& g : grads) norm2 += g.squaredNorm();
    }
    if (!failure.empty() || !std::isfinite(loss) || !std::isfinite(norm2)) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k].second;
        p.mutable_value() = snapshot[k];
      }
      log.aborted = true;
      log.abort_reason = "non-finite loss at step " + std::to_string(step + 1);
      if (!failure.empty()) log.abort_reason += " (" + failure + ")";
      break;
    }
    const double clip = (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip)
                            ? cfg.grad_clip / std::sqrt(norm2)
                            : 1.0;

    const double lr = learning_rate_at(cfg, step);
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Matrix g = grads[k] * clip;
      adam.m[k] = cfg.beta1 * adam.m[k] + (1.0 - cfg.beta1) * g;
      adam.v[k] = cfg.beta2 * adam.v[k] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      Tensor p = params[k].second;
      p.mutable_value().array() -=
          lr * (adam.m[k].array() / c1) / ((adam.v[k].array() / c2).sqrt() + cfg.epsilon);
    }
    log.loss.push_back(loss);
    log.lr.push_back(lr);
    if (hooks.on_step) hooks.on_step(step + 1, loss);

    const bool last = step + 1 == cfg.steps;
    if (cfg.validation_every > 0 && ((step + 1) % cfg.validation_every == 0 || last) &&
        !cfg.validation_snr_db.empty()) {
      BerOptions opts;
      opts.min_trials = opts.max_trials = static_cast<std::uint64_t>(cfg.validation_trials);
      opts.target_errors = 0;
      opts.workers = workers;
      BatchDetector det = [&model](std::span<const MimoInstance> batch) {
        std::vector<BitMatrix> out;
        for (const auto& llr : detect_soft_batch(model, batch)) out.push_back(decide_bits_from_llr(llr));
        return out;
      };
      const auto records = evaluate_ber("sgt", det, model.dims(), c, cfg.validation_snr_db, opts,
                                        derive_seed(cfg.seed, {0x7661'6cULL}));
      for (const auto& r : records) log.validation.push_back({step + 1, r.snr_db, r.ber});
    }
    if ((cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) || last) {
      take_snapshot();
      log.last_checkpoint_step = step + 1;
      if (hooks.on_checkpoint) hooks.on_checkpoint(step + 1, model);
    }
  }
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

void write_train_log_csv(std::ostream& os, const TrainLog& log, const TrainConfig& cfg,
                         const std::string& provenance) {
  os << "# " << provenance << '\n';
  if (log.aborted) os << "# aborted: " << log.abort_reason << '\n';
  os << "step,loss,lr";
  for (double s : cfg.validation_snr_db) {
    char buf[48];
    std::snprintf(buf, sizeof buf, ",val_ber@%gdB", s);
    os << buf;
  }
  os << '\n';
  std::size_t vi = 0;
  for (std::size_t i = 0; i < log.loss.size(); ++i) {
    const int step = static_cast<int>(i) + 1;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", step, log.loss[i], log.lr[i]);
    os << buf;
    for (std::size_t k = 0; k < cfg.validation_snr_db.size(); ++k) {
      os << ',';
      if (vi < log.validation.size() && log.validation[vi].step == step) {
        std::snprintf(buf, sizeof buf, "%.17g", log.validation[vi].ber);
        os << buf;
        ++vi;
      }
    }
    os << '\n';
  }
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  window = std::max<std::size_t>(window, 1);
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::optional<int> steps_to_reach(std::span<const double> loss, double threshold,
                                  std::size_t window) {
  const auto avg = moving_average(loss, window);
  for (std::size_t i = 0; i < avg.size(); ++i) {
    if (i + 1 >= std::min(window, avg.size()) && avg[i] <= threshold) return static_cast<int>(i + 1);
  }
  return std::nullopt;
}

// BER ------------------------------------------------------------------------

std::pair<double, double> wilson_interval(std::uint64_t errors, std::uint64_t bits) {
  if (bits == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double n = static_cast<double>(bits);
  const double p = static_cast<double>(errors) / n;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  const double lo = errors == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = errors == bits ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

namespace {

constexpr double kZ95OneSided = 1.6448536269514722;

double difference_se(const BerRecord& a, const BerRecord& b) {
  const double va = a.ber * (1.0 - a.ber) / static_cast<double>(std::max<std::uint64_t>(a.bits, 1));
  const double vb = b.ber * (1.0 - b.ber) / static_cast<double>(std::max<std::uint64_t>(b.bits, 1));
  return std::sqrt(va + vb);
}

}  // namespace

bool ber_not_greater(const BerRecord& a, const BerRecord& b) {
  if (a.ber <= b.ber) return true;
  const double se = difference_se(a, b);
  if (se == 0.0) return false;
  return (a.ber - b.ber) / se <= kZ95OneSided;
}

bool ber_less(const BerRecord& a, const BerRecord& b) {
  if (a.ber >= b.ber) return false;
  const double se = difference_se(a, b);
  return se == 0.0 || (b.ber - a.ber) / se > kZ95OneSided;
}

std::vector<BerRecord> evaluate_ber(const std::string& name, const BatchDetector& detector,
                                    const SystemDims& dims, const Constellation& c,
                                    std::span<const double> snr_db, const BerOptions& opts,
                                    std::uint64_t seed) {
  if (opts.chunk == 0) throw std::invalid_argument("evaluate_ber: chunk must be positive");
  const std::uint64_t bits_per_trial =
      static_cast<std::uint64_t>(dims.real_tx()) * static_cast<std::uint64_t>(c.bits_per_dim());
  std::vector<BerRecord> records;
  for (std::size_t k = 0; k < snr_db.size(); ++k) {
    const double snr = snr_db[k];
    const std::uint64_t stream = derive_seed(seed, {static_cast<std::uint64_t>(k)});
    BerRecord rec;
    rec.detector = name;
    rec.snr_db = snr;
    rec.dims = dims;
    bool done = false;
    while (!done && rec.trials < opts.max_trials) {
      // One wave of chunks; folded strictly in chunk order.
      const std::size_t wave = static_cast<std::size_t>(std::max(opts.workers, 1));
      std::vector<std::uint64_t> chunk_start, chunk_len;
      std::uint64_t next = rec.trials;
      for (std::size_t w = 0; w < wave && next < opts.max_trials; ++w) {
        const std::uint64_t len = std::min(opts.chunk, opts.max_trials - next);
        chunk_start.push_back(next);
        chunk_len.push_back(len);
        next += len;
      }
      std::vector<std::uint64_t> chunk_errors(chunk_start.size(), 0);
      parallel_for(chunk_start.size(), opts.workers, [&](std::size_t w) {
        std::vector<MimoInstance> batch;
        batch.reserve(chunk_len[w]);
        for (std::uint64_t t = 0; t < chunk_len[w]; ++t) {
          batch.push_back(sample_instance_at(dims, c, snr, stream, chunk_start[w] + t));
        }
        const auto decided = detector(batch);
        if (decided.size() != batch.size()) {
          throw std::runtime_error("evaluate_ber: detector returned a wrong number of results");
        }
        std::uint64_t errs = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          errs += static_cast<std::uint64_t>((decided[i].array() != batch[i].bits.array()).count());
        }
        chunk_errors[w] = errs;
      });
      for (std::size_t w = 0; w < chunk_start.size(); ++w) {
        rec.trials += chunk_len[w];
        rec.errors += chunk_errors[w];
        if (rec.trials >= opts.min_trials && rec.errors >= opts.target_errors) {
          done = true;
          break;
        }
      }
    }
    rec.bits = rec.trials * bits_per_trial;
    rec.capped = rec.errors < opts.target_errors;
    rec.ber = rec.bits ? static_cast<double>(rec.errors) / static_cast<double>(rec.bits) : 0.0;
    std::tie(rec.ci_low, rec.ci_high) = wilson_interval(rec.errors, rec.bits);
    records.push_back(rec);
  }
  return records;
}

}  // namespace sgt
