#include "sgt/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sgt/complexity.hpp"
#include "sgt/parallel.hpp"
#include "sgt/serialization.hpp"

namespace sgt {

namespace {

using nlohmann::json;

json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"steps", t.steps},
          {"learning_rate", t.learning_rate},
          {"warmup_steps", t.warmup_steps},
          {"snr_min_db", t.snr_min_db},
          {"snr_max_db", t.snr_max_db},
          {"seed", t.seed},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"grad_clip", t.grad_clip},
          {"prior_fraction", t.prior_fraction},
          {"prior_max_llr", t.prior_max_llr},
          {"grad_chunks", t.grad_chunks},
          {"checkpoint_every", t.checkpoint_every},
          {"validation_every", t.validation_every},
          {"validation_snr_db", t.validation_snr_db},
          {"validation_trials", t.validation_trials}};
}

TrainConfig train_from_json(const json& j) {
  const std::string p = "train";
  TrainConfig t;
  t.batch_size = field<int>(j, "batch_size", p);
  t.steps = field<int>(j, "steps", p);
  t.learning_rate = field<double>(j, "learning_rate", p);
  t.warmup_steps = field<int>(j, "warmup_steps", p);
  t.snr_min_db = field<double>(j, "snr_min_db", p);
  t.snr_max_db = field<double>(j, "snr_max_db", p);
  t.seed = field<std::uint64_t>(j, "seed", p);
  t.beta1 = field<double>(j, "beta1", p);
  t.beta2 = field<double>(j, "beta2", p);
  t.epsilon = field<double>(j, "epsilon", p);
  t.grad_clip = field<double>(j, "grad_clip", p);
  t.prior_fraction = field<double>(j, "prior_fraction", p);
  t.prior_max_llr = field<double>(j, "prior_max_llr", p);
  t.grad_chunks = field<int>(j, "grad_chunks", p);
  t.checkpoint_every = field<int>(j, "checkpoint_every", p);
  t.validation_every = field<int>(j, "validation_every", p);
  t.validation_snr_db = field<std::vector<double>>(j, "validation_snr_db", p);
  t.validation_trials = field<int>(j, "validation_trials", p);
  return t;
}

json to_json(const EvaluationConfig& e) {
  return {{"detectors", e.detectors},         {"snr_db", e.snr_db},
          {"min_trials", e.min_trials},       {"max_trials", e.max_trials},
          {"target_errors", e.target_errors}, {"oamp_iterations", e.oamp_iterations}};
}

EvaluationConfig evaluation_from_json(const json& j) {
  const std::string p = "evaluation";
  EvaluationConfig e;
  e.detectors = field<std::vector<std::string>>(j, "detectors", p);
  e.snr_db = field<std::vector<double>>(j, "snr_db", p);
  e.min_trials = field<std::uint64_t>(j, "min_trials", p);
  e.max_trials = field<std::uint64_t>(j, "max_trials", p);
  e.target_errors = field<std::uint64_t>(j, "target_errors", p);
  e.oamp_iterations = field<int>(j, "oamp_iterations", p);
  return e;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string snr_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  return os;
}

BerOptions ber_options(const EvaluationConfig& e) {
  BerOptions o;
  o.min_trials = e.min_trials;
  o.max_trials = e.max_trials;
  o.target_errors = e.target_errors;
  o.workers = workers_from_env();
  return o;
}

TrainHooks progress_hooks(std::ostream& log, int steps, const std::string& tag) {
  TrainHooks hooks;
  const int every = std::max(1, steps / 20);
  hooks.on_step = [&log, every, tag](int step, double loss) {
    if (step % every == 0) log << tag << "step " << step << " loss " << loss << '\n';
  };
  return hooks;
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  return {{"system", {{"n_t", cfg.dims.n_t}, {"n_r", cfg.dims.n_r}, {"constellation", cfg.constellation}}},
          {"model", to_json(cfg.model)},
          {"train", to_json(cfg.train)},
          {"evaluation", to_json(cfg.evaluation)},
          {"complexity_sizes", cfg.complexity_sizes},
          {"seed", cfg.seed},
          {"output_dir", cfg.output_dir}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg;
  const json& sys = require_field(j, "system", "");
  cfg.dims.n_t = field<int>(sys, "n_t", "system");
  cfg.dims.n_r = field<int>(sys, "n_r", "system");
  cfg.constellation = field<std::string>(sys, "constellation", "system");
  Constellation::from_name(cfg.constellation);
  cfg.model = sgt_config_from_json(require_field(j, "model", ""), "model");
  cfg.train = train_from_json(require_field(j, "train", ""));
  cfg.evaluation = evaluation_from_json(require_field(j, "evaluation", ""));
  cfg.complexity_sizes = field<std::vector<int>>(j, "complexity_sizes", "");
  cfg.seed = field<std::uint64_t>(j, "seed", "");
  cfg.output_dir = field<std::string>(j, "output_dir", "");
  if (cfg.dims.n_t < 1 || cfg.dims.n_r < 1) throw ConfigError("system.n_t and system.n_r must be >= 1");
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

std::string provenance(const std::string& command, const ExperimentConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("output_dir");
  return "sgt " + command + " config_hash=" + config_hash(j) +
         " seed=" + std::to_string(cfg.seed);
}

BatchDetector make_baseline_detector(const std::string& name, const Constellation& c,
                                     int oamp_iterations) {
  std::function<BitMatrix(const MimoInstance&)> one;
  if (name == "ml") {
    one = [c](const MimoInstance& inst) { return ml_detect(inst, c).bits; };
  } else if (name == "lmmse") {
    one = [c](const MimoInstance& inst) { return lmmse_detect(inst, c).bits; };
  } else if (name == "oamp") {
    one = [c, oamp_iterations](const MimoInstance& inst) {
      return oamp_detect(inst, c, oamp_iterations).bits;
    };
  } else {
    throw std::invalid_argument("unknown detector '" + name + "'");
  }
  return [one](std::span<const MimoInstance> batch) {
    std::vector<BitMatrix> out;
    out.reserve(batch.size());
    for (const auto& inst : batch) out.push_back(one(inst));
    return out;
  };
}

BatchDetector make_sgt_detector(const SgtModel& model) {
  return [&model](std::span<const MimoInstance> batch) {
    std::vector<BitMatrix> out;
    out.reserve(batch.size());
    for (const auto& llr : detect_soft_batch(model, batch)) out.push_back(decide_bits_from_llr(llr));
    return out;
  };
}

std::vector<std::string> parse_ordering(const std::string& expr) {
  std::vector<std::string> chain;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = expr.find("<=", pos);
    std::string name = expr.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    name.erase(0, name.find_first_not_of(' '));
    name.erase(name.find_last_not_of(' ') + 1);
    if (name.empty()) throw std::invalid_argument("bad ordering expression '" + expr + "'");
    chain.push_back(name);
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  if (chain.size() < 2) throw std::invalid_argument("ordering expression needs at least two detectors");
  return chain;
}

std::vector<OrderingViolation> check_ordering(const std::vector<BerRecord>& records,
                                              const std::vector<std::string>& chain,
                                              double min_snr_db) {
  auto find = [&](const std::string& det, double snr) -> const BerRecord& {
    for (const auto& r : records) {
      if (r.detector == det && r.snr_db == snr) return r;
    }
    throw std::invalid_argument("ordering refers to detector '" + det + "' with no results");
  };
  std::vector<double> snrs;
  for (const auto& r : records) {
    if (r.snr_db >= min_snr_db && std::find(snrs.begin(), snrs.end(), r.snr_db) == snrs.end()) {
      snrs.push_back(r.snr_db);
    }
  }
  std::vector<OrderingViolation> out;
  for (double snr : snrs) {
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      const BerRecord& a = find(chain[i], snr);
      const BerRecord& b = find(chain[i + 1], snr);
      if (!ber_not_greater(a, b)) out.push_back({snr, chain[i], chain[i + 1], a.ber, b.ber});
    }
  }
  return out;
}

void write_ber_csv(std::ostream& os, const std::vector<BerRecord>& records,
                   const std::string& prov) {
  os << "# " << prov << '\n';
  os << "detector,n_t,n_r,snr_db,trials,bits,errors,ber,ci_low,ci_high,capped\n";
  for (const auto& r : records) {
    os << r.detector << ',' << r.dims.n_t << ',' << r.dims.n_r << ',' << fmt(r.snr_db) << ','
       << r.trials << ',' << r.bits << ',' << r.errors << ',' << fmt(r.ber) << ','
       << fmt(r.ci_low) << ',' << fmt(r.ci_high) << ',' << (r.capped ? 1 : 0) << '\n';
  }
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dir = prepare_output(cfg);
  const Constellation c = Constellation::from_name(cfg.constellation);
  SgtModel model(cfg.model, cfg.dims, c.bits_per_dim(), cfg.train.seed);
  log << "training " << to_string(cfg.model.variant) << " on " << cfg.dims.n_t << "x" << cfg.dims.n_r
      << ", " << model.parameter_count() << " parameters, " << cfg.train.steps << " steps\n";
  TrainHooks hooks = progress_hooks(log, cfg.train.steps, "");
  const auto ckpt = dir / "checkpoint.sgt";
  hooks.on_checkpoint = [&](int, const SgtModel& m) { save_checkpoint(ckpt.string(), m); };
  const TrainLog tl = train(model, c, cfg.train, hooks);
  {
    auto os = open_out(dir / "train_log.csv");
    write_train_log_csv(os, tl, cfg.train, provenance("train", cfg));
  }
  if (tl.aborted) {
    log << "training aborted: " << tl.abort_reason << "; last checkpoint at step "
        << tl.last_checkpoint_step << '\n';
    return 2;
  }
  log << "wrote " << ckpt.string() << " (" << tl.wall_seconds << " s)\n";
  return 0;
}

int cmd_ber(const ExperimentConfig& cfg, const std::vector<std::string>& checkpoints,
            const std::optional<std::string>& assert_ordering, double assert_min_snr,
            std::ostream& log) {
  const Constellation c = Constellation::from_name(cfg.constellation);
  std::vector<std::pair<std::string, SgtModel>> models;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    SgtModel m = load_checkpoint(checkpoints[i]);
    if (!(m.dims() == cfg.dims) || m.bits_per_dim() != c.bits_per_dim()) {
      log << "checkpoint '" << checkpoints[i] << "' is for " << m.dims().n_t << "x" << m.dims().n_r
          << " systems, config asks for " << cfg.dims.n_t << "x" << cfg.dims.n_r << '\n';
      return 2;
    }
    const std::string name =
        checkpoints.size() == 1 ? "sgt"
                                : "sgt:" + std::filesystem::path(checkpoints[i]).stem().string();
    models.emplace_back(name, std::move(m));
  }

  std::vector<BerRecord> records;
  const BerOptions opts = ber_options(cfg.evaluation);
  for (const auto& det : cfg.evaluation.detectors) {
    if (det == "sgt") {
      if (models.empty()) {
        log << "detector 'sgt' requested but no --checkpoint given\n";
        return 2;
      }
      for (const auto& [name, m] : models) {
        auto r = evaluate_ber(name, make_sgt_detector(m), cfg.dims, c, cfg.evaluation.snr_db, opts,
                              cfg.seed);
        records.insert(records.end(), r.begin(), r.end());
      }
    } else {
      auto r = evaluate_ber(det, make_baseline_detector(det, c, cfg.evaluation.oamp_iterations),
                            cfg.dims, c, cfg.evaluation.snr_db, opts, cfg.seed);
      records.insert(records.end(), r.begin(), r.end());
    }
    log << "evaluated " << det << '\n';
  }
  const auto dir = prepare_output(cfg);
  {
    auto os = open_out(dir / "ber.csv");
    write_ber_csv(os, records, provenance("ber", cfg));
  }
  if (assert_ordering) {
    const auto violations = check_ordering(records, parse_ordering(*assert_ordering), assert_min_snr);
    for (const auto& v : violations) {
      log << "ordering violated at " << v.snr_db << " dB: " << v.lower << " (" << v.ber_lower
          << ") > " << v.upper << " (" << v.ber_upper << ")\n";
    }
    if (!violations.empty()) return 3;
    log << "ordering " << *assert_ordering << " holds at SNR >= " << assert_min_snr << " dB\n";
  }
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dir = prepare_output(cfg);
  const Constellation c = Constellation::from_name(cfg.constellation);
  std::vector<Variant> variants{Variant::FullSgt, Variant::NoCrossAttention};
  if (cfg.dims.n_r >= cfg.dims.n_t) {
    variants.push_back(Variant::QrBaseline);
  } else {
    log << "qr-baseline skipped: needs n_r >= n_t\n";
  }

  const std::size_t window = static_cast<std::size_t>(std::max(1, cfg.train.steps / 20));
  struct Outcome {
    Variant variant;
    TrainLog log;
    double final_loss;
    std::vector<BerRecord> ber;
  };
  std::vector<Outcome> outcomes;
  for (Variant v : variants) {
    SgtConfig mc = cfg.model;
    mc.variant = v;
    mc.bidirectional_cross = mc.bidirectional_cross && v == Variant::FullSgt;
    SgtModel model(mc, cfg.dims, c.bits_per_dim(), cfg.train.seed);
    const std::string tag = to_string(v) + ": ";
    log << tag << model.parameter_count() << " parameters\n";
    TrainLog tl = train(model, c, cfg.train, progress_hooks(log, cfg.train.steps, tag));
    if (tl.aborted) {
      log << tag << "aborted: " << tl.abort_reason << '\n';
      return 2;
    }
    save_checkpoint((dir / ("ablation_" + to_string(v) + ".sgt")).string(), model);
    const auto avg = moving_average(tl.loss, window);
    std::vector<BerRecord> ber;
    if (!cfg.evaluation.snr_db.empty()) {
      ber = evaluate_ber(to_string(v), make_sgt_detector(model), cfg.dims, c, cfg.evaluation.snr_db,
                         ber_options(cfg.evaluation), cfg.seed);
    }
    outcomes.push_back({v, std::move(tl), avg.back(), std::move(ber)});
  }

  const double reference = outcomes[1].final_loss;
  {
    auto os = open_out(dir / "ablation.csv");
    os << "# " << provenance("ablate", cfg) << '\n';
    os << "# reference_loss=no-cross-attention final loss, moving-average window=" << window << '\n';
    os << "variant,steps,final_loss,steps_to_reference";
    for (double s : cfg.evaluation.snr_db) os << ",ber@" << snr_label(s) << "dB";
    os << '\n';
    for (const auto& o : outcomes) {
      const auto reach = steps_to_reach(o.log.loss, reference, window);
      os << to_string(o.variant) << ',' << o.log.loss.size() << ',' << fmt(o.final_loss) << ','
         << (reach ? std::to_string(*reach) : std::string("never"));
      for (const auto& r : o.ber) os << ',' << fmt(r.ber);
      os << '\n';
      log << to_string(o.variant) << ": final loss " << o.final_loss << ", reaches reference at "
          << (reach ? std::to_string(*reach) : std::string("never")) << '\n';
    }
  }
  {
    auto os = open_out(dir / "ablation_loss.csv");
    os << "# " << provenance("ablate", cfg) << '\n';
    os << "step";
    for (const auto& o : outcomes) os << ',' << to_string(o.variant);
    os << '\n';
    for (std::size_t i = 0; i < outcomes.front().log.loss.size(); ++i) {
      os << i + 1;
      for (const auto& o : outcomes) os << ',' << fmt(o.log.loss[i]);
      os << '\n';
    }
  }
  return 0;
}

int cmd_complexity(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dir = prepare_output(cfg);
  const Constellation c = Constellation::from_name(cfg.constellation);
  const ScalingReport rep = scaling_report(cfg.model, cfg.complexity_sizes, c.bits_per_dim());
  {
    auto os = open_out(dir / "complexity.csv");
    write_complexity_csv(os, rep, provenance("complexity", cfg));
  }
  {
    auto os = open_out(dir / "complexity_slopes.csv");
    write_slopes_csv(os, rep, provenance("complexity", cfg));
  }
  for (const auto& [k, v] : rep.slopes) log << "slope " << k << " = " << v << '\n';
  if (!rep.exact_agreement) {
    log << "instrumented and symbolic MAC counts disagree\n";
    return 3;
  }
  return 0;
}

}  // namespace sgt
