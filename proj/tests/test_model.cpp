#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "grad_check.hpp"
#include "sgt/model.hpp"
#include "sgt/trainer.hpp"

using namespace sgt;
using sgt::testing::random_matrix;

namespace {

SgtConfig small(Variant v = Variant::FullSgt) {
  SgtConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_hidden = 24;
  c.variant = v;
  return c;
}

MimoInstance instance(SystemDims dims, std::uint64_t index = 0) {
  return sample_instance_at(dims, Constellation::qpsk(), 8.0, 77, index);
}

Norm unit_norm(Index d) {
  return {Tensor::constant(Matrix::Ones(1, d)), Tensor::constant(Matrix::Zero(1, d))};
}

AttentionWeights random_attention(Index d, std::mt19937_64& rng) {
  return {Tensor::constant(random_matrix(d, d, rng, 0.5)), Tensor::constant(random_matrix(d, d, rng, 0.5)),
          Tensor::constant(random_matrix(d, d, rng, 0.5)), Tensor::constant(random_matrix(d, d, rng, 0.5))};
}

Matrix normalise_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = (x.row(i).array() - mu) / std::sqrt(var + 1e-5);
  }
  return out;
}

// Independent single-group reference of pre-norm residual attention.
Matrix reference_attention(const Matrix& queries, const Matrix& kv, const AttentionWeights& w, Index heads) {
  const Matrix q = normalise_rows(queries) * w.wq.value();
  const Matrix k = normalise_rows(kv) * w.wk.value();
  const Matrix v = normalise_rows(kv) * w.wv.value();
  const Index dh = q.cols() / heads;
  Matrix mixed = Matrix::Zero(q.rows(), q.cols());
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      std::vector<double> s(static_cast<std::size_t>(k.rows()));
      double mx = -1e300;
      for (Index j = 0; j < k.rows(); ++j) {
        s[static_cast<std::size_t>(j)] =
            q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (Index j = 0; j < k.rows(); ++j) {
        mixed.row(i).segment(h * dh, dh) += s[static_cast<std::size_t>(j)] / z * v.row(j).segment(h * dh, dh);
      }
    }
  }
  return queries + mixed * w.wo.value();
}

}  // namespace

TEST_CASE("config validation") {
  SgtConfig c = small();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small(Variant::NoCrossAttention);
  c.bidirectional_cross = true;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(default_heads(128) == 8);
  CHECK(default_heads(64) == 4);
  CHECK(variant_from_string(to_string(Variant::QrBaseline)) == Variant::QrBaseline);
  CHECK_THROWS(variant_from_string("encoder"));
}

TEST_CASE("embedding shapes for 8x8 at d_model 128") {
  SgtConfig c;
  c.d_model = 128;
  c.n_layers = 1;
  c.n_heads = 8;
  const SgtModel m(c, {8, 8}, 1, 1);
  const MimoInstance inst = instance({8, 8});
  const Embeddings e = embed(m, prepare_batch(m, std::span(&inst, 1)));
  CHECK(e.sym.rows() == 16);
  CHECK(e.sym.cols() == 128);
  CHECK(e.lin.rows() == 16);
  CHECK(e.lin.cols() == 128);
}

TEST_CASE("zero embedding weights leave only the positional encoding") {
  SgtModel m(small(), {2, 3}, 1, 2);
  for (auto& [name, t] : m.parameters()) {
    if (name.rfind("sym_embed", 0) == 0 || name.rfind("lin_embed", 0) == 0) t.mutable_value().setZero();
  }
  const MimoInstance inst = instance({2, 3});
  const Embeddings e = embed(m, prepare_batch(m, std::span(&inst, 1)));
  CHECK(e.sym.value() == m.sym_pe);
  CHECK(e.lin.value() == m.lin_pe);
  CHECK(m.sym_pe == sinusoidal_encoding(4, 16));
  CHECK(m.lin_pe.rows() == 6);
}

TEST_CASE("instances differ only through token content") {
  const SgtModel m(small(), {2, 2}, 1, 3);
  const MimoInstance a = instance({2, 2}, 0), b = instance({2, 2}, 1);
  const Embeddings ea = embed(m, prepare_batch(m, std::span(&a, 1)));
  const Embeddings eb = embed(m, prepare_batch(m, std::span(&b, 1)));
  const Matrix content_a = apply_ffn(m.lin_embed, Tensor::constant(tokenize(a, 1).lin)).value();
  const Matrix content_b = apply_ffn(m.lin_embed, Tensor::constant(tokenize(b, 1).lin)).value();
  CHECK(((ea.lin.value() - content_a) - (eb.lin.value() - content_b)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("embedding rejects mismatched tokens") {
  const SgtModel m(small(), {2, 2}, 1, 3);
  TokenBatch t;
  t.count = 1;
  t.lin = Matrix::Zero(4, 5);
  t.sym = Matrix::Zero(4, 1);
  CHECK_THROWS_AS(embed(m, t), DimensionError);
  const MimoInstance wrong = instance({3, 2});
  CHECK_THROWS_AS(prepare_batch(m, std::span(&wrong, 1)), DimensionError);
}

TEST_CASE("self-attention over one token") {
  std::mt19937_64 rng(1);
  const Index d = 8;
  const AttentionWeights w = random_attention(d, rng);
  const Matrix t = random_matrix(1, d, rng);
  const Matrix out = self_attention(Tensor::constant(t), unit_norm(d), w, 1, 2).value();
  const Matrix expect = t + normalise_rows(t) * w.wv.value() * w.wo.value();
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention over identical tokens gives identical outputs") {
  std::mt19937_64 rng(2);
  const AttentionWeights w = random_attention(8, rng);
  const Matrix t = random_matrix(1, 8, rng).replicate(5, 1);
  const Matrix out = self_attention(Tensor::constant(t), unit_norm(8), w, 1, 2).value();
  for (Index i = 1; i < 5; ++i) CHECK((out.row(i) - out.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("self-attention matches an independent reference") {
  std::mt19937_64 rng(3);
  const AttentionWeights w = random_attention(8, rng);
  const Matrix t = random_matrix(8, 8, rng);  // two groups of four tokens
  std::vector<Matrix> seen;
  const AttentionObserver obs = [&](Index, Index, const Matrix& a) { seen.push_back(a); };
  const Matrix out = self_attention(Tensor::constant(t), unit_norm(8), w, 2, 2, &obs).value();
  for (Index g = 0; g < 2; ++g) {
    const Matrix block = t.middleRows(4 * g, 4);
    CHECK((out.middleRows(4 * g, 4) - reference_attention(block, block, w, 2)).cwiseAbs().maxCoeff() < 1e-10);
  }
  REQUIRE(seen.size() == 4);
  for (const Matrix& a : seen) {
    for (Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("cross-attention shapes and reference") {
  std::mt19937_64 rng(4);
  const AttentionWeights w = random_attention(8, rng);
  const Matrix sym = random_matrix(4, 8, rng), lin = random_matrix(6, 8, rng);
  const Tensor lin_t = Tensor::constant(lin);
  const Matrix out = cross_attention(Tensor::constant(sym), lin_t, unit_norm(8), unit_norm(8), w, 1, 2).value();
  CHECK(out.rows() == 4);
  CHECK((out - reference_attention(sym, lin, w, 2)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(lin_t.value() == lin);
}

TEST_CASE("a single constraint token gets all the attention") {
  std::mt19937_64 rng(5);
  const AttentionWeights w = random_attention(8, rng);
  std::vector<Matrix> seen;
  const AttentionObserver obs = [&](Index, Index, const Matrix& a) { seen.push_back(a); };
  cross_attention(Tensor::constant(random_matrix(4, 8, rng)), Tensor::constant(random_matrix(1, 8, rng)),
                  unit_norm(8), unit_norm(8), w, 1, 2, &obs);
  for (const Matrix& a : seen) CHECK((a.array() == 1.0).all());
}

TEST_CASE("cross-attention permutation invariance and equivariance") {
  std::mt19937_64 rng(6);
  const AttentionWeights w = random_attention(8, rng);
  const Matrix sym = random_matrix(4, 8, rng), lin = random_matrix(6, 8, rng);
  auto run = [&](const Matrix& s, const Matrix& l) {
    return cross_attention(Tensor::constant(s), Tensor::constant(l), unit_norm(8), unit_norm(8), w, 1, 2).value();
  };
  const Matrix base = run(sym, lin);
  std::vector<Index> pl{3, 0, 5, 1, 4, 2}, ps{2, 0, 3, 1};
  Matrix lin_p(6, 8), sym_p(4, 8);
  for (Index i = 0; i < 6; ++i) lin_p.row(i) = lin.row(pl[static_cast<std::size_t>(i)]);
  for (Index i = 0; i < 4; ++i) sym_p.row(i) = sym.row(ps[static_cast<std::size_t>(i)]);
  CHECK((run(sym, lin_p) - base).cwiseAbs().maxCoeff() < 1e-13);
  const Matrix eq = run(sym_p, lin);
  for (Index i = 0; i < 4; ++i) CHECK((eq.row(i) - base.row(ps[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("model output is invariant to receive-row order without positional encoding") {
  SgtConfig c = small();
  c.positional_encoding = false;
  const SgtModel m(c, {2, 3}, 1, 8);
  MimoInstance inst = instance({2, 3});
  const Matrix base = forward(m, inst);
  MimoInstance p = inst;
  const std::vector<Index> perm{5, 3, 1, 0, 2, 4};
  for (Index j = 0; j < 6; ++j) {
    p.H.row(j) = inst.H.row(perm[static_cast<std::size_t>(j)]);
    p.y(j) = inst.y(perm[static_cast<std::size_t>(j)]);
  }
  CHECK((forward(m, p) - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("shape contract across system sizes and variants") {
  for (auto dims : {SystemDims{2, 2}, SystemDims{4, 4}, SystemDims{8, 8}, SystemDims{8, 16}}) {
    for (Variant v : {Variant::FullSgt, Variant::NoCrossAttention, Variant::QrBaseline}) {
      const SgtModel m(small(v), dims, 1, 9);
      std::vector<MimoInstance> batch{instance(dims, 0), instance(dims, 1), instance(dims, 2)};
      const Matrix p = forward(m, prepare_batch(m, batch)).value();
      CHECK(p.rows() == 3 * dims.real_tx());
      CHECK(p.cols() == 1);
      CHECK((p.array() > 0.0).all());
      CHECK((p.array() < 1.0).all());
      // Batched and single-instance passes agree.
      CHECK((p.middleRows(dims.real_tx(), dims.real_tx()) - forward(m, batch[1])).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("attention rows sum to one at every layer") {
  SgtConfig c = small();
  c.bidirectional_cross = true;
  const SgtModel m(c, {2, 4}, 1, 10);
  std::vector<MimoInstance> batch{instance({2, 4}, 0), instance({2, 4}, 1)};
  std::map<std::string, int> blocks;
  double worst = 0.0;
  const LayerAttentionObserver obs = [&](int layer, std::string_view name, Index, Index, const Matrix& a) {
    blocks[std::to_string(layer) + std::string(name)]++;
    for (Index i = 0; i < a.rows(); ++i) worst = std::max(worst, std::abs(a.row(i).sum() - 1.0));
  };
  forward(m, prepare_batch(m, batch), ForwardOptions{&obs});
  CHECK(blocks.size() == 8);
  for (const auto& [k, n] : blocks) CHECK(n == 4);
  CHECK(worst < 1e-12);
}

TEST_CASE("uninformative priors equal no priors and LLRs are bounded") {
  const SgtModel m(small(), {2, 2}, 1, 11);
  const MimoInstance inst = instance({2, 2});
  CHECK(detect_soft(m, inst) == detect_soft(m, inst, Matrix::Constant(4, 1, 0.5)));
  SgtModel big = m.clone();
  big.head.out.weight.mutable_value().setConstant(1e3);
  const Matrix llr = detect_soft(big, inst);
  CHECK((llr.array().abs() <= kLlrMax).all());
}

TEST_CASE("non-finite activations name the layer") {
  SgtModel m(small(), {2, 2}, 1, 12);
  m.layers[1].sym_ffn.in.weight.mutable_value()(0, 0) = std::numeric_limits<double>::infinity();
  const MimoInstance inst = instance({2, 2});
  try {
    forward(m, inst);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("weight sharing ties layers") {
  SgtConfig c = small();
  c.weight_sharing = true;
  c.n_layers = 3;
  const SgtModel m(c, {2, 2}, 1, 13);
  CHECK(m.layers.size() == 1);
  CHECK(&m.layer(0) == &m.layer(2));
  CHECK(m.parameter_count() < SgtModel(small(), {2, 2}, 1, 13).parameter_count() * 3 / 2);
}

TEST_CASE("clone is independent") {
  const SgtModel m(small(), {2, 2}, 1, 14);
  SgtModel c = m.clone();
  c.head.out.bias.mutable_value().setConstant(3.0);
  CHECK(m.head.out.bias.value().isZero());
  const MimoInstance inst = instance({2, 2});
  CHECK(forward(m.clone(), inst) == forward(m, inst));
}

TEST_CASE("checkpoint round trip") {
  for (Variant v : {Variant::FullSgt, Variant::NoCrossAttention, Variant::QrBaseline}) {
    const SgtModel m(small(v), {2, 3}, 1, 15);
    std::stringstream ss;
    save_checkpoint(ss, m);
    const SgtModel back = load_checkpoint(ss);
    CHECK(back.config() == m.config());
    CHECK(back.dims() == m.dims());
    const MimoInstance inst = instance({2, 3});
    CHECK(forward(back, inst) == forward(m, inst));
  }
  std::stringstream bad("not a checkpoint");
  CHECK_THROWS(load_checkpoint(bad));
}

TEST_CASE("end-to-end gradient check over every parameter group") {
  for (Variant v : {Variant::FullSgt, Variant::NoCrossAttention, Variant::QrBaseline}) {
    SgtConfig c = small(v);
    c.d_model = 8;
    c.ffn_hidden = 8;
    if (v == Variant::FullSgt) c.bidirectional_cross = true;
    const SgtModel m(c, {2, 2}, 1, 16);
    std::vector<MimoInstance> batch{instance({2, 2}, 3), instance({2, 2}, 4)};
    const TokenBatch tokens = prepare_batch(m, batch);
    Matrix target(8, 1);
    for (Index i = 0; i < 2; ++i) target.middleRows(4 * i, 4) = bit_zero_probability(batch[static_cast<std::size_t>(i)].bits);
    auto loss = [&] { return bit_loss(forward(m, tokens), target); };
    std::vector<Tensor> params;
    for (const auto& [name, t] : m.parameters()) params.push_back(t);
    const double err = sgt::testing::max_relative_error(loss, params);
    INFO(to_string(v));
    CHECK(err < 1e-3);
  }
}
