#include <cmath>
#include <sstream>

#include "collabdiff/sync_attention.hpp"
#include "doctest.h"

using namespace collabdiff;
using namespace collabdiff::sync;
using geometry::EpipolarMask;
using geometry::GridSize;

namespace {

/// Brute-force per-query reference for the full block, written from the
/// definition (logit loop, explicit softmax, explicit ff).
Eigen::MatrixXd naive_block(const FeatureFrame& zq, const FeatureFrame& zkv,
                            const SyncModuleWeights& w, const EpipolarMask& mask) {
  const int nq = zq.height * zq.width;
  const int nk = zkv.height * zkv.width;
  const Eigen::MatrixXd q = zq.values * w.w_query;
  const Eigen::MatrixXd k = zkv.values * w.w_key;
  const Eigen::MatrixXd v = zkv.values * w.w_value;
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.dim_attn()));

  Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(nq, w.dim_attn());
  for (int qi = 0; qi < nq; ++qi) {
    std::vector<int> keys;
    for (int ki = 0; ki < nk; ++ki)
      if (mask.bit(qi, ki)) keys.push_back(ki);
    if (keys.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(keys.size());
    for (std::size_t s = 0; s < keys.size(); ++s) {
      logits[s] = q.row(qi).dot(k.row(keys[s])) * scale;
      mx = std::max(mx, logits[s]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t s = 0; s < keys.size(); ++s)
      attn.row(qi) += (logits[s] / z) * v.row(keys[s]);
  }

  Eigen::MatrixXd hidden = (attn * w.ff1).rowwise() + w.b1;
  for (int r = 0; r < hidden.rows(); ++r)
    for (int c = 0; c < hidden.cols(); ++c) {
      const double x = hidden(r, c);
      hidden(r, c) = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
  return (((hidden * w.ff2).rowwise() + w.b2) * w.output_scale).eval();
}

EpipolarMask random_mask(GridSize qr, GridSize kr, Rng& rng, double density) {
  EpipolarMask m(qr, kr, 1.0);
  for (int q = 0; q < qr.count(); ++q)
    for (int k = 0; k < kr.count(); ++k)
      if (rng.uniform() < density) m.set_bit(q, k);
  return m;
}

}  // namespace

TEST_CASE("matches the naive per-query loop on every grid up to 8x8") {
  Rng rng(21);
  double worst = 0.0;
  for (int h = 1; h <= 8; ++h)
    for (int w = 1; w <= 8; ++w) {
      const GridSize g{h, w};
      const FeatureFrame zq = random_frame(h, w, 6, rng);
      const FeatureFrame zkv = random_frame(h, w, 6, rng);
      const SyncModuleWeights weights = SyncModuleWeights::init(6, 4, rng);
      const EpipolarMask mask = random_mask(g, g, rng, 0.4);
      const FeatureFrame out = masked_cross_attention(zq, zkv, weights, mask);
      const Eigen::MatrixXd want = naive_block(zq, zkv, weights, mask);
      worst = std::max(worst, (out.values - want).cwiseAbs().maxCoeff());
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("random 6x6 grid, dim 8: naive-loop agreement under 1e-6") {
  Rng rng(33);
  const GridSize g{6, 6};
  const FeatureFrame zq = random_frame(6, 6, 8, rng);
  const FeatureFrame zkv = random_frame(6, 6, 8, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(8, 8, rng);
  const EpipolarMask mask = random_mask(g, g, rng, 0.3);
  const FeatureFrame out = masked_cross_attention(zq, zkv, w, mask);
  CHECK((out.values - naive_block(zq, zkv, w, mask)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("singleton mask rows: attention output is exactly W_V z_k*") {
  Rng rng(5);
  const GridSize g{3, 3};
  const FeatureFrame zq = random_frame(3, 3, 5, rng);
  const FeatureFrame zkv = random_frame(3, 3, 5, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(5, 4, rng);
  EpipolarMask mask(g, g, 1.0);
  for (int q = 0; q < 9; ++q) mask.set_bit(q, (q * 5 + 2) % 9);  // one key each
  const FeatureFrame out = masked_attention_raw(zq, zkv, w, mask);
  // The softmax over a singleton key set is exactly 1, so each output row is
  // the projected value row bit-for-bit. Project with the same full-matrix
  // product the block uses; a lone row-times-matrix accumulates in a
  // different order and lands an ulp away.
  const Eigen::MatrixXd vproj = zkv.values * w.w_value;
  for (int q = 0; q < 9; ++q)
    CHECK(out.values.row(q) == vproj.row((q * 5 + 2) % 9));
}

TEST_CASE("identical value rows: output is W_V v regardless of mask") {
  Rng rng(6);
  const GridSize g{4, 2};
  const FeatureFrame zq = random_frame(4, 2, 5, rng);
  FeatureFrame zkv(4, 2, 5);
  Eigen::RowVectorXd shared(5);
  shared << 0.3, -1.2, 0.07, 2.5, -0.4;
  zkv.values.rowwise() = shared;
  const SyncModuleWeights w = SyncModuleWeights::init(5, 3, rng);
  EpipolarMask mask = random_mask(g, g, rng, 0.5);
  for (int q = 0; q < 8; ++q) mask.set_bit(q, q);  // keep every row nonempty
  const FeatureFrame out = masked_attention_raw(zq, zkv, w, mask);
  const Eigen::RowVectorXd want = shared * w.w_value;
  for (int q = 0; q < 8; ++q)
    CHECK((out.values.row(q) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax shift invariance via a value-preserving key shift") {
  // Shift every key feature by a delta with W_K^T delta = s (so every logit
  // of a query moves by the same constant) and W_V^T delta = 0 (values kept).
  Rng rng(7);
  const int dim = 6, da = 2;
  const GridSize g{3, 3};
  const FeatureFrame zq = random_frame(3, 3, dim, rng);
  const FeatureFrame zkv = random_frame(3, 3, dim, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(dim, da, rng);
  EpipolarMask mask = random_mask(g, g, rng, 0.6);
  for (int q = 0; q < 9; ++q) mask.set_bit(q, q);

  Eigen::MatrixXd constraint(2 * da, dim);
  constraint.topRows(da) = w.w_key.transpose();
  constraint.bottomRows(da) = w.w_value.transpose();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * da);
  rhs.head(da).setConstant(0.8);  // the logit shift direction
  const Eigen::VectorXd delta =
      constraint.completeOrthogonalDecomposition().solve(rhs);
  REQUIRE((constraint * delta - rhs).cwiseAbs().maxCoeff() < 1e-10);

  FeatureFrame shifted = zkv;
  shifted.values.rowwise() += delta.transpose();
  const FeatureFrame a = masked_attention_raw(zq, zkv, w, mask);
  const FeatureFrame b = masked_attention_raw(zq, shifted, w, mask);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("empty mask rows give exactly zero attention, never NaN") {
  Rng rng(8);
  const GridSize g{2, 3};
  const FeatureFrame zq = random_frame(2, 3, 4, rng);
  const FeatureFrame zkv = random_frame(2, 3, 4, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(4, 4, rng);
  EpipolarMask mask(g, g, 1.0);
  mask.set_bit(1, 2);
  mask.set_bit(4, 0);  // rows 0, 2, 3, 5 stay empty
  const FeatureFrame raw = masked_attention_raw(zq, zkv, w, mask);
  for (int q : {0, 2, 3, 5}) CHECK(raw.values.row(q).cwiseAbs().maxCoeff() == 0.0);
  // through the ff, empty rows all share the input-independent ff(0) output
  const FeatureFrame full = masked_cross_attention(zq, zkv, w, mask);
  CHECK(full.values.row(0).allFinite());
  CHECK(full.values.row(0) == full.values.row(2));
  CHECK(full.values.row(0) == full.values.row(5));
  const FeatureFrame other_inputs = masked_cross_attention(
      random_frame(2, 3, 4, rng), random_frame(2, 3, 4, rng), w, mask);
  CHECK(full.values.row(0) == other_inputs.values.row(0));
}

TEST_CASE("apply_sync: zero-initialized output layer is the exact identity") {
  Rng rng(9);
  const GridSize g{4, 4};
  const FeatureFrame za = random_frame(4, 4, 6, rng);
  const FeatureFrame zb = random_frame(4, 4, 6, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(6, 4, rng, true);
  CHECK(w.ff2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(w.b2.cwiseAbs().maxCoeff() == 0.0);
  const EpipolarMask mask = random_mask(g, g, rng, 0.5);
  const auto [a_out, b_out] = apply_sync(za, zb, w, mask, mask);
  CHECK(a_out.values == za.values);
  CHECK(b_out.values == zb.values);
}

TEST_CASE("apply_sync: all-zero masks with zero biases is the exact identity") {
  Rng rng(10);
  const GridSize g{3, 5};
  const FeatureFrame za = random_frame(3, 5, 4, rng);
  const FeatureFrame zb = random_frame(3, 5, 4, rng);
  SyncModuleWeights w = SyncModuleWeights::init(4, 4, rng);
  w.b1.setZero();
  w.b2.setZero();
  const EpipolarMask empty(g, g, 1.0);
  const auto [a_out, b_out] = apply_sync(za, zb, w, empty, empty);
  CHECK(a_out.values == za.values);
  CHECK(b_out.values == zb.values);
}

TEST_CASE("apply_sync with shared weights is symmetric under swapping inputs") {
  Rng rng(11);
  const GridSize g{4, 4};
  const FeatureFrame za = random_frame(4, 4, 5, rng);
  const FeatureFrame zb = random_frame(4, 4, 5, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(5, 3, rng);
  Rng mask_rng(42);
  const EpipolarMask pseudo = geometry::pseudo_epipolar_mask(g, 1.5, mask_rng);
  for (int q = 0; q < 16; ++q) CHECK(pseudo.bit(q, q));
  const auto [a1, b1] = apply_sync(za, zb, w, pseudo, pseudo);
  const auto [b2, a2] = apply_sync(zb, za, w, pseudo, pseudo);
  CHECK(a1.values == a2.values);
  CHECK(b1.values == b2.values);
}

TEST_CASE("separate-weight overload matches two one-directional blocks") {
  Rng rng(12);
  const GridSize g{2, 2};
  const FeatureFrame za = random_frame(2, 2, 4, rng);
  const FeatureFrame zb = random_frame(2, 2, 4, rng);
  const SyncModuleWeights wab = SyncModuleWeights::init(4, 4, rng);
  const SyncModuleWeights wba = SyncModuleWeights::init(4, 4, rng);
  const EpipolarMask mab = random_mask(g, g, rng, 0.7);
  const EpipolarMask mba = random_mask(g, g, rng, 0.7);
  const auto [a_out, b_out] = apply_sync(za, zb, wab, wba, mab, mba);
  const FeatureFrame da = masked_cross_attention(za, zb, wab, mab);
  const FeatureFrame db = masked_cross_attention(zb, za, wba, mba);
  CHECK(a_out.values == (za.values + da.values).eval());
  CHECK(b_out.values == (zb.values + db.values).eval());
}

TEST_CASE("gradients: singleton-masked raw attention is exact") {
  Rng rng(13);
  const GridSize g{2, 2};
  const FeatureFrame zq = random_frame(2, 2, 4, rng);
  const FeatureFrame zkv = random_frame(2, 2, 4, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(4, 3, rng);
  EpipolarMask mask(g, g, 1.0);
  for (int q = 0; q < 4; ++q) mask.set_bit(q, (q + 1) % 4);
  CHECK(grad_check_attention_raw(zq, zkv, w, mask) < 1e-8);
}

TEST_CASE("gradients: full module on a 4x4 grid, dim 4") {
  Rng rng(14);
  const GridSize g{4, 4};
  const FeatureFrame zq = random_frame(4, 4, 4, rng);
  const FeatureFrame zkv = random_frame(4, 4, 4, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(4, 4, rng);
  EpipolarMask mask = random_mask(g, g, rng, 0.4);
  for (int q = 0; q < 16; ++q) mask.set_bit(q, q);
  CHECK(grad_check_cross_attention(zq, zkv, w, mask, 1e-4) < 1e-3);
  CHECK(grad_check_attention_raw(zq, zkv, w, mask, 1e-4) < 1e-3);
}

TEST_CASE("gradients: central differences converge at order two") {
  Rng rng(15);
  const GridSize g{2, 2};
  const FeatureFrame zq = random_frame(2, 2, 3, rng);
  const FeatureFrame zkv = random_frame(2, 2, 3, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(3, 3, rng);
  EpipolarMask mask = random_mask(g, g, rng, 0.6);
  for (int q = 0; q < 4; ++q) mask.set_bit(q, q);

  // 1-D slice through input space along a fixed direction: truncation error
  // of the central difference should quarter each time eps halves.
  const int n = static_cast<int>(zkv.values.size());
  Eigen::VectorXd direction(n);
  for (int i = 0; i < n; ++i) direction[i] = rng.normal();
  direction *= 0.2 / direction.norm();

  const auto loss = [&](const Eigen::VectorXd& s) {
    FeatureFrame kv = zkv;
    Eigen::Map<Eigen::VectorXd>(kv.values.data(), n) += s[0] * direction;
    return masked_cross_attention(zq, kv, w, mask).values.sum();
  };
  const SyncGradients grads = masked_cross_attention_backward(zq, zkv, w, mask);
  Eigen::VectorXd analytic(1);
  analytic[0] =
      Eigen::Map<const Eigen::VectorXd>(grads.d_zkv.data(), n).dot(direction);

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  const double e1 = grad_check(loss, zero, analytic, 1e-3);
  const double e2 = grad_check(loss, zero, analytic, 5e-4);
  const double e3 = grad_check(loss, zero, analytic, 2.5e-4);
  REQUIRE(e1 > 1e-11);  // enough curvature for the ratio to be meaningful
  CHECK(e1 / e2 > 2.5);
  CHECK(e1 / e2 < 6.0);
  CHECK(e2 / e3 > 2.5);
  CHECK(e2 / e3 < 6.0);
}

TEST_CASE("shape validation") {
  Rng rng(16);
  const FeatureFrame zq = random_frame(2, 2, 4, rng);
  const FeatureFrame zkv = random_frame(2, 2, 4, rng);
  const SyncModuleWeights w = SyncModuleWeights::init(4, 4, rng);
  const EpipolarMask wrong_mask({3, 3}, {2, 2}, 1.0);
  CHECK_THROWS_AS(masked_cross_attention(zq, zkv, w, wrong_mask),
                  std::invalid_argument);
  const SyncModuleWeights wrong_dim = SyncModuleWeights::init(5, 4, rng);
  const EpipolarMask mask({2, 2}, {2, 2}, 1.0);
  CHECK_THROWS_AS(masked_cross_attention(zq, zkv, wrong_dim, mask),
                  std::invalid_argument);
  FeatureFrame bad = zq;
  bad.values(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("feature frame and weights survive a CSV round-trip exactly") {
  Rng rng(17);
  const FeatureFrame frame = random_frame(3, 4, 5, rng);
  std::ostringstream fout;
  frame.write_csv(fout);
  CHECK(fout.str().rfind("feature_frame,3,4,5", 0) == 0);
  std::istringstream fin(fout.str());
  const FeatureFrame back = FeatureFrame::read_csv(fin);
  CHECK(back == frame);

  SyncModuleWeights w = SyncModuleWeights::init(5, 3, rng);
  w.output_scale = 0.125;
  std::ostringstream wout;
  w.write_csv(wout);
  CHECK(wout.str().rfind("sync_weights,5,3,", 0) == 0);
  std::istringstream win(wout.str());
  const SyncModuleWeights wback = SyncModuleWeights::read_csv(win);
  CHECK(wback.w_query == w.w_query);
  CHECK(wback.w_key == w.w_key);
  CHECK(wback.w_value == w.w_value);
  CHECK(wback.ff1 == w.ff1);
  CHECK(wback.b1 == w.b1);
  CHECK(wback.ff2 == w.ff2);
  CHECK(wback.b2 == w.b2);
  CHECK(wback.output_scale == w.output_scale);
}
