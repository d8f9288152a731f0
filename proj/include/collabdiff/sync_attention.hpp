#pragma once

#include <Eigen/Core>
#include <functional>
#include <iosfwd>
#include <utility>

#include "collabdiff/geometry.hpp"
#include "collabdiff/rng.hpp"

namespace collabdiff::sync {

/**
 * One frame of per-pixel latent features: an (h, w) grid of dim-vectors,
 * stored as an (h*w) x dim matrix in row-major grid order.
 */
struct FeatureFrame {
  int height = 0, width = 0;
  Eigen::MatrixXd values;  // (height*width) x dim

  FeatureFrame() = default;
  FeatureFrame(int height, int width, int dim);

  int dim() const { return static_cast<int>(values.cols()); }
  void validate() const;

  /// Flat CSV: header `feature_frame,h,w,dim`, then one row per grid cell.
  void write_csv(std::ostream& out) const;
  static FeatureFrame read_csv(std::istream& in);

  bool operator==(const FeatureFrame&) const = default;
};

/// Uniform N(0, scale^2) i.i.d. frame from a seeded stream.
FeatureFrame random_frame(int height, int width, int dim, Rng& rng, double scale = 1.0);

/**
 * Weights of the cross-view synchronization block: single-head projections
 * W_Q, W_K, W_V (dim -> dim_attn) and a position-wise feed-forward
 * dim_attn -> 4*dim_attn -> dim with a smooth (GELU) nonlinearity between
 * the two affine maps. `output_scale` multiplies the final output.
 */
struct SyncModuleWeights {
  Eigen::MatrixXd w_query, w_key, w_value;  // dim x dim_attn
  Eigen::MatrixXd ff1;                      // dim_attn x 4*dim_attn
  Eigen::RowVectorXd b1;                    // 1 x 4*dim_attn
  Eigen::MatrixXd ff2;                      // 4*dim_attn x dim
  Eigen::RowVectorXd b2;                    // 1 x dim
  double output_scale = 1.0;

  int dim() const { return static_cast<int>(w_query.rows()); }
  int dim_attn() const { return static_cast<int>(w_query.cols()); }
  void validate() const;

  /// Seeded init (entries N(0, 1/sqrt(fan_in))); with zero_output_layer the
  /// final affine map (ff2, b2) starts at zero so the residual block is an
  /// exact identity.
  static SyncModuleWeights init(int dim, int dim_attn, Rng& rng,
                                bool zero_output_layer = false);

  /// Flat CSV round-trip (header `sync_weights,dim,dim_attn,output_scale`).
  void write_csv(std::ostream& out) const;
  static SyncModuleWeights read_csv(std::istream& in);
};

/**
 * Masked single-head cross-attention + feed-forward, WITHOUT the residual
 * (the residual is applied by apply_sync).
 *
 * Per query cell q: logits over key cells k are (W_Q z_q).(W_K z_k)/sqrt(da)
 * where mask bit (q, k) is set and -inf otherwise; softmax over keys; the
 * attention output is the softmax-weighted sum of W_V z_k. Queries whose
 * mask row is empty get a zero attention output (never NaN). The ff then
 * maps each attention row through affine -> GELU -> affine, scaled by
 * output_scale.
 */
FeatureFrame masked_cross_attention(const FeatureFrame& zq, const FeatureFrame& zkv,
                                    const SyncModuleWeights& w,
                                    const geometry::EpipolarMask& mask);

/// The attention half only (no feed-forward, no output_scale); exposed for
/// gradient checks on the exactly-linear configurations.
FeatureFrame masked_attention_raw(const FeatureFrame& zq, const FeatureFrame& zkv,
                                  const SyncModuleWeights& w,
                                  const geometry::EpipolarMask& mask);

/**
 * Bidirectional residual update from the pre-update inputs:
 *   za_out = za + block(za <- zb, mask_ab),
 *   zb_out = zb + block(zb <- za, mask_ba).
 * mask_ab masks queries from frame a against keys from frame b (built from
 * F^{a->b}), mask_ba the transpose direction. The two directions may share
 * weights (first overload) or carry separate weights.
 */
std::pair<FeatureFrame, FeatureFrame> apply_sync(const FeatureFrame& za,
                                                 const FeatureFrame& zb,
                                                 const SyncModuleWeights& shared,
                                                 const geometry::EpipolarMask& mask_ab,
                                                 const geometry::EpipolarMask& mask_ba);

std::pair<FeatureFrame, FeatureFrame> apply_sync(const FeatureFrame& za,
                                                 const FeatureFrame& zb,
                                                 const SyncModuleWeights& w_ab,
                                                 const SyncModuleWeights& w_ba,
                                                 const geometry::EpipolarMask& mask_ab,
                                                 const geometry::EpipolarMask& mask_ba);

/// Gradients of the scalar loss sum(masked_cross_attention(...)) with
/// respect to every input and weight, from a hand-derived reverse pass.
struct SyncGradients {
  Eigen::MatrixXd d_zq, d_zkv;
  Eigen::MatrixXd d_w_query, d_w_key, d_w_value;
  Eigen::MatrixXd d_ff1;
  Eigen::RowVectorXd d_b1;
  Eigen::MatrixXd d_ff2;
  Eigen::RowVectorXd d_b2;
};

SyncGradients masked_cross_attention_backward(const FeatureFrame& zq,
                                              const FeatureFrame& zkv,
                                              const SyncModuleWeights& w,
                                              const geometry::EpipolarMask& mask);

/**
 * Generic central-difference gradient check: for scalar f at x0 with claimed
 * gradient g, perturbs every coordinate by +-eps and reports the maximum
 * relative error |g_i - fd_i| / max(1, |g_i| + |fd_i|).
 */
double grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                  const Eigen::VectorXd& x0, const Eigen::VectorXd& analytic,
                  double eps = 1e-4);

/// grad_check applied to the full block: flattens (zq, zkv, all weights)
/// into one parameter vector and compares the reverse pass against central
/// differences. Returns the max relative error.
double grad_check_cross_attention(const FeatureFrame& zq, const FeatureFrame& zkv,
                                  const SyncModuleWeights& w,
                                  const geometry::EpipolarMask& mask,
                                  double eps = 1e-4);

/// Same check restricted to the attention half (masked_attention_raw); with
/// a singleton mask this path is exactly linear in (zkv, W_V).
double grad_check_attention_raw(const FeatureFrame& zq, const FeatureFrame& zkv,
                                const SyncModuleWeights& w,
                                const geometry::EpipolarMask& mask, double eps = 1e-4);

}  // namespace collabdiff::sync
