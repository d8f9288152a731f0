#include "collabdiff/sync_attention.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace collabdiff::sync {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_deriv(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void require_compatible(const FeatureFrame& zq, const FeatureFrame& zkv,
                        const SyncModuleWeights& w, const geometry::EpipolarMask& mask) {
  zq.validate();
  zkv.validate();
  w.validate();
  if (zq.dim() != w.dim() || zkv.dim() != w.dim())
    throw std::invalid_argument("sync_attention: feature dim does not match weights");
  if (mask.query_res().height != zq.height || mask.query_res().width != zq.width)
    throw std::invalid_argument("sync_attention: mask query resolution mismatch");
  if (mask.key_res().height != zkv.height || mask.key_res().width != zkv.width)
    throw std::invalid_argument("sync_attention: mask key resolution mismatch");
}

/// Masked row-wise softmax of Q K^T / sqrt(da); empty rows become all-zero.
Eigen::MatrixXd masked_softmax(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                               const geometry::EpipolarMask& mask) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Eigen::Index nq = q.rows(), nk = k.rows();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nq, nk);
  for (Eigen::Index qi = 0; qi < nq; ++qi) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index ki = 0; ki < nk; ++ki) {
      if (!mask.bit(static_cast<int>(qi), static_cast<int>(ki))) continue;
      const double l = q.row(qi).dot(k.row(ki)) * scale;
      a(qi, ki) = l;
      if (l > max_logit) max_logit = l;
    }
    if (!std::isfinite(max_logit)) continue;  // all keys masked: zero row
    double denom = 0.0;
    for (Eigen::Index ki = 0; ki < nk; ++ki) {
      if (!mask.bit(static_cast<int>(qi), static_cast<int>(ki))) continue;
      const double e = std::exp(a(qi, ki) - max_logit);
      a(qi, ki) = e;
      denom += e;
    }
    for (Eigen::Index ki = 0; ki < nk; ++ki)
      if (mask.bit(static_cast<int>(qi), static_cast<int>(ki))) a(qi, ki) /= denom;
  }
  return a;
}

struct ForwardTape {
  Eigen::MatrixXd q, k, v;    // projections
  Eigen::MatrixXd attn;       // softmax weights, zeros at masked/empty
  Eigen::MatrixXd att_out;    // attn * v
  Eigen::MatrixXd pre_act;    // att_out * ff1 + b1
  Eigen::MatrixXd hidden;     // gelu(pre_act)
};

ForwardTape forward(const FeatureFrame& zq, const FeatureFrame& zkv,
                    const SyncModuleWeights& w, const geometry::EpipolarMask& mask) {
  require_compatible(zq, zkv, w, mask);
  ForwardTape tape;
  tape.q = zq.values * w.w_query;
  tape.k = zkv.values * w.w_key;
  tape.v = zkv.values * w.w_value;
  tape.attn = masked_softmax(tape.q, tape.k, mask);
  tape.att_out = tape.attn * tape.v;
  tape.pre_act = (tape.att_out * w.ff1).rowwise() + w.b1;
  tape.hidden = tape.pre_act.unaryExpr([](double x) { return gelu(x); });
  return tape;
}

}  // namespace

FeatureFrame::FeatureFrame(int height, int width, int dim)
    : height(height), width(width) {
  if (height < 1 || width < 1 || dim < 1)
    throw std::invalid_argument("FeatureFrame: all dimensions must be positive");
  values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(height) * width, dim);
}

void FeatureFrame::validate() const {
  if (height < 1 || width < 1 || values.cols() < 1)
    throw std::invalid_argument("FeatureFrame: all dimensions must be positive");
  if (values.rows() != static_cast<Eigen::Index>(height) * width)
    throw std::invalid_argument("FeatureFrame: value rows do not match the grid");
  if (!values.allFinite())
    throw std::invalid_argument("FeatureFrame: non-finite entries");
}

void FeatureFrame::write_csv(std::ostream& out) const {
  out << "feature_frame," << height << ',' << width << ',' << dim() << '\n';
  std::ostringstream row;
  row.precision(17);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    row.str("");
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) row << ',';
      row << values(r, c);
    }
    row << '\n';
    out << row.str();
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  return fields;
}

Eigen::RowVectorXd parse_csv_row(const std::string& line, Eigen::Index expect,
                                 const char* what) {
  const auto fields = split_csv_line(line);
  if (static_cast<Eigen::Index>(fields.size()) != expect)
    throw std::invalid_argument(std::string(what) + ": wrong column count");
  Eigen::RowVectorXd row(expect);
  for (Eigen::Index i = 0; i < expect; ++i) row[i] = std::stod(fields[i]);
  return row;
}

Eigen::MatrixXd read_csv_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols,
                                const char* what) {
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line))
      throw std::invalid_argument(std::string(what) + ": truncated file");
    m.row(r) = parse_csv_row(line, cols, what);
  }
  return m;
}

}  // namespace

FeatureFrame FeatureFrame::read_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::invalid_argument("FeatureFrame: empty stream");
  const auto fields = split_csv_line(header);
  if (fields.size() != 4 || fields[0] != "feature_frame")
    throw std::invalid_argument("FeatureFrame: bad header");
  FeatureFrame f(std::stoi(fields[1]), std::stoi(fields[2]), std::stoi(fields[3]));
  f.values = read_csv_matrix(in, f.values.rows(), f.values.cols(), "FeatureFrame");
  return f;
}

FeatureFrame random_frame(int height, int width, int dim, Rng& rng, double scale) {
  FeatureFrame f(height, width, dim);
  for (Eigen::Index r = 0; r < f.values.rows(); ++r)
    for (Eigen::Index c = 0; c < f.values.cols(); ++c)
      f.values(r, c) = scale * rng.normal();
  return f;
}

void SyncModuleWeights::validate() const {
  const int d = dim(), da = dim_attn();
  if (d < 1 || da < 1)
    throw std::invalid_argument("SyncModuleWeights: dims must be positive");
  if (w_key.rows() != d || w_key.cols() != da || w_value.rows() != d ||
      w_value.cols() != da)
    throw std::invalid_argument("SyncModuleWeights: projection shape mismatch");
  if (ff1.rows() != da || ff1.cols() != 4 * da || b1.size() != 4 * da)
    throw std::invalid_argument("SyncModuleWeights: ff1 shape mismatch");
  if (ff2.rows() != 4 * da || ff2.cols() != d || b2.size() != d)
    throw std::invalid_argument("SyncModuleWeights: ff2 shape mismatch");
  if (!w_query.allFinite() || !w_key.allFinite() || !w_value.allFinite() ||
      !ff1.allFinite() || !b1.allFinite() || !ff2.allFinite() || !b2.allFinite() ||
      !std::isfinite(output_scale))
    throw std::invalid_argument("SyncModuleWeights: non-finite entries");
}

SyncModuleWeights SyncModuleWeights::init(int dim, int dim_attn, Rng& rng,
                                          bool zero_output_layer) {
  if (dim < 1 || dim_attn < 1)
    throw std::invalid_argument("SyncModuleWeights: dims must be positive");
  const auto fill = [&rng](Eigen::MatrixXd& m, double fan_in) {
    const double s = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = s * rng.normal();
  };
  SyncModuleWeights w;
  w.w_query.resize(dim, dim_attn);
  w.w_key.resize(dim, dim_attn);
  w.w_value.resize(dim, dim_attn);
  w.ff1.resize(dim_attn, 4 * dim_attn);
  w.ff2.resize(4 * dim_attn, dim);
  fill(w.w_query, dim);
  fill(w.w_key, dim);
  fill(w.w_value, dim);
  fill(w.ff1, dim_attn);
  w.b1 = Eigen::RowVectorXd::Zero(4 * dim_attn);
  if (zero_output_layer) {
    w.ff2.setZero();
  } else {
    fill(w.ff2, 4.0 * dim_attn);
  }
  w.b2 = Eigen::RowVectorXd::Zero(dim);
  return w;
}

void SyncModuleWeights::write_csv(std::ostream& out) const {
  validate();
  std::ostringstream body;
  body.precision(17);
  const auto emit = [&body](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c) body << ',';
        body << m(r, c);
      }
      body << '\n';
    }
  };
  body << "sync_weights," << dim() << ',' << dim_attn() << ',' << output_scale << '\n';
  emit(w_query);
  emit(w_key);
  emit(w_value);
  emit(ff1);
  emit(b1);
  emit(ff2);
  emit(b2);
  out << body.str();
}

SyncModuleWeights SyncModuleWeights::read_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::invalid_argument("SyncModuleWeights: empty stream");
  const auto fields = split_csv_line(header);
  if (fields.size() != 4 || fields[0] != "sync_weights")
    throw std::invalid_argument("SyncModuleWeights: bad header");
  const int d = std::stoi(fields[1]);
  const int da = std::stoi(fields[2]);
  SyncModuleWeights w;
  w.output_scale = std::stod(fields[3]);
  w.w_query = read_csv_matrix(in, d, da, "SyncModuleWeights");
  w.w_key = read_csv_matrix(in, d, da, "SyncModuleWeights");
  w.w_value = read_csv_matrix(in, d, da, "SyncModuleWeights");
  w.ff1 = read_csv_matrix(in, da, 4 * da, "SyncModuleWeights");
  w.b1 = read_csv_matrix(in, 1, 4 * da, "SyncModuleWeights");
  w.ff2 = read_csv_matrix(in, 4 * da, d, "SyncModuleWeights");
  w.b2 = read_csv_matrix(in, 1, d, "SyncModuleWeights");
  w.validate();
  return w;
}

FeatureFrame masked_cross_attention(const FeatureFrame& zq, const FeatureFrame& zkv,
                                    const SyncModuleWeights& w,
                                    const geometry::EpipolarMask& mask) {
  const ForwardTape tape = forward(zq, zkv, w, mask);
  FeatureFrame out(zq.height, zq.width, w.dim());
  out.values = (((tape.hidden * w.ff2).rowwise() + w.b2)) * w.output_scale;
  return out;
}

FeatureFrame masked_attention_raw(const FeatureFrame& zq, const FeatureFrame& zkv,
                                  const SyncModuleWeights& w,
                                  const geometry::EpipolarMask& mask) {
  require_compatible(zq, zkv, w, mask);
  const Eigen::MatrixXd q = zq.values * w.w_query;
  const Eigen::MatrixXd k = zkv.values * w.w_key;
  const Eigen::MatrixXd v = zkv.values * w.w_value;
  const Eigen::MatrixXd attn = masked_softmax(q, k, mask);
  FeatureFrame out(zq.height, zq.width, w.dim_attn());
  out.values = attn * v;
  return out;
}

std::pair<FeatureFrame, FeatureFrame> apply_sync(const FeatureFrame& za,
                                                 const FeatureFrame& zb,
                                                 const SyncModuleWeights& shared,
                                                 const geometry::EpipolarMask& mask_ab,
                                                 const geometry::EpipolarMask& mask_ba) {
  return apply_sync(za, zb, shared, shared, mask_ab, mask_ba);
}

std::pair<FeatureFrame, FeatureFrame> apply_sync(const FeatureFrame& za,
                                                 const FeatureFrame& zb,
                                                 const SyncModuleWeights& w_ab,
                                                 const SyncModuleWeights& w_ba,
                                                 const geometry::EpipolarMask& mask_ab,
                                                 const geometry::EpipolarMask& mask_ba) {
  // Both directions read the pre-update inputs.
  const FeatureFrame delta_a = masked_cross_attention(za, zb, w_ab, mask_ab);
  const FeatureFrame delta_b = masked_cross_attention(zb, za, w_ba, mask_ba);
  FeatureFrame out_a = za;
  FeatureFrame out_b = zb;
  out_a.values += delta_a.values;
  out_b.values += delta_b.values;
  return {out_a, out_b};
}

SyncGradients masked_cross_attention_backward(const FeatureFrame& zq,
                                              const FeatureFrame& zkv,
                                              const SyncModuleWeights& w,
                                              const geometry::EpipolarMask& mask) {
  const ForwardTape t = forward(zq, zkv, w, mask);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.dim_attn()));

  // Loss = sum(out); out = (hidden * ff2 + b2) * output_scale.
  const Eigen::MatrixXd g_out =
      Eigen::MatrixXd::Constant(t.att_out.rows(), w.dim(), w.output_scale);

  SyncGradients g;
  g.d_b2 = g_out.colwise().sum();
  g.d_ff2 = t.hidden.transpose() * g_out;
  const Eigen::MatrixXd d_hidden = g_out * w.ff2.transpose();
  const Eigen::MatrixXd d_pre =
      d_hidden.cwiseProduct(t.pre_act.unaryExpr([](double x) { return gelu_deriv(x); }));
  g.d_b1 = d_pre.colwise().sum();
  g.d_ff1 = t.att_out.transpose() * d_pre;
  const Eigen::MatrixXd d_att = d_pre * w.ff1.transpose();

  const Eigen::MatrixXd d_attn_w = d_att * t.v.transpose();
  const Eigen::MatrixXd d_v = t.attn.transpose() * d_att;

  // Softmax backward per query row; masked entries carry zero weight and
  // all-masked rows have an identically-zero (constant) output.
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(t.attn.rows(), t.attn.cols());
  for (Eigen::Index qi = 0; qi < t.attn.rows(); ++qi) {
    const double dot = d_attn_w.row(qi).dot(t.attn.row(qi));
    d_logits.row(qi) =
        t.attn.row(qi).cwiseProduct(d_attn_w.row(qi) - Eigen::RowVectorXd::Constant(
                                                           t.attn.cols(), dot));
  }

  const Eigen::MatrixXd d_q = d_logits * t.k * scale;
  const Eigen::MatrixXd d_k = d_logits.transpose() * t.q * scale;

  g.d_zq = d_q * w.w_query.transpose();
  g.d_zkv = d_k * w.w_key.transpose() + d_v * w.w_value.transpose();
  g.d_w_query = zq.values.transpose() * d_q;
  g.d_w_key = zkv.values.transpose() * d_k;
  g.d_w_value = zkv.values.transpose() * d_v;
  return g;
}

double grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                  const Eigen::VectorXd& x0, const Eigen::VectorXd& analytic,
                  double eps) {
  if (x0.size() != analytic.size())
    throw std::invalid_argument("grad_check: gradient size mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  double worst = 0.0;
  Eigen::VectorXd x = x0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x[i] = x0[i] + eps;
    const double fp = f(x);
    x[i] = x0[i] - eps;
    const double fm = f(x);
    x[i] = x0[i];
    const double fd = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(analytic[i] - fd) /
                       std::max(1.0, std::abs(analytic[i]) + std::abs(fd));
    if (rel > worst) worst = rel;
  }
  return worst;
}

namespace {

/// Pack (zq, zkv, weights) into one flat parameter vector, column-major per
/// block, in a fixed order shared by pack and unpack.
Eigen::VectorXd pack_parameters(const FeatureFrame& zq, const FeatureFrame& zkv,
                                const SyncModuleWeights& w) {
  const auto total = zq.values.size() + zkv.values.size() + w.w_query.size() +
                     w.w_key.size() + w.w_value.size() + w.ff1.size() + w.b1.size() +
                     w.ff2.size() + w.b2.size();
  Eigen::VectorXd x(total);
  Eigen::Index at = 0;
  const auto put = [&x, &at](const auto& m) {
    x.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  put(zq.values);
  put(zkv.values);
  put(w.w_query);
  put(w.w_key);
  put(w.w_value);
  put(w.ff1);
  put(w.b1);
  put(w.ff2);
  put(w.b2);
  return x;
}

void unpack_parameters(const Eigen::VectorXd& x, FeatureFrame& zq, FeatureFrame& zkv,
                       SyncModuleWeights& w) {
  Eigen::Index at = 0;
  const auto take = [&x, &at](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = x.segment(at, m.size());
    at += m.size();
  };
  take(zq.values);
  take(zkv.values);
  take(w.w_query);
  take(w.w_key);
  take(w.w_value);
  take(w.ff1);
  take(w.b1);
  take(w.ff2);
  take(w.b2);
}

SyncGradients masked_attention_raw_backward(const FeatureFrame& zq,
                                            const FeatureFrame& zkv,
                                            const SyncModuleWeights& w,
                                            const geometry::EpipolarMask& mask) {
  require_compatible(zq, zkv, w, mask);
  const Eigen::MatrixXd q = zq.values * w.w_query;
  const Eigen::MatrixXd k = zkv.values * w.w_key;
  const Eigen::MatrixXd v = zkv.values * w.w_value;
  const Eigen::MatrixXd attn = masked_softmax(q, k, mask);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.dim_attn()));

  const Eigen::MatrixXd d_att = Eigen::MatrixXd::Ones(q.rows(), w.dim_attn());
  const Eigen::MatrixXd d_attn_w = d_att * v.transpose();
  const Eigen::MatrixXd d_v = attn.transpose() * d_att;

  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(attn.rows(), attn.cols());
  for (Eigen::Index qi = 0; qi < attn.rows(); ++qi) {
    const double dot = d_attn_w.row(qi).dot(attn.row(qi));
    d_logits.row(qi) = attn.row(qi).cwiseProduct(
        d_attn_w.row(qi) - Eigen::RowVectorXd::Constant(attn.cols(), dot));
  }

  const Eigen::MatrixXd d_q = d_logits * k * scale;
  const Eigen::MatrixXd d_k = d_logits.transpose() * q * scale;

  SyncGradients g;
  g.d_zq = d_q * w.w_query.transpose();
  g.d_zkv = d_k * w.w_key.transpose() + d_v * w.w_value.transpose();
  g.d_w_query = zq.values.transpose() * d_q;
  g.d_w_key = zkv.values.transpose() * d_k;
  g.d_w_value = zkv.values.transpose() * d_v;
  g.d_ff1 = Eigen::MatrixXd::Zero(w.ff1.rows(), w.ff1.cols());
  g.d_b1 = Eigen::RowVectorXd::Zero(w.b1.size());
  g.d_ff2 = Eigen::MatrixXd::Zero(w.ff2.rows(), w.ff2.cols());
  g.d_b2 = Eigen::RowVectorXd::Zero(w.b2.size());
  return g;
}

Eigen::VectorXd pack_gradients(const SyncGradients& g) {
  Eigen::VectorXd x(g.d_zq.size() + g.d_zkv.size() + g.d_w_query.size() +
                    g.d_w_key.size() + g.d_w_value.size() + g.d_ff1.size() +
                    g.d_b1.size() + g.d_ff2.size() + g.d_b2.size());
  Eigen::Index at = 0;
  const auto put = [&x, &at](const auto& m) {
    x.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  put(g.d_zq);
  put(g.d_zkv);
  put(g.d_w_query);
  put(g.d_w_key);
  put(g.d_w_value);
  put(g.d_ff1);
  put(g.d_b1);
  put(g.d_ff2);
  put(g.d_b2);
  return x;
}

}  // namespace

double grad_check_cross_attention(const FeatureFrame& zq, const FeatureFrame& zkv,
                                  const SyncModuleWeights& w,
                                  const geometry::EpipolarMask& mask, double eps) {
  const Eigen::VectorXd x0 = pack_parameters(zq, zkv, w);
  const Eigen::VectorXd analytic =
      pack_gradients(masked_cross_attention_backward(zq, zkv, w, mask));
  FeatureFrame zq_p = zq, zkv_p = zkv;
  SyncModuleWeights w_p = w;
  const auto loss = [&](const Eigen::VectorXd& x) {
    unpack_parameters(x, zq_p, zkv_p, w_p);
    return masked_cross_attention(zq_p, zkv_p, w_p, mask).values.sum();
  };
  return grad_check(loss, x0, analytic, eps);
}

double grad_check_attention_raw(const FeatureFrame& zq, const FeatureFrame& zkv,
                                const SyncModuleWeights& w,
                                const geometry::EpipolarMask& mask, double eps) {
  const Eigen::VectorXd x0 = pack_parameters(zq, zkv, w);
  const Eigen::VectorXd analytic =
      pack_gradients(masked_attention_raw_backward(zq, zkv, w, mask));
  FeatureFrame zq_p = zq, zkv_p = zkv;
  SyncModuleWeights w_p = w;
  const auto loss = [&](const Eigen::VectorXd& x) {
    unpack_parameters(x, zq_p, zkv_p, w_p);
    return masked_attention_raw(zq_p, zkv_p, w_p, mask).values.sum();
  };
  return grad_check(loss, x0, analytic, eps);
}

}  // namespace collabdiff::sync
