// SPDX-License-Identifier: Apache-2.0
#include "lwlm/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lwlm::nn {

namespace {
void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
}
}  // namespace

Value Graph::constant(Matrix m) { return push(std::move(m)); }

Value Graph::leaf(Parameter& p) {
  if (auto it = leaf_cache_.find(&p); it != leaf_cache_.end()) return Value{it->second};
  Parameter* pp = &p;
  Value v = push(p.value);
  const int idx = v.idx;
  nodes_[idx].back = [pp, idx](Graph& g) { pp->grad += g.nodes_[idx].grad; };
  leaf_cache_[&p] = idx;
  return v;
}

Value Graph::add(Value a, Value b) {
  check_same_shape(val(a), val(b), "add");
  Value out = push(val(a) + val(b));
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    g.ensure_grad(ai) += g.nodes_[oi].grad;
    g.ensure_grad(bi) += g.nodes_[oi].grad;
  };
  return out;
}

Value Graph::sub(Value a, Value b) {
  check_same_shape(val(a), val(b), "sub");
  Value out = push(val(a) - val(b));
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    g.ensure_grad(ai) += g.nodes_[oi].grad;
    g.ensure_grad(bi) -= g.nodes_[oi].grad;
  };
  return out;
}

Value Graph::mul(Value a, Value b) {
  check_same_shape(val(a), val(b), "mul");
  Value out = push(val(a).cwiseProduct(val(b)));
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    g.ensure_grad(ai) += g.nodes_[oi].grad.cwiseProduct(g.nodes_[bi].val);
    g.ensure_grad(bi) += g.nodes_[oi].grad.cwiseProduct(g.nodes_[ai].val);
  };
  return out;
}

Value Graph::cdiv(Value a, Value b) {
  check_same_shape(val(a), val(b), "cdiv");
  Value out = push(val(a).cwiseQuotient(val(b)));
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    const Matrix& bv = g.nodes_[bi].val;
    g.ensure_grad(ai) += go.cwiseQuotient(bv);
    g.ensure_grad(bi) -= go.cwiseProduct(g.nodes_[oi].val).cwiseQuotient(bv);
  };
  return out;
}

Value Graph::scale(Value a, double s) {
  Value out = push(val(a) * s);
  const int ai = a.idx, oi = out.idx;
  nodes_[oi].back = [ai, oi, s](Graph& g) { g.ensure_grad(ai) += s * g.nodes_[oi].grad; };
  return out;
}

Value Graph::add_scalar(Value a, double s) {
  Value out = push(val(a).array() + s);
  const int ai = a.idx, oi = out.idx;
  nodes_[oi].back = [ai, oi](Graph& g) { g.ensure_grad(ai) += g.nodes_[oi].grad; };
  return out;
}

Value Graph::matmul(Value a, Value b) {
  if (val(a).cols() != val(b).rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Value out = push(val(a) * val(b));
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    g.ensure_grad(ai).noalias() += go * g.nodes_[bi].val.transpose();
    g.ensure_grad(bi).noalias() += g.nodes_[ai].val.transpose() * go;
  };
  return out;
}

Value Graph::matmul_nt(Value a, Value b) {
  if (val(a).cols() != val(b).cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Value out = push(val(a) * val(b).transpose());
  const int ai = a.idx, bi = b.idx, oi = out.idx;
  nodes_[oi].back = [ai, bi, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    g.ensure_grad(ai).noalias() += go * g.nodes_[bi].val;
    g.ensure_grad(bi).noalias() += go.transpose() * g.nodes_[ai].val;
  };
  return out;
}

Value Graph::add_row_broadcast(Value x, Value row) {
  if (val(row).rows() != 1 || val(row).cols() != val(x).cols())
    throw std::invalid_argument("add_row_broadcast: row must be 1 x cols(x)");
  Value out = push(val(x).rowwise() + val(row).row(0));
  const int xi = x.idx, ri = row.idx, oi = out.idx;
  nodes_[oi].back = [xi, ri, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    g.ensure_grad(xi) += go;
    g.ensure_grad(ri) += go.colwise().sum();
  };
  return out;
}

Value Graph::div_col_broadcast(Value x, Value col) {
  if (val(col).cols() != 1 || val(col).rows() != val(x).rows())
    throw std::invalid_argument("div_col_broadcast: col must be rows(x) x 1");
  Matrix out_val = val(x).array().colwise() / val(col).col(0).array();
  Value out = push(std::move(out_val));
  const int xi = x.idx, ci = col.idx, oi = out.idx;
  nodes_[oi].back = [xi, ci, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    const auto c = g.nodes_[ci].val.col(0).array();
    g.ensure_grad(xi) += (go.array().colwise() / c).matrix();
    g.ensure_grad(ci) -= (go.cwiseProduct(g.nodes_[oi].val).rowwise().sum().array() / c).matrix();
  };
  return out;
}

Value Graph::softmax_rows(Value x) {
  Matrix p = val(x);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  Value out = push(std::move(p));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    const Matrix& pv = g.nodes_[oi].val;
    const Matrix& go = g.nodes_[oi].grad;
    Matrix gx = go.cwiseProduct(pv);
    const Eigen::VectorXd rowsum = gx.rowwise().sum();
    gx -= (pv.array().colwise() * rowsum.array()).matrix();
    g.ensure_grad(xi) += gx;
  };
  return out;
}

Value Graph::logsumexp_rows(Value x) {
  const Matrix& xv = val(x);
  Matrix out_val(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    out_val(r, 0) = m + std::log((xv.row(r).array() - m).exp().sum());
  }
  Value out = push(std::move(out_val));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    const Matrix& xv2 = g.nodes_[xi].val;
    const Matrix& lse = g.nodes_[oi].val;
    const Matrix& go = g.nodes_[oi].grad;
    Matrix soft = (xv2.array().colwise() - lse.col(0).array()).exp();
    g.ensure_grad(xi) += (soft.array().colwise() * go.col(0).array()).matrix();
  };
  return out;
}

Value Graph::layernorm_rows(Value x, Value gamma, Value beta, double eps) {
  const Matrix& xv = val(x);
  const Eigen::Index cols = xv.cols();
  if (val(gamma).rows() != 1 || val(gamma).cols() != cols || val(beta).rows() != 1 ||
      val(beta).cols() != cols)
    throw std::invalid_argument("layernorm_rows: gamma/beta must be 1 x cols(x)");
  Matrix xhat(xv.rows(), cols);
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_sigma(r);
  }
  Matrix out_val =
      (xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() + val(beta).row(0).array();
  Value out = push(std::move(out_val));
  const int xi = x.idx, gi = gamma.idx, bi = beta.idx, oi = out.idx;
  // xhat and inv_sigma are cached by value in the closure
  nodes_[oi].back = [xi, gi, bi, oi, xhat, inv_sigma](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    g.ensure_grad(gi) += go.cwiseProduct(xhat).colwise().sum();
    g.ensure_grad(bi) += go.colwise().sum();
    const auto gamma_row = g.nodes_[gi].val.row(0).array();
    Matrix gxhat = (go.array().rowwise() * gamma_row).matrix();
    const double n = static_cast<double>(xhat.cols());
    const Eigen::VectorXd mean_g = gxhat.rowwise().mean();
    const Eigen::VectorXd mean_gx = gxhat.cwiseProduct(xhat).rowwise().sum() / n;
    Matrix gx = gxhat;
    gx.colwise() -= mean_g;
    gx -= (xhat.array().colwise() * mean_gx.array()).matrix();
    gx = (gx.array().colwise() * inv_sigma.array()).matrix();
    g.ensure_grad(xi) += gx;
  };
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
inline double std_normal_cdf(double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)); }
}  // namespace

Value Graph::gelu(Value x) {
  const Matrix& xv = val(x);
  Matrix out_val = xv.unaryExpr([](double v) { return v * std_normal_cdf(v); });
  Value out = push(std::move(out_val));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Matrix deriv = g.nodes_[xi].val.unaryExpr([inv_sqrt_2pi](double v) {
      return std_normal_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    g.ensure_grad(xi) += g.nodes_[oi].grad.cwiseProduct(deriv);
  };
  return out;
}

Value Graph::square(Value x) {
  Value out = push(val(x).array().square());
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    g.ensure_grad(xi) += 2.0 * g.nodes_[oi].grad.cwiseProduct(g.nodes_[xi].val);
  };
  return out;
}

Value Graph::sqrt_el(Value x) {
  Value out = push(val(x).array().sqrt());
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    g.ensure_grad(xi) +=
        (g.nodes_[oi].grad.array() * 0.5 / g.nodes_[oi].val.array()).matrix();
  };
  return out;
}

Value Graph::abs_el(Value x) {
  Value out = push(val(x).array().abs());
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    const auto sign = g.nodes_[xi].val.array().sign();
    g.ensure_grad(xi) += (g.nodes_[oi].grad.array() * sign).matrix();
  };
  return out;
}

Value Graph::slice_rows(Value x, int r0, int n) {
  Value out = push(val(x).middleRows(r0, n));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, r0, n](Graph& g) {
    g.ensure_grad(xi).middleRows(r0, n) += g.nodes_[oi].grad;
  };
  return out;
}

Value Graph::slice_cols(Value x, int c0, int n) {
  Value out = push(val(x).middleCols(c0, n));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, c0, n](Graph& g) {
    g.ensure_grad(xi).middleCols(c0, n) += g.nodes_[oi].grad;
  };
  return out;
}

Value Graph::concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = val(parts[0]).cols();
  for (Value p : parts) rows += val(p).rows();
  Matrix out_val(rows, cols);
  Eigen::Index r = 0;
  std::vector<int> idxs;
  std::vector<int> offsets;
  for (Value p : parts) {
    out_val.middleRows(r, val(p).rows()) = val(p);
    idxs.push_back(p.idx);
    offsets.push_back(static_cast<int>(r));
    r += val(p).rows();
  }
  Value out = push(std::move(out_val));
  const int oi = out.idx;
  nodes_[oi].back = [idxs, offsets, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      Matrix& gp = g.ensure_grad(idxs[i]);
      gp += go.middleRows(offsets[i], gp.rows());
    }
  };
  return out;
}

Value Graph::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = val(parts[0]).rows();
  for (Value p : parts) cols += val(p).cols();
  Matrix out_val(rows, cols);
  Eigen::Index c = 0;
  std::vector<int> idxs;
  std::vector<int> offsets;
  for (Value p : parts) {
    out_val.middleCols(c, val(p).cols()) = val(p);
    idxs.push_back(p.idx);
    offsets.push_back(static_cast<int>(c));
    c += val(p).cols();
  }
  Value out = push(std::move(out_val));
  const int oi = out.idx;
  nodes_[oi].back = [idxs, offsets, oi](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      Matrix& gp = g.ensure_grad(idxs[i]);
      gp += go.middleCols(offsets[i], gp.cols());
    }
  };
  return out;
}

Value Graph::sum_all(Value x) {
  Matrix s(1, 1);
  s(0, 0) = val(x).sum();
  Value out = push(std::move(s));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    g.ensure_grad(xi).array() += g.nodes_[oi].grad(0, 0);
  };
  return out;
}

Value Graph::mean_rows(Value x) {
  Value out = push(val(x).colwise().mean());
  const int xi = x.idx, oi = out.idx;
  const double inv_n = 1.0 / static_cast<double>(val(x).rows());
  nodes_[oi].back = [xi, oi, inv_n](Graph& g) {
    const Matrix& go = g.nodes_[oi].grad;
    g.ensure_grad(xi).rowwise() += (inv_n * go).row(0);
  };
  return out;
}

Value Graph::row_sums(Value x) {
  Value out = push(val(x).rowwise().sum());
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi](Graph& g) {
    g.ensure_grad(xi).colwise() += g.nodes_[oi].grad.col(0);
  };
  return out;
}

Value Graph::gather(Value x, std::vector<std::pair<int, int>> entries) {
  Matrix out_val(static_cast<Eigen::Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i)
    out_val(static_cast<Eigen::Index>(i), 0) = val(x)(entries[i].first, entries[i].second);
  Value out = push(std::move(out_val));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, entries = std::move(entries)](Graph& g) {
    Matrix& gx = g.ensure_grad(xi);
    const Matrix& go = g.nodes_[oi].grad;
    for (std::size_t i = 0; i < entries.size(); ++i)
      gx(entries[i].first, entries[i].second) += go(static_cast<Eigen::Index>(i), 0);
  };
  return out;
}

Value Graph::dropout(Value x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  Matrix mask(val(x).rows(), val(x).cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      mask(i, j) = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
  Value out = push(val(x).cwiseProduct(mask));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, mask = std::move(mask)](Graph& g) {
    g.ensure_grad(xi) += g.nodes_[oi].grad.cwiseProduct(mask);
  };
  return out;
}

Value Graph::index_gather(Value x, const Eigen::MatrixXi& map, int out_rows, int out_cols) {
  if (map.rows() != out_rows || map.cols() != out_cols)
    throw std::invalid_argument("index_gather: map shape mismatch");
  const Matrix& xv = val(x);
  Matrix out_val = Matrix::Zero(out_rows, out_cols);
  const Eigen::Index src_cols = xv.cols();
  for (int j = 0; j < out_cols; ++j)
    for (int i = 0; i < out_rows; ++i) {
      const int flat = map(i, j);
      if (flat >= 0) out_val(i, j) = xv(flat / src_cols, flat % src_cols);
    }
  Value out = push(std::move(out_val));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, map](Graph& g) {
    Matrix& gx = g.ensure_grad(xi);
    const Matrix& go = g.nodes_[oi].grad;
    const Eigen::Index src_cols2 = gx.cols();
    for (int j = 0; j < go.cols(); ++j)
      for (int i = 0; i < go.rows(); ++i) {
        const int flat = map(i, j);
        if (flat >= 0) gx(flat / src_cols2, flat % src_cols2) += go(i, j);
      }
  };
  return out;
}

Value Graph::index_scatter_add(Value x, const Eigen::MatrixXi& map, int out_rows, int out_cols) {
  const Matrix& xv = val(x);
  if (map.rows() != xv.rows() || map.cols() != xv.cols())
    throw std::invalid_argument("index_scatter_add: map shape mismatch");
  Matrix out_val = Matrix::Zero(out_rows, out_cols);
  for (Eigen::Index j = 0; j < xv.cols(); ++j)
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const int flat = map(static_cast<int>(i), static_cast<int>(j));
      if (flat >= 0) out_val(flat / out_cols, flat % out_cols) += xv(i, j);
    }
  Value out = push(std::move(out_val));
  const int xi = x.idx, oi = out.idx;
  nodes_[oi].back = [xi, oi, map, out_cols](Graph& g) {
    Matrix& gx = g.ensure_grad(xi);
    const Matrix& go = g.nodes_[oi].grad;
    for (Eigen::Index j = 0; j < gx.cols(); ++j)
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        const int flat = map(static_cast<int>(i), static_cast<int>(j));
        if (flat >= 0) gx(i, j) += go(flat / out_cols, flat % out_cols);
      }
  };
  return out;
}

void Graph::backward(Value root) {
  Matrix seed;
  seed.setOnes(val(root).rows(), val(root).cols());
  backward(root, seed);
}

void Graph::backward(Value root, const Matrix& seed) {
  check_same_shape(val(root), seed, "backward seed");
  ensure_grad(root.idx) += seed;
  for (int i = root.idx; i >= 0; --i) {
    if (nodes_[i].back && has_grad(i)) nodes_[i].back(*this);
  }
}

}  // namespace lwlm::nn
