#pragma once

// Differentiable ops over Var. Each op computes its value eagerly and, when
// any input needs a gradient, registers the matching vector-Jacobian product.
//
// Broadcasting is limited to scalar-with-array and equal shapes for the
// generic elementwise ops. The transformer needs three structured
// broadcasts, which get their own ops: linear (row bias), add_tiled
// (positional table over the batch) and add_to_tokens (per-item vector over
// the token axis).

#include <cmath>
#include <numbers>
#include <vector>

#include "ikdp/autograd.hpp"

namespace ikdp {

namespace detail {

template <typename Scalar>
Graph<Scalar>& same_graph(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.graph() != &b.graph()) throw Error(ErrorCode::kInvalidArgument, "operands belong to different graphs");
  return a.graph();
}

template <typename Scalar>
bool needs(const Var<Scalar>& v) {
  return v.graph().requires_grad(v);
}

inline std::string pair_str(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": " + a.str() + " vs " + b.str();
}

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(const Var<Scalar>& a, F f, DF df) {
  Graph<Scalar>& g = a.graph();
  const int ia = a.id();
  Var<Scalar> r = g.record(Array<Scalar>(a.shape(), a.matrix().unaryExpr(f)), needs(a), nullptr);
  if (needs(a)) {
    const int ir = r.id();
    g.set_backward(ir, [&g, ia, ir, df] {
      const auto& x = g.value(Var<Scalar>(&g, ia)).matrix();
      g.accumulate(ia, g.grad(ir).cwiseProduct(x.unaryExpr(df)));
    });
  }
  return r;
}

template <typename Scalar>
Mat<Scalar> reduce_to(const Mat<Scalar>& grad, const Shape& target) {
  if (target.numel() == 1) return Mat<Scalar>::Constant(1, 1, grad.sum());
  return grad;
}

}  // namespace detail

/// a [.. x k] times b [k x n]. Leading extents of `a` are kept.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = detail::same_graph(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.rank() != 2 || sa.cols() != sb[0])
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("matmul", sa, sb));
  Shape out_shape = sa.rank() == 3 ? Shape{sa[0], sa[1], sb[1]} : Shape{sa.rows(), sb[1]};
  const bool req = detail::needs(a) || detail::needs(b);
  Var<Scalar> r = g.record(Array<Scalar>(out_shape, a.matrix() * b.matrix()), req, nullptr);
  if (req) {
    const int ia = a.id(), ib = b.id(), ir = r.id();
    g.set_backward(ir, [&g, ia, ib, ir] {
      const auto& dy = g.grad(ir);
      if (g.requires_grad(Var<Scalar>(&g, ia))) g.accumulate(ia, dy * g.value(Var<Scalar>(&g, ib)).matrix().transpose());
      if (g.requires_grad(Var<Scalar>(&g, ib))) g.accumulate(ib, g.value(Var<Scalar>(&g, ia)).matrix().transpose() * dy);
    });
  }
  return r;
}

/// x [.. x k] * w [k x n] + bias [n], bias added to every row.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias) {
  Graph<Scalar>& g = detail::same_graph(x, w);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.rank() != 2 || sx.cols() != sw[0])
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("linear", sx, sw));
  if (bias.shape().rank() != 1 || bias.shape()[0] != sw[1])
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("linear bias", sw, bias.shape()));
  Shape out_shape = sx.rank() == 3 ? Shape{sx[0], sx[1], sw[1]} : Shape{sx.rows(), sw[1]};
  Mat<Scalar> y = x.matrix() * w.matrix();
  y.rowwise() += bias.matrix().row(0);
  const bool req = detail::needs(x) || detail::needs(w) || detail::needs(bias);
  Var<Scalar> r = g.record(Array<Scalar>(out_shape, std::move(y)), req, nullptr);
  if (req) {
    const int ix = x.id(), iw = w.id(), ib = bias.id(), ir = r.id();
    g.set_backward(ir, [&g, ix, iw, ib, ir] {
      const auto& dy = g.grad(ir);
      if (g.requires_grad(Var<Scalar>(&g, ix))) g.accumulate(ix, dy * g.value(Var<Scalar>(&g, iw)).matrix().transpose());
      if (g.requires_grad(Var<Scalar>(&g, iw))) g.accumulate(iw, g.value(Var<Scalar>(&g, ix)).matrix().transpose() * dy);
      if (g.requires_grad(Var<Scalar>(&g, ib))) g.accumulate(ib, dy.colwise().sum());
    });
  }
  return r;
}

namespace detail {

enum class BinaryKind { kAdd, kSub, kMul };

template <typename Scalar>
Var<Scalar> binary(const Var<Scalar>& a, const Var<Scalar>& b, BinaryKind kind, const char* name) {
  Graph<Scalar>& g = same_graph(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool a_scalar = sa.numel() == 1 && !(sa == sb);
  const bool b_scalar = sb.numel() == 1 && !(sa == sb);
  if (!(sa == sb) && !a_scalar && !b_scalar) throw Error(ErrorCode::kShapeMismatch, pair_str(name, sa, sb));
  const Shape out_shape = a_scalar ? sb : sa;
  auto expand = [&](const Var<Scalar>& v, bool is_scalar) -> Mat<Scalar> {
    if (!is_scalar) return v.matrix();
    return Mat<Scalar>::Constant(out_shape.rows(), out_shape.cols(), v.value().item());
  };
  const Mat<Scalar> ma = expand(a, a_scalar);
  const Mat<Scalar> mb = expand(b, b_scalar);
  Mat<Scalar> y;
  switch (kind) {
    case BinaryKind::kAdd: y = ma + mb; break;
    case BinaryKind::kSub: y = ma - mb; break;
    case BinaryKind::kMul: y = ma.cwiseProduct(mb); break;
  }
  const bool req = needs(a) || needs(b);
  Var<Scalar> r = g.record(Array<Scalar>(out_shape, std::move(y)), req, nullptr);
  if (req) {
    const int ia = a.id(), ib = b.id(), ir = r.id();
    g.set_backward(ir, [&g, ia, ib, ir, kind, a_scalar, b_scalar, out_shape] {
      const Mat<Scalar>& dy = g.grad(ir);
      const Var<Scalar> va(&g, ia), vb(&g, ib);
      auto full = [&](const Var<Scalar>& v, bool is_scalar) -> Mat<Scalar> {
        if (!is_scalar) return v.matrix();
        return Mat<Scalar>::Constant(out_shape.rows(), out_shape.cols(), v.value().item());
      };
      if (g.requires_grad(va)) {
        Mat<Scalar> da = kind == BinaryKind::kMul ? Mat<Scalar>(dy.cwiseProduct(full(vb, b_scalar))) : dy;
        g.accumulate(ia, reduce_to(da, va.shape()));
      }
      if (g.requires_grad(vb)) {
        Mat<Scalar> db;
        switch (kind) {
          case BinaryKind::kAdd: db = dy; break;
          case BinaryKind::kSub: db = -dy; break;
          case BinaryKind::kMul: db = dy.cwiseProduct(full(va, a_scalar)); break;
        }
        g.accumulate(ib, reduce_to(db, vb.shape()));
      }
    });
  }
  return r;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kAdd, "add");
}
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kSub, "sub");
}
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kMul, "mul");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return detail::unary(a, [s](Scalar x) { return s * x; }, [s](Scalar) { return s; });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

/// Exact (erf) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  constexpr Scalar kInvSqrt2 = Scalar(0.70710678118654752440);
  constexpr Scalar kInvSqrt2Pi = Scalar(0.39894228040143267794);
  return detail::unary(
      a, [](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * kInvSqrt2)); },
      [](Scalar x) {
        return Scalar(0.5) * (Scalar(1) + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(Scalar(-0.5) * x * x);
      });
}

template <typename Scalar>
Var<Scalar> sin(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return std::sin(x); }, [](Scalar x) { return std::cos(x); });
}

template <typename Scalar>
Var<Scalar> cos(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return std::cos(x); }, [](Scalar x) { return -std::sin(x); });
}

/// Softmax over the trailing axis, max-shifted per row.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  Graph<Scalar>& g = a.graph();
  const Mat<Scalar>& x = a.matrix();
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    double total = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      y(i, j) = std::exp(x(i, j) - m);
      total += static_cast<double>(y(i, j));
    }
    y.row(i) /= static_cast<Scalar>(total);
  }
  const bool req = detail::needs(a);
  Var<Scalar> r = g.record(Array<Scalar>(a.shape(), std::move(y)), req, nullptr);
  if (req) {
    const int ia = a.id(), ir = r.id();
    g.set_backward(ir, [&g, ia, ir] {
      const auto& yv = g.value(Var<Scalar>(&g, ir)).matrix();
      const auto& dy = g.grad(ir);
      Mat<Scalar> dx(yv.rows(), yv.cols());
      for (Index i = 0; i < yv.rows(); ++i) {
        const Scalar dot = yv.row(i).dot(dy.row(i));
        dx.row(i) = yv.row(i).cwiseProduct((dy.row(i).array() - dot).matrix());
      }
      g.accumulate(ia, dx);
    });
  }
  return r;
}

/// Normalizes each row to zero mean and unit variance (biased, with 1e-5
/// added to the variance), then applies gain and bias per feature.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& a, const Var<Scalar>& gain, const Var<Scalar>& bias) {
  constexpr double kEps = 1e-5;
  Graph<Scalar>& g = detail::same_graph(a, gain);
  const Mat<Scalar>& x = a.matrix();
  const Index n = x.cols();
  if (n < 2) throw Error(ErrorCode::kShapeMismatch, "layer_norm needs at least 2 features, got " + a.shape().str());
  if (gain.shape().numel() != n || bias.shape().numel() != n)
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("layer_norm affine", a.shape(), gain.shape()));
  Mat<Scalar> xhat(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Index j = 0; j < n; ++j) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double d = x(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_std(i) = static_cast<Scalar>(is);
    for (Index j = 0; j < n; ++j) xhat(i, j) = static_cast<Scalar>((x(i, j) - mean) * is);
  }
  Mat<Scalar> y = xhat.array().rowwise() * gain.matrix().row(0).array();
  y.rowwise() += bias.matrix().row(0);
  const bool req = detail::needs(a) || detail::needs(gain) || detail::needs(bias);
  Var<Scalar> r = g.record(Array<Scalar>(a.shape(), std::move(y)), req, nullptr);
  if (req) {
    const int ia = a.id(), ig = gain.id(), ib = bias.id(), ir = r.id();
    g.set_backward(ir, [&g, ia, ig, ib, ir, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& dy = g.grad(ir);
      const auto& gv = g.value(Var<Scalar>(&g, ig)).matrix();
      if (g.requires_grad(Var<Scalar>(&g, ig))) g.accumulate(ig, dy.cwiseProduct(xhat).colwise().sum());
      if (g.requires_grad(Var<Scalar>(&g, ib))) g.accumulate(ib, dy.colwise().sum());
      if (g.requires_grad(Var<Scalar>(&g, ia))) {
        const Index cols = xhat.cols();
        Mat<Scalar> dx(xhat.rows(), cols);
        for (Index i = 0; i < xhat.rows(); ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (Index j = 0; j < cols; ++j) {
            const double d = static_cast<double>(dy(i, j)) * gv(0, j);
            mean_d += d;
            mean_dx += d * xhat(i, j);
          }
          mean_d /= static_cast<double>(cols);
          mean_dx /= static_cast<double>(cols);
          for (Index j = 0; j < cols; ++j) {
            const double d = static_cast<double>(dy(i, j)) * gv(0, j);
            dx(i, j) = static_cast<Scalar>(inv_std(i) * (d - mean_d - xhat(i, j) * mean_dx));
          }
        }
        g.accumulate(ia, dx);
      }
    });
  }
  return r;
}

/// Mean of squared differences, as a scalar.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = detail::same_graph(a, b);
  if (!(a.shape() == b.shape())) throw Error(ErrorCode::kShapeMismatch, detail::pair_str("mse", a.shape(), b.shape()));
  const Index n = a.value().size();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    total += d * d;
  }
  const bool req = detail::needs(a) || detail::needs(b);
  Var<Scalar> r = g.record(Array<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(n))), req, nullptr);
  if (req) {
    const int ia = a.id(), ib = b.id(), ir = r.id();
    g.set_backward(ir, [&g, ia, ib, ir, n] {
      const Scalar s = g.grad(ir)(0, 0) * Scalar(2) / static_cast<Scalar>(n);
      const Mat<Scalar> diff = g.value(Var<Scalar>(&g, ia)).matrix() - g.value(Var<Scalar>(&g, ib)).matrix();
      g.accumulate(ia, s * diff);
      g.accumulate(ib, -s * diff);
    });
  }
  return r;
}

/// Sum of all elements, as a scalar.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Graph<Scalar>& g = a.graph();
  double total = 0.0;
  for (Index i = 0; i < a.value().size(); ++i) total += a.value()[i];
  const bool req = detail::needs(a);
  Var<Scalar> r = g.record(Array<Scalar>::scalar(static_cast<Scalar>(total)), req, nullptr);
  if (req) {
    const int ia = a.id(), ir = r.id();
    const Shape s = a.shape();
    g.set_backward(ir, [&g, ia, ir, s] { g.accumulate(ia, Mat<Scalar>::Constant(s.rows(), s.cols(), g.grad(ir)(0, 0))); });
  }
  return r;
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, const Shape& shape) {
  Graph<Scalar>& g = a.graph();
  const bool req = detail::needs(a);
  Var<Scalar> r = g.record(a.value().reshaped(shape), req, nullptr);
  if (req) {
    const int ia = a.id(), ir = r.id();
    const Shape from = a.shape();
    g.set_backward(ir, [&g, ia, ir, from] {
      const auto& dy = g.grad(ir);
      g.accumulate(ia, Eigen::Map<const Mat<Scalar>>(dy.data(), from.rows(), from.cols()));
    });
  }
  return r;
}

/// Concatenates along the trailing axis. All parts must share their leading
/// extents; the result is rank 2.
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kInvalidArgument, "concat_cols of nothing");
  Graph<Scalar>& g = parts.front().graph();
  const Index rows = parts.front().shape().rows();
  Index cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw Error(ErrorCode::kInvalidArgument, "operands belong to different graphs");
    if (p.shape().rows() != rows)
      throw Error(ErrorCode::kShapeMismatch, detail::pair_str("concat_cols", parts.front().shape(), p.shape()));
    cols += p.shape().cols();
    req = req || detail::needs(p);
  }
  Mat<Scalar> y(rows, cols);
  std::vector<int> ids;
  std::vector<Index> widths;
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.shape().cols()) = p.matrix();
    off += p.shape().cols();
    ids.push_back(p.id());
    widths.push_back(p.shape().cols());
  }
  Var<Scalar> r = g.record(Array<Scalar>(Shape{rows, cols}, std::move(y)), req, nullptr);
  if (req) {
    const int ir = r.id();
    g.set_backward(ir, [&g, ir, ids, widths] {
      const auto& dy = g.grad(ir);
      Index o = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        g.accumulate(ids[k], dy.middleCols(o, widths[k]));
        o += widths[k];
      }
    });
  }
  return r;
}

/// x [B x T x d] + table [T x d], the table repeated for every batch item.
template <typename Scalar>
Var<Scalar> add_tiled(const Var<Scalar>& x, const Var<Scalar>& table) {
  Graph<Scalar>& g = detail::same_graph(x, table);
  const Shape& sx = x.shape();
  const Shape& st = table.shape();
  if (sx.rank() != 3 || st.rank() != 2 || sx[1] != st[0] || sx[2] != st[1])
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("add_tiled", sx, st));
  const Index batch = sx[0], tokens = sx[1];
  Mat<Scalar> y = x.matrix();
  for (Index b = 0; b < batch; ++b) y.middleRows(b * tokens, tokens) += table.matrix();
  const bool req = detail::needs(x) || detail::needs(table);
  Var<Scalar> r = g.record(Array<Scalar>(sx, std::move(y)), req, nullptr);
  if (req) {
    const int ix = x.id(), it = table.id(), ir = r.id();
    g.set_backward(ir, [&g, ix, it, ir, batch, tokens] {
      const auto& dy = g.grad(ir);
      g.accumulate(ix, dy);
      if (g.requires_grad(Var<Scalar>(&g, it))) {
        Mat<Scalar> dt = Mat<Scalar>::Zero(tokens, dy.cols());
        for (Index b = 0; b < batch; ++b) dt += dy.middleRows(b * tokens, tokens);
        g.accumulate(it, dt);
      }
    });
  }
  return r;
}

/// x [B x T x d] + c [B x d], c[b] added to every token of item b.
template <typename Scalar>
Var<Scalar> add_to_tokens(const Var<Scalar>& x, const Var<Scalar>& c) {
  Graph<Scalar>& g = detail::same_graph(x, c);
  const Shape& sx = x.shape();
  const Shape& sc = c.shape();
  if (sx.rank() != 3 || sc.rank() != 2 || sx[0] != sc[0] || sx[2] != sc[1])
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("add_to_tokens", sx, sc));
  const Index batch = sx[0], tokens = sx[1];
  Mat<Scalar> y = x.matrix();
  for (Index b = 0; b < batch; ++b) y.middleRows(b * tokens, tokens).rowwise() += c.matrix().row(b);
  const bool req = detail::needs(x) || detail::needs(c);
  Var<Scalar> r = g.record(Array<Scalar>(sx, std::move(y)), req, nullptr);
  if (req) {
    const int ix = x.id(), ic = c.id(), ir = r.id();
    g.set_backward(ir, [&g, ix, ic, ir, batch, tokens] {
      const auto& dy = g.grad(ir);
      g.accumulate(ix, dy);
      if (g.requires_grad(Var<Scalar>(&g, ic))) {
        Mat<Scalar> dc(batch, dy.cols());
        for (Index b = 0; b < batch; ++b) dc.row(b) = dy.middleRows(b * tokens, tokens).colwise().sum();
        g.accumulate(ic, dc);
      }
    });
  }
  return r;
}

/// Mean over the token axis: [B x T x d] -> [B x d].
template <typename Scalar>
Var<Scalar> mean_tokens(const Var<Scalar>& x) {
  Graph<Scalar>& g = x.graph();
  const Shape& sx = x.shape();
  if (sx.rank() != 3) throw Error(ErrorCode::kShapeMismatch, "mean_tokens expects rank 3, got " + sx.str());
  const Index batch = sx[0], tokens = sx[1];
  Mat<Scalar> y(batch, sx[2]);
  for (Index b = 0; b < batch; ++b)
    y.row(b) = x.matrix().middleRows(b * tokens, tokens).colwise().sum() / static_cast<Scalar>(tokens);
  const bool req = detail::needs(x);
  Var<Scalar> r = g.record(Array<Scalar>(Shape{batch, sx[2]}, std::move(y)), req, nullptr);
  if (req) {
    const int ix = x.id(), ir = r.id();
    g.set_backward(ir, [&g, ix, ir, batch, tokens] {
      const auto& dy = g.grad(ir);
      Mat<Scalar> dx(batch * tokens, dy.cols());
      for (Index b = 0; b < batch; ++b)
        dx.middleRows(b * tokens, tokens).rowwise() = dy.row(b) / static_cast<Scalar>(tokens);
      g.accumulate(ix, dx);
    });
  }
  return r;
}

/// Multi-head scaled dot-product self-attention core. q, k, v are
/// [B x T x d] projections; heads split the feature axis into equal slices.
/// Returns the concatenated per-head outputs, [B x T x d].
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads) {
  Graph<Scalar>& g = detail::same_graph(q, k);
  const Shape& s = q.shape();
  if (s.rank() != 3 || !(k.shape() == s) || !(v.shape() == s))
    throw Error(ErrorCode::kShapeMismatch, detail::pair_str("attention", s, k.shape()));
  if (heads <= 0 || s[2] % heads != 0)
    throw Error(ErrorCode::kInvalidArgument, "attention: " + std::to_string(heads) + " heads do not divide " + s.str());
  const Index batch = s[0], tokens = s[1], width = s[2], dh = width / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto& Q = q.matrix();
  const auto& K = k.matrix();
  const auto& V = v.matrix();
  // probs stores each (item, head) T x T attention matrix stacked by rows.
  Mat<Scalar> probs(batch * heads * tokens, tokens);
  Mat<Scalar> y(batch * tokens, width);
  Mat<Scalar> scores(tokens, tokens);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const auto qb = Q.block(b * tokens, h * dh, tokens, dh);
      const auto kb = K.block(b * tokens, h * dh, tokens, dh);
      const auto vb = V.block(b * tokens, h * dh, tokens, dh);
      scores.noalias() = (qb * kb.transpose()) * inv_sqrt;
      for (Index i = 0; i < tokens; ++i) {
        const Scalar m = scores.row(i).maxCoeff();
        double total = 0.0;
        for (Index j = 0; j < tokens; ++j) {
          scores(i, j) = std::exp(scores(i, j) - m);
          total += static_cast<double>(scores(i, j));
        }
        scores.row(i) /= static_cast<Scalar>(total);
      }
      probs.middleRows((b * heads + h) * tokens, tokens) = scores;
      y.block(b * tokens, h * dh, tokens, dh).noalias() = scores * vb;
    }
  }
  const bool req = detail::needs(q) || detail::needs(k) || detail::needs(v);
  Var<Scalar> r = g.record(Array<Scalar>(s, std::move(y)), req, nullptr);
  if (req) {
    const int iq = q.id(), ik = k.id(), iv = v.id(), ir = r.id();
    g.set_backward(ir, [&g, iq, ik, iv, ir, batch, tokens, width, heads, dh, inv_sqrt, probs = std::move(probs)] {
      const auto& dy = g.grad(ir);
      const auto& Qm = g.value(Var<Scalar>(&g, iq)).matrix();
      const auto& Km = g.value(Var<Scalar>(&g, ik)).matrix();
      const auto& Vm = g.value(Var<Scalar>(&g, iv)).matrix();
      Mat<Scalar> dq(batch * tokens, width), dk(batch * tokens, width), dv(batch * tokens, width);
      Mat<Scalar> dp(tokens, tokens), ds(tokens, tokens);
      for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
          const auto p = probs.middleRows((b * heads + h) * tokens, tokens);
          const auto dyb = dy.block(b * tokens, h * dh, tokens, dh);
          dv.block(b * tokens, h * dh, tokens, dh).noalias() = p.transpose() * dyb;
          dp.noalias() = dyb * Vm.block(b * tokens, h * dh, tokens, dh).transpose();
          for (Index i = 0; i < tokens; ++i) {
            const Scalar dot = p.row(i).dot(dp.row(i));
            ds.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix()) * inv_sqrt;
          }
          dq.block(b * tokens, h * dh, tokens, dh).noalias() = ds * Km.block(b * tokens, h * dh, tokens, dh);
          dk.block(b * tokens, h * dh, tokens, dh).noalias() = ds.transpose() * Qm.block(b * tokens, h * dh, tokens, dh);
        }
      }
      g.accumulate(iq, dq);
      g.accumulate(ik, dk);
      g.accumulate(iv, dv);
    });
  }
  return r;
}

}  // namespace ikdp
