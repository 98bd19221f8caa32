#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "corl/autograd.hpp"

namespace corl {

namespace detail {

/// Maps a tensor of shape `small` onto `big` under right-aligned broadcasting.
class Broadcast {
 public:
  Broadcast(const Shape& big, const Shape& small) : big_size_(shape_size(big)), small_size_(shape_size(small)) {
    if (small.size() > big.size()) {
      throw DimensionError("cannot broadcast " + shape_string(small) + " to " + shape_string(big));
    }
    const std::size_t lead = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
      if (small[i] != 1 && small[i] != big[lead + i]) {
        throw DimensionError("cannot broadcast " + shape_string(small) + " to " + shape_string(big));
      }
    }
    if (small_size_ == big_size_) {
      kind_ = Kind::kSame;
      return;
    }
    // small covers a contiguous suffix of big (after dropping its leading ones)
    std::size_t first = 0;
    while (first < small.size() && small[first] == 1) ++first;
    bool suffix = true;
    for (std::size_t i = first; i < small.size(); ++i) suffix = suffix && small[i] == big[lead + i];
    if (suffix) {
      kind_ = Kind::kTile;
      return;
    }
    kind_ = Kind::kGeneral;
    map_.resize(static_cast<std::size_t>(big_size_));
    std::vector<Index> stride(big.size(), 0);
    Index s = 1;
    for (std::size_t i = small.size(); i-- > 0;) {
      stride[lead + i] = small[i] == 1 ? 0 : s;
      s *= small[i];
    }
    std::vector<Index> counter(big.size(), 0);
    for (Index flat = 0; flat < big_size_; ++flat) {
      Index off = 0;
      for (std::size_t d = 0; d < big.size(); ++d) off += counter[d] * stride[d];
      map_[static_cast<std::size_t>(flat)] = off;
      for (std::size_t d = big.size(); d-- > 0;) {
        if (++counter[d] < big[d]) break;
        counter[d] = 0;
      }
    }
  }

  template <typename Scalar>
  Array<Scalar> expand(const Array<Scalar>& small) const {
    switch (kind_) {
      case Kind::kSame:
        return small;
      case Kind::kTile:
        return small.replicate(big_size_ / small_size_, 1);
      case Kind::kGeneral:
        break;
    }
    Array<Scalar> out(big_size_);
    for (Index i = 0; i < big_size_; ++i) out[i] = small[map_[static_cast<std::size_t>(i)]];
    return out;
  }

  template <typename Scalar>
  void reduce_into(const Array<Scalar>& big, Array<Scalar>& small) const {
    switch (kind_) {
      case Kind::kSame:
        small += big;
        return;
      case Kind::kTile: {
        Eigen::Map<const RowMatrix<Scalar>> m(big.data(), big_size_ / small_size_, small_size_);
        small += m.colwise().sum().transpose().array();
        return;
      }
      case Kind::kGeneral:
        break;
    }
    for (Index i = 0; i < big_size_; ++i) small[map_[static_cast<std::size_t>(i)]] += big[i];
  }

 private:
  enum class Kind { kSame, kTile, kGeneral };
  Kind kind_ = Kind::kSame;
  Index big_size_;
  Index small_size_;
  std::vector<Index> map_;
};

struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& shape, Index axis) {
  const Index rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("reduction axis out of range for " + shape_string(shape));
  AxisSplit s;
  for (Index i = 0; i < rank; ++i) {
    if (i < axis) s.outer *= shape[i];
    if (i > axis) s.inner *= shape[i];
    if (i != axis) s.reduced.push_back(shape[i]);
  }
  s.len = shape[axis];
  return s;
}

template <typename Scalar>
Var<Scalar> reduce_extreme(const Var<Scalar>& x, Index axis, bool take_max) {
  const auto& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor<Scalar> out(s.reduced);
  auto selected = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = o * s.len * s.inner + i;
      for (Index k = 1; k < s.len; ++k) {
        const Index cand = (o * s.len + k) * s.inner + i;
        // strict comparison keeps the lowest index on ties
        if (take_max ? xv[cand] > xv[best] : xv[cand] < xv[best]) best = cand;
      }
      out[o * s.inner + i] = xv[best];
      (*selected)[static_cast<std::size_t>(o * s.inner + i)] = best;
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, selected](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_sink(xid)) {
      for (std::size_t j = 0; j < selected->size(); ++j) (*gx)[(*selected)[j]] += g[static_cast<Index>(j)];
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

/// a + b, with b broadcast (right-aligned) to a's shape.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto bc = std::make_shared<detail::Broadcast>(a.shape(), b.shape());
  Tensor<Scalar> out(a.shape(), a.value().array() + bc->expand(b.value().array()));
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, bc](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array();
    if (auto* gb = t.grad_sink(bid)) bc->reduce_into(g.array(), *gb);
  });
}

/// a * b element-wise, with b broadcast (right-aligned) to a's shape.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto bc = std::make_shared<detail::Broadcast>(a.shape(), b.shape());
  Tensor<Scalar> out(a.shape(), a.value().array() * bc->expand(b.value().array()));
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, bc](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array() * bc->expand(t.value(bid).array());
    if (auto* gb = t.grad_sink(bid)) bc->template reduce_into<Scalar>(g.array() * t.value(aid).array(), *gb);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto bc = std::make_shared<detail::Broadcast>(a.shape(), b.shape());
  Tensor<Scalar> out(a.shape(), a.value().array() - bc->expand(b.value().array()));
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, bc](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array();
    if (auto* gb = t.grad_sink(bid)) bc->template reduce_into<Scalar>(-g.array(), *gb);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().array() * factor);
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array() * factor;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar offset) {
  Tensor<Scalar> out(a.shape(), a.value().array() + offset);
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array();
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().square());
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += Scalar(2) * g.array() * t.value(aid).array();
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().max(Scalar(0)));
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += (t.value(aid).array() > Scalar(0)).select(g.array(), Scalar(0));
  });
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().unaryExpr([](Scalar x) { return stable_sigmoid(x); }));
  const std::size_t aid = a.id();
  const std::size_t oid = a.tape().size();
  return a.tape().record(std::move(out), {a}, [aid, oid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) {
      const auto& s = t.value(oid).array();
      *ga += g.array() * s * (Scalar(1) - s);
    }
  });
}

/// Clamps to [lo, hi]; the gradient passes where lo <= x <= hi and is zero outside.
template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& a, Scalar lo, Scalar hi) {
  Tensor<Scalar> out(a.shape(), a.value().array().max(lo).min(hi));
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, lo, hi](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) {
      const auto& x = t.value(aid).array();
      *ga += (x >= lo && x <= hi).select(g.array(), Scalar(0));
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g.array();
  });
}

/// Swaps the last two axes: (..., m, n) -> (..., n, m).
template <typename Scalar>
Var<Scalar> transpose_last2(const Var<Scalar>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_string(s));
  const Index m = s[s.size() - 2], n = s.back(), batch = a.size() / (m * n);
  Shape os = s;
  std::swap(os[os.size() - 2], os.back());
  Tensor<Scalar> out(os);
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const RowMatrix<Scalar>> src(a.value().data() + b * m * n, m, n);
    Eigen::Map<RowMatrix<Scalar>> dst(out.data() + b * m * n, n, m);
    dst = src.transpose();
  }
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, m, n, batch](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) {
      for (Index b = 0; b < batch; ++b) {
        Eigen::Map<const RowMatrix<Scalar>> gsrc(g.data() + b * m * n, n, m);
        Eigen::Map<RowMatrix<Scalar>> gdst(ga->data() + b * m * n, m, n);
        gdst += gsrc.transpose();
      }
    }
  });
}

/// Concatenates along the last axis; leading dimensions must agree.
template <typename Scalar>
Var<Scalar> concat_last(const Var<Scalar>& a, const Var<Scalar>& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_last: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  }
  const Index p = sa.back(), q = sb.back(), rows = a.size() / p;
  Shape so = sa;
  so.back() = p + q;
  Tensor<Scalar> out(so);
  auto om = out.matrix(rows, p + q);
  om.leftCols(p) = a.value().matrix(rows, p);
  om.rightCols(q) = b.value().matrix(rows, q);
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, rows, p, q](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto gm = g.matrix(rows, p + q);
    if (auto* ga = t.grad_sink(aid)) Eigen::Map<RowMatrix<Scalar>>(ga->data(), rows, p) += gm.leftCols(p);
    if (auto* gb = t.grad_sink(bid)) Eigen::Map<RowMatrix<Scalar>>(gb->data(), rows, q) += gm.rightCols(q);
  });
}

/// Rows of a (V, P) table picked by `indices`: result is (M, P).
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, std::vector<Index> indices) {
  if (table.shape().size() != 2) throw DimensionError("gather_rows needs a rank-2 table");
  const Index rows = table.dim(0), width = table.dim(1);
  const auto m = static_cast<Index>(indices.size());
  Tensor<Scalar> out({m, width});
  auto src = table.value().matrix();
  auto dst = out.matrix();
  for (Index i = 0; i < m; ++i) {
    const Index r = indices[static_cast<std::size_t>(i)];
    if (r < 0 || r >= rows) throw DimensionError("gather_rows index out of range");
    dst.row(i) = src.row(r);
  }
  const std::size_t tid = table.id();
  auto idx = std::make_shared<std::vector<Index>>(std::move(indices));
  return table.tape().record(std::move(out), {table}, [tid, idx, rows, width](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gt = t.grad_sink(tid)) {
      Eigen::Map<RowMatrix<Scalar>> gm(gt->data(), rows, width);
      auto go = g.matrix();
      for (std::size_t i = 0; i < idx->size(); ++i) gm.row((*idx)[i]) += go.row(static_cast<Index>(i));
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m x k) * (k x n).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& av = t.value(aid);
    const auto& bv = t.value(bid);
    if (auto* ga = t.grad_sink(aid)) {
      Eigen::Map<RowMatrix<Scalar>>(ga->data(), av.dim(0), av.dim(1)).noalias() += g.matrix() * bv.matrix().transpose();
    }
    if (auto* gb = t.grad_sink(bid)) {
      Eigen::Map<RowMatrix<Scalar>>(gb->data(), bv.dim(0), bv.dim(1)).noalias() += av.matrix().transpose() * g.matrix();
    }
  });
}

/// (m x k) * (n x k)^T, the layout used by dense layers and 1x1 convolutions.
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.dim(0), b.dim(0)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& av = t.value(aid);
    const auto& bv = t.value(bid);
    if (auto* ga = t.grad_sink(aid)) {
      Eigen::Map<RowMatrix<Scalar>>(ga->data(), av.dim(0), av.dim(1)).noalias() += g.matrix() * bv.matrix();
    }
    if (auto* gb = t.grad_sink(bid)) {
      Eigen::Map<RowMatrix<Scalar>>(gb->data(), bv.dim(0), bv.dim(1)).noalias() += g.matrix().transpose() * av.matrix();
    }
  });
}

/// 1x1 convolution of an (N, H, W, C) map with (K, C) kernels as one batched product.
template <typename Scalar>
Var<Scalar> conv1x1(const Var<Scalar>& x, const Var<Scalar>& kernels) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("conv1x1 expects (N, H, W, C), got " + shape_string(s));
  if (kernels.shape().size() != 2 || kernels.dim(1) != s[3]) {
    throw DimensionError("conv1x1: kernel shape " + shape_string(kernels.shape()) + " does not match " +
                         std::to_string(s[3]) + " input channels");
  }
  auto flat = reshape(x, {s[0] * s[1] * s[2], s[3]});
  return reshape(matmul_nt(flat, kernels), {s[0], s[1], s[2], kernels.dim(0)});
}

struct Conv2dGeometry {
  Index batch, in_h, in_w, in_c;
  Index out_h, out_w, out_c;
  Index kernel, stride, pad;

  Index patch() const { return kernel * kernel * in_c; }
  Index positions() const { return batch * out_h * out_w; }
};

namespace detail {

template <typename Scalar>
void im2col(const Tensor<Scalar>& x, const Conv2dGeometry& g, RowMatrix<Scalar>& cols) {
  cols.setZero(g.positions(), g.patch());
  for (Index n = 0; n < g.batch; ++n) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const Index row = (n * g.out_h + oy) * g.out_w + ox;
        Scalar* dst = cols.row(row).data();
        for (Index ky = 0; ky < g.kernel; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.kernel; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.in_w) continue;
            const Scalar* src = x.data() + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
            std::copy(src, src + g.in_c, dst + (ky * g.kernel + kx) * g.in_c);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const Conv2dGeometry& g, Scalar* dx) {
  for (Index n = 0; n < g.batch; ++n) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const Index row = (n * g.out_h + oy) * g.out_w + ox;
        const Scalar* src = cols.row(row).data();
        for (Index ky = 0; ky < g.kernel; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.kernel; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.in_w) continue;
            Scalar* dst = dx + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
            const Scalar* s = src + (ky * g.kernel + kx) * g.in_c;
            for (Index c = 0; c < g.in_c; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Square-kernel 2-D convolution. x: (N, H, W, Cin); weight: (Cout, k, k, Cin).
/// Output spatial size is floor((H + 2*pad - k) / stride) + 1.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, Index stride, Index pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != ws[2] || ws[3] != xs[3]) {
    throw DimensionError("conv2d: incompatible input " + shape_string(xs) + " and weight " + shape_string(ws));
  }
  Conv2dGeometry g{xs[0], xs[1], xs[2], xs[3], 0, 0, ws[0], ws[1], stride, pad};
  g.out_h = (g.in_h + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw DimensionError("conv2d: input too small for kernel");

  auto cols = std::make_shared<RowMatrix<Scalar>>();
  detail::im2col(x.value(), g, *cols);
  Tensor<Scalar> out({g.batch, g.out_h, g.out_w, g.out_c});
  out.matrix().noalias() = *cols * weight.value().matrix(g.out_c, g.patch()).transpose();

  const std::size_t xid = x.id(), wid = weight.id();
  return x.tape().record(std::move(out), {x, weight}, [xid, wid, g, cols](Tape<Scalar>& t, const Tensor<Scalar>& grad) {
    auto gm = grad.matrix(g.positions(), g.out_c);
    if (auto* gw = t.grad_sink(wid)) {
      Eigen::Map<RowMatrix<Scalar>>(gw->data(), g.out_c, g.patch()).noalias() += gm.transpose() * *cols;
    }
    if (auto* gx = t.grad_sink(xid)) {
      RowMatrix<Scalar> dcols = gm * t.value(wid).matrix(g.out_c, g.patch());
      detail::col2im_add(dcols, g, gx->data());
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum_all(const Var<Scalar>& a) {
  Tensor<Scalar> out(Shape{}, Array<Scalar>::Constant(1, a.value().array().sum()));
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) *ga += g[0];
  });
}

template <typename Scalar>
Var<Scalar> reduce_sum(const Var<Scalar>& a, Index axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Tensor<Scalar> out(s.reduced);
  const auto& av = a.value();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index k = 0; k < s.len; ++k) {
      out.array().segment(o * s.inner, s.inner) += av.array().segment((o * s.len + k) * s.inner, s.inner);
    }
  }
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, s](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_sink(aid)) {
      for (Index o = 0; o < s.outer; ++o) {
        for (Index k = 0; k < s.len; ++k) {
          ga->segment((o * s.len + k) * s.inner, s.inner) += g.array().segment(o * s.inner, s.inner);
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> reduce_mean(const Var<Scalar>& a, Index axis) {
  const Index len = detail::split_axis(a.shape(), axis).len;
  return scale(reduce_sum(a, axis), Scalar(1) / static_cast<Scalar>(len));
}

/// Minimum along `axis`; the gradient reaches only the selected element (lowest index on ties).
template <typename Scalar>
Var<Scalar> reduce_min(const Var<Scalar>& a, Index axis) {
  return detail::reduce_extreme(a, axis, false);
}

/// Maximum along `axis`; the gradient reaches only the selected element (lowest index on ties).
template <typename Scalar>
Var<Scalar> reduce_max(const Var<Scalar>& a, Index axis) {
  return detail::reduce_extreme(a, axis, true);
}

/// Spatial average pooling: (N, H, W, C) -> (N, C).
template <typename Scalar>
Var<Scalar> avg_pool_spatial(const Var<Scalar>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("avg_pool_spatial expects (N, H, W, C), got " + shape_string(s));
  return reduce_mean(reshape(x, {s[0], s[1] * s[2], s[3]}), 1);
}

// ---------------------------------------------------------------------------
// Normalization and losses

/// Divides every vector along the last axis by max(||v||, eps).
template <typename Scalar>
Var<Scalar> l2_normalize_last(const Var<Scalar>& a, Scalar eps) {
  const auto am = a.value().matrix();
  auto denom = std::make_shared<Array<Scalar>>(am.rowwise().norm().array().max(eps));
  Tensor<Scalar> out(a.shape());
  out.matrix() = am.array().colwise() / *denom;
  const std::size_t aid = a.id();
  const std::size_t oid = a.tape().size();
  return a.tape().record(std::move(out), {a}, [aid, oid, denom, eps](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* ga = t.grad_sink(aid);
    if (ga == nullptr) return;
    const auto y = t.value(oid).matrix();
    const auto gm = g.matrix();
    Eigen::Map<RowMatrix<Scalar>> gam(ga->data(), y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const Scalar d = (*denom)[r];
      if (d > eps) {
        gam.row(r) += (gm.row(r) - y.row(r) * y.row(r).dot(gm.row(r))) / d;
      } else {
        gam.row(r) += gm.row(r) / eps;  // clamped branch: y = x / eps is linear
      }
    }
  });
}

/// Per-channel standardization over all leading positions: (x - mean) / sqrt(var + eps),
/// with biased batch statistics. `stats`, when given, receives (mean, var) per channel.
template <typename Scalar>
Var<Scalar> standardize_channels(const Var<Scalar>& a, Scalar eps, std::pair<Array<Scalar>, Array<Scalar>>* stats = nullptr) {
  const auto am = a.value().matrix();
  const auto rows = static_cast<Scalar>(am.rows());
  const Array<Scalar> mean = am.colwise().mean().transpose().array();
  const Array<Scalar> var = ((am.rowwise() - mean.transpose().matrix()).array().square().colwise().sum().transpose()) / rows;
  auto inv = std::make_shared<Array<Scalar>>((var + eps).rsqrt());
  Tensor<Scalar> out(a.shape());
  out.matrix() = ((am.rowwise() - mean.transpose().matrix()).array().rowwise() * inv->transpose()).matrix();
  if (stats) *stats = {mean, var};
  const std::size_t aid = a.id();
  const std::size_t oid = a.tape().size();
  return a.tape().record(std::move(out), {a}, [aid, oid, inv, rows](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* ga = t.grad_sink(aid);
    if (ga == nullptr) return;
    const auto y = t.value(oid).matrix();
    const auto gm = g.matrix();
    const auto gmean = (gm.colwise().sum() / rows).eval();
    const auto gy = ((gm.array() * y.array()).colwise().sum() / rows).eval();
    Eigen::Map<RowMatrix<Scalar>> gam(ga->data(), y.rows(), y.cols());
    gam.array() += ((gm.rowwise() - gmean).array() - y.array().rowwise() * gy).rowwise() * inv->transpose();
  });
}

/// Mean softmax cross-entropy of (N, K) logits against integer labels.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const Index n = logits.dim(0), k = logits.dim(1);
  auto probs = std::make_shared<RowMatrix<Scalar>>(n, k);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const auto lm = logits.value().matrix();
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = (*lab)[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    const Scalar mx = lm.row(i).maxCoeff();
    const auto shifted = (lm.row(i).array() - mx).eval();
    const Scalar z = shifted.exp().sum();
    probs->row(i) = shifted.exp() / z;
    total += std::log(z) - shifted[y];
  }
  Tensor<Scalar> out(Shape{}, Array<Scalar>::Constant(1, total / static_cast<Scalar>(n)));
  const std::size_t lid = logits.id();
  return logits.tape().record(std::move(out), {logits}, [lid, probs, lab, n, k](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gl = t.grad_sink(lid)) {
      RowMatrix<Scalar> d = *probs;
      for (Index i = 0; i < n; ++i) d(i, (*lab)[static_cast<std::size_t>(i)]) -= Scalar(1);
      Eigen::Map<RowMatrix<Scalar>>(gl->data(), n, k) += d * (g[0] / static_cast<Scalar>(n));
    }
  });
}

}  // namespace corl
