#include "fewshot/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fewshot/error.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

// Gradient sink for an input, or an empty span when it needs none.
std::span<Real> sink(const ImplPtr& impl) {
  if (!impl->requires_grad) return {};
  return impl->grad_buffer();
}

std::size_t normalize_axis(int axis, std::size_t ndim) {
  const int n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(ndim));
  }
  return static_cast<std::size_t>(a);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

// C (+)= op(A) * op(B) with op(A) [m,k], op(B) [k,n]. Transposed operands are
// packed once so the kernel always sees row-major, untransposed inputs.
void gemm_ex(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
             std::size_t k, const Real* a, const Real* b, Real* c,
             bool accumulate) {
  kernels::active().gemm(trans_a, trans_b, m, n, k, a, trans_a ? m : k, b, trans_b ? k : n, c, n,
                         accumulate);
}

// ---- broadcasting ----------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  plan.out.assign(nd, 1);
  plan.stride_a.assign(nd, 0);
  plan.stride_b.assign(nd, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t d = 0; d < nd; ++d) {
    const std::size_t ia = d + a.size();
    const std::size_t ib = d + b.size();
    const std::size_t da = ia >= nd ? a[ia - nd] : 1;
    const std::size_t db = ib >= nd ? b[ib - nd] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    }
    plan.out[d] = std::max(da, db);
    if (ia >= nd && da != 1) plan.stride_a[d] = sa[ia - nd];
    if (ib >= nd && db != 1) plan.stride_b[d] = sb[ib - nd];
  }
  return plan;
}

template <class F>
void broadcast_loop(const Broadcast& plan, F&& f) {
  const std::size_t n = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t nd = plan.out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<Real> out(shape_numel(plan.out));
  const auto av = a.data();
  const auto bv = b.data();
  broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = av[ia] + bv[ib]; break;
      case BinaryKind::kSub: out[i] = av[ia] - bv[ib]; break;
      case BinaryKind::kMul: out[i] = av[ia] * bv[ib]; break;
      case BinaryKind::kDiv: out[i] = av[ia] / bv[ib]; break;
    }
  });
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, name,
                     [ai, bi, plan = std::move(plan), kind](const TensorImpl& o) {
                       auto ga = sink(ai);
                       auto gb = sink(bi);
                       const auto& x = ai->data;
                       const auto& y = bi->data;
                       broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         const Real g = o.grad[i];
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (!ga.empty()) ga[ia] += g;
                             if (!gb.empty()) gb[ib] += g;
                             break;
                           case BinaryKind::kSub:
                             if (!ga.empty()) ga[ia] += g;
                             if (!gb.empty()) gb[ib] -= g;
                             break;
                           case BinaryKind::kMul:
                             if (!ga.empty()) ga[ia] += g * y[ib];
                             if (!gb.empty()) gb[ib] += g * x[ia];
                             break;
                           case BinaryKind::kDiv:
                             if (!ga.empty()) ga[ia] += g / y[ib];
                             if (!gb.empty()) gb[ib] -= g * x[ia] / (y[ib] * y[ib]);
                             break;
                         }
                       });
                     });
}

// Elementwise op whose derivative is a function of input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  const auto av = a.data();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  ImplPtr ai = a.impl();
  return make_result(a.shape(), std::move(out), {&a}, name,
                     [ai, deriv](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t i = 0; i < ga.size(); ++i)
                         ga[i] += o.grad[i] * deriv(ai->data[i], o.data[i]);
                     });
}

// outer x axis x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit sp;
  for (std::size_t d = 0; d < axis; ++d) sp.outer *= s[d];
  sp.len = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) sp.inner *= s[d];
  return sp;
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kDiv, "div"); }

Tensor add_scalar(const Tensor& a, Real s) {
  return unary(a, "add_scalar", [s](Real x) { return x + s; }, [](Real, Real) { return Real(1); });
}

Tensor mul_scalar(const Tensor& a, Real s) {
  return unary(a, "mul_scalar", [s](Real x) { return x * s; }, [s](Real, Real) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, Real(-1)); }

Tensor square(const Tensor& a) {
  return unary(a, "square", [](Real x) { return x * x; }, [](Real x, Real) { return 2 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, "sqrt", [](Real x) { return std::sqrt(x); },
               [](Real, Real y) { return y > 0 ? Real(0.5) / y : Real(0); });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a, Real floor) {
  return unary(a, "log", [floor](Real x) { return std::log(std::max(x, floor)); },
               [floor](Real x, Real) { return x > floor ? Real(1) / x : Real(0); });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](Real x) { return x > 0 ? x : Real(0); },
               [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid",
               [](Real x) {
                 if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
                 const Real e = std::exp(x);
                 return e / (Real(1) + e);
               },
               [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.ndim());
  const AxisSplit sp = split_at(a.shape(), ax);
  const auto x = a.data();
  std::vector<Real> y(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      Real mx = x[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
      Real z = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const Real e = std::exp(x[base + l * sp.inner] - mx);
        y[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) y[base + l * sp.inner] /= z;
    }
  }
  ImplPtr ai = a.impl();
  return make_result(a.shape(), std::move(y), {&a}, "softmax", [ai, sp](const TensorImpl& o) {
    auto ga = sink(ai);
    if (ga.empty()) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = oo * sp.len * sp.inner + in;
        Real dot = 0;
        for (std::size_t l = 0; l < sp.len; ++l)
          dot += o.grad[base + l * sp.inner] * o.data[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          ga[i] += o.data[i] * (o.grad[i] - dot);
        }
      }
    }
  });
}

// ---- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  ImplPtr ai = a.impl();
  std::vector<Real> values(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(values), {&a}, "reshape",
                     [ai](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const auto x = a.data();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  ImplPtr ai = a.impl();
  return make_result({c, r}, std::move(y), {&a}, "transpose", [ai, r, c](const TensorImpl& o) {
    auto ga = sink(ai);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += o.grad[j * r + i];
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != out_shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < out_shape.size(); ++d) {
      if (d != ax && p.dim(d) != parts[0].dim(d)) {
        throw DimensionError("concat extent mismatch: " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += p.dim(ax);
  }
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<Real> y(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(ax) * sp.inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(x.begin() + o * chunk, chunk, y.begin() + o * sp.len * sp.inner + offset * sp.inner);
    offset += p.dim(ax);
  }
  std::vector<ImplPtr> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  return make_result(std::move(out_shape), std::move(y), parts, "concat",
                     [impls, offsets, sp, ax](const TensorImpl& o) {
                       for (std::size_t k = 0; k < impls.size(); ++k) {
                         auto g = sink(impls[k]);
                         if (g.empty()) continue;
                         const std::size_t chunk = impls[k]->shape[ax] * sp.inner;
                         for (std::size_t oo = 0; oo < sp.outer; ++oo) {
                           const Real* src = o.grad.data() + oo * sp.len * sp.inner + offsets[k] * sp.inner;
                           Real* dst = g.data() + oo * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor narrow(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, a.ndim());
  if (length == 0 || start + length > a.dim(ax)) {
    throw DimensionError("narrow [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") outside extent " + std::to_string(a.dim(ax)));
  }
  const AxisSplit sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  const std::size_t chunk = length * sp.inner;
  std::vector<Real> y(sp.outer * chunk);
  const auto x = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.begin() + o * sp.len * sp.inner + start * sp.inner, chunk, y.begin() + o * chunk);
  ImplPtr ai = a.impl();
  return make_result(std::move(out_shape), std::move(y), {&a}, "narrow",
                     [ai, sp, start, chunk](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t oo = 0; oo < sp.outer; ++oo) {
                         Real* dst = ga.data() + oo * sp.len * sp.inner + start * sp.inner;
                         const Real* src = o.grad.data() + oo * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("index_select with no indices");
  const std::size_t rows = a.dim(0);
  const std::size_t row = a.numel() / rows;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t i : idx) {
    if (i >= rows) throw ContractError("index_select index " + std::to_string(i) + " >= " + std::to_string(rows));
  }
  Shape out_shape = a.shape();
  out_shape[0] = idx.size();
  std::vector<Real> y(idx.size() * row);
  const auto x = a.data();
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(x.begin() + idx[k] * row, row, y.begin() + k * row);
  ImplPtr ai = a.impl();
  return make_result(std::move(out_shape), std::move(y), {&a}, "index_select",
                     [ai, idx = std::move(idx), row](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         Real* dst = ga.data() + idx[k] * row;
                         const Real* src = o.grad.data() + k * row;
                         for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor tile_spatial(const Tensor& a, std::size_t height, std::size_t width) {
  require_rank(a, 2, "tile_spatial");
  if (height == 0 || width == 0) throw DimensionError("tile_spatial to an empty map");
  const std::size_t rows = a.dim(0) * a.dim(1);
  const std::size_t hw = height * width;
  std::vector<Real> y(rows * hw);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::fill_n(y.begin() + r * hw, hw, x[r]);
  ImplPtr ai = a.impl();
  return make_result({a.dim(0), a.dim(1), height, width}, std::move(y), {&a}, "tile_spatial",
                     [ai, rows, hw](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         Real s = 0;
                         for (std::size_t i = 0; i < hw; ++i) s += o.grad[r * hw + i];
                         ga[r] += s;
                       }
                     });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto x = a.data();
  const Real s = std::accumulate(x.begin(), x.end(), Real(0));
  ImplPtr ai = a.impl();
  return make_result({1}, {s}, {&a}, "sum", [ai](const TensorImpl& o) {
    auto ga = sink(ai);
    for (Real& g : ga) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.ndim());
  const AxisSplit sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim || out_shape.size() == 1) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<Real> y(sp.outer * sp.inner, Real(0));
  const auto x = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t in = 0; in < sp.inner; ++in)
        y[o * sp.inner + in] += x[(o * sp.len + l) * sp.inner + in];
  ImplPtr ai = a.impl();
  return make_result(std::move(out_shape), std::move(y), {&a}, "sum_axis", [ai, sp](const TensorImpl& o) {
    auto ga = sink(ai);
    if (ga.empty()) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t in = 0; in < sp.inner; ++in)
          ga[(oo * sp.len + l) * sp.inner + in] += o.grad[oo * sp.inner + in];
  });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.ndim());
  return mul_scalar(sum(a, axis, keepdim), Real(1) / static_cast<Real>(a.dim(ax)));
}

Tensor frobenius_norm(const Tensor& a) {
  const auto x = a.data();
  Real ss = 0;
  for (Real v : x) ss += v * v;
  const Real n = std::sqrt(ss);
  ImplPtr ai = a.impl();
  return make_result({1}, {n}, {&a}, "frobenius_norm", [ai](const TensorImpl& o) {
    auto ga = sink(ai);
    const Real nrm = o.data[0];
    if (ga.empty() || nrm == 0) return;
    const Real scale = o.grad[0] / nrm;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale * ai->data[i];
  });
}

Tensor frobenius_norm_per_sample(const Tensor& a) {
  const std::size_t n = a.dim(0);
  const std::size_t row = a.numel() / n;
  const auto x = a.data();
  std::vector<Real> y(n);
  for (std::size_t s = 0; s < n; ++s) {
    Real ss = 0;
    for (std::size_t i = 0; i < row; ++i) ss += x[s * row + i] * x[s * row + i];
    y[s] = std::sqrt(ss);
  }
  ImplPtr ai = a.impl();
  return make_result({n}, std::move(y), {&a}, "frobenius_norm_per_sample",
                     [ai, n, row](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t s = 0; s < n; ++s) {
                         if (o.data[s] == 0) continue;
                         const Real scale = o.grad[s] / o.data[s];
                         for (std::size_t i = 0; i < row; ++i)
                           ga[s * row + i] += scale * ai->data[s * row + i];
                       }
                     });
}

Tensor pairwise_distance(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || a.ndim() < 2 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("pairwise_distance " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t na = a.dim(0);
  const std::size_t nb = b.dim(0);
  const std::size_t row = a.numel() / na;
  const auto x = a.data();
  const auto z = b.data();
  std::vector<Real> y(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      Real ss = 0;
      for (std::size_t k = 0; k < row; ++k) {
        const Real d = x[i * row + k] - z[j * row + k];
        ss += d * d;
      }
      y[i * nb + j] = std::sqrt(ss);
    }
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return make_result({na, nb}, std::move(y), {&a, &b}, "pairwise_distance",
                     [ai, bi, na, nb, row](const TensorImpl& o) {
                       auto ga = sink(ai);
                       auto gb = sink(bi);
                       for (std::size_t i = 0; i < na; ++i)
                         for (std::size_t j = 0; j < nb; ++j) {
                           const Real dist = o.data[i * nb + j];
                           if (dist == 0) continue;
                           const Real scale = o.grad[i * nb + j] / dist;
                           for (std::size_t k = 0; k < row; ++k) {
                             const Real d = scale * (ai->data[i * row + k] - bi->data[j * row + k]);
                             if (!ga.empty()) ga[i * row + k] += d;
                             if (!gb.empty()) gb[j * row + k] -= d;
                           }
                         }
                     });
}

Tensor global_max_pool(const Tensor& a) {
  require_rank(a, 4, "global_max_pool");
  const std::size_t rows = a.dim(0) * a.dim(1);
  const std::size_t hw = a.dim(2) * a.dim(3);
  const auto x = a.data();
  std::vector<Real> y(rows);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i)
      if (x[r * hw + i] > x[r * hw + best]) best = i;
    arg[r] = r * hw + best;
    y[r] = x[arg[r]];
  }
  ImplPtr ai = a.impl();
  return make_result({a.dim(0), a.dim(1)}, std::move(y), {&a}, "global_max_pool",
                     [ai, arg = std::move(arg)](const TensorImpl& o) {
                       auto ga = sink(ai);
                       if (ga.empty()) return;
                       for (std::size_t r = 0; r < arg.size(); ++r) ga[arg[r]] += o.grad[r];
                     });
}

Tensor global_avg_pool(const Tensor& a) {
  require_rank(a, 4, "global_avg_pool");
  return mean(reshape(a, {a.dim(0), a.dim(1), a.dim(2) * a.dim(3)}), 2);
}

// ---- linear algebra ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<Real> y(m * n);
  gemm_ex(false, false, m, n, k, a.data().data(), b.data().data(), y.data(), false);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return make_result({m, n}, std::move(y), {&a, &b}, "matmul", [ai, bi, m, n, k](const TensorImpl& o) {
    auto ga = sink(ai);
    auto gb = sink(bi);
    if (!ga.empty()) gemm_ex(false, true, m, k, n, o.grad.data(), bi->data.data(), ga.data(), true);
    if (!gb.empty()) gemm_ex(true, false, k, n, m, ai->data.data(), o.grad.data(), gb.data(), true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0);
  if (b.dim(0) != batch) throw DimensionError("bmm batch mismatch");
  const std::size_t m = ta ? a.dim(2) : a.dim(1);
  const std::size_t k = ta ? a.dim(1) : a.dim(2);
  const std::size_t kb = tb ? b.dim(2) : b.dim(1);
  const std::size_t n = tb ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw DimensionError("bmm inner extents " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t sa = m * k;
  const std::size_t sb = k * n;
  const std::size_t sc = m * n;
  std::vector<Real> y(batch * sc);
  for (std::size_t i = 0; i < batch; ++i)
    gemm_ex(ta, tb, m, n, k, a.data().data() + i * sa, b.data().data() + i * sb, y.data() + i * sc, false);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return make_result({batch, m, n}, std::move(y), {&a, &b}, "bmm",
                     [ai, bi, ta, tb, batch, m, n, k, sa, sb, sc](const TensorImpl& o) {
                       auto ga = sink(ai);
                       auto gb = sink(bi);
                       for (std::size_t i = 0; i < batch; ++i) {
                         const Real* g = o.grad.data() + i * sc;
                         const Real* av = ai->data.data() + i * sa;
                         const Real* bv = bi->data.data() + i * sb;
                         if (!ga.empty()) {
                           if (ta) gemm_ex(tb, true, k, m, n, bv, g, ga.data() + i * sa, true);
                           else gemm_ex(false, !tb, m, k, n, g, bv, ga.data() + i * sa, true);
                         }
                         if (!gb.empty()) {
                           if (tb) gemm_ex(true, ta, n, k, m, g, av, gb.data() + i * sb, true);
                           else gemm_ex(!ta, false, k, n, m, av, g, gb.data() + i * sb, true);
                         }
                       }
                     });
}

// ---- layers -------------------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, ks, pad, ho, wo;
  std::size_t patch() const { return cin * ks * ks; }
  std::size_t plane() const { return ho * wo; }
};

// cols[patch, count*plane] for images [first, first+count).
void im2col(const ConvGeometry& g, const Real* input, std::size_t first,
            std::size_t count, Real* cols) {
  const std::size_t width = count * g.plane();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.ks; ++ky) {
      for (std::size_t kx = 0; kx < g.ks; ++kx) {
        Real* row = cols + ((c * g.ks + ky) * g.ks + kx) * width;
        for (std::size_t b = 0; b < count; ++b) {
          const Real* img = input + ((first + b) * g.cin + c) * g.h * g.w;
          Real* dst = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill_n(dst + oy * g.wo, g.wo, Real(0));
              continue;
            }
            const Real* src = img + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad);
              dst[oy * g.wo + ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? Real(0) : src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* cols, std::size_t first,
            std::size_t count, Real* grad_input) {
  const std::size_t width = count * g.plane();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.ks; ++ky) {
      for (std::size_t kx = 0; kx < g.ks; ++kx) {
        const Real* row = cols + ((c * g.ks + ky) * g.ks + kx) * width;
        for (std::size_t b = 0; b < count; ++b) {
          Real* img = grad_input + ((first + b) * g.cin + c) * g.h * g.w;
          const Real* src = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            Real* dst = img + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

// Images per im2col chunk, bounding the column buffer to ~4M elements.
std::size_t conv_chunk(const ConvGeometry& g) {
  const std::size_t per_image = g.patch() * g.plane();
  return std::clamp<std::size_t>((std::size_t{1} << 22) / std::max<std::size_t>(per_image, 1), 1, g.n);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.ks = kernel.dim(2);
  g.pad = padding;
  if (kernel.dim(1) != g.cin || kernel.dim(3) != g.ks) {
    throw DimensionError("conv2d kernel " + shape_str(kernel.shape()) + " does not fit input " +
                         shape_str(input.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(g.cout) + " output channels");
  }
  if (g.h + 2 * g.pad < g.ks || g.w + 2 * g.pad < g.ks) {
    throw DimensionError("conv2d input " + shape_str(input.shape()) + " smaller than kernel");
  }
  g.ho = g.h + 2 * g.pad - g.ks + 1;
  g.wo = g.w + 2 * g.pad - g.ks + 1;

  const std::size_t chunk = conv_chunk(g);
  std::vector<Real> out(g.n * g.cout * g.plane());
  std::vector<Real> cols(g.patch() * chunk * g.plane());
  std::vector<Real> tmp(g.cout * chunk * g.plane());
  const Real* bvals = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t first = 0; first < g.n; first += chunk) {
    const std::size_t count = std::min(chunk, g.n - first);
    const std::size_t width = count * g.plane();
    im2col(g, input.data().data(), first, count, cols.data());
    kernels::active().gemm(false, false, g.cout, width, g.patch(), kernel.data().data(), g.patch(), cols.data(),
                           width, tmp.data(), width, false);
    for (std::size_t b = 0; b < count; ++b) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const Real* src = tmp.data() + co * width + b * g.plane();
        Real* dst = out.data() + ((first + b) * g.cout + co) * g.plane();
        const Real bv = bvals ? bvals[co] : Real(0);
        for (std::size_t p = 0; p < g.plane(); ++p) dst[p] = src[p] + bv;
      }
    }
  }

  ImplPtr ii = input.impl();
  ImplPtr ki = kernel.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  return make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), {&input, &kernel, &bias}, "conv2d",
                     [ii, ki, bi, g, chunk](const TensorImpl& o) {
                       auto gin = sink(ii);
                       auto gk = sink(ki);
                       std::span<Real> gbias = bi ? sink(bi) : std::span<Real>{};
                       if (!gbias.empty()) {
                         for (std::size_t b = 0; b < g.n; ++b)
                           for (std::size_t co = 0; co < g.cout; ++co) {
                             const Real* src = o.grad.data() + (b * g.cout + co) * g.plane();
                             Real s = 0;
                             for (std::size_t p = 0; p < g.plane(); ++p) s += src[p];
                             gbias[co] += s;
                           }
                       }
                       if (gin.empty() && gk.empty()) return;
                       std::vector<Real> cols(g.patch() * chunk * g.plane());
                       std::vector<Real> gout(g.cout * chunk * g.plane());
                       for (std::size_t first = 0; first < g.n; first += chunk) {
                         const std::size_t count = std::min(chunk, g.n - first);
                         const std::size_t width = count * g.plane();
                         for (std::size_t b = 0; b < count; ++b)
                           for (std::size_t co = 0; co < g.cout; ++co)
                             std::copy_n(o.grad.data() + ((first + b) * g.cout + co) * g.plane(), g.plane(),
                                         gout.data() + co * width + b * g.plane());
                         if (!gk.empty()) {
                           im2col(g, ii->data.data(), first, count, cols.data());
                           gemm_ex(false, true, g.cout, g.patch(), width, gout.data(), cols.data(), gk.data(), true);
                         }
                         if (!gin.empty()) {
                           gemm_ex(true, false, g.patch(), width, g.cout, ki->data.data(), gout.data(), cols.data(),
                                   false);
                           col2im(g, cols.data(), first, count, gin.data());
                         }
                       }
                     });
}

Tensor maxpool2d(const Tensor& input) {
  require_rank(input, 4, "maxpool2d");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  const std::size_t ho = h / 2;
  const std::size_t wo = w / 2;
  if (ho == 0 || wo == 0) throw DimensionError("maxpool2d on map " + shape_str(input.shape()));
  const auto x = input.data();
  std::vector<Real> y(planes * ho * wo);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (x[i] > x[best]) best = i;
          }
        const std::size_t o = (p * ho + oy) * wo + ox;
        arg[o] = best;
        y[o] = x[best];
      }
    }
  }
  ImplPtr ii = input.impl();
  return make_result({input.dim(0), input.dim(1), ho, wo}, std::move(y), {&input}, "maxpool2d",
                     [ii, arg = std::move(arg)](const TensorImpl& o) {
                       auto g = sink(ii);
                       if (g.empty()) return;
                       for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                     });
}

BatchNormState BatchNormState::create(std::size_t channels) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, Real(1));
  return s;
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training) {
  if (input.ndim() != 4 && input.ndim() != 2) {
    throw DimensionError("batchnorm expects [N,C,H,W] or [N,C], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t hw = input.ndim() == 4 ? input.dim(2) * input.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c) {
    throw DimensionError("batchnorm parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * hw;
  if (training && count < 2) {
    throw ContractError("batchnorm training needs at least 2 values per channel");
  }
  const auto x = input.data();
  std::vector<Real> mu(c);
  std::vector<Real> inv_std(c);
  if (training) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real s = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
      const Real m = s / static_cast<Real>(count);
      Real v = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const Real d = x[(b * c + ch) * hw + i] - m;
          v += d * d;
        }
      const Real var = v / static_cast<Real>(count);
      mu[ch] = m;
      inv_std[ch] = Real(1) / std::sqrt(var + state.eps);
      const Real unbiased = v / static_cast<Real>(count - 1);
      rm[ch] = (1 - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (1 - state.momentum) * rv[ch] + state.momentum * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = Real(1) / std::sqrt(rv[ch] + state.eps);
    }
  }
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<Real> xhat(x.size());
  std::vector<Real> y(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * c + ch) * hw + i;
        xhat[k] = (x[k] - mu[ch]) * inv_std[ch];
        y[k] = gv[ch] * xhat[k] + bv[ch];
      }
  ImplPtr ii = input.impl();
  ImplPtr gi = gamma.impl();
  ImplPtr bi = beta.impl();
  return make_result(input.shape(), std::move(y), {&input, &gamma, &beta}, "batchnorm",
                     [ii, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw,
                      training](const TensorImpl& o) {
                       auto gx = sink(ii);
                       auto gg = sink(gi);
                       auto gb = sink(bi);
                       const Real cnt = static_cast<Real>(n * hw);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         Real sum_dy = 0;
                         Real sum_dy_xhat = 0;
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t k = (b * c + ch) * hw + i;
                             sum_dy += o.grad[k];
                             sum_dy_xhat += o.grad[k] * xhat[k];
                           }
                         if (!gg.empty()) gg[ch] += sum_dy_xhat;
                         if (!gb.empty()) gb[ch] += sum_dy;
                         if (gx.empty()) continue;
                         const Real gam = gi->data[ch];
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t k = (b * c + ch) * hw + i;
                             if (training) {
                               gx[k] += gam * inv_std[ch] *
                                        (o.grad[k] - sum_dy / cnt - xhat[k] * sum_dy_xhat / cnt);
                             } else {
                               gx[k] += gam * inv_std[ch] * o.grad[k];
                             }
                           }
                       }
                     });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = input.dim(0);
  const std::size_t fin = input.dim(1);
  const std::size_t fout = weight.dim(0);
  if (weight.dim(1) != fin) {
    throw DimensionError("linear weight " + shape_str(weight.shape()) + " for input " +
                         shape_str(input.shape()));
  }
  if (bias.defined() && bias.numel() != fout) {
    throw DimensionError("linear bias " + shape_str(bias.shape()) + " for " + std::to_string(fout) +
                         " outputs");
  }
  std::vector<Real> y(n * fout);
  gemm_ex(false, true, n, fout, fin, input.data().data(), weight.data().data(), y.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < fout; ++j) y[i * fout + j] += bv[j];
  }
  ImplPtr xi = input.impl();
  ImplPtr wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  return make_result({n, fout}, std::move(y), {&input, &weight, &bias}, "linear",
                     [xi, wi, bi, n, fin, fout](const TensorImpl& o) {
                       auto gx = sink(xi);
                       auto gw = sink(wi);
                       if (!gx.empty())
                         gemm_ex(false, false, n, fin, fout, o.grad.data(), wi->data.data(), gx.data(), true);
                       if (!gw.empty())
                         gemm_ex(true, false, fout, fin, n, o.grad.data(), xi->data.data(), gw.data(), true);
                       if (bi) {
                         auto gb = sink(bi);
                         if (gb.empty()) return;
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < fout; ++j) gb[j] += o.grad[i * fout + j];
                       }
                     });
}

}  // namespace fewshot
