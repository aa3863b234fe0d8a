#include "spacy/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace spacy::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return tape_of(a);
}

// Strides of `s` aligned to an output of rank `rank`; zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank) {
  std::vector<std::size_t> st(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::size_t src = s.size() - 1 - k;
    std::size_t dst = rank - 1 - k;
    st[dst] = s[src] == 1 ? 0 : stride;
    stride *= s[src];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) over every output element in row-major
// order.
template <class F>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  const std::size_t sa_in = sa[r - 1], sb_in = sb[r - 1];
  const std::size_t rows = shape_numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0, io = 0;
  for (std::size_t row = 0; row < rows; ++row) {
    std::size_t a = ia, b = ib;
    for (std::size_t j = 0; j < inner; ++j, ++io, a += sa_in, b += sb_in) f(io, a, b);
    for (std::size_t k = r - 1; k-- > 0;) {
      if (++idx[k] < out[k]) {
        ia += sa[k];
        ib += sb[k];
        break;
      }
      ia -= sa[k] * (out[k] - 1);
      ib -= sb[k] * (out[k] - 1);
      idx[k] = 0;
    }
  }
}

enum class BinKind { kAdd, kSub, kMul, kDiv };

Var binary(Var a, Var b, BinKind kind) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
  Tensor out(out_shape);
  const auto sa = aligned_strides(av.shape(), out_shape.size());
  const auto sb = aligned_strides(bv.shape(), out_shape.size());
  const double* pa = av.data().data();
  const double* pb = bv.data().data();
  double* po = out.data().data();
  const bool same = av.shape() == bv.shape();
  auto apply = [&](auto op) {
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) po[i] = op(pa[i], pb[i]);
    } else if (bv.size() == 1) {
      const double s = pb[0];
      for (std::size_t i = 0; i < out.size(); ++i) po[i] = op(pa[i], s);
    } else {
      for_each_bcast(out_shape, sa, sb,
                     [&](std::size_t io, std::size_t ia, std::size_t ib) { po[io] = op(pa[ia], pb[ib]); });
    }
  };
  switch (kind) {
    case BinKind::kAdd: apply([](double x, double y) { return x + y; }); break;
    case BinKind::kSub: apply([](double x, double y) { return x - y; }); break;
    case BinKind::kMul: apply([](double x, double y) { return x * y; }); break;
    case BinKind::kDiv: apply([](double x, double y) { return x / y; }); break;
  }
  return tape.record(std::move(out), {a, b}, [kind, sa, sb, same](const BackwardArgs& args) {
    const Tensor& g = args.out_grad;
    const double* pg = g.data().data();
    const double* pa = args.in_values[0]->data().data();
    const double* pb = args.in_values[1]->data().data();
    double* ga = args.in_grads[0] ? args.in_grads[0]->data().data() : nullptr;
    double* gb = args.in_grads[1] ? args.in_grads[1]->data().data() : nullptr;
    auto visit = [&](auto f) {
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) f(i, i, i);
      } else {
        for_each_bcast(g.shape(), sa, sb, f);
      }
    };
    switch (kind) {
      case BinKind::kAdd:
        visit([&](std::size_t io, std::size_t ia, std::size_t ib) {
          if (ga) ga[ia] += pg[io];
          if (gb) gb[ib] += pg[io];
        });
        break;
      case BinKind::kSub:
        visit([&](std::size_t io, std::size_t ia, std::size_t ib) {
          if (ga) ga[ia] += pg[io];
          if (gb) gb[ib] -= pg[io];
        });
        break;
      case BinKind::kMul:
        visit([&](std::size_t io, std::size_t ia, std::size_t ib) {
          if (ga) ga[ia] += pg[io] * pb[ib];
          if (gb) gb[ib] += pg[io] * pa[ia];
        });
        break;
      case BinKind::kDiv:
        visit([&](std::size_t io, std::size_t ia, std::size_t ib) {
          if (ga) ga[ia] += pg[io] / pb[ib];
          if (gb) gb[ib] -= pg[io] * pa[ia] / (pb[ib] * pb[ib]);
        });
        break;
    }
  });
}

// Element-wise unary op. `df(x, y)` is the local derivative given input x and
// output y.
template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out = Tensor::like(xv);
  const double* px = xv.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < xv.size(); ++i) po[i] = f(px[i]);
  return tape.record(std::move(out), {x}, [df](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* px = args.in_values[0]->data().data();
    const double* py = args.out_value.data().data();
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for (std::size_t i = 0; i < args.out_grad.size(); ++i) gx[i] += pg[i] * df(px[i], py[i]);
  });
}

void require_positive(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!(v > 0.0))
      throw DomainError(std::string(op) + " of non-positive value " + std::to_string(v));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// (outer, n, inner) decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t k = 0; k < axis; ++k) r.outer *= s[k];
  r.n = s[axis];
  for (std::size_t k = axis + 1; k < s.size(); ++k) r.inner *= s[k];
  return r;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t ea = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::size_t eb = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[k] = std::max(ea, eb);
  }
  return out;
}

Tensor reduce_to(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  if (broadcast_shapes(grad.shape(), target) != grad.shape())
    throw ShapeError("cannot reduce " + shape_str(grad.shape()) + " to " + shape_str(target));
  Tensor out(target);
  const auto st = aligned_strides(target, grad.rank());
  const auto sg = aligned_strides(grad.shape(), grad.rank());
  const double* pg = grad.data().data();
  double* po = out.data().data();
  for_each_bcast(grad.shape(), sg, st, [&](std::size_t, std::size_t ig, std::size_t it) { po[it] += pg[ig]; });
  return out;
}

Var add(Var a, Var b) { return binary(a, b, BinKind::kAdd); }
Var sub(Var a, Var b) { return binary(a, b, BinKind::kSub); }
Var mul(Var a, Var b) { return binary(a, b, BinKind::kMul); }
Var div(Var a, Var b) { return binary(a, b, BinKind::kDiv); }

Var neg(Var x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(Var x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  require_positive(x.value(), "log");
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  require_positive(x.value(), "sqrt");
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sigmoid(Var x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(v); });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tape.record(Tensor::scalar(s), {x}, [](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double g = args.out_grad[0];
    for (double& v : args.in_grads[0]->data()) v += g;
  });
}

Var sum(Var x, std::size_t axis, bool keepdim) {
  Tape& tape = tape_of(x);
  const Shape& s = x.value().shape();
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  if (keepdim || s.size() == 1) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(out_shape);
  const double* px = x.value().data().data();
  double* po = out.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      const double* row = px + (o * sp.n + k) * sp.inner;
      double* dst = po + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  return tape.record(std::move(out), {x}, [sp](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k) {
        double* row = gx + (o * sp.n + k) * sp.inner;
        const double* src = pg + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) row[i] += src[i];
      }
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var mean(Var x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.value().dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const auto m = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto n = static_cast<Eigen::Index>(bv.dim(1));
  Tensor out(Shape{av.dim(0), bv.dim(1)});
  Map(out.data().data(), m, n).noalias() = MapC(av.data().data(), m, k) * MapC(bv.data().data(), k, n);
  return tape.record(std::move(out), {a, b}, [m, k, n](const BackwardArgs& args) {
    MapC g(args.out_grad.data().data(), m, n);
    if (args.in_grads[0])
      Map(args.in_grads[0]->data().data(), m, k).noalias() +=
          g * MapC(args.in_values[1]->data().data(), k, n).transpose();
    if (args.in_grads[1])
      Map(args.in_grads[1]->data().data(), k, n).noalias() +=
          MapC(args.in_values[0]->data().data(), m, k).transpose() * g;
  });
}

Var batched_matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool shared = bv.rank() == 2;
  if (av.rank() != 3 || (bv.rank() != 3 && !shared))
    throw ShapeError("batched_matmul expects (B,M,K) x (B,K,N) or (K,N)");
  const std::size_t batch = av.dim(0);
  const auto m = static_cast<Eigen::Index>(av.dim(1));
  const auto k = static_cast<Eigen::Index>(av.dim(2));
  const std::size_t bk = shared ? bv.dim(0) : bv.dim(1);
  const auto n = static_cast<Eigen::Index>(shared ? bv.dim(1) : bv.dim(2));
  if ((!shared && bv.dim(0) != batch) || bk != static_cast<std::size_t>(k))
    throw ShapeError("batched_matmul shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  if (shared) {
    // Same contraction as a single (B*M,K) x (K,N) product.
    Var flat = reshape(a, Shape{batch * av.dim(1), av.dim(2)});
    return reshape(matmul(flat, b), Shape{batch, av.dim(1), bv.dim(1)});
  }
  Tensor out(Shape{batch, av.dim(1), static_cast<std::size_t>(n)});
  const std::size_t sa = m * k, sb = k * n, so = m * n;
  for (std::size_t i = 0; i < batch; ++i)
    Map(out.data().data() + i * so, m, n).noalias() =
        MapC(av.data().data() + i * sa, m, k) * MapC(bv.data().data() + i * sb, k, n);
  return tape.record(std::move(out), {a, b}, [=](const BackwardArgs& args) {
    for (std::size_t i = 0; i < batch; ++i) {
      MapC g(args.out_grad.data().data() + i * so, m, n);
      if (args.in_grads[0])
        Map(args.in_grads[0]->data().data() + i * sa, m, k).noalias() +=
            g * MapC(args.in_values[1]->data().data() + i * sb, k, n).transpose();
      if (args.in_grads[1])
        Map(args.in_grads[1]->data().data() + i * sb, k, n).noalias() +=
            MapC(args.in_values[0]->data().data() + i * sa, m, k).transpose() * g;
    }
  });
}

Var transpose(Var x) {
  if (x.value().rank() != 2) throw ShapeError("transpose expects a 2-D tensor");
  return permute(x, {1, 0});
}

Var permute(Var x, const std::vector<std::size_t>& axes) {
  Tape& tape = tape_of(x);
  const Shape& s = x.value().shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ShapeError("permute axes rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t k = 0; k < r; ++k) {
    if (axes[k] >= r || seen[axes[k]]) throw ShapeError("permute axes are not a permutation");
    seen[axes[k]] = true;
    out_shape[k] = s[axes[k]];
  }
  std::vector<std::size_t> in_strides(r);
  std::size_t st = 1;
  for (std::size_t k = r; k-- > 0;) {
    in_strides[k] = st;
    st *= s[k];
  }
  // src index for each output element, following the permuted strides.
  std::vector<std::size_t> src_strides(r);
  for (std::size_t k = 0; k < r; ++k) src_strides[k] = in_strides[axes[k]];
  std::vector<std::size_t> zero(r, 0);
  Tensor out(out_shape);
  const double* px = x.value().data().data();
  double* po = out.data().data();
  for_each_bcast(out_shape, src_strides, zero, [&](std::size_t io, std::size_t is, std::size_t) { po[io] = px[is]; });
  return tape.record(std::move(out), {x}, [out_shape, src_strides, zero](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for_each_bcast(out_shape, src_strides, zero, [&](std::size_t io, std::size_t is, std::size_t) { gx[is] += pg[io]; });
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Tape& tape = tape_of(parts[0]);
  const Shape& s0 = parts[0].value().shape();
  if (axis >= s0.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (p.tape() != &tape) throw std::invalid_argument("concat operands live on different tapes");
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k != axis && s[k] != s0[k])
        throw ShapeError("concat extent mismatch: " + shape_str(s) + " vs " + shape_str(s0));
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  double* po = out.data().data();
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data().data();
    const std::size_t chunk = widths[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(src + o * chunk, chunk, po + o * sp.n * sp.inner + offset);
    offset += chunk;
  }
  return tape.record(std::move(out), parts, [sp, widths](const BackwardArgs& args) {
    const double* pg = args.out_grad.data().data();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t chunk = widths[p] * sp.inner;
      if (double* gx = args.in_grads[p] ? args.in_grads[p]->data().data() : nullptr) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = pg + o * sp.n * sp.inner + offset;
          double* dst = gx + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(x);
  const Shape& s = x.value().shape();
  const AxisSplit sp = split_axis(s, axis);
  if (begin >= end || end > sp.n)
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  const std::size_t start = begin * sp.inner;
  Tensor out(out_shape);
  const double* px = x.value().data().data();
  double* po = out.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) std::copy_n(px + o * sp.n * sp.inner + start, chunk, po + o * chunk);
  return tape.record(std::move(out), {x}, [sp, chunk, start](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx + o * sp.n * sp.inner + start;
      const double* src = pg + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = tape_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for (std::size_t i = 0; i < args.out_grad.size(); ++i) gx[i] += pg[i];
  });
}

Var broadcast_to(Var x, Shape shape) {
  Tape& tape = tape_of(x);
  const Shape& s = x.value().shape();
  if (broadcast_shapes(s, shape) != shape)
    throw ShapeError("cannot broadcast " + shape_str(s) + " to " + shape_str(shape));
  const auto sx = aligned_strides(s, shape.size());
  std::vector<std::size_t> zero(shape.size(), 0);
  Tensor out(shape);
  const double* px = x.value().data().data();
  double* po = out.data().data();
  for_each_bcast(shape, sx, zero, [&](std::size_t io, std::size_t ix, std::size_t) { po[io] = px[ix]; });
  return tape.record(std::move(out), {x}, [shape, sx, zero](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    const double* pg = args.out_grad.data().data();
    double* gx = args.in_grads[0]->data().data();
    for_each_bcast(shape, sx, zero, [&](std::size_t io, std::size_t ix, std::size_t) { gx[ix] += pg[io]; });
  });
}

Var where(const Tensor& mask, Var a, Var b) {
  Tape& tape = tape_of(a, b);
  Shape out_shape = broadcast_shapes(a.value().shape(), b.value().shape());
  if (broadcast_shapes(out_shape, mask.shape()) != out_shape)
    throw ShapeError("where mask " + shape_str(mask.shape()) + " does not broadcast to " + shape_str(out_shape));
  if (a.value().shape() != out_shape) a = broadcast_to(a, out_shape);
  if (b.value().shape() != out_shape) b = broadcast_to(b, out_shape);
  const auto sm = aligned_strides(mask.shape(), out_shape.size());
  std::vector<std::size_t> zero(out_shape.size(), 0);
  std::vector<unsigned char> pick(shape_numel(out_shape));
  const double* pm = mask.data().data();
  for_each_bcast(out_shape, sm, zero, [&](std::size_t io, std::size_t im, std::size_t) { pick[io] = pm[im] != 0.0; });
  Tensor out(out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pick[i] ? pa[i] : pb[i];
  return tape.record(std::move(out), {a, b}, [pick = std::move(pick)](const BackwardArgs& args) {
    const double* pg = args.out_grad.data().data();
    double* ga = args.in_grads[0] ? args.in_grads[0]->data().data() : nullptr;
    double* gb = args.in_grads[1] ? args.in_grads[1]->data().data() : nullptr;
    for (std::size_t i = 0; i < pick.size(); ++i) {
      if (pick[i]) {
        if (ga) ga[i] += pg[i];
      } else if (gb) {
        gb[i] += pg[i];
      }
    }
  });
}

Var stop_gradient(Var x) { return tape_of(x).constant(x.value()); }

Var softmax(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t k = xv.shape().back();
  const std::size_t rows = xv.size() / k;
  Tensor out = Tensor::like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = xv.data().data() + r * k;
    double* po = out.data().data() + r * k;
    const double mx = *std::max_element(px, px + k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (po[i] = std::exp(px[i] - mx));
    for (std::size_t i = 0; i < k; ++i) po[i] /= z;
  }
  return tape.record(std::move(out), {x}, [k, rows](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* py = args.out_value.data().data() + r * k;
      const double* pg = args.out_grad.data().data() + r * k;
      double* gx = args.in_grads[0]->data().data() + r * k;
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += pg[i] * py[i];
      for (std::size_t i = 0; i < k; ++i) gx[i] += py[i] * (pg[i] - dot);
    }
  });
}

Var cumsum(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t k = xv.shape().back();
  const std::size_t rows = xv.size() / k;
  Tensor out = Tensor::like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) out[r * k + i] = (acc += xv[r * k + i]);
  }
  return tape.record(std::move(out), {x}, [k, rows](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    double* gx = args.in_grads[0]->data().data();
    const double* pg = args.out_grad.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t i = k; i-- > 0;) gx[r * k + i] += (acc += pg[r * k + i]);
    }
  });
}

Var gather_last(Var x, const std::vector<std::size_t>& index) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t k = xv.shape().back();
  const std::size_t rows = xv.size() / k;
  if (index.size() != rows) throw ShapeError("gather_last index count does not match rows");
  Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= k) throw std::out_of_range("gather_last index out of range");
    out[r] = xv[r * k + index[r]];
  }
  return tape.record(std::move(out), {x}, [k, index](const BackwardArgs& args) {
    if (!args.in_grads[0]) return;
    double* gx = args.in_grads[0]->data().data();
    for (std::size_t r = 0; r < index.size(); ++r) gx[r * k + index[r]] += args.out_grad[r];
  });
}

}  // namespace spacy::ad
