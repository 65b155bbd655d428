#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "specmix/autodiff.hpp"
#include "specmix/errors.hpp"

namespace specmix {
namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an invalid variable");
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

bool is_single(const Shape& s) { return element_count(s) == 1; }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_single(b) && b.size() <= a.size()) return a;
  if (is_single(a) && a.size() <= b.size()) return b;
  if (a.size() != b.size())
    throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1)
      out[i] = a[i];
    else if (a[i] == 1)
      out[i] = b[i];
    else
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
  }
  return out;
}

// Strides of `s` viewed inside `out`, with 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  if (is_single(s)) return strides;
  std::size_t stride = 1;
  for (std::size_t i = out.size(); i-- > 0;) {
    strides[i] = (s[i] == 1) ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

// Visits every index of `out`, passing the flat offsets into a and b.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t total = element_count(out);
  if (total == 0) return;
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  const std::size_t inner = out[r - 1];
  for (std::size_t flat = 0; flat < total; flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, oa + j * sa[r - 1], ob + j * sb[r - 1]);
    // advance the odometer over all but the last axis
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <class F>
Tensor binary_values(const Tensor& a, const Tensor& b, F&& f) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  } else if (is_single(b.shape()) && x.size() == o.size()) {
    const double yv = y[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], yv);
  } else if (is_single(a.shape()) && y.size() == o.size()) {
    const double xv = x[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xv, y[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      o[oi] = f(x[ai], y[bi]);
    });
  }
  return out;
}

template <class F>
Tensor unary_values(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

// Sums `g` down to `shape`, handling single-element targets of any rank.
Var reduce_like(Var g, const Shape& shape) {
  if (g.shape() == shape) return g;
  if (is_single(shape)) return ad::reshape(ad::sum(g), shape);
  return ad::sum_to(g, shape);
}

Tensor sum_to_values(const Tensor& x, const Shape& shape) {
  Tensor out(shape);
  auto o = out.data();
  auto in = x.data();
  auto so = broadcast_strides(shape, x.shape());
  std::vector<std::size_t> unit(x.rank(), 0);
  for_each_broadcast(x.shape(), so, unit, [&](std::size_t xi, std::size_t oi, std::size_t) { o[oi] += in[xi]; });
  return out;
}

Tensor broadcast_values(const Tensor& x, const Shape& shape) {
  Tensor out(shape);
  auto o = out.data();
  auto in = x.data();
  auto sx = broadcast_strides(x.shape(), shape);
  std::vector<std::size_t> unit(shape.size(), 0);
  for_each_broadcast(shape, sx, unit, [&](std::size_t oi, std::size_t xi, std::size_t) { o[oi] = in[xi]; });
  return out;
}

void check_reducible(const Shape& from, const Shape& to, const char* op) {
  bool ok = from.size() == to.size();
  for (std::size_t i = 0; ok && i < from.size(); ++i) ok = (to[i] == from[i] || to[i] == 1);
  if (!ok) throw ShapeError(std::string(op) + ": cannot map " + to_string(from) + " onto " + to_string(to));
}

// Inverse of slice: places x at [begin, begin+len) of a zero tensor along axis.
Var embed(Var x, std::size_t axis, std::size_t begin, std::size_t full);

struct AxisSplit {
  std::size_t outer, extent, inner;
};
AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

Var embed(Var x, std::size_t axis, std::size_t begin, std::size_t full) {
  Shape shape = x.shape();
  const AxisSplit src = split_at(shape, axis);
  shape[axis] = full;
  Tensor out(shape);
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t a = 0; a < src.outer; ++a)
    for (std::size_t e = 0; e < src.extent; ++e)
      std::copy_n(in.begin() + (a * src.extent + e) * src.inner, src.inner,
                  o.begin() + (a * full + begin + e) * src.inner);
  const std::size_t len = src.extent;
  return x.tape().record("embed", std::move(out), {x}, [axis, begin, len](const BackwardContext& c) {
    return std::vector<Var>{ad::slice(c.grad, axis, begin, begin + len)};
  });
}

Tensor transpose2(const Tensor& t) {
  const std::size_t r = t.dim(0), c = t.dim(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = t(i, j);
  return out;
}

struct ConvDims {
  std::size_t batch, length, cin, k, cout, stride, out_length;
  long left;
};

}  // namespace

SamePadding same_padding(std::size_t length, std::size_t kernel, std::size_t stride) {
  const std::size_t out = (length + stride - 1) / stride;
  const long need = static_cast<long>((out - 1) * stride + kernel) - static_cast<long>(length);
  const long total = std::max(need, 0L);
  return {out, static_cast<std::size_t>(total / 2)};
}

namespace ad {

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record("add", binary_values(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                  [](const BackwardContext& c) {
                    return std::vector<Var>{reduce_like(c.grad, c.inputs[0].shape()),
                                            reduce_like(c.grad, c.inputs[1].shape())};
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record("sub", binary_values(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                  [](const BackwardContext& c) {
                    return std::vector<Var>{reduce_like(c.grad, c.inputs[0].shape()),
                                            reduce_like(neg(c.grad), c.inputs[1].shape())};
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record("mul", binary_values(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                  [](const BackwardContext& c) {
                    const Var a = c.inputs[0], b = c.inputs[1];
                    Var ga, gb;
                    if (a.requires_grad()) ga = reduce_like(mul(c.grad, b), a.shape());
                    if (b.requires_grad()) gb = reduce_like(mul(c.grad, a), b.shape());
                    return std::vector<Var>{ga, gb};
                  });
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record("div", binary_values(a.value(), b.value(), [](double x, double y) { return x / y; }), {a, b},
                  [](const BackwardContext& c) {
                    const Var a = c.inputs[0], b = c.inputs[1];
                    Var ga, gb;
                    if (a.requires_grad()) ga = reduce_like(div(c.grad, b), a.shape());
                    if (b.requires_grad()) gb = reduce_like(neg(div(mul(c.grad, c.output), b)), b.shape());
                    return std::vector<Var>{ga, gb};
                  });
}

Var neg(Var x) {
  return x.tape().record("neg", unary_values(x.value(), [](double v) { return -v; }), {x},
                         [](const BackwardContext& c) { return std::vector<Var>{neg(c.grad)}; });
}

Var scale(Var x, double k) {
  return x.tape().record("scale", unary_values(x.value(), [k](double v) { return k * v; }), {x},
                         [k](const BackwardContext& c) { return std::vector<Var>{scale(c.grad, k)}; });
}

Var add_scalar(Var x, double k) {
  return x.tape().record("add_scalar", unary_values(x.value(), [k](double v) { return v + k; }), {x},
                         [](const BackwardContext& c) { return std::vector<Var>{c.grad}; });
}

Var exp(Var x) {
  return x.tape().record("exp", unary_values(x.value(), [](double v) { return std::exp(v); }), {x},
                         [](const BackwardContext& c) { return std::vector<Var>{mul(c.grad, c.output)}; });
}

Var log(Var x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw ContractError("log of a non-positive value");
  return x.tape().record("log", unary_values(x.value(), [](double v) { return std::log(v); }), {x},
                         [](const BackwardContext& c) { return std::vector<Var>{div(c.grad, c.inputs[0])}; });
}

Var sqrt(Var x) {
  for (double v : x.value().data())
    if (v < 0.0) throw ContractError("sqrt of a negative value");
  return x.tape().record("sqrt", unary_values(x.value(), [](double v) { return std::sqrt(v); }), {x},
                         [](const BackwardContext& c) {
                           return std::vector<Var>{mul(c.grad, scale(reciprocal_safe(c.output), 0.5))};
                         });
}

Var square(Var x) {
  return x.tape().record("square", unary_values(x.value(), [](double v) { return v * v; }), {x},
                         [](const BackwardContext& c) {
                           return std::vector<Var>{mul(c.grad, scale(c.inputs[0], 2.0))};
                         });
}

Var tanh(Var x) {
  return x.tape().record("tanh", unary_values(x.value(), [](double v) { return std::tanh(v); }), {x},
                         [](const BackwardContext& c) {
                           return std::vector<Var>{mul(c.grad, add_scalar(neg(square(c.output)), 1.0))};
                         });
}

Var sigmoid(Var x) {
  auto f = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return x.tape().record("sigmoid", unary_values(x.value(), f), {x}, [](const BackwardContext& c) {
    return std::vector<Var>{mul(c.grad, mul(c.output, add_scalar(neg(c.output), 1.0)))};
  });
}

Var reciprocal(Var x) {
  return x.tape().record("reciprocal", unary_values(x.value(), [](double v) { return 1.0 / v; }), {x},
                         [](const BackwardContext& c) {
                           return std::vector<Var>{neg(mul(c.grad, square(c.output)))};
                         });
}

Var reciprocal_safe(Var x) {
  return x.tape().record("reciprocal_safe",
                         unary_values(x.value(), [](double v) { return v == 0.0 ? 0.0 : 1.0 / v; }), {x},
                         [](const BackwardContext& c) {
                           return std::vector<Var>{neg(mul(c.grad, square(c.output)))};
                         });
}

Var abs(Var x) {
  return x.tape().record("abs", unary_values(x.value(), [](double v) { return std::abs(v); }), {x},
                         [](const BackwardContext& c) {
                           Tensor sign = unary_values(c.inputs[0].value(),
                                                      [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
                           return std::vector<Var>{mul(c.grad, c.grad.tape().constant(std::move(sign)))};
                         });
}

Var acos_clamped(Var x) {
  return x.tape().record(
      "acos_clamped", unary_values(x.value(), [](double v) { return std::acos(std::clamp(v, -1.0, 1.0)); }), {x},
      [](const BackwardContext& c) {
        Tensor d = unary_values(c.inputs[0].value(), [](double v) {
          if (v <= -1.0 || v >= 1.0) return 0.0;
          return -1.0 / std::sqrt(std::max(1.0 - v * v, 1e-24));
        });
        return std::vector<Var>{mul(c.grad, c.grad.tape().constant(std::move(d)))};
      },
      /*second_order=*/false);
}

Var sum_to(Var x, const Shape& shape) {
  if (x.shape() == shape) return x;
  check_reducible(x.shape(), shape, "sum_to");
  return x.tape().record("sum_to", sum_to_values(x.value(), shape), {x}, [](const BackwardContext& c) {
    return std::vector<Var>{broadcast_to(c.grad, c.inputs[0].shape())};
  });
}

Var broadcast_to(Var x, const Shape& shape) {
  if (x.shape() == shape) return x;
  check_reducible(shape, x.shape(), "broadcast_to");
  return x.tape().record("broadcast_to", broadcast_values(x.value(), shape), {x}, [](const BackwardContext& c) {
    return std::vector<Var>{sum_to(c.grad, c.inputs[0].shape())};
  });
}

Var sum(Var x) {
  Shape ones(x.rank(), 1);
  return reshape(sum_to(x, ones), Shape{});
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_to(Var x, const Shape& shape) {
  const double ratio = static_cast<double>(element_count(shape)) / static_cast<double>(x.value().size());
  return scale(sum_to(x, shape), ratio);
}

Var sum_axis(Var x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
  Shape s = x.shape();
  s[axis] = 1;
  return sum_to(x, s);
}

Var reshape(Var x, Shape shape) {
  if (element_count(shape) != x.value().size())
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  if (shape == x.shape()) return x;
  Tensor v = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(v), {x}, [](const BackwardContext& c) {
    return std::vector<Var>{reshape(c.grad, c.inputs[0].shape())};
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i]) throw ShapeError("concat: extent mismatch off the concat axis");
    total += s[axis];
  }
  shape[axis] = total;
  Tensor out(shape);
  const AxisSplit dst = split_at(shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const AxisSplit src = split_at(p.shape(), axis);
    auto in = p.value().data();
    for (std::size_t a = 0; a < src.outer; ++a)
      std::copy_n(in.begin() + a * src.extent * src.inner, src.extent * src.inner,
                  out.data().begin() + (a * dst.extent + off) * dst.inner);
    offsets.push_back(off);
    off += src.extent;
  }
  return parts[0].tape().record("concat", std::move(out), parts, [axis, offsets](const BackwardContext& c) {
    std::vector<Var> g;
    for (std::size_t i = 0; i < c.inputs.size(); ++i)
      g.push_back(slice(c.grad, axis, offsets[i], offsets[i] + c.inputs[i].dim(axis)));
    return g;
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) throw ShapeError("slice out of range");
  const AxisSplit src = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  auto in = x.value().data();
  const std::size_t len = end - begin;
  for (std::size_t a = 0; a < src.outer; ++a)
    std::copy_n(in.begin() + (a * src.extent + begin) * src.inner, len * src.inner,
                out.data().begin() + a * len * src.inner);
  const std::size_t full = x.dim(axis);
  return x.tape().record("slice", std::move(out), {x}, [axis, begin, full](const BackwardContext& c) {
    return std::vector<Var>{embed(c.grad, axis, begin, full)};
  });
}

namespace {

std::size_t channels_of(Var x, const char* op) {
  if (x.rank() < 1 || x.shape().back() == 0) throw ShapeError(std::string(op) + ": input needs a channel axis");
  return x.shape().back();
}

void check_channel_vector(Var v, std::size_t C, const char* op) {
  if (v && v.shape() != Shape{C})
    throw ShapeError(std::string(op) + ": expected a [" + std::to_string(C) + "] channel vector, got " +
                     to_string(v.shape()));
}

}  // namespace

Var channel_affine(Var x, Var scale, Var shift) {
  const std::size_t C = channels_of(x, "channel_affine");
  check_channel_vector(scale, C, "channel_affine");
  check_channel_vector(shift, C, "channel_affine");
  if (!scale && !shift) return x;
  Tensor out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  const double* s = scale ? scale.value().data().data() : nullptr;
  const double* t = shift ? shift.value().data().data() : nullptr;
  for (std::size_t i = 0; i < in.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) {
      double v = in[i + c];
      if (s) v *= s[c];
      if (t) v += t[c];
      o[i + c] = v;
    }
  std::vector<Var> inputs{x};
  if (scale) inputs.push_back(scale);
  if (shift) inputs.push_back(shift);
  const bool has_scale = static_cast<bool>(scale), has_shift = static_cast<bool>(shift);
  return x.tape().record("channel_affine", std::move(out), std::move(inputs),
                         [has_scale, has_shift](const BackwardContext& c) {
                           const Var x = c.inputs[0];
                           const Var s = has_scale ? c.inputs[1] : Var{};
                           std::vector<Var> g;
                           g.push_back(x.requires_grad() ? (has_scale ? channel_affine(c.grad, s, {}) : c.grad) : Var{});
                           if (has_scale) g.push_back(s.requires_grad() ? channel_dot(c.grad, x) : Var{});
                           if (has_shift) g.push_back(c.inputs.back().requires_grad() ? channel_sum(c.grad) : Var{});
                           return g;
                         });
}

Var channel_dot(Var a, Var b) {
  same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("channel_dot: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t C = channels_of(a, "channel_dot");
  Tensor out(Shape{C});
  auto x = a.value().data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < x.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) out[c] += x[i + c] * y[i + c];
  return a.tape().record("channel_dot", std::move(out), {a, b}, [](const BackwardContext& c) {
    const Var a = c.inputs[0], b = c.inputs[1];
    return std::vector<Var>{a.requires_grad() ? channel_affine(b, c.grad, {}) : Var{},
                            b.requires_grad() ? channel_affine(a, c.grad, {}) : Var{}};
  });
}

Var channel_sum(Var x) {
  const std::size_t C = channels_of(x, "channel_sum");
  Tensor out(Shape{C});
  auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) out[c] += in[i + c];
  return x.tape().record("channel_sum", std::move(out), {x}, [](const BackwardContext& c) {
    return std::vector<Var>{channel_fill(c.grad, c.inputs[0].shape())};
  });
}

Var channel_fill(Var v, const Shape& shape) {
  if (shape.empty()) throw ShapeError("channel_fill: target needs a channel axis");
  const std::size_t C = shape.back();
  check_channel_vector(v, C, "channel_fill");
  Tensor out(shape);
  auto o = out.data();
  auto in = v.value().data();
  for (std::size_t i = 0; i < o.size(); i += C) std::copy_n(in.begin(), C, o.begin() + i);
  return v.tape().record("channel_fill", std::move(out), {v}, [](const BackwardContext& c) {
    return std::vector<Var>{channel_sum(c.grad)};
  });
}

Var mask_mul(Var x, Tensor mask) {
  if (mask.shape() != x.shape())
    throw ShapeError("mask_mul: mask " + to_string(mask.shape()) + " for input " + to_string(x.shape()));
  Tensor out(x.shape());
  auto in = x.value().data();
  auto m = mask.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * m[i];
  auto shared = std::make_shared<const Tensor>(std::move(mask));
  return x.tape().record("mask_mul", std::move(out), {x}, [shared](const BackwardContext& c) {
    return std::vector<Var>{mask_mul(c.grad, *shared)};
  });
}

Var matmul(Var a, Var b, bool ta, bool tb) {
  Tape& t = same_tape(a, b);
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  const Tensor A = ta ? transpose2(a.value()) : a.value();
  const Tensor B = tb ? transpose2(b.value()) : b.value();
  const std::size_t n = A.dim(0), m = A.dim(1), p = B.dim(1);
  if (B.dim(0) != m)
    throw ShapeError("matmul: " + to_string(A.shape()) + " x " + to_string(B.shape()));
  Tensor out(Shape{n, p});
  auto o = out.data();
  auto av = A.data();
  auto bv = B.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = av[i * m + k];
      const double* brow = bv.data() + k * p;
      double* orow = o.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  return t.record("matmul", std::move(out), {a, b}, [ta, tb](const BackwardContext& c) {
    const Var a = c.inputs[0], b = c.inputs[1], g = c.grad;
    Var ga, gb;
    if (a.requires_grad()) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
    if (b.requires_grad()) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
    return std::vector<Var>{ga, gb};
  });
}

namespace {

ConvDims conv_dims(const Shape& input, const Shape& kernel, std::size_t stride) {
  if (input.size() != 3) throw ShapeError("conv1d input must be [B, D, C], got " + to_string(input));
  if (kernel.size() != 3) throw ShapeError("conv1d kernel must be [k, Cin, Cout], got " + to_string(kernel));
  if (stride == 0) throw ParameterError("conv1d stride must be >= 1");
  if (kernel[0] % 2 == 0) throw ParameterError("conv1d kernel size must be odd");
  if (input[2] != kernel[1])
    throw ShapeError("conv1d channel mismatch: input has " + std::to_string(input[2]) + ", kernel expects " +
                     std::to_string(kernel[1]));
  const SamePadding pad = same_padding(input[1], kernel[0], stride);
  return {input[0], input[1], input[2], kernel[0], kernel[2], stride, pad.out_length, static_cast<long>(pad.left)};
}

// Taps [k_lo, k_hi) of output position o that land inside the input.
struct TapRange {
  std::size_t k_lo, k_hi, first_input;
};

TapRange taps(const ConvDims& d, std::size_t o) {
  const long start = static_cast<long>(o * d.stride) - d.left;
  const std::size_t k_lo = start < 0 ? static_cast<std::size_t>(-start) : 0;
  const long end = start + static_cast<long>(d.k);
  const std::size_t over = end > static_cast<long>(d.length) ? static_cast<std::size_t>(end - static_cast<long>(d.length)) : 0;
  const std::size_t k_hi = d.k > over ? d.k - over : 0;
  return {k_lo, std::max(k_lo, k_hi), static_cast<std::size_t>(start + static_cast<long>(k_lo))};
}

// Summation orders (kept in sync with the test oracles):
//   forward      out[b,o,co]  = sum over k, then ci
//   input grad   gx[b,i,ci]   = sum over k, then co
//   weight grad  gw[k,ci,co]  = sum over b, then o
// Each kernel accumulates one output row in a local buffer, so fixed channel
// counts keep the accumulators in registers.

template <std::size_t C>
struct Acc {
  double v[C ? C : 1];
  explicit Acc(std::size_t) {}
  double* data() { return v; }
};
template <>
struct Acc<0> {
  std::vector<double> v;
  explicit Acc(std::size_t n) : v(n) {}
  double* data() { return v.data(); }
};

template <std::size_t CO>
void forward_kernel(const double* xv, const double* wv, const ConvDims& d, double* ov) {
  const std::size_t cout = CO ? CO : d.cout;
  Acc<CO> buf(cout);
  double* acc = buf.data();
  for (std::size_t o = 0; o < d.out_length; ++o) {
    const TapRange t = taps(d, o);
    const std::size_t n = (t.k_hi - t.k_lo) * d.cin;
    const double* wp = wv + t.k_lo * d.cin * cout;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* xp = xv + (b * d.length + t.first_input) * d.cin;
      for (std::size_t co = 0; co < cout; ++co) acc[co] = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = xp[j];
        const double* wr = wp + j * cout;
        for (std::size_t co = 0; co < cout; ++co) acc[co] += x * wr[co];
      }
      double* orow = ov + (b * d.out_length + o) * cout;
      for (std::size_t co = 0; co < cout; ++co) orow[co] = acc[co];
    }
  }
}

// wt is the kernel transposed to [k, Cout, Cin].
template <std::size_t CI>
void input_grad_kernel(const double* gv, const double* wt, const ConvDims& d, double* ov) {
  const std::size_t cin = CI ? CI : d.cin;
  Acc<CI> buf(cin);
  double* acc = buf.data();
  for (std::size_t i = 0; i < d.length; ++i) {
    const long shifted = static_cast<long>(i) + d.left;
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t ci = 0; ci < cin; ++ci) acc[ci] = 0.0;
      for (std::size_t k = 0; k < d.k; ++k) {
        const long num = shifted - static_cast<long>(k);
        if (num < 0 || num % static_cast<long>(d.stride) != 0) continue;
        const std::size_t o = static_cast<std::size_t>(num) / d.stride;
        if (o >= d.out_length) continue;
        const double* grow = gv + (b * d.out_length + o) * d.cout;
        const double* wk = wt + k * d.cout * cin;
        for (std::size_t co = 0; co < d.cout; ++co) {
          const double g = grow[co];
          const double* wr = wk + co * cin;
          for (std::size_t ci = 0; ci < cin; ++ci) acc[ci] += g * wr[ci];
        }
      }
      double* xrow = ov + (b * d.length + i) * cin;
      for (std::size_t ci = 0; ci < cin; ++ci) xrow[ci] = acc[ci];
    }
  }
}

template <std::size_t CO>
void weight_grad_kernel(const double* xv, const double* gv, const ConvDims& d, double* ov) {
  const std::size_t cout = CO ? CO : d.cout;
  Acc<CO> buf(cout);
  double* acc = buf.data();
  for (std::size_t k = 0; k < d.k; ++k) {
    // output positions whose window covers tap k
    std::size_t o_lo = d.out_length, o_hi = 0;
    for (std::size_t o = 0; o < d.out_length; ++o) {
      const TapRange t = taps(d, o);
      if (k >= t.k_lo && k < t.k_hi) {
        o_lo = std::min(o_lo, o);
        o_hi = o + 1;
      }
    }
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t co = 0; co < cout; ++co) acc[co] = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t o = o_lo; o < o_hi; ++o) {
          const std::size_t i = static_cast<std::size_t>(static_cast<long>(o * d.stride + k) - d.left);
          const double x = xv[(b * d.length + i) * d.cin + ci];
          const double* grow = gv + (b * d.out_length + o) * cout;
          for (std::size_t co = 0; co < cout; ++co) acc[co] += x * grow[co];
        }
      double* wrow = ov + (k * d.cin + ci) * cout;
      for (std::size_t co = 0; co < cout; ++co) wrow[co] = acc[co];
    }
  }
}

template <template <std::size_t> class Kernel, class... Args>
void dispatch_width(std::size_t width, Args... args) {
  switch (width) {
    case 1: Kernel<1>::run(args...); break;
    case 5: Kernel<5>::run(args...); break;
    case 10: Kernel<10>::run(args...); break;
    case 20: Kernel<20>::run(args...); break;
    case 30: Kernel<30>::run(args...); break;
    default: Kernel<0>::run(args...); break;
  }
}

template <std::size_t C>
struct Forward {
  static void run(const double* x, const double* w, const ConvDims& d, double* o) { forward_kernel<C>(x, w, d, o); }
};
template <std::size_t C>
struct InputGrad {
  static void run(const double* g, const double* w, const ConvDims& d, double* o) { input_grad_kernel<C>(g, w, d, o); }
};
template <std::size_t C>
struct WeightGrad {
  static void run(const double* x, const double* g, const ConvDims& d, double* o) { weight_grad_kernel<C>(x, g, d, o); }
};

Tensor conv_forward(const Tensor& x, const Tensor& w, const ConvDims& d) {
  Tensor out(Shape{d.batch, d.out_length, d.cout});
  dispatch_width<Forward>(d.cout, x.data().data(), w.data().data(), d, out.data().data());
  return out;
}

Tensor conv_input_grad_values(const Tensor& g, const Tensor& w, const ConvDims& d) {
  std::vector<double> wt(w.size());
  auto wv = w.data();
  for (std::size_t k = 0; k < d.k; ++k)
    for (std::size_t ci = 0; ci < d.cin; ++ci)
      for (std::size_t co = 0; co < d.cout; ++co)
        wt[(k * d.cout + co) * d.cin + ci] = wv[(k * d.cin + ci) * d.cout + co];
  Tensor out(Shape{d.batch, d.length, d.cin});
  dispatch_width<InputGrad>(d.cin, g.data().data(), static_cast<const double*>(wt.data()), d, out.data().data());
  return out;
}

Tensor conv_weight_grad_values(const Tensor& x, const Tensor& g, const ConvDims& d) {
  Tensor out(Shape{d.k, d.cin, d.cout});
  dispatch_width<WeightGrad>(d.cout, x.data().data(), g.data().data(), d, out.data().data());
  return out;
}

}  // namespace

// The three conv ops are mutual adjoints, so each backward rule is written
// in terms of the others and the family is closed under differentiation.
Var conv1d(Var input, Var kernel, std::size_t stride) {
  Tape& t = same_tape(input, kernel);
  const ConvDims d = conv_dims(input.shape(), kernel.shape(), stride);
  return t.record("conv1d", conv_forward(input.value(), kernel.value(), d), {input, kernel},
                  [stride](const BackwardContext& c) {
                    const Var x = c.inputs[0], w = c.inputs[1];
                    Var gx, gw;
                    if (x.requires_grad()) gx = conv1d_input_grad(c.grad, w, stride, x.dim(1));
                    if (w.requires_grad()) gw = conv1d_weight_grad(x, c.grad, stride, w.dim(0));
                    return std::vector<Var>{gx, gw};
                  });
}

Var conv1d_input_grad(Var grad, Var kernel, std::size_t stride, std::size_t input_length) {
  Tape& t = same_tape(grad, kernel);
  const Shape in_shape{grad.dim(0), input_length, kernel.dim(1)};
  const ConvDims d = conv_dims(in_shape, kernel.shape(), stride);
  if (grad.shape() != Shape{d.batch, d.out_length, d.cout})
    throw ShapeError("conv1d_input_grad: gradient shape " + to_string(grad.shape()));
  return t.record("conv1d_input_grad", conv_input_grad_values(grad.value(), kernel.value(), d), {grad, kernel},
                  [stride](const BackwardContext& c) {
                    const Var g = c.inputs[0], w = c.inputs[1];
                    Var gg, gw;
                    if (g.requires_grad()) gg = conv1d(c.grad, w, stride);
                    if (w.requires_grad()) gw = conv1d_weight_grad(c.grad, g, stride, w.dim(0));
                    return std::vector<Var>{gg, gw};
                  });
}

Var conv1d_weight_grad(Var input, Var grad, std::size_t stride, std::size_t kernel_size) {
  Tape& t = same_tape(input, grad);
  const Shape k_shape{kernel_size, input.dim(2), grad.dim(2)};
  const ConvDims d = conv_dims(input.shape(), k_shape, stride);
  if (grad.shape() != Shape{d.batch, d.out_length, d.cout})
    throw ShapeError("conv1d_weight_grad: gradient shape " + to_string(grad.shape()));
  return t.record("conv1d_weight_grad", conv_weight_grad_values(input.value(), grad.value(), d), {input, grad},
                  [stride](const BackwardContext& c) {
                    const Var x = c.inputs[0], g = c.inputs[1];
                    Var gx, gg;
                    if (x.requires_grad()) gx = conv1d_input_grad(g, c.grad, stride, x.dim(1));
                    if (g.requires_grad()) gg = conv1d(x, c.grad, stride);
                    return std::vector<Var>{gx, gg};
                  });
}

Var avg_pool1d(Var input, std::size_t k) {
  if (k == 0) throw ParameterError("avg_pool1d window must be >= 1");
  if (input.rank() != 3) throw ShapeError("avg_pool1d input must be [B, D, C]");
  if (k == 1) return input;
  const std::size_t B = input.dim(0), D = input.dim(1), C = input.dim(2);
  const std::size_t L = (D + k - 1) / k;
  Tensor out(Shape{B, L, C});
  const Tensor& x = input.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < L; ++j) {
      const std::size_t lo = j * k, hi = std::min(D, lo + k);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t c = 0; c < C; ++c) out(b, j, c) += x(b, i, c);
      for (std::size_t c = 0; c < C; ++c) out(b, j, c) *= inv;
    }
  return input.tape().record("avg_pool1d", std::move(out), {input}, [k, D](const BackwardContext& c) {
    return std::vector<Var>{avg_pool1d_adjoint(c.grad, k, D)};
  });
}

Var avg_pool1d_adjoint(Var grad, std::size_t k, std::size_t D) {
  if (k == 0) throw ParameterError("avg_pool1d window must be >= 1");
  const std::size_t B = grad.dim(0), L = grad.dim(1), C = grad.dim(2);
  if (L != (D + k - 1) / k) throw ShapeError("avg_pool1d_adjoint: length mismatch");
  Tensor out(Shape{B, D, C});
  const Tensor& g = grad.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < D; ++i) {
      const std::size_t j = i / k;
      const std::size_t lo = j * k, hi = std::min(D, lo + k);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t c = 0; c < C; ++c) out(b, i, c) = g(b, j, c) * inv;
    }
  return grad.tape().record("avg_pool1d_adjoint", std::move(out), {grad}, [k](const BackwardContext& c) {
    return std::vector<Var>{avg_pool1d(c.grad, k)};
  });
}

}  // namespace ad
}  // namespace specmix
