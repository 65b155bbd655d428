#pragma once

// Shared test helpers: random generators, naive loop oracles and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "specmix/autodiff.hpp"
#include "specmix/params.hpp"

namespace specmix::testing {

inline Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Rows of positive entries scaled to unit sum.
inline Tensor simplex_rows(std::size_t rows, std::size_t cols, Rng& rng, double lo = 0.05) {
  Tensor t = uniform(Shape{rows, cols}, rng, lo, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += t(r, c);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= s;
  }
  return t;
}

// ---- naive oracles

// out[b,o,co] = sum over k, then ci, of x[b, o*s + k - left, ci] * w[k, ci, co]
inline Tensor naive_conv1d(const Tensor& x, const Tensor& w, std::size_t stride) {
  const std::size_t B = x.dim(0), D = x.dim(1), Ci = x.dim(2), K = w.dim(0), Co = w.dim(2);
  const std::size_t out_len = (D + stride - 1) / stride;
  const long need = static_cast<long>((out_len - 1) * stride + K) - static_cast<long>(D);
  const long left = std::max(need, 0L) / 2;
  Tensor out(Shape{B, out_len, Co});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < out_len; ++o)
      for (std::size_t co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const long i = static_cast<long>(o * stride + k) - left;
          if (i < 0 || i >= static_cast<long>(D)) continue;
          for (std::size_t ci = 0; ci < Ci; ++ci) acc += x(b, static_cast<std::size_t>(i), ci) * w(k, ci, co);
        }
        out(b, o, co) = acc;
      }
  return out;
}

// gx[b,i,ci] = sum over k, then co, of g[b,o,co] * w[k,ci,co] where o*s + k - left = i
inline Tensor naive_conv1d_input_grad(const Tensor& g, const Tensor& w, std::size_t stride, std::size_t D) {
  const std::size_t B = g.dim(0), L = g.dim(1), K = w.dim(0), Ci = w.dim(1), Co = w.dim(2);
  const long need = static_cast<long>((L - 1) * stride + K) - static_cast<long>(D);
  const long left = std::max(need, 0L) / 2;
  Tensor out(Shape{B, D, Ci});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const long num = static_cast<long>(i) + left - static_cast<long>(k);
          if (num < 0 || num % static_cast<long>(stride) != 0) continue;
          const std::size_t o = static_cast<std::size_t>(num) / stride;
          if (o >= L) continue;
          for (std::size_t co = 0; co < Co; ++co) acc += g(b, o, co) * w(k, ci, co);
        }
        out(b, i, ci) = acc;
      }
  return out;
}

// gw[k,ci,co] = sum over b, then o, of x[b, o*s + k - left, ci] * g[b,o,co]
inline Tensor naive_conv1d_weight_grad(const Tensor& x, const Tensor& g, std::size_t stride, std::size_t K) {
  const std::size_t B = x.dim(0), D = x.dim(1), Ci = x.dim(2), L = g.dim(1), Co = g.dim(2);
  const long need = static_cast<long>((L - 1) * stride + K) - static_cast<long>(D);
  const long left = std::max(need, 0L) / 2;
  Tensor out(Shape{K, Ci, Co});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < L; ++o) {
            const long i = static_cast<long>(o * stride + k) - left;
            if (i < 0 || i >= static_cast<long>(D)) continue;
            acc += x(b, static_cast<std::size_t>(i), ci) * g(b, o, co);
          }
        out(k, ci, co) = acc;
      }
  return out;
}

inline Tensor naive_avg_pool(const Tensor& x, std::size_t k) {
  const std::size_t B = x.dim(0), D = x.dim(1), C = x.dim(2), L = (D + k - 1) / k;
  Tensor out(Shape{B, L, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < L; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t lo = j * k, hi = std::min(D, lo + k);
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += x(b, i, c);
        out(b, j, c) = acc * (1.0 / static_cast<double>(hi - lo));
      }
  return out;
}

// Scalar-loop evaluation of the mixture kernel; params w1 [K,N,M], b1 [K,N],
// w2 [K,N,M], b2 [K,N].
inline Tensor naive_mixture(const Tensor& z, const std::vector<Tensor>& p) {
  const Tensor &w1 = p[0], &b1 = p[1], &w2 = p[2], &b2 = p[3];
  const std::size_t B = z.dim(0), M = z.dim(1), K = w1.dim(0), N = w1.dim(1);
  Tensor out(Shape{B, K});
  for (std::size_t b = 0; b < B; ++b) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> logit(N), sim(N);
      for (std::size_t n = 0; n < N; ++n) {
        double a = b1(k, n), c = b2(k, n);
        for (std::size_t m = 0; m < M; ++m) {
          a += w1(k, n, m) * z(b, m);
          c += w2(k, n, m) * z(b, m);
        }
        sim[n] = 1.0 / (1.0 + std::exp(a));
        logit[n] = c;
      }
      const double mx = *std::max_element(logit.begin(), logit.end());
      double denom = 0.0;
      for (double v : logit) denom += std::exp(v - mx);
      double mixed = 0.0;
      for (std::size_t n = 0; n < N; ++n) mixed += std::exp(logit[n] - mx) / denom * sim[n];
      out(b, k) = mixed;
      total += mixed;
    }
    for (std::size_t k = 0; k < K; ++k) out(b, k) = total > 0.0 ? out(b, k) / total : 1.0 / static_cast<double>(K);
  }
  return out;
}

// ---- finite differences

// Builds a (possibly non-scalar) output from the inputs placed on a tape.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|) over all checked coordinates
  double abs_error = 0.0;
  std::size_t coords = 0;
  std::size_t kinks = 0;  // coordinates skipped as non-differentiable within +-h
};

// Compares backward() against central differences of <output, R> for a fixed
// random projection R. Norms are taken jointly over the checked coordinates
// of all inputs (at most `max_coords` per input, chosen at random). Gradients
// whose norms both fall under `floor`, or under the round-off level of the
// central difference, count as agreeing. A coordinate whose one-sided slopes differ by
// more than `kink_tolerance` of their size straddles a kink and is skipped.
inline GradCheckResult gradcheck(const Builder& build, const std::vector<Tensor>& inputs, Rng& rng,
                                 std::size_t max_coords = 48, double h = 1e-5, double floor = 1e-9,
                                 double kink_tolerance = 1e-3) {
  Tensor projection;
  auto value = [&](const std::vector<Tensor>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : in) vars.push_back(tape.leaf(t));
    const Tensor& out = build(tape, vars).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * projection[i];
    return s;
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var out = build(tape, vars);
  projection = uniform(out.shape(), rng, 0.5, 1.5);
  Var loss = ad::sum(ad::mul(out, tape.constant(projection)));
  GradientMap grads = backward(loss);

  const double center = value(inputs);
  GradCheckResult r;
  double diff = 0.0, na = 0.0, nn = 0.0, magnitude = std::abs(center);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = grads.tensor(vars[i]);
    std::vector<std::size_t> coords(inputs[i].size());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    std::shuffle(coords.begin(), coords.end(), rng);
    if (coords.size() > max_coords) coords.resize(max_coords);
    std::vector<Tensor> probe = inputs;
    for (std::size_t j : coords) {
      const double base = probe[i][j];
      probe[i][j] = base + h;
      const double up = value(probe);
      probe[i][j] = base - h;
      const double down = value(probe);
      probe[i][j] = base;
      const double right = (up - center) / h, left = (center - down) / h;
      const double noise = 100.0 * std::numeric_limits<double>::epsilon() *
                           std::max({std::abs(up), std::abs(down), std::abs(center)}) / h;
      if (std::abs(right - left) > kink_tolerance * std::max(std::abs(right), std::abs(left)) + noise) {
        ++r.kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[j] - numeric) * (analytic[j] - numeric);
      na += analytic[j] * analytic[j];
      nn += numeric * numeric;
      magnitude = std::max({magnitude, std::abs(up), std::abs(down)});
    }
    r.coords += coords.size();
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  const double roundoff = 100.0 * std::sqrt(static_cast<double>(r.coords)) *
                          std::numeric_limits<double>::epsilon() * magnitude / h;
  r.abs_error = std::sqrt(diff);
  if (scale > std::max(floor, roundoff)) r.rel_error = std::sqrt(diff) / scale;
  return r;
}

// Checks the gradient of the gradient: the builder's first derivative
// (projected on a fixed random vector, recorded with create_graph) is itself
// checked against finite differences.
inline GradCheckResult gradcheck_second(const Builder& build, const std::vector<Tensor>& inputs, Rng& rng,
                                        std::size_t max_coords = 32) {
  Tensor projection;
  {
    Tape probe;
    NoGradGuard guard(probe);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(probe.constant(t));
    projection = uniform(build(probe, vars).shape(), rng, 0.5, 1.5);
  }
  Builder direct = [&](Tape& tape, const std::vector<Var>& in) {
    Var out = build(tape, in);
    Var loss = ad::sum(ad::mul(out, tape.constant(projection)));
    BackwardOptions opts;
    opts.create_graph = true;
    GradientMap g = backward(loss, opts);
    std::vector<Var> parts;
    for (std::size_t i = 0; i < in.size(); ++i) parts.push_back(ad::reshape(g.var(in[i]), Shape{inputs[i].size()}));
    return parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
  };
  return gradcheck(direct, inputs, rng, max_coords, 1e-5);
}

}  // namespace specmix::testing
