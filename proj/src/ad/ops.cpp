#include "uniclin/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "kernels.hpp"
#include "uniclin/error.hpp"

namespace uniclin::ad {
namespace {

using Id = std::uint32_t;

void same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) {
    fail(ErrorKind::kUsage, std::string(op) + ": vars on different tapes");
  }
}

void same_shape(Var a, Var b, const char* op) {
  same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

std::size_t last_dim(Var x, const char* op) {
  if (x.rank() == 0) fail(ErrorKind::kShape, std::string(op) + ": scalar input");
  return x.shape().back();
}

// Elementwise map; `df(x, y)` is dy/dx given input and output.
template <typename F, typename D>
Var unary(Var x, F f, D df) {
  auto xv = x.value();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const Id xi = x.id();
  return x.tape().record(x.shape(), std::move(out), {x}, [xi, df](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.grad(self);
    auto xv = t.value(xi);
    auto yv = t.value(self);
    auto gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

void accumulate(Tape& t, Id target, std::span<const float> g, float sign = 1.0f) {
  if (!t.requires_grad(target)) return;
  auto gt = t.grad(target);
  for (std::size_t i = 0; i < g.size(); ++i) gt[i] += sign * g[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::kShape, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, p, n);
  const Id ai = a.id(), bi = b.id();
  return a.tape().record({m, n}, std::move(out), {a, b}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    if (t.requires_grad(ai)) {
      kernels::gemm_nt(g.data(), t.value(bi).data(), t.grad(ai).data(), m, n, p);
    }
    if (t.requires_grad(bi)) {
      kernels::gemm_tn(t.value(ai).data(), g.data(), t.grad(bi).data(), m, p, n);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b, "matmul_nt");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    fail(ErrorKind::kShape,
         "matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(0);
  std::vector<float> out(m * n, 0.0f);
  kernels::gemm_nt(a.value().data(), b.value().data(), out.data(), m, p, n);
  const Id ai = a.id(), bi = b.id();
  return a.tape().record({m, n}, std::move(out), {a, b}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    if (t.requires_grad(ai)) {
      kernels::gemm_nn(g.data(), t.value(bi).data(), t.grad(ai).data(), m, n, p);
    }
    if (t.requires_grad(bi)) {
      kernels::gemm_tn(g.data(), t.value(ai).data(), t.grad(bi).data(), m, n, p);
    }
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  auto av = a.value(), bv = b.value();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const Id ai = a.id(), bi = b.id();
  return a.tape().record(a.shape(), std::move(out), {a, b}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  auto av = a.value(), bv = b.value();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const Id ai = a.id(), bi = b.id();
  return a.tape().record(a.shape(), std::move(out), {a, b}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g, -1.0f);
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  auto av = a.value(), bv = b.value();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Id ai = a.id(), bi = b.id();
  return a.tape().record(a.shape(), std::move(out), {a, b}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto ga = t.grad(ai);
      auto bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto gb = t.grad(bi);
      auto av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var x, Var row) {
  same_tape(x, row, "add_row");
  const std::size_t n = last_dim(x, "add_row");
  if (row.numel() != n) {
    fail(ErrorKind::kShape, "add_row: row " + shape_str(row.shape()) + " vs " + shape_str(x.shape()));
  }
  auto xv = x.value(), rv = row.value();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + rv[i % n];
  const Id xi = x.id(), ri = row.id();
  return x.tape().record(x.shape(), std::move(out), {x, row}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    accumulate(t, xi, g);
    if (t.requires_grad(ri)) {
      auto gr = t.grad(ri);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % n] += g[i];
    }
  });
}

Var mul_row(Var x, Var row) {
  same_tape(x, row, "mul_row");
  const std::size_t n = last_dim(x, "mul_row");
  if (row.numel() != n) {
    fail(ErrorKind::kShape, "mul_row: row " + shape_str(row.shape()) + " vs " + shape_str(x.shape()));
  }
  auto xv = x.value(), rv = row.value();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * rv[i % n];
  const Id xi = x.id(), ri = row.id();
  return x.tape().record(x.shape(), std::move(out), {x, row}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    if (t.requires_grad(xi)) {
      auto gx = t.grad(xi);
      auto rv = t.value(ri);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * rv[i % n];
    }
    if (t.requires_grad(ri)) {
      auto gr = t.grad(ri);
      auto xv = t.value(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % n] += g[i] * xv[i];
    }
  });
}

Var add_mid_broadcast(Var x, Var y) {
  same_tape(x, y, "add_mid_broadcast");
  if (x.rank() != 3 || y.rank() != 2 || y.dim(0) != x.dim(0) || y.dim(1) != x.dim(2)) {
    fail(ErrorKind::kShape,
         "add_mid_broadcast: " + shape_str(x.shape()) + " + " + shape_str(y.shape()));
  }
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  auto xv = x.value(), yv = y.value();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t l = 0; l < c; ++l)
        out[(i * b + j) * c + l] = xv[(i * b + j) * c + l] + yv[i * c + l];
  const Id xi = x.id(), yi = y.id();
  return x.tape().record(x.shape(), std::move(out), {x, y}, [=](Tape& t, Id self) {
    auto g = t.grad(self);
    accumulate(t, xi, g);
    if (t.requires_grad(yi)) {
      auto gy = t.grad(yi);
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
          for (std::size_t l = 0; l < c; ++l) gy[i * c + l] += g[(i * b + j) * c + l];
    }
  });
}

Var repeat_mid(Var y, std::size_t b) {
  if (y.rank() != 2) fail(ErrorKind::kShape, "repeat_mid: need rank 2, got " + shape_str(y.shape()));
  const std::size_t a = y.dim(0), c = y.dim(1);
  auto yv = y.value();
  std::vector<float> out(a * b * c);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(yv.data() + i * c, c, out.data() + (i * b + j) * c);
  const Id yi = y.id();
  return y.tape().record({a, b, c}, std::move(out), {y}, [=](Tape& t, Id self) {
    if (!t.requires_grad(yi)) return;
    auto g = t.grad(self);
    auto gy = t.grad(yi);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t l = 0; l < c; ++l) gy[i * c + l] += g[(i * b + j) * c + l];
  });
}

Var scale(Var x, float s) {
  return unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Var add_scalar(Var x, float s) {
  return unary(x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Var relu(Var x) {
  return unary(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var gelu(Var x) {
  constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
  return unary(
      x,
      [](float v) { return 0.5f * v * (1.0f + std::tanh(c * (v + 0.044715f * v * v * v))); },
      [](float v, float) {
        const float u = c * (v + 0.044715f * v * v * v);
        const float th = std::tanh(u);
        const float du = c * (1.0f + 3.0f * 0.044715f * v * v);
        return 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du;
      });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Var tanh(Var x) {
  return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Var exp(Var x) {
  return unary(x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Var sum(Var x) {
  double acc = 0.0;
  for (float v : x.value()) acc += v;
  const Id xi = x.id();
  return x.tape().record({1}, {static_cast<float>(acc)}, {x}, [=](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    const float g = t.grad(self)[0];
    for (float& v : t.grad(xi)) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.numel();
  if (n == 0) fail(ErrorKind::kShape, "mean: empty input");
  return scale(sum(x), 1.0f / static_cast<float>(n));
}

Var layernorm(Var x, Var gamma, Var beta, float eps) {
  same_tape(x, gamma, "layernorm");
  same_tape(x, beta, "layernorm");
  const std::size_t d = last_dim(x, "layernorm");
  if (gamma.numel() != d || beta.numel() != d) {
    fail(ErrorKind::kShape, "layernorm: affine params must have " + std::to_string(d) + " entries");
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.value(), gv = gamma.value(), bv = beta.value();
  std::vector<float> out(xv.size());
  std::vector<float> xhat(xv.size());
  std::vector<float> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const float h = static_cast<float>(xr[i] - mu) * rs;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  const Id xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, Id self) {
        auto g = t.grad(self);
        auto gv = t.value(gi);
        if (t.requires_grad(gi)) {
          auto gg = t.grad(gi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
        }
        if (t.requires_grad(bi)) {
          auto gb = t.grad(bi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
        }
        if (t.requires_grad(xi)) {
          auto gx = t.grad(xi);
          for (std::size_t r = 0; r < rows; ++r) {
            float m1 = 0.0f, m2 = 0.0f;
            for (std::size_t i = 0; i < d; ++i) {
              const float dh = g[r * d + i] * gv[i];
              m1 += dh;
              m2 += dh * xhat[r * d + i];
            }
            m1 /= static_cast<float>(d);
            m2 /= static_cast<float>(d);
            for (std::size_t i = 0; i < d; ++i) {
              const float dh = g[r * d + i] * gv[i];
              gx[r * d + i] += rstd[r] * (dh - m1 - xhat[r * d + i] * m2);
            }
          }
        }
      });
}

Var softmax_rows(Var x) {
  const std::size_t n = last_dim(x, "softmax_rows");
  const std::size_t rows = x.numel() / n;
  auto xv = x.value();
  std::vector<float> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(xr[i])) fail(ErrorKind::kNumeric, "softmax_rows: NaN input");
      mx = std::max(mx, xr[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float e = std::exp(xr[i] - mx);
      out[r * n + i] = e;
      z += e;
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] *= inv;
  }
  const Id xi = x.id();
  return x.tape().record(x.shape(), std::move(out), {x}, [=](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.grad(self);
    auto y = t.value(self);
    auto gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const float s = kernels::dot(g.data() + r * n, y.data() + r * n, n);
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[r * n + i] * (g[r * n + i] - s);
    }
  });
}

Var attention(Var q, Var k, Var v, bool causal) {
  same_tape(q, k, "attention");
  same_tape(q, v, "attention");
  if (q.rank() != 3 || k.rank() != 3 || v.shape() != k.shape() || q.dim(1) != k.dim(1) ||
      q.dim(2) != k.dim(2)) {
    fail(ErrorKind::kShape, "attention: q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                                " v" + shape_str(v.shape()));
  }
  const std::size_t tq = q.dim(0), tk = k.dim(0), h = q.dim(1), dh = q.dim(2);
  if (tq == 0 || tk == 0) fail(ErrorKind::kShape, "attention: empty sequence");
  if (causal && tk < tq) fail(ErrorKind::kShape, "attention: causal needs Tk >= Tq");
  const std::size_t offset = causal ? tk - tq : 0;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  auto qv = q.value(), kv = k.value(), vv = v.value();
  std::vector<float> probs(h * tq * tk, 0.0f);
  std::vector<float> out(tq * h * dh, 0.0f);
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < tq; ++i) {
      const std::size_t limit = causal ? i + offset + 1 : tk;
      float* p = probs.data() + (hh * tq + i) * tk;
      const float* qi = qv.data() + (i * h + hh) * dh;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        p[j] = kernels::dot(qi, kv.data() + (j * h + hh) * dh, dh) * sc;
        mx = std::max(mx, p[j]);
      }
      float z = 0.0f;
      for (std::size_t j = 0; j < limit; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      const float inv = 1.0f / z;
      float* oi = out.data() + (i * h + hh) * dh;
      for (std::size_t j = 0; j < limit; ++j) {
        p[j] *= inv;
        kernels::axpy(p[j], vv.data() + (j * h + hh) * dh, oi, dh);
      }
    }
  }
  const Id qi_ = q.id(), ki = k.id(), vi = v.id();
  return q.tape().record(
      q.shape(), std::move(out), {q, k, v},
      [=, probs = std::move(probs)](Tape& t, Id self) {
        auto g = t.grad(self);
        auto qv = t.value(qi_), kv = t.value(ki), vv = t.value(vi);
        const bool need_q = t.requires_grad(qi_);
        const bool need_k = t.requires_grad(ki);
        const bool need_v = t.requires_grad(vi);
        float* gq = need_q ? t.grad(qi_).data() : nullptr;
        float* gk = need_k ? t.grad(ki).data() : nullptr;
        float* gv = need_v ? t.grad(vi).data() : nullptr;
        std::vector<float> ds(tk);
        for (std::size_t hh = 0; hh < h; ++hh) {
          for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = causal ? i + offset + 1 : tk;
            const float* p = probs.data() + (hh * tq + i) * tk;
            const float* gi = g.data() + (i * h + hh) * dh;
            float s = 0.0f;
            for (std::size_t j = 0; j < limit; ++j) {
              ds[j] = kernels::dot(gi, vv.data() + (j * h + hh) * dh, dh);
              s += p[j] * ds[j];
              if (need_v) kernels::axpy(p[j], gi, gv + (j * h + hh) * dh, dh);
            }
            for (std::size_t j = 0; j < limit; ++j) {
              const float d = p[j] * (ds[j] - s) * sc;
              if (d == 0.0f) continue;
              if (need_q) kernels::axpy(d, kv.data() + (j * h + hh) * dh, gq + (i * h + hh) * dh, dh);
              if (need_k) kernels::axpy(d, qv.data() + (i * h + hh) * dh, gk + (j * h + hh) * dh, dh);
            }
          }
        }
      });
}

Var cross_entropy_at(Var logits, std::span<const Target> targets) {
  if (targets.empty()) fail(ErrorKind::kUsage, "cross_entropy_at: no targets");
  if (logits.rank() != 2) fail(ErrorKind::kShape, "cross_entropy_at: logits must be [T x V]");
  const std::size_t tlen = logits.dim(0), vocab = logits.dim(1);
  auto lv = logits.value();
  std::vector<Target> tg(targets.begin(), targets.end());
  std::vector<float> probs(tg.size() * vocab);
  double loss = 0.0;
  for (std::size_t n = 0; n < tg.size(); ++n) {
    if (tg[n].position >= tlen || tg[n].token >= vocab) {
      fail(ErrorKind::kShape, "cross_entropy_at: target out of range");
    }
    const float* row = lv.data() + tg[n].position * vocab;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < vocab; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) z += std::exp(static_cast<double>(row[i] - mx));
    const double logz = std::log(z) + mx;
    loss += logz - row[tg[n].token];
    for (std::size_t i = 0; i < vocab; ++i) {
      probs[n * vocab + i] = static_cast<float>(std::exp(row[i] - logz));
    }
  }
  loss /= static_cast<double>(tg.size());
  const Id li = logits.id();
  return logits.tape().record(
      {1}, {static_cast<float>(loss)}, {logits},
      [=, tg = std::move(tg), probs = std::move(probs)](Tape& t, Id self) {
        if (!t.requires_grad(li)) return;
        const float g = t.grad(self)[0] / static_cast<float>(tg.size());
        auto gl = t.grad(li);
        for (std::size_t n = 0; n < tg.size(); ++n) {
          float* row = gl.data() + tg[n].position * vocab;
          for (std::size_t i = 0; i < vocab; ++i) row[i] += g * probs[n * vocab + i];
          row[tg[n].token] -= g;
        }
      });
}

Var bce_with_logits(Var logits, std::span<const float> targets) {
  if (logits.numel() != targets.size() || targets.empty()) {
    fail(ErrorKind::kShape, "bce_with_logits: " + std::to_string(logits.numel()) + " logits vs " +
                                std::to_string(targets.size()) + " targets");
  }
  auto xv = logits.value();
  std::vector<float> y(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x = xv[i];
    loss += std::max(x, 0.0) - x * y[i] + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(y.size());
  const Id li = logits.id();
  return logits.tape().record({1}, {static_cast<float>(loss)}, {logits},
                              [=, y = std::move(y)](Tape& t, Id self) {
                                if (!t.requires_grad(li)) return;
                                const float g = t.grad(self)[0] / static_cast<float>(y.size());
                                auto xv = t.value(li);
                                auto gl = t.grad(li);
                                for (std::size_t i = 0; i < y.size(); ++i) {
                                  const float s = 1.0f / (1.0f + std::exp(-xv[i]));
                                  gl[i] += g * (s - y[i]);
                                }
                              });
}

Var embedding(Var table, std::span<const int> ids) {
  if (table.rank() != 2) fail(ErrorKind::kShape, "embedding: table must be [V x D]");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto tv = table.value();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<float> out(idx.size() * d);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    if (idx[n] < 0 || static_cast<std::size_t>(idx[n]) >= vocab) {
      fail(ErrorKind::kShape, "embedding: id " + std::to_string(idx[n]) + " out of range");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[n]) * d, d, out.data() + n * d);
  }
  const Id ti = table.id();
  const std::size_t count = idx.size();
  return table.tape().record({count, d}, std::move(out), {table},
                             [=, idx = std::move(idx)](Tape& t, Id self) {
                               if (!t.requires_grad(ti)) return;
                               auto g = t.grad(self);
                               auto gt = t.grad(ti);
                               for (std::size_t n = 0; n < idx.size(); ++n) {
                                 kernels::axpy(1.0f, g.data() + n * d,
                                               gt.data() + static_cast<std::size_t>(idx[n]) * d, d);
                               }
                             });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::kUsage, "concat_rows: nothing to concatenate");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat_rows");
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != trailing) {
      fail(ErrorKind::kShape, "concat_rows: trailing dims differ");
    }
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(rows * numel(trailing));
  std::vector<Id> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(out.size());
    ids.push_back(p.id());
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  Shape shape = trailing;
  shape.insert(shape.begin(), rows);
  return parts[0].tape().record(
      std::move(shape), std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, Id self) {
        auto g = t.grad(self);
        for (std::size_t n = 0; n < ids.size(); ++n) {
          if (!t.requires_grad(ids[n])) continue;
          auto gp = t.grad(ids[n]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[n] + i];
        }
      });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  if (x.rank() == 0 || start + count > x.dim(0)) {
    fail(ErrorKind::kShape, "slice_rows: [" + std::to_string(start) + ", +" +
                                std::to_string(count) + ") of " + shape_str(x.shape()));
  }
  const std::size_t inner = x.numel() / x.dim(0);
  auto xv = x.value();
  std::vector<float> out(xv.begin() + start * inner, xv.begin() + (start + count) * inner);
  Shape shape = x.shape();
  shape[0] = count;
  const Id xi = x.id();
  return x.tape().record(std::move(shape), std::move(out), {x}, [=](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.grad(self);
    auto gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[start * inner + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const std::size_t n = last_dim(x, "slice_cols");
  if (start + count > n) {
    fail(ErrorKind::kShape, "slice_cols: [" + std::to_string(start) + ", +" +
                                std::to_string(count) + ") of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.value();
  std::vector<float> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * n + start, count, out.data() + r * count);
  Shape shape = x.shape();
  shape.back() = count;
  const Id xi = x.id();
  return x.tape().record(std::move(shape), std::move(out), {x}, [=](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.grad(self);
    auto gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < count; ++i) gx[r * n + start + i] += g[r * count + i];
  });
}

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail(ErrorKind::kShape, "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xv = x.value();
  const Id xi = x.id();
  return x.tape().record(std::move(shape), std::vector<float>(xv.begin(), xv.end()), {x},
                         [=](Tape& t, Id self) { accumulate(t, xi, t.grad(self)); });
}

Var pad_cols(Var x, std::size_t total_cols) {
  const std::size_t n = last_dim(x, "pad_cols");
  if (total_cols < n) {
    fail(ErrorKind::kShape, "pad_cols: cannot pad " + std::to_string(n) + " columns to " +
                                std::to_string(total_cols));
  }
  const std::size_t rows = x.numel() / n;
  auto xv = x.value();
  std::vector<float> out(rows * total_cols, 0.0f);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * n, n, out.data() + r * total_cols);
  Shape shape = x.shape();
  shape.back() = total_cols;
  const Id xi = x.id();
  return x.tape().record(std::move(shape), std::move(out), {x}, [=](Tape& t, Id self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.grad(self);
    auto gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[r * total_cols + i];
  });
}

}  // namespace uniclin::ad
