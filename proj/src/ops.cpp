#include "petal/ops.hpp"

#include <algorithm>
#include <cmath>

#include "petal/errors.hpp"

namespace petal::ops {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

Var push1(Graph& g, Tensor value, Var a, Graph::BackwardFn fn) {
  const Var in[] = {a};
  return g.push(std::move(value), in, std::move(fn));
}

}  // namespace

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  require_rank2(xv, "linear");
  require_rank2(wv, "linear");
  const std::size_t n = xv.dim(0), din = xv.dim(1), dout = wv.dim(1);
  if (wv.dim(0) != din) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  }
  if (b.valid() && g.value(b).size() != dout) {
    throw DimensionError("linear: bias " + shape_str(g.value(b).shape()) + " does not match output width " +
                         std::to_string(dout));
  }
  std::vector<double> out(n * dout, 0.0);
  const auto xd = xv.data();
  const auto wd = wv.data();
  for (std::size_t r = 0; r < n; ++r) {
    double* o = &out[r * dout];
    for (std::size_t i = 0; i < din; ++i) {
      const double xi = xd[r * din + i];
      const double* wr = &wd[i * dout];
      for (std::size_t j = 0; j < dout; ++j) o[j] += xi * wr[j];
    }
    if (b.valid()) {
      const auto bd = g.value(b).data();
      for (std::size_t j = 0; j < dout; ++j) o[j] += bd[j];
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return g.push(Tensor({n, dout}, std::move(out)), inputs, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto xd = gr.value(x).data();
    const auto wd = gr.value(w).data();
    if (gr.requires_grad(x)) {
      auto dx = gr.grad_of(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < din; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dout; ++j) acc += dy[r * dout + j] * wd[i * dout + j];
          dx[r * din + i] += acc;
        }
    }
    if (gr.requires_grad(w)) {
      auto dw = gr.grad_of(w);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < din; ++i) {
          const double xi = xd[r * din + i];
          for (std::size_t j = 0; j < dout; ++j) dw[i * dout + j] += xi * dy[r * dout + j];
        }
    }
    if (b.valid() && gr.requires_grad(b)) {
      auto db = gr.grad_of(b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < dout; ++j) db[j] += dy[r * dout + j];
    }
  });
}

Var matmul(Graph& g, Var a, Var b) { return linear(g, a, b); }

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const Var in[] = {a, b};
  return g.push(Tensor(av.shape(), std::move(out)), in, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      auto d = gr.grad_of(v);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

Var scale(Graph& g, Var x, double s) {
  const Tensor& xv = g.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * xv[i];
  return push1(g, Tensor(xv.shape(), std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    auto d = gr.grad_of(x);
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] += s * dy[i];
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Var in[] = {a, b};
  return g.push(Tensor(av.shape(), std::move(out)), in, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto ad = gr.value(a).data();
    const auto bd = gr.value(b).data();
    if (gr.requires_grad(a)) {
      auto d = gr.grad_of(a);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * bd[i];
    }
    if (gr.requires_grad(b)) {
      auto d = gr.grad_of(b);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * ad[i];
    }
  });
}

Var relu(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return push1(g, Tensor(xv.shape(), std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto xd = gr.value(x).data();
    auto d = gr.grad_of(x);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xd[i] > 0.0) d[i] += dy[i];
  });
}

Var softmax(Graph& g, Var x, const Mask& mask) {
  const Tensor& xv = g.value(x);
  const std::size_t m = xv.cols(), rows = xv.rows();
  if (!mask.empty() && mask.size() != xv.size()) {
    throw DimensionError("softmax: mask has " + std::to_string(mask.size()) + " entries for tensor " +
                         shape_str(xv.shape()));
  }
  const bool masked = !mask.empty();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (!masked || mask[r * m + j]) mx = std::max(mx, xv[r * m + j]);
    if (mx == -INFINITY) throw InvalidMaskError("softmax: row " + std::to_string(r) + " is fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (masked && !mask[r * m + j]) continue;
      out[r * m + j] = std::exp(xv[r * m + j] - mx);
      z += out[r * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  return push1(g, Tensor(xv.shape(), std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor& y) {
    auto d = gr.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[r * m + j] * dy[r * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        if (masked && !mask[r * m + j]) continue;
        d[r * m + j] += y[r * m + j] * (dy[r * m + j] - dot);
      }
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = g.value(x);
  const std::size_t d = xv.cols(), rows = xv.rows();
  if (d == 0) throw DimensionError("layer_norm: feature dimension is zero");
  if (g.value(gamma).size() != d || g.value(beta).size() != d) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const auto gm = g.value(gamma).data();
  const auto bt = g.value(beta).data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[r * d + j] - mu) * (xv[r * d + j] - mu);
    var /= static_cast<double>(d);
    // Zero variance with eps == 0 standardizes to zero rather than NaN.
    rstd[r] = var + eps > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xv[r * d + j] - mu) * rstd[r];
      out[r * d + j] = gm[j] * xhat[r * d + j] + bt[j];
    }
  }
  const Var in[] = {x, gamma, beta};
  return g.push(Tensor(xv.shape(), std::move(out)), in,
                [=, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& gr, std::span<const double> dy,
                                                                     const Tensor&) {
                  const auto gm = gr.value(gamma).data();
                  if (gr.requires_grad(gamma) || gr.requires_grad(beta)) {
                    auto dg = gr.grad_of(gamma);
                    auto db = gr.grad_of(beta);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) {
                        dg[j] += dy[r * d + j] * xhat[r * d + j];
                        db[j] += dy[r * d + j];
                      }
                  }
                  if (!gr.requires_grad(x)) return;
                  auto dx = gr.grad_of(x);
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxh = dy[r * d + j] * gm[j];
                      mean_dxh += dxh;
                      mean_dxh_xh += dxh * xhat[r * d + j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxh = dy[r * d + j] * gm[j];
                      dx[r * d + j] += rstd[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                    }
                  }
                });
}

std::size_t conv_out_len(std::size_t T, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw DimensionError("conv1d: stride must be >= 1");
  if (T == 0) throw DimensionError("conv1d: sequence length must be >= 1");
  if (padding == Padding::Same) return (T + stride - 1) / stride;
  if (T < k) throw DimensionError("conv1d: valid padding needs T >= kernel size");
  return (T - k) / stride + 1;
}

Var conv1d(Graph& g, Var x, Var w, Var b, std::size_t stride, Padding padding) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  require_rank2(xv, "conv1d");
  if (wv.rank() != 3) throw DimensionError("conv1d: weight must be [k x Din x Dout], got " + shape_str(wv.shape()));
  const std::size_t T = xv.dim(0), din = xv.dim(1), k = wv.dim(0), dout = wv.dim(2);
  if (wv.dim(1) != din) {
    throw DimensionError("conv1d: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  }
  if (padding == Padding::Same && k % 2 == 0) throw DimensionError("conv1d: same padding needs an odd kernel");
  if (b.valid() && g.value(b).size() != dout) throw DimensionError("conv1d: bias size mismatch");
  const std::size_t tout = conv_out_len(T, k, stride, padding);
  std::ptrdiff_t left = 0;
  if (padding == Padding::Same) {
    const std::ptrdiff_t total =
        std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((tout - 1) * stride + k) - static_cast<std::ptrdiff_t>(T), 0);
    left = (total + 1) / 2;
  }
  const auto xd = xv.data();
  const auto wd = wv.data();
  std::vector<double> out(tout * dout, 0.0);
  for (std::size_t t = 0; t < tout; ++t) {
    double* o = &out[t * dout];
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - left;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t i = 0; i < din; ++i) {
        const double xi = xd[static_cast<std::size_t>(src) * din + i];
        const double* wr = &wd[(j * din + i) * dout];
        for (std::size_t c = 0; c < dout; ++c) o[c] += xi * wr[c];
      }
    }
    if (b.valid()) {
      const auto bd = g.value(b).data();
      for (std::size_t c = 0; c < dout; ++c) o[c] += bd[c];
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return g.push(Tensor({tout, dout}, std::move(out)), inputs, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto xd = gr.value(x).data();
    const auto wd = gr.value(w).data();
    const bool gx = gr.requires_grad(x), gw = gr.requires_grad(w);
    std::span<double> dx, dw;
    if (gx) dx = gr.grad_of(x);
    if (gw) dw = gr.grad_of(w);
    for (std::size_t t = 0; t < tout; ++t) {
      const double* dyr = &dy[t * dout];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - left;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t i = 0; i < din; ++i) {
          const std::size_t wo = (j * din + i) * dout;
          if (gx) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dout; ++c) acc += dyr[c] * wd[wo + c];
            dx[s * din + i] += acc;
          }
          if (gw) {
            const double xi = xd[s * din + i];
            for (std::size_t c = 0; c < dout; ++c) dw[wo + c] += xi * dyr[c];
          }
        }
      }
    }
    if (b.valid() && gr.requires_grad(b)) {
      auto db = gr.grad_of(b);
      for (std::size_t t = 0; t < tout; ++t)
        for (std::size_t c = 0; c < dout; ++c) db[c] += dy[t * dout + c];
    }
  });
}

Var depthwise_conv1d(Graph& g, Var x, Var w, Var b, std::size_t stride) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  require_rank2(xv, "depthwise_conv1d");
  require_rank2(wv, "depthwise_conv1d");
  const std::size_t T = xv.dim(0), d = xv.dim(1), k = wv.dim(0);
  if (wv.dim(1) != d) throw DimensionError("depthwise_conv1d: weight channels do not match input");
  if (b.valid() && g.value(b).size() != d) throw DimensionError("depthwise_conv1d: bias size mismatch");
  const std::size_t tout = conv_out_len(T, k, stride, Padding::Same);
  std::vector<double> out(tout * d, 0.0);
  for (std::size_t t = 0; t < tout; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = t * stride + j;
      if (src >= T) break;
      for (std::size_t c = 0; c < d; ++c) out[t * d + c] += xv[src * d + c] * wv[j * d + c];
    }
    if (b.valid()) {
      const auto bd = g.value(b).data();
      for (std::size_t c = 0; c < d; ++c) out[t * d + c] += bd[c];
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return g.push(Tensor({tout, d}, std::move(out)), inputs, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    const auto xd = gr.value(x).data();
    const auto wd = gr.value(w).data();
    const bool gx = gr.requires_grad(x), gw = gr.requires_grad(w);
    std::span<double> dx, dw;
    if (gx) dx = gr.grad_of(x);
    if (gw) dw = gr.grad_of(w);
    for (std::size_t t = 0; t < tout; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = t * stride + j;
        if (src >= T) break;
        for (std::size_t c = 0; c < d; ++c) {
          if (gx) dx[src * d + c] += dy[t * d + c] * wd[j * d + c];
          if (gw) dw[j * d + c] += dy[t * d + c] * xd[src * d + c];
        }
      }
    if (b.valid() && gr.requires_grad(b)) {
      auto db = gr.grad_of(b);
      for (std::size_t t = 0; t < tout; ++t)
        for (std::size_t c = 0; c < d; ++c) db[c] += dy[t * d + c];
    }
  });
}

Var attention(Graph& g, Var q, Var k, Var v, const Mask& allowed, const Mask& row_valid, std::size_t num_heads,
              std::vector<Tensor>* weights_out) {
  const Tensor& qv = g.value(q);
  const Tensor& kv = g.value(k);
  const Tensor& vv = g.value(v);
  require_rank2(qv, "attention");
  if (kv.shape() != qv.shape() || vv.shape() != qv.shape()) throw DimensionError("attention: Q, K, V shapes differ");
  const std::size_t n = qv.dim(0), d = qv.dim(1);
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(num_heads) +
                         " heads");
  }
  if (allowed.size() != n * n) throw DimensionError("attention: mask must be N x N");
  if (row_valid.size() != n) throw DimensionError("attention: row mask must have N entries");
  const std::size_t dh = d / num_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // weights[h][i*n + j]
  std::vector<std::vector<double>> weights(num_heads, std::vector<double>(n * n, 0.0));
  std::vector<double> out(n * d, 0.0);
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t off = h * dh;
    auto& a = weights[h];
    for (std::size_t i = 0; i < n; ++i) {
      if (!row_valid[i]) continue;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed[i * n + j]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        scores[j] = s * sc;
        mx = std::max(mx, scores[j]);
      }
      if (mx == -INFINITY) throw InvalidMaskError("attention: query " + std::to_string(i) + " has no allowed key");
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed[i * n + j]) continue;
        a[i * n + j] = std::exp(scores[j] - mx);
        z += a[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed[i * n + j]) continue;
        a[i * n + j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += a[i * n + j] * vv[j * d + off + c];
      }
    }
  }
  if (weights_out != nullptr) {
    weights_out->clear();
    for (const auto& a : weights) weights_out->emplace_back(Shape{n, n}, a);
  }
  const Var in[] = {q, k, v};
  return g.push(Tensor({n, d}, std::move(out)), in,
                [=, weights = std::move(weights)](Graph& gr, std::span<const double> dy, const Tensor&) {
                  const auto qd = gr.value(q).data();
                  const auto kd = gr.value(k).data();
                  const auto vd = gr.value(v).data();
                  const bool gq = gr.requires_grad(q), gk = gr.requires_grad(k), gv = gr.requires_grad(v);
                  std::span<double> dq, dk, dv;
                  if (gq) dq = gr.grad_of(q);
                  if (gk) dk = gr.grad_of(k);
                  if (gv) dv = gr.grad_of(v);
                  std::vector<double> da(n);
                  for (std::size_t h = 0; h < num_heads; ++h) {
                    const std::size_t off = h * dh;
                    const auto& a = weights[h];
                    for (std::size_t i = 0; i < n; ++i) {
                      if (!row_valid[i]) continue;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        if (!allowed[i * n + j]) continue;
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) s += dy[i * d + off + c] * vd[j * d + off + c];
                        da[j] = s;
                        dot += a[i * n + j] * s;
                        if (gv)
                          for (std::size_t c = 0; c < dh; ++c) dv[j * d + off + c] += a[i * n + j] * dy[i * d + off + c];
                      }
                      for (std::size_t j = 0; j < n; ++j) {
                        if (!allowed[i * n + j]) continue;
                        const double ds = a[i * n + j] * (da[j] - dot) * sc;
                        for (std::size_t c = 0; c < dh; ++c) {
                          if (gq) dq[i * d + off + c] += ds * kd[j * d + off + c];
                          if (gk) dk[j * d + off + c] += ds * qd[i * d + off + c];
                        }
                      }
                    }
                  }
                });
}

Var mask_rows(Graph& g, Var x, const Mask& keep) {
  const Tensor& xv = g.value(x);
  const std::size_t rows = xv.rows(), c = xv.cols();
  if (keep.size() != rows) throw DimensionError("mask_rows: mask length does not match row count");
  std::vector<double> out(xv.values());
  for (std::size_t r = 0; r < rows; ++r)
    if (!keep[r]) std::fill(out.begin() + static_cast<std::ptrdiff_t>(r * c), out.begin() + static_cast<std::ptrdiff_t>((r + 1) * c), 0.0);
  return push1(g, Tensor(xv.shape(), std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    auto d = gr.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!keep[r]) continue;
      for (std::size_t j = 0; j < c; ++j) d[r * c + j] += dy[r * c + j];
    }
  });
}

Var select_row(Graph& g, Var x, std::size_t r) {
  const Tensor& xv = g.value(x);
  if (r >= xv.rows()) throw DimensionError("select_row: row index out of range");
  const std::size_t c = xv.cols();
  auto row = xv.row(r);
  return push1(g, Tensor({c}, std::vector<double>(row.begin(), row.end())), x,
               [=](Graph& gr, std::span<const double> dy, const Tensor&) {
                 auto d = gr.grad_of(x);
                 for (std::size_t j = 0; j < c; ++j) d[r * c + j] += dy[j];
               });
}

Var stack_rows(Graph& g, const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t c = g.value(rows.front()).size();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (Var r : rows) {
    const Tensor& rv = g.value(r);
    if (rv.size() != c) throw DimensionError("stack_rows: rows differ in width");
    out.insert(out.end(), rv.data().begin(), rv.data().end());
  }
  return g.push(Tensor({rows.size(), c}, std::move(out)), rows, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!gr.requires_grad(rows[i])) continue;
      auto d = gr.grad_of(rows[i]);
      for (std::size_t j = 0; j < c; ++j) d[j] += dy[i * c + j];
    }
  });
}

Var mean_rows(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  const std::size_t rows = xv.rows(), c = xv.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[r * c + j];
  for (auto& o : out) o /= static_cast<double>(rows);
  return push1(g, Tensor({c}, std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    auto d = gr.grad_of(x);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) d[r * c + j] += dy[j] * inv;
  });
}

Var sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return push1(g, Tensor({}, {s}), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    auto d = gr.grad_of(x);
    for (auto& e : d) e += dy[0];
  });
}

Var combine_rows(Graph& g, Var x, const std::vector<RowTaps>& taps) {
  const Tensor& xv = g.value(x);
  const std::size_t rows = xv.rows(), c = xv.cols();
  if (taps.empty()) throw DimensionError("combine_rows: no output rows");
  std::vector<double> out(taps.size() * c, 0.0);
  for (std::size_t r = 0; r < taps.size(); ++r)
    for (const auto& [src, wt] : taps[r]) {
      if (src >= rows) throw DimensionError("combine_rows: source row out of range");
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] += wt * xv[src * c + j];
    }
  return push1(g, Tensor({taps.size(), c}, std::move(out)), x, [=](Graph& gr, std::span<const double> dy, const Tensor&) {
    auto d = gr.grad_of(x);
    for (std::size_t r = 0; r < taps.size(); ++r)
      for (const auto& [src, wt] : taps[r])
        for (std::size_t j = 0; j < c; ++j) d[src * c + j] += wt * dy[r * c + j];
  });
}

}  // namespace petal::ops
