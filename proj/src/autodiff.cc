#include "dackgr/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dackgr::ad {
namespace {

void check(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

std::string shapes(const Var& a, const Var& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

// out[n x m] += a[n x k] * b[k x m]. Each output row depends only on the
// matching row of `a`, and every element accumulates over k in order, so a
// row's result does not depend on how many other rows are in the batch.
void gemm_acc(const double* a, const double* b, double* out, std::size_t n,
              std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bp[j];
    }
  }
}

// out[k x m] += a[n x k]^T * b[n x m]
void gemm_tn_acc(const double* a, const double* b, double* out, std::size_t n,
                 std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      double* o = out + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bi[j];
    }
  }
}

std::vector<double> transpose(const double* x, std::size_t rows,
                              std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// Elementwise op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var elementwise(Var x, Fwd fwd, Deriv deriv) {
  Graph& g = x.graph();
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  const int xi = x.id();
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, deriv](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    const Tensor& xv = g.value(xi);
                    const Tensor& yv = g.value(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t i = 0; i < gy.size(); ++i)
                      gx[i] += gy[i] * deriv(xv[i], yv[i]);
                  });
}

double clip_logit(double v) {
  return std::clamp(v, -kLogitClip, kLogitClip);
}

bool valid_at(const Mask* mask, std::size_t i) {
  return mask == nullptr || (*mask)[i] != 0;
}

// Row-wise softmax probabilities used by both softmax and log_softmax.
// Also returns per-row log-normalizers.
void softmax_rows(const Tensor& logits, const Mask* mask, Tensor& probs,
                  std::vector<double>& log_norm) {
  const std::size_t n = logits.rows(), m = logits.cols();
  probs = Tensor(logits.shape());
  log_norm.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      if (valid_at(mask, r * m + c))
        mx = std::max(mx, clip_logit(logits.at(r, c)));
    }
    if (!std::isfinite(mx)) continue;  // no valid entry
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (!valid_at(mask, r * m + c)) continue;
      const double e = std::exp(clip_logit(logits.at(r, c)) - mx);
      probs.at(r, c) = e;
      s += e;
    }
    for (std::size_t c = 0; c < m; ++c) probs.at(r, c) /= s;
    log_norm[r] = mx + std::log(s);
  }
}

bool inside_clip(double v) { return v > -kLogitClip && v < kLogitClip; }

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::record(Tensor value, bool requires_grad,
                  std::function<void(Graph&, int)> backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Tensor value) {
  return record(std::move(value), false, nullptr);
}

Var Graph::parameter(Parameter& p) {
  Parameter* ptr = &p;
  return record(p.value, true, [ptr](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    if (ptr->grad.size() != gy.size()) ptr->grad = Tensor(ptr->value.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) ptr->grad[i] += gy[i];
  });
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  check(loss.value().size() == 1, "backward",
        "loss must be a scalar, got " + shape_string(loss.shape()));
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

Var lookup(Graph& g, Parameter& table, std::span<const int> ids) {
  const std::size_t d = table.value.cols();
  const auto rows = static_cast<int>(table.value.rows());
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < rows, "lookup",
          "id " + std::to_string(ids[i]) + " outside table '" + table.name +
              "' of " + std::to_string(rows) + " rows");
    std::copy_n(table.value.data() + ids[i] * d, d, out.data() + i * d);
  }
  Parameter* ptr = &table;
  std::vector<int> idx(ids.begin(), ids.end());
  return g.record(std::move(out), true,
                  [ptr, idx = std::move(idx), d](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    if (ptr->grad.size() != ptr->value.size())
                      ptr->grad = Tensor(ptr->value.shape());
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      double* dst = ptr->grad.data() + idx[i] * d;
                      const double* src = gy.data() + i * d;
                      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                  });
}

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  check(b.rows() == k, "matmul", shapes(a, b));
  Tensor out({n, m});
  gemm_acc(a.value().data(), b.value().data(), out.data(), n, k, m);
  const int ai = a.id(), bi = b.id();
  return g.record(std::move(out), g.requires_grad(ai) || g.requires_grad(bi),
                  [ai, bi, n, k, m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    if (g.requires_grad(ai)) {
                      auto bt = transpose(g.value(bi).data(), k, m);
                      gemm_acc(gy.data(), bt.data(), g.grad(ai).data(), n, m,
                               k);
                    }
                    if (g.requires_grad(bi)) {
                      gemm_tn_acc(g.value(ai).data(), gy.data(),
                                  g.grad(bi).data(), n, k, m);
                    }
                  });
}

Var matmul_transposed(Var a, Var b) {
  Graph& g = a.graph();
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  check(b.cols() == k, "matmul_transposed", shapes(a, b));
  Tensor out({n, m});
  auto bt = transpose(b.value().data(), m, k);
  gemm_acc(a.value().data(), bt.data(), out.data(), n, k, m);
  const int ai = a.id(), bi = b.id();
  return g.record(std::move(out), g.requires_grad(ai) || g.requires_grad(bi),
                  [ai, bi, n, k, m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    if (g.requires_grad(ai)) {
                      gemm_acc(gy.data(), g.value(bi).data(),
                               g.grad(ai).data(), n, m, k);
                    }
                    if (g.requires_grad(bi)) {
                      gemm_tn_acc(gy.data(), g.value(ai).data(),
                                  g.grad(bi).data(), n, m, k);
                    }
                  });
}

namespace {

template <typename Combine, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, Combine f, DA da, DB db) {
  Graph& g = a.graph();
  check(a.value().size() == b.value().size() && a.rows() == b.rows(), op,
        shapes(a, b));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  const int ai = a.id(), bi = b.id();
  return g.record(std::move(out), g.requires_grad(ai) || g.requires_grad(bi),
                  [ai, bi, da, db](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    const Tensor& av = g.value(ai);
                    const Tensor& bv = g.value(bi);
                    if (g.requires_grad(ai)) {
                      Tensor& ga = g.grad(ai);
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        ga[i] += gy[i] * da(av[i], bv[i]);
                    }
                    if (g.requires_grad(bi)) {
                      Tensor& gb = g.grad(bi);
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        gb[i] += gy[i] * db(av[i], bv[i]);
                    }
                  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(Var a, double s) {
  return elementwise(
      a, [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Var add_bias(Var x, Var bias) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), m = x.cols();
  check(bias.value().size() == m, "add_bias", shapes(x, bias));
  Tensor out = x.value();
  const double* bv = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    double* o = out.data() + r * m;
    for (std::size_t c = 0; c < m; ++c) o[c] += bv[c];
  }
  const int xi = x.id(), bi = bias.id();
  return g.record(std::move(out), g.requires_grad(xi) || g.requires_grad(bi),
                  [xi, bi, n, m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    if (g.requires_grad(xi)) {
                      Tensor& gx = g.grad(xi);
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        gx[i] += gy[i];
                    }
                    if (g.requires_grad(bi)) {
                      Tensor& gb = g.grad(bi);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < m; ++c)
                          gb[c] += gy[r * m + c];
                    }
                  });
}

Var concat(std::span<const Var> parts) {
  check(!parts.empty(), "concat", "no inputs");
  Graph& g = parts[0].graph();
  const std::size_t n = parts[0].rows();
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool needs = false;
  for (const Var& p : parts) {
    check(p.rows() == n, "concat",
          "row mismatch " + shapes(parts[0], p));
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
    needs = needs || g.requires_grad(p.id());
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k],
                  out.data() + r * total + offset);
    offset += widths[k];
  }
  return g.record(std::move(out), needs,
                  [ids, widths, n, total](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (g.requires_grad(ids[k])) {
                        Tensor& gx = g.grad(ids[k]);
                        for (std::size_t r = 0; r < n; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            gx[r * widths[k] + c] +=
                                gy[r * total + offset + c];
                      }
                      offset += widths[k];
                    }
                  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var x, std::size_t begin, std::size_t width) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), m = x.cols();
  check(begin + width <= m, "slice_cols",
        "columns [" + std::to_string(begin) + ", " +
            std::to_string(begin + width) + ") outside " +
            shape_string(x.shape()));
  Tensor out({n, width});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(x.value().data() + r * m + begin, width,
                out.data() + r * width);
  const int xi = x.id();
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, n, m, begin, width](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < width; ++c)
                        gx[r * m + begin + c] += gy[r * width + c];
                  });
}

Var relu(Var x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return elementwise(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var log(Var x) {
  static constexpr double kFloor = 1e-300;
  return elementwise(
      x, [](double v) { return std::log(std::max(v, kFloor)); },
      [](double v, double) { return v > kFloor ? 1.0 / v : 0.0; });
}

Var abs(Var x) {
  return elementwise(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var softmax(Var logits, const Mask* mask) {
  Graph& g = logits.graph();
  check(mask == nullptr || mask->size() == logits.value().size(), "softmax",
        "mask size mismatch");
  Tensor probs;
  std::vector<double> log_norm;
  softmax_rows(logits.value(), mask, probs, log_norm);
  const int xi = logits.id();
  Mask m = mask ? *mask : Mask();
  return g.record(
      std::move(probs), g.requires_grad(xi),
      [xi, m = std::move(m)](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const Tensor& p = g.value(self);
        const Tensor& x = g.value(xi);
        Tensor& gx = g.grad(xi);
        const Mask* mp = m.empty() ? nullptr : &m;
        const std::size_t rows = p.rows(), cols = p.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c)
            dot += p.at(r, c) * gy.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (!valid_at(mp, i) || !inside_clip(x[i])) continue;
            gx[i] += p[i] * (gy[i] - dot);
          }
        }
      });
}

Var log_softmax(Var logits, const Mask* mask) {
  Graph& g = logits.graph();
  check(mask == nullptr || mask->size() == logits.value().size(),
        "log_softmax", "mask size mismatch");
  Tensor probs;
  std::vector<double> log_norm;
  softmax_rows(logits.value(), mask, probs, log_norm);
  const Tensor& x = logits.value();
  Tensor out(x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (valid_at(mask, r * cols + c))
        out.at(r, c) = clip_logit(x.at(r, c)) - log_norm[r];
  const int xi = logits.id();
  Mask m = mask ? *mask : Mask();
  return g.record(
      std::move(out), g.requires_grad(xi),
      [xi, m = std::move(m), probs = std::move(probs)](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const Tensor& x = g.value(xi);
        Tensor& gx = g.grad(xi);
        const Mask* mp = m.empty() ? nullptr : &m;
        const std::size_t rows = x.rows(), cols = x.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < cols; ++c)
            if (valid_at(mp, r * cols + c)) total += gy.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (!valid_at(mp, i) || !inside_clip(x[i])) continue;
            gx[i] += gy[i] - probs[i] * total;
          }
        }
      });
}

Var dropout(Var x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  check(rate < 1.0, "dropout", "rate must be below 1");
  Graph& g = x.graph();
  const Tensor& in = x.value();
  Tensor keep(in.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < keep.size(); ++i)
    keep[i] = u(rng) >= rate ? s : 0.0;
  Tensor out(in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * keep[i];
  const int xi = x.id();
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, keep = std::move(keep)](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t i = 0; i < gy.size(); ++i)
                      gx[i] += gy[i] * keep[i];
                  });
}

Var conv2d(Var input, Var filters, Var bias) {
  Graph& g = input.graph();
  const Shape& is = input.shape();
  const Shape& fs = filters.shape();
  check(is.size() == 4 && fs.size() == 4, "conv2d",
        "expected rank-4 input and filters, got " + shapes(input, filters));
  const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
  const std::size_t F = fs[0], KH = fs[2], KW = fs[3];
  check(fs[1] == C, "conv2d", "channel mismatch " + shapes(input, filters));
  check(KH <= H && KW <= W, "conv2d", "kernel larger than input");
  check(bias.value().size() == F, "conv2d", "bias must have one entry per filter");
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  Tensor out({N, F, OH, OW});
  const double* x = input.value().data();
  const double* w = filters.value().data();
  const double* b = bias.value().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      double* o = out.data() + ((n * F + f) * OH) * OW;
      for (std::size_t i = 0; i < OH * OW; ++i) o[i] = b[f];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < KH; ++ky)
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double wv = w[((f * C + c) * KH + ky) * KW + kx];
            for (std::size_t y = 0; y < OH; ++y) {
              const double* xr = x + ((n * C + c) * H + y + ky) * W + kx;
              double* orow = o + y * OW;
              for (std::size_t xx = 0; xx < OW; ++xx) orow[xx] += wv * xr[xx];
            }
          }
    }
  const int ii = input.id(), fi = filters.id(), bi = bias.id();
  const bool needs = g.requires_grad(ii) || g.requires_grad(fi) ||
                     g.requires_grad(bi);
  return g.record(
      std::move(out), needs,
      [=](Graph& g, int self) {
        const double* gy = g.grad(self).data();
        const double* x = g.value(ii).data();
        const double* w = g.value(fi).data();
        double* gx = g.requires_grad(ii) ? g.grad(ii).data() : nullptr;
        double* gw = g.requires_grad(fi) ? g.grad(fi).data() : nullptr;
        double* gb = g.requires_grad(bi) ? g.grad(bi).data() : nullptr;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            const double* go = gy + ((n * F + f) * OH) * OW;
            if (gb)
              for (std::size_t i = 0; i < OH * OW; ++i) gb[f] += go[i];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const std::size_t widx = ((f * C + c) * KH + ky) * KW + kx;
                  double acc = 0.0;
                  for (std::size_t y = 0; y < OH; ++y) {
                    const std::size_t base = ((n * C + c) * H + y + ky) * W + kx;
                    const double* grow = go + y * OW;
                    for (std::size_t xx = 0; xx < OW; ++xx) {
                      acc += grow[xx] * x[base + xx];
                      if (gx) gx[base + xx] += grow[xx] * w[widx];
                    }
                  }
                  if (gw) gw[widx] += acc;
                }
          }
      });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats,
               bool training, double momentum, double eps) {
  Graph& g = x.graph();
  const Shape& s = x.shape();
  check(s.size() == 2 || s.size() == 4, "batch_norm",
        "expected rank 2 or 4, got " + shape_string(s));
  const std::size_t N = s[0], C = s[1];
  const std::size_t S = s.size() == 4 ? s[2] * s[3] : 1;
  check(gamma.value().size() == C && beta.value().size() == C, "batch_norm",
        "gamma/beta must have one entry per channel");
  if (stats.running_mean.size() != C) {
    stats.running_mean.assign(C, 0.0);
    stats.running_var.assign(C, 1.0);
  }
  const Tensor& in = x.value();
  const double count = static_cast<double>(N * S);
  std::vector<double> mu(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      double m = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < S; ++k) m += in[(n * C + c) * S + k];
      m /= count;
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < S; ++k) {
          const double d = in[(n * C + c) * S + k] - m;
          v += d * d;
        }
      v /= count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      stats.running_mean[c] =
          (1 - momentum) * stats.running_mean[c] + momentum * m;
      stats.running_var[c] =
          (1 - momentum) * stats.running_var[c] + momentum * unbiased;
    } else {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
    }
  }
  Tensor xhat(s), out(s);
  const double* gm = gamma.value().data();
  const double* bt = beta.value().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < S; ++k) {
        const std::size_t i = (n * C + c) * S + k;
        xhat[i] = (in[i] - mu[c]) * inv_std[c];
        out[i] = gm[c] * xhat[i] + bt[c];
      }
  const int xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool needs =
      g.requires_grad(xi) || g.requires_grad(gi) || g.requires_grad(bi);
  return g.record(
      std::move(out), needs,
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                 int self) {
        const Tensor& gy = g.grad(self);
        const double* gm = g.value(gi).data();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < S; ++k) {
              const std::size_t i = (n * C + c) * S + k;
              sum_dy[c] += gy[i];
              sum_dy_xhat[c] += gy[i] * xhat[i];
            }
        if (g.requires_grad(gi)) {
          Tensor& gg = g.grad(gi);
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (g.requires_grad(bi)) {
          Tensor& gb = g.grad(bi);
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
        }
        if (g.requires_grad(xi)) {
          Tensor& gx = g.grad(xi);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t k = 0; k < S; ++k) {
                const std::size_t i = (n * C + c) * S + k;
                if (training) {
                  gx[i] += gm[c] * inv_std[c] *
                           (gy[i] - sum_dy[c] / count -
                            xhat[i] * sum_dy_xhat[c] / count);
                } else {
                  gx[i] += gm[c] * inv_std[c] * gy[i];
                }
              }
        }
      });
}

Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  check(shape_size(shape) == x.value().size(), "reshape",
        "cannot view " + shape_string(x.shape()) + " as " +
            shape_string(shape));
  Tensor out = x.value();
  out.reshape(std::move(shape));
  const int xi = x.id();
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                  });
}

Var detach(Var x) { return x.graph().constant(x.value()); }

Var bce_with_logits(Var logits, const Tensor& targets) {
  Graph& g = logits.graph();
  const Tensor& x = logits.value();
  check(targets.size() == x.size(), "bce_with_logits",
        "target size mismatch " + shape_string(x.shape()) + " vs " +
            shape_string(targets.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    total += std::max(v, 0.0) - v * targets[i] +
             std::log1p(std::exp(-std::fabs(v)));
  }
  const double n = static_cast<double>(x.size());
  const int xi = logits.id();
  return g.record(Tensor::scalar(total / n), g.requires_grad(xi),
                  [xi, targets, n](Graph& g, int self) {
                    const double gy = g.grad(self)[0];
                    const Tensor& x = g.value(xi);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t i = 0; i < x.size(); ++i) {
                      const double v = x[i];
                      const double sig = v >= 0
                                             ? 1.0 / (1.0 + std::exp(-v))
                                             : std::exp(v) / (1.0 + std::exp(v));
                      gx[i] += gy * (sig - targets[i]) / n;
                    }
                  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  check(targets.size() == logits.rows(), "cross_entropy",
        "one target per row required");
  return scale(mean(pick(log_softmax(logits), targets)), -1.0);
}

Var pick(Var x, std::span<const int> cols) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), m = x.cols();
  check(cols.size() == n, "pick", "one column index per row required");
  Tensor out({n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    check(cols[r] >= 0 && static_cast<std::size_t>(cols[r]) < m, "pick",
          "column index out of range");
    out[r] = x.value().at(r, cols[r]);
  }
  const int xi = x.id();
  std::vector<int> idx(cols.begin(), cols.end());
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, idx = std::move(idx), m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      gx[r * m + idx[r]] += gy[r];
                  });
}

Var gather_rows(Var x, std::span<const int> rows) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check(rows[r] >= 0 && static_cast<std::size_t>(rows[r]) < n,
          "gather_rows", "row index out of range");
    std::copy_n(x.value().data() + rows[r] * m, m, out.data() + r * m);
  }
  const int xi = x.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, idx = std::move(idx), m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      for (std::size_t c = 0; c < m; ++c)
                        gx[idx[r] * m + c] += gy[r * m + c];
                  });
}

Var stack_rows(std::span<const Var> rows) {
  check(!rows.empty(), "stack_rows", "no inputs");
  Graph& g = rows[0].graph();
  const std::size_t m = rows[0].value().size();
  std::vector<int> ids;
  bool needs = false;
  Tensor out({rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check(rows[r].value().size() == m, "stack_rows",
          "row size mismatch " + shapes(rows[0], rows[r]));
    std::copy_n(rows[r].value().data(), m, out.data() + r * m);
    ids.push_back(rows[r].id());
    needs = needs || g.requires_grad(rows[r].id());
  }
  return g.record(std::move(out), needs, [ids, m](Graph& g, int self) {
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!g.requires_grad(ids[r])) continue;
      Tensor& gx = g.grad(ids[r]);
      for (std::size_t c = 0; c < m; ++c) gx[c] += gy[r * m + c];
    }
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  const auto& v = x.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  const int xi = x.id();
  return g.record(Tensor::scalar(s), g.requires_grad(xi),
                  [xi](Graph& g, int self) {
                    const double gy = g.grad(self)[0];
                    Tensor& gx = g.grad(xi);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
                  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  check(n > 0, "mean", "empty input");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var row_sum(Var x) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += x.value().at(r, c);
    out[r] = s;
  }
  const int xi = x.id();
  return g.record(std::move(out), g.requires_grad(xi),
                  [xi, n, m](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    Tensor& gx = g.grad(xi);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < m; ++c)
                        gx[r * m + c] += gy[r];
                  });
}

Var group_dot(Var a, Var q, std::size_t group) {
  Graph& g = a.graph();
  const std::size_t n = q.rows(), k = q.cols();
  check(group > 0 && a.rows() == n * group && a.cols() == k, "group_dot",
        shapes(a, q) + " with group " + std::to_string(group));
  Tensor out({n, group});
  const double* av = a.value().data();
  const double* qv = q.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < group; ++j) {
      const double* ar = av + (i * group + j) * k;
      const double* qr = qv + i * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * qr[p];
      out.at(i, j) = s;
    }
  const int ai = a.id(), qi = q.id();
  return g.record(std::move(out), g.requires_grad(ai) || g.requires_grad(qi),
                  [ai, qi, n, k, group](Graph& g, int self) {
                    const Tensor& gy = g.grad(self);
                    const double* av = g.value(ai).data();
                    const double* qv = g.value(qi).data();
                    double* ga = g.requires_grad(ai) ? g.grad(ai).data() : nullptr;
                    double* gq = g.requires_grad(qi) ? g.grad(qi).data() : nullptr;
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < group; ++j) {
                        const double d = gy.at(i, j);
                        if (d == 0.0) continue;
                        const std::size_t row = (i * group + j) * k;
                        for (std::size_t p = 0; p < k; ++p) {
                          if (ga) ga[row + p] += d * qv[i * k + p];
                          if (gq) gq[i * k + p] += d * av[row + p];
                        }
                      }
                  });
}

}  // namespace dackgr::ad
