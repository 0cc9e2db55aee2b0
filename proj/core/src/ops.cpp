#include "blora/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "blora/errors.hpp"

namespace blora {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Gradient buffer of an input, or nullptr when the input does not need one.
double* grad_of(const NodePtr& node) {
  if (!node->requires_grad) return nullptr;
  if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
  return node->grad.data();
}

// Wraps the result and, when tracked, records `fn(out_grad)` on the tape.
template <class Fn>
Tensor emit(Shape shape, std::vector<double> data, bool track, Fn fn) {
  Tensor out = make_result(std::move(shape), std::move(data), track);
  if (track) {
    Tape::current().record([node = out.node(), fn = std::move(fn)]() {
      if (node->grad.empty()) return;
      fn(node->grad);
    });
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
  }
}

void require_scalar(const Tensor& x, const char* op) {
  if (x.numel() != 1) {
    throw ShapeError(std::string(op) + ": expected a single element, got " +
                     shape_string(x.shape()));
  }
}

// Elementwise unary op given y = f(x) and dy/dx expressed through (x, y).
template <class Forward, class Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  const bool track = should_track({&x});
  std::vector<double> y_copy;
  if (track) y_copy = out;
  return emit(x.shape(), std::move(out), track,
              [xn = x.node(), y = std::move(y_copy), df](const std::vector<double>& g) {
                double* gx = grad_of(xn);
                if (!gx) return;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xn->data[i], y[i]);
              });
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return emit(a.shape(), std::move(out), should_track({&a, &b}),
              [an = a.node(), bn = b.node()](const std::vector<double>& g) {
                if (double* ga = grad_of(an))
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                if (double* gb = grad_of(bn))
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return emit(a.shape(), std::move(out), should_track({&a, &b}),
              [an = a.node(), bn = b.node()](const std::vector<double>& g) {
                if (double* ga = grad_of(an))
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                if (double* gb = grad_of(bn))
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return emit(a.shape(), std::move(out), should_track({&a, &b}),
              [an = a.node(), bn = b.node()](const std::vector<double>& g) {
                if (double* ga = grad_of(an))
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
                if (double* gb = grad_of(bn))
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
              });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor mul_by_scalar(const Tensor& x, const Tensor& s) {
  require_scalar(s, "mul_by_scalar");
  const double factor = s.item();
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * factor;
  return emit(x.shape(), std::move(out), should_track({&x, &s}),
              [xn = x.node(), sn = s.node()](const std::vector<double>& g) {
                if (double* gx = grad_of(xn)) {
                  const double f = sn->data[0];
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
                }
                if (double* gs = grad_of(sn)) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xn->data[i];
                  gs[0] += acc;
                }
              });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& v) {
  require_matrix(x, "mul_rowwise");
  if (v.numel() != x.dim(1)) {
    throw DimensionError("mul_rowwise: " + shape_string(x.shape()) + " vs " +
                         shape_string(v.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xs = x.data();
  const auto vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xs[i * cols + j] * vs[j];
  return emit(x.shape(), std::move(out), should_track({&x, &v}),
              [xn = x.node(), vn = v.node(), rows, cols](const std::vector<double>& g) {
                if (double* gx = grad_of(xn))
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                      gx[i * cols + j] += g[i * cols + j] * vn->data[j];
                if (double* gv = grad_of(vn))
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                      gv[j] += g[i * cols + j] * xn->data[i * cols + j];
              });
}

Tensor add_rowwise(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_rowwise");
  if (v.numel() != x.dim(1)) {
    throw DimensionError("add_rowwise: " + shape_string(x.shape()) + " vs " +
                         shape_string(v.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xs = x.data();
  const auto vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xs[i * cols + j] + vs[j];
  return emit(x.shape(), std::move(out), should_track({&x, &v}),
              [xn = x.node(), vn = v.node(), rows, cols](const std::vector<double>& g) {
                if (double* gx = grad_of(xn))
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                if (double* gv = grad_of(vn))
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) gv[j] += g[i * cols + j];
              });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return emit({1}, {total}, should_track({&x}), [xn = x.node()](const std::vector<double>& g) {
    if (double* gx = grad_of(xn))
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor round_ste(const Tensor& x) {
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  return unary(
      x, [](double v) { return std::nearbyint(v); }, [](double, double) { return 1.0; });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) {
    throw RangeError("clip: empty range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                     "]");
  }
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  const double* as = a.data().data();
  const double* bs = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = as[i * k + p];
      const double* brow = bs + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return emit({m, n}, std::move(out), should_track({&a, &b}),
              [an = a.node(), bn = b.node(), m, k, n](const std::vector<double>& g) {
                if (double* ga = grad_of(an)) {
                  const double* bd = bn->data.data();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
                      ga[i * k + p] += acc;
                    }
                }
                if (double* gb = grad_of(bn)) {
                  const double* ad = an->data.data();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                      const double av = ad[i * k + p];
                      for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
                }
              });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = xs[i * cols + j];
  return emit({cols, rows}, std::move(out), should_track({&x}),
              [xn = x.node(), rows, cols](const std::vector<double>& g) {
                if (double* gx = grad_of(xn))
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += g[j * rows + i];
              });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return emit(std::move(shape), std::move(out), should_track({&x}),
              [xn = x.node()](const std::vector<double>& g) {
                if (double* gx = grad_of(xn))
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
              });
}

Tensor slice2d(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
               std::size_t cols) {
  require_matrix(x, "slice2d");
  const std::size_t width = x.dim(1);
  if (rows == 0 || cols == 0 || row0 + rows > x.dim(0) || col0 + cols > width) {
    throw ShapeError("slice2d: window out of bounds for " + shape_string(x.shape()));
  }
  const auto xs = x.data();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xs[(row0 + i) * width + col0 + j];
  return emit({rows, cols}, std::move(out), should_track({&x}),
              [xn = x.node(), row0, rows, col0, cols, width](const std::vector<double>& g) {
                if (double* gx = grad_of(xn))
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                      gx[(row0 + i) * width + col0 + j] += g[i * cols + j];
              });
}

Tensor element(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) {
    throw ShapeError("element: index " + std::to_string(index) + " out of range for " +
                     shape_string(x.shape()));
  }
  return emit({1}, {x.data()[index]}, should_track({&x}),
              [xn = x.node(), index](const std::vector<double>& g) {
                if (double* gx = grad_of(xn)) gx[index] += g[0];
              });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.dim(0);
    track = track || should_track({&p});
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return emit({rows, cols}, std::move(out), track,
              [nodes = std::move(nodes)](const std::vector<double>& g) {
                std::size_t offset = 0;
                for (const NodePtr& n : nodes) {
                  const std::size_t count = n->data.size();
                  if (double* gp = grad_of(n))
                    for (std::size_t i = 0; i < count; ++i) gp[i] += g[offset + i];
                  offset += count;
                }
              });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    cols += p.dim(1);
    track = track || should_track({&p});
  }
  std::vector<double> out(rows * cols);
  std::vector<NodePtr> nodes;
  std::size_t col0 = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    const auto ps = p.data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * cols + col0 + j] = ps[i * w + j];
    col0 += w;
    nodes.push_back(p.node());
  }
  return emit({rows, cols}, std::move(out), track,
              [nodes = std::move(nodes), rows, cols](const std::vector<double>& g) {
                std::size_t c0 = 0;
                for (const NodePtr& n : nodes) {
                  const std::size_t w = n->shape[1];
                  if (double* gp = grad_of(n))
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + c0 + j];
                  c0 += w;
                }
              });
}

Tensor stack_scalars(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_scalars: no inputs");
  std::vector<double> out;
  std::vector<NodePtr> nodes;
  bool track = false;
  for (const Tensor& p : parts) {
    require_scalar(p, "stack_scalars");
    out.push_back(p.item());
    nodes.push_back(p.node());
    track = track || should_track({&p});
  }
  return emit({parts.size()}, std::move(out), track,
              [nodes = std::move(nodes)](const std::vector<double>& g) {
                for (std::size_t i = 0; i < nodes.size(); ++i)
                  if (double* gp = grad_of(nodes[i])) gp[0] += g[i];
              });
}

namespace {

// Splits a tensor into (rows, width) over its last axis.
std::pair<std::size_t, std::size_t> last_axis_layout(const Tensor& x) {
  const std::size_t width = x.shape().back();
  return {x.numel() / width, width};
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const auto [rows, width] = last_axis_layout(x);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * width;
    double* o = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (o[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  const bool track = should_track({&x});
  std::vector<double> y;
  if (track) y = out;
  return emit(x.shape(), std::move(out), track,
              [xn = x.node(), y = std::move(y), rows, width](const std::vector<double>& g) {
                double* gx = grad_of(xn);
                if (!gx) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const std::size_t base = r * width;
                  double dot = 0.0;
                  for (std::size_t j = 0; j < width; ++j) dot += g[base + j] * y[base + j];
                  for (std::size_t j = 0; j < width; ++j)
                    gx[base + j] += y[base + j] * (g[base + j] - dot);
                }
              });
}

Tensor log_softmax(const Tensor& x) {
  const auto [rows, width] = last_axis_layout(x);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += std::exp(in[j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = in[j] - lse;
  }
  const bool track = should_track({&x});
  std::vector<double> y;
  if (track) y = out;
  return emit(x.shape(), std::move(out), track,
              [xn = x.node(), y = std::move(y), rows, width](const std::vector<double>& g) {
                double* gx = grad_of(xn);
                if (!gx) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const std::size_t base = r * width;
                  double total = 0.0;
                  for (std::size_t j = 0; j < width; ++j) total += g[base + j];
                  for (std::size_t j = 0; j < width; ++j)
                    gx[base + j] += g[base + j] - std::exp(y[base + j]) * total;
                }
              });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const auto [rows, width] = last_axis_layout(x);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += in[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (in[j] - mu) * inv_std[r];
  }
  const bool track = should_track({&x});
  std::vector<double> y;
  if (track) y = out;
  return emit(x.shape(), std::move(out), track,
              [xn = x.node(), y = std::move(y), inv_std = std::move(inv_std), rows,
               width](const std::vector<double>& g) {
                double* gx = grad_of(xn);
                if (!gx) return;
                const double n = static_cast<double>(width);
                for (std::size_t r = 0; r < rows; ++r) {
                  const std::size_t base = r * width;
                  double g_mean = 0.0;
                  double gy_mean = 0.0;
                  for (std::size_t j = 0; j < width; ++j) {
                    g_mean += g[base + j];
                    gy_mean += g[base + j] * y[base + j];
                  }
                  g_mean /= n;
                  gy_mean /= n;
                  for (std::size_t j = 0; j < width; ++j)
                    gx[base + j] += inv_std[r] * (g[base + j] - g_mean - y[base + j] * gy_mean);
                }
              });
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy_with_logits");
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy_with_logits: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DomainError("cross_entropy_with_logits: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const auto xs = logits.data();
  std::vector<double> probs(xs.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * classes;
    const double peak = *std::max_element(in, in + classes);
    double total = 0.0;
    for (std::size_t j = 0; j < classes; ++j) total += (probs[r * classes + j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] /= total;
    loss -= in[labels[r]] - peak - std::log(total);
  }
  loss /= static_cast<double>(rows);
  std::vector<int> targets(labels.begin(), labels.end());
  return emit({1}, {loss}, should_track({&logits}),
              [xn = logits.node(), probs = std::move(probs), targets = std::move(targets), rows,
               classes](const std::vector<double>& g) {
                double* gx = grad_of(xn);
                if (!gx) return;
                const double w = g[0] / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < classes; ++j) {
                    const double onehot = static_cast<int>(j) == targets[r] ? 1.0 : 0.0;
                    gx[r * classes + j] += w * (probs[r * classes + j] - onehot);
                  }
              });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  const auto ps = prediction.data();
  const auto ts = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) total += (ps[i] - ts[i]) * (ps[i] - ts[i]);
  const double n = static_cast<double>(ps.size());
  return emit({1}, {total / n}, should_track({&prediction, &target}),
              [pn = prediction.node(), tn = target.node(), n](const std::vector<double>& g) {
                const double w = 2.0 * g[0] / n;
                double* gp = grad_of(pn);
                double* gt = grad_of(tn);
                for (std::size_t i = 0; i < pn->data.size(); ++i) {
                  const double diff = pn->data[i] - tn->data[i];
                  if (gp) gp[i] += w * diff;
                  if (gt) gt[i] -= w * diff;
                }
              });
}

}  // namespace blora
