#include "c2f/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "c2f/error.hpp"

namespace c2f::ag {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.defined() && t.rank() == 2,
          std::string(op) + ": expected a matrix, got " +
              (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(k), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(n));
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(k), b, static_cast<int>(k), 1.0, c,
              static_cast<int>(n));
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(m), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(n));
}

bool wants_grad(const Node& self, std::size_t input) {
  return self.inputs.size() > input && self.inputs[input]->requires_grad;
}

std::vector<double>& input_grad(Node& self, std::size_t input) {
  return self.inputs[input]->ensure_grad();
}

const std::vector<double>& input_value(const Node& self, std::size_t input) {
  return self.inputs[input]->value;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (wants_grad(self, 0)) gemm_nt(g, input_value(self, 1).data(), input_grad(self, 0).data(), m, n, k);
    if (wants_grad(self, 1)) gemm_tn(input_value(self, 0).data(), g, input_grad(self, 1).data(), k, m, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()) + "^T");
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (wants_grad(self, 0)) gemm_nn(g, input_value(self, 1).data(), input_grad(self, 0).data(), m, n, k);
    if (wants_grad(self, 1)) gemm_tn(g, input_value(self, 0).data(), input_grad(self, 1).data(), n, m, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto& ga = input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (!wants_grad(self, in)) continue;
      auto& g = input_grad(self, in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row_broadcast");
  const std::size_t m = a.rows(), n = a.cols();
  require(row.size() == n, "add_row_broadcast: row has " + std::to_string(row.size()) +
                               " entries, expected " + std::to_string(n));
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto rv = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      const auto& other = input_value(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      const auto& other = input_value(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (self.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: cannot view " + shape_string(a.shape()) + " as " +
                                        shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  require(begin < end && end <= a.rows(), "slice_rows: bad range");
  const std::size_t n = a.cols();
  const auto v = a.values();
  std::vector<double> out(v.begin() + begin * n, v.begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {a}, [begin, n](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  require(begin < end && end <= a.cols(), "slice_cols: bad range");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  const auto v = a.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(v.begin() + i * n + begin, w, out.begin() + i * w);
  return make_result({m, w}, std::move(out), {a}, [m, n, w, begin](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().rank() == 2 ? parts.front().cols() : parts.front().size();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t pr = p.rank() == 2 ? p.rows() : 1;
    require(p.size() == pr * n, "concat_rows: column count mismatch");
    offsets.push_back(m);
    m += pr;
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result({m, n}, std::move(out), std::move(inputs), [offsets, n](Node& self) {
    for (std::size_t in = 0; in < self.inputs.size(); ++in) {
      if (!wants_grad(self, in)) continue;
      auto& g = input_grad(self, in);
      const std::size_t base = offsets[in] * n;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[base + i];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    require(p.rows() == m, "concat_cols: row count mismatch");
    offsets.push_back(n);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.begin() + i * w, w, out.begin() + i * n + offsets[k]);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result({m, n}, std::move(out), std::move(inputs), [offsets, m, n](Node& self) {
    for (std::size_t in = 0; in < self.inputs.size(); ++in) {
      if (!wants_grad(self, in)) continue;
      auto& g = input_grad(self, in);
      const std::size_t w = self.inputs[in]->shape[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + offsets[in] + j];
    }
  });
}

Tensor masked_softmax_rows(const Tensor& logits, const Mask& column_mask) {
  require_matrix(logits, "masked_softmax_rows");
  const std::size_t m = logits.rows(), n = logits.cols();
  require(column_mask.empty() || column_mask.size() == n,
          "masked_softmax_rows: mask length " + std::to_string(column_mask.size()) +
              " does not match " + std::to_string(n) + " columns");
  const bool masked = !column_mask.empty();
  if (masked && std::none_of(column_mask.begin(), column_mask.end(), [](auto v) { return v != 0; }))
    throw NumericError("softmax over a fully masked sequence");
  const auto v = logits.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!masked || column_mask[j]) peak = std::max(peak, v[i * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !column_mask[j]) continue;
      out[i * n + j] = std::exp(v[i * n + j] - peak);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result({m, n}, std::move(out), {logits}, [m, n](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor max_pool_rows(const Tensor& a, std::size_t begin, std::size_t end, const Mask& row_mask) {
  require_matrix(a, "max_pool_rows");
  require(begin < end && end <= a.rows(), "max_pool_rows: bad row range");
  require(row_mask.empty() || row_mask.size() == a.rows(), "max_pool_rows: mask length mismatch");
  const std::size_t n = a.cols();
  const auto v = a.values();
  std::vector<double> out(n, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(n, begin);
  bool any = false;
  for (std::size_t i = begin; i < end; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = v[i * n + j];
      if (!any || x > out[j]) {
        out[j] = x;
        arg[j] = i;
      }
    }
    any = true;
  }
  if (!any) throw NumericError("max pooling over a fully masked region");
  return make_result({1, n}, std::move(out), {a}, [arg = std::move(arg), n](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t j = 0; j < n; ++j) g[arg[j] * n + j] += self.grad[j];
  });
}

Tensor mean_rows(const Tensor& a) {
  require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  const auto v = a.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
  for (auto& x : out) x /= static_cast<double>(m);
  return make_result({1, n}, std::move(out), {a}, [m, n](Node& self) {
    auto& g = input_grad(self, 0);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& w) {
  require_matrix(a, "scale_rows");
  const std::size_t m = a.rows(), n = a.cols();
  require(w.size() == m, "scale_rows: weight has " + std::to_string(w.size()) +
                             " entries, expected " + std::to_string(m));
  const auto av = a.values();
  const auto wv = w.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * wv[i];
  return make_result({m, n}, std::move(out), {a, w}, [m, n](Node& self) {
    const auto& av = input_value(self, 0);
    const auto& wv = input_value(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * wv[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * av[i * n + j];
        g[i] += acc;
      }
    }
  });
}

Tensor mask_rows(const Tensor& a, const Mask& row_mask) {
  require_matrix(a, "mask_rows");
  const std::size_t m = a.rows(), n = a.cols();
  require(row_mask.size() == m, "mask_rows: mask length mismatch");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < m; ++i)
    if (!row_mask[i]) std::fill_n(out.begin() + i * n, n, 0.0);
  return make_result({m, n}, std::move(out), {a}, [row_mask, m, n](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i) {
      if (!row_mask[i]) continue;
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require(x.rank() == 3, "conv2d: input must be (C,H,W), got " + shape_string(x.shape()));
  require(weight.rank() == 4, "conv2d: weight must be (O,C,k,k)");
  const std::size_t channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const std::size_t out_channels = weight.dim(0), kernel = weight.dim(2);
  require(weight.dim(1) == channels, "conv2d: channel mismatch between input " +
                                         shape_string(x.shape()) + " and weight " +
                                         shape_string(weight.shape()));
  require(weight.dim(3) == kernel, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be positive");
  require(height + 2 * padding >= kernel && width + 2 * padding >= kernel,
          "conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  require(!has_bias || bias.size() == out_channels, "conv2d: bias length mismatch");

  const std::size_t out_h = (height + 2 * padding - kernel) / stride + 1;
  const std::size_t out_w = (width + 2 * padding - kernel) / stride + 1;
  const std::size_t patch = channels * kernel * kernel;
  const std::size_t positions = out_h * out_w;

  // im2col: (patch, positions)
  auto columns = std::make_shared<std::vector<double>>(patch * positions, 0.0);
  const auto xv = x.values();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kernel; ++ky)
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        double* dst = columns->data() + ((c * kernel + ky) * kernel + kx) * positions;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(width)) continue;
            dst[oy * out_w + ox] = xv[(c * height + iy) * width + ix];
          }
        }
      }

  std::vector<double> out(out_channels * positions, 0.0);
  if (has_bias) {
    const auto bv = bias.values();
    for (std::size_t o = 0; o < out_channels; ++o)
      std::fill_n(out.begin() + o * positions, positions, bv[o]);
  }
  gemm_nn(weight.values().data(), columns->data(), out.data(), out_channels, patch, positions);

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(
      {out_channels, out_h, out_w}, std::move(out), std::move(inputs),
      [=](Node& self) {
        const double* g = self.grad.data();
        if (wants_grad(self, 1))
          gemm_nt(g, columns->data(), input_grad(self, 1).data(), out_channels, positions, patch);
        if (has_bias && wants_grad(self, 2)) {
          auto& gb = input_grad(self, 2);
          for (std::size_t o = 0; o < out_channels; ++o)
            for (std::size_t p = 0; p < positions; ++p) gb[o] += g[o * positions + p];
        }
        if (wants_grad(self, 0)) {
          std::vector<double> dcols(patch * positions, 0.0);
          gemm_tn(input_value(self, 1).data(), g, dcols.data(), patch, out_channels, positions);
          auto& gx = input_grad(self, 0);
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t ky = 0; ky < kernel; ++ky)
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const double* src = dcols.data() + ((c * kernel + ky) * kernel + kx) * positions;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                  if (iy < 0 || iy >= static_cast<long>(height)) continue;
                  for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const long ix =
                        static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                    if (ix < 0 || ix >= static_cast<long>(width)) continue;
                    gx[(c * height + iy) * width + ix] += src[oy * out_w + ox];
                  }
                }
              }
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  require_matrix(table, "embedding_lookup");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
            "embedding_lookup: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                std::to_string(vocab));
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::int64_t> rows(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [rows, d](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  return make_result({}, {total}, {a}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor sum_scalars(std::span<const Tensor> parts) {
  double total = 0.0;
  for (const auto& p : parts) total += p.item();
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result({}, {total}, std::move(inputs), [](Node& self) {
    for (std::size_t in = 0; in < self.inputs.size(); ++in)
      if (wants_grad(self, in)) input_grad(self, in)[0] += self.grad[0];
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::int64_t> labels,
                          std::vector<double>* probabilities) {
  require_matrix(logits, "cross_entropy_rows");
  const std::size_t m = logits.rows(), c = logits.cols();
  require(labels.size() == m, "cross_entropy_rows: label count mismatch");
  const auto v = logits.values();
  std::vector<double> probs(m * c);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ShapeError("identity label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(c) + ")");
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) peak = std::max(peak, v[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(v[i * c + j] - peak);
    const double log_z = peak + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(v[i * c + j] - log_z);
    total += log_z - v[i * c + labels[i]];
  }
  if (probabilities) *probabilities = probs;
  std::vector<std::int64_t> targets(labels.begin(), labels.end());
  return make_result({}, {total}, {logits},
                     [probs = std::move(probs), targets = std::move(targets), m, c](Node& self) {
                       auto& g = input_grad(self, 0);
                       const double up = self.grad[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += up * probs[i * c + j];
                         g[i * c + targets[i]] -= up;
                       }
                     });
}

}  // namespace c2f::ag
