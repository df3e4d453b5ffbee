#include "pmdef/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "pmdef/error.hpp"

namespace pmdef {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw EvaluationError(std::string(op) + " produced a non-finite value");
}

// Elementwise unary op with derivative expressed through input and output.
template <typename Forward, typename Derivative>
Var unary(Tape& tape, Var x, const char* name, Forward f, Derivative df) {
  const Tensor& in = tape.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  require_finite(out, name);
  return tape.record(std::move(out), {x}, [x, df](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(x);
    Tensor& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += g[i] * df(in[i]);
  });
}

std::size_t labels_check(const Tensor& x, std::span<const int> labels, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + " expects [N, K], got " + to_string(x.shape()));
  if (labels.size() != x.dim(0))
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(x.dim(0)) + " rows");
  const auto k = x.dim(1);
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw DataError(std::string(op) + ": label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
  return k;
}

struct ConvGeometry {
  std::size_t n, h, w, cin, kh, kw, cout, stride, oh, ow, pad_top, pad_left;
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& fs, std::size_t stride, ops::Padding padding) {
  if (xs.size() != 4) throw DimensionError("conv2d expects N x H x W x C input, got " + to_string(xs));
  if (fs.size() != 4) throw DimensionError("conv2d expects kh x kw x C_in x C_out filters, got " + to_string(fs));
  if (stride == 0) throw ParameterError("conv2d stride must be positive");
  if (fs[2] != xs[3])
    throw DimensionError("conv2d channel mismatch: input " + to_string(xs) + ", filters " + to_string(fs));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], fs[0], fs[1], fs[3], stride, 0, 0, 0, 0};
  if (padding == ops::Padding::valid) {
    if (g.kh > g.h || g.kw > g.w)
      throw DimensionError("conv2d kernel " + to_string(fs) + " larger than input " + to_string(xs));
    g.oh = (g.h - g.kh) / stride + 1;
    g.ow = (g.w - g.kw) / stride + 1;
  } else {
    g.oh = (g.h + stride - 1) / stride;
    g.ow = (g.w + stride - 1) / stride;
    const auto need_h = (g.oh - 1) * stride + g.kh;
    const auto need_w = (g.ow - 1) * stride + g.kw;
    const auto pad_h = need_h > g.h ? need_h - g.h : 0;
    const auto pad_w = need_w > g.w ? need_w - g.w : 0;
    if (g.kh > g.h + pad_h || g.kw > g.w + pad_w)
      throw DimensionError("conv2d kernel " + to_string(fs) + " larger than padded input " + to_string(xs));
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

// Patch matrix: one row per output pixel, kh*kw*cin columns.
// Patch rows for images [n0, n1), one row per output pixel.
RowMatrix im2col(const double* x, const ConvGeometry& g, std::size_t n0, std::size_t n1) {
  const std::size_t patch = g.kh * g.kw * g.cin;
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>((n1 - n0) * g.oh * g.ow), static_cast<Eigen::Index>(patch));
  for (std::size_t n = n0; n < n1; ++n)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        double* dst = cols.data() + (((n - n0) * g.oh + oy) * g.ow + ox) * patch;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const double* src =
                x + ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            std::copy(src, src + g.cin, dst + (ky * g.kw + kx) * g.cin);
          }
        }
      }
  return cols;
}

void col2im_add(const RowMatrix& cols, double* gx, const ConvGeometry& g, std::size_t n0, std::size_t n1) {
  const std::size_t patch = g.kh * g.kw * g.cin;
  for (std::size_t n = n0; n < n1; ++n)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const double* src = cols.data() + (((n - n0) * g.oh + oy) * g.ow + ox) * patch;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            double* dst = gx + ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            const double* s = src + (ky * g.kw + kx) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += s[c];
          }
        }
      }
}

// Images per im2col block, keeping a block near 16 MB.
std::size_t conv_block(const ConvGeometry& g) {
  constexpr std::size_t kBlockElements = std::size_t{1} << 21;
  return std::max<std::size_t>(1, kBlockElements / std::max<std::size_t>(1, g.oh * g.ow * g.kh * g.kw * g.cin));
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() < 1) throw DimensionError("softmax of a rank-0 tensor");
  const auto k = logits.shape().back();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.size() / k; ++r) {
    const double* z = logits.data() + r * k;
    double* y = out.data() + r * k;
    const double m = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += (y[i] = std::exp(z[i] - m));
    for (std::size_t i = 0; i < k; ++i) y[i] /= total;
  }
  return out;
}

void validate_distribution_rows(const Tensor& p, const char* what) {
  if (p.rank() < 1) throw DimensionError(std::string(what) + ": rank-0 distribution");
  const auto k = p.shape().back();
  for (std::size_t r = 0; r < p.size() / k; ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double v = p[r * k + i];
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " has an invalid entry " +
                              std::to_string(v));
      total += v;
    }
    if (std::abs(total - 1.0) > ops::kDistributionTolerance)
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(total));
  }
}

double kl_row(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    total += p[i] * (std::log(p[i]) - std::log(std::max(q[i], ops::kProbabilityFloor)));
  }
  // Rounding can leave tiny negative values for p == q.
  return std::max(total, 0.0);
}

std::vector<double> kl_rows(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence");
  validate_distribution_rows(p, "kl_divergence p");
  validate_distribution_rows(q, "kl_divergence q");
  const auto k = p.shape().back();
  std::vector<double> out(p.size() / k);
  for (std::size_t r = 0; r < out.size(); ++r)
    out[r] = kl_row(p.values().subspan(r * k, k), q.values().subspan(r * k, k));
  return out;
}

namespace ops {

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: cannot multiply " + to_string(av.shape()) + " by " + to_string(bv.shape()));
  const auto m = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto n = static_cast<Eigen::Index>(bv.dim(1));
  Tensor out({av.dim(0), bv.dim(1)});
  MatMap(out.data(), m, n).noalias() = ConstMatMap(av.data(), m, k) * ConstMatMap(bv.data(), k, n);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    ConstMatMap gm(g.data(), m, n);
    if (t.requires_grad(a))
      MatMap(t.grad_slot(a).data(), m, k).noalias() += gm * ConstMatMap(t.value(b).data(), k, n).transpose();
    if (t.requires_grad(b))
      MatMap(t.grad_slot(b).data(), k, n).noalias() += ConstMatMap(t.value(a).data(), m, k).transpose() * gm;
  });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b})
      if (t.requires_grad(v)) {
        Tensor& gv = t.grad_slot(v);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
  });
}

Var sub(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "sub");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  require_finite(out, "mul");
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_slot(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_slot(b);
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Tape& tape, Var a, double factor) {
  return unary(tape, a, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Var add_scalar(Tape& tape, Var a, double offset) {
  return unary(tape, a, "add_scalar", [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var add_bias(Tape& tape, Var x, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(bias);
  if (bv.rank() != 1 || xv.rank() < 1 || xv.shape().back() != bv.dim(0))
    throw DimensionError("add_bias: bias " + to_string(bv.shape()) + " does not match " + to_string(xv.shape()));
  const auto k = bv.dim(0);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % k];
  return tape.record(std::move(out), {x, bias}, [x, bias, k](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_slot(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_slot(bias);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % k] += g[i];
    }
  });
}

Var relu(Tape& tape, Var x) {
  return unary(tape, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Tape& tape, Var x) {
  auto s = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary(tape, x, "sigmoid", s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var tanh(Tape& tape, Var x) {
  return unary(tape, x, "tanh", [](double v) { return std::tanh(v); },
               [](double v) {
                 const double y = std::tanh(v);
                 return 1.0 - y * y;
               });
}

Var exp(Tape& tape, Var x) {
  return unary(tape, x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var log(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  for (double v : in.values())
    if (!(v > 0.0)) throw EvaluationError("log of non-positive value " + std::to_string(v));
  return unary(tape, x, "log", [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var square(Tape& tape, Var x) {
  return unary(tape, x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var clamp(Tape& tape, Var x, double lo, double hi) {
  if (!(lo <= hi)) throw ParameterError("clamp: lo > hi");
  return unary(tape, x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var maximum(Tape& tape, Var x, double floor) {
  return unary(tape, x, "maximum", [floor](double v) { return std::max(v, floor); },
               [floor](double v) { return v > floor ? 1.0 : 0.0; });
}

Var sum(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  double total = 0.0;
  for (double v : in.values()) total += v;
  return tape.record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (auto& v : gx.values()) v += g[0];
  });
}

Var mean(Tape& tape, Var x) {
  const auto n = static_cast<double>(tape.value(x).size());
  return scale(tape, sum(tape, x), 1.0 / n);
}

Var row_sum(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  if (in.rank() < 1) throw DimensionError("row_sum of rank-0 tensor");
  const auto rows = in.batch();
  const auto width = in.row_size();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < width; ++i) out[r] += in[r * width + i];
  return tape.record(std::move(out), {x}, [x, width](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / width];
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var flatten(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  return reshape(tape, x, {in.batch(), in.row_size()});
}

Var softmax(Tape& tape, Var z, std::size_t axis) {
  const Tensor& in = tape.value(z);
  if (axis >= in.rank())
    throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " + to_string(in.shape()));
  if (!in.all_finite()) throw EvaluationError("softmax of non-finite logits");
  const auto k = in.shape()[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < in.rank(); ++i) inner *= in.shape()[i];
  const std::size_t outer = in.size() / (k * inner);
  Tensor out(in.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * k * inner + s;
      double m = in[base];
      for (std::size_t i = 1; i < k; ++i) m = std::max(m, in[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < k; ++i) total += (out[base + i * inner] = std::exp(in[base + i * inner] - m));
      for (std::size_t i = 0; i < k; ++i) out[base + i * inner] /= total;
    }
  const Tensor saved = out;
  return tape.record(std::move(out), {z}, [z, k, inner, outer, saved](Tape& t, const Tensor& g) {
    Tensor& gz = t.grad_slot(z);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t base = o * k * inner + s;
        double dot = 0.0;
        for (std::size_t i = 0; i < k; ++i) dot += saved[base + i * inner] * g[base + i * inner];
        for (std::size_t i = 0; i < k; ++i)
          gz[base + i * inner] += saved[base + i * inner] * (g[base + i * inner] - dot);
      }
  });
}

Var softmax(Tape& tape, Var z) {
  const auto rank = tape.value(z).rank();
  if (rank == 0) throw DimensionError("softmax of rank-0 tensor");
  return softmax(tape, z, rank - 1);
}

Var log_softmax(Tape& tape, Var z) {
  const Tensor& in = tape.value(z);
  if (in.rank() < 1) throw DimensionError("log_softmax of rank-0 tensor");
  if (!in.all_finite()) throw EvaluationError("log_softmax of non-finite logits");
  const auto k = in.shape().back();
  Tensor out(in.shape());
  for (std::size_t r = 0; r < in.size() / k; ++r) {
    const double* zr = in.data() + r * k;
    const double m = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += std::exp(zr[i] - m);
    const double lse = m + std::log(total);
    for (std::size_t i = 0; i < k; ++i) out[r * k + i] = zr[i] - lse;
  }
  const Tensor saved = out;
  return tape.record(std::move(out), {z}, [z, k, saved](Tape& t, const Tensor& g) {
    Tensor& gz = t.grad_slot(z);
    for (std::size_t r = 0; r < saved.size() / k; ++r) {
      double gsum = 0.0;
      for (std::size_t i = 0; i < k; ++i) gsum += g[r * k + i];
      for (std::size_t i = 0; i < k; ++i) gz[r * k + i] += g[r * k + i] - std::exp(saved[r * k + i]) * gsum;
    }
  });
}

Var conv2d(Tape& tape, Var x, Var filters, std::size_t stride, Padding padding) {
  const Tensor& xv = tape.value(x);
  const Tensor& fv = tape.value(filters);
  const ConvGeometry g = conv_geometry(xv.shape(), fv.shape(), stride, padding);
  const auto patch = static_cast<Eigen::Index>(g.kh * g.kw * g.cin);
  const auto pixels = static_cast<Eigen::Index>(g.oh * g.ow);
  const auto cout = static_cast<Eigen::Index>(g.cout);
  const std::size_t block = conv_block(g);
  Tensor out({g.n, g.oh, g.ow, g.cout});
  ConstMatMap fm(fv.data(), patch, cout);
  for (std::size_t n0 = 0; n0 < g.n; n0 += block) {
    const std::size_t n1 = std::min(g.n, n0 + block);
    const auto rows = static_cast<Eigen::Index>(n1 - n0) * pixels;
    MatMap(out.data() + n0 * g.oh * g.ow * g.cout, rows, cout).noalias() = im2col(xv.data(), g, n0, n1) * fm;
  }
  return tape.record(std::move(out), {x, filters}, [x, filters, g, patch, pixels, cout, block](Tape& t, const Tensor& grad) {
    const Tensor& xv = t.value(x);
    const Tensor& fv = t.value(filters);
    const bool want_x = t.requires_grad(x);
    const bool want_f = t.requires_grad(filters);
    for (std::size_t n0 = 0; n0 < g.n; n0 += block) {
      const std::size_t n1 = std::min(g.n, n0 + block);
      const auto rows = static_cast<Eigen::Index>(n1 - n0) * pixels;
      ConstMatMap gm(grad.data() + n0 * g.oh * g.ow * g.cout, rows, cout);
      if (want_f)
        MatMap(t.grad_slot(filters).data(), patch, cout).noalias() += im2col(xv.data(), g, n0, n1).transpose() * gm;
      if (want_x) {
        const RowMatrix dcols = gm * ConstMatMap(fv.data(), patch, cout).transpose();
        col2im_add(dcols, t.grad_slot(x).data(), g, n0, n1);
      }
    }
  });
}

Var maxpool2d(Tape& tape, Var x, std::size_t window, std::size_t stride) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4) throw DimensionError("maxpool2d expects N x H x W x C, got " + to_string(xv.shape()));
  if (window == 0 || stride == 0) throw ParameterError("maxpool2d window and stride must be positive");
  const auto n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (window > h || window > w)
    throw DimensionError("maxpool2d window " + std::to_string(window) + " exceeds input " + to_string(xv.shape()));
  const auto oh = (h - window) / stride + 1;
  const auto ow = (w - window) / stride + 1;
  Tensor out({n, oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx) {
              const auto idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
              if (xv[idx] > xv[best]) best = idx;
            }
          const auto o = ((b * oh + oy) * ow + ox) * c + ch;
          out[o] = xv[best];
          argmax[o] = best;
        }
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

Var kl_divergence(Tape& tape, Var p, Var q) {
  const Tensor& pv = tape.value(p);
  const Tensor& qv = tape.value(q);
  const auto rows = kl_rows(pv, qv);
  double total = 0.0;
  for (double r : rows) total += r;
  const auto count = static_cast<double>(rows.size());
  return tape.record(Tensor::scalar(total / count), {p, q}, [p, q, count](Tape& t, const Tensor& g) {
    const Tensor& pv = t.value(p);
    const Tensor& qv = t.value(q);
    const double s = g[0] / count;
    if (t.requires_grad(p)) {
      Tensor& gp = t.grad_slot(p);
      for (std::size_t i = 0; i < pv.size(); ++i)
        if (pv[i] > 0.0) gp[i] += s * (std::log(pv[i]) - std::log(std::max(qv[i], kProbabilityFloor)) + 1.0);
    }
    if (t.requires_grad(q)) {
      Tensor& gq = t.grad_slot(q);
      for (std::size_t i = 0; i < pv.size(); ++i)
        if (qv[i] > kProbabilityFloor) gq[i] -= s * pv[i] / qv[i];
    }
  });
}

Var cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& z = tape.value(logits);
  const auto k = labels_check(z, labels, "cross_entropy");
  const auto n = z.dim(0);
  Tensor probs = softmax_rows(z);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * k;
    const double m = *std::max_element(zr, zr + k);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += std::exp(zr[i] - m);
    total += m + std::log(s) - zr[labels[r]];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return tape.record(Tensor::scalar(total / static_cast<double>(n)), {logits},
                     [logits, k, n, probs = std::move(probs), saved = std::move(saved)](Tape& t, const Tensor& g) {
                       Tensor& gz = t.grad_slot(logits);
                       const double s = g[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t i = 0; i < k; ++i)
                           gz[r * k + i] +=
                               s * (probs[r * k + i] - (static_cast<int>(i) == saved[r] ? 1.0 : 0.0));
                     });
}

Var pick(Tape& tape, Var x, std::span<const int> labels) {
  const Tensor& xv = tape.value(x);
  const auto k = labels_check(xv, labels, "pick");
  const auto n = xv.dim(0);
  Tensor out({n});
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < n; ++r) {
    idx[r] = r * k + static_cast<std::size_t>(labels[r]);
    out[r] = xv[idx[r]];
  }
  return tape.record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[idx[r]] += g[r];
  });
}

Var max_other(Tape& tape, Var x, std::span<const int> labels) {
  const Tensor& xv = tape.value(x);
  const auto k = labels_check(xv, labels, "max_other");
  if (k < 2) throw DimensionError("max_other needs at least two classes");
  const auto n = xv.dim(0);
  Tensor out({n});
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = Var::npos;
    for (std::size_t i = 0; i < k; ++i) {
      if (static_cast<int>(i) == labels[r]) continue;
      if (best == Var::npos || xv[r * k + i] > xv[best]) best = r * k + i;
    }
    idx[r] = best;
    out[r] = xv[best];
  }
  return tape.record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[idx[r]] += g[r];
  });
}

Var dropout(Tape& tape, Var x, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must be in [0, 1)");
  const Tensor& in = tape.value(x);
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> mask(in.size());
  for (auto& m : mask) m = keep(rng) ? inv : 0.0;
  Tensor out = in;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape.record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var standardize_per_image(Tape& tape, Var x) {
  constexpr double kStdFloor = 1e-6;
  const Tensor& in = tape.value(x);
  if (in.rank() < 2) throw DimensionError("standardize_per_image expects a batch, got " + to_string(in.shape()));
  const auto rows = in.batch();
  const auto width = in.row_size();
  Tensor out(in.shape());
  std::vector<double> scales(rows);
  std::vector<bool> floored(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = in.data() + r * width;
    double m = 0.0;
    for (std::size_t i = 0; i < width; ++i) m += v[i];
    m /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) var += (v[i] - m) * (v[i] - m);
    const double sd = std::sqrt(var / static_cast<double>(width));
    floored[r] = sd < kStdFloor;
    scales[r] = floored[r] ? kStdFloor : sd;
    for (std::size_t i = 0; i < width; ++i) out[r * width + i] = (v[i] - m) / scales[r];
  }
  const Tensor saved = out;
  return tape.record(std::move(out), {x}, [x, rows, width, saved, scales = std::move(scales),
                                           floored = std::move(floored)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    const double w = static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      double gmean = 0.0, gy = 0.0;
      for (std::size_t i = 0; i < width; ++i) {
        gmean += g[r * width + i];
        gy += g[r * width + i] * saved[r * width + i];
      }
      gmean /= w;
      gy /= w;
      for (std::size_t i = 0; i < width; ++i) {
        double d = g[r * width + i] - gmean;
        if (!floored[r]) d -= saved[r * width + i] * gy;
        gx[r * width + i] += d / scales[r];
      }
    }
  });
}

}  // namespace ops
}  // namespace pmdef
