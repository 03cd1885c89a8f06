#include "xaib/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "xaib/error.h"

namespace xaib::ops {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void ShapeMismatch(const std::string& op, const Tensor& a, const Tensor& b) {
  throw Error(op + ": shape mismatch " + ShapeToString(a.shape()) + " vs " +
              ShapeToString(b.shape()));
}

void RequireRank(const std::string& op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(op + ": expected " + std::to_string(rank) + "-D " + what + ", got shape " +
                ShapeToString(t.shape()));
  }
}

std::span<float> GradOf(const Tensor& t) { return Tape::GradBuffer(t); }

using AlignedFloats = std::vector<float, Eigen::aligned_allocator<float>>;

// C (m,n) = op(A) * op(B) with op = transpose when requested; accumulates
// into C when `accumulate`. Operands are staged in aligned scratch so the
// result depends only on the values, never on where the caller's buffers
// happen to live.
void Gemm(const float* a, bool ta, const float* b, bool tb, float* c, std::int64_t m, std::int64_t k,
          std::int64_t n, bool accumulate) {
  thread_local AlignedFloats sa, sb, sc;
  sa.assign(a, a + m * k);
  sb.assign(b, b + k * n);
  sc.resize(static_cast<std::size_t>(m * n));
  MapMat out(sc.data(), m, n);
  if (!ta && !tb) {
    out.noalias() = ConstMapMat(sa.data(), m, k) * ConstMapMat(sb.data(), k, n);
  } else if (ta && !tb) {
    out.noalias() = ConstMapMat(sa.data(), k, m).transpose() * ConstMapMat(sb.data(), k, n);
  } else if (!ta && tb) {
    out.noalias() = ConstMapMat(sa.data(), m, k) * ConstMapMat(sb.data(), n, k).transpose();
  } else {
    out.noalias() = ConstMapMat(sa.data(), k, m).transpose() * ConstMapMat(sb.data(), n, k).transpose();
  }
  if (accumulate) {
    for (std::size_t i = 0; i < sc.size(); ++i) c[i] += sc[i];
  } else {
    std::copy(sc.begin(), sc.end(), c);
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("add", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  tape.record("add", {a, b}, out, [a, b](std::span<const float> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto d = GradOf(*t);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("sub", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  tape.record("sub", {a, b}, out, [a, b](std::span<const float> g) {
    if (a.requires_grad()) {
      auto d = GradOf(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (b.requires_grad()) {
      auto d = GradOf(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("mul", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  tape.record("mul", {a, b}, out, [a, b](std::span<const float> g) {
    if (a.requires_grad()) {
      auto d = GradOf(a);
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto d = GradOf(b);
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
    }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, float b) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + b;
  tape.record("add_scalar", {a}, out, [a](std::span<const float> g) {
    auto d = GradOf(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, float b) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * b;
  tape.record("mul_scalar", {a}, out, [a, b](std::span<const float> g) {
    auto d = GradOf(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b;
  });
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireRank("matmul", a, 2, "left operand");
  RequireRank("matmul", b, 2, "right operand");
  if (a.dim(1) != b.dim(0)) ShapeMismatch("matmul", a, b);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  Gemm(a.data().data(), false, b.data().data(), false, out.data().data(), m, k, n, false);
  tape.record("matmul", {a, b}, out, [a, b, m, k, n](std::span<const float> g) {
    if (a.requires_grad()) Gemm(g.data(), false, b.data().data(), true, GradOf(a).data(), m, n, k, true);
    if (b.requires_grad()) Gemm(a.data().data(), true, g.data(), false, GradOf(b).data(), k, m, n, true);
  });
  return out;
}

namespace {

struct ConvGeometry {
  std::int64_t n, c, h, w, o, kh, kw, ho, wo;
  int stride, pad;
  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t positions() const { return ho * wo; }
};

// cols: (C*kh*kw, Ho*Wo) for image `img` (C,H,W).
void Im2Col(const ConvGeometry& g, const float* img, float* cols) {
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        float* row = cols + ((ch * g.kh + i) * g.kw + j) * g.positions();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t y = oy * g.stride - g.pad + i;
          float* dst = row + oy * g.wo;
          if (y < 0 || y >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* src = img + (ch * g.h + y) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t x = ox * g.stride - g.pad + j;
            dst[ox] = (x < 0 || x >= g.w) ? 0.0f : src[x];
          }
        }
      }
    }
  }
}

void Col2ImAdd(const ConvGeometry& g, const float* cols, float* img) {
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const float* row = cols + ((ch * g.kh + i) * g.kw + j) * g.positions();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.h) continue;
          float* dst = img + (ch * g.h + y) * g.w;
          const float* src = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t x = ox * g.stride - g.pad + j;
            if (x >= 0 && x < g.w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dParams params) {
  RequireRank("conv2d", x, 4, "input (N,C,H,W)");
  RequireRank("conv2d", weight, 4, "kernel (out,in,kh,kw)");
  if (weight.dim(1) != x.dim(1)) ShapeMismatch("conv2d", x, weight);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    ShapeMismatch("conv2d(bias)", weight, bias);
  }
  if (params.stride < 1 || params.padding < 0) {
    throw Error("conv2d: stride must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = params.stride;
  g.pad = params.padding;
  const std::int64_t span_h = g.h + 2 * g.pad - g.kh;
  const std::int64_t span_w = g.w + 2 * g.pad - g.kw;
  if (span_h < 0 || span_w < 0) ShapeMismatch("conv2d(kernel larger than padded input)", x, weight);
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;

  Tensor out({g.n, g.o, g.ho, g.wo});
  std::vector<float> cols(static_cast<std::size_t>(g.patch() * g.positions()));
  for (std::int64_t b = 0; b < g.n; ++b) {
    Im2Col(g, x.data().data() + b * g.c * g.h * g.w, cols.data());
    float* y = out.data().data() + b * g.o * g.positions();
    Gemm(weight.data().data(), false, cols.data(), false, y, g.o, g.patch(), g.positions(), false);
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::int64_t oc = 0; oc < g.o; ++oc) {
        for (std::int64_t p = 0; p < g.positions(); ++p) y[oc * g.positions() + p] += bv[oc];
      }
    }
  }

  tape.record("conv2d", {x, weight, bias}, out, [x, weight, bias, g](std::span<const float> gout) {
    std::vector<float> cols(static_cast<std::size_t>(g.patch() * g.positions()));
    for (std::int64_t b = 0; b < g.n; ++b) {
      const float* dy = gout.data() + b * g.o * g.positions();
      if (weight.requires_grad()) {
        Im2Col(g, x.data().data() + b * g.c * g.h * g.w, cols.data());
        Gemm(dy, false, cols.data(), true, GradOf(weight).data(), g.o, g.positions(), g.patch(), true);
      }
      if (bias.defined() && bias.requires_grad()) {
        auto db = GradOf(bias);
        for (std::int64_t oc = 0; oc < g.o; ++oc) {
          double acc = 0.0;
          for (std::int64_t p = 0; p < g.positions(); ++p) acc += dy[oc * g.positions() + p];
          db[oc] += static_cast<float>(acc);
        }
      }
      if (x.requires_grad()) {
        Gemm(weight.data().data(), true, dy, false, cols.data(), g.patch(), g.o, g.positions(), false);
        Col2ImAdd(g, cols.data(), GradOf(x).data() + b * g.c * g.h * g.w);
      }
    }
  });
  return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x, int kernel, int stride) {
  RequireRank("maxpool2d", x, 4, "input (N,C,H,W)");
  if (kernel < 1 || stride < 1) throw Error("maxpool2d: kernel and stride must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel) {
    throw Error("maxpool2d: kernel " + std::to_string(kernel) + " larger than input " +
                ShapeToString(x.shape()));
  }
  const auto ho = (h - kernel) / stride + 1;
  const auto wo = (w - kernel) / stride + 1;
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.numel());
  const float* src = x.data().data();
  float* dst = out.data().data();
  std::int64_t k = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* p = src + plane * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox, ++k) {
        std::int64_t best = (oy * stride) * w + ox * stride;
        for (int i = 0; i < kernel; ++i) {
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t idx = (oy * stride + i) * w + ox * stride + j;
            if (p[idx] > p[best]) best = idx;
          }
        }
        dst[k] = p[best];
        (*argmax)[k] = plane * h * w + best;
      }
    }
  }
  tape.record("maxpool2d", {x}, out, [x, argmax](std::span<const float> g) {
    auto d = GradOf(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[(*argmax)[i]] += g[i];
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  // NaN passes through so that divergence stays visible downstream.
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] < 0.0f ? 0.0f : v[i];
  tape.record("relu", {x}, out, [x](std::span<const float> g) {
    auto d = GradOf(x);
    auto v = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0f) d[i] += g[i];
    }
  });
  return out;
}

Tensor flatten(Tape& tape, const Tensor& x) {
  if (x.rank() < 1) throw Error("flatten: scalar input");
  const auto n = x.dim(0);
  const auto rest = n == 0 ? 0 : static_cast<std::int64_t>(x.numel()) / n;
  Tensor out({n, rest}, std::vector<float>(x.data().begin(), x.data().end()));
  tape.record("flatten", {x}, out, [x](std::span<const float> g) {
    auto d = GradOf(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
  return out;
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  RequireRank("dense", x, 2, "input (N,F)");
  RequireRank("dense", weight, 2, "weight (O,F)");
  if (x.dim(1) != weight.dim(1)) ShapeMismatch("dense", x, weight);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    ShapeMismatch("dense(bias)", weight, bias);
  }
  const auto n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  Tensor out({n, o});
  // Plain loops with double accumulators in a fixed order: a sample's
  // outputs never depend on the batch it is in or on buffer alignment.
  const float* wp = weight.data().data();
  const float* xp = x.data().data();
  float* yp = out.data().data();
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t k = 0; k < o; ++k) {
      double acc = bias.defined() ? bias.data()[k] : 0.0;
      for (std::int64_t j = 0; j < f; ++j) acc += static_cast<double>(wp[k * f + j]) * xp[r * f + j];
      yp[r * o + k] = static_cast<float>(acc);
    }
  }
  tape.record("dense", {x, weight, bias}, out, [x, weight, bias, n, f, o](std::span<const float> g) {
    const float* wp = weight.data().data();
    const float* xp = x.data().data();
    if (x.requires_grad()) {
      auto dx = GradOf(x);
      std::vector<double> acc(static_cast<std::size_t>(f));
      for (std::int64_t r = 0; r < n; ++r) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t k = 0; k < o; ++k) {
          const double dy = g[r * o + k];
          for (std::int64_t j = 0; j < f; ++j) acc[j] += dy * wp[k * f + j];
        }
        for (std::int64_t j = 0; j < f; ++j) dx[r * f + j] += static_cast<float>(acc[j]);
      }
    }
    if (weight.requires_grad()) {
      auto dw = GradOf(weight);
      for (std::int64_t k = 0; k < o; ++k) {
        for (std::int64_t j = 0; j < f; ++j) {
          double acc = 0.0;
          for (std::int64_t r = 0; r < n; ++r) acc += static_cast<double>(g[r * o + k]) * xp[r * f + j];
          dw[k * f + j] += static_cast<float>(acc);
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto db = GradOf(bias);
      for (std::int64_t k = 0; k < o; ++k) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < n; ++r) acc += g[r * o + k];
        db[k] += static_cast<float>(acc);
      }
    }
  });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& logits) {
  RequireRank("softmax", logits, 2, "logits (N,K)");
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  auto src = logits.data();
  auto dst = out.data();
  for (std::int64_t r = 0; r < n; ++r) {
    const float* row = src.data() + r * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    for (std::int64_t c = 0; c < k; ++c) {
      dst[r * k + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - mx) / z);
    }
  }
  tape.record("softmax", {logits}, out, [logits, out, n, k](std::span<const float> g) {
    auto d = GradOf(logits);
    auto y = out.data();
    for (std::int64_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < k; ++c) dot += static_cast<double>(g[r * k + c]) * y[r * k + c];
      for (std::int64_t c = 0; c < k; ++c) {
        d[r * k + c] += static_cast<float>(y[r * k + c] * (g[r * k + c] - dot));
      }
    }
  });
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  RequireRank("cross_entropy", logits, 2, "logits (N,K)");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                ShapeToString(logits.shape()));
  }
  if (n == 0) throw Error("cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * k));
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  auto src = logits.data();
  for (std::int64_t r = 0; r < n; ++r) {
    if (lab[r] < 0 || lab[r] >= k) {
      throw Error("cross_entropy: label " + std::to_string(lab[r]) + " out of range [0, " +
                  std::to_string(k) + ")");
    }
    const float* row = src.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    for (std::int64_t c = 0; c < k; ++c) (*probs)[r * k + c] = std::exp(row[c] - log_z);
    total += log_z - row[lab[r]];
  }
  Tensor out({}, std::vector<float>{static_cast<float>(total / n)});
  tape.record("cross_entropy", {logits}, out, [logits, probs, lab, n, k](std::span<const float> g) {
    auto d = GradOf(logits);
    const double scale = static_cast<double>(g[0]) / n;
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t c = 0; c < k; ++c) {
        const double onehot = c == lab[r] ? 1.0 : 0.0;
        d[r * k + c] += static_cast<float>(((*probs)[r * k + c] - onehot) * scale);
      }
    }
  });
  return out;
}

Tensor pick(Tape& tape, const Tensor& x, std::span<const int> index) {
  RequireRank("pick", x, 2, "input (N,K)");
  const auto n = x.dim(0), k = x.dim(1);
  if (static_cast<std::int64_t>(index.size()) != n) {
    throw Error("pick: " + std::to_string(index.size()) + " indices for input " +
                ShapeToString(x.shape()));
  }
  std::vector<int> idx(index.begin(), index.end());
  Tensor out({n});
  for (std::int64_t r = 0; r < n; ++r) {
    if (idx[r] < 0 || idx[r] >= k) {
      throw Error("pick: index " + std::to_string(idx[r]) + " out of range for " +
                  ShapeToString(x.shape()));
    }
    out.data()[r] = x.data()[r * k + idx[r]];
  }
  tape.record("pick", {x}, out, [x, idx, k](std::span<const float> g) {
    auto d = GradOf(x);
    for (std::size_t r = 0; r < idx.size(); ++r) d[r * k + idx[r]] += g[r];
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  Tensor out({}, std::vector<float>{static_cast<float>(total)});
  tape.record("sum", {x}, out, [x](std::span<const float> g) {
    auto d = GradOf(x);
    for (auto& v : d) v += g[0];
  });
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, float rate, std::span<const RngStream> streams,
               bool active) {
  if (!(rate >= 0.0f) || rate >= 1.0f) {
    throw Error("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0f) return x;
  const std::int64_t rows = x.rank() == 0 ? 1 : x.dim(0);
  if (streams.size() != 1 && static_cast<std::int64_t>(streams.size()) != rows) {
    throw Error("dropout: need 1 or " + std::to_string(rows) + " rng streams, got " +
                std::to_string(streams.size()));
  }
  const auto total = x.numel();
  const std::size_t row_len = streams.size() == 1 ? total : total / static_cast<std::size_t>(rows);
  const float scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto& s = streams.size() == 1 ? streams[0] : streams[i / row_len];
    const std::size_t counter = streams.size() == 1 ? i : i % row_len;
    (*mask)[i] = s.uniform_at(counter) < rate ? 0.0f : scale;
  }
  Tensor out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < total; ++i) o[i] = v[i] * (*mask)[i];
  tape.record("dropout", {x}, out, [x, mask](std::span<const float> g) {
    auto d = GradOf(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*mask)[i];
  });
  return out;
}

}  // namespace xaib::ops
