#include "cmr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include <Eigen/Core>
#include <fmt/core.h>

namespace cmr::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Storage = std::shared_ptr<const std::vector<double>>;

Tensor emit(Graph* g, Shape shape, std::vector<double> data, BackwardFn fn) {
  if (g == nullptr) {
    return Tensor(shape, std::move(data));
  }
  return g->record(shape, std::move(data), std::move(fn));
}

NodeId id_of(Graph* g, const Tensor& t) { return g == nullptr ? kNoNode : g->id_of(t); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    return;
  }
  const char* dim = sa.n != sb.n ? "batch" : sa.c != sb.c ? "channels" : sa.h != sb.h ? "height" : "width";
  throw std::invalid_argument(fmt::format("{}: shape mismatch in {} dimension, {} vs {}", op, dim, sa.str(), sb.str()));
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

struct ConvGeom {
  int channels;
  int height;
  int width;
  int kh;
  int kw;
  int stride;
  int pad;
  int out_h;
  int out_w;

  int rows() const { return channels * kh * kw; }
  int cols() const { return out_h * out_w; }
};

// Output columns ox whose input column ox*stride - pad + k falls inside
// [0, width): the half-open range [lo, hi).
void valid_range(const ConvGeom& g, int k, int& lo, int& hi) {
  const int off = k - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = g.width - 1 - off < 0 ? 0 : std::min(g.out_w, (g.width - 1 - off) / g.stride + 1);
  lo = std::min(lo, hi);
}

// Unfolds `image` (channels x height x width) into a (C*kh*kw) x (out_h*out_w)
// matrix so convolution becomes one GEMM.
void im2col(const double* image, const ConvGeom& g, double* cols) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        int lo = 0;
        int hi = 0;
        valid_range(g, kj, lo, hi);
        const int off = kj - g.pad;
        double* row = cols + static_cast<std::ptrdiff_t>((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* dst = row + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = image + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width + off;
          std::fill(dst, dst + lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) {
              dst[ox] = src[ox * g.stride];
            }
          }
          std::fill(dst + hi, dst + g.out_w, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into `image`.
void col2im(const double* cols, const ConvGeom& g, double* image) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        int lo = 0;
        int hi = 0;
        valid_range(g, kj, lo, hi);
        const int off = kj - g.pad;
        const double* row = cols + static_cast<std::ptrdiff_t>((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) {
            continue;
          }
          const double* src = row + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          double* dst = image + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width + off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) {
              dst[ox] += src[ox];
            }
          } else {
            for (int ox = lo; ox < hi; ++ox) {
              dst[ox * g.stride] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Scratch space that is fully overwritten before use.
std::unique_ptr<double[]> scratch(std::size_t n) { return std::unique_ptr<double[]>(new double[n]); }

bool is_pointwise(const ConvGeom& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

void check_bias(const Tensor& bias, int channels, const char* op) {
  if (bias.empty()) {
    return;
  }
  if (bias.numel() != static_cast<std::size_t>(channels)) {
    throw std::invalid_argument(
        fmt::format("{}: bias has {} elements but output channels = {}", op, bias.numel(), channels));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw std::invalid_argument(
        fmt::format("conv2d: weight in_channels {} does not match input channels {}", ws.c, xs.c));
  }
  if (ws.h % 2 == 0 || ws.w % 2 == 0) {
    throw std::invalid_argument(fmt::format("conv2d: kernel size {}x{} must be odd", ws.h, ws.w));
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument(fmt::format("conv2d: invalid stride {} / padding {}", stride, padding));
  }
  check_bias(bias, ws.n, "conv2d");
  const int out_h = (xs.h + 2 * padding - ws.h) / stride + 1;
  const int out_w = (xs.w + 2 * padding - ws.w) / stride + 1;
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument(
        fmt::format("conv2d: kernel {}x{} larger than padded input {}x{}", ws.h, ws.w, xs.h, xs.w));
  }
  const ConvGeom geom{xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding, out_h, out_w};
  const Shape os{xs.n, ws.n, out_h, out_w};
  const bool pointwise = is_pointwise(geom);

  std::vector<double> out(os.numel());
  const auto cols = scratch(pointwise ? 0 : static_cast<std::size_t>(geom.rows()) * geom.cols());
  const ConstMatMap wmat(weight.data().data(), ws.n, geom.rows());
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_stride = static_cast<std::size_t>(os.c) * geom.cols();
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = input.data().data() + n * in_stride;
    const double* colp = xn;
    if (!pointwise) {
      im2col(xn, geom, cols.get());
      colp = cols.get();
    }
    MatMap omat(out.data() + n * out_stride, os.c, geom.cols());
    omat.noalias() = wmat * ConstMatMap(colp, geom.rows(), geom.cols());
    if (!bias.empty()) {
      for (int oc = 0; oc < os.c; ++oc) {
        omat.row(oc).array() += bias[static_cast<std::size_t>(oc)];
      }
    }
  }

  Graph* g = Graph::common({&input, &weight, &bias});
  return emit(g, os, std::move(out),
              [geom, xs, ws, os, pointwise, x = input.shared_storage(), w = weight.shared_storage(),
               xid = id_of(g, input), wid = id_of(g, weight),
               bid = bias.empty() ? kNoNode : id_of(g, bias)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                auto gw = sink.grad(wid);
                auto gb = sink.grad(bid);
                const ConstMatMap wmat(w->data(), ws.n, geom.rows());
                const auto cols = scratch(static_cast<std::size_t>(geom.rows()) * geom.cols());
                const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
                const std::size_t out_stride = static_cast<std::size_t>(os.c) * geom.cols();
                for (int n = 0; n < xs.n; ++n) {
                  const ConstMatMap go(gout.data() + n * out_stride, os.c, geom.cols());
                  if (!gb.empty()) {
                    // Plain loop: Eigen's vectorized sum depends on pointer alignment.
                    for (int oc = 0; oc < os.c; ++oc) {
                      double s = 0.0;
                      for (int j = 0; j < geom.cols(); ++j) {
                        s += go(oc, j);
                      }
                      gb[static_cast<std::size_t>(oc)] += s;
                    }
                  }
                  if (!gw.empty()) {
                    const double* colp = x->data() + n * in_stride;
                    if (!pointwise) {
                      im2col(colp, geom, cols.get());
                      colp = cols.get();
                    }
                    MatMap(gw.data(), ws.n, geom.rows()).noalias() +=
                        go * ConstMatMap(colp, geom.rows(), geom.cols()).transpose();
                  }
                  if (!gx.empty()) {
                    if (pointwise) {
                      MatMap(gx.data() + n * in_stride, geom.rows(), geom.cols()).noalias() += wmat.transpose() * go;
                    } else {
                      MatMap(cols.get(), geom.rows(), geom.cols()).noalias() = wmat.transpose() * go;
                      col2im(cols.get(), geom, gx.data() + n * in_stride);
                    }
                  }
                }
              });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c) {
    throw std::invalid_argument(
        fmt::format("conv_transpose2d: weight in_channels {} does not match input channels {}", ws.n, xs.c));
  }
  if (stride < 1) {
    throw std::invalid_argument(fmt::format("conv_transpose2d: invalid stride {}", stride));
  }
  check_bias(bias, ws.c, "conv_transpose2d");
  const Shape os{xs.n, ws.c, stride * (xs.h - 1) + ws.h, stride * (xs.w - 1) + ws.w};
  // Geometry of the forward convolution this op is the adjoint of.
  const ConvGeom geom{os.c, os.h, os.w, ws.h, ws.w, stride, 0, xs.h, xs.w};
  const ConstMatMap wmat(weight.data().data(), xs.c, geom.rows());

  std::vector<double> out(os.numel(), 0.0);
  const auto cols = scratch(static_cast<std::size_t>(geom.rows()) * geom.cols());
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * geom.cols();
  const std::size_t out_stride = static_cast<std::size_t>(os.c) * os.h * os.w;
  for (int n = 0; n < xs.n; ++n) {
    const ConstMatMap xn(input.data().data() + n * in_stride, xs.c, geom.cols());
    MatMap(cols.get(), geom.rows(), geom.cols()).noalias() = wmat.transpose() * xn;
    double* on = out.data() + n * out_stride;
    col2im(cols.get(), geom, on);
    if (!bias.empty()) {
      const std::size_t plane = os.plane();
      for (int oc = 0; oc < os.c; ++oc) {
        const double b = bias[static_cast<std::size_t>(oc)];
        for (std::size_t i = 0; i < plane; ++i) {
          on[oc * plane + i] += b;
        }
      }
    }
  }

  Graph* g = Graph::common({&input, &weight, &bias});
  return emit(g, os, std::move(out),
              [geom, xs, ws, os, x = input.shared_storage(), w = weight.shared_storage(), xid = id_of(g, input),
               wid = id_of(g, weight),
               bid = bias.empty() ? kNoNode : id_of(g, bias)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                auto gw = sink.grad(wid);
                auto gb = sink.grad(bid);
                const ConstMatMap wmat(w->data(), xs.c, geom.rows());
                const auto cols = scratch(static_cast<std::size_t>(geom.rows()) * geom.cols());
                const std::size_t in_stride = static_cast<std::size_t>(xs.c) * geom.cols();
                const std::size_t out_stride = static_cast<std::size_t>(os.c) * os.h * os.w;
                const std::size_t plane = os.plane();
                for (int n = 0; n < xs.n; ++n) {
                  const double* gon = gout.data() + n * out_stride;
                  if (!gb.empty()) {
                    for (int oc = 0; oc < os.c; ++oc) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < plane; ++i) {
                        s += gon[oc * plane + i];
                      }
                      gb[static_cast<std::size_t>(oc)] += s;
                    }
                  }
                  if (gx.empty() && gw.empty()) {
                    continue;
                  }
                  im2col(gon, geom, cols.get());
                  const ConstMatMap gcols(cols.get(), geom.rows(), geom.cols());
                  if (!gx.empty()) {
                    MatMap(gx.data() + n * in_stride, xs.c, geom.cols()).noalias() += wmat * gcols;
                  }
                  if (!gw.empty()) {
                    const ConstMatMap xn(x->data() + n * in_stride, xs.c, geom.cols());
                    MatMap(gw.data(), xs.c, geom.rows()).noalias() += xn * gcols.transpose();
                  }
                }
              });
}

BatchNormState BatchNormState::fresh(int channels) {
  BatchNormState s;
  s.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  s.initialized = true;
  return s;
}

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                    double momentum, double eps) {
  const Shape xs = input.shape();
  const auto channels = static_cast<std::size_t>(xs.c);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw std::invalid_argument(fmt::format("batch_norm2d: gamma/beta lengths {}/{} do not match channels {}",
                                            gamma.numel(), beta.numel(), channels));
  }
  if (!(eps > 0.0)) {
    throw std::invalid_argument("batch_norm2d: eps must be positive");
  }
  const std::size_t plane = xs.plane();
  const auto count = static_cast<double>(xs.n) * static_cast<double>(plane);
  const auto& x = input.storage();
  auto idx = [&](int n, std::size_t c) { return (static_cast<std::size_t>(n) * channels + c) * plane; };

  std::vector<double> mean(channels);
  std::vector<double> inv_std(channels);
  if (mode == Mode::Train) {
    if (state.running_mean.size() != channels) {
      state = BatchNormState::fresh(xs.c);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const double* p = x.data() + idx(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
        }
      }
      double m = s / count;
      // Second pass corrects the rounding of the first.
      double r = 0.0;
      double q = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const double* p = x.data() + idx(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          r += p[i] - m;
        }
      }
      m += r / count;
      for (int n = 0; n < xs.n; ++n) {
        const double* p = x.data() + idx(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          q += d * d;
        }
      }
      const double v = q / count;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * v;
    }
    state.initialized = true;
  } else {
    if (!state.initialized || state.running_mean.size() != channels) {
      throw std::logic_error("batch_norm2d: eval mode requires initialized running statistics");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<double> xhat(xs.numel());
  std::vector<double> out(xs.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = idx(n, c);
      const double gm = gamma[c];
      const double bt = beta[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (x[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gm * h + bt;
      }
    }
  }

  Graph* g = Graph::common({&input, &gamma, &beta});
  if (g == nullptr) {
    return Tensor(xs, std::move(out));
  }
  auto saved = std::make_shared<const std::vector<double>>(std::move(xhat));
  return g->record(
      xs, std::move(out),
      [xs, plane, count, mode, saved, inv_std, gam = gamma.shared_storage(), xid = g->id_of(input),
       gid = g->id_of(gamma), bid = g->id_of(beta)](std::span<const double> gout, GradSink& sink) {
        auto gx = sink.grad(xid);
        auto gg = sink.grad(gid);
        auto gb = sink.grad(bid);
        const auto channels = static_cast<std::size_t>(xs.c);
        const auto& xh = *saved;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (int n = 0; n < xs.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += gout[base + i];
              sum_gx += gout[base + i] * xh[base + i];
            }
          }
          if (!gg.empty()) {
            gg[c] += sum_gx;
          }
          if (!gb.empty()) {
            gb[c] += sum_g;
          }
          if (gx.empty()) {
            continue;
          }
          const double scale = (*gam)[c] * inv_std[c];
          for (int n = 0; n < xs.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (mode == Mode::Train) {
                gx[base + i] += scale * (gout[base + i] - sum_g / count - xh[base + i] * sum_gx / count);
              } else {
                gx[base + i] += scale * gout[base + i];
              }
            }
          }
        }
      });
}

Tensor max_pool2(const Tensor& input) {
  const Shape xs = input.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw std::invalid_argument(fmt::format("max_pool2: spatial dimensions must be even, got {}", xs.str()));
  }
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  std::vector<double> out(os.numel());
  std::vector<std::uint32_t> arg(os.numel());
  const auto& x = input.storage();
  std::size_t o = 0;
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * xs.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * oy) * xs.w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = base + static_cast<std::size_t>(2 * oy + dy) * xs.w + 2 * ox + dx;
            if (x[i] > x[best]) {
              best = i;
            }
          }
        }
        out[o] = x[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  Graph* g = Graph::common({&input});
  return emit(g, os, std::move(out),
              [arg = std::move(arg), xid = id_of(g, input)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t i = 0; i < gout.size(); ++i) {
                  gx[arg[i]] += gout[i];
                }
              });
}

Tensor dropout(const Tensor& input, double p, Mode mode, RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument(fmt::format("dropout: probability {} outside [0, 1)", p));
  }
  if (mode == Mode::Eval || p == 0.0) {
    return input;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(input.numel());
  std::vector<double> out(input.numel());
  const auto& x = input.storage();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  Graph* g = Graph::common({&input});
  return emit(g, input.shape(), std::move(out),
              [mask = std::move(mask), xid = id_of(g, input)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t i = 0; i < gout.size(); ++i) {
                  gx[i] += gout[i] * mask[i];
                }
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] + b[i];
  }
  Graph* g = Graph::common({&a, &b});
  return emit(g, a.shape(), std::move(out),
              [aid = id_of(g, a), bid = id_of(g, b)](std::span<const double> gout, GradSink& sink) {
                accumulate(sink.grad(aid), gout);
                accumulate(sink.grad(bid), gout);
              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] - b[i];
  }
  Graph* g = Graph::common({&a, &b});
  return emit(g, a.shape(), std::move(out),
              [aid = id_of(g, a), bid = id_of(g, b)](std::span<const double> gout, GradSink& sink) {
                accumulate(sink.grad(aid), gout);
                auto gb = sink.grad(bid);
                for (std::size_t i = 0; i < gb.size(); ++i) {
                  gb[i] -= gout[i];
                }
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] * b[i];
  }
  Graph* g = Graph::common({&a, &b});
  return emit(g, a.shape(), std::move(out),
              [as = a.shared_storage(), bs = b.shared_storage(), aid = id_of(g, a),
               bid = id_of(g, b)](std::span<const double> gout, GradSink& sink) {
                auto ga = sink.grad(aid);
                auto gb = sink.grad(bid);
                for (std::size_t i = 0; i < ga.size(); ++i) {
                  ga[i] += gout[i] * (*bs)[i];
                }
                for (std::size_t i = 0; i < gb.size(); ++i) {
                  gb[i] += gout[i] * (*as)[i];
                }
              });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * factor;
  }
  Graph* g = Graph::common({&x});
  return emit(g, x.shape(), std::move(out), [factor, xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
    auto gx = sink.grad(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += gout[i] * factor;
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  Graph* g = Graph::common({&x});
  return emit(g, x.shape(), std::move(out),
              [xs = x.shared_storage(), xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t i = 0; i < gx.size(); ++i) {
                  if ((*xs)[i] > 0.0) {
                    gx[i] += gout[i];
                  }
                }
              });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = sigmoid_scalar(x[i]);
  }
  Graph* g = Graph::common({&x});
  if (g == nullptr) {
    return Tensor(x.shape(), std::move(out));
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return g->record(x.shape(), std::move(out), [y, xid = g->id_of(x)](std::span<const double> gout, GradSink& sink) {
    auto gx = sink.grad(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = (*y)[i];
      gx[i] += gout[i] * s * (1.0 - s);
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw std::invalid_argument(
        fmt::format("concat_channels: batch/spatial dimensions differ, {} vs {}", as.str(), bs.str()));
  }
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  const std::size_t a_block = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t b_block = static_cast<std::size_t>(bs.c) * bs.plane();
  std::vector<double> out(os.numel());
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.data().data() + n * a_block, a_block, out.data() + n * (a_block + b_block));
    std::copy_n(b.data().data() + n * b_block, b_block, out.data() + n * (a_block + b_block) + a_block);
  }
  Graph* g = Graph::common({&a, &b});
  return emit(g, os, std::move(out),
              [n_batch = as.n, a_block, b_block, aid = id_of(g, a), bid = id_of(g, b)](std::span<const double> gout,
                                                                                        GradSink& sink) {
                auto ga = sink.grad(aid);
                auto gb = sink.grad(bid);
                for (int n = 0; n < n_batch; ++n) {
                  const double* src = gout.data() + n * (a_block + b_block);
                  if (!ga.empty()) {
                    for (std::size_t i = 0; i < a_block; ++i) {
                      ga[n * a_block + i] += src[i];
                    }
                  }
                  if (!gb.empty()) {
                    for (std::size_t i = 0; i < b_block; ++i) {
                      gb[n * b_block + i] += src[a_block + i];
                    }
                  }
                }
              });
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  const Shape os{xs.n, xs.c, 1, 1};
  std::vector<double> out(os.numel());
  for (std::size_t k = 0; k < out.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      s += x[k * plane + i];
    }
    out[k] = s / static_cast<double>(plane);
  }
  Graph* g = Graph::common({&x});
  return emit(g, os, std::move(out), [plane, xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
    auto gx = sink.grad(xid);
    for (std::size_t k = 0; k < gout.size(); ++k) {
      const double v = gout[k] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        gx[k * plane + i] += v;
      }
    }
  });
}

Tensor global_max_pool(const Tensor& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  const Shape os{xs.n, xs.c, 1, 1};
  std::vector<double> out(os.numel());
  std::vector<std::size_t> arg(os.numel());
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t best = k * plane;
    for (std::size_t i = 1; i < plane; ++i) {
      if (x[k * plane + i] > x[best]) {
        best = k * plane + i;
      }
    }
    arg[k] = best;
    out[k] = x[best];
  }
  Graph* g = Graph::common({&x});
  return emit(g, os, std::move(out),
              [arg = std::move(arg), xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t k = 0; k < gout.size(); ++k) {
                  gx[arg[k]] += gout[k];
                }
              });
}

Tensor channel_mean_map(const Tensor& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  const Shape os{xs.n, 1, xs.h, xs.w};
  std::vector<double> out(os.numel(), 0.0);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[n * plane + i] += x[base + i];
      }
    }
  }
  for (auto& v : out) {
    v /= static_cast<double>(xs.c);
  }
  Graph* g = Graph::common({&x});
  return emit(g, os, std::move(out), [xs, plane, xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
    auto gx = sink.grad(xid);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gx[base + i] += gout[n * plane + i] / static_cast<double>(xs.c);
        }
      }
    }
  });
}

Tensor channel_max_map(const Tensor& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  const Shape os{xs.n, 1, xs.h, xs.w};
  std::vector<double> out(os.numel());
  std::vector<std::size_t> arg(os.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = static_cast<std::size_t>(n) * xs.c * plane + i;
      for (int c = 1; c < xs.c; ++c) {
        const std::size_t j = (static_cast<std::size_t>(n) * xs.c + c) * plane + i;
        if (x[j] > x[best]) {
          best = j;
        }
      }
      arg[n * plane + i] = best;
      out[n * plane + i] = x[best];
    }
  }
  Graph* g = Graph::common({&x});
  return emit(g, os, std::move(out),
              [arg = std::move(arg), xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t k = 0; k < gout.size(); ++k) {
                  gx[arg[k]] += gout[k];
                }
              });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  const Shape xs = x.shape();
  const Shape gs = gate.shape();
  if (gs.n != xs.n || gs.c != xs.c || gs.h != 1 || gs.w != 1) {
    throw std::invalid_argument(
        fmt::format("scale_channels: gate shape {} incompatible with input {}", gs.str(), xs.str()));
  }
  const std::size_t plane = xs.plane();
  std::vector<double> out(xs.numel());
  for (std::size_t k = 0; k < gate.numel(); ++k) {
    const double s = gate[k];
    for (std::size_t i = 0; i < plane; ++i) {
      out[k * plane + i] = x[k * plane + i] * s;
    }
  }
  Graph* g = Graph::common({&x, &gate});
  return emit(g, xs, std::move(out),
              [plane, xv = x.shared_storage(), gv = gate.shared_storage(), xid = id_of(g, x),
               gid = id_of(g, gate)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                auto gg = sink.grad(gid);
                const std::size_t groups = gv->size();
                for (std::size_t k = 0; k < groups; ++k) {
                  if (!gx.empty()) {
                    const double s = (*gv)[k];
                    for (std::size_t i = 0; i < plane; ++i) {
                      gx[k * plane + i] += gout[k * plane + i] * s;
                    }
                  }
                  if (!gg.empty()) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                      acc += gout[k * plane + i] * (*xv)[k * plane + i];
                    }
                    gg[k] += acc;
                  }
                }
              });
}

Tensor scale_spatial(const Tensor& x, const Tensor& gate) {
  const Shape xs = x.shape();
  const Shape gs = gate.shape();
  if (gs.n != xs.n || gs.c != 1 || gs.h != xs.h || gs.w != xs.w) {
    throw std::invalid_argument(
        fmt::format("scale_spatial: gate shape {} incompatible with input {}", gs.str(), xs.str()));
  }
  const std::size_t plane = xs.plane();
  std::vector<double> out(xs.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = x[base + i] * gate[n * plane + i];
      }
    }
  }
  Graph* g = Graph::common({&x, &gate});
  return emit(g, xs, std::move(out),
              [xs, plane, xv = x.shared_storage(), gv = gate.shared_storage(), xid = id_of(g, x),
               gid = id_of(g, gate)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                auto gg = sink.grad(gid);
                for (int n = 0; n < xs.n; ++n) {
                  for (int c = 0; c < xs.c; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                      if (!gx.empty()) {
                        gx[base + i] += gout[base + i] * (*gv)[n * plane + i];
                      }
                      if (!gg.empty()) {
                        gg[n * plane + i] += gout[base + i] * (*xv)[base + i];
                      }
                    }
                  }
                }
              });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) {
    s += v;
  }
  Graph* g = Graph::common({&x});
  return emit(g, Shape{}, {s}, [xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
    for (auto& v : sink.grad(xid)) {
      v += gout[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor var(const Tensor& x) {
  const auto count = static_cast<double>(x.numel());
  double m = 0.0;
  for (double v : x.data()) {
    m += v;
  }
  m /= count;
  double q = 0.0;
  for (double v : x.data()) {
    q += (v - m) * (v - m);
  }
  Graph* g = Graph::common({&x});
  return emit(g, Shape{}, {q / count},
              [m, count, xv = x.shared_storage(), xid = id_of(g, x)](std::span<const double> gout, GradSink& sink) {
                auto gx = sink.grad(xid);
                for (std::size_t i = 0; i < gx.size(); ++i) {
                  gx[i] += gout[0] * 2.0 * ((*xv)[i] - m) / count;
                }
              });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const auto count = static_cast<double>(pred.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  Graph* g = Graph::common({&pred, &target});
  return emit(g, Shape{}, {s / count},
              [count, p = pred.shared_storage(), t = target.shared_storage(), pid = id_of(g, pred),
               tid = id_of(g, target)](std::span<const double> gout, GradSink& sink) {
                auto gp = sink.grad(pid);
                auto gt = sink.grad(tid);
                for (std::size_t i = 0; i < p->size(); ++i) {
                  const double d = 2.0 * ((*p)[i] - (*t)[i]) / count * gout[0];
                  if (!gp.empty()) {
                    gp[i] += d;
                  }
                  if (!gt.empty()) {
                    gt[i] -= d;
                  }
                }
              });
}

} // namespace cmr::ops
