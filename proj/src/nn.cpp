#include "ceph/nn.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace ceph::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Column matrix of shape (in * k * k, h * w).
RowMatrix im2col(const Tensor& input, int k, int dilation) {
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int pad = dilation * (k - 1) / 2;
  RowMatrix cols(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = input.data() + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(ch) * k + ky) * k + kx).data();
        const int dy = ky * dilation - pad;
        const int dx = kx * dilation - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          double* dst = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx;
            dst[x] = (sx >= 0 && sx < w) ? srow[sx] : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix& cols, int k, int dilation, Tensor& out) {
  const int c = out.dim(0), h = out.dim(1), w = out.dim(2);
  const int pad = dilation * (k - 1) / 2;
  out.fill(0.0);
  for (int ch = 0; ch < c; ++ch) {
    double* dst = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(ch) * k + ky) * k + kx).data();
        const int dy = ky * dilation - pad;
        const int dx = kx * dilation - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<std::size_t>(y) * w;
          double* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx;
            if (sx >= 0 && sx < w) drow[sx] += src[x];
          }
        }
      }
    }
  }
}

struct Tap {
  int i0;
  int i1;
  double frac;
};

std::vector<Tap> sample_taps(int in, int out, SampleGrid grid) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = grid == SampleGrid::kHalfPixel ? (d + 0.5) * ratio - 0.5 : d * ratio;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Conv2d::Conv2d(std::string name, int in, int out, int k, int dil)
    : weight(name + ".weight", {out, in, k, k}),
      bias(name + ".bias", {out}),
      in_channels(in),
      out_channels(out),
      kernel(k),
      dilation(dil) {
  CEPH_REQUIRE(k % 2 == 1, "convolution kernel must be odd");
}

void Conv2d::init(std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_channels * kernel * kernel)));
  for (double& v : weight.value.values()) v = dist(rng);
  bias.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& input) const {
  CEPH_REQUIRE(input.rank() == 3 && input.dim(0) == in_channels,
               "conv input " + shape_string(input.shape()) + " does not match " +
                   weight.name);
  const int h = input.dim(1), w = input.dim(2);
  Tensor out({out_channels, h, w});
  MapMatrix o(out.data(), out_channels, static_cast<Eigen::Index>(h) * w);
  ConstMapMatrix wt(weight.value.data(), out_channels,
                    static_cast<Eigen::Index>(in_channels) * kernel * kernel);
  if (kernel == 1) {
    ConstMapMatrix in(input.data(), in_channels, static_cast<Eigen::Index>(h) * w);
    o.noalias() = wt * in;
  } else {
    o.noalias() = wt * im2col(input, kernel, dilation);
  }
  for (int c = 0; c < out_channels; ++c) o.row(c).array() += bias.value[c];
  return out;
}

Tensor Conv2d::backward(const Tensor& input, const Tensor& grad_out, bool need_input_grad) {
  const int h = input.dim(1), w = input.dim(2);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kk = static_cast<Eigen::Index>(in_channels) * kernel * kernel;
  ConstMapMatrix go(grad_out.data(), out_channels, hw);
  MapMatrix gw(weight.grad.data(), out_channels, kk);
  ConstMapMatrix wt(weight.value.data(), out_channels, kk);
  for (int c = 0; c < out_channels; ++c) bias.grad[c] += go.row(c).sum();

  Tensor grad_in;
  if (kernel == 1) {
    ConstMapMatrix in(input.data(), in_channels, hw);
    gw.noalias() += go * in.transpose();
    if (need_input_grad) {
      grad_in = Tensor({in_channels, h, w});
      MapMatrix gi(grad_in.data(), in_channels, hw);
      gi.noalias() = wt.transpose() * go;
    }
  } else {
    const RowMatrix cols = im2col(input, kernel, dilation);
    gw.noalias() += go * cols.transpose();
    if (need_input_grad) {
      RowMatrix gcols = wt.transpose() * go;
      grad_in = Tensor({in_channels, h, w});
      col2im(gcols, kernel, dilation, grad_in);
    }
  }
  return grad_in;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  // NaN passes through so that corrupt inputs surface as a non-finite loss.
  for (double& v : y.values()) v = v < 0.0 ? 0.0 : v;
  return y;
}

Tensor relu_backward(const Tensor& activation, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(activation[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

PoolResult max_pool2(const Tensor& input) {
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  CEPH_REQUIRE(h % 2 == 0 && w % 2 == 0,
               "max pooling needs even extents, got " + shape_string(input.shape()));
  const int oh = h / 2, ow = w / 2;
  PoolResult r{Tensor({c, oh, ow}), std::vector<std::uint32_t>(static_cast<std::size_t>(c) * oh * ow)};
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++o) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best] || std::isnan(input[idx])) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor max_pool2_backward(const std::vector<int>& input_shape,
                          const std::vector<std::uint32_t>& argmax, const Tensor& grad_out) {
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w, SampleGrid grid) {
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  CEPH_REQUIRE(h > 0 && w > 0 && out_h > 0 && out_w > 0, "resize of an empty grid");
  if (h == out_h && w == out_w) return input;
  const auto ty = sample_taps(h, out_h, grid);
  const auto tx = sample_taps(w, out_w, grid);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = input.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double* r0 = src + static_cast<std::size_t>(ty[y].i0) * w;
      const double* r1 = src + static_cast<std::size_t>(ty[y].i1) * w;
      const double fy = ty[y].frac;
      for (int x = 0; x < out_w; ++x) {
        const Tap& t = tx[x];
        const double top = r0[t.i0] + t.frac * (r0[t.i1] - r0[t.i0]);
        const double bot = r1[t.i0] + t.frac * (r1[t.i1] - r1[t.i0]);
        dst[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, int in_h, int in_w, SampleGrid grid) {
  const int c = grad_out.dim(0), out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  if (in_h == out_h && in_w == out_w) return grad_out;
  const auto ty = sample_taps(in_h, out_h, grid);
  const auto tx = sample_taps(in_w, out_w, grid);
  Tensor g({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = grad_out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    double* dst = g.data() + static_cast<std::size_t>(ch) * in_h * in_w;
    for (int y = 0; y < out_h; ++y) {
      double* r0 = dst + static_cast<std::size_t>(ty[y].i0) * in_w;
      double* r1 = dst + static_cast<std::size_t>(ty[y].i1) * in_w;
      const double fy = ty[y].frac;
      for (int x = 0; x < out_w; ++x) {
        const Tap& t = tx[x];
        const double v = src[static_cast<std::size_t>(y) * out_w + x];
        const double top = v * (1.0 - fy);
        const double bot = v * fy;
        r0[t.i0] += top * (1.0 - t.frac);
        r0[t.i1] += top * t.frac;
        r1[t.i0] += bot * (1.0 - t.frac);
        r1[t.i1] += bot * t.frac;
      }
    }
  }
  return g;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace ceph::nn

namespace ceph {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace ceph
