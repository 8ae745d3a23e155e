#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "semfeat/core/rng.hpp"
#include "semfeat/core/tensor.hpp"

namespace semfeat::model {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Stride-1 same-padding convolution. Weight layout is GEMM-ready:
// (kernel*kernel*in_ch, out_ch), patch offsets scanning row-major.
template <class T>
struct Conv2d {
  int kernel = 3;
  int in_ch = 0;
  int out_ch = 0;
  Tensor<T> weight;
  Tensor<T> bias;

  void init(int k, int cin, int cout, Rng& rng) {
    kernel = k;
    in_ch = cin;
    out_ch = cout;
    weight = Tensor<T>(k * k * cin, cout);
    bias = Tensor<T>(cout);
    const double limit = std::sqrt(6.0 / (k * k * cin));  // He-uniform
    for (std::size_t i = 0; i < weight.size(); ++i)
      weight[i] = static_cast<T>(rng.uniform(-limit, limit));
  }

  Conv2d shaped_like() const {
    Conv2d g;
    g.kernel = kernel;
    g.in_ch = in_ch;
    g.out_ch = out_ch;
    g.weight = Tensor<T>(kernel * kernel * in_ch, out_ch);
    g.bias = Tensor<T>(out_ch);
    return g;
  }
};

template <class T>
Tensor<T> im2col(const Tensor<T>& x, int kernel) {
  const int rows = x.dim(0), cols = x.dim(1), ch = x.dim(2);
  const int k = kernel, pad = kernel / 2;
  Tensor<T> col(rows * cols, k * k * ch);
  for (int y = 0; y < rows; ++y) {
    for (int x0 = 0; x0 < cols; ++x0) {
      T* dst = col.data() + (static_cast<std::size_t>(y) * cols + x0) * (k * k * ch);
      for (int dy = 0; dy < k; ++dy) {
        const int sy = y + dy - pad;
        for (int dx = 0; dx < k; ++dx, dst += ch) {
          const int sx = x0 + dx - pad;
          if (sy < 0 || sy >= rows || sx < 0 || sx >= cols) continue;
          const T* src = x.data() + (static_cast<std::size_t>(sy) * cols + sx) * ch;
          for (int c = 0; c < ch; ++c) dst[c] = src[c];
        }
      }
    }
  }
  return col;
}

template <class T>
void col2im_add(const Tensor<T>& col, int kernel, Tensor<T>& x_grad) {
  const int rows = x_grad.dim(0), cols = x_grad.dim(1), ch = x_grad.dim(2);
  const int k = kernel, pad = kernel / 2;
  for (int y = 0; y < rows; ++y) {
    for (int x0 = 0; x0 < cols; ++x0) {
      const T* src = col.data() + (static_cast<std::size_t>(y) * cols + x0) * (k * k * ch);
      for (int dy = 0; dy < k; ++dy) {
        const int sy = y + dy - pad;
        for (int dx = 0; dx < k; ++dx, src += ch) {
          const int sx = x0 + dx - pad;
          if (sy < 0 || sy >= rows || sx < 0 || sx >= cols) continue;
          T* dst = x_grad.data() + (static_cast<std::size_t>(sy) * cols + sx) * ch;
          for (int c = 0; c < ch; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2d<T>& conv) {
  const int rows = x.dim(0), cols = x.dim(1);
  if (x.dim(2) != conv.in_ch)
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(2)) +
                     " channels, weights expect " + std::to_string(conv.in_ch));
  Tensor<T> y(rows, cols, conv.out_ch);
  MapRM<T> ym(y.data(), rows * cols, conv.out_ch);
  CMapRM<T> wm(conv.weight.data(), conv.weight.dim(0), conv.weight.dim(1));
  if (conv.kernel == 1) {
    CMapRM<T> xm(x.data(), rows * cols, conv.in_ch);
    ym.noalias() = xm * wm;
  } else {
    const Tensor<T> col = im2col(x, conv.kernel);
    CMapRM<T> cm(col.data(), col.dim(0), col.dim(1));
    ym.noalias() = cm * wm;
  }
  CMapRM<T> bm(conv.bias.data(), 1, conv.out_ch);
  ym.rowwise() += bm.row(0);
  return y;
}

// Accumulates weight/bias gradients into `grad`; writes input gradient into
// dx when non-null (dx is overwritten, not accumulated).
template <class T>
void conv2d_backward(const Tensor<T>& x, const Conv2d<T>& conv, const Tensor<T>& dy,
                     Conv2d<T>& grad, Tensor<T>* dx) {
  const int rows = x.dim(0), cols = x.dim(1);
  CMapRM<T> dym(dy.data(), rows * cols, conv.out_ch);
  MapRM<T> dwm(grad.weight.data(), grad.weight.dim(0), grad.weight.dim(1));
  MapRM<T> dbm(grad.bias.data(), 1, conv.out_ch);
  dbm.row(0) += dym.colwise().sum();

  if (conv.kernel == 1) {
    CMapRM<T> xm(x.data(), rows * cols, conv.in_ch);
    dwm.noalias() += xm.transpose() * dym;
    if (dx) {
      *dx = Tensor<T>(rows, cols, conv.in_ch);
      MapRM<T> dxm(dx->data(), rows * cols, conv.in_ch);
      CMapRM<T> wm(conv.weight.data(), conv.weight.dim(0), conv.weight.dim(1));
      dxm.noalias() = dym * wm.transpose();
    }
    return;
  }

  const Tensor<T> col = im2col(x, conv.kernel);
  CMapRM<T> cm(col.data(), col.dim(0), col.dim(1));
  dwm.noalias() += cm.transpose() * dym;
  if (dx) {
    Tensor<T> dcol(col.dim(0), col.dim(1));
    MapRM<T> dcm(dcol.data(), dcol.dim(0), dcol.dim(1));
    CMapRM<T> wm(conv.weight.data(), conv.weight.dim(0), conv.weight.dim(1));
    dcm.noalias() = dym * wm.transpose();
    *dx = Tensor<T>(rows, cols, conv.in_ch);
    col2im_add(dcol, conv.kernel, *dx);
  }
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < T(0)) y[i] = T(0);
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (y[i] <= T(0)) dx[i] = T(0);
  return dx;
}

template <class T>
std::pair<Tensor<T>, Tensor<int>> maxpool2_forward(const Tensor<T>& x) {
  const int rows = x.dim(0), cols = x.dim(1), ch = x.dim(2);
  Tensor<T> y(rows / 2, cols / 2, ch);
  Tensor<int> idx(rows / 2, cols / 2, ch);  // winning offset 0..3, row-major in the 2x2 window
  for (int y0 = 0; y0 < rows / 2; ++y0)
    for (int x0 = 0; x0 < cols / 2; ++x0)
      for (int c = 0; c < ch; ++c) {
        T best = x(2 * y0, 2 * x0, c);
        int best_k = 0;
        for (int k = 1; k < 4; ++k) {
          const T v = x(2 * y0 + k / 2, 2 * x0 + k % 2, c);
          if (v > best) {
            best = v;
            best_k = k;
          }
        }
        y(y0, x0, c) = best;
        idx(y0, x0, c) = best_k;
      }
  return {std::move(y), std::move(idx)};
}

template <class T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const Tensor<int>& idx, int rows, int cols) {
  const int ch = dy.dim(2);
  Tensor<T> dx(rows, cols, ch);
  for (int y0 = 0; y0 < dy.dim(0); ++y0)
    for (int x0 = 0; x0 < dy.dim(1); ++x0)
      for (int c = 0; c < ch; ++c) {
        const int k = idx(y0, x0, c);
        dx(2 * y0 + k / 2, 2 * x0 + k % 2, c) += dy(y0, x0, c);
      }
  return dx;
}

template <class T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  const int rows = x.dim(0), cols = x.dim(1), ch = x.dim(2);
  Tensor<T> y(rows * 2, cols * 2, ch);
  for (int yy = 0; yy < rows * 2; ++yy)
    for (int xx = 0; xx < cols * 2; ++xx)
      for (int c = 0; c < ch; ++c) y(yy, xx, c) = x(yy / 2, xx / 2, c);
  return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  const int rows = dy.dim(0) / 2, cols = dy.dim(1) / 2, ch = dy.dim(2);
  Tensor<T> dx(rows, cols, ch);
  for (int yy = 0; yy < dy.dim(0); ++yy)
    for (int xx = 0; xx < dy.dim(1); ++xx)
      for (int c = 0; c < ch; ++c) dx(yy / 2, xx / 2, c) += dy(yy, xx, c);
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const int rows = a.dim(0), cols = a.dim(1);
  if (b.dim(0) != rows || b.dim(1) != cols)
    throw ShapeError("concat_channels: spatial mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  Tensor<T> y(rows, cols, a.dim(2) + b.dim(2));
  for (int yy = 0; yy < rows; ++yy)
    for (int xx = 0; xx < cols; ++xx) {
      for (int c = 0; c < a.dim(2); ++c) y(yy, xx, c) = a(yy, xx, c);
      for (int c = 0; c < b.dim(2); ++c) y(yy, xx, a.dim(2) + c) = b(yy, xx, c);
    }
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int ch_a, int ch_b) {
  const int rows = dy.dim(0), cols = dy.dim(1);
  Tensor<T> da(rows, cols, ch_a), db(rows, cols, ch_b);
  for (int yy = 0; yy < rows; ++yy)
    for (int xx = 0; xx < cols; ++xx) {
      for (int c = 0; c < ch_a; ++c) da(yy, xx, c) = dy(yy, xx, c);
      for (int c = 0; c < ch_b; ++c) db(yy, xx, c) = dy(yy, xx, ch_a + c);
    }
  return {std::move(da), std::move(db)};
}

template <class T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-y[i]));
  return y;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
  return dx;
}

template <class T>
Tensor<T> softmax_channels_forward(const Tensor<T>& x) {
  const int rows = x.dim(0), cols = x.dim(1), ch = x.dim(2);
  Tensor<T> p(rows, cols, ch);
  for (int y = 0; y < rows; ++y)
    for (int xx = 0; xx < cols; ++xx) {
      T mx = x(y, xx, 0);
      for (int c = 1; c < ch; ++c) mx = std::max(mx, x(y, xx, c));
      T sum = T(0);
      for (int c = 0; c < ch; ++c) {
        const T e = std::exp(x(y, xx, c) - mx);
        p(y, xx, c) = e;
        sum += e;
      }
      for (int c = 0; c < ch; ++c) p(y, xx, c) /= sum;
    }
  return p;
}

template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& p, const Tensor<T>& dy) {
  const int rows = p.dim(0), cols = p.dim(1), ch = p.dim(2);
  Tensor<T> dx(rows, cols, ch);
  for (int y = 0; y < rows; ++y)
    for (int xx = 0; xx < cols; ++xx) {
      T dot = T(0);
      for (int c = 0; c < ch; ++c) dot += dy(y, xx, c) * p(y, xx, c);
      for (int c = 0; c < ch; ++c) dx(y, xx, c) = p(y, xx, c) * (dy(y, xx, c) - dot);
    }
  return dx;
}

// Per-location L2 normalization. Near-zero vectors fall back to the first
// basis vector and propagate zero gradient.
template <class T>
constexpr T kL2NormFloor = T(1e-12);

template <class T>
std::pair<Tensor<T>, Tensor<T>> l2norm_channels_forward(const Tensor<T>& x) {
  const int rows = x.dim(0), cols = x.dim(1), ch = x.dim(2);
  Tensor<T> y(rows, cols, ch);
  Tensor<T> norms(rows, cols);
  for (int yy = 0; yy < rows; ++yy)
    for (int xx = 0; xx < cols; ++xx) {
      T s = T(0);
      for (int c = 0; c < ch; ++c) s += x(yy, xx, c) * x(yy, xx, c);
      const T n = std::sqrt(s);
      norms(yy, xx) = n;
      if (n < kL2NormFloor<T>) {
        y(yy, xx, 0) = T(1);
        for (int c = 1; c < ch; ++c) y(yy, xx, c) = T(0);
      } else {
        for (int c = 0; c < ch; ++c) y(yy, xx, c) = x(yy, xx, c) / n;
      }
    }
  return {std::move(y), std::move(norms)};
}

template <class T>
Tensor<T> l2norm_channels_backward(const Tensor<T>& y, const Tensor<T>& norms,
                                   const Tensor<T>& dy) {
  const int rows = y.dim(0), cols = y.dim(1), ch = y.dim(2);
  Tensor<T> dx(rows, cols, ch);
  for (int yy = 0; yy < rows; ++yy)
    for (int xx = 0; xx < cols; ++xx) {
      const T n = norms(yy, xx);
      if (n < kL2NormFloor<T>) continue;
      T dot = T(0);
      for (int c = 0; c < ch; ++c) dot += dy(yy, xx, c) * y(yy, xx, c);
      for (int c = 0; c < ch; ++c)
        dx(yy, xx, c) = (dy(yy, xx, c) - y(yy, xx, c) * dot) / n;
    }
  return dx;
}

}  // namespace semfeat::model
