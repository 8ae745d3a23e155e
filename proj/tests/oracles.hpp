#pragma once

// Test-only reference implementations, deliberately written as plain scalar
// loops so they stay independent of the vectorized library paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "semfeat/core/tensor.hpp"
#include "semfeat/model/mixer.hpp"

namespace oracles {

using semfeat::Tensor;

// Scalar triple-loop attention fusion: for each location, q = W_q z, keys and
// values from the embedding columns, softmax over the three logits, weighted
// value sum. No matrix library involved.
template <class T>
Tensor<T> ctmm_scalar(const Tensor<T>& z, const semfeat::model::MixerParams<T>& p,
                      const semfeat::model::TaskEmbeddings<T>& emb) {
  const int h = z.dim(0), w = z.dim(1), d_enc = z.dim(2);
  const int d = p.w_q.dim(0), d_task = emb.e.dim(1);
  Tensor<T> out(h, w, d);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      std::vector<T> q(d, T(0));
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d_enc; ++j) q[i] += p.w_q(i, j) * z(u, v, j);

      T logits[3];
      for (int t = 0; t < 3; ++t) {
        // column t of K = W_k * T, with T the task embeddings used column-wise
        T dot = T(0);
        for (int i = 0; i < d; ++i) {
          T k_it = T(0);
          for (int j = 0; j < d_task; ++j) k_it += p.w_k(i, j) * emb.e(t, j);
          dot += q[i] * k_it;
        }
        logits[t] = dot / std::sqrt(static_cast<T>(d));
      }

      T mx = std::max(logits[0], std::max(logits[1], logits[2]));
      T alpha[3], sum = T(0);
      for (int t = 0; t < 3; ++t) {
        alpha[t] = std::exp(logits[t] - mx);
        sum += alpha[t];
      }
      for (int t = 0; t < 3; ++t) alpha[t] /= sum;

      for (int i = 0; i < d; ++i) {
        T acc = T(0);
        for (int t = 0; t < 3; ++t) {
          T v_it = T(0);
          for (int j = 0; j < d_task; ++j) v_it += p.w_v(i, j) * emb.e(t, j);
          acc += alpha[t] * v_it;
        }
        out(u, v, i) = acc;
        if (p.residual) {
          T r = T(0);
          for (int j = 0; j < d_enc; ++j) r += p.w_r(i, j) * z(u, v, j);
          out(u, v, i) += r;
        }
      }
    }
  }
  return out;
}

// Central finite differences of a scalar function over a parameter tensor.
// Returns the worst relative error against the provided analytic gradient.
template <class T>
double fd_check(Tensor<T>& param, const Tensor<T>& analytic,
                const std::function<double()>& eval, double step = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T saved = param[i];
    param[i] = saved + static_cast<T>(step);
    const double up = eval();
    param[i] = saved - static_cast<T>(step);
    const double down = eval();
    param[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double an = analytic[i];
    const double denom = std::max(1e-2, std::max(std::abs(fd), std::abs(an)));
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace oracles
