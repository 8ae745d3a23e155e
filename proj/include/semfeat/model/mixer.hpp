#pragma once

#include <cmath>
#include <utility>

#include "semfeat/core/rng.hpp"
#include "semfeat/core/tensor.hpp"
#include "semfeat/model/layers.hpp"

namespace semfeat::model {

inline constexpr int kNumTasks = 3;  // kp, desc, seg

// Task embedding bank, shared by all mixer instances. Row order: kp, desc, seg.
template <class T>
struct TaskEmbeddings {
  Tensor<T> e;  // (3, d_task)

  void init(int d_task, Rng& rng) {
    e = Tensor<T>(kNumTasks, d_task);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d_task));
    for (std::size_t i = 0; i < e.size(); ++i)
      e[i] = static_cast<T>(rng.normal(0.0, sigma));
  }

  TaskEmbeddings shaped_like() const {
    TaskEmbeddings g;
    g.e = Tensor<T>(e.dim(0), e.dim(1));
    return g;
  }
};

// Per-decoder attention projections. The task embeddings are used column-wise
// (d_task x 3), so keys and values are d_attn x 3 with one column per task.
template <class T>
struct MixerParams {
  Tensor<T> w_q;  // (d_attn, d_enc)
  Tensor<T> w_k;  // (d_attn, d_task)
  Tensor<T> w_v;  // (d_attn, d_task)
  Tensor<T> w_r;  // (d_attn, d_enc), only used when residual is set
  bool residual = false;

  void init(int d_attn, int d_enc, int d_task, bool with_residual, Rng& rng) {
    residual = with_residual;
    auto fill = [&](Tensor<T>& w, int rows, int cols) {
      w = Tensor<T>(rows, cols);
      const double limit = std::sqrt(6.0 / cols);
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<T>(rng.uniform(-limit, limit));
    };
    fill(w_q, d_attn, d_enc);
    fill(w_k, d_attn, d_task);
    fill(w_v, d_attn, d_task);
    fill(w_r, d_attn, d_enc);
    if (!with_residual) w_r.set_zero();
  }

  MixerParams shaped_like() const {
    MixerParams g;
    g.residual = residual;
    g.w_q = Tensor<T>(w_q.dim(0), w_q.dim(1));
    g.w_k = Tensor<T>(w_k.dim(0), w_k.dim(1));
    g.w_v = Tensor<T>(w_v.dim(0), w_v.dim(1));
    g.w_r = Tensor<T>(w_r.dim(0), w_r.dim(1));
    return g;
  }
};

template <class T>
struct MixerCache {
  Tensor<T> q;      // (h*w, d_attn)
  Tensor<T> alpha;  // (h*w, 3)
  Tensor<T> kt;     // (3, d_attn): transposed key matrix
  Tensor<T> vt;     // (3, d_attn): transposed value matrix
};

template <class T>
void check_mixer_shapes(const Tensor<T>& z, const MixerParams<T>& p,
                        const TaskEmbeddings<T>& emb) {
  if (z.rank() != 3)
    throw ShapeError("ctmm_fuse: bottleneck must be rank 3, got " + z.shape_str());
  if (p.w_q.dim(1) != z.dim(2))
    throw ShapeError("ctmm_fuse: w_q expects d_enc=" + std::to_string(p.w_q.dim(1)) +
                     " but bottleneck has " + std::to_string(z.dim(2)) + " channels");
  if (p.w_k.dim(1) != emb.e.dim(1) || p.w_v.dim(1) != emb.e.dim(1))
    throw ShapeError("ctmm_fuse: key/value projections expect d_task=" +
                     std::to_string(p.w_k.dim(1)) + "/" + std::to_string(p.w_v.dim(1)) +
                     " but embeddings have " + std::to_string(emb.e.dim(1)));
  if (p.w_k.dim(0) != p.w_q.dim(0) || p.w_v.dim(0) != p.w_q.dim(0))
    throw ShapeError("ctmm_fuse: inconsistent attention dims q=" +
                     std::to_string(p.w_q.dim(0)) + " k=" + std::to_string(p.w_k.dim(0)) +
                     " v=" + std::to_string(p.w_v.dim(0)));
}

// Attention fusion over the three task columns:
//   q = W_q z;  K = W_k T, V = W_v T (T used column-wise, d_task x 3)
//   alpha = softmax(q^T K / sqrt(d));  out = sum_t alpha[t] v_t
template <class T>
Tensor<T> ctmm_fuse(const Tensor<T>& z, const MixerParams<T>& p,
                    const TaskEmbeddings<T>& emb, MixerCache<T>* cache = nullptr) {
  check_mixer_shapes(z, p, emb);
  const int h = z.dim(0), w = z.dim(1), d_enc = z.dim(2);
  const int n = h * w, d = p.w_q.dim(0);

  CMapRM<T> zm(z.data(), n, d_enc);
  CMapRM<T> wq(p.w_q.data(), d, d_enc);
  CMapRM<T> wk(p.w_k.data(), d, p.w_k.dim(1));
  CMapRM<T> wv(p.w_v.data(), d, p.w_v.dim(1));
  CMapRM<T> em(emb.e.data(), kNumTasks, emb.e.dim(1));

  Tensor<T> q(n, d), kt(kNumTasks, d), vt(kNumTasks, d), alpha(n, kNumTasks);
  MapRM<T> qm(q.data(), n, d);
  MapRM<T> ktm(kt.data(), kNumTasks, d);
  MapRM<T> vtm(vt.data(), kNumTasks, d);
  MapRM<T> am(alpha.data(), n, kNumTasks);

  qm.noalias() = zm * wq.transpose();
  ktm.noalias() = em * wk.transpose();
  vtm.noalias() = em * wv.transpose();

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  am.noalias() = qm * ktm.transpose() * inv_sqrt_d;
  for (int i = 0; i < n; ++i) {
    T mx = am(i, 0);
    for (int t = 1; t < kNumTasks; ++t) mx = std::max(mx, am(i, t));
    T sum = T(0);
    for (int t = 0; t < kNumTasks; ++t) {
      am(i, t) = std::exp(am(i, t) - mx);
      sum += am(i, t);
    }
    for (int t = 0; t < kNumTasks; ++t) am(i, t) /= sum;
  }

  Tensor<T> out(h, w, d);
  MapRM<T> om(out.data(), n, d);
  om.noalias() = am * vtm;
  if (p.residual) {
    CMapRM<T> wr(p.w_r.data(), d, d_enc);
    om.noalias() += zm * wr.transpose();
  }

  if (cache) {
    cache->q = std::move(q);
    cache->alpha = std::move(alpha);
    cache->kt = std::move(kt);
    cache->vt = std::move(vt);
  }
  return out;
}

// Accumulates parameter gradients into `grad` / `emb_grad`; returns dL/dz.
template <class T>
Tensor<T> ctmm_backward(const Tensor<T>& z, const MixerParams<T>& p,
                        const TaskEmbeddings<T>& emb, const MixerCache<T>& cache,
                        const Tensor<T>& dout, MixerParams<T>& grad,
                        TaskEmbeddings<T>& emb_grad) {
  const int h = z.dim(0), w = z.dim(1), d_enc = z.dim(2);
  const int n = h * w, d = p.w_q.dim(0);
  const int d_task = emb.e.dim(1);

  CMapRM<T> zm(z.data(), n, d_enc);
  CMapRM<T> dom(dout.data(), n, d);
  CMapRM<T> qm(cache.q.data(), n, d);
  CMapRM<T> am(cache.alpha.data(), n, kNumTasks);
  CMapRM<T> ktm(cache.kt.data(), kNumTasks, d);
  CMapRM<T> vtm(cache.vt.data(), kNumTasks, d);
  CMapRM<T> em(emb.e.data(), kNumTasks, d_task);
  CMapRM<T> wq(p.w_q.data(), d, d_enc);
  CMapRM<T> wk(p.w_k.data(), d, d_task);
  CMapRM<T> wv(p.w_v.data(), d, d_task);

  // out = alpha * Vt (+ residual)
  MatRM<T> dalpha = dom * vtm.transpose();           // (n, 3)
  MatRM<T> dvt = am.transpose() * dom;               // (3, d)

  // softmax rows
  MatRM<T> dlogits(n, kNumTasks);
  for (int i = 0; i < n; ++i) {
    T dot = T(0);
    for (int t = 0; t < kNumTasks; ++t) dot += dalpha(i, t) * am(i, t);
    for (int t = 0; t < kNumTasks; ++t)
      dlogits(i, t) = am(i, t) * (dalpha(i, t) - dot);
  }

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  MatRM<T> dq = dlogits * ktm * inv_sqrt_d;          // (n, d)
  MatRM<T> dkt = dlogits.transpose() * qm * inv_sqrt_d;  // (3, d)

  MapRM<T> g_wq(grad.w_q.data(), d, d_enc);
  MapRM<T> g_wk(grad.w_k.data(), d, d_task);
  MapRM<T> g_wv(grad.w_v.data(), d, d_task);
  MapRM<T> g_e(emb_grad.e.data(), kNumTasks, d_task);

  g_wq.noalias() += dq.transpose() * zm;
  g_wk.noalias() += dkt.transpose() * em;
  g_wv.noalias() += dvt.transpose() * em;
  g_e.noalias() += dkt * wk;
  g_e.noalias() += dvt * wv;

  Tensor<T> dz(h, w, d_enc);
  MapRM<T> dzm(dz.data(), n, d_enc);
  dzm.noalias() = dq * wq;
  if (p.residual) {
    CMapRM<T> wr(p.w_r.data(), d, d_enc);
    MapRM<T> g_wr(grad.w_r.data(), d, d_enc);
    g_wr.noalias() += dom.transpose() * zm;
    dzm.noalias() += dom * wr;
  }
  return dz;
}

}  // namespace semfeat::model
