#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "semfeat/core/rng.hpp"
#include "semfeat/core/tensor.hpp"
#include "semfeat/model/config.hpp"
#include "semfeat/model/layers.hpp"
#include "semfeat/model/mixer.hpp"

namespace semfeat::model {

enum class Task { kp = 0, desc = 1, seg = 2 };
inline const char* task_name(int t) {
  static const char* names[] = {"kp", "desc", "seg"};
  return names[t];
}

template <class T>
struct EncoderFeatures {
  std::vector<Tensor<T>> skips;  // level n at (H/2^n, W/2^n, c_n), full resolution first
  Tensor<T> bottleneck;          // (H/2^N, W/2^N, d_enc)
};

template <class T>
struct MultiTaskOutput {
  Tensor<T> heatmap;       // (H, W), sigmoid probabilities
  Tensor<T> descriptors;   // (H, W, d_desc), unit length per location
  Tensor<T> segmentation;  // (H, W, C), per-pixel class probabilities
};

template <class T>
struct EncoderBlock {
  Conv2d<T> conv1, conv2;
};

template <class T>
struct DecoderParams {
  Conv2d<T> pre;  // one conv block between the encoder output and the mixer
  MixerParams<T> mixer;
  std::vector<Conv2d<T>> up;  // indexed by encoder level, applied deep to shallow
  Conv2d<T> head;             // 1x1 projection to the task output channels
};

template <class T>
struct NetworkParams {
  std::vector<EncoderBlock<T>> enc;
  Conv2d<T> bottleneck;
  TaskEmbeddings<T> emb;  // shared across the three mixers
  std::array<DecoderParams<T>, kNumTasks> dec;
};

template <class T>
struct LevelCache {
  Tensor<T> input;   // conv1 input
  Tensor<T> r1;      // relu(conv1)
  Tensor<T> r2;      // relu(conv2) == skip
  Tensor<int> pool_idx;
  Tensor<T> pooled;
};

template <class T>
struct DecoderCache {
  Tensor<T> pre_out;  // relu(pre conv)
  MixerCache<T> mixer;
  Tensor<T> fused;
  std::vector<Tensor<T>> cat_in;   // concat inputs per level (conv inputs)
  std::vector<Tensor<T>> relu_out; // conv+relu outputs per level
  Tensor<T> head_in;
  Tensor<T> activated;  // post-activation output (HxWxC layout, heatmap as HxWx1)
  Tensor<T> norms;      // descriptor branch only
};

template <class T>
struct ForwardCache {
  std::vector<LevelCache<T>> levels;
  Tensor<T> pre_bottleneck;  // input to the bottleneck conv
  Tensor<T> z;               // relu(bottleneck conv)
  std::array<DecoderCache<T>, kNumTasks> dec;
};

template <class T>
struct OutputGrads {
  Tensor<T> heatmap;
  Tensor<T> descriptors;
  Tensor<T> segmentation;
};

template <class T>
class Network {
 public:
  Network() = default;

  explicit Network(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(0);
    build(rng);
  }

  Network(const ModelConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  NetworkParams<T>& params() { return params_; }
  const NetworkParams<T>& params() const { return params_; }

  int head_channels(int task) const {
    switch (static_cast<Task>(task)) {
      case Task::kp: return 1;
      case Task::desc: return cfg_.d_desc;
      case Task::seg: return cfg_.num_classes;
    }
    return 0;
  }

  NetworkParams<T> zero_grads() const {
    NetworkParams<T> g;
    g.enc.resize(params_.enc.size());
    for (std::size_t l = 0; l < params_.enc.size(); ++l) {
      g.enc[l].conv1 = params_.enc[l].conv1.shaped_like();
      g.enc[l].conv2 = params_.enc[l].conv2.shaped_like();
    }
    g.bottleneck = params_.bottleneck.shaped_like();
    g.emb = params_.emb.shaped_like();
    for (int t = 0; t < kNumTasks; ++t) {
      g.dec[t].pre = params_.dec[t].pre.shaped_like();
      g.dec[t].mixer = params_.dec[t].mixer.shaped_like();
      g.dec[t].up.resize(params_.dec[t].up.size());
      for (std::size_t l = 0; l < params_.dec[t].up.size(); ++l)
        g.dec[t].up[l] = params_.dec[t].up[l].shaped_like();
      g.dec[t].head = params_.dec[t].head.shaped_like();
    }
    return g;
  }

  EncoderFeatures<T> encode(const Tensor<T>& image, ForwardCache<T>* cache = nullptr) const {
    if (image.rank() != 3 || image.dim(2) != 3)
      throw ShapeError("encode: expected HxWx3 image, got " + image.shape_str());
    require_divisible(image.dim(0), image.dim(1), cfg_);

    EncoderFeatures<T> feats;
    if (cache) cache->levels.assign(cfg_.depth, {});
    Tensor<T> x = image;
    for (int l = 0; l < cfg_.depth; ++l) {
      const auto& blk = params_.enc[l];
      Tensor<T> r1 = relu_forward(conv2d_forward(x, blk.conv1));
      Tensor<T> r2 = relu_forward(conv2d_forward(r1, blk.conv2));
      auto [pooled, idx] = maxpool2_forward(r2);
      feats.skips.push_back(r2);
      if (cache) {
        auto& lc = cache->levels[l];
        lc.input = std::move(x);
        lc.r1 = std::move(r1);
        lc.r2 = std::move(r2);
        lc.pool_idx = std::move(idx);
        lc.pooled = pooled;
      }
      x = std::move(pooled);
    }
    Tensor<T> z = relu_forward(conv2d_forward(x, params_.bottleneck));
    if (cache) {
      cache->pre_bottleneck = std::move(x);
      cache->z = z;
    }
    feats.bottleneck = std::move(z);
    return feats;
  }

  // Decoder branch: pre conv -> mixer -> upsampling path over skips -> head.
  Tensor<T> decode(int task, const Tensor<T>& z, const std::vector<Tensor<T>>& skips,
                   DecoderCache<T>* dc = nullptr) const {
    const auto& d = params_.dec[task];
    if (static_cast<int>(skips.size()) != cfg_.depth)
      throw ShapeError("decode: expected " + std::to_string(cfg_.depth) + " skip levels, got " +
                       std::to_string(skips.size()));
    for (int l = 0; l < cfg_.depth; ++l) {
      if (skips[l].dim(0) * (1 << l) != z.dim(0) * cfg_.pool_factor())
        throw ShapeError("decode: skip level " + std::to_string(l) + " resolution " +
                         skips[l].shape_str() + " inconsistent with bottleneck " + z.shape_str());
    }

    Tensor<T> pre = relu_forward(conv2d_forward(z, d.pre));
    MixerCache<T> mc;
    Tensor<T> x = ctmm_fuse(pre, d.mixer, params_.emb, &mc);
    if (dc) {
      dc->pre_out = pre;
      dc->mixer = std::move(mc);
      dc->fused = x;
      dc->cat_in.assign(cfg_.depth, {});
      dc->relu_out.assign(cfg_.depth, {});
    }
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      Tensor<T> up = upsample2_forward(x);
      Tensor<T> cat = concat_channels(up, skips[l]);
      x = relu_forward(conv2d_forward(cat, d.up[l]));
      if (dc) {
        dc->cat_in[l] = std::move(cat);
        dc->relu_out[l] = x;
      }
    }
    Tensor<T> logits = conv2d_forward(x, d.head);
    if (dc) dc->head_in = std::move(x);

    Tensor<T> out;
    switch (static_cast<Task>(task)) {
      case Task::kp:
        out = sigmoid_forward(logits);
        break;
      case Task::desc: {
        auto [y, norms] = l2norm_channels_forward(logits);
        if (dc) dc->norms = std::move(norms);
        out = std::move(y);
        break;
      }
      case Task::seg:
        out = softmax_channels_forward(logits);
        break;
    }
    if (dc) dc->activated = out;
    return out;
  }

  MultiTaskOutput<T> forward(const Tensor<T>& image, ForwardCache<T>* cache = nullptr) const {
    EncoderFeatures<T> feats = encode(image, cache);
    MultiTaskOutput<T> out;
    for (int t = 0; t < kNumTasks; ++t) {
      DecoderCache<T>* dc = cache ? &cache->dec[t] : nullptr;
      Tensor<T> o = decode(t, feats.bottleneck, feats.skips, dc);
      switch (static_cast<Task>(t)) {
        case Task::kp: {
          Tensor<T> hm(o.dim(0), o.dim(1));
          for (int y = 0; y < o.dim(0); ++y)
            for (int x = 0; x < o.dim(1); ++x) hm(y, x) = o(y, x, 0);
          out.heatmap = std::move(hm);
          break;
        }
        case Task::desc:
          out.descriptors = std::move(o);
          break;
        case Task::seg:
          out.segmentation = std::move(o);
          break;
      }
    }
    return out;
  }

  // Accumulates parameter gradients into `grads` given gradients w.r.t. the
  // three post-activation outputs.
  void backward(const ForwardCache<T>& cache, const OutputGrads<T>& dout,
                NetworkParams<T>& grads) const {
    const int depth = cfg_.depth;
    std::vector<Tensor<T>> dskips(depth);
    for (int l = 0; l < depth; ++l) {
      const auto& s = cache.levels[l].r2;
      dskips[l] = Tensor<T>(s.dim(0), s.dim(1), s.dim(2));
    }
    Tensor<T> dz(cache.z.dim(0), cache.z.dim(1), cache.z.dim(2));

    for (int t = 0; t < kNumTasks; ++t) {
      const auto& d = params_.dec[t];
      const auto& dc = cache.dec[t];
      auto& dg = grads.dec[t];

      Tensor<T> dact;
      switch (static_cast<Task>(t)) {
        case Task::kp: {
          const Tensor<T>& dh = dout.heatmap;
          Tensor<T> d3(dh.dim(0), dh.dim(1), 1);
          for (int y = 0; y < dh.dim(0); ++y)
            for (int x = 0; x < dh.dim(1); ++x) d3(y, x, 0) = dh(y, x);
          dact = sigmoid_backward(dc.activated, d3);
          break;
        }
        case Task::desc:
          dact = l2norm_channels_backward(dc.activated, dc.norms, dout.descriptors);
          break;
        case Task::seg:
          dact = softmax_channels_backward(dc.activated, dout.segmentation);
          break;
      }

      Tensor<T> dx;
      conv2d_backward(dc.head_in, d.head, dact, dg.head, &dx);

      for (int l = 0; l < depth; ++l) {
        Tensor<T> dconv = relu_backward(dc.relu_out[l], dx);
        Tensor<T> dcat;
        conv2d_backward(dc.cat_in[l], d.up[l], dconv, dg.up[l], &dcat);
        const int up_ch = dc.cat_in[l].dim(2) - cache.levels[l].r2.dim(2);
        auto [dup, dskip] = split_channels(dcat, up_ch, cache.levels[l].r2.dim(2));
        for (std::size_t i = 0; i < dskip.size(); ++i) dskips[l][i] += dskip[i];
        dx = upsample2_backward(dup);
      }

      Tensor<T> dpre_out =
          ctmm_backward(dc.pre_out, d.mixer, params_.emb, dc.mixer, dx, dg.mixer, grads.emb);
      Tensor<T> dpre = relu_backward(dc.pre_out, dpre_out);
      Tensor<T> dz_t;
      conv2d_backward(cache.z, d.pre, dpre, dg.pre, &dz_t);
      for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_t[i];
    }

    Tensor<T> dzc = relu_backward(cache.z, dz);
    Tensor<T> dpool;
    conv2d_backward(cache.pre_bottleneck, params_.bottleneck, dzc, grads.bottleneck, &dpool);

    for (int l = depth - 1; l >= 0; --l) {
      const auto& lc = cache.levels[l];
      const auto& blk = params_.enc[l];
      Tensor<T> dr2 = maxpool2_backward(dpool, lc.pool_idx, lc.r2.dim(0), lc.r2.dim(1));
      for (std::size_t i = 0; i < dr2.size(); ++i) dr2[i] += dskips[l][i];
      Tensor<T> dc2 = relu_backward(lc.r2, dr2);
      Tensor<T> dr1;
      conv2d_backward(lc.r1, blk.conv2, dc2, grads.enc[l].conv2, &dr1);
      Tensor<T> dc1 = relu_backward(lc.r1, dr1);
      if (l > 0) {
        conv2d_backward(lc.input, blk.conv1, dc1, grads.enc[l].conv1, &dpool);
      } else {
        conv2d_backward(lc.input, blk.conv1, dc1, grads.enc[l].conv1,
                        static_cast<Tensor<T>*>(nullptr));
      }
    }
  }

  // Visits every parameter tensor with a stable name and order. enc_level is
  // the encoder level for freeze scheduling, cfg.depth for the bottleneck,
  // and -1 for embeddings and decoders.
  template <class P, class F>
  static void visit_params(P& p, const ModelConfig& cfg, F&& f) {
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string base = "enc.l" + std::to_string(l);
      f(base + ".conv1.w", p.enc[l].conv1.weight, l);
      f(base + ".conv1.b", p.enc[l].conv1.bias, l);
      f(base + ".conv2.w", p.enc[l].conv2.weight, l);
      f(base + ".conv2.b", p.enc[l].conv2.bias, l);
    }
    f("enc.bottleneck.w", p.bottleneck.weight, cfg.depth);
    f("enc.bottleneck.b", p.bottleneck.bias, cfg.depth);
    f("emb.tasks", p.emb.e, -1);
    for (int t = 0; t < kNumTasks; ++t) {
      const std::string base = std::string("dec.") + task_name(t);
      f(base + ".pre.w", p.dec[t].pre.weight, -1);
      f(base + ".pre.b", p.dec[t].pre.bias, -1);
      f(base + ".mixer.wq", p.dec[t].mixer.w_q, -1);
      f(base + ".mixer.wk", p.dec[t].mixer.w_k, -1);
      f(base + ".mixer.wv", p.dec[t].mixer.w_v, -1);
      if (cfg.mixer_residual) f(base + ".mixer.wr", p.dec[t].mixer.w_r, -1);
      for (int l = 0; l < cfg.depth; ++l) {
        const std::string up = base + ".up.l" + std::to_string(l);
        f(up + ".w", p.dec[t].up[l].weight, -1);
        f(up + ".b", p.dec[t].up[l].bias, -1);
      }
      f(base + ".head.w", p.dec[t].head.weight, -1);
      f(base + ".head.b", p.dec[t].head.bias, -1);
    }
  }

  template <class F>
  void for_each_param(F&& f) {
    visit_params(params_, cfg_, std::forward<F>(f));
  }
  template <class F>
  void for_each_param(F&& f) const {
    visit_params(params_, cfg_, std::forward<F>(f));
  }

 private:
  void build(Rng& rng) {
    params_.enc.resize(cfg_.depth);
    for (int l = 0; l < cfg_.depth; ++l) {
      const int cin = l == 0 ? 3 : cfg_.channels_at(l - 1);
      const int cout = cfg_.channels_at(l);
      params_.enc[l].conv1.init(3, cin, cout, rng);
      params_.enc[l].conv2.init(3, cout, cout, rng);
    }
    params_.bottleneck.init(3, cfg_.channels_at(cfg_.depth - 1), cfg_.d_enc, rng);
    params_.emb.init(cfg_.d_task, rng);
    for (int t = 0; t < kNumTasks; ++t) {
      auto& d = params_.dec[t];
      d.pre.init(3, cfg_.d_enc, cfg_.d_enc, rng);
      d.mixer.init(cfg_.d_attn, cfg_.d_enc, cfg_.d_task, cfg_.mixer_residual, rng);
      d.up.resize(cfg_.depth);
      int prev = cfg_.d_attn;
      for (int l = cfg_.depth - 1; l >= 0; --l) {
        const int skip_ch = cfg_.channels_at(l);
        d.up[l].init(3, prev + skip_ch, skip_ch, rng);
        prev = skip_ch;
      }
      d.head.init(1, cfg_.channels_at(0), head_channels(t), rng);
    }
  }

  ModelConfig cfg_;
  NetworkParams<T> params_;
};

template <class T>
void validate_output(const MultiTaskOutput<T>& out, double tol = 1e-5) {
  for (std::size_t i = 0; i < out.heatmap.size(); ++i) {
    const double v = out.heatmap[i];
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("heatmap value out of [0,1]");
  }
  const int rows = out.descriptors.dim(0), cols = out.descriptors.dim(1);
  const int dd = out.descriptors.dim(2), nc = out.segmentation.dim(2);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      double n = 0.0;
      for (int c = 0; c < dd; ++c) n += double(out.descriptors(y, x, c)) * out.descriptors(y, x, c);
      if (std::abs(std::sqrt(n) - 1.0) > tol) throw NumericError("descriptor not unit norm");
      double s = 0.0;
      for (int c = 0; c < nc; ++c) {
        const double p = out.segmentation(y, x, c);
        if (p < 0.0) throw NumericError("negative class probability");
        s += p;
      }
      if (std::abs(s - 1.0) > tol) throw NumericError("class probabilities do not sum to 1");
    }
}

}  // namespace semfeat::model
