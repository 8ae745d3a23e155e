#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "semfeat/model/network.hpp"

namespace semfeat::train {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adaptive moments with decoupled weight decay. A parameter reported frozen
// by the predicate is skipped entirely: no moment update, no decay, no step,
// and its bias-correction counter does not advance.
template <class T>
class AdamW {
 public:
  using FrozenFn = std::function<bool(const std::string& name, int enc_level)>;

  AdamW() = default;
  AdamW(OptimizerConfig cfg, const model::Network<T>& net)
      : cfg_(cfg), m_(net.zero_grads()), v_(net.zero_grads()) {}

  const OptimizerConfig& config() const { return cfg_; }
  model::NetworkParams<T>& first_moments() { return m_; }
  model::NetworkParams<T>& second_moments() { return v_; }
  const model::NetworkParams<T>& first_moments() const { return m_; }
  const model::NetworkParams<T>& second_moments() const { return v_; }
  std::vector<std::int64_t>& step_counts() { return steps_; }
  const std::vector<std::int64_t>& step_counts() const { return steps_; }

  void step(model::Network<T>& net, const model::NetworkParams<T>& grads,
            const FrozenFn& frozen = {}) {
    struct Entry {
      Tensor<T>* p;
      const Tensor<T>* g;
      Tensor<T>* m;
      Tensor<T>* v;
      bool frozen;
    };
    std::vector<Entry> entries;
    net.for_each_param([&](const std::string& name, Tensor<T>& t, int enc_level) {
      entries.push_back({&t, nullptr, nullptr, nullptr,
                         frozen ? frozen(name, enc_level) : false});
    });
    std::size_t k = 0;
    model::Network<T>::visit_params(const_cast<model::NetworkParams<T>&>(grads),
                                    net.config(), [&](const std::string&, Tensor<T>& g, int) {
                                      entries[k++].g = &g;
                                    });
    k = 0;
    model::Network<T>::visit_params(m_, net.config(),
                                    [&](const std::string&, Tensor<T>& m, int) {
                                      entries[k++].m = &m;
                                    });
    k = 0;
    model::Network<T>::visit_params(v_, net.config(),
                                    [&](const std::string&, Tensor<T>& v, int) {
                                      entries[k++].v = &v;
                                    });
    if (steps_.size() != entries.size()) steps_.assign(entries.size(), 0);

    const T lr = T(cfg_.learning_rate);
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T eps = T(cfg_.eps), wd = T(cfg_.weight_decay);

    for (std::size_t e = 0; e < entries.size(); ++e) {
      if (entries[e].frozen) continue;
      const std::int64_t t = ++steps_[e];
      const T bc1 = T(1) - T(std::pow(cfg_.beta1, double(t)));
      const T bc2 = T(1) - T(std::pow(cfg_.beta2, double(t)));
      Tensor<T>& p = *entries[e].p;
      const Tensor<T>& g = *entries[e].g;
      Tensor<T>& m = *entries[e].m;
      Tensor<T>& v = *entries[e].v;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  model::NetworkParams<T> m_, v_;
  std::vector<std::int64_t> steps_;
};

}  // namespace semfeat::train
