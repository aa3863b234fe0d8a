#include "spacy/trainer/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace spacy::trainer {

Adam::Adam(std::map<ad::ParamGroup, double> rates, AdamConfig cfg) : rates_(std::move(rates)), cfg_(cfg) {
  for (const auto& [g, r] : rates_)
    if (!(r >= 0)) throw std::invalid_argument("learning rates must be non-negative");
}

void Adam::step(ad::ParamSet& params, const std::vector<ad::Tensor>& grads, const std::vector<bool>& active) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || active.size() != entries.size()) throw std::invalid_argument("gradient list size mismatch");
  if (slots_.size() < entries.size()) slots_.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!active[i]) continue;
    Slot& s = slots_[i];
    ad::Tensor& w = entries[i].value;
    if (s.t == 0 && s.m.shape() != w.shape()) {
      s.m = ad::Tensor::like(w);
      s.v = ad::Tensor::like(w);
    }
    ++s.t;
    const double lr = rates_.at(entries[i].group);
    const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    const auto g = grads[i].data();
    auto m = s.m.data(), v = s.v.data(), x = w.data();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g[k] * g[k];
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

}  // namespace spacy::trainer
