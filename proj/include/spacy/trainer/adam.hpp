#pragma once

#include <map>
#include <vector>

#include "spacy/autodiff/params.hpp"

namespace spacy::trainer {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with a learning rate per parameter group. Moments and step counts are
// kept per entry, so entries that sit out (frozen) keep their state.
class Adam {
 public:
  Adam() = default;
  Adam(std::map<ad::ParamGroup, double> rates, AdamConfig cfg = {});

  // grads aligned with params.entries(); entries with `active` false are skipped.
  void step(ad::ParamSet& params, const std::vector<ad::Tensor>& grads, const std::vector<bool>& active);

  struct Slot {
    ad::Tensor m, v;
    std::size_t t = 0;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  double rate(ad::ParamGroup g) const { return rates_.at(g); }

 private:
  std::map<ad::ParamGroup, double> rates_;
  AdamConfig cfg_;
  std::vector<Slot> slots_;
};

}  // namespace spacy::trainer
