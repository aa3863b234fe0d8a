#include "spacy/autodiff/params.hpp"

#include <stdexcept>

namespace spacy::ad {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kGraph: return "graph";
    case ParamGroup::kScm: return "scm";
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kFactor: return "factor";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "unknown";
}

ParamGroup group_from_name(std::string_view name) {
  for (auto g : {ParamGroup::kGraph, ParamGroup::kScm, ParamGroup::kEncoder, ParamGroup::kFactor,
                 ParamGroup::kDecoder})
    if (group_name(g) == name) return g;
  throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

Tensor& ParamSet::add(std::string name, ParamGroup group, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), group, std::move(value)});
  return entries_.back().value;
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamSet::operator[](std::string_view name) { return entries_[index_of(name)].value; }
const Tensor& ParamSet::operator[](std::string_view name) const { return entries_[index_of(name)].value; }
const ParamSet::Entry& ParamSet::entry(std::string_view name) const { return entries_[index_of(name)]; }

BoundParams::BoundParams(Tape& tape, const ParamSet& params, const Filter& trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& e : params.entries()) {
    const bool learn = !trainable || trainable(e.group);
    vars_.push_back(learn ? tape.leaf(e.value) : tape.constant(e.value));
  }
}

Var BoundParams::operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }

std::vector<Tensor> BoundParams::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(tape_->grad(v));
  return out;
}

}  // namespace spacy::ad
