#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spacy/autodiff/tape.hpp"

namespace spacy::ad {

// Learning-rate groups; names follow the checkpoint key prefixes.
enum class ParamGroup { kGraph, kScm, kEncoder, kFactor, kDecoder };

std::string_view group_name(ParamGroup g);
ParamGroup group_from_name(std::string_view name);

// Named, ordered collection of learnable tensors.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor value;
  };

  Tensor& add(std::string name, ParamGroup group, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& operator[](std::string_view name);
  const Tensor& operator[](std::string_view name) const;
  const Entry& entry(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t index_of(std::string_view name) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// A ParamSet placed on a tape. Trainable entries become leaves, the rest
// constants.
class BoundParams {
 public:
  using Filter = std::function<bool(ParamGroup)>;

  BoundParams(Tape& tape, const ParamSet& params, const Filter& trainable = {});

  Var operator[](std::string_view name) const;
  Tape& tape() const { return *tape_; }
  const ParamSet& params() const { return *params_; }

  // Gradients aligned with params().entries(); zeros for frozen entries.
  std::vector<Tensor> gradients() const;

 private:
  Tape* tape_;
  const ParamSet* params_;
  std::vector<Var> vars_;
};

}  // namespace spacy::ad
