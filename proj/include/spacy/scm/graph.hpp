#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "spacy/autodiff/tensor.hpp"

namespace spacy::scm {

// Binary temporal adjacency of shape (lags+1, D, D). Entry (k, j, d) set means
// an edge j -> d at lag k; slice 0 holds the instantaneous edges.
class TemporalGraph {
 public:
  TemporalGraph() = default;
  TemporalGraph(std::size_t nodes, std::size_t lags);

  // Entries must be exactly 0 or 1.
  static TemporalGraph from_tensor(const ad::Tensor& t);
  ad::Tensor to_tensor() const;

  std::size_t nodes() const { return nodes_; }
  std::size_t lags() const { return lags_; }
  bool edge(std::size_t lag, std::size_t src, std::size_t dst) const { return bits_[index(lag, src, dst)] != 0; }
  void set_edge(std::size_t lag, std::size_t src, std::size_t dst, bool on = true);
  std::size_t edge_count() const;
  std::size_t edge_count(std::size_t lag) const;
  bool instantaneous_acyclic() const;
  // Throws std::invalid_argument when slice 0 has a cycle.
  void validate() const;

  bool operator==(const TemporalGraph&) const = default;

 private:
  std::size_t index(std::size_t lag, std::size_t src, std::size_t dst) const;
  std::size_t nodes_ = 0;
  std::size_t lags_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Kahn's algorithm over a row-major D x D adjacency (adj[j*D+d] != 0 is j -> d).
// Empty when the graph has a cycle.
std::optional<std::vector<std::size_t>> topological_order(const std::vector<std::uint8_t>& adj, std::size_t nodes);
bool is_dag(const std::vector<std::uint8_t>& adj, std::size_t nodes);

}  // namespace spacy::scm
