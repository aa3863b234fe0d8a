#include "spacy/scm/graph.hpp"

#include <stdexcept>

namespace spacy::scm {

TemporalGraph::TemporalGraph(std::size_t nodes, std::size_t lags)
    : nodes_(nodes), lags_(lags), bits_((lags + 1) * nodes * nodes, 0) {
  if (nodes == 0) throw std::invalid_argument("graph must have at least one node");
}

std::size_t TemporalGraph::index(std::size_t lag, std::size_t src, std::size_t dst) const {
  if (lag > lags_ || src >= nodes_ || dst >= nodes_) throw std::out_of_range("graph index out of range");
  return (lag * nodes_ + src) * nodes_ + dst;
}

TemporalGraph TemporalGraph::from_tensor(const ad::Tensor& t) {
  if (t.rank() != 3 || t.dim(1) != t.dim(2)) throw std::invalid_argument("graph tensor must have shape (lags+1, D, D)");
  TemporalGraph g(t.dim(1), t.dim(0) - 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw std::invalid_argument("graph tensor entries must be 0 or 1");
    g.bits_[i] = t[i] != 0.0;
  }
  return g;
}

ad::Tensor TemporalGraph::to_tensor() const {
  ad::Tensor t({lags_ + 1, nodes_, nodes_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i];
  return t;
}

void TemporalGraph::set_edge(std::size_t lag, std::size_t src, std::size_t dst, bool on) {
  bits_[index(lag, src, dst)] = on;
}

std::size_t TemporalGraph::edge_count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

std::size_t TemporalGraph::edge_count(std::size_t lag) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < nodes_ * nodes_; ++i) n += bits_[lag * nodes_ * nodes_ + i];
  return n;
}

bool TemporalGraph::instantaneous_acyclic() const {
  return is_dag(std::vector<std::uint8_t>(bits_.begin(), bits_.begin() + static_cast<std::ptrdiff_t>(nodes_ * nodes_)), nodes_);
}

void TemporalGraph::validate() const {
  if (!instantaneous_acyclic()) throw std::invalid_argument("instantaneous graph is cyclic");
}

std::optional<std::vector<std::size_t>> topological_order(const std::vector<std::uint8_t>& adj, std::size_t nodes) {
  if (adj.size() != nodes * nodes) throw std::invalid_argument("adjacency size mismatch");
  std::vector<std::size_t> indeg(nodes, 0), order, ready;
  for (std::size_t j = 0; j < nodes; ++j)
    for (std::size_t d = 0; d < nodes; ++d) indeg[d] += adj[j * nodes + d] != 0;
  for (std::size_t d = nodes; d-- > 0;)
    if (indeg[d] == 0) ready.push_back(d);
  while (!ready.empty()) {
    const std::size_t j = ready.back();
    ready.pop_back();
    order.push_back(j);
    for (std::size_t d = nodes; d-- > 0;)
      if (adj[j * nodes + d] != 0 && --indeg[d] == 0) ready.push_back(d);
  }
  if (order.size() != nodes) return std::nullopt;
  return order;
}

bool is_dag(const std::vector<std::uint8_t>& adj, std::size_t nodes) { return topological_order(adj, nodes).has_value(); }

}  // namespace spacy::scm
