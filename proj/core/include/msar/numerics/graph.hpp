#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "msar/numerics/tensor.hpp"

namespace msar::numerics {

// Gradients accumulated during one backward sweep, keyed by tensor storage.
// Kept on the graph rather than on the tensors so several graphs may share
// read-only parameters and be differentiated independently.
class GradTable {
 public:
  const std::vector<double>* find(const TensorStorage* s) const;
  // Zero-initialised on first access.
  std::vector<double>& slot(const Tensor& t);
  void clear() { table_.clear(); }

 private:
  std::unordered_map<const TensorStorage*, std::vector<double>> table_;
};

// Reverse-mode tape. Operations executed while a graph is active (see
// GraphScope) and touching a gradient-requiring input append a node here;
// nodes are stored in execution order, which is a topological order.
class DiffGraph {
 public:
  // Receives the gradient of the node's output and adds into its inputs.
  using BackwardFn = std::function<void(std::span<const double> grad_out, GradTable& table)>;

  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Sweeps the tape backwards from a scalar loss, filling grads().
  void backward(const Tensor& loss);
  const GradTable& grads() const { return grads_; }
  std::optional<std::span<const double>> grad_of(const Tensor& t) const;

  // Adds this graph's leaf gradients into the tensors' own grad slots.
  void deposit() const;

  void clear();

 private:
  std::vector<Node> nodes_;
  GradTable grads_;
  std::vector<Tensor> leaves_;
  std::unordered_set<const TensorStorage*> leaf_set_;
};

// Installs a graph as the recording target of the current thread.
class GraphScope {
 public:
  explicit GraphScope(DiffGraph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  DiffGraph* previous_;
};

// Disables recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  DiffGraph* previous_;
};

DiffGraph* active_graph();

// Records `fn` when a graph is active and any input requires gradients; marks
// `output` as a non-leaf gradient carrier in that case.
void record_op(std::vector<Tensor> inputs, Tensor& output, DiffGraph::BackwardFn fn);

// True when an op with these inputs would be recorded.
bool will_record(std::initializer_list<const Tensor*> inputs);

// Runs graph.backward(loss) followed by graph.deposit().
void backward(const Tensor& loss, DiffGraph& graph);

}  // namespace msar::numerics
