#include "msar/numerics/graph.hpp"

#include "msar/error.hpp"

namespace msar::numerics {
namespace {

thread_local DiffGraph* t_active = nullptr;

}  // namespace

const std::vector<double>* GradTable::find(const TensorStorage* s) const {
  auto it = table_.find(s);
  return it == table_.end() ? nullptr : &it->second;
}

std::vector<double>& GradTable::slot(const Tensor& t) {
  auto& v = table_[t.storage()];
  if (v.size() != t.size()) v.assign(t.size(), 0.0);
  return v;
}

void DiffGraph::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  for (const auto& in : inputs) {
    if (in.requires_grad() && in.is_leaf() && leaf_set_.insert(in.storage()).second) {
      leaves_.push_back(in);
    }
  }
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void DiffGraph::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  grads_.clear();
  grads_.slot(loss)[0] = 1.0;
  if (loss.is_leaf() && loss.requires_grad() && leaf_set_.insert(loss.storage()).second) {
    leaves_.push_back(loss);
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto* g = grads_.find(it->output.storage());
    if (g == nullptr) continue;
    // unordered_map keeps element references stable across inserts.
    it->backward(*g, grads_);
  }
}

std::optional<std::span<const double>> DiffGraph::grad_of(const Tensor& t) const {
  const auto* g = grads_.find(t.storage());
  if (g == nullptr) return std::nullopt;
  return std::span<const double>(*g);
}

void DiffGraph::deposit() const {
  for (const auto& leaf : leaves_) {
    const auto* g = grads_.find(leaf.storage());
    if (g == nullptr) continue;
    auto dst = const_cast<Tensor&>(leaf).mutable_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*g)[i];
  }
}

void DiffGraph::clear() {
  nodes_.clear();
  grads_.clear();
  leaves_.clear();
  leaf_set_.clear();
}

GraphScope::GraphScope(DiffGraph& graph) : previous_(t_active) { t_active = &graph; }
GraphScope::~GraphScope() { t_active = previous_; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

DiffGraph* active_graph() { return t_active; }

bool will_record(std::initializer_list<const Tensor*> inputs) {
  if (t_active == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record_op(std::vector<Tensor> inputs, Tensor& output, DiffGraph::BackwardFn fn) {
  if (t_active == nullptr) return;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return;
  output.storage()->requires_grad = true;
  output.storage()->is_leaf = false;
  t_active->record(std::move(inputs), output, std::move(fn));
}

void backward(const Tensor& loss, DiffGraph& graph) {
  graph.backward(loss);
  graph.deposit();
}

}  // namespace msar::numerics
