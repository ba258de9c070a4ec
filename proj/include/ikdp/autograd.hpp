#pragma once

// Tape-based reverse-mode differentiation over ikdp::Array.
//
// A Graph records every op applied to its Vars together with a closure that
// propagates the output gradient back to the inputs. backward() runs those
// closures in exact reverse recording order, so gradients of a node are
// complete before its own closure fires. Reductions accumulate in double.

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ikdp/tensor.hpp"

namespace ikdp {

template <typename Scalar>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid until the graph clears.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  int id() const noexcept { return id_; }
  const Array<Scalar>& value() const { return graph_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  const Mat<Scalar>& matrix() const { return value().matrix(); }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Graph {
 public:
  using Matrix = Mat<Scalar>;
  using Backward = std::function<void()>;

  Graph() = default;
  /// With track_grad false, parameters bind as constants and no backward
  /// closures are kept (inference).
  explicit Graph(const ParamStore<Scalar>* params, bool track_grad = true)
      : params_(params), track_grad_(track_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Input that never receives a gradient.
  Var<Scalar> constant(Array<Scalar> value) { return record(std::move(value), false, nullptr); }

  /// Binds a parameter of the attached store. Repeated binds of the same name
  /// return the same node so fan-out accumulates into one gradient.
  Var<Scalar> param(std::string_view name) {
    if (params_ == nullptr) throw Error(ErrorCode::kInvalidArgument, "graph has no parameter store");
    for (const auto& [bound_name, id] : bound_)
      if (bound_name == name) return Var<Scalar>(this, id);
    Var<Scalar> v = record(params_->at(name), track_grad_, nullptr);
    bound_.emplace_back(std::string(name), v.id());
    return v;
  }

  /// Records an op output. `backward` may be null for leaves.
  Var<Scalar> record(Array<Scalar> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Array<Scalar>& value(const Var<Scalar>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient buffer of a node as seen so far (empty if nothing flowed in).
  const Matrix& grad(int id) const { return nodes_.at(id).grad; }

  template <typename Expr>
  void accumulate(int id, const Expr& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = delta;
    else
      n.grad += delta;
  }

  void set_backward(int id, Backward backward) { nodes_.at(id).backward = std::move(backward); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of a scalar loss with respect to every parameter of the
  /// attached store (zeros for parameters the loss does not touch), in store
  /// order. The graph is cleared afterwards.
  ParamStore<Scalar> backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1)
      throw Error(ErrorCode::kShapeMismatch, "backward needs a scalar loss, got " + loss.shape().str());
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && n.grad.size() != 0) n.backward();
    }
    ParamStore<Scalar> grads;
    if (params_ != nullptr) {
      for (const auto& e : *params_) {
        Array<Scalar> g(e.value.shape());
        for (const auto& [name, id] : bound_) {
          if (name == e.name && nodes_[id].grad.size() != 0) {
            g.matrix() = nodes_[id].grad;
            break;
          }
        }
        grads.add(e.name, std::move(g));
      }
    }
    clear();
    return grads;
  }

  void clear() {
    nodes_.clear();
    bound_.clear();
  }

 private:
  struct Node {
    Array<Scalar> value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  const ParamStore<Scalar>* params_ = nullptr;
  bool track_grad_ = true;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> bound_;
};


}  // namespace ikdp
