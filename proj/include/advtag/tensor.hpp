#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advtag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float array. The optional gradient buffer is populated by
// Tape::backward for tensors registered as mutable leaves.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<const float> grad() const { return grad_; }
  std::span<float> mutable_grad() { return grad_; }
  void zero_grad() { grad_.clear(); }

  // Same data, different shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  friend class Tape;

  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
  std::vector<float> grad_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Everything a recorded op needs to propagate gradients to its inputs.
// in_grad[i] is empty when input i does not need a gradient.
struct BackwardArgs {
  std::span<const float> out_grad;
  const Tensor& out;
  std::vector<const Tensor*> in;
  std::vector<std::span<float>> in_grad;
};

using BackwardFn = std::function<void(BackwardArgs&)>;

// Records primitive operations in execution order. Node ids are a topological
// order, so backward is a single reverse sweep. A tape is confined to one
// thread. Values returned by value()/Var::value() stay valid for the tape's
// lifetime.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Borrowed leaf. If t.requires_grad(), backward writes dLoss/dt into t's
  // grad buffer. t must outlive the tape.
  Var leaf(Tensor& t);
  // Borrowed constant; never receives a gradient.
  Var constant(const Tensor& t);
  Var constant(Tensor&& t);

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  // Gradient of the last backward w.r.t. v; empty if v was unreachable.
  std::span<const float> grad(Var v) const { return nodes_.at(v.id()).grad; }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  // Node ids whose backward ran during the last backward call, in visit order.
  const std::vector<std::size_t>& last_visit_order() const { return visited_; }

 private:
  struct Node {
    std::string op;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor* sink = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    std::vector<float> grad;

    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  std::deque<Node> nodes_;
  std::vector<std::size_t> visited_;
};

}  // namespace advtag
