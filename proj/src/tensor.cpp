#include "advtag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advtag/errors.hpp"

namespace advtag {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
  if (std::any_of(shape_.begin(), shape_.end(), [](std::size_t d) { return d == 0; })) {
    throw ContractViolation("Tensor: zero extent in shape " + to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ContractViolation("Tensor: shape " + to_string(shape_) + " does not match " +
                            std::to_string(data_.size()) + " values");
  }
}

float Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractViolation("Tensor::item on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ContractViolation("reshape: " + to_string(shape_) + " -> " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::needs_grad() const { return tape_->needs_grad(*this); }

Var Tape::leaf(Tensor& t) {
  Node n;
  n.op = "leaf";
  n.borrowed = &t;
  n.needs_grad = t.requires_grad();
  if (n.needs_grad) n.sink = &t;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(const Tensor& t) {
  Node n;
  n.op = "constant";
  n.borrowed = &t;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor&& t) {
  Node n;
  n.op = "constant";
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractViolation(n.op + ": input recorded on a different tape");
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id()).value(); }

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractViolation("backward: loss recorded on a different tape");
  const std::size_t root = loss.id();
  if (nodes_.at(root).value().size() != 1) {
    throw ContractViolation("backward: loss must be scalar, got shape " +
                            to_string(nodes_[root].value().shape()));
  }
  visited_.clear();
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[root].needs_grad) return;

  for (std::size_t i = 0; i <= root; ++i) {
    if (nodes_[i].needs_grad) nodes_[i].grad.assign(nodes_[i].value().size(), 0.0f);
  }
  nodes_[root].grad[0] = 1.0f;

  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward) continue;
    BackwardArgs args{n.grad, n.value(), {}, {}};
    args.in.reserve(n.inputs.size());
    args.in_grad.reserve(n.inputs.size());
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      args.in.push_back(&src.value());
      args.in_grad.push_back(src.needs_grad ? std::span<float>(src.grad) : std::span<float>());
    }
    n.backward(args);
    visited_.push_back(i);
  }

  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (!n.sink) continue;
    auto& g = n.sink->grad_;
    if (g.size() != n.grad.size()) {
      g = n.grad;
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

}  // namespace advtag
