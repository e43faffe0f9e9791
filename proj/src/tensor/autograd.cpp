#include "pixeldit/autograd.hpp"

#include "pixeldit/errors.hpp"

namespace pixeldit {

void Parameter::zero_grad() {
  if (grad.empty()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Record r;
  r.value = std::move(value);
  records_.push_back(std::move(r));
  return Var(this, static_cast<int>(records_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Record r;
  r.value = p.value;
  r.requires_grad = grad_enabled_;
  r.param = &p;
  records_.push_back(std::move(r));
  const int id = static_cast<int>(records_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Record r;
  r.value = std::move(value);
  if (grad_enabled_ && backward) {
    for (int i : inputs) {
      if (records_[static_cast<std::size_t>(i)].requires_grad) {
        r.requires_grad = true;
        break;
      }
    }
  }
  if (r.requires_grad) {
    r.inputs = std::move(inputs);
    r.backward = std::move(backward);
  }
  records_.push_back(std::move(r));
  return Var(this, static_cast<int>(records_.size() - 1));
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  for (const auto& v : vars) {
    if (v.valid() && &v.tape() != this) throw DimensionError("operands recorded on different tapes");
    if (v.valid() && requires_grad(v.id())) return true;
  }
  return false;
}

const Tensor* Tape::grad(const Var& v) const {
  const auto& r = records_[static_cast<std::size_t>(v.id())];
  return r.grad.empty() ? nullptr : &r.grad;
}

Tensor& Tape::grad_buffer(int id) {
  auto& r = records_[static_cast<std::size_t>(id)];
  if (r.grad.empty()) r.grad = Tensor(r.value.shape());
  return r.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  auto& r = records_[static_cast<std::size_t>(id)];
  if (!r.requires_grad) return;
  if (g.shape() != r.value.shape()) {
    throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                         shape_string(r.value.shape()));
  }
  if (r.grad.empty()) {
    r.grad = g;
  } else {
    r.grad += g;
  }
}

void Tape::accumulate(int id, Tensor&& g) {
  auto& r = records_[static_cast<std::size_t>(id)];
  if (!r.requires_grad) return;
  if (g.shape() != r.value.shape()) {
    throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                         shape_string(r.value.shape()));
  }
  if (r.grad.empty()) {
    r.grad = std::move(g);
  } else {
    r.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (root.value().numel() != 1) {
    throw DimensionError("backward() without a seed needs a single-element root, got " +
                         shape_string(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void Tape::backward(const Var& root, const Tensor& seed) {
  if (&root.tape() != this) throw DimensionError("root belongs to a different tape");
  if (backward_done_) throw Error("backward() may run only once per tape");
  backward_done_ = true;
  accumulate(root.id(), seed);
  for (int id = root.id(); id >= 0; --id) {
    auto& r = records_[static_cast<std::size_t>(id)];
    if (r.grad.empty()) continue;
    if (r.param != nullptr) {
      if (r.param->grad.empty()) {
        r.param->grad = std::move(r.grad);
      } else {
        r.param->grad += r.grad;
      }
    } else if (r.backward) {
      r.backward(*this, r.grad);
    }
  }
}

}  // namespace pixeldit
