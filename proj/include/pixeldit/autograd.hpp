#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pixeldit/tensor.hpp"

namespace pixeldit {

// A named learnable tensor. `grad` is allocated on first accumulation and is
// only ever added to; callers zero it between optimizer steps.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  bool has_grad() const { return !grad.empty(); }
  void zero_grad();
};

class Tape;

// Handle to one record on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Ordered record of primitive applications. Records are appended in
// evaluation order, so every input precedes the record that consumes it, and
// backward() visits each record once in reverse.
class Tape {
 public:
  // out_grad belongs to the record being visited and is dead afterwards, so a
  // backward function may move from it.
  using BackwardFn = std::function<void(Tape&, Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf bound to `p`; repeated calls within one tape return the same record.
  Var param(Parameter& p);

  // Used by primitives. `backward` may be empty when no input needs a gradient.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  // True if any of `vars` needs a gradient (and recording is enabled).
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  bool requires_grad(int id) const { return records_[static_cast<std::size_t>(id)].requires_grad; }

  const Tensor& value(int id) const { return records_[static_cast<std::size_t>(id)].value; }
  // Gradient buffer of a record, or nullptr if none was accumulated.
  const Tensor* grad(const Var& v) const;

  // Adds `g` into the gradient of record `id` (no-op for records that do not
  // need one).
  void accumulate(int id, const Tensor& g);
  void accumulate(int id, Tensor&& g);
  // Mutable gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer(int id);

  // Seeds d(root)/d(root) = 1 for a single-element root.
  void backward(const Var& root);
  void backward(const Var& root, const Tensor& seed);

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool grad_enabled_;
  bool backward_done_ = false;
  std::deque<Record> records_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

}  // namespace pixeldit
