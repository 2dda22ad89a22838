#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resnext/tensor.hpp"

namespace resnext {

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct GradSlot {
  Tensor<T> grad;
  bool present = false;
  bool requires_grad = false;
  bool leaf = true;

  void accumulate(Tensor<T>&& g) {
    if (!present) {
      grad = std::move(g);
      present = true;
    } else {
      grad.add_(g);
    }
  }
  void accumulate(const Tensor<T>& g) {
    if (!present) {
      grad = g;
      present = true;
    } else {
      grad.add_(g);
    }
  }
  void clear() {
    grad = Tensor<T>();
    present = false;
  }
};

// A value plus its gradient slot. Copies share both, so a parameter held by a
// layer and the same parameter seen by the optimizer are one object.
template <typename T>
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor<T> value, bool requires_grad = false)
      : value_(std::make_shared<Tensor<T>>(std::move(value))),
        slot_(std::make_shared<GradSlot<T>>()) {
    slot_->requires_grad = requires_grad;
  }

  static Variable result(Tensor<T> value, bool requires_grad) {
    Variable v(std::move(value), requires_grad);
    v.slot_->leaf = false;
    return v;
  }

  bool defined() const { return value_ != nullptr; }
  const Tensor<T>& value() const { return *value_; }
  Tensor<T>& mutable_value() { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::shared_ptr<const Tensor<T>> shared_value() const { return value_; }

  bool requires_grad() const { return slot_->requires_grad; }
  bool has_grad() const { return slot_->present; }
  const Tensor<T>& grad() const {
    if (!slot_->present) throw AutogradError("variable has no gradient");
    return slot_->grad;
  }
  void zero_grad() const { slot_->clear(); }
  const std::shared_ptr<GradSlot<T>>& slot() const { return slot_; }

 private:
  std::shared_ptr<Tensor<T>> value_;
  std::shared_ptr<GradSlot<T>> slot_;
};

// Define-by-run recording context. Ops append a backward rule per output;
// backward() replays them newest-first, each exactly once.
template <typename T>
class Tape {
 public:
  using Rule = std::function<void(const Tensor<T>& grad_out)>;

  void record(const Variable<T>& out, Rule rule) {
    if (consumed_) throw AutogradError("recording into a tape that already ran backward");
    records_.push_back({out.slot(), std::move(rule)});
  }

  void backward(const Variable<T>& root) {
    if (consumed_) throw AutogradError("backward called twice without reset");
    if (root.value().size() != 1) {
      throw AutogradError("backward root must be a scalar, got shape " +
                          to_string(root.shape()));
    }
    consumed_ = true;
    root.slot()->accumulate(Tensor<T>::ones(root.shape()));
    while (!records_.empty()) {
      Record rec = std::move(records_.back());
      records_.pop_back();
      if (rec.out->present) {
        rec.rule(rec.out->grad);
        if (!rec.out->leaf) rec.out->clear();
      }
    }
  }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    std::shared_ptr<GradSlot<T>> out;
    Rule rule;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

// True when an op over `inputs` must be recorded.
template <typename T>
bool needs_record(const Tape<T>* tape, std::initializer_list<const Variable<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* v : inputs)
    if (v != nullptr && v->defined() && v->requires_grad()) return true;
  return false;
}

template <typename T>
void zero_grads(std::span<const Variable<T>> params) {
  for (const auto& p : params) p.zero_grad();
}

template <typename T>
void zero_grads(const std::vector<Variable<T>>& params) {
  zero_grads(std::span<const Variable<T>>(params));
}

// Central differences in 64-bit, one coordinate at a time.
inline Tensord finite_diff_gradient(const std::function<double(const Tensord&)>& f,
                                    const Tensord& x, double eps = 1e-3) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_gradient: eps must be positive");
  Tensord probe = x;
  Tensord grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff_gradient: non-finite function value at element " +
                              std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// |a - b| / max(|a|, |b|, 1e-8), maximised over elements.
inline double max_relative_error(const Tensord& a, const Tensord& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace resnext
