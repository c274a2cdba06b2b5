#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tempo/error.hpp"

namespace tempo {

using Shape = std::vector<std::size_t>;
using Buffer = std::vector<double>;
using NodeId = std::size_t;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;
class Parameter;

/// Dense row-major f64 tensor. The buffer is shared and never mutated after
/// construction, so copies are cheap and untracked tensors are safe to share
/// across threads. A tracked tensor additionally refers to a node on a Tape.
class Tensor {
 public:
  /// Scalar zero.
  Tensor();
  Tensor(Shape shape, Buffer data);

  static Tensor scalar(double value);
  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor vector(Buffer values);
  static Tensor matrix(std::size_t rows, std::size_t cols, Buffer values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return shape_.empty(); }

  std::span<const double> data() const { return *data_; }
  const std::shared_ptr<const Buffer>& buffer() const { return data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  const std::shared_ptr<Tape>& tape() const { return tape_; }
  NodeId node() const;

  /// Same values, no tape association.
  Tensor detach() const;
  /// Same buffer viewed under a different shape with equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  std::shared_ptr<Tape> tape_;
  NodeId node_ = 0;
};

/// A named learnable tensor. The value lives outside any tape; a forward pass
/// watches it on that pass's tape and backward writes grad.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return value_.size(); }

  std::span<const double> value() const { return value_; }
  std::span<double> mutable_value() { return value_; }
  Tensor tensor() const { return Tensor(shape_, value_); }
  void assign(std::span<const double> values);

  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void set_grad(std::span<const double> grad);

 private:
  std::string name_;
  Shape shape_;
  Buffer value_;
  Buffer grad_;
};

/// Non-owning ordered view over a model's parameters.
using ParameterList = std::vector<Parameter*>;

void zero_grad(const ParameterList& params);

/// Append-only record of differentiable operations (define-by-run). One tape
/// per forward pass; inputs of a node always precede it.
class Tape : public std::enable_shared_from_this<Tape> {
 public:
  /// Receives the output gradient and one pointer per recorded input; a null
  /// pointer marks an untracked input that needs no gradient.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<Buffer* const> grad_in)>;

  static std::shared_ptr<Tape> create();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked leaf holding a copy of value.
  Tensor leaf(const Tensor& value);
  /// Tracked view of a parameter; repeated calls return the same node.
  Tensor watch(Parameter& param);

  /// Record an op result. inputs may mix tracked and untracked tensors.
  Tensor record(Shape shape, Buffer data, std::span<const Tensor> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar root. Gradients are recomputed from scratch
  /// on every call, and every watched parameter gets its grad overwritten
  /// (zero where the root does not depend on it).
  void backward(const Tensor& root);

  /// Gradient of the last backward() w.r.t. a tracked tensor (zeros if unreached).
  Tensor grad(const Tensor& tensor) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  Tape() = default;

  struct Node {
    Shape shape;
    std::vector<std::optional<NodeId>> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Buffer> grads_;
  std::vector<std::pair<Parameter*, NodeId>> watched_;
  std::unordered_map<const Parameter*, std::pair<NodeId, std::shared_ptr<const Buffer>>> watch_cache_;
};

/// Returns the tape shared by the tracked inputs, or null when none is tracked.
std::shared_ptr<Tape> common_tape(std::span<const Tensor> inputs);

/// Convenience: backward through the root's own tape.
void backward(const Tensor& root);

/// param on the tape when one is given, otherwise an untracked copy.
Tensor use(Parameter& param, Tape* tape);

}  // namespace tempo
