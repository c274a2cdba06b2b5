#include "tempo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tempo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyReduction: return "EmptyReduction";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::NotTracked: return "NotTracked";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MaxStepsExceeded: return "MaxStepsExceeded";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::NonMonotoneTimes: return "NonMonotoneTimes";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::NoTaskHead: return "NoTaskHead";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateTime: return "DuplicateTime";
    case ErrorCode::NonMonotoneAfterSort: return "NonMonotoneAfterSort";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NonFiniteGrad: return "NonFiniteGrad";
    case ErrorCode::EmptyHeldout: return "EmptyHeldout";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::SampleNotFound: return "SampleNotFound";
  }
  return "Unknown";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_finite(std::span<const double> data, const char* where) {
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, where);
  }
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : data_(std::make_shared<const Buffer>(Buffer{0.0})) {}

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)) {
  if (shape_size(shape_) != data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape_) + " holds " +
                                              std::to_string(shape_size(shape_)) + " elements, got " +
                                              std::to_string(data.size()));
  }
  check_finite(data, "tensor construction");
  data_ = std::make_shared<const Buffer>(std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({}, Buffer{value}); }

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape, Buffer(shape_size(shape), 0.0)); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, Buffer(shape_size(shape), value));
}

Tensor Tensor::vector(Buffer values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, Buffer values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw Error(ErrorCode::ShapeMismatch, "rows() on rank " + std::to_string(rank()));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() != 2) throw Error(ErrorCode::ShapeMismatch, "cols() on rank " + std::to_string(rank()));
  return shape_[1];
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on shape " + shape_string(shape_));
  return (*data_)[0];
}

NodeId Tensor::node() const {
  if (!tape_) throw Error(ErrorCode::NotTracked, "tensor has no tape node");
  return node_;
}

Tensor Tensor::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  if (!tape_) {
    Tensor out = detach();
    out.shape_ = std::move(shape);
    return out;
  }
  const Tensor inputs[] = {*this};
  return tape_->record(std::move(shape), *data_, inputs,
                       [](std::span<const double> g, std::span<Buffer* const> gin) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                       });
}

// ---------------------------------------------------------------- Parameter

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)),
      shape_(value.shape()),
      value_(value.data().begin(), value.data().end()),
      grad_(value.size(), 0.0) {}

void Parameter::assign(std::span<const double> values) {
  if (values.size() != value_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "assign to " + name_ + ": size " +
                                              std::to_string(values.size()) + " vs " +
                                              std::to_string(value_.size()));
  }
  std::copy(values.begin(), values.end(), value_.begin());
}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void Parameter::set_grad(std::span<const double> grad) {
  if (grad.size() != value_.size()) throw Error(ErrorCode::ShapeMismatch, "grad size for " + name_);
  std::copy(grad.begin(), grad.end(), grad_.begin());
}

void zero_grad(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

// ---------------------------------------------------------------- Tape

std::shared_ptr<Tape> Tape::create() { return std::shared_ptr<Tape>(new Tape()); }

Tensor Tape::leaf(const Tensor& value) {
  return record(value.shape(), Buffer(value.data().begin(), value.data().end()), {}, nullptr);
}

Tensor Tape::watch(Parameter& param) {
  if (auto it = watch_cache_.find(&param); it != watch_cache_.end()) {
    Tensor t;
    t.shape_ = param.shape();
    t.data_ = it->second.second;
    t.tape_ = shared_from_this();
    t.node_ = it->second.first;
    return t;
  }
  Tensor t = leaf(param.tensor());
  watch_cache_.emplace(&param, std::make_pair(t.node_, t.data_));
  watched_.emplace_back(&param, t.node_);
  return t;
}

Tensor Tape::record(Shape shape, Buffer data, std::span<const Tensor> inputs, BackwardFn backward) {
  check_finite(data, "op result");
  Node node;
  node.shape = shape;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tracked()) {
      if (in.tape_.get() != this) {
        throw Error(ErrorCode::InvalidArgument, "op mixes tensors from different tapes");
      }
      node.inputs.emplace_back(in.node_);
    } else {
      node.inputs.emplace_back(std::nullopt);
    }
  }
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));

  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::make_shared<const Buffer>(std::move(data));
  out.tape_ = shared_from_this();
  out.node_ = nodes_.size() - 1;
  return out;
}

void Tape::backward(const Tensor& root) {
  if (!root.tracked()) throw Error(ErrorCode::NotTracked, "backward root is not tracked");
  if (root.tape_.get() != this) throw Error(ErrorCode::InvalidArgument, "root belongs to another tape");
  if (!root.is_scalar()) {
    throw Error(ErrorCode::NotScalar, "backward root has shape " + shape_string(root.shape()));
  }

  grads_.assign(nodes_.size(), Buffer{});
  grads_[root.node_] = Buffer{1.0};

  std::vector<Buffer*> gin;
  for (std::size_t k = root.node_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (grads_[k].empty() || !node.backward) continue;
    gin.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!node.inputs[i]) continue;
      const NodeId src = *node.inputs[i];
      if (grads_[src].empty()) grads_[src].assign(shape_size(nodes_[src].shape), 0.0);
      gin[i] = &grads_[src];
    }
    node.backward(grads_[k], gin);
  }

  for (auto& [param, id] : watched_) {
    if (grads_[id].empty()) {
      param->zero_grad();
    } else {
      check_finite(grads_[id], "parameter gradient");
      param->set_grad(grads_[id]);
    }
  }
}

Tensor Tape::grad(const Tensor& tensor) const {
  const NodeId id = tensor.node();
  if (tensor.tape_.get() != this) throw Error(ErrorCode::InvalidArgument, "tensor belongs to another tape");
  if (id >= grads_.size() || grads_[id].empty()) return Tensor::zeros(tensor.shape());
  return Tensor(tensor.shape(), grads_[id]);
}

std::shared_ptr<Tape> common_tape(std::span<const Tensor> inputs) {
  std::shared_ptr<Tape> tape;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (!tape) {
      tape = in.tape();
    } else if (tape != in.tape()) {
      throw Error(ErrorCode::InvalidArgument, "op mixes tensors from different tapes");
    }
  }
  return tape;
}

void backward(const Tensor& root) {
  if (!root.tracked()) throw Error(ErrorCode::NotTracked, "backward root is not tracked");
  root.tape()->backward(root);
}

Tensor use(Parameter& param, Tape* tape) { return tape ? tape->watch(param) : param.tensor(); }

}  // namespace tempo
