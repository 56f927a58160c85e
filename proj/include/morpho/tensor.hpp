#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace morpho {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

// Dense row-major double tensor. `requires_grad` marks leaves the optimizer
// updates; `needs_grad` is the propagated flag backward rules consult before
// spending work on an input.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  bool needs_grad = false;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    values.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<long long>(values.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  static TensorPtr make(std::vector<int> s, bool req_grad = false) {
    auto t = std::make_shared<Tensor>(std::move(s));
    t->requires_grad = req_grad;
    t->needs_grad = req_grad;
    return t;
  }

  static TensorPtr from(std::vector<int> s, std::vector<double> v, bool req_grad = false) {
    auto t = std::make_shared<Tensor>(std::move(s), std::move(v));
    t->requires_grad = req_grad;
    t->needs_grad = req_grad;
    return t;
  }

  static TensorPtr scalar(double v) { return from({1}, {v}); }

  long long numel() const { return static_cast<long long>(values.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  int rows() const { return shape.size() == 2 ? shape[0] : throw_not_2d(); }
  int cols() const { return shape.size() == 2 ? shape[1] : throw_not_2d(); }

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  bool has_grad() const { return !grad.empty(); }

 private:
  int throw_not_2d() const {
    throw std::logic_error("tensor: expected 2-d, got shape " + shape_str(shape));
  }
};

// Define-by-run tape: records every operation of one forward pass in
// topological order and replays the backward rules in reverse. Rebuilt for
// every forward pass; `recording=false` gives a plain no-grad forward.
class Tape {
 public:
  struct Node {
    TensorPtr output;
    std::function<void()> backward;
  };

  bool recording = true;

  void record(TensorPtr output, std::function<void()> backward) {
    if (recording) nodes_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Gradients
  // accumulate into every tensor on the path whose needs_grad is set;
  // everything else is left untouched.
  void backward(const TensorPtr& loss) {
    if (loss->numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output->has_grad()) continue;  // not on the path from loss
      it->backward();
    }
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace morpho
