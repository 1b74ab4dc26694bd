#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace colt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Raised by ops on non-conforming operands. `op()` names the offending op.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, const std::string& detail)
      : std::invalid_argument(op + ": " + detail), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class IndexError : public std::out_of_range {
 public:
  IndexError(std::string op, std::size_t index, std::size_t bound)
      : std::out_of_range(op + ": index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(bound) + ")"),
        op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
inline thread_local bool grad_recording = true;
}

inline bool grad_enabled() { return detail::grad_recording; }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty() && !backward; }

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Dense row-major array participating in reverse-mode differentiation.
// Copies share the underlying node; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw ShapeError("tensor", "data length " + std::to_string(values.size()) +
                                     " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : dim(0); }
  std::size_t cols() const { return rank() < 2 ? (rank() == 1 ? dim(0) : 1) : numel() / dim(0); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T* ptr() { return node_->value.data(); }
  const T* ptr() const { return node_->value.data(); }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item", "tensor " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  // New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->value, false); }
  Tensor clone() const { return from(shape(), node_->value, requires_grad()); }

  Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  std::vector<T> to_vector() const { return node_->value; }

 private:
  NodePtr node_;
};

// Operations reachable from `root`, in the order backward visits them. Holds
// owning references so nodes survive while the graph is being released.
template <class T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  explicit Tape(const Tensor<T>& root) {
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack{{root.node_ptr(), 0}};
    seen.insert(root.node());
    std::vector<NodePtr> post;
    while (!stack.empty()) {
      Node<T>* n = stack.back().first.get();
      const std::size_t i = stack.back().second;
      if (i < n->parents.size()) {
        ++stack.back().second;
        const NodePtr& p = n->parents[i];
        if (seen.insert(p.get()).second) stack.emplace_back(p, 0);
      } else {
        post.push_back(std::move(stack.back().first));
        stack.pop_back();
      }
    }
    order_.assign(std::make_move_iterator(post.rbegin()), std::make_move_iterator(post.rend()));
  }

  const std::vector<NodePtr>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<NodePtr> order_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad,
// then releases the recorded graph. A second call on the same graph throws.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GradError("backward: undefined tensor");
  if (loss.numel() != 1)
    throw GradError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node<T>* root = loss.node();
  if (root->consumed) throw GradError("backward: graph already consumed");
  if (!root->requires_grad) throw GradError("backward: loss does not require grad");

  Tape<T> tape(loss);
  root->grad_buffer()[0] += T(1);
  for (const auto& n : tape.order()) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (const auto& n : tape.order()) {
    if (n->requires_grad && n->is_leaf()) n->grad_buffer();
    if (!n->is_leaf()) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->consumed = true;
    }
  }
}

}  // namespace colt
