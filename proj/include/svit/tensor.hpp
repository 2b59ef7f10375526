#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every op that receives at
// least one input with requires_grad() produces a node that remembers its
// inputs and a backward rule; backward() orders those nodes topologically and
// runs each rule exactly once. Instantiated for float (training) and double
// (gradient checking).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace svit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;  // set once a backward pass has run through this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor();
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false);
  // Truncated normal (cut at two standard deviations) with the given std.
  static Tensor trunc_normal(Shape shape, T std, std::mt19937_64& rng,
                             bool requires_grad = true);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient values; zeros if nothing has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> grad_mut() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  // Fresh leaf holding a copy of the values; no history.
  Tensor detach() const;
  bool is_leaf() const { return node_->parents.empty(); }
  const char* op_name() const { return node_->op; }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

// Topologically ordered record of the operations that produced a root tensor.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  // Seeds d(root)/d(root) = 1 and runs every backward rule once, in reverse
  // order. Returns the number of records visited.
  std::size_t backward();

 private:
  std::vector<std::shared_ptr<detail::Node<T>>> order_;
  std::shared_ptr<detail::Node<T>> root_;
};

// Scalar loss only. Throws ContractError for non-scalar input or when the
// graph has already been consumed by an earlier backward call.
template <typename T>
std::size_t backward(const Tensor<T>& loss);

// a[m,k] . b[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Batched product: a[g,m,k] . b[g,k,n], or a . b^T when b is [g,n,k].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Elementwise with suffix broadcasting: b's shape must equal a's shape or a
// trailing part of it (e.g. a bias [n] against [m,n]).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// tanh approximation
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
// Normalizes to zero mean / unit variance along axis, without affine terms.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, int axis, T eps = T(1e-5));

// Mean negative log-likelihood of labels under softmax(logits).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Picks one element (flat row-major index) as a scalar.
template <typename T>
Tensor<T> element(const Tensor<T>& x, std::size_t flat_index);
// out[r] = src[index[r]], or a zero row for index -1. src is [rows, n].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const long> index);
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
// [batch*len, heads*hd] -> [batch*heads, len, hd]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch, std::size_t heads);
// [batch*heads, len, hd] -> [batch*len, heads*hd]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.90;
  double beta2 = 0.99;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

// One Adam update on raw buffers, with L2 weight decay folded into the
// gradient. `step` is the 1-based step index used for bias correction.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m,
                 std::span<T> v, std::int64_t step, const AdamConfig& cfg);

// Adam over a parameter list; state is sized lazily on the first call. A
// parameter without an accumulated gradient sees a zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state,
               const AdamConfig& cfg);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace svit
