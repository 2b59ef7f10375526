#include "svit/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "svit/error.hpp"

namespace svit {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<NodePtr<T>> inputs,
                      std::function<void(detail::Node<T>&)> rule) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Outer/axis/inner extents for a reduction along `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw AxisError(std::string(op) + ": axis out of range for shape " +
                    shape_str(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - tail.size());
}

}  // namespace

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::trunc_normal(Shape shape, T std, std::mt19937_64& rng,
                                  bool requires_grad) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = static_cast<T>(z * static_cast<double>(std));
  }
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= node_->shape.size()) {
    throw AxisError("dim " + std::to_string(i) + " out of range for shape " +
                    shape_str(node_->shape));
  }
  return node_->shape[i];
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(node_->shape));
  }
  return node_->data[0];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

// ---------------------------------------------------------------- Tape

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  tape.root_ = root.node();
  std::unordered_set<const detail::Node<T>*> seen;
  // Iterative post-order DFS: parents are emitted before their children.
  std::vector<std::pair<std::shared_ptr<detail::Node<T>>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<detail::Node<T>> parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
std::size_t Tape<T>::backward() {
  if (root_->consumed) {
    throw ContractError(
        "backward: graph already consumed by a previous backward pass");
  }
  auto& seed = root_->grad_buffer();
  std::fill(seed.begin(), seed.end(), T(1));
  std::size_t visited = 0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node<T>& node = **it;
    ++visited;
    if (node.backward) {
      node.grad_buffer();
      node.backward(node);
      node.backward = nullptr;
      node.parents.clear();
    }
    node.consumed = true;
  }
  return visited;
}

template <typename T>
std::size_t backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor requiring grad");
  }
  return Tape<T>::record(loss).backward();
}

// ---------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      CMatMap<T>(a.data().data(), m, k) * CMatMap<T>(b.data().data(), k, n);
  return make_result<T>(
      {m, n}, std::move(out), "matmul", {a.node(), b.node()},
      [m, k, n](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMatMap<T> g(self.grad.data(), m, n);
        if (pa.requires_grad) {
          MatMap<T>(pa.grad_buffer().data(), m, k).noalias() +=
              g * CMatMap<T>(pb.data.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
          MatMap<T>(pb.grad_buffer().data(), k, n).noalias() +=
              CMatMap<T>(pa.data.data(), m, k).transpose() * g;
        }
      });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  if (!ok) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()) +
                         (transpose_b ? " (transposed)" : ""));
  }
  const auto g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<T> out(g * m * n);
  for (std::size_t i = 0; i < g; ++i) {
    CMatMap<T> ai(a.data().data() + i * m * k, m, k);
    MatMap<T> oi(out.data() + i * m * n, m, n);
    if (transpose_b) {
      oi.noalias() = ai * CMatMap<T>(b.data().data() + i * n * k, n, k).transpose();
    } else {
      oi.noalias() = ai * CMatMap<T>(b.data().data() + i * k * n, k, n);
    }
  }
  return make_result<T>(
      {g, m, n}, std::move(out), "bmm", {a.node(), b.node()},
      [g, m, k, n, transpose_b](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
          CMatMap<T> gi(self.grad.data() + i * m * n, m, n);
          CMatMap<T> ai(pa.data.data() + i * m * k, m, k);
          if (transpose_b) {
            CMatMap<T> bi(pb.data.data() + i * n * k, n, k);
            if (pa.requires_grad) {
              MatMap<T>(pa.grad_buffer().data() + i * m * k, m, k).noalias() += gi * bi;
            }
            if (pb.requires_grad) {
              MatMap<T>(pb.grad_buffer().data() + i * n * k, n, k).noalias() +=
                  gi.transpose() * ai;
            }
          } else {
            CMatMap<T> bi(pb.data.data() + i * k * n, k, n);
            if (pa.requires_grad) {
              MatMap<T>(pa.grad_buffer().data() + i * m * k, m, k).noalias() +=
                  gi * bi.transpose();
            }
            if (pb.requires_grad) {
              MatMap<T>(pb.grad_buffer().data() + i * k * n, k, n).noalias() +=
                  ai.transpose() * gi;
            }
          }
        }
      });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError("add: shape " + shape_str(b.shape()) +
                         " does not broadcast to " + shape_str(a.shape()));
  }
  const std::size_t nb = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t base = 0; base < out.size(); base += nb) {
    for (std::size_t j = 0; j < nb; ++j) out[base + j] += bd[j];
  }
  return make_result<T>(a.shape(), std::move(out), "add", {a.node(), b.node()},
                        [nb](detail::Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto& ga = pa.grad_buffer();
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            auto& gb = pb.grad_buffer();
                            for (std::size_t base = 0; base < self.grad.size(); base += nb) {
                              for (std::size_t j = 0; j < nb; ++j) gb[j] += self.grad[base + j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError("mul: shape " + shape_str(b.shape()) +
                         " does not broadcast to " + shape_str(a.shape()));
  }
  const std::size_t nb = b.numel();
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t base = 0; base < out.size(); base += nb) {
    for (std::size_t j = 0; j < nb; ++j) out[base + j] = ad[base + j] * bd[j];
  }
  return make_result<T>(a.shape(), std::move(out), "mul", {a.node(), b.node()},
                        [nb](detail::Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto& ga = pa.grad_buffer();
                            for (std::size_t base = 0; base < ga.size(); base += nb) {
                              for (std::size_t j = 0; j < nb; ++j) {
                                ga[base + j] += self.grad[base + j] * pb.data[j];
                              }
                            }
                          }
                          if (pb.requires_grad) {
                            auto& gb = pb.grad_buffer();
                            for (std::size_t base = 0; base < self.grad.size(); base += nb) {
                              for (std::size_t j = 0; j < nb; ++j) {
                                gb[j] += self.grad[base + j] * pa.data[base + j];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), "scale", {x.node()},
                        [factor](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), "relu", {x.node()},
                        [](detail::Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& gx = px.grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            if (px.data[i] > T(0)) gx[i] += self.grad[i];
                          }
                        });
}

namespace {
template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = T(0.044715);
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v)));
  }
  return make_result<T>(
      x.shape(), std::move(out), "gelu", {x.node()}, [](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& gx = px.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T v = px.data[i];
          const T t = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
          const T dt = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
          gx[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dt);
        }
      });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>({}, {total}, "sum", {x.node()}, [](detail::Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  Shape out_shape;
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  for (int i = 0; i < rank; ++i) {
    if (i != ax) out_shape.push_back(x.shape()[i]);
  }
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xd[(o * s.n + k) * s.inner + i];
      }
    }
  }
  const T inv = T(1) / static_cast<T>(s.n);
  for (auto& v : out) v *= inv;
  return make_result<T>(std::move(out_shape), std::move(out), "mean", {x.node()},
                        [s, inv](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            for (std::size_t k = 0; k < s.n; ++k) {
                              for (std::size_t i = 0; i < s.inner; ++i) {
                                gx[(o * s.n + k) * s.inner + i] += inv * self.grad[o * s.inner + i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      T peak = xd[at(0)];
      for (std::size_t k = 1; k < s.n; ++k) peak = std::max(peak, xd[at(k)]);
      T total = T(0);
      for (std::size_t k = 0; k < s.n; ++k) {
        out[at(k)] = std::exp(xd[at(k)] - peak);
        total += out[at(k)];
      }
      for (std::size_t k = 0; k < s.n; ++k) out[at(k)] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node()},
                        [s](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          const auto& y = self.data;
                          const auto& g = self.grad;
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const auto at = [&](std::size_t k) {
                                return (o * s.n + k) * s.inner + i;
                              };
                              T dot = T(0);
                              for (std::size_t k = 0; k < s.n; ++k) dot += g[at(k)] * y[at(k)];
                              for (std::size_t k = 0; k < s.n; ++k) {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, int axis, T eps) {
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  std::vector<T> out(x.numel());
  std::vector<T> rstd(s.outer * s.inner);
  const auto xd = x.data();
  const T inv_n = T(1) / static_cast<T>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      T mu = T(0);
      for (std::size_t k = 0; k < s.n; ++k) mu += xd[at(k)];
      mu *= inv_n;
      T var = T(0);
      for (std::size_t k = 0; k < s.n; ++k) {
        const T d = xd[at(k)] - mu;
        var += d * d;
      }
      var *= inv_n;
      const T r = T(1) / std::sqrt(var + eps);
      rstd[o * s.inner + i] = r;
      for (std::size_t k = 0; k < s.n; ++k) out[at(k)] = (xd[at(k)] - mu) * r;
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node()},
      [s, inv_n, rstd = std::move(rstd)](detail::Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const auto& xhat = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
            T gsum = T(0), gxhat = T(0);
            for (std::size_t k = 0; k < s.n; ++k) {
              gsum += g[at(k)];
              gxhat += g[at(k)] * xhat[at(k)];
            }
            const T r = rstd[o * s.inner + i];
            for (std::size_t k = 0; k < s.n; ++k) {
              gx[at(k)] += r * (g[at(k)] - inv_n * gsum - xhat[at(k)] * inv_n * gxhat);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const auto b = logits.dim(0), c = logits.dim(1);
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw LabelError("cross_entropy: label " + std::to_string(labels[r]) +
                       " at row " + std::to_string(r) + " outside [0," +
                       std::to_string(c) + ")");
    }
  }
  const auto ld = logits.data();
  std::vector<T> probs(b * c);
  T loss = T(0);
  for (std::size_t r = 0; r < b; ++r) {
    const T* row = ld.data() + r * c;
    const T peak = *std::max_element(row, row + c);
    T total = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(row[j] - peak);
      total += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= total;
    loss += peak + std::log(total) - row[labels[r]];
  }
  loss /= static_cast<T>(b);
  std::vector<int> owned(labels.begin(), labels.end());
  return make_result<T>(
      {}, {loss}, "cross_entropy", {logits.node()},
      [b, c, probs = std::move(probs), owned = std::move(owned)](detail::Node<T>& self) {
        auto& gl = self.parents[0]->grad_buffer();
        const T coef = self.grad[0] / static_cast<T>(b);
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const T onehot = static_cast<int>(j) == owned[r] ? T(1) : T(0);
            gl[r * c + j] += coef * (probs[r * c + j] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------- layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x.node()},
                        [](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> element(const Tensor<T>& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw DimensionError("element: index " + std::to_string(flat_index) +
                         " outside tensor " + shape_str(x.shape()));
  }
  return make_result<T>({}, {x.data()[flat_index]}, "element", {x.node()},
                        [flat_index](detail::Node<T>& self) {
                          self.parents[0]->grad_buffer()[flat_index] += self.grad[0];
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const long> index) {
  if (src.rank() != 2) {
    throw DimensionError("gather_rows: source must be 2-D, got " + shape_str(src.shape()));
  }
  const auto rows = src.dim(0), n = src.dim(1);
  std::vector<T> out(index.size() * n, T(0));
  const auto sd = src.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < -1 || index[r] >= static_cast<long>(rows)) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) +
                           " outside " + std::to_string(rows) + " rows");
    }
    if (index[r] >= 0) {
      std::copy_n(sd.data() + index[r] * n, n, out.data() + r * n);
    }
  }
  std::vector<long> owned(index.begin(), index.end());
  return make_result<T>({index.size(), n}, std::move(out), "gather_rows", {src.node()},
                        [n, owned = std::move(owned)](detail::Node<T>& self) {
                          auto& gs = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < owned.size(); ++r) {
                            if (owned[r] < 0) continue;
                            for (std::size_t j = 0; j < n; ++j) {
                              gs[owned[r] * n + j] += self.grad[r * n + j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("concat_rows: " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  return make_result<T>({a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), "concat_rows",
                        {a.node(), b.node()}, [na](detail::Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto& ga = pa.grad_buffer();
                            for (std::size_t i = 0; i < na; ++i) ga[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            auto& gb = pb.grad_buffer();
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[na + i];
                          }
                        });
}

namespace {
// Maps between [batch*len, heads*hd] and [batch*heads, len, hd] offsets.
struct HeadLayout {
  std::size_t batch, len, heads, hd;
  std::size_t flat(std::size_t b, std::size_t l, std::size_t h, std::size_t d) const {
    return (b * len + l) * heads * hd + h * hd + d;
  }
  std::size_t split(std::size_t b, std::size_t l, std::size_t h, std::size_t d) const {
    return ((b * heads + h) * len + l) * hd + d;
  }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t d = 0; d < hd; ++d) f(flat(b, l, h, d), split(b, l, h, d));
  }
};
}  // namespace

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch, std::size_t heads) {
  if (x.rank() != 2 || batch == 0 || heads == 0 || x.dim(0) % batch != 0 ||
      x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                         std::to_string(batch) + " sequences x " +
                         std::to_string(heads) + " heads");
  }
  const HeadLayout lay{batch, x.dim(0) / batch, heads, x.dim(1) / heads};
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  lay.for_each([&](std::size_t f, std::size_t s) { out[s] = xd[f]; });
  return make_result<T>({batch * heads, lay.len, lay.hd}, std::move(out), "split_heads",
                        {x.node()}, [lay](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          lay.for_each([&](std::size_t f, std::size_t s) { gx[f] += self.grad[s]; });
                        });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch) {
  if (x.rank() != 3 || batch == 0 || x.dim(0) % batch != 0) {
    throw DimensionError("merge_heads: cannot merge " + shape_str(x.shape()) + " over " +
                         std::to_string(batch) + " sequences");
  }
  const HeadLayout lay{batch, x.dim(1), x.dim(0) / batch, x.dim(2)};
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  lay.for_each([&](std::size_t f, std::size_t s) { out[f] = xd[s]; });
  return make_result<T>({batch * lay.len, lay.heads * lay.hd}, std::move(out), "merge_heads",
                        {x.node()}, [lay](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->grad_buffer();
                          lay.for_each([&](std::size_t f, std::size_t s) { gx[s] += self.grad[f]; });
                        });
}

// ---------------------------------------------------------------- Adam

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m,
                 std::span<T> v, std::int64_t step, const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size()) {
    throw DimensionError("adam: parameter has " + std::to_string(param.size()) +
                         " values but gradient/moments have " +
                         std::to_string(grad.size()) + "/" + std::to_string(m.size()) +
                         "/" + std::to_string(v.size()));
  }
  if (step < 1) throw ContractError("adam: step index must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + cfg.weight_decay * static_cast<double>(param[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double update = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad()) continue;
    const std::vector<T> g = params[i].grad();
    adam_update<T>(params[i].data(), g, state.m[i], state.v[i], state.step, cfg);
  }
}

// ---------------------------------------------------------------- instantiation

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

#define SVIT_INSTANTIATE_OPS(T)                                                        \
  template std::size_t backward<T>(const Tensor<T>&);                                  \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                        \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                         \
  template Tensor<T> mean<T>(const Tensor<T>&, int);                                   \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, int, T);                          \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);         \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                              \
  template Tensor<T> element<T>(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const long>);          \
  template Tensor<T> concat_rows<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> split_heads<T>(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> merge_heads<T>(const Tensor<T>&, std::size_t);                    \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>,         \
                               std::span<T>, std::int64_t, const AdamConfig&);         \
  template void adam_step<T>(std::span<Tensor<T>>, AdamState<T>&, const AdamConfig&);

SVIT_INSTANTIATE_OPS(float)
SVIT_INSTANTIATE_OPS(double)

#undef SVIT_INSTANTIATE_OPS

}  // namespace svit
