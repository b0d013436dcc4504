#ifndef DACKGR_AUTODIFF_H_
#define DACKGR_AUTODIFF_H_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dackgr/tensor.h"

namespace dackgr {

using Rng = std::mt19937_64;

// A trainable tensor with a gradient accumulator and a stable name used by
// checkpoints.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

namespace ad {

class Graph;

// Handle to a node on a Graph's tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Row-wise validity mask: 1 keeps an entry, 0 removes it from a softmax.
using Mask = std::vector<std::uint8_t>;

// Reverse-mode tape. Nodes are appended in evaluation order so the tape is
// already topologically sorted. With grad disabled no backward closures are
// recorded and the graph acts as a plain evaluator.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var parameter(Parameter& p);

  // Populates gradients of every reachable Parameter. Parameter gradients
  // accumulate; callers zero them between optimizer steps.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad(int id);
  std::size_t size() const { return nodes_.size(); }

  // Appends a node. `backward` receives the graph and the node id; it is
  // dropped when no input requires a gradient.
  Var record(Tensor value, bool requires_grad,
             std::function<void(Graph&, int)> backward);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// Embedding rows of `table` for each id. Output [ids.size() x dim].
Var lookup(Graph& g, Parameter& table, std::span<const int> ids);

Var matmul(Var a, Var b);                 // [n x k] . [k x m]
Var matmul_transposed(Var a, Var b);      // [n x k] . [m x k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var x, Var bias);            // bias [1 x cols] broadcast on rows
Var concat(std::span<const Var> parts);   // along columns
Var concat(std::initializer_list<Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t width);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var log(Var x);
Var abs(Var x);

// Row-wise softmax over entries with mask 1. Masked entries get exactly zero
// probability. Logits are clipped to +-kLogitClip first. Rows without any
// valid entry are all zero.
inline constexpr double kLogitClip = 50.0;
Var softmax(Var logits, const Mask* mask = nullptr);
// Masked entries are reported as 0 (not -inf) and receive no gradient.
Var log_softmax(Var logits, const Mask* mask = nullptr);

// Inverted dropout; identity when rate is 0 or training is false.
Var dropout(Var x, double rate, Rng& rng, bool training);

// Valid-padding stride-1 convolution. input [N,C,H,W], filters [F,C,kh,kw],
// bias [1,F]; output [N,F,H-kh+1,W-kw+1].
Var conv2d(Var input, Var filters, Var bias);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};
// Per-channel normalization over axis 1 of a rank-2 [N,C] or rank-4
// [N,C,H,W] tensor. Training uses batch statistics and updates the running
// ones; inference uses the running statistics.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats,
               bool training, double momentum = 0.1, double eps = 1e-5);

Var reshape(Var x, Shape shape);
Var detach(Var x);

// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Var bce_with_logits(Var logits, const Tensor& targets);
// Mean categorical cross-entropy of unmasked softmax(logits) against
// integer class targets.
Var cross_entropy(Var logits, std::span<const int> targets);

Var pick(Var x, std::span<const int> cols);       // [n x 1]: x[i, cols[i]]
Var gather_rows(Var x, std::span<const int> rows);
Var stack_rows(std::span<const Var> rows);
Var sum(Var x);                                   // [1 x 1]
Var mean(Var x);                                  // [1 x 1]
Var row_sum(Var x);                               // [n x 1]
// Grouped row dot product: out[i, j] = dot(a[i*group + j], q[i]).
// a [n*group x k], q [n x k]; output [n x group].
Var group_dot(Var a, Var q, std::size_t group);

}  // namespace ad
}  // namespace dackgr

#endif  // DACKGR_AUTODIFF_H_
