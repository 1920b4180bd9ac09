#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rdpi::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] const Matrix& grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] int id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Row layout of a batch of time x node grids flattened to feature rows:
/// row(b, t, n) = (b * time + t) * nodes + n.
struct GridLayout {
  Eigen::Index batch = 1;
  Eigen::Index time = 1;
  Eigen::Index nodes = 1;

  [[nodiscard]] Eigen::Index rows() const noexcept { return batch * time * nodes; }
  [[nodiscard]] Eigen::Index row(Eigen::Index b, Eigen::Index t, Eigen::Index n) const noexcept {
    return (b * time + t) * nodes + n;
  }
};

enum class AttentionAxis { temporal, spatial };

/// Reverse-mode tape. Nodes are appended in evaluation order; `backward`
/// walks them in reverse. Nodes that do not depend on any gradient-requiring
/// input carry no backward closure.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(const Var& scalar_output);

  [[nodiscard]] const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  [[nodiscard]] const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds g to the gradient of node `id` (no-op when it needs none).
  void accumulate(int id, const Matrix& g);
  template <typename Derived>
  void accumulate_expr(int id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }
  Matrix& grad_buffer(int id);

  /// Appends a node computed from `parents`.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a * w elementwise with a constant w of the same shape.
Var mul_const(const Var& a, const Matrix& w);
/// a + c with a constant c of the same shape.
Var add_const(const Var& a, const Matrix& c);
Var matmul(const Var& a, const Var& b);
/// Adds a 1 x cols row vector to every row.
Var add_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var concat_cols(std::span<const Var> parts);

/// out.row(r) = table.row(index[r]).
Var gather_rows(const Var& table, std::vector<int> index);

// Grid-structured ops on GridLayout-shaped features.
/// out(b, t, n) = x(b, t + offset, n), zero outside the window.
Var time_shift(const Var& x, const GridLayout& layout, int offset);
/// Rows (b, t, *) for every b, stacked: (batch * nodes) x cols.
Var time_slice(const Var& x, const GridLayout& layout, Eigen::Index t);
/// Inverse of time_slice over all t.
Var stack_time(std::span<const Var> slices, const GridLayout& layout);
/// Per (b, t) block of nodes: out_block = mix * x_block. `mix` is nodes x nodes.
Var block_mix(const Var& x, const Matrix& mix, const GridLayout& layout);
/// Same with a per-row node-state layout (batch * nodes rows).
Var node_mix(const Var& x, const Matrix& mix, Eigen::Index batch);

/// Multi-head scaled dot-product self-attention within groups: temporal
/// groups are the rows of one (b, n) series, spatial groups the rows of one
/// (b, t) snapshot. softmax(Q K^T * scale) V per head. When `tap` is given,
/// every attention matrix is appended to it.
Var self_attention(const Var& q, const Var& k, const Var& v, const GridLayout& layout,
                   AttentionAxis axis, int heads, double scale, std::vector<Matrix>* tap = nullptr);

// Reductions to 1x1.
/// sum(w .* x.^2) / sum(w).
Var weighted_mean_square(const Var& x, const Matrix& w);
/// sum(w .* |x|) / sum(w).
Var weighted_mean_abs(const Var& x, const Matrix& w);

}  // namespace rdpi::ad
