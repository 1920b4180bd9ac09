#include "rdpi/autodiff.hpp"

#include <cmath>

#include "rdpi/error.hpp"

namespace rdpi::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

Matrix& Tape::grad_buffer(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& out) {
  if (out.rows() != 1 || out.cols() != 1) throw DimensionError("backward: output must be 1x1");
  if (!out.requires_grad()) return;
  grad_buffer(out.id()).setOnes();
  for (int i = out.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": operand shapes disagree");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate_expr(ib, -t.grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self) * s); });
}

Var mul_const(const Var& a, const Matrix& w) {
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw DimensionError("mul_const: shapes disagree");
  const int ia = a.id();
  return a.tape()->record(a.value().cwiseProduct(w), {a},
                          [ia, w](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self).cwiseProduct(w)); });
}

Var add_const(const Var& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DimensionError("add_const: shapes disagree");
  const int ia = a.id();
  return a.tape()->record(a.value() + c, {a}, [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  const int ia = a.id(), ib = b.id();
  Matrix out;
  out.noalias() = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: bias must be 1 x cols");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().array().tanh().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate_expr(ia, (t.grad(self).array() * (1.0 - y.square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate_expr(ia, (t.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var silu(const Var& a) {
  const int ia = a.id();
  const auto x = a.value().array();
  Matrix out = (x / (1.0 + (-x).exp())).matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
    const auto xv = t.value(ia).array();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-xv).exp());
    t.accumulate_expr(ia, (t.grad(self).array() * (s * (1.0 + xv * (1.0 - s)))).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts disagree");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    at += p.cols();
  }
  return parts[0].tape()->record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index c = 0;
    for (const auto& [id, width] : spans) {
      if (t.requires_grad(id)) t.accumulate_expr(id, g.middleCols(c, width));
      c += width;
    }
  });
}

Var gather_rows(const Var& table, std::vector<int> index) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), tv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= tv.rows()) throw IndexError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(index[r]);
  }
  const int it = table.id();
  return table.tape()->record(std::move(out), {table}, [it, index = std::move(index)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& dt = t.grad_buffer(it);
    for (std::size_t r = 0; r < index.size(); ++r) dt.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var time_shift(const Var& x, const GridLayout& layout, int offset) {
  if (x.rows() != layout.rows()) throw DimensionError("time_shift: rows disagree with layout");
  const Eigen::Index L = layout.time, N = layout.nodes, C = x.cols();
  Matrix out = Matrix::Zero(x.rows(), C);
  const Eigen::Index len = L - std::abs(offset);
  if (len > 0) {
    const Eigen::Index dst_t = offset >= 0 ? 0 : -offset;
    const Eigen::Index src_t = offset >= 0 ? offset : 0;
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      out.middleRows(layout.row(b, dst_t, 0), len * N) = x.value().middleRows(layout.row(b, src_t, 0), len * N);
  }
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, layout, offset, len, N](Tape& t, int self) {
    if (len <= 0) return;
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad_buffer(ix);
    const Eigen::Index dst_t = offset >= 0 ? 0 : -offset;
    const Eigen::Index src_t = offset >= 0 ? offset : 0;
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      dx.middleRows(layout.row(b, src_t, 0), len * N) += g.middleRows(layout.row(b, dst_t, 0), len * N);
  });
}

Var time_slice(const Var& x, const GridLayout& layout, Eigen::Index t_index) {
  if (x.rows() != layout.rows()) throw DimensionError("time_slice: rows disagree with layout");
  const Eigen::Index N = layout.nodes;
  Matrix out(layout.batch * N, x.cols());
  for (Eigen::Index b = 0; b < layout.batch; ++b)
    out.middleRows(b * N, N) = x.value().middleRows(layout.row(b, t_index, 0), N);
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, layout, t_index, N](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      dx.middleRows(layout.row(b, t_index, 0), N) += g.middleRows(b * N, N);
  });
}

Var stack_time(std::span<const Var> slices, const GridLayout& layout) {
  if (static_cast<Eigen::Index>(slices.size()) != layout.time) throw DimensionError("stack_time: need one slice per step");
  const Eigen::Index N = layout.nodes;
  const Eigen::Index C = slices[0].cols();
  Matrix out(layout.rows(), C);
  std::vector<int> ids;
  for (Eigen::Index t = 0; t < layout.time; ++t) {
    const auto& s = slices[static_cast<std::size_t>(t)];
    if (s.rows() != layout.batch * N || s.cols() != C) throw DimensionError("stack_time: slice shape");
    for (Eigen::Index b = 0; b < layout.batch; ++b) out.middleRows(layout.row(b, t, 0), N) = s.value().middleRows(b * N, N);
    ids.push_back(s.id());
  }
  return slices[0].tape()->record(std::move(out), slices, [ids, layout, N](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (Eigen::Index ti = 0; ti < layout.time; ++ti) {
      const int id = ids[static_cast<std::size_t>(ti)];
      if (!t.requires_grad(id)) continue;
      Matrix& d = t.grad_buffer(id);
      for (Eigen::Index b = 0; b < layout.batch; ++b) d.middleRows(b * N, N) += g.middleRows(layout.row(b, ti, 0), N);
    }
  });
}

Var block_mix(const Var& x, const Matrix& mix, const GridLayout& layout) {
  if (x.rows() != layout.rows() || mix.rows() != layout.nodes || mix.cols() != layout.nodes)
    throw DimensionError("block_mix: shapes disagree with layout");
  const Eigen::Index N = layout.nodes;
  const Eigen::Index blocks = layout.batch * layout.time;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < blocks; ++k) out.middleRows(k * N, N).noalias() = mix * x.value().middleRows(k * N, N);
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, mix, N, blocks](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index k = 0; k < blocks; ++k) dx.middleRows(k * N, N).noalias() += mix.transpose() * g.middleRows(k * N, N);
  });
}

Var node_mix(const Var& x, const Matrix& mix, Eigen::Index batch) {
  return block_mix(x, mix, GridLayout{batch, 1, mix.rows()});
}

Var self_attention(const Var& q, const Var& k, const Var& v, const GridLayout& layout, AttentionAxis axis,
                   int heads, double scale, std::vector<Matrix>* tap) {
  same_shape(q, k, "self_attention");
  same_shape(q, v, "self_attention");
  if (q.rows() != layout.rows()) throw DimensionError("self_attention: rows disagree with layout");
  if (heads < 1 || q.cols() % heads != 0) throw DimensionError("self_attention: width not divisible by heads");
  const Eigen::Index dh = q.cols() / heads;

  // Group g -> list of rows.
  std::vector<std::vector<Eigen::Index>> groups;
  if (axis == AttentionAxis::temporal) {
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      for (Eigen::Index n = 0; n < layout.nodes; ++n) {
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(layout.time));
        for (Eigen::Index t = 0; t < layout.time; ++t) rows[static_cast<std::size_t>(t)] = layout.row(b, t, n);
        groups.push_back(std::move(rows));
      }
  } else {
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      for (Eigen::Index t = 0; t < layout.time; ++t) {
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(layout.nodes));
        for (Eigen::Index n = 0; n < layout.nodes; ++n) rows[static_cast<std::size_t>(n)] = layout.row(b, t, n);
        groups.push_back(std::move(rows));
      }
  }

  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  Matrix out(Q.rows(), Q.cols());
  std::vector<Matrix> probs;
  probs.reserve(groups.size() * static_cast<std::size_t>(heads));
  for (const auto& rows : groups) {
    const Matrix Qg = Q(rows, Eigen::all);
    const Matrix Kg = K(rows, Eigen::all);
    const Matrix Vg = V(rows, Eigen::all);
    Matrix Og(static_cast<Eigen::Index>(rows.size()), Q.cols());
    for (int h = 0; h < heads; ++h) {
      Matrix S = (Qg.middleCols(h * dh, dh) * Kg.middleCols(h * dh, dh).transpose()) * scale;
      Eigen::VectorXd mx = S.rowwise().maxCoeff();
      S.colwise() -= mx;
      S = S.array().exp().matrix();
      Eigen::VectorXd z = S.rowwise().sum();
      for (Eigen::Index r = 0; r < S.rows(); ++r) S.row(r) /= z(r);
      Og.middleCols(h * dh, dh).noalias() = S * Vg.middleCols(h * dh, dh);
      if (tap) tap->push_back(S);
      probs.push_back(std::move(S));
    }
    out(rows, Eigen::all) = Og;
  }

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, scale, groups = std::move(groups), probs = std::move(probs)](Tape& t, int self) {
        const Matrix& G = t.grad(self);
        const Matrix& Qv = t.value(iq);
        const Matrix& Kv = t.value(ik);
        const Matrix& Vv = t.value(iv);
        const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik), need_v = t.requires_grad(iv);
        Matrix dQ = Matrix::Zero(Qv.rows(), Qv.cols());
        Matrix dK = Matrix::Zero(Qv.rows(), Qv.cols());
        Matrix dV = Matrix::Zero(Qv.rows(), Qv.cols());
        std::size_t p = 0;
        for (const auto& rows : groups) {
          const Matrix Gg = G(rows, Eigen::all);
          const Matrix Qg = Qv(rows, Eigen::all);
          const Matrix Kg = Kv(rows, Eigen::all);
          const Matrix Vg = Vv(rows, Eigen::all);
          Matrix dQg(Qg.rows(), Qg.cols()), dKg(Qg.rows(), Qg.cols()), dVg(Qg.rows(), Qg.cols());
          for (int h = 0; h < heads; ++h) {
            const Matrix& P = probs[p++];
            const auto dO = Gg.middleCols(h * dh, dh);
            dVg.middleCols(h * dh, dh).noalias() = P.transpose() * dO;
            Matrix dP = dO * Vg.middleCols(h * dh, dh).transpose();
            const Eigen::VectorXd inner = (dP.cwiseProduct(P)).rowwise().sum();
            dP.colwise() -= inner;
            const Matrix dS = P.cwiseProduct(dP) * scale;
            dQg.middleCols(h * dh, dh).noalias() = dS * Kg.middleCols(h * dh, dh);
            dKg.middleCols(h * dh, dh).noalias() = dS.transpose() * Qg.middleCols(h * dh, dh);
          }
          if (need_q) dQ(rows, Eigen::all) = dQg;
          if (need_k) dK(rows, Eigen::all) = dKg;
          if (need_v) dV(rows, Eigen::all) = dVg;
        }
        if (need_q) t.accumulate(iq, dQ);
        if (need_k) t.accumulate(ik, dK);
        if (need_v) t.accumulate(iv, dV);
      });
}

Var weighted_mean_square(const Var& x, const Matrix& w) {
  if (x.rows() != w.rows() || x.cols() != w.cols()) throw DimensionError("weighted_mean_square: shapes disagree");
  const double total = w.sum();
  if (!(total > 0.0)) throw DataError("weighted_mean_square: empty weight mask");
  Matrix out(1, 1);
  out(0, 0) = (w.array() * x.value().array().square()).sum() / total;
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, w, total](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate_expr(ix, ((2.0 * g / total) * w.array() * t.value(ix).array()).matrix());
  });
}

Var weighted_mean_abs(const Var& x, const Matrix& w) {
  if (x.rows() != w.rows() || x.cols() != w.cols()) throw DimensionError("weighted_mean_abs: shapes disagree");
  const double total = w.sum();
  if (!(total > 0.0)) throw DataError("weighted_mean_abs: empty weight mask");
  Matrix out(1, 1);
  out(0, 0) = (w.array() * x.value().array().abs()).sum() / total;
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, w, total](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate_expr(ix, ((g / total) * w.array() * t.value(ix).array().sign()).matrix());
  });
}

}  // namespace rdpi::ad
