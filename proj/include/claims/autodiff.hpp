#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "claims/errors.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
// A TapeT records matrix-granular primitive operations; backward() replays
// them in reverse, accumulating gradients. Rank <= 2 only; scalars are 1x1.
namespace claims::ag {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Probabilities entering the cross-entropy primitive are clamped to
// [kBceClamp, 1 - kBceClamp] so the loss stays finite.
inline constexpr double kBceClamp = 1e-7;

// Trainable value. `value` is read through a stable pointer while a tape is
// alive; `grad` is (re)assigned by TapeT::backward.
template <typename Scalar>
struct ParameterT {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  ParameterT() = default;
  ParameterT(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(MatrixX<Scalar>::Zero(rows, cols)),
        grad(MatrixX<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename Scalar>
class TapeT;

// Lightweight handle to a tape node.
template <typename Scalar>
class VarT {
 public:
  VarT() = default;
  VarT(TapeT<Scalar>* tape, int index) : tape_(tape), index_(index) {}

  const MatrixX<Scalar>& value() const { return tape_->value(*this); }
  const MatrixX<Scalar>& grad() const { return tape_->grad(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  TapeT<Scalar>* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  TapeT<Scalar>* tape_ = nullptr;
  int index_ = -1;
};

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename M>
std::string shape_str(const M& m) {
  return shape_str(m.rows(), m.cols());
}

}  // namespace detail

template <typename Scalar>
class TapeT {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = VarT<Scalar>;
  using Parameter = ParameterT<Scalar>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Drops all recorded nodes; bound parameters are forgotten.
  void reset() {
    nodes_.clear();
    bound_.clear();
    param_index_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

  // Leaf holding a non-differentiable value (data).
  Var constant(Matrix v) {
    check_finite(v, "constant");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
  }

  Var constant_scalar(Scalar v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // Leaf bound to a parameter; repeated binding returns the same node.
  Var param(Parameter& p) {
    auto it = param_index_.find(&p);
    if (it != param_index_.end()) return Var(this, it->second);
    Node n;
    n.op = Op::kLeaf;
    n.external = &p.value;
    n.parameter = &p;
    n.needs_grad = true;
    Var v = push(std::move(n));
    param_index_.emplace(&p, v.index());
    bound_.push_back(&p);
    return v;
  }

  const Matrix& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
  }

  // Gradient of a node after backward(); zero matrix if untouched.
  const Matrix& grad(Var v) {
    Node& n = node_mut(v);
    if (n.grad.size() == 0) {
      const Matrix& val = value(v);
      n.grad = Matrix::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  // C = A * B
  Var matmul(Var a, Var b) {
    same_tape(a, b);
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows())
      throw DimensionError("matmul: inner dimensions disagree: " + detail::shape_str(A) + " * " +
                           detail::shape_str(B));
    Node n = binary(Op::kMatMul, a, b);
    n.value.noalias() = A * B;
    return push(std::move(n));
  }

  Var transpose(Var a) {
    Node n = unary(Op::kTranspose, a);
    n.value = value(a).transpose();
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    same_tape(a, b);
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw DimensionError("add: shapes disagree: " + detail::shape_str(A) + " vs " +
                           detail::shape_str(B));
    Node n = binary(Op::kAdd, a, b);
    n.value = A + B;
    return push(std::move(n));
  }

  // X + 1_T * b  (b broadcast over rows; b is 1 x d)
  Var add_rowvec(Var x, Var b) {
    same_tape(x, b);
    const Matrix& X = value(x);
    const Matrix& B = value(b);
    if (B.rows() != 1 || B.cols() != X.cols())
      throw DimensionError("add_rowvec: expected 1x" + std::to_string(X.cols()) + " bias, got " +
                           detail::shape_str(B));
    Node n = binary(Op::kAddRowVec, x, b);
    n.value = X.rowwise() + B.row(0);
    return push(std::move(n));
  }

  Var scale(Var a, Scalar s) {
    Node n = unary(Op::kScale, a);
    n.scalar = s;
    n.value = value(a) * s;
    return push(std::move(n));
  }

  Var relu(Var a) {
    check_finite(value(a), "relu input");
    Node n = unary(Op::kRelu, a);
    n.value = value(a).cwiseMax(Scalar(0));
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    check_finite(value(a), "sigmoid input");
    Node n = unary(Op::kSigmoid, a);
    n.value = value(a).unaryExpr([](Scalar x) {
      if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
      const Scalar e = std::exp(x);
      return e / (Scalar(1) + e);
    });
    return push(std::move(n));
  }

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    check_finite(value(a), "softmax input");
    const Matrix& A = value(a);
    Node n = unary(Op::kSoftmaxRows, a);
    n.value.resize(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      const Scalar m = A.row(r).maxCoeff();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (A.row(r).array() - m).exp();
      n.value.row(r) = e / e.sum();
    }
    return push(std::move(n));
  }

  // Per-row normalization to mean 0 / population variance 1 (+eps under the
  // root), then columnwise gain and bias. gain/bias are 1 x d.
  Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    const Matrix& X = value(x);
    const Matrix& G = value(gain);
    const Matrix& B = value(bias);
    if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols())
      throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(X.cols()) +
                           ", got " + detail::shape_str(G) + " and " + detail::shape_str(B));
    Node n;
    n.op = Op::kLayerNorm;
    n.a = x.index();
    n.b = gain.index();
    n.c = bias.index();
    n.scalar = eps;
    n.needs_grad = node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    n.value.resize(X.rows(), X.cols());
    const Scalar d = static_cast<Scalar>(X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const Scalar mu = X.row(r).mean();
      const Scalar var = (X.row(r).array() - mu).square().sum() / d;
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      n.value.row(r) =
          ((X.row(r).array() - mu) * inv * G.row(0).array() + B.row(0).array()).matrix();
    }
    return push(std::move(n));
  }

  // Output row t = table row idx[t]; backward sums into repeated rows.
  Var gather_rows(Var table, std::vector<int> idx) {
    const Matrix& T = value(table);
    for (std::size_t t = 0; t < idx.size(); ++t)
      if (idx[t] < 0 || idx[t] >= T.rows())
        throw IndexError("gather_rows: index " + std::to_string(idx[t]) + " at position " +
                         std::to_string(t) + " out of range [0, " + std::to_string(T.rows()) +
                         ")");
    Node n = unary(Op::kGatherRows, table);
    n.value.resize(static_cast<Eigen::Index>(idx.size()), T.cols());
    for (std::size_t t = 0; t < idx.size(); ++t)
      n.value.row(static_cast<Eigen::Index>(t)) = T.row(idx[t]);
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  // 1 x d row: sum_j coeff[j] * table.row(idx[j]). Sparse row-vector times
  // matrix; only touched rows receive gradient.
  Var rows_weighted_sum(Var table, std::vector<int> idx, std::vector<Scalar> coeff) {
    const Matrix& T = value(table);
    if (idx.size() != coeff.size())
      throw ContractError("rows_weighted_sum: index/coefficient count mismatch");
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (idx[j] < 0 || idx[j] >= T.rows())
        throw IndexError("rows_weighted_sum: index " + std::to_string(idx[j]) + " at position " +
                         std::to_string(j) + " out of range [0, " + std::to_string(T.rows()) +
                         ")");
    Node n = unary(Op::kRowsWeightedSum, table);
    n.value = Matrix::Zero(1, T.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) n.value.row(0) += coeff[j] * T.row(idx[j]);
    n.indices = std::move(idx);
    n.coeffs = std::move(coeff);
    return push(std::move(n));
  }

  // [A | B] column concatenation.
  Var hconcat(Var a, Var b) {
    same_tape(a, b);
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows())
      throw DimensionError("hconcat: row counts disagree: " + detail::shape_str(A) + " vs " +
                           detail::shape_str(B));
    Node n = binary(Op::kHConcat, a, b);
    n.value.resize(A.rows(), A.cols() + B.cols());
    n.value.leftCols(A.cols()) = A;
    n.value.rightCols(B.cols()) = B;
    return push(std::move(n));
  }

  // out.row(t) = x.row(t - k) where defined, else zero.
  Var shift_rows(Var x, int k) {
    const Matrix& X = value(x);
    Node n = unary(Op::kShiftRows, x);
    n.shift = k;
    n.value = Matrix::Zero(X.rows(), X.cols());
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
      const Eigen::Index src = t - k;
      if (src >= 0 && src < X.rows()) n.value.row(t) = X.row(src);
    }
    return push(std::move(n));
  }

  // Elementwise multiply by a constant matrix (dropout masks).
  Var cmul(Var x, Matrix mask) {
    const Matrix& X = value(x);
    if (mask.rows() != X.rows() || mask.cols() != X.cols())
      throw DimensionError("cmul: mask shape " + detail::shape_str(mask) + " does not match " +
                           detail::shape_str(X));
    Node n = unary(Op::kCMul, x);
    n.value = X.cwiseProduct(mask);
    n.aux = std::move(mask);
    return push(std::move(n));
  }

  // sum_i coeff[i] * vars[i], all same shape.
  Var linear_combination(std::span<const Var> vars, std::span<const Scalar> coeff) {
    if (vars.empty() || vars.size() != coeff.size())
      throw ContractError("linear_combination: needs equal nonzero operand/coefficient counts");
    const Matrix& first = value(vars[0]);
    Node n;
    n.op = Op::kLinComb;
    n.value = Matrix::Zero(first.rows(), first.cols());
    n.indices.reserve(vars.size());
    n.coeffs.assign(coeff.begin(), coeff.end());
    for (const Var& v : vars) {
      same_tape(vars[0], v);
      const Matrix& V = value(v);
      if (V.rows() != first.rows() || V.cols() != first.cols())
        throw DimensionError("linear_combination: shapes disagree: " + detail::shape_str(first) +
                             " vs " + detail::shape_str(V));
      n.indices.push_back(v.index());
      n.needs_grad = n.needs_grad || node(v).needs_grad;
    }
    for (std::size_t i = 0; i < vars.size(); ++i) n.value += coeff[i] * value(vars[i]);
    return push(std::move(n));
  }

  Var sum_all(Var a) {
    Node n = unary(Op::kSumAll, a);
    n.value.resize(1, 1);
    n.value(0, 0) = value(a).sum();
    return push(std::move(n));
  }

  // Elementwise binary cross entropy against constant targets in {0,1};
  // probabilities clamped to [kBceClamp, 1-kBceClamp]. The backward rule is
  // the exact derivative of the clamped forward (zero outside the clamp).
  Var bce(Var p, Matrix targets) {
    const Matrix& P = value(p);
    if (targets.rows() != P.rows() || targets.cols() != P.cols())
      throw DimensionError("bce: target shape " + detail::shape_str(targets) +
                           " does not match " + detail::shape_str(P));
    Node n = unary(Op::kBce, p);
    n.value.resize(P.rows(), P.cols());
    const Scalar lo = static_cast<Scalar>(kBceClamp);
    const Scalar hi = Scalar(1) - lo;
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      for (Eigen::Index j = 0; j < P.cols(); ++j) {
        const Scalar pc = std::min(std::max(P(i, j), lo), hi);
        const Scalar y = targets(i, j);
        n.value(i, j) = -y * std::log(pc) - (Scalar(1) - y) * std::log(Scalar(1) - pc);
      }
    n.aux = std::move(targets);
    return push(std::move(n));
  }

  // Reverse sweep from a scalar loss. Node gradients are reset first, so the
  // call is idempotent per forward pass. Bound parameters receive their
  // gradient by assignment (zero if unreachable from the loss).
  void backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss lives on another tape");
    const Matrix& L = value(loss);
    if (L.rows() != 1 || L.cols() != 1)
      throw ContractError("backward: loss must be scalar (1x1), got " + detail::shape_str(L));
    for (Node& n : nodes_) n.grad.resize(0, 0);
    ensure_grad(loss.index())(0, 0) = Scalar(1);
    for (int i = loss.index(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      apply_backward(n);
    }
    for (Parameter* p : bound_) {
      const Node& n = nodes_[static_cast<std::size_t>(param_index_.at(p))];
      if (n.grad.size() == 0)
        p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
      else
        p->grad = n.grad;
    }
  }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kTranspose,
    kAdd,
    kAddRowVec,
    kScale,
    kRelu,
    kSigmoid,
    kSoftmaxRows,
    kLayerNorm,
    kGatherRows,
    kRowsWeightedSum,
    kHConcat,
    kShiftRows,
    kCMul,
    kLinComb,
    kSumAll,
    kBce,
  };

  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1, c = -1;
    bool needs_grad = false;
    Scalar scalar = Scalar(0);
    int shift = 0;
    Matrix value;
    Matrix grad;
    const Matrix* external = nullptr;
    Parameter* parameter = nullptr;
    std::vector<int> indices;
    std::vector<Scalar> coeffs;
    Matrix aux;
  };

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node unary(Op op, Var a) {
    if (a.tape() != this) throw ContractError("operand lives on another tape");
    Node n;
    n.op = op;
    n.a = a.index();
    n.needs_grad = node(a).needs_grad;
    return n;
  }

  Node binary(Op op, Var a, Var b) {
    Node n = unary(op, a);
    n.b = b.index();
    n.needs_grad = n.needs_grad || node(b).needs_grad;
    return n;
  }

  void same_tape(Var a, Var b) const {
    if (a.tape() != this || b.tape() != this)
      throw ContractError("operands live on different tapes");
  }

  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.index())]; }
  Node& node_mut(Var v) { return nodes_[static_cast<std::size_t>(v.index())]; }

  const Matrix& value_of(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    return n.external ? *n.external : n.value;
  }

  Matrix& ensure_grad(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) {
      const Matrix& val = value_of(i);
      n.grad = Matrix::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  bool wants(int i) const { return i >= 0 && nodes_[static_cast<std::size_t>(i)].needs_grad; }

  static void check_finite(const Matrix& m, const char* where) {
    if (!m.allFinite()) throw NumericError(std::string(where) + ": non-finite entries");
  }

  void apply_backward(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        if (wants(n.a)) ensure_grad(n.a).noalias() += g * value_of(n.b).transpose();
        if (wants(n.b)) ensure_grad(n.b).noalias() += value_of(n.a).transpose() * g;
        break;
      }
      case Op::kTranspose:
        if (wants(n.a)) ensure_grad(n.a) += g.transpose();
        break;
      case Op::kAdd:
        if (wants(n.a)) ensure_grad(n.a) += g;
        if (wants(n.b)) ensure_grad(n.b) += g;
        break;
      case Op::kAddRowVec:
        if (wants(n.a)) ensure_grad(n.a) += g;
        if (wants(n.b)) ensure_grad(n.b).row(0) += g.colwise().sum();
        break;
      case Op::kScale:
        if (wants(n.a)) ensure_grad(n.a) += n.scalar * g;
        break;
      case Op::kRelu:
        if (wants(n.a)) {
          const Matrix& X = value_of(n.a);
          ensure_grad(n.a).array() +=
              g.array() * (X.array() > Scalar(0)).template cast<Scalar>();
        }
        break;
      case Op::kSigmoid:
        if (wants(n.a))
          ensure_grad(n.a).array() +=
              g.array() * n.value.array() * (Scalar(1) - n.value.array());
        break;
      case Op::kSoftmaxRows:
        if (wants(n.a)) {
          Matrix& ga = ensure_grad(n.a);
          for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
            const Scalar dot = g.row(r).cwiseProduct(n.value.row(r)).sum();
            ga.row(r).array() += n.value.row(r).array() * (g.row(r).array() - dot);
          }
        }
        break;
      case Op::kLayerNorm: {
        const Matrix& X = value_of(n.a);
        const Matrix& G = value_of(n.b);
        const Scalar d = static_cast<Scalar>(X.cols());
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
          const Scalar mu = X.row(r).mean();
          const Scalar var = (X.row(r).array() - mu).square().sum() / d;
          const Scalar inv = Scalar(1) / std::sqrt(var + n.scalar);
          Eigen::Array<Scalar, 1, Eigen::Dynamic> xhat = (X.row(r).array() - mu) * inv;
          Eigen::Array<Scalar, 1, Eigen::Dynamic> dy = g.row(r).array();
          if (wants(n.b)) ensure_grad(n.b).row(0).array() += dy * xhat;
          if (wants(n.c)) ensure_grad(n.c).row(0).array() += dy;
          if (wants(n.a)) {
            Eigen::Array<Scalar, 1, Eigen::Dynamic> dxhat = dy * G.row(0).array();
            const Scalar m1 = dxhat.mean();
            const Scalar m2 = (dxhat * xhat).mean();
            ensure_grad(n.a).row(r).array() += inv * (dxhat - m1 - xhat * m2);
          }
        }
        break;
      }
      case Op::kGatherRows:
        if (wants(n.a)) {
          Matrix& gt = ensure_grad(n.a);
          for (std::size_t t = 0; t < n.indices.size(); ++t)
            gt.row(n.indices[t]) += g.row(static_cast<Eigen::Index>(t));
        }
        break;
      case Op::kRowsWeightedSum:
        if (wants(n.a)) {
          Matrix& gt = ensure_grad(n.a);
          for (std::size_t j = 0; j < n.indices.size(); ++j)
            gt.row(n.indices[j]) += n.coeffs[j] * g.row(0);
        }
        break;
      case Op::kHConcat: {
        const Eigen::Index ca = value_of(n.a).cols();
        if (wants(n.a)) ensure_grad(n.a) += g.leftCols(ca);
        if (wants(n.b)) ensure_grad(n.b) += g.rightCols(g.cols() - ca);
        break;
      }
      case Op::kShiftRows:
        if (wants(n.a)) {
          Matrix& gx = ensure_grad(n.a);
          for (Eigen::Index t = 0; t < g.rows(); ++t) {
            const Eigen::Index src = t - n.shift;
            if (src >= 0 && src < g.rows()) gx.row(src) += g.row(t);
          }
        }
        break;
      case Op::kCMul:
        if (wants(n.a)) ensure_grad(n.a) += g.cwiseProduct(n.aux);
        break;
      case Op::kLinComb:
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          if (wants(n.indices[i])) ensure_grad(n.indices[i]) += n.coeffs[i] * g;
        break;
      case Op::kSumAll:
        if (wants(n.a)) ensure_grad(n.a).array() += g(0, 0);
        break;
      case Op::kBce:
        if (wants(n.a)) {
          const Matrix& P = value_of(n.a);
          Matrix& gp = ensure_grad(n.a);
          const Scalar lo = static_cast<Scalar>(kBceClamp);
          const Scalar hi = Scalar(1) - lo;
          for (Eigen::Index i = 0; i < P.rows(); ++i)
            for (Eigen::Index j = 0; j < P.cols(); ++j) {
              if (P(i, j) <= lo || P(i, j) >= hi) continue;
              const Scalar y = n.aux(i, j);
              gp(i, j) += g(i, j) * (-y / P(i, j) + (Scalar(1) - y) / (Scalar(1) - P(i, j)));
            }
        }
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Parameter*> bound_;
  std::unordered_map<const Parameter*, int> param_index_;
};

using Tape = TapeT<double>;
using Var = VarT<double>;
using Parameter = ParameterT<double>;
using Matrix = MatrixX<double>;

}  // namespace claims::ag
