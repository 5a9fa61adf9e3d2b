#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "discern/tensor.hpp"

namespace discern {

enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSoftmax,
  kReduceSum,
  kReduceMean,
  kL2Normalize,
  kStopGradient,
  kConcat,
  kPick,
  kGather,
  kReshape,
  kScale,
  kShift,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSoftmax: return "softmax";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kConcat: return "concat";
    case Op::kPick: return "pick";
    case Op::kGather: return "gather";
    case Op::kReshape: return "reshape";
    case Op::kScale: return "scale";
    case Op::kShift: return "shift";
  }
  return "?";
}

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
};

struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& m) : std::runtime_error(m) {}
};

// Define-by-run reverse-mode tape. Values are computed eagerly as nodes are
// added; nodes are stored in topological (creation) order, so backward is a
// single reverse sweep. Graphs are rebuilt per training step and are
// immutable-after-build apart from recompute()/set_leaf used by tests.
class Graph {
 public:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<int> ins;
    Tensor value;
    bool needs_grad = false;
    bool trainable = false;
    double c = 0.0;            // Scale / Shift constant
    std::vector<int> indices;  // Pick index, Gather rows, Concat split sizes
    std::string name;          // leaf name, used in errors and param_grads
  };

  Var leaf(Tensor value, bool trainable = false, std::string name = {}) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.needs_grad = trainable;
    n.trainable = trainable;
    n.name = std::move(name);
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }

  Var matmul(Var a, Var b) {
    Node n;
    n.op = Op::kMatMul;
    n.ins = {a.id, b.id};
    return push(std::move(n));
  }

  Var tanh(Var a) { return unary(Op::kTanh, a); }
  Var sigmoid(Var a) { return unary(Op::kSigmoid, a); }
  Var relu(Var a) { return unary(Op::kRelu, a); }
  Var exp(Var a) { return unary(Op::kExp, a); }
  Var log(Var a) { return unary(Op::kLog, a); }
  Var softmax(Var a) { return unary(Op::kSoftmax, a); }
  Var reduce_sum(Var a) { return unary(Op::kReduceSum, a); }
  Var reduce_mean(Var a) { return unary(Op::kReduceMean, a); }
  Var l2_normalize(Var a) { return unary(Op::kL2Normalize, a); }
  Var stop_gradient(Var a) { return unary(Op::kStopGradient, a); }

  Var scale(Var a, double c) {
    Node n;
    n.op = Op::kScale;
    n.ins = {a.id};
    n.c = c;
    return push(std::move(n));
  }
  Var shift(Var a, double c) {
    Node n;
    n.op = Op::kShift;
    n.ins = {a.id};
    n.c = c;
    return push(std::move(n));
  }

  Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw GraphError("concat: no inputs");
    Node n;
    n.op = Op::kConcat;
    for (Var v : xs) n.ins.push_back(v.id);
    return push(std::move(n));
  }

  Var pick(Var a, int index) {
    Node n;
    n.op = Op::kPick;
    n.ins = {a.id};
    n.indices = {index};
    return push(std::move(n));
  }

  // out[b] = a[b, rows[b]]
  Var gather(Var a, std::vector<int> rows) {
    Node n;
    n.op = Op::kGather;
    n.ins = {a.id};
    n.indices = std::move(rows);
    return push(std::move(n));
  }

  Var reshape(Var a, std::vector<int> shape) {
    Node n;
    n.op = Op::kReshape;
    n.ins = {a.id};
    n.indices = shape;
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  double scalar_value(Var v) const { return nodes_[v.id].value.scalar_value(); }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool zero_norm_flagged() const { return zero_norm_flagged_; }

  // Replaces a leaf's value; recompute() re-evaluates downstream nodes.
  // Finite-difference oracles drive the graph through these two.
  void set_leaf(Var v, Tensor value) {
    Node& n = nodes_[v.id];
    if (n.op != Op::kLeaf) throw GraphError("set_leaf on non-leaf node");
    if (!n.value.same_shape(value)) throw GraphError("set_leaf shape mismatch");
    n.value = std::move(value);
  }

  void recompute() {
    for (auto& n : nodes_)
      if (n.op != Op::kLeaf) n.value = evaluate(n);
  }

  // Reverse sweep from a scalar loss. Gradients reach every node with
  // needs_grad set; stop_gradient blocks propagation.
  void backward(Var loss) {
    const Node& ln = nodes_[loss.id];
    if (ln.value.numel() != 1)
      throw GraphError(std::string("backward: loss node ") + std::to_string(loss.id) +
                       " is not scalar, shape " + ln.value.shape_str());
    grads_.assign(nodes_.size(), Tensor());
    grads_[loss.id] = Tensor::full(ln.value.shape, 1.0);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || grads_[i].data.empty()) continue;
      propagate(i, n);
    }
    has_grads_ = true;
  }

  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!has_grads_ || grads_[v.id].data.empty()) return Tensor::zeros(n.value.shape);
    return grads_[v.id];
  }

  // Gradients of all named trainable leaves; zero tensors for leaves the
  // loss does not reach.
  ParamSet param_grads() const {
    ParamSet out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::kLeaf && n.trainable && !n.name.empty())
        out[n.name] = grad(Var{const_cast<Graph*>(this), static_cast<int>(i)});
    }
    return out;
  }

 private:
  Var unary(Op op, Var a) {
    Node n;
    n.op = op;
    n.ins = {a.id};
    return push(std::move(n));
  }
  Var binary(Op op, Var a, Var b) {
    Node n;
    n.op = op;
    n.ins = {a.id, b.id};
    return push(std::move(n));
  }

  Var push(Node n) {
    if (n.op != Op::kLeaf) {
      n.needs_grad = false;
      if (n.op != Op::kStopGradient)
        for (int in : n.ins)
          if (nodes_[in].needs_grad) n.needs_grad = true;
      n.value = evaluate(n);
    }
    nodes_.push_back(std::move(n));
    has_grads_ = false;
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  [[noreturn]] void fail(const Node& n, const std::string& what) const {
    std::string msg = std::string("graph op ") + op_name(n.op) + " (node " +
                      std::to_string(nodes_.size()) + "): " + what;
    if (!n.ins.empty()) {
      msg += " inputs";
      for (int in : n.ins) msg += " " + nodes_[in].value.shape_str();
    }
    throw GraphError(msg);
  }

  enum class Broadcast { kNone, kRow, kScalarRhs, kScalarLhs };

  Broadcast broadcast_kind(const Node& n, const Tensor& a, const Tensor& b) const {
    if (a.same_shape(b)) return Broadcast::kNone;
    if (b.is_scalar()) return Broadcast::kScalarRhs;
    if (a.is_scalar()) return Broadcast::kScalarLhs;
    if (a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0]) return Broadcast::kRow;
    fail(n, "incompatible shapes");
  }

  Tensor evaluate(const Node& n) {
    const auto in = [&](int k) -> const Tensor& { return nodes_[n.ins[k]].value; };
    switch (n.op) {
      case Op::kLeaf:
        return n.value;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Broadcast bc = broadcast_kind(n, a, b);
        const Tensor& base = bc == Broadcast::kScalarLhs ? b : a;
        Tensor out = Tensor::zeros(base.shape);
        for (int i = 0; i < out.numel(); ++i) {
          double x = bc == Broadcast::kScalarLhs ? a.data[0] : a.data[i];
          double y = b.data[0];
          if (bc == Broadcast::kNone) y = b.data[i];
          else if (bc == Broadcast::kRow) y = b.data[i % b.numel()];
          else if (bc == Broadcast::kScalarLhs) y = b.data[i];
          out.data[i] = n.op == Op::kAdd ? x + y : n.op == Op::kSub ? x - y : x * y;
        }
        return out;
      }
      case Op::kMatMul:
        try {
          return discern::matmul(in(0), in(1));
        } catch (const std::invalid_argument& e) {
          fail(n, e.what());
        }
      case Op::kTanh:
      case Op::kSigmoid:
      case Op::kRelu:
      case Op::kExp:
      case Op::kLog: {
        Tensor out = in(0);
        for (double& v : out.data) {
          switch (n.op) {
            case Op::kTanh: v = std::tanh(v); break;
            case Op::kSigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
            case Op::kRelu: v = v > 0.0 ? v : 0.0; break;
            case Op::kExp: v = std::exp(v); break;
            default: v = std::log(v); break;
          }
        }
        return out;
      }
      case Op::kSoftmax: {
        const Tensor& a = in(0);
        if (a.rank() == 0) fail(n, "softmax needs rank >= 1");
        Tensor out = a;
        int ncols = a.rank() == 2 ? a.shape[1] : a.shape[0];
        int nrows = out.numel() / ncols;
        for (int r = 0; r < nrows; ++r) {
          double* row = out.data.data() + static_cast<std::size_t>(r) * ncols;
          double mx = *std::max_element(row, row + ncols);
          double sum = 0.0;
          for (int c = 0; c < ncols; ++c) sum += (row[c] = std::exp(row[c] - mx));
          for (int c = 0; c < ncols; ++c) row[c] /= sum;
        }
        return out;
      }
      case Op::kReduceSum:
      case Op::kReduceMean: {
        const Tensor& a = in(0);
        double s = 0.0;
        for (double v : a.data) s += v;
        if (n.op == Op::kReduceMean) s /= a.numel();
        return Tensor::scalar(s);
      }
      case Op::kL2Normalize: {
        const Tensor& a = in(0);
        if (a.rank() == 0) fail(n, "l2_normalize needs rank >= 1");
        Tensor out = a;
        int ncols = a.rank() == 2 ? a.shape[1] : a.shape[0];
        int nrows = out.numel() / ncols;
        for (int r = 0; r < nrows; ++r) {
          double* row = out.data.data() + static_cast<std::size_t>(r) * ncols;
          double nrm = 0.0;
          for (int c = 0; c < ncols; ++c) nrm += row[c] * row[c];
          nrm = std::sqrt(nrm);
          if (nrm == 0.0) {
            zero_norm_flagged_ = true;  // zero vector maps to zero vector
            continue;
          }
          for (int c = 0; c < ncols; ++c) row[c] /= nrm;
        }
        return out;
      }
      case Op::kStopGradient:
        return in(0);
      case Op::kConcat: {
        int rank = in(0).rank();
        if (rank == 1) {
          std::vector<double> d;
          for (std::size_t k = 0; k < n.ins.size(); ++k) {
            const Tensor& t = in(static_cast<int>(k));
            if (t.rank() != 1) fail(n, "mixed ranks");
            d.insert(d.end(), t.data.begin(), t.data.end());
          }
          return Tensor::row(std::move(d));
        }
        if (rank == 2) {
          int rows = in(0).shape[0], cols = 0;
          for (std::size_t k = 0; k < n.ins.size(); ++k) {
            const Tensor& t = in(static_cast<int>(k));
            if (t.rank() != 2 || t.shape[0] != rows) fail(n, "row count mismatch");
            cols += t.shape[1];
          }
          Tensor out = Tensor::zeros({rows, cols});
          int off = 0;
          for (std::size_t k = 0; k < n.ins.size(); ++k) {
            const Tensor& t = in(static_cast<int>(k));
            for (int r = 0; r < rows; ++r)
              std::copy(t.data.begin() + static_cast<std::size_t>(r) * t.shape[1],
                        t.data.begin() + static_cast<std::size_t>(r + 1) * t.shape[1],
                        out.data.begin() + static_cast<std::size_t>(r) * cols + off);
            off += t.shape[1];
          }
          return out;
        }
        fail(n, "concat needs rank 1 or 2");
      }
      case Op::kPick: {
        const Tensor& a = in(0);
        int i = n.indices[0];
        if (a.rank() != 1 || i < 0 || i >= a.numel()) fail(n, "pick index out of range");
        return Tensor::scalar(a.data[i]);
      }
      case Op::kGather: {
        const Tensor& a = in(0);
        if (a.rank() != 2 || static_cast<int>(n.indices.size()) != a.shape[0])
          fail(n, "gather needs [m,n] input and m indices");
        Tensor out = Tensor::zeros({a.shape[0]});
        for (int r = 0; r < a.shape[0]; ++r) {
          int c = n.indices[r];
          if (c < 0 || c >= a.shape[1]) fail(n, "gather column out of range");
          out.data[r] = a.at(r, c);
        }
        return out;
      }
      case Op::kReshape: {
        const Tensor& a = in(0);
        if (shape_numel(n.indices) != a.numel()) fail(n, "reshape numel mismatch");
        return Tensor(n.indices, a.data);
      }
      case Op::kScale: {
        Tensor out = in(0);
        for (double& v : out.data) v *= n.c;
        return out;
      }
      case Op::kShift: {
        Tensor out = in(0);
        for (double& v : out.data) v += n.c;
        return out;
      }
    }
    fail(n, "unhandled op");
  }

  void accumulate(int node_id, const Tensor& g) {
    if (!nodes_[node_id].needs_grad) return;
    Tensor& slot = grads_[node_id];
    if (slot.data.empty()) {
      slot = g;
      return;
    }
    for (int i = 0; i < slot.numel(); ++i) slot.data[i] += g.data[i];
  }

  // Reduces an output-shaped gradient onto a (possibly broadcast) operand.
  Tensor reduce_to(const Tensor& g, const Tensor& operand) const {
    if (g.same_shape(operand)) return g;
    Tensor out = Tensor::zeros(operand.shape);
    if (operand.is_scalar()) {
      double s = 0.0;
      for (double v : g.data) s += v;
      out.data[0] = s;
      return out;
    }
    // row-vector broadcast over [m,n]
    int ncols = operand.numel();
    for (int i = 0; i < g.numel(); ++i) out.data[i % ncols] += g.data[i];
    return out;
  }

  void propagate(int id, Node& n) {
    const Tensor& g = grads_[id];
    const Tensor& y = n.value;
    const auto inv = [&](int k) -> const Tensor& { return nodes_[n.ins[k]].value; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kStopGradient:
        return;
      case Op::kAdd: {
        accumulate(n.ins[0], reduce_to(g, inv(0)));
        accumulate(n.ins[1], reduce_to(g, inv(1)));
        return;
      }
      case Op::kSub: {
        accumulate(n.ins[0], reduce_to(g, inv(0)));
        Tensor neg = g;
        for (double& v : neg.data) v = -v;
        accumulate(n.ins[1], reduce_to(neg, inv(1)));
        return;
      }
      case Op::kMul: {
        const Tensor& a = inv(0);
        const Tensor& b = inv(1);
        Tensor ga = Tensor::zeros(y.shape);
        Tensor gb = Tensor::zeros(y.shape);
        for (int i = 0; i < y.numel(); ++i) {
          double av = a.is_scalar() ? a.data[0]
                      : a.same_shape(y) ? a.data[i]
                                        : a.data[i % a.numel()];
          double bv = b.is_scalar() ? b.data[0]
                      : b.same_shape(y) ? b.data[i]
                                        : b.data[i % b.numel()];
          ga.data[i] = g.data[i] * bv;
          gb.data[i] = g.data[i] * av;
        }
        accumulate(n.ins[0], reduce_to(ga, a));
        accumulate(n.ins[1], reduce_to(gb, b));
        return;
      }
      case Op::kMatMul: {
        const Tensor& a = inv(0);
        const Tensor& b = inv(1);
        if (a.rank() == 2 && b.rank() == 2) {
          accumulate(n.ins[0], discern::matmul(g, transposed(b)));
          accumulate(n.ins[1], discern::matmul(transposed(a), g));
        } else if (a.rank() == 1 && b.rank() == 2) {
          accumulate(n.ins[0], discern::matmul(b, g));
          accumulate(n.ins[1], outer(a, g));
        } else {  // [m,k]x[k]
          accumulate(n.ins[0], outer(g, b));
          accumulate(n.ins[1], discern::matmul(transposed(a), g));
        }
        return;
      }
      case Op::kTanh: {
        Tensor ga = g;
        for (int i = 0; i < ga.numel(); ++i) ga.data[i] *= 1.0 - y.data[i] * y.data[i];
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kSigmoid: {
        Tensor ga = g;
        for (int i = 0; i < ga.numel(); ++i) ga.data[i] *= y.data[i] * (1.0 - y.data[i]);
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kRelu: {
        const Tensor& a = inv(0);
        Tensor ga = g;
        for (int i = 0; i < ga.numel(); ++i)
          if (a.data[i] <= 0.0) ga.data[i] = 0.0;
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kExp: {
        Tensor ga = g;
        for (int i = 0; i < ga.numel(); ++i) ga.data[i] *= y.data[i];
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kLog: {
        const Tensor& a = inv(0);
        Tensor ga = g;
        for (int i = 0; i < ga.numel(); ++i) ga.data[i] /= a.data[i];
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kSoftmax: {
        Tensor ga = Tensor::zeros(y.shape);
        int ncols = y.rank() == 2 ? y.shape[1] : y.shape[0];
        int nrows = y.numel() / ncols;
        for (int r = 0; r < nrows; ++r) {
          const double* yr = y.data.data() + static_cast<std::size_t>(r) * ncols;
          const double* gr = g.data.data() + static_cast<std::size_t>(r) * ncols;
          double dot = 0.0;
          for (int c = 0; c < ncols; ++c) dot += yr[c] * gr[c];
          double* out = ga.data.data() + static_cast<std::size_t>(r) * ncols;
          for (int c = 0; c < ncols; ++c) out[c] = yr[c] * (gr[c] - dot);
        }
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kReduceSum:
      case Op::kReduceMean: {
        const Tensor& a = inv(0);
        double s = g.data[0];
        if (n.op == Op::kReduceMean) s /= a.numel();
        accumulate(n.ins[0], Tensor::full(a.shape, s));
        return;
      }
      case Op::kL2Normalize: {
        const Tensor& a = inv(0);
        Tensor ga = Tensor::zeros(y.shape);
        int ncols = y.rank() == 2 ? y.shape[1] : y.shape[0];
        int nrows = y.numel() / ncols;
        for (int r = 0; r < nrows; ++r) {
          const double* ar = a.data.data() + static_cast<std::size_t>(r) * ncols;
          const double* yr = y.data.data() + static_cast<std::size_t>(r) * ncols;
          const double* gr = g.data.data() + static_cast<std::size_t>(r) * ncols;
          double nrm = 0.0;
          for (int c = 0; c < ncols; ++c) nrm += ar[c] * ar[c];
          nrm = std::sqrt(nrm);
          double* out = ga.data.data() + static_cast<std::size_t>(r) * ncols;
          if (nrm == 0.0) continue;  // degenerate row carries no gradient
          double dot = 0.0;
          for (int c = 0; c < ncols; ++c) dot += yr[c] * gr[c];
          for (int c = 0; c < ncols; ++c) out[c] = (gr[c] - yr[c] * dot) / nrm;
        }
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kConcat: {
        int rank = inv(0).rank();
        if (rank == 1) {
          int off = 0;
          for (std::size_t k = 0; k < n.ins.size(); ++k) {
            const Tensor& t = inv(static_cast<int>(k));
            Tensor gk = Tensor::zeros(t.shape);
            std::copy(g.data.begin() + off, g.data.begin() + off + t.numel(), gk.data.begin());
            off += t.numel();
            accumulate(n.ins[k], gk);
          }
        } else {
          int rows = y.shape[0], cols = y.shape[1], off = 0;
          for (std::size_t k = 0; k < n.ins.size(); ++k) {
            const Tensor& t = inv(static_cast<int>(k));
            Tensor gk = Tensor::zeros(t.shape);
            for (int r = 0; r < rows; ++r)
              std::copy(g.data.begin() + static_cast<std::size_t>(r) * cols + off,
                        g.data.begin() + static_cast<std::size_t>(r) * cols + off + t.shape[1],
                        gk.data.begin() + static_cast<std::size_t>(r) * t.shape[1]);
            off += t.shape[1];
            accumulate(n.ins[k], gk);
          }
        }
        return;
      }
      case Op::kPick: {
        const Tensor& a = inv(0);
        Tensor ga = Tensor::zeros(a.shape);
        ga.data[n.indices[0]] = g.data[0];
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kGather: {
        const Tensor& a = inv(0);
        Tensor ga = Tensor::zeros(a.shape);
        for (int r = 0; r < a.shape[0]; ++r) ga.at(r, n.indices[r]) = g.data[r];
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kReshape: {
        const Tensor& a = inv(0);
        accumulate(n.ins[0], Tensor(a.shape, g.data));
        return;
      }
      case Op::kScale: {
        Tensor ga = g;
        for (double& v : ga.data) v *= n.c;
        accumulate(n.ins[0], ga);
        return;
      }
      case Op::kShift:
        accumulate(n.ins[0], g);
        return;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool has_grads_ = false;
  bool zero_norm_flagged_ = false;
};

inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }

}  // namespace discern
