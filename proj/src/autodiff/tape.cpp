#include "stagecast/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <type_traits>

#include "stagecast/kernels/dense.hpp"

namespace stagecast::ad {

const char* to_string(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddConst: return "add_const";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Square: return "square";
    case Op::Softplus: return "softplus";
    case Op::Abs: return "abs";
    case Op::PowConst: return "pow_const";
    case Op::Tangent: return "tangent";
    case Op::Value: return "value";
    case Op::Column: return "column";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
  }
  return "unknown";
}

namespace {

struct Derivs {
  double f;
  double d1;
  double d2;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Value, first and second derivative of an elementwise primitive.
inline Derivs unary_eval(Op op, double x, double p) {
  switch (op) {
    case Op::Tanh: {
      const double y = std::tanh(x);
      const double d = 1.0 - y * y;
      return {y, d, -2.0 * y * d};
    }
    case Op::Relu:
      // Subgradient 0 at the kink; both passes use this comparison.
      return x > 0.0 ? Derivs{x, 1.0, 0.0} : Derivs{0.0, 0.0, 0.0};
    case Op::Sin: {
      const double s = std::sin(x);
      return {s, std::cos(x), -s};
    }
    case Op::Cos: {
      const double c = std::cos(x);
      return {c, -std::sin(x), -c};
    }
    case Op::Square:
      return {x * x, 2.0 * x, 2.0};
    case Op::Softplus: {
      const double s = sigmoid(x);
      return {std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))), s, s * (1.0 - s)};
    }
    case Op::Abs:
      return {std::abs(x), x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0), 0.0};
    case Op::PowConst:
      return {std::pow(x, p), p * std::pow(x, p - 1.0), p * (p - 1.0) * std::pow(x, p - 2.0)};
    default:
      throw TapeError(std::string("not an elementwise primitive: ") + to_string(op));
  }
}

// Calls body with the op as a compile-time constant so per-element loops
// carry no dispatch.
template <class Body>
void dispatch_unary(Op op, Body&& body) {
  switch (op) {
    case Op::Tanh: return body(std::integral_constant<Op, Op::Tanh>{});
    case Op::Relu: return body(std::integral_constant<Op, Op::Relu>{});
    case Op::Sin: return body(std::integral_constant<Op, Op::Sin>{});
    case Op::Cos: return body(std::integral_constant<Op, Op::Cos>{});
    case Op::Square: return body(std::integral_constant<Op, Op::Square>{});
    case Op::Softplus: return body(std::integral_constant<Op, Op::Softplus>{});
    case Op::Abs: return body(std::integral_constant<Op, Op::Abs>{});
    case Op::PowConst: return body(std::integral_constant<Op, Op::PowConst>{});
    default: throw TapeError(std::string("not an elementwise primitive: ") + to_string(op));
  }
}

// Derivatives for the reverse pass; tanh and relu reuse the recorded output.
template <Op K>
inline Derivs reverse_derivs(double x, double y, double p) {
  if constexpr (K == Op::Tanh) {
    const double d = 1.0 - y * y;
    return {y, d, -2.0 * y * d};
  } else if constexpr (K == Op::Relu) {
    return x > 0.0 ? Derivs{y, 1.0, 0.0} : Derivs{y, 0.0, 0.0};
  } else {
    return unary_eval(K, x, p);
  }
}

bool is_unary(Op op) {
  switch (op) {
    case Op::Tanh:
    case Op::Relu:
    case Op::Sin:
    case Op::Cos:
    case Op::Square:
    case Op::Softplus:
    case Op::Abs:
    case Op::PowConst:
      return true;
    default:
      return false;
  }
}

}  // namespace

Tape::Tape(std::span<const double> weights, Exec exec) : weights_(weights), exec_(exec) {}

std::vector<double> Tape::take_buffer(std::size_t n) {
  std::vector<double> buf;
  if (!pool_.empty()) {
    buf = std::move(pool_.back());
    pool_.pop_back();
  }
  buf.resize(n);
  return buf;
}

void Tape::reset() {
  for (auto& n : nodes_) {
    for (auto* plane : {&n.value, &n.dx, &n.dt}) {
      if (plane->capacity() > 0) pool_.push_back(std::move(*plane));
    }
  }
  for (auto& a : adjoints_) {
    if (a.capacity() > 0) pool_.push_back(std::move(a));
  }
  nodes_.clear();
  adjoints_.clear();
  backward_order_.clear();
}

Node Tape::make(Op op, std::size_t rows, std::size_t cols, bool tangent) {
  Node n;
  n.op = op;
  n.rows = rows;
  n.cols = cols;
  n.has_tangent = tangent;
  return n;
}

NodeId Tape::push(Node node) {
  const std::size_t sz = node.size();
  node.value = take_buffer(sz);
  if (node.has_tangent) {
    node.dx = take_buffer(sz);
    node.dt = take_buffer(sz);
  }
  evaluate(node);
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(std::size_t rows, std::size_t cols, std::span<const double> value) {
  if (value.size() != rows * cols) throw TapeError("input: size mismatch");
  Node n = make(Op::Input, rows, cols, false);
  n.value = take_buffer(rows * cols);
  std::copy(value.begin(), value.end(), n.value.begin());
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(std::size_t rows, std::size_t cols, std::span<const double> value,
                   std::span<const double> dx, std::span<const double> dt) {
  const std::size_t sz = rows * cols;
  if (value.size() != sz || dx.size() != sz || dt.size() != sz) throw TapeError("input: size mismatch");
  Node n = make(Op::Input, rows, cols, true);
  n.value = take_buffer(sz);
  n.dx = take_buffer(sz);
  n.dt = take_buffer(sz);
  std::copy(value.begin(), value.end(), n.value.begin());
  std::copy(dx.begin(), dx.end(), n.dx.begin());
  std::copy(dt.begin(), dt.end(), n.dt.begin());
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::param(ParamRef ref) {
  if (ref.offset + ref.size() > weights_.size()) throw TapeError("param: slice outside weight vector");
  Node n = make(Op::Param, ref.rows, ref.cols, false);
  n.param = ref;
  n.needs_grad = true;
  return push(std::move(n));
}

NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
  const Node& X = node(x);
  const Node& W = node(w);
  const Node& B = node(b);
  if (W.op != Op::Param || B.op != Op::Param) throw TapeError("affine: weights must be Param nodes");
  if (X.cols != W.rows || B.size() != W.cols) {
    std::ostringstream os;
    os << "affine: shape mismatch (" << X.rows << "x" << X.cols << ") * (" << W.rows << "x" << W.cols
       << ") + " << B.size();
    throw TapeError(os.str());
  }
  Node n = make(Op::Affine, X.rows, W.cols, X.has_tangent);
  n.a = x;
  n.b = w;
  n.c = b;
  n.needs_grad = true;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.rows != B.rows || A.cols != B.cols) throw TapeError("add: shape mismatch");
  Node n = make(Op::Add, A.rows, A.cols, A.has_tangent || B.has_tangent);
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.rows != B.rows || A.cols != B.cols) throw TapeError("sub: shape mismatch");
  Node n = make(Op::Sub, A.rows, A.cols, A.has_tangent || B.has_tangent);
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.rows != B.rows || A.cols != B.cols) throw TapeError("mul: shape mismatch");
  Node n = make(Op::Mul, A.rows, A.cols, A.has_tangent || B.has_tangent);
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.rows != B.rows || A.cols != B.cols) throw TapeError("div: shape mismatch");
  Node n = make(Op::Div, A.rows, A.cols, A.has_tangent || B.has_tangent);
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  const Node& A = node(a);
  Node n = make(Op::Scale, A.rows, A.cols, A.has_tangent);
  n.a = a;
  n.constant = factor;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::add_const(NodeId a, double shift) {
  const Node& A = node(a);
  Node n = make(Op::AddConst, A.rows, A.cols, A.has_tangent);
  n.a = a;
  n.constant = shift;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::unary(Op op, NodeId a) {
  if (!is_unary(op) || op == Op::PowConst) {
    throw TapeError(std::string("unary: unsupported primitive ") + to_string(op));
  }
  const Node& A = node(a);
  Node n = make(op, A.rows, A.cols, A.has_tangent);
  n.a = a;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::pow_const(NodeId a, double exponent) {
  const Node& A = node(a);
  Node n = make(Op::PowConst, A.rows, A.cols, A.has_tangent);
  n.a = a;
  n.constant = exponent;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::tangent(NodeId a, Direction d) {
  const Node& A = node(a);
  if (!A.has_tangent) throw TapeError("tangent: node carries no tangent planes");
  Node n = make(Op::Tangent, A.rows, A.cols, false);
  n.a = a;
  n.index = static_cast<std::size_t>(d);
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::value_of(NodeId a) {
  const Node& A = node(a);
  Node n = make(Op::Value, A.rows, A.cols, false);
  n.a = a;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::column(NodeId a, std::size_t j) {
  const Node& A = node(a);
  if (j >= A.cols) throw TapeError("column: index out of range");
  Node n = make(Op::Column, A.rows, 1, A.has_tangent);
  n.a = a;
  n.index = j;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  const Node& A = node(a);
  if (A.size() == 0) throw TapeError("mean: empty node");
  Node n = make(Op::Mean, 1, 1, A.has_tangent);
  n.a = a;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  const Node& A = node(a);
  Node n = make(Op::Sum, 1, 1, A.has_tangent);
  n.a = a;
  n.needs_grad = A.needs_grad;
  return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
  const Node& n = node(id);
  if (n.size() != 1) throw TapeError("scalar: node is not 1 x 1");
  return n.value[0];
}

void Tape::evaluate(Node& n) const {
  const std::size_t sz = n.size();
  const int planes = n.has_tangent ? 3 : 1;
  auto plane_or_null = [](const Node& src, int p) -> const double* {
    if (p == 0) return src.value.data();
    if (!src.has_tangent) return nullptr;
    return p == 1 ? src.dx.data() : src.dt.data();
  };
  auto out = [&](int p) -> double* { return p == 0 ? n.value.data() : (p == 1 ? n.dx.data() : n.dt.data()); };

  switch (n.op) {
    case Op::Input:
      return;
    case Op::Param:
      std::copy_n(weights_.begin() + static_cast<std::ptrdiff_t>(n.param.offset), sz, n.value.begin());
      return;
    case Op::Affine: {
      const Node& X = nodes_[n.a];
      const Node& W = nodes_[n.b];
      const Node& B = nodes_[n.c];
      kernels::matmul_bias(exec_, X.value.data(), W.value.data(), B.value.data(), n.value.data(), X.rows,
                           X.cols, W.cols);
      if (n.has_tangent) {
        kernels::matmul_bias(exec_, X.dx.data(), W.value.data(), nullptr, n.dx.data(), X.rows, X.cols, W.cols);
        kernels::matmul_bias(exec_, X.dt.data(), W.value.data(), nullptr, n.dt.data(), X.rows, X.cols, W.cols);
      }
      return;
    }
    case Op::Add:
    case Op::Sub: {
      const Node& A = nodes_[n.a];
      const Node& B = nodes_[n.b];
      for (int p = 0; p < planes; ++p) {
        const double* a = plane_or_null(A, p);
        const double* b = plane_or_null(B, p);
        double* y = out(p);
        if (a && b) {
          if (n.op == Op::Add) {
            for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] + b[i];
          } else {
            for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] - b[i];
          }
        } else if (a) {
          std::copy_n(a, sz, y);
        } else {
          const double sign = n.op == Op::Add ? 1.0 : -1.0;
          for (std::size_t i = 0; i < sz; ++i) y[i] = sign * b[i];
        }
      }
      return;
    }
    case Op::Mul: {
      const Node& A = nodes_[n.a];
      const Node& B = nodes_[n.b];
      for (std::size_t i = 0; i < sz; ++i) n.value[i] = A.value[i] * B.value[i];
      if (n.has_tangent) {
        for (int p = 1; p < 3; ++p) {
          const double* ad = plane_or_null(A, p);
          const double* bd = plane_or_null(B, p);
          double* y = out(p);
          for (std::size_t i = 0; i < sz; ++i) {
            const double l = ad ? ad[i] * B.value[i] : 0.0;
            const double r = bd ? A.value[i] * bd[i] : 0.0;
            y[i] = ad && bd ? l + r : (ad ? l : r);
          }
        }
      }
      return;
    }
    case Op::Div: {
      const Node& A = nodes_[n.a];
      const Node& B = nodes_[n.b];
      for (std::size_t i = 0; i < sz; ++i) n.value[i] = A.value[i] / B.value[i];
      if (n.has_tangent) {
        for (int p = 1; p < 3; ++p) {
          const double* ad = plane_or_null(A, p);
          const double* bd = plane_or_null(B, p);
          double* y = out(p);
          for (std::size_t i = 0; i < sz; ++i) {
            const double num = (ad ? ad[i] : 0.0) - (bd ? n.value[i] * bd[i] : 0.0);
            y[i] = num / B.value[i];
          }
        }
      }
      return;
    }
    case Op::Scale:
    case Op::AddConst: {
      const Node& A = nodes_[n.a];
      for (int p = 0; p < planes; ++p) {
        const double* a = plane_or_null(A, p);
        double* y = out(p);
        if (n.op == Op::Scale) {
          for (std::size_t i = 0; i < sz; ++i) y[i] = n.constant * a[i];
        } else if (p == 0) {
          for (std::size_t i = 0; i < sz; ++i) y[i] = a[i] + n.constant;
        } else {
          std::copy_n(a, sz, y);
        }
      }
      return;
    }
    case Op::Tangent: {
      const Node& A = nodes_[n.a];
      std::copy_n(n.index == 0 ? A.dx.data() : A.dt.data(), sz, n.value.data());
      return;
    }
    case Op::Value:
      std::copy_n(nodes_[n.a].value.data(), sz, n.value.data());
      return;
    case Op::Column: {
      const Node& A = nodes_[n.a];
      for (int p = 0; p < planes; ++p) {
        const double* a = plane_or_null(A, p);
        double* y = out(p);
        for (std::size_t i = 0; i < A.rows; ++i) y[i] = a[i * A.cols + n.index];
      }
      return;
    }
    case Op::Mean:
    case Op::Sum: {
      const Node& A = nodes_[n.a];
      const double denom = n.op == Op::Mean ? static_cast<double>(A.size()) : 1.0;
      for (int p = 0; p < planes; ++p) {
        out(p)[0] = kernels::pairwise_sum(plane_or_null(A, p), A.size()) / denom;
      }
      return;
    }
    default:
      break;
  }
  if (is_unary(n.op)) {
    const Node& A = nodes_[n.a];
    dispatch_unary(n.op, [&](auto tag) {
      constexpr Op K = decltype(tag)::value;
      if (n.has_tangent) {
        for (std::size_t i = 0; i < sz; ++i) {
          const Derivs d = unary_eval(K, A.value[i], n.constant);
          n.value[i] = d.f;
          n.dx[i] = d.d1 * A.dx[i];
          n.dt[i] = d.d1 * A.dt[i];
        }
      } else {
        for (std::size_t i = 0; i < sz; ++i) n.value[i] = unary_eval(K, A.value[i], n.constant).f;
      }
    });
    return;
  }
  throw TapeError(std::string("evaluate: unsupported primitive ") + to_string(n.op));
}

bool Tape::replay_matches() const {
  for (const Node& original : nodes_) {
    if (original.op == Op::Input) continue;
    Node copy = original;
    std::fill(copy.value.begin(), copy.value.end(), 0.0);
    std::fill(copy.dx.begin(), copy.dx.end(), 0.0);
    std::fill(copy.dt.begin(), copy.dt.end(), 0.0);
    evaluate(copy);
    for (int p = 0; p < (original.has_tangent ? 3 : 1); ++p) {
      const auto& x = original.plane(p);
      const auto& y = copy.plane(p);
      if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
    }
  }
  return true;
}

void Tape::ensure_adjoint(NodeId id) {
  const Node& n = nodes_[id];
  for (int p = 0; p < (n.has_tangent ? 3 : 1); ++p) {
    auto& a = adjoints_[3 * id + static_cast<std::size_t>(p)];
    if (a.empty()) {
      a = take_buffer(n.size());
      std::fill(a.begin(), a.end(), 0.0);
    }
  }
}

std::vector<double>& Tape::adj(NodeId id, int plane) {
  return adjoints_[3 * id + static_cast<std::size_t>(plane)];
}

std::vector<double> Tape::grad_weights(NodeId loss) {
  std::vector<double> grad(weights_.size(), 0.0);
  accumulate_grad(loss, grad);
  return grad;
}

void Tape::accumulate_grad(NodeId loss, std::span<double> grad) {
  const double value = scalar(loss);
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "grad_weights: loss is not finite (" << value << ")";
    throw NonFiniteLoss(os.str());
  }
  if (grad.size() != weights_.size()) throw TapeError("grad_weights: gradient buffer size mismatch");
  for (auto& a : adjoints_) {
    if (a.capacity() > 0) pool_.push_back(std::move(a));
  }
  adjoints_.assign(3 * nodes_.size(), {});
  backward_order_.clear();

  ensure_adjoint(loss);
  adj(loss, 0)[0] = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (adjoints_[3 * id].empty() || !nodes_[id].needs_grad) continue;
    backward_order_.push_back(id);
    backward(id, grad);
  }
}

void Tape::backward(NodeId id, std::span<double> grad) {
  const Node& n = nodes_[id];
  const std::size_t sz = n.size();
  const int planes = n.has_tangent ? 3 : 1;
  auto gy = [&](int p) -> const double* { return adjoints_[3 * id + static_cast<std::size_t>(p)].data(); };
  // Adjoint plane p of input node `src`, or null when src has no such plane
  // or does not depend on the weights.
  auto target = [&](NodeId src, int p) -> double* {
    const Node& s = nodes_[src];
    if (!s.needs_grad || (p > 0 && !s.has_tangent)) return nullptr;
    ensure_adjoint(src);
    return adj(src, p).data();
  };

  switch (n.op) {
    case Op::Input:
      return;
    case Op::Param: {
      const double* g = gy(0);
      for (std::size_t i = 0; i < sz; ++i) grad[n.param.offset + i] += g[i];
      return;
    }
    case Op::Affine: {
      const Node& X = nodes_[n.a];
      const Node& W = nodes_[n.b];
      const std::size_t rows = X.rows, k = X.cols, m = W.cols;
      double* gw = target(n.b, 0);
      double* gb = target(n.c, 0);
      kernels::accumulate_at_b(exec_, X.value.data(), gy(0), gw, rows, k, m);
      if (n.has_tangent) {
        kernels::accumulate_at_b(exec_, X.dx.data(), gy(1), gw, rows, k, m);
        kernels::accumulate_at_b(exec_, X.dt.data(), gy(2), gw, rows, k, m);
      }
      kernels::accumulate_column_sums(gy(0), gb, rows, m);
      if (X.needs_grad) {
        scratch_.resize(k * m);
        kernels::transpose(W.value.data(), scratch_.data(), k, m);
        for (int p = 0; p < planes; ++p) {
          kernels::matmul_accumulate(exec_, gy(p), scratch_.data(), target(n.a, p), rows, m, k);
        }
      }
      return;
    }
    case Op::Add:
    case Op::Sub: {
      const std::pair<NodeId, double> sides[2] = {{n.a, 1.0}, {n.b, n.op == Op::Add ? 1.0 : -1.0}};
      for (const auto& [src, sign] : sides) {
        for (int p = 0; p < planes; ++p) {
          double* g = target(src, p);
          if (!g) continue;
          const double* y = gy(p);
          for (std::size_t i = 0; i < sz; ++i) g[i] += sign * y[i];
        }
      }
      return;
    }
    case Op::Mul: {
      const Node& A = nodes_[n.a];
      const Node& B = nodes_[n.b];
      const std::pair<const Node*, NodeId> sides[2] = {{&A, n.a}, {&B, n.b}};
      for (int s = 0; s < 2; ++s) {
        const Node& self = *sides[s].first;
        const Node& other = *sides[1 - s].first;
        const NodeId self_id = sides[s].second;
        if (double* gv = target(self_id, 0)) {
          const double* y0 = gy(0);
          for (std::size_t i = 0; i < sz; ++i) gv[i] += y0[i] * other.value[i];
          if (n.has_tangent && other.has_tangent) {
            const double* y1 = gy(1);
            const double* y2 = gy(2);
            for (std::size_t i = 0; i < sz; ++i) gv[i] += y1[i] * other.dx[i] + y2[i] * other.dt[i];
          }
        }
        if (self.has_tangent) {
          for (int p = 1; p < 3; ++p) {
            double* gd = target(self_id, p);
            if (!gd) continue;
            const double* y = gy(p);
            for (std::size_t i = 0; i < sz; ++i) gd[i] += y[i] * other.value[i];
          }
        }
      }
      return;
    }
    case Op::Div: {
      const Node& B = nodes_[n.b];
      // y = a / b, y' = (a' - y b') / b.
      const double* y0 = gy(0);
      if (double* ga = target(n.a, 0)) {
        for (std::size_t i = 0; i < sz; ++i) ga[i] += y0[i] / B.value[i];
      }
      if (double* gb = target(n.b, 0)) {
        for (std::size_t i = 0; i < sz; ++i) gb[i] -= y0[i] * n.value[i] / B.value[i];
      }
      if (n.has_tangent) {
        for (int p = 1; p < 3; ++p) {
          const double* yd = gy(p);
          const double* bd = B.has_tangent ? &B.plane(p)[0] : nullptr;
          const double* nd = &n.plane(p)[0];
          if (double* gad = target(n.a, p)) {
            for (std::size_t i = 0; i < sz; ++i) gad[i] += yd[i] / B.value[i];
          }
          if (double* gbd = target(n.b, p)) {
            for (std::size_t i = 0; i < sz; ++i) gbd[i] -= yd[i] * n.value[i] / B.value[i];
          }
          // Through y inside y' and through b in the denominator.
          if (bd) {
            if (double* ga = target(n.a, 0)) {
              for (std::size_t i = 0; i < sz; ++i) ga[i] -= yd[i] * bd[i] / (B.value[i] * B.value[i]);
            }
          }
          if (double* gb = target(n.b, 0)) {
            for (std::size_t i = 0; i < sz; ++i) {
              double term = -yd[i] * nd[i] / B.value[i];
              if (bd) term += yd[i] * n.value[i] * bd[i] / (B.value[i] * B.value[i]);
              gb[i] += term;
            }
          }
        }
      }
      return;
    }
    case Op::Scale:
    case Op::AddConst: {
      const double f = n.op == Op::Scale ? n.constant : 1.0;
      for (int p = 0; p < planes; ++p) {
        double* g = target(n.a, p);
        if (!g) continue;
        const double* y = gy(p);
        for (std::size_t i = 0; i < sz; ++i) g[i] += f * y[i];
      }
      return;
    }
    case Op::Tangent: {
      double* g = target(n.a, static_cast<int>(n.index) + 1);
      if (!g) return;
      const double* y = gy(0);
      for (std::size_t i = 0; i < sz; ++i) g[i] += y[i];
      return;
    }
    case Op::Value: {
      double* g = target(n.a, 0);
      if (!g) return;
      const double* y = gy(0);
      for (std::size_t i = 0; i < sz; ++i) g[i] += y[i];
      return;
    }
    case Op::Column: {
      const Node& A = nodes_[n.a];
      for (int p = 0; p < planes; ++p) {
        double* g = target(n.a, p);
        if (!g) continue;
        const double* y = gy(p);
        for (std::size_t i = 0; i < A.rows; ++i) g[i * A.cols + n.index] += y[i];
      }
      return;
    }
    case Op::Mean:
    case Op::Sum: {
      const Node& A = nodes_[n.a];
      const double f = n.op == Op::Mean ? 1.0 / static_cast<double>(A.size()) : 1.0;
      for (int p = 0; p < planes; ++p) {
        double* g = target(n.a, p);
        if (!g) continue;
        const double y = gy(p)[0] * f;
        for (std::size_t i = 0; i < A.size(); ++i) g[i] += y;
      }
      return;
    }
    default:
      break;
  }
  if (is_unary(n.op)) {
    const Node& A = nodes_[n.a];
    double* gv = target(n.a, 0);
    double* gx = n.has_tangent ? target(n.a, 1) : nullptr;
    double* gt = n.has_tangent ? target(n.a, 2) : nullptr;
    const double* y0 = gy(0);
    const double* y1 = n.has_tangent ? gy(1) : nullptr;
    const double* y2 = n.has_tangent ? gy(2) : nullptr;
    dispatch_unary(n.op, [&](auto tag) {
      constexpr Op K = decltype(tag)::value;
      for (std::size_t i = 0; i < sz; ++i) {
        const Derivs d = reverse_derivs<K>(A.value[i], n.value[i], n.constant);
        if (gv) {
          double g = d.d1 * y0[i];
          if (n.has_tangent) g += d.d2 * (A.dx[i] * y1[i] + A.dt[i] * y2[i]);
          gv[i] += g;
        }
        if (gx) gx[i] += d.d1 * y1[i];
        if (gt) gt[i] += d.d1 * y2[i];
      }
    });
    return;
  }
  throw TapeError(std::string("backward: unsupported primitive ") + to_string(n.op));
}

}  // namespace stagecast::ad
