#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stagecast/parallel.hpp"

namespace stagecast::ad {

enum class Op : std::uint8_t {
  Input,
  Param,
  Affine,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddConst,
  Tanh,
  Relu,
  Sin,
  Cos,
  Square,
  Softplus,
  Abs,
  PowConst,
  Tangent,
  Value,
  Column,
  Mean,
  Sum,
};

const char* to_string(Op op);

/// Input direction of a tangent plane.
enum class Direction : std::uint8_t { X = 0, T = 1 };

using NodeId = std::uint32_t;

/// Slice of the flat weight vector viewed as a rows x cols matrix.
struct ParamRef {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when the backward pass is asked to differentiate a non-finite loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * One recorded operation. The value plane is always present; the dx/dt
 * tangent planes exist when the node depends on a seeded input, and carry
 * forward-mode partials with respect to the normalized (x, t) inputs.
 */
struct Node {
  Op op = Op::Input;
  NodeId a = 0;
  NodeId b = 0;
  NodeId c = 0;
  double constant = 0.0;
  std::size_t index = 0;
  ParamRef param;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool has_tangent = false;
  bool needs_grad = false;  // depends on at least one Param
  std::vector<double> value;
  std::vector<double> dx;
  std::vector<double> dt;

  std::size_t size() const { return rows * cols; }
  const std::vector<double>& plane(int p) const { return p == 0 ? value : (p == 1 ? dx : dt); }
};

/**
 * Reverse-mode tape over (optionally dual-valued) matrices. Operations are
 * evaluated eagerly as they are recorded; grad_weights then walks the nodes
 * in reverse recording order. Because tangent planes are ordinary recorded
 * values, the weight gradient of anything built from them (e.g. a PDE
 * residual) includes their dependence on the weights.
 *
 * A tape reads the weights it was bound to and is single-threaded; kernels
 * inside an operation may use OpenMP.
 */
class Tape {
 public:
  Tape(std::span<const double> weights, Exec exec = Exec::Parallel);

  /// Drops all nodes but keeps buffers for reuse by the next batch.
  void reset();
  void rebind(std::span<const double> weights) { weights_ = weights; }

  NodeId input(std::size_t rows, std::size_t cols, std::span<const double> value);
  NodeId input(std::size_t rows, std::size_t cols, std::span<const double> value,
               std::span<const double> dx, std::span<const double> dt);
  NodeId param(ParamRef ref);

  /// x(n x k) * W(k x m) + b(1 x m); W and b must be Param nodes.
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_const(NodeId a, double shift);
  /// Elementwise unary primitive: Tanh, Relu, Sin, Cos, Square, Softplus or Abs.
  NodeId unary(Op op, NodeId a);
  NodeId pow_const(NodeId a, double exponent);
  /// The d/dx or d/dt plane of a, as a plain value.
  NodeId tangent(NodeId a, Direction d);
  /// a with its tangent planes dropped.
  NodeId value_of(NodeId a);
  NodeId column(NodeId a, std::size_t j);
  /// Mean of all entries of a plain node, as a 1 x 1 node.
  NodeId mean(NodeId a);
  NodeId sum(NodeId a);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  double scalar(NodeId id) const;

  /**
   * Reverse pass from a 1 x 1 loss; returns d loss / d weights with the
   * weight vector's layout. Throws NonFiniteLoss before touching adjoints
   * when the loss is NaN or infinite.
   */
  std::vector<double> grad_weights(NodeId loss);
  /// Same, adding into an existing gradient buffer.
  void accumulate_grad(NodeId loss, std::span<double> grad);

  /// Node ids in the order the last backward pass visited them.
  const std::vector<NodeId>& backward_order() const { return backward_order_; }

  /// Recomputes every node from its inputs; true if all planes match bitwise.
  bool replay_matches() const;

 private:
  NodeId push(Node node);
  Node make(Op op, std::size_t rows, std::size_t cols, bool tangent);
  void evaluate(Node& n) const;
  void backward(NodeId id, std::span<double> grad);
  std::vector<double>& adj(NodeId id, int plane);
  void ensure_adjoint(NodeId id);
  std::vector<double> take_buffer(std::size_t n);

  std::span<const double> weights_;
  Exec exec_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;  // 3 planes per node
  std::vector<std::vector<double>> pool_;
  std::vector<NodeId> backward_order_;
  std::vector<double> scratch_;
};

}  // namespace stagecast::ad
