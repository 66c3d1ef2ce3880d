#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sigcn/tensor.hpp"

namespace sigcn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& dims() const { return value().dims(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Build once, run backward once per loss.
// Single-threaded; use one tape per inference.
class Tape {
 public:
  using Inputs = std::span<const Tensor* const>;
  using ForwardFn = std::function<Tensor(Inputs)>;
  // Returns one gradient per input; an empty Tensor means "no contribution".
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& gout, Inputs in,
                                        const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable parameter.
  Var leaf(Tensor value);
  // Input that never receives a gradient.
  Var constant(Tensor value);

  Var record(std::string op, std::vector<Var> inputs, ForwardFn forward,
             BackwardFn backward);

  const Tensor& value(const Var& v) const;
  const std::string& op(const Var& v) const;
  bool requires_grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

  // d(loss)/d(wrt). loss must be a scalar on this tape; wrt must be a
  // differentiable node on this tape. Unreachable nodes get zeros.
  Tensor grad(const Var& loss, const Var& wrt);

  // Re-executes every recorded op from its recorded inputs and reports
  // whether all outputs come out bit-identical.
  bool replay_matches() const;

  // One entry per element at every non-differentiable point on the tape
  // (ReLU inputs > 0, BCE probabilities inside the clamp). Two evaluations
  // with equal patterns lie on the same smooth piece.
  std::vector<std::uint8_t> activation_pattern() const;

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Var& v, const char* what) const;
  void backward(std::size_t loss_id);

  std::deque<Node> nodes_;
  std::optional<std::size_t> grads_for_;
  std::vector<Tensor> grads_;
};

// Differentiable primitives. All inputs must live on the same tape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape dims);
// Concatenation along axis 0 (the channel axis for [C, H, W]).
Var concat(std::span<const Var> parts);
Var sum(const Var& a);
Var mean(const Var& a);
// [C, H, W] -> [C]
Var mean_pool(const Var& a);
Var bilinear_resize(const Var& a, std::size_t out_h, std::size_t out_w);
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t dilation = 1);
Var node_conv(const Var& x, const Var& theta);
// Per-channel standardization of [C, H, W] without affine parameters:
// (x_c - mean(x_c)) / sqrt(var(x_c) + kNormalizeEpsilon).
inline constexpr double kNormalizeEpsilon = 1e-12;
Var instance_normalize(const Var& x);
// Mean binary cross-entropy of probabilities against a 0/1 target, with the
// probabilities clamped to [kBceClamp, 1 - kBceClamp].
inline constexpr double kBceClamp = 1e-7;
Var bce(const Var& prob, const Tensor& target);

}  // namespace sigcn
