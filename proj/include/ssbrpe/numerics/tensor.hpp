// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssbrpe/numerics/array.hpp"

// Reverse-mode differentiation over dense float32 arrays.
//
// Every op builds a node holding its output value and a closure that pushes
// the output gradient into its parents. Graphs are single-threaded; a graph
// is released when the last Tensor referencing its root goes away. Leaves
// owned by a Parameter persist across graphs and accumulate gradients until
// zero_grad() is called.

namespace ssbrpe::nn {

namespace detail {

struct Node {
  Array value;
  Array grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  // Scalar reductions keep their float64 accumulator here (NaN otherwise).
  double value64 = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Array& grad_ref();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  // Empty array when no gradient has reached this node.
  const Array& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  float item() const;
  // Float64 value of a scalar reduction before rounding; item() otherwise.
  double item64() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Graph leaf that does not require gradients.
Tensor constant(Array value);

class Parameter {
 public:
  Parameter();
  explicit Parameter(Array init, bool trainable = true);

  Array& value() { return node_->value; }
  const Array& value() const { return node_->value; }
  Array& grad() { return node_->grad; }
  const Array& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool trainable);
  void zero_grad();
  Tensor tensor() const { return Tensor(node_); }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable trainable leaf. Gradients
// of interior nodes are reset on each call, so repeated calls add the same
// contribution to the leaves again.
void backward(const Tensor& loss);

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
// x[m x n] + v[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& v);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor gelu(const Tensor& x);

// Mean over `axis`. Rank-2 input reduces to rank 1 unless keepdims; rank-1
// input reduces to shape {1}.
Tensor mean(const Tensor& x, std::size_t axis, bool keepdims = false);
Tensor sum(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Rows listed in `rows` are replaced by `token` (shape {cols}); others pass through.
Tensor replace_rows(const Tensor& x, std::span<const std::size_t> rows, const Tensor& token);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, Shape shape);
Tensor detach(const Tensor& x);

// Scaled dot-product self-attention over `n_heads` column groups of q/k/v
// (each m x d). When `probs` is non-null it receives the H x m x m
// attention weights.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads, Array* probs = nullptr);

// mean_i [ logsumexp(logits_i) - logits_i[target_i] ].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);

Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng);

// ---- dense kernels (double accumulation) ----------------------------------
namespace kernels {
// c[m x n] += a[m x k] * b[k x n]
void gemm_nn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n);
// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n);
// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n);
}  // namespace kernels

}  // namespace ssbrpe::nn
