// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::nn {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Array& Node::grad_ref() {
  if (grad.empty()) grad = Array(value.shape(), 0.0f);
  return grad;
}

float Tensor::item() const {
  if (value().size() != 1) {
    throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return value()[0];
}

double Tensor::item64() const {
  const float v = item();
  return std::isnan(node_->value64) ? static_cast<double>(v) : node_->value64;
}

Tensor constant(Array value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Parameter::Parameter() : node_(std::make_shared<Node>()) {}

Parameter::Parameter(Array init, bool trainable) : node_(std::make_shared<Node>()) {
  node_->value = std::move(init);
  node_->requires_grad = trainable;
  node_->grad = Array(node_->value.shape(), 0.0f);
}

void Parameter::set_trainable(bool trainable) { node_->requires_grad = trainable; }

void Parameter::zero_grad() {
  if (node_->grad.shape() != node_->value.shape()) {
    node_->grad = Array(node_->value.shape(), 0.0f);
  } else {
    node_->grad.fill(0.0f);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Array();
  }
  root->grad_ref()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || !n->backward_fn || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

namespace {

void check_finite(const Array& a, const char* op) {
  if (!a.all_finite()) throw NumericError(std::string("non-finite output in ") + op);
}

Tensor with64(Tensor t, double v) {
  t.node()->value64 = v;
  return t;
}

bool has64(const Tensor& t) { return !std::isnan(t.node()->value64); }

Tensor make_result(Array value, const char* op, std::vector<NodePtr> parents,
                   std::function<void(Node&)> fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.value().rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 array, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

// ---- kernels ---------------------------------------------------------------

namespace kernels {

void gemm_nn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] = crow[j];
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

void gemm_nt_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn_acc(a, bt.data(), c, m, k, n);
}

void gemm_tn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<double> acc(m * n);
  for (std::size_t i = 0; i < m * n; ++i) acc[i] = c[i];
  for (std::size_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = acc.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < m * n; ++i) c[i] = static_cast<float>(acc[i]);
}

}  // namespace kernels

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Array out({m, n}, 0.0f);
  kernels::gemm_nn_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_result(std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      kernels::gemm_nt_acc(self.grad.data(), pb.value.data(), pa.grad_ref().data(), m, n, k);
    }
    if (pb.requires_grad) {
      kernels::gemm_tn_acc(pa.value.data(), self.grad.data(), pb.grad_ref().data(), k, m, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Array out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
  return make_result(std::move(out), "transpose", {a.node()}, [m, n](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.at(i, j) += self.grad.at(j, i);
  });
}

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  Tensor r = make_result(std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Array& g = p->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
  if (has64(a) && has64(b)) r = with64(r, a.node()->value64 + b.node()->value64);
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Tensor r = make_result(std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      Array& g = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Array& g = self.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
  if (has64(a) && has64(b)) r = with64(r, a.node()->value64 - b.node()->value64);
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Array& g = pa.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Array& g = pb.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  Array out = a.value();
  for (float& v : out.vec()) v *= s;
  Tensor r = make_result(std::move(out), "scale", {a.node()}, [s](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
  if (has64(a)) r = with64(r, static_cast<double>(s) * a.node()->value64);
  return r;
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_rank2(x, "add_row");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (v.value().size() != n) {
    throw DimensionError("add_row: bias of shape " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  }
  Array out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += v.value()[j];
  return make_result(std::move(out), "add_row", {x.node(), v.node()}, [m, n](Node& self) {
    if (self.parents[0]->requires_grad) {
      Array& g = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Array& g = self.parents[1]->grad_ref();
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += self.grad.at(i, j);
        g[j] += static_cast<float>(acc);
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row(matmul(x, weight), bias);
}

// ---- normalization / activations --------------------------------------------

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.value().cols();
  const std::size_t m = x.value().size() / n;
  Array out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const float* in = x.value().data() + i * n;
    float* o = out.data() + i * n;
    const float mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(in[j]) - mx);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = static_cast<float>(std::exp(static_cast<double>(in[j]) - mx) / z);
    }
  }
  return make_result(std::move(out), "softmax", {x.node()}, [m, n](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i) {
      const float* y = self.value.data() + i * n;
      const float* dy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::size_t j = 0; j < n; ++j) {
        g[i * n + j] += static_cast<float>(y[j] * (dy[j] - dot));
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t n = x.value().cols();
  const std::size_t m = x.value().size() / n;
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw DimensionError("layer_norm: scale/shift must have " + std::to_string(n) + " entries");
  }
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Array out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const float* in = x.value().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = static_cast<float>(h * gamma.value()[j] + beta.value()[j]);
    }
  }
  return make_result(
      std::move(out), "layer_norm", {x.node(), gamma.node(), beta.node()},
      [m, n, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
          std::vector<double> dg(n, 0.0), db(n, 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = self.grad[i * n + j];
              dg[j] += dy * (*xhat)[i * n + j];
              db[j] += dy;
            }
          }
          if (pg.requires_grad) {
            Array& g = pg.grad_ref();
            for (std::size_t j = 0; j < n; ++j) g[j] += static_cast<float>(dg[j]);
          }
          if (pb.requires_grad) {
            Array& g = pb.grad_ref();
            for (std::size_t j = 0; j < n; ++j) g[j] += static_cast<float>(db[j]);
          }
        }
        if (px.requires_grad) {
          Array& g = px.grad_ref();
          std::vector<double> dxh(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxh[j] = static_cast<double>(self.grad[i * n + j]) * pg.value[j];
              mean_d += dxh[j];
              mean_dx += dxh[j] * (*xhat)[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              g[i * n + j] += static_cast<float>(
                  (*inv_std)[i] * (dxh[j] - mean_d - (*xhat)[i * n + j] * mean_dx));
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Array out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_result(std::move(out), "gelu", {x.node()}, [](Node& self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Node& px = *self.parents[0];
    Array& g = px.grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += static_cast<float>(self.grad[i] * (cdf + v * pdf));
    }
  });
}

// ---- reductions ----------------------------------------------------------------

Tensor mean(const Tensor& x, std::size_t axis, bool keepdims) {
  const Array& xv = x.value();
  if (xv.rank() == 1) {
    if (axis != 0) throw DimensionError("mean: axis out of range for rank-1 input");
    double acc = 0.0;
    for (float v : xv.vec()) acc += v;
    const std::size_t n = xv.size();
    return with64(make_result(Array::scalar(static_cast<float>(acc / n)), "mean", {x.node()},
                              [n](Node& self) {
                                Array& g = self.parents[0]->grad_ref();
                                const float d = self.grad[0] / static_cast<float>(n);
                                for (std::size_t i = 0; i < n; ++i) g[i] += d;
                              }),
                  acc / static_cast<double>(n));
  }
  require_rank2(x, "mean");
  if (axis > 1) throw DimensionError("mean: axis out of range for rank-2 input");
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  if (axis == 0) {
    std::vector<double> acc(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) acc[j] += xv.at(i, j);
    Array out(keepdims ? Shape{1, n} : Shape{n});
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j] / m);
    return make_result(std::move(out), "mean", {x.node()}, [m, n](Node& self) {
      Array& g = self.parents[0]->grad_ref();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g.at(i, j) += self.grad[j] / static_cast<float>(m);
    });
  }
  Array out(keepdims ? Shape{m, 1} : Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += xv.at(i, j);
    out[i] = static_cast<float>(acc / n);
  }
  return make_result(std::move(out), "mean", {x.node()}, [m, n](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.at(i, j) += self.grad[i] / static_cast<float>(n);
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.value().vec()) acc += v;
  return with64(make_result(Array::scalar(static_cast<float>(acc)), "sum", {x.node()},
                            [](Node& self) {
                              Array& g = self.parents[0]->grad_ref();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
                            }),
                acc);
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    acc += d * d;
  }
  const double value64 = acc / static_cast<double>(n);
  return with64(make_result(Array::scalar(static_cast<float>(acc / n)), "mse", {a.node(), b.node()},
                     [n](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const double k = 2.0 * self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double d = k * (static_cast<double>(pa.value[i]) - pb.value[i]);
                         if (pa.requires_grad) pa.grad_ref()[i] += static_cast<float>(d);
                         if (pb.requires_grad) pb.grad_ref()[i] -= static_cast<float>(d);
                       }
                     }),
                value64);
}

// ---- row manipulation -------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t n = x.shape()[1];
  if (begin >= end || end > x.shape()[0]) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  }
  std::vector<float> data(x.value().data() + begin * n, x.value().data() + end * n);
  return make_result(Array({end - begin, n}, std::move(data)), "slice_rows", {x.node()},
                     [begin, n](Node& self) {
                       Array& g = self.parents[0]->grad_ref();
                       float* dst = g.data() + begin * n;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Array out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(x.value().data() + rows[r] * n, n, out.data() + r * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(out), "gather_rows", {x.node()}, [idx, n](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
  });
}

Tensor replace_rows(const Tensor& x, std::span<const std::size_t> rows, const Tensor& token) {
  require_rank2(x, "replace_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (token.value().size() != n) throw DimensionError("replace_rows: token width mismatch");
  std::vector<char> replaced(m, 0);
  for (std::size_t r : rows) {
    if (r >= m) {
      throw DimensionError("replace_rows: index " + std::to_string(r) + " out of range for " +
                           std::to_string(m) + " rows");
    }
    replaced[r] = 1;
  }
  Array out = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    if (replaced[i]) std::copy_n(token.value().data(), n, out.data() + i * n);
  }
  return make_result(std::move(out), "replace_rows", {x.node(), token.node()},
                     [replaced, m, n](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pt = *self.parents[1];
                       for (std::size_t i = 0; i < m; ++i) {
                         const float* gi = self.grad.data() + i * n;
                         if (replaced[i]) {
                           if (!pt.requires_grad) continue;
                           Array& g = pt.grad_ref();
                           for (std::size_t j = 0; j < n; ++j) g[j] += gi[j];
                         } else if (px.requires_grad) {
                           float* g = px.grad_ref().data() + i * n;
                           for (std::size_t j = 0; j < n; ++j) g[j] += gi[j];
                         }
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    if (p.value().cols() != n) throw DimensionError("concat_rows: column mismatch");
    offsets.push_back(total);
    total += p.value().size() / n;
    parents.push_back(p.node());
  }
  Array out({total, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::copy(parts[k].value().vec().begin(), parts[k].value().vec().end(),
              out.data() + offsets[k] * n);
  }
  return make_result(std::move(out), "concat_rows", std::move(parents),
                     [offsets, n](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         Array& g = p.grad_ref();
                         const float* src = self.grad.data() + offsets[k] * n;
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), "reshape", {x.node()}, [](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor detach(const Tensor& x) { return constant(x.value()); }

// ---- attention -----------------------------------------------------------------

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads, Array* probs) {
  require_rank2(q, "multi_head_attention");
  require_same_shape(q, k, "multi_head_attention");
  require_same_shape(q, v, "multi_head_attention");
  const std::size_t m = q.shape()[0], d = q.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Per-head column blocks, copied contiguous for the kernels.
  auto split = [m, d, dh](const Array& a, std::size_t h) {
    std::vector<float> out(m * dh);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(a.data() + i * d + h * dh, dh, out.data() + i * dh);
    return out;
  };

  auto p_all = std::make_shared<std::vector<float>>(n_heads * m * m);
  Array out({m, d}, 0.0f);
  std::vector<float> scores(m * m), oh(m * dh);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto qh = split(q.value(), h), kh = split(k.value(), h), vh = split(v.value(), h);
    std::fill(scores.begin(), scores.end(), 0.0f);
    kernels::gemm_nt_acc(qh.data(), kh.data(), scores.data(), m, dh, m);
    float* ph = p_all->data() + h * m * m;
    for (std::size_t i = 0; i < m; ++i) {
      const float* s = scores.data() + i * m;
      double mx = s[0];
      for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(s[j]));
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) z += std::exp((s[j] - mx) * inv_sqrt);
      for (std::size_t j = 0; j < m; ++j) {
        ph[i * m + j] = static_cast<float>(std::exp((s[j] - mx) * inv_sqrt) / z);
      }
    }
    std::fill(oh.begin(), oh.end(), 0.0f);
    kernels::gemm_nn_acc(ph, vh.data(), oh.data(), m, m, dh);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(oh.data() + i * dh, dh, out.data() + i * d + h * dh);
  }
  if (probs != nullptr) *probs = Array({n_heads, m, m}, *p_all);

  return make_result(
      std::move(out), "multi_head_attention", {q.node(), k.node(), v.node()},
      [m, d, dh, n_heads, inv_sqrt, p_all, split_cols = split](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        std::vector<float> dp(m * m), ds(m * m), tmp(m * dh);
        auto scatter_add = [&](Array& g, const std::vector<float>& block, std::size_t h) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dh; ++j) g[i * d + h * dh + j] += block[i * dh + j];
        };
        for (std::size_t h = 0; h < n_heads; ++h) {
          const float* ph = p_all->data() + h * m * m;
          const auto doh = split_cols(self.grad, h);
          const auto vh = split_cols(pv.value, h);
          if (pv.requires_grad) {
            std::fill(tmp.begin(), tmp.end(), 0.0f);
            kernels::gemm_tn_acc(ph, doh.data(), tmp.data(), m, m, dh);
            scatter_add(pv.grad_ref(), tmp, h);
          }
          if (!pq.requires_grad && !pk.requires_grad) continue;
          std::fill(dp.begin(), dp.end(), 0.0f);
          kernels::gemm_nt_acc(doh.data(), vh.data(), dp.data(), m, dh, m);
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              dot += static_cast<double>(dp[i * m + j]) * ph[i * m + j];
            }
            for (std::size_t j = 0; j < m; ++j) {
              ds[i * m + j] =
                  static_cast<float>(ph[i * m + j] * (dp[i * m + j] - dot) * inv_sqrt);
            }
          }
          if (pq.requires_grad) {
            const auto kh = split_cols(pk.value, h);
            std::fill(tmp.begin(), tmp.end(), 0.0f);
            kernels::gemm_nn_acc(ds.data(), kh.data(), tmp.data(), m, m, dh);
            scatter_add(pq.grad_ref(), tmp, h);
          }
          if (pk.requires_grad) {
            const auto qh = split_cols(pq.value, h);
            std::fill(tmp.begin(), tmp.end(), 0.0f);
            kernels::gemm_tn_acc(ds.data(), qh.data(), tmp.data(), m, m, dh);
            scatter_add(pk.grad_ref(), tmp, h);
          }
        }
      });
}

// ---- losses ------------------------------------------------------------------

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "cross_entropy_rows");
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  if (targets.size() != m) throw DimensionError("cross_entropy_rows: one target per row");
  auto probs = std::make_shared<std::vector<double>>(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw DimensionError("cross_entropy_rows: target out of range");
    const float* row = logits.value().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] = std::exp(row[j] - mx) / z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return with64(make_result(Array::scalar(static_cast<float>(total / m)), "cross_entropy_rows",
                     {logits.node()}, [m, n, probs, tgt](Node& self) {
                       Array& g = self.parents[0]->grad_ref();
                       const double k = self.grad[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
                           g[i * n + j] += static_cast<float>(k * ((*probs)[i * n + j] - onehot));
                         }
                       }
                     }),
                total / static_cast<double>(m));
}

Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng) {
  if (p <= 0.0f) return x;
  if (p >= 1.0f) throw DomainError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const float s = 1.0f / (1.0f - p);
  auto mask = std::make_shared<std::vector<float>>(x.value().size());
  Array out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : 0.0f;
    out[i] *= (*mask)[i];
  }
  return make_result(std::move(out), "dropout", {x.node()}, [mask](Node& self) {
    Array& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace ssbrpe::nn
