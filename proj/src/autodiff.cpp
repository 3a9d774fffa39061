#include "ssre/autodiff.hpp"

#include <cmath>
#include <limits>

#include "ssre/errors.hpp"

namespace ssre {

Tensor::Tensor(std::string name_, int rows, int cols, bool decay_)
    : name(std::move(name_)),
      value(Eigen::MatrixXd::Zero(rows, cols)),
      grad(Eigen::MatrixXd::Zero(rows, cols)),
      adam_m(Eigen::MatrixXd::Zero(rows, cols)),
      adam_v(Eigen::MatrixXd::Zero(rows, cols)),
      decay(decay_) {}

Tensor* ParamStore::create(const std::string& name, int rows, int cols,
                           bool decay) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  tensors_.push_back(std::make_unique<Tensor>(name, rows, cols, decay));
  return tensors_.back().get();
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& t : tensors_) {
    if (t->name == name) return t.get();
  }
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& t : tensors_) t->zero_grad();
}

long long ParamStore::parameter_count() const {
  long long n = 0;
  for (const auto& t : tensors_) n += t->value.size();
  return n;
}

Var Graph::push(Eigen::MatrixXd value,
                std::function<void(Graph&, const Node&)> back) {
  Node n;
  n.value = std::move(value);
  if (recording_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::input(const Eigen::MatrixXd& v) { return push(v, nullptr); }

Var Graph::param(Tensor& t) {
  Tensor* tp = &t;
  return push(t.value, [tp](Graph&, const Node& n) { tp->grad += n.grad; });
}

Var Graph::embedding_rows(Tensor& table, const std::vector<int>& ids) {
  Eigen::MatrixXd out(ids.size(), table.value.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows()) {
      throw DataError("embedding id " + std::to_string(ids[i]) +
                      " outside table " + table.name);
    }
    out.row(i) = table.value.row(ids[i]);
  }
  Tensor* tp = &table;
  auto ids_copy = ids;
  return push(std::move(out), [tp, ids_copy](Graph&, const Node& n) {
    for (size_t i = 0; i < ids_copy.size(); ++i) {
      tp->grad.row(ids_copy[i]) += n.grad.row(i);
    }
  });
}

Var Graph::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) throw DataError("matmul shape mismatch");
  return push(A * B, [a, b](Graph& g, const Node& n) {
    g.grad_ref(a).noalias() += n.grad * g.value(b).transpose();
    g.grad_ref(b).noalias() += g.value(a).transpose() * n.grad;
  });
}

Var Graph::add(Var a, Var b) {
  return push(value(a) + value(b), [a, b](Graph& g, const Node& n) {
    g.grad_ref(a) += n.grad;
    g.grad_ref(b) += n.grad;
  });
}

Var Graph::add_row_broadcast(Var a, Var bias) {
  const auto& A = value(a);
  const auto& B = value(bias);
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw DataError("row broadcast shape mismatch");
  }
  Eigen::MatrixXd out = A.rowwise() + B.row(0);
  return push(std::move(out), [a, bias](Graph& g, const Node& n) {
    g.grad_ref(a) += n.grad;
    g.grad_ref(bias).row(0) += n.grad.colwise().sum();
  });
}

Var Graph::scale(Var a, double s) {
  return push(s * value(a), [a, s](Graph& g, const Node& n) {
    g.grad_ref(a) += s * n.grad;
  });
}

Var Graph::lincomb(double wa, Var a, double wb, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw DataError("lincomb shape mismatch");
  }
  // Evaluate the two scaled terms separately before adding. A fused
  // multiply-add here would break the exact operand symmetry that makes
  // wa*A + wb*B and wb*B + wa*A bitwise identical.
  Eigen::MatrixXd pa = wa * A;
  Eigen::MatrixXd pb = wb * B;
  Eigen::MatrixXd out = pa + pb;
  return push(std::move(out), [wa, a, wb, b](Graph& g, const Node& n) {
    g.grad_ref(a) += wa * n.grad;
    g.grad_ref(b) += wb * n.grad;
  });
}

Var Graph::transpose(Var a) {
  return push(value(a).transpose(), [a](Graph& g, const Node& n) {
    g.grad_ref(a) += n.grad.transpose();
  });
}

Var Graph::slice_rows(Var a, int r0, int r1) {
  const auto& A = value(a);
  if (r0 < 0 || r0 >= r1 || r1 > A.rows()) throw DataError("bad row slice");
  return push(A.middleRows(r0, r1 - r0), [a, r0, r1](Graph& g, const Node& n) {
    g.grad_ref(a).middleRows(r0, r1 - r0) += n.grad;
  });
}

Var Graph::slice_cols(Var a, int c0, int c1) {
  const auto& A = value(a);
  if (c0 < 0 || c0 >= c1 || c1 > A.cols()) throw DataError("bad col slice");
  return push(A.middleCols(c0, c1 - c0), [a, c0, c1](Graph& g, const Node& n) {
    g.grad_ref(a).middleCols(c0, c1 - c0) += n.grad;
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("concat_rows of nothing");
  long long rows = 0;
  long long cols = value(parts[0]).cols();
  for (Var p : parts) {
    if (value(p).cols() != cols) throw DataError("concat_rows width mismatch");
    rows += value(p).rows();
  }
  Eigen::MatrixXd out(rows, cols);
  long long r = 0;
  for (Var p : parts) {
    out.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  auto parts_copy = parts;
  return push(std::move(out), [parts_copy](Graph& g, const Node& n) {
    long long r = 0;
    for (Var p : parts_copy) {
      long long pr = g.value(p).rows();
      g.grad_ref(p) += n.grad.middleRows(r, pr);
      r += pr;
    }
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("concat_cols of nothing");
  long long cols = 0;
  long long rows = value(parts[0]).rows();
  for (Var p : parts) {
    if (value(p).rows() != rows) throw DataError("concat_cols height mismatch");
    cols += value(p).cols();
  }
  Eigen::MatrixXd out(rows, cols);
  long long c = 0;
  for (Var p : parts) {
    out.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  auto parts_copy = parts;
  return push(std::move(out), [parts_copy](Graph& g, const Node& n) {
    long long c = 0;
    for (Var p : parts_copy) {
      long long pc = g.value(p).cols();
      g.grad_ref(p) += n.grad.middleCols(c, pc);
      c += pc;
    }
  });
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad_scalar(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

Var Graph::gelu(Var a) {
  Eigen::MatrixXd out = value(a).unaryExpr([](double x) { return gelu_scalar(x); });
  return push(std::move(out), [a](Graph& g, const Node& n) {
    g.grad_ref(a) += n.grad.cwiseProduct(
        g.value(a).unaryExpr([](double x) { return gelu_grad_scalar(x); }));
  });
}

Var Graph::layer_norm(Var a, Var gain, Var bias, double eps) {
  const auto& A = value(a);
  const auto& G = value(gain);
  const auto& B = value(bias);
  long long d = A.cols();
  if (G.rows() != 1 || G.cols() != d || B.rows() != 1 || B.cols() != d) {
    throw DataError("layer_norm affine shape mismatch");
  }
  // Keep the per-row normalized values for the backward pass.
  auto xhat = std::make_shared<Eigen::MatrixXd>(A.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(A.rows());
  Eigen::MatrixXd out(A.rows(), d);
  for (long long r = 0; r < A.rows(); ++r) {
    double mu = A.row(r).mean();
    Eigen::RowVectorXd centered = A.row(r).array() - mu;
    double var = centered.squaredNorm() / d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = centered * is;
    out.row(r) = xhat->row(r).cwiseProduct(G.row(0)) + B.row(0);
  }
  return push(std::move(out),
              [a, gain, bias, xhat, inv_std](Graph& g, const Node& n) {
                const auto& G = g.value(gain);
                long long d = G.cols();
                for (long long r = 0; r < n.grad.rows(); ++r) {
                  Eigen::RowVectorXd dxhat =
                      n.grad.row(r).cwiseProduct(G.row(0));
                  double mean_dxhat = dxhat.mean();
                  double mean_dxhat_xhat =
                      dxhat.cwiseProduct(xhat->row(r)).mean();
                  g.grad_ref(a).row(r) +=
                      (*inv_std)(r) *
                      (dxhat.array() - mean_dxhat -
                       xhat->row(r).array() * mean_dxhat_xhat)
                          .matrix();
                }
                g.grad_ref(gain).row(0) +=
                    n.grad.cwiseProduct(*xhat).colwise().sum();
                g.grad_ref(bias).row(0) += n.grad.colwise().sum();
              });
}

Var Graph::masked_softmax_rows(Var scores,
                               const std::vector<unsigned char>& key_valid) {
  const auto& S = value(scores);
  if (static_cast<long long>(key_valid.size()) != S.cols()) {
    throw DataError("mask length does not match key count");
  }
  bool any_valid = false;
  for (auto v : key_valid) any_valid |= (v != 0);
  if (!any_valid) throw DataError("softmax with all keys masked");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S.rows(), S.cols());
  for (long long r = 0; r < S.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (long long c = 0; c < S.cols(); ++c) {
      if (key_valid[c] && S(r, c) > mx) mx = S(r, c);
    }
    double z = 0.0;
    for (long long c = 0; c < S.cols(); ++c) {
      if (key_valid[c]) {
        P(r, c) = std::exp(S(r, c) - mx);
        z += P(r, c);
      }
    }
    for (long long c = 0; c < S.cols(); ++c) {
      if (key_valid[c]) P(r, c) /= z;
    }
  }
  auto probs = std::make_shared<Eigen::MatrixXd>(P);
  return push(std::move(P), [scores, probs](Graph& g, const Node& n) {
    // dS = P .* (dP - rowwise_sum(dP .* P)); masked entries have P == 0.
    for (long long r = 0; r < n.grad.rows(); ++r) {
      double dot = n.grad.row(r).dot(probs->row(r));
      g.grad_ref(scores).row(r) += probs->row(r).cwiseProduct(
          (n.grad.row(r).array() - dot).matrix());
    }
  });
}

Var Graph::softmax_rows(Var scores) {
  std::vector<unsigned char> all_valid(value(scores).cols(), 1);
  return masked_softmax_rows(scores, all_valid);
}

Var Graph::cross_entropy_mean(Var logits, const Eigen::MatrixXd& targets,
                              const Eigen::VectorXd& weights) {
  const auto& Z = value(logits);
  long long b_count = Z.rows();
  if (targets.rows() != b_count || targets.cols() != Z.cols() ||
      weights.size() != b_count) {
    throw DataError("cross entropy shape mismatch");
  }
  auto probs = std::make_shared<Eigen::MatrixXd>(b_count, Z.cols());
  double total = 0.0;
  for (long long r = 0; r < b_count; ++r) {
    double mx = Z.row(r).maxCoeff();
    Eigen::RowVectorXd e = (Z.row(r).array() - mx).exp();
    double z = e.sum();
    probs->row(r) = e / z;
    if (weights(r) != 0.0) {
      double lse = mx + std::log(z);
      double ce = lse - targets.row(r).dot(Z.row(r));
      total += weights(r) * ce;
    }
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = total / static_cast<double>(b_count);
  auto targets_copy = std::make_shared<Eigen::MatrixXd>(targets);
  auto weights_copy = std::make_shared<Eigen::VectorXd>(weights);
  return push(std::move(out), [logits, probs, targets_copy, weights_copy](
                                  Graph& g, const Node& n) {
    double upstream = n.grad(0, 0) / static_cast<double>(probs->rows());
    for (long long r = 0; r < probs->rows(); ++r) {
      double w = (*weights_copy)(r);
      if (w == 0.0) continue;
      g.grad_ref(logits).row(r) +=
          (upstream * w) * (probs->row(r) - targets_copy->row(r));
    }
  });
}

Var Graph::weighted_sum(Var a, const Eigen::MatrixXd& w) {
  const auto& A = value(a);
  if (w.rows() != A.rows() || w.cols() != A.cols()) {
    throw DataError("weighted_sum shape mismatch");
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = A.cwiseProduct(w).sum();
  auto w_copy = std::make_shared<Eigen::MatrixXd>(w);
  return push(std::move(out), [a, w_copy](Graph& g, const Node& n) {
    g.grad_ref(a) += n.grad(0, 0) * (*w_copy);
  });
}

void Graph::backward(Var root) {
  if (!recording_) {
    throw ConfigError("backward on a non-recording graph");
  }
  const auto& rv = nodes_[root.id].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw DataError("backward root must be a scalar");
  }
  for (auto& n : nodes_) {
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[root.id].grad(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this, nodes_[i]);
  }
}

}  // namespace ssre
