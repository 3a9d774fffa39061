#ifndef SSRE_AUTODIFF_HPP
#define SSRE_AUTODIFF_HPP

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ssre {

// Named parameter tensor with its gradient accumulator and optimizer slots.
struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd adam_m;
  Eigen::MatrixXd adam_v;
  bool decay = true;  // weight decay applies (off for biases and norm params)

  Tensor(std::string name_, int rows, int cols, bool decay_);
  void zero_grad() { grad.setZero(); }
};

// Owns every parameter of a model. Iteration order is creation order, which
// is deterministic, so optimizer sweeps and checkpoints are reproducible.
class ParamStore {
 public:
  Tensor* create(const std::string& name, int rows, int cols, bool decay);
  Tensor* find(const std::string& name);  // nullptr if absent
  const std::vector<std::unique_ptr<Tensor>>& all() const { return tensors_; }
  void zero_grads();
  long long parameter_count() const;

 private:
  std::vector<std::unique_ptr<Tensor>> tensors_;
};

// Handle to a node on a Graph tape.
struct Var {
  int id = -1;
};

// Reverse-mode tape over dense double matrices. A recording graph stores a
// backward closure per node; a non-recording graph runs the identical value
// computations and nothing else, which keeps evaluation and gradient paths
// literally the same code.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Var input(const Eigen::MatrixXd& v);
  // Leaf whose gradient flows into t.grad on backward().
  Var param(Tensor& t);
  // Rows of table selected by ids; gradients scatter-add into table.grad.
  Var embedding_rows(Tensor& table, const std::vector<int>& ids);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // a is (n, d), bias is (1, d): bias added to every row.
  Var add_row_broadcast(Var a, Var bias);
  Var scale(Var a, double s);
  // wa * a + wb * b, elementwise over same-shape matrices.
  Var lincomb(double wa, Var a, double wb, Var b);
  Var transpose(Var a);
  Var slice_rows(Var a, int r0, int r1);  // half-open row range
  Var slice_cols(Var a, int c0, int c1);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var gelu(Var a);  // exact erf form
  // Row-wise layer norm over features; gain and bias are (1, d).
  Var layer_norm(Var a, Var gain, Var bias, double eps);
  // Row-wise softmax where columns with key_valid[j] == 0 get weight
  // exactly 0.0 and contribute nothing to the normalizer.
  Var masked_softmax_rows(Var scores,
                          const std::vector<unsigned char>& key_valid);
  Var softmax_rows(Var scores);
  // (1/B) * sum_b weights[b] * CE(targets row b, softmax(logits row b)).
  // Rows with weight exactly 0.0 contribute exactly 0.0.
  Var cross_entropy_mean(Var logits, const Eigen::MatrixXd& targets,
                         const Eigen::VectorXd& weights);
  // Scalar readout sum_ij w_ij * a_ij.
  Var weighted_sum(Var a, const Eigen::MatrixXd& w);

  const Eigen::MatrixXd& value(Var v) const { return nodes_[v.id].value; }
  const Eigen::MatrixXd& grad(Var v) const { return nodes_[v.id].grad; }

  // Reverse sweep from a 1x1 root. Parameter gradients accumulate into
  // their tensors, so zero_grads() between steps is the caller's job.
  void backward(Var root);

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(Graph&, const Node&)> back;
  };

  Var push(Eigen::MatrixXd value,
           std::function<void(Graph&, const Node&)> back);
  Eigen::MatrixXd& grad_ref(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace ssre

#endif  // SSRE_AUTODIFF_HPP
