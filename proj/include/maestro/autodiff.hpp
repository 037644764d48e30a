#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "maestro/rng.hpp"

namespace maestro::nn {

// Row-major 2-D array. Token sets are [tokens, width]; weights are [in, out].
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values);

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return std::span<T>(data).subspan(r * cols, cols); }
  std::span<const T> row(std::size_t r) const { return std::span<const T>(data).subspan(r * cols, cols); }
  std::size_t size() const { return data.size(); }
};

// Forward multiply counter for matrix products. Elementwise work is not
// counted, matching the analytic cost model.
struct MultiplyCounter {
  static std::uint64_t& value();
  static void reset() { value() = 0; }
};

// Named, shaped parameter tensors. Order of registration is the canonical
// order for checkpoints, optimizer state and gradient reduction.
template <typename T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);
  std::size_t add(const std::string& name, Matrix<T> init);
  std::size_t id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t id) const { return names_[id]; }
  Matrix<T>& value(std::size_t id) { return values_[id]; }
  const Matrix<T>& value(std::size_t id) const { return values_[id]; }
  std::size_t num_scalars() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      Matrix<U> m(values_[i].rows, values_[i].cols);
      for (std::size_t k = 0; k < m.size(); ++k) m.data[k] = static_cast<U>(values_[i].data[k]);
      out.add(names_[i], std::move(m));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradient buffers congruent with a ParamStore.
template <typename T>
struct GradStore {
  std::vector<std::vector<T>> grads;

  explicit GradStore(const ParamStore<T>& params);
  GradStore() = default;
  void zero();
  void add(const GradStore& other);
  void scale(T s);
};

void xavier_uniform(Matrix<float>& m, Rng& rng);
void xavier_uniform(Matrix<double>& m, Rng& rng);
void normal_init(Matrix<float>& m, Rng& rng, double stddev);
void normal_init(Matrix<double>& m, Rng& rng, double stddev);

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// Tape for reverse-mode differentiation. Nodes are appended in evaluation
// order, so the reverse pass walks them back-to-front exactly once.
template <typename T>
class Graph {
 public:
  explicit Graph(const ParamStore<T>* params = nullptr);

  // Parameters listed here are read but never receive gradients.
  void freeze(std::vector<bool> frozen) { frozen_ = std::move(frozen); }

  Var param(std::size_t id);
  Var param(const std::string& name) { return param(params_->id(name)); }
  Var constant(Matrix<T> value);

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<T>& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t rows(Var v) const { return nodes_[v.id].value.rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].value.cols; }
  std::size_t num_nodes() const { return nodes_.size(); }

  Var matmul(Var a, Var b);     // [n,k] x [k,m]
  Var matmul_nt(Var a, Var b);  // [n,k] x [m,k]^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a [1, m] row over a [n, m] matrix
  Var scale(Var a, T s);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-6));
  Var softmax_rows(Var a);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var gather_rows(Var a, std::vector<std::uint32_t> rows);
  // Row i of the result is row picks[i].second of sources[picks[i].first].
  Var pick_rows(std::span<const Var> sources, std::vector<std::pair<std::uint32_t, std::uint32_t>> picks);
  Var sum(Var a);  // -> [1, 1]

  // Consecutive blocks of `block` rows are pooled: weights = softmax over the
  // block of `scores` (a [n, 1] column), output row = weighted sum of rows of x.
  Var block_softmax_pool(Var scores, Var x, std::size_t block);

  // sum_r weight[r] * sum_c |pred(r,c) - target(r,c)|   -> [1, 1]
  Var weighted_l1(Var pred, const Matrix<T>& target, const std::vector<T>& row_weight);
  // Multi-label logistic loss summed over all entries (targets in {0,1}).
  Var bce_with_logits(Var logits, const Matrix<T>& targets);
  // Softmax cross-entropy per row; rows with label < 0 are skipped. Summed.
  Var cross_entropy(Var logits, const std::vector<int>& labels);

  void backward(Var loss);
  // Adds parameter-leaf gradients into `out` (fixed parameter order).
  void accumulate_param_grads(GradStore<T>& out) const;

 private:
  struct Node {
    Matrix<T> value;
    std::vector<T> grad;
    std::function<void(Graph&, std::uint32_t)> backward;
    std::int64_t param_id = -1;
    bool needs_grad = false;
  };

  Var push(Matrix<T> value, bool needs_grad, std::function<void(Graph&, std::uint32_t)> backward = {});
  std::vector<T>& grad_buffer(std::uint32_t id);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  const ParamStore<T>* params_;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> param_nodes_;
  std::vector<bool> frozen_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template struct GradStore<float>;
extern template struct GradStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace maestro::nn
