#include "maestro/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

#include "maestro/errors.hpp"

namespace maestro::nn {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MMap = Eigen::Map<RowMajor<T>>;

void check(bool cond, const char* what) {
  if (!cond) throw ValidationError(std::string("autodiff shape error: ") + what);
}

}  // namespace

std::uint64_t& MultiplyCounter::value() {
  static thread_local std::uint64_t counter = 0;
  return counter;
}

template <typename T>
Matrix<T>::Matrix(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
  check(data.size() == r * c, "matrix data size");
}

// ---------------------------------------------------------------------------
// ParamStore / GradStore

template <typename T>
std::size_t ParamStore<T>::add(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Matrix<T>(rows, cols));
}

template <typename T>
std::size_t ParamStore<T>::add(const std::string& name, Matrix<T> init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_[name] = values_.size();
  names_.push_back(name);
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename T>
GradStore<T>::GradStore(const ParamStore<T>& params) {
  grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params.value(i).size(), T(0));
}

template <typename T>
void GradStore<T>::zero() {
  for (auto& g : grads) std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
void GradStore<T>::add(const GradStore& other) {
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += other.grads[i][k];
}

template <typename T>
void GradStore<T>::scale(T s) {
  for (auto& g : grads)
    for (auto& v : g) v *= s;
}

namespace {

template <typename T>
void xavier_impl(Matrix<T>& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void normal_impl(Matrix<T>& m, Rng& rng, double stddev) {
  for (auto& v : m.data) v = static_cast<T>(stddev * rng.normal());
}

}  // namespace

void xavier_uniform(Matrix<float>& m, Rng& rng) { xavier_impl(m, rng); }
void xavier_uniform(Matrix<double>& m, Rng& rng) { xavier_impl(m, rng); }
void normal_init(Matrix<float>& m, Rng& rng, double stddev) { normal_impl(m, rng, stddev); }
void normal_init(Matrix<double>& m, Rng& rng, double stddev) { normal_impl(m, rng, stddev); }

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Graph<T>::Graph(const ParamStore<T>* params) : params_(params) {
  if (params_) param_nodes_.assign(params_->size(), -1);
}

template <typename T>
Var Graph<T>::push(Matrix<T> value, bool needs_grad, std::function<void(Graph&, std::uint32_t)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
Var Graph<T>::param(std::size_t id) {
  check(params_ != nullptr && id < params_->size(), "parameter id");
  if (param_nodes_[id] >= 0) return Var{static_cast<std::uint32_t>(param_nodes_[id])};
  const bool trainable = frozen_.empty() || !frozen_[id];
  Var v = push(params_->value(id), trainable);
  nodes_[v.id].param_id = static_cast<std::int64_t>(id);
  param_nodes_[id] = v.id;
  return v;
}

template <typename T>
Var Graph<T>::constant(Matrix<T> value) {
  return push(std::move(value), false);
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check(A.cols == B.rows, "matmul inner dims");
  Matrix<T> out(A.rows, B.cols);
  if (A.rows && B.cols && A.cols) {
    MMap<T>(out.data.data(), A.rows, B.cols).noalias() =
        CMap<T>(A.data.data(), A.rows, A.cols) * CMap<T>(B.data.data(), B.rows, B.cols);
  }
  MultiplyCounter::value() += static_cast<std::uint64_t>(A.rows) * A.cols * B.cols;
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& A = g.nodes_[a.id].value;
    const auto& B = g.nodes_[b.id].value;
    const auto& G = g.nodes_[self].grad;
    if (A.rows == 0 || B.cols == 0 || A.cols == 0) return;
    CMap<T> dC(G.data(), A.rows, B.cols);
    if (g.needs(a)) {
      MMap<T>(g.grad_buffer(a.id).data(), A.rows, A.cols).noalias() += dC * CMap<T>(B.data.data(), B.rows, B.cols).transpose();
    }
    if (g.needs(b)) {
      MMap<T>(g.grad_buffer(b.id).data(), B.rows, B.cols).noalias() += CMap<T>(A.data.data(), A.rows, A.cols).transpose() * dC;
    }
  });
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check(A.cols == B.cols, "matmul_nt inner dims");
  Matrix<T> out(A.rows, B.rows);
  if (A.rows && B.rows && A.cols) {
    MMap<T>(out.data.data(), A.rows, B.rows).noalias() =
        CMap<T>(A.data.data(), A.rows, A.cols) * CMap<T>(B.data.data(), B.rows, B.cols).transpose();
  }
  MultiplyCounter::value() += static_cast<std::uint64_t>(A.rows) * A.cols * B.rows;
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& A = g.nodes_[a.id].value;
    const auto& B = g.nodes_[b.id].value;
    const auto& G = g.nodes_[self].grad;
    if (A.rows == 0 || B.rows == 0 || A.cols == 0) return;
    CMap<T> dC(G.data(), A.rows, B.rows);
    if (g.needs(a)) {
      MMap<T>(g.grad_buffer(a.id).data(), A.rows, A.cols).noalias() += dC * CMap<T>(B.data.data(), B.rows, B.cols);
    }
    if (g.needs(b)) {
      MMap<T>(g.grad_buffer(b.id).data(), B.rows, B.cols).noalias() += dC.transpose() * CMap<T>(A.data.data(), A.rows, A.cols);
    }
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check(A.rows == B.rows && A.cols == B.cols, "add shapes");
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    for (Var v : {a, b}) {
      if (!g.needs(v)) continue;
      auto& d = g.grad_buffer(v.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
  });
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  check(A.rows == B.rows && A.cols == B.cols, "sub shapes");
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    if (g.needs(a)) {
      auto& d = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (g.needs(b)) {
      auto& d = g.grad_buffer(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= G[i];
    }
  });
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
  const auto& A = value(a);
  const auto& R = value(row);
  check(R.rows == 1 && R.cols == A.cols, "add_row shapes");
  Matrix<T> out = A;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += R.data[c];
  return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    const std::size_t cols = g.nodes_[self].value.cols;
    const std::size_t rows = g.nodes_[self].value.rows;
    if (g.needs(a)) {
      auto& d = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (g.needs(row)) {
      auto& d = g.grad_buffer(row.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) d[c] += G[r * cols + c];
    }
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  Matrix<T> out = value(a);
  for (auto& v : out.data) v *= s;
  return push(std::move(out), needs(a), [a, s](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    auto& d = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * G[i];
  });
}

template <typename T>
Var Graph<T>::gelu(Var a) {
  const auto& A = value(a);
  Matrix<T> out(A.rows, A.cols);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < A.size(); ++i) {
    const T x = A.data[i];
    out.data[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto& X = g.nodes_[a.id].value;
    const auto& G = g.nodes_[self].grad;
    auto& d = g.grad_buffer(a.id);
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T x = X.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      d[i] += G[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  const std::size_t n = X.cols;
  check(value(gain).cols == n && value(bias).cols == n && value(gain).rows == 1 && value(bias).rows == 1,
        "layer_norm params");
  Matrix<T> out(X.rows, n);
  // Cache normalized rows and inverse std for the reverse pass.
  auto xhat = std::make_shared<std::vector<T>>(X.size());
  auto inv_std = std::make_shared<std::vector<T>>(X.rows);
  const auto& g = value(gain).data;
  const auto& b = value(bias).data;
  for (std::size_t r = 0; r < X.rows; ++r) {
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += X(r, c);
    mean /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (X(r, c) - mean) * is;
      (*xhat)[r * n + c] = h;
      out(r, c) = h * g[c] + b[c];
    }
  }
  return push(std::move(out), needs(x) || needs(gain) || needs(bias),
              [x, gain, bias, xhat, inv_std](Graph& gr, std::uint32_t self) {
                const auto& G = gr.nodes_[self].grad;
                const std::size_t rows = gr.nodes_[self].value.rows;
                const std::size_t n = gr.nodes_[self].value.cols;
                const auto& gv = gr.nodes_[gain.id].value.data;
                if (gr.needs(gain)) {
                  auto& d = gr.grad_buffer(gain.id);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) d[c] += G[r * n + c] * (*xhat)[r * n + c];
                }
                if (gr.needs(bias)) {
                  auto& d = gr.grad_buffer(bias.id);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) d[c] += G[r * n + c];
                }
                if (gr.needs(x)) {
                  auto& d = gr.grad_buffer(x.id);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const T dh = G[r * n + c] * gv[c];
                      mean_dh += dh;
                      mean_dh_h += dh * (*xhat)[r * n + c];
                    }
                    mean_dh /= T(n);
                    mean_dh_h /= T(n);
                    for (std::size_t c = 0; c < n; ++c) {
                      const T dh = G[r * n + c] * gv[c];
                      d[r * n + c] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::softmax_rows(Var a) {
  const auto& A = value(a);
  Matrix<T> out(A.rows, A.cols);
  for (std::size_t r = 0; r < A.rows; ++r) {
    auto in = A.row(r);
    auto o = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T s = 0;
    for (std::size_t c = 0; c < A.cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    for (auto& v : o) v /= s;
  }
  return push(std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto& Y = g.nodes_[self].value;
    const auto& G = g.nodes_[self].grad;
    auto& d = g.grad_buffer(a.id);
    for (std::size_t r = 0; r < Y.rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < Y.cols; ++c) dot += G[r * Y.cols + c] * Y(r, c);
      for (std::size_t c = 0; c < Y.cols; ++c) d[r * Y.cols + c] += Y(r, c) * (G[r * Y.cols + c] - dot);
    }
  });
}

template <typename T>
Var Graph<T>::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const auto& A = value(a);
  check(begin <= end && end <= A.cols, "slice_cols range");
  const std::size_t w = end - begin;
  Matrix<T> out(A.rows, w);
  for (std::size_t r = 0; r < A.rows; ++r)
    std::copy_n(A.data.begin() + r * A.cols + begin, w, out.data.begin() + r * w);
  return push(std::move(out), needs(a), [a, begin, w](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    const std::size_t cols = g.nodes_[a.id].value.cols;
    const std::size_t rows = g.nodes_[self].value.rows;
    auto& d = g.grad_buffer(a.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += G[r * w + c];
  });
}

template <typename T>
Var Graph<T>::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const auto& A = value(a);
  check(begin <= end && end <= A.rows, "slice_rows range");
  Matrix<T> out(end - begin, A.cols);
  std::copy(A.data.begin() + begin * A.cols, A.data.begin() + end * A.cols, out.data.begin());
  return push(std::move(out), needs(a), [a, begin](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    auto& d = g.grad_buffer(a.id);
    const std::size_t off = begin * g.nodes_[a.id].value.cols;
    for (std::size_t i = 0; i < G.size(); ++i) d[off + i] += G[i];
  });
}

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  check(!parts.empty(), "concat_cols of nothing");
  const std::size_t rows = value(parts[0]).rows;
  std::size_t cols = 0;
  bool ng = false;
  for (Var p : parts) {
    check(value(p).rows == rows, "concat_cols rows");
    cols += value(p).cols;
    ng = ng || needs(p);
  }
  Matrix<T> out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.data.begin() + r * P.cols, P.cols, out.data.begin() + r * cols + off);
    off += P.cols;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return push(std::move(out), ng, [saved](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    const std::size_t rows = g.nodes_[self].value.rows;
    const std::size_t cols = g.nodes_[self].value.cols;
    std::size_t off = 0;
    for (Var p : saved) {
      const std::size_t pc = g.nodes_[p.id].value.cols;
      if (g.needs(p)) {
        auto& d = g.grad_buffer(p.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) d[r * pc + c] += G[r * cols + off + c];
      }
      off += pc;
    }
  });
}

template <typename T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows of nothing");
  const std::size_t cols = value(parts[0]).cols;
  std::size_t rows = 0;
  bool ng = false;
  for (Var p : parts) {
    check(value(p).cols == cols, "concat_rows cols");
    rows += value(p).rows;
    ng = ng || needs(p);
  }
  Matrix<T> out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    std::copy(P.data.begin(), P.data.end(), out.data.begin() + off);
    off += P.size();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return push(std::move(out), ng, [saved](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    std::size_t off = 0;
    for (Var p : saved) {
      const std::size_t n = g.nodes_[p.id].value.size();
      if (g.needs(p)) {
        auto& d = g.grad_buffer(p.id);
        for (std::size_t i = 0; i < n; ++i) d[i] += G[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<std::uint32_t> rows) {
  const auto& A = value(a);
  Matrix<T> out(rows.size(), A.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] < A.rows, "gather_rows index");
    std::copy_n(A.data.begin() + rows[i] * A.cols, A.cols, out.data.begin() + i * A.cols);
  }
  return push(std::move(out), needs(a), [a, rows = std::move(rows)](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    const std::size_t cols = g.nodes_[self].value.cols;
    auto& d = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) d[rows[i] * cols + c] += G[i * cols + c];
  });
}

template <typename T>
Var Graph<T>::pick_rows(std::span<const Var> sources, std::vector<std::pair<std::uint32_t, std::uint32_t>> picks) {
  check(!sources.empty(), "pick_rows without sources");
  const std::size_t cols = value(sources[0]).cols;
  bool ng = false;
  for (Var s : sources) {
    check(value(s).cols == cols, "pick_rows cols");
    ng = ng || needs(s);
  }
  Matrix<T> out(picks.size(), cols);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    check(picks[i].first < sources.size(), "pick_rows source");
    const auto& S = value(sources[picks[i].first]);
    check(picks[i].second < S.rows, "pick_rows row");
    std::copy_n(S.data.begin() + picks[i].second * cols, cols, out.data.begin() + i * cols);
  }
  std::vector<Var> saved(sources.begin(), sources.end());
  return push(std::move(out), ng, [saved, picks = std::move(picks)](Graph& g, std::uint32_t self) {
    const auto& G = g.nodes_[self].grad;
    const std::size_t cols = g.nodes_[self].value.cols;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      Var s = saved[picks[i].first];
      if (!g.needs(s)) continue;
      auto& d = g.grad_buffer(s.id);
      for (std::size_t c = 0; c < cols; ++c) d[picks[i].second * cols + c] += G[i * cols + c];
    }
  });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  T s = 0;
  for (T v : value(a).data) s += v;
  return push(Matrix<T>(1, 1, s), needs(a), [a](Graph& g, std::uint32_t self) {
    const T G = g.nodes_[self].grad[0];
    for (auto& v : g.grad_buffer(a.id)) v += G;
  });
}

template <typename T>
Var Graph<T>::block_softmax_pool(Var scores, Var x, std::size_t block) {
  const auto& S = value(scores);
  const auto& X = value(x);
  check(S.cols == 1 && S.rows == X.rows, "block_softmax_pool shapes");
  check(block > 0 && X.rows % block == 0, "block_softmax_pool block size");
  const std::size_t nb = X.rows / block;
  auto weights = std::make_shared<std::vector<T>>(X.rows);
  Matrix<T> out(nb, X.cols);
  for (std::size_t b = 0; b < nb; ++b) {
    T mx = S.data[b * block];
    for (std::size_t k = 1; k < block; ++k) mx = std::max(mx, S.data[b * block + k]);
    T z = 0;
    for (std::size_t k = 0; k < block; ++k) {
      const T e = std::exp(S.data[b * block + k] - mx);
      (*weights)[b * block + k] = e;
      z += e;
    }
    for (std::size_t k = 0; k < block; ++k) {
      const T w = ((*weights)[b * block + k] /= z);
      const auto row = X.row(b * block + k);
      for (std::size_t c = 0; c < X.cols; ++c) out(b, c) += w * row[c];
    }
  }
  MultiplyCounter::value() += static_cast<std::uint64_t>(X.rows) * X.cols;
  return push(std::move(out), needs(scores) || needs(x), [scores, x, block, weights](Graph& g, std::uint32_t self) {
    const auto& X = g.nodes_[x.id].value;
    const auto& Y = g.nodes_[self].value;
    const auto& G = g.nodes_[self].grad;
    const std::size_t cols = X.cols;
    for (std::size_t b = 0; b < Y.rows; ++b) {
      if (g.needs(x)) {
        auto& d = g.grad_buffer(x.id);
        for (std::size_t k = 0; k < block; ++k) {
          const T w = (*weights)[b * block + k];
          for (std::size_t c = 0; c < cols; ++c) d[(b * block + k) * cols + c] += w * G[b * cols + c];
        }
      }
      if (g.needs(scores)) {
        // d score_k = w_k * (g . x_k - g . y)
        T gy = 0;
        for (std::size_t c = 0; c < cols; ++c) gy += G[b * cols + c] * Y(b, c);
        auto& d = g.grad_buffer(scores.id);
        for (std::size_t k = 0; k < block; ++k) {
          T gx = 0;
          for (std::size_t c = 0; c < cols; ++c) gx += G[b * cols + c] * X(b * block + k, c);
          d[b * block + k] += (*weights)[b * block + k] * (gx - gy);
        }
      }
    }
  });
}

template <typename T>
Var Graph<T>::weighted_l1(Var pred, const Matrix<T>& target, const std::vector<T>& row_weight) {
  const auto& P = value(pred);
  check(P.rows == target.rows && P.cols == target.cols, "weighted_l1 shapes");
  check(row_weight.size() == P.rows, "weighted_l1 weights");
  T loss = 0;
  auto signs = std::make_shared<std::vector<T>>(P.size());
  for (std::size_t r = 0; r < P.rows; ++r) {
    if (row_weight[r] == T(0)) continue;
    T s = 0;
    for (std::size_t c = 0; c < P.cols; ++c) {
      const T diff = P(r, c) - target(r, c);
      s += std::abs(diff);
      (*signs)[r * P.cols + c] = row_weight[r] * (diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0)));
    }
    loss += row_weight[r] * s;
  }
  return push(Matrix<T>(1, 1, loss), needs(pred), [pred, signs](Graph& g, std::uint32_t self) {
    const T G = g.nodes_[self].grad[0];
    auto& d = g.grad_buffer(pred.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G * (*signs)[i];
  });
}

template <typename T>
Var Graph<T>::bce_with_logits(Var logits, const Matrix<T>& targets) {
  const auto& Z = value(logits);
  check(Z.rows == targets.rows && Z.cols == targets.cols, "bce shapes");
  T loss = 0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const T z = Z.data[i];
    // max(z,0) - z*y + log(1 + exp(-|z|))
    loss += std::max(z, T(0)) - z * targets.data[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return push(Matrix<T>(1, 1, loss), needs(logits), [logits, targets](Graph& g, std::uint32_t self) {
    const T G = g.nodes_[self].grad[0];
    const auto& Z = g.nodes_[logits.id].value;
    auto& d = g.grad_buffer(logits.id);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T p = T(1) / (T(1) + std::exp(-Z.data[i]));
      d[i] += G * (p - targets.data[i]);
    }
  });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, const std::vector<int>& labels) {
  const auto& Z = value(logits);
  check(labels.size() == Z.rows, "cross_entropy labels");
  auto probs = std::make_shared<std::vector<T>>(Z.size());
  T loss = 0;
  for (std::size_t r = 0; r < Z.rows; ++r) {
    if (labels[r] < 0) continue;
    check(static_cast<std::size_t>(labels[r]) < Z.cols, "cross_entropy label range");
    const auto row = Z.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T z = 0;
    for (std::size_t c = 0; c < Z.cols; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    loss += lse - row[labels[r]];
    for (std::size_t c = 0; c < Z.cols; ++c) (*probs)[r * Z.cols + c] = std::exp(row[c] - lse);
  }
  return push(Matrix<T>(1, 1, loss), needs(logits), [logits, labels, probs](Graph& g, std::uint32_t self) {
    const T G = g.nodes_[self].grad[0];
    const std::size_t cols = g.nodes_[logits.id].value.cols;
    auto& d = g.grad_buffer(logits.id);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] < 0) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        const T y = static_cast<int>(c) == labels[r] ? T(1) : T(0);
        d[r * cols + c] += G * ((*probs)[r * cols + c] - y);
      }
    }
  });
}

template <typename T>
void Graph<T>::backward(Var loss) {
  check(value(loss).size() == 1, "backward needs a scalar loss");
  if (!needs(loss)) return;
  grad_buffer(loss.id)[0] += T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

template <typename T>
void Graph<T>::accumulate_param_grads(GradStore<T>& out) const {
  for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
    if (param_nodes_[p] < 0) continue;
    const auto& n = nodes_[param_nodes_[p]];
    if (n.grad.empty()) continue;
    auto& dst = out.grads[p];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

template struct Matrix<float>;
template struct Matrix<double>;
template class ParamStore<float>;
template class ParamStore<double>;
template struct GradStore<float>;
template struct GradStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace maestro::nn
