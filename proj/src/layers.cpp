#include "maestro/layers.hpp"

#include <cmath>
#include <vector>

#include "maestro/errors.hpp"

namespace maestro::nn {

template <typename T>
LinearIds add_linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  Matrix<T> w(in, out);
  xavier_uniform(w, rng);
  LinearIds ids;
  ids.weight = ps.add(prefix + ".weight", std::move(w));
  ids.bias = ps.add(prefix + ".bias", Matrix<T>(1, out));
  return ids;
}

template <typename T>
LayerNormIds add_layer_norm(ParamStore<T>& ps, const std::string& prefix, std::size_t width) {
  LayerNormIds ids;
  ids.gain = ps.add(prefix + ".gain", Matrix<T>(1, width, T(1)));
  ids.bias = ps.add(prefix + ".bias", Matrix<T>(1, width));
  return ids;
}

template <typename T>
BlockIds add_block(ParamStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  BlockIds b;
  const auto ln1 = add_layer_norm(ps, prefix + ".ln1", width);
  b.ln1_gain = ln1.gain;
  b.ln1_bias = ln1.bias;
  b.qkv = add_linear(ps, prefix + ".attn.qkv", width, 3 * width, rng);
  b.out = add_linear(ps, prefix + ".attn.out", width, width, rng);
  const auto ln2 = add_layer_norm(ps, prefix + ".ln2", width);
  b.ln2_gain = ln2.gain;
  b.ln2_bias = ln2.bias;
  b.fc1 = add_linear(ps, prefix + ".mlp.fc1", width, 4 * width, rng);
  b.fc2 = add_linear(ps, prefix + ".mlp.fc2", 4 * width, width, rng);
  return b;
}

template <typename T>
AttentivePoolIds add_attentive_pool(ParamStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  AttentivePoolIds ids;
  Matrix<T> q(1, width);
  normal_init(q, rng, 0.02);
  ids.query = ps.add(prefix + ".query", std::move(q));
  Matrix<T> k(width, width);
  xavier_uniform(k, rng);
  ids.key = ps.add(prefix + ".key", std::move(k));
  ids.value = add_linear(ps, prefix + ".value", width, width, rng);
  return ids;
}

template <typename T>
Var linear(Graph<T>& g, Var x, const LinearIds& ids) {
  return g.add_row(g.matmul(x, g.param(ids.weight)), g.param(ids.bias));
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, const LayerNormIds& ids) {
  return g.layer_norm(x, g.param(ids.gain), g.param(ids.bias));
}

template <typename T>
Var self_attention(Graph<T>& g, Var x, const LinearIds& qkv_ids, const LinearIds& out_ids, std::size_t heads) {
  const std::size_t width = g.cols(x);
  if (heads == 0 || width % heads) throw ValidationError("attention heads must divide width");
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Var qkv = linear(g, x, qkv_ids);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = g.scale(g.slice_cols(qkv, h * dh, (h + 1) * dh), scale);
    Var k = g.slice_cols(qkv, width + h * dh, width + (h + 1) * dh);
    Var v = g.slice_cols(qkv, 2 * width + h * dh, 2 * width + (h + 1) * dh);
    Var attn = g.softmax_rows(g.matmul_nt(q, k));
    outs.push_back(g.matmul(attn, v));
  }
  Var merged = heads == 1 ? outs[0] : g.concat_cols(outs);
  return linear(g, merged, out_ids);
}

template <typename T>
Var transformer_block(Graph<T>& g, Var x, const BlockIds& ids, std::size_t heads) {
  if (g.rows(x) == 0) return x;
  Var h = g.layer_norm(x, g.param(ids.ln1_gain), g.param(ids.ln1_bias));
  Var x1 = g.add(x, self_attention(g, h, ids.qkv, ids.out, heads));
  Var h2 = g.layer_norm(x1, g.param(ids.ln2_gain), g.param(ids.ln2_bias));
  Var mlp = linear(g, g.gelu(linear(g, h2, ids.fc1)), ids.fc2);
  return g.add(x1, mlp);
}

template <typename T>
Var attentive_pool(Graph<T>& g, Var x, const AttentivePoolIds& ids, std::size_t set_size) {
  const std::size_t width = g.cols(x);
  if (set_size == 0 || g.rows(x) == 0 || g.rows(x) % set_size) throw ValidationError("attentive_pool: bad set size");
  // (x W_k) q^T == x (W_k q^T): fold the key projection into the query.
  Var folded = g.matmul_nt(g.param(ids.key), g.param(ids.query));  // [C, 1]
  Var scores = g.scale(g.matmul(x, folded), T(1) / std::sqrt(static_cast<T>(width)));
  Var pooled = g.block_softmax_pool(scores, x, set_size);
  // value projection commutes with the convex combination
  return linear(g, pooled, ids.value);
}

#define MAESTRO_INSTANTIATE(T)                                                                                    \
  template LinearIds add_linear<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);          \
  template LayerNormIds add_layer_norm<T>(ParamStore<T>&, const std::string&, std::size_t);                       \
  template BlockIds add_block<T>(ParamStore<T>&, const std::string&, std::size_t, Rng&);                          \
  template AttentivePoolIds add_attentive_pool<T>(ParamStore<T>&, const std::string&, std::size_t, Rng&);         \
  template Var linear<T>(Graph<T>&, Var, const LinearIds&);                                                       \
  template Var layer_norm<T>(Graph<T>&, Var, const LayerNormIds&);                                                \
  template Var self_attention<T>(Graph<T>&, Var, const LinearIds&, const LinearIds&, std::size_t);                \
  template Var transformer_block<T>(Graph<T>&, Var, const BlockIds&, std::size_t);                                \
  template Var attentive_pool<T>(Graph<T>&, Var, const AttentivePoolIds&, std::size_t);

MAESTRO_INSTANTIATE(float)
MAESTRO_INSTANTIATE(double)

#undef MAESTRO_INSTANTIATE

}  // namespace maestro::nn
