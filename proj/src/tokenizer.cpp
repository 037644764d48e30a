#include "maestro/tokenizer.hpp"

#include <cmath>

#include "maestro/errors.hpp"
#include "maestro/layers.hpp"

namespace maestro {

PatchGrid patchify(const TensorF& image, std::size_t patch_size) {
  if (image.ndim() != 4 || image.dim(2) != image.dim(3)) {
    throw ValidationError("patchify expects a square [D, C, I, I] image, got " + shape_string(image.shape()));
  }
  const std::size_t bins = image.dim(0), channels = image.dim(1), side = image.dim(2);
  if (patch_size == 0 || side % patch_size) throw ValidationError("patch does not divide image");
  const std::size_t grid = side / patch_size, pp = patch_size * patch_size;
  PatchGrid out;
  out.patch_size = patch_size;
  out.channels = channels;
  out.patches = TensorF({grid * grid, bins, pp * channels});
  for (std::size_t pr = 0; pr < grid; ++pr)
    for (std::size_t pc = 0; pc < grid; ++pc)
      for (std::size_t d = 0; d < bins; ++d) {
        float* dst = &out.patches.at({pr * grid + pc, d, 0});
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t r = 0; r < patch_size; ++r)
            for (std::size_t q = 0; q < patch_size; ++q)
              dst[c * pp + r * patch_size + q] = image.at({d, c, pr * patch_size + r, pc * patch_size + q});
      }
  return out;
}

TensorF unpatchify(const TensorF& patches, std::size_t patch_size, std::size_t channels) {
  if (patches.ndim() != 3) throw ValidationError("unpatchify expects [N, D, P*P*C], got " + shape_string(patches.shape()));
  const std::size_t n = patches.dim(0), bins = patches.dim(1), pp = patch_size * patch_size;
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (grid * grid != n) throw ValidationError("unpatchify: patch count " + std::to_string(n) + " is not a square");
  if (patches.dim(2) != pp * channels) throw ValidationError("unpatchify: patch length does not match P*P*C");
  const std::size_t side = grid * patch_size;
  TensorF image({bins, channels, side, side});
  for (std::size_t pr = 0; pr < grid; ++pr)
    for (std::size_t pc = 0; pc < grid; ++pc)
      for (std::size_t d = 0; d < bins; ++d) {
        const float* src = &patches.at({pr * grid + pc, d, 0});
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t r = 0; r < patch_size; ++r)
            for (std::size_t q = 0; q < patch_size; ++q)
              image.at({d, c, pr * patch_size + r, pc * patch_size + q}) = src[c * pp + r * patch_size + q];
      }
  return image;
}

std::vector<std::size_t> group_columns(const ModalitySpec& m, std::size_t group) {
  const std::size_t pp = m.patch_size * m.patch_size;
  std::vector<std::size_t> cols;
  for (std::size_t c : m.band_groups.at(group))
    for (std::size_t k = 0; k < pp; ++k) cols.push_back(c * pp + k);
  return cols;
}

std::vector<std::vector<std::size_t>> stream_columns(const ModalitySpec& m, Multispectral flavor) {
  if (flavor == Multispectral::kTokenBased) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t g = 0; g < m.num_groups(); ++g) out.push_back(group_columns(m, g));
    return out;
  }
  std::vector<std::size_t> all(m.patch_dim());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return {all};
}

template <typename T>
nn::Matrix<T> stream_matrix(const PatchGrid& grid, const std::vector<std::size_t>& columns) {
  const std::size_t n = grid.positions(), bins = grid.bins();
  nn::Matrix<T> out(bins * n, columns.size());
  for (std::size_t d = 0; d < bins; ++d)
    for (std::size_t p = 0; p < n; ++p) {
      const float* src = &grid.patches.at({p, d, 0});
      auto row = out.row(d * n + p);
      for (std::size_t k = 0; k < columns.size(); ++k) row[k] = static_cast<T>(src[columns[k]]);
    }
  return out;
}

template <typename T>
TokenizerIds add_tokenizer(nn::ParamStore<T>& ps, const ModalitySpec& m, Multispectral flavor,
                           std::size_t encoder_width, std::size_t decoder_width, Rng& rng) {
  TokenizerIds ids;
  const auto streams = stream_columns(m, flavor);
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const std::string suffix = streams.size() == 1 ? "" : "." + std::to_string(s);
    ids.embed.push_back(nn::add_linear(ps, "tok." + m.name + ".embed" + suffix, streams[s].size(), encoder_width, rng));
  }
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const std::string suffix = streams.size() == 1 ? "" : "." + std::to_string(s);
    ids.project.push_back(
        nn::add_linear(ps, "tok." + m.name + ".project" + suffix, decoder_width, streams[s].size(), rng));
  }
  nn::Matrix<T> mask(1, decoder_width);
  nn::normal_init(mask, rng, 0.02);
  ids.mask_token = ps.add("tok." + m.name + ".mask_token", std::move(mask));
  return ids;
}

template <typename T>
nn::Var embed(nn::Graph<T>& g, const std::vector<nn::Matrix<T>>& streams, const TokenizerIds& ids) {
  if (streams.size() != ids.embed.size()) throw ValidationError("embed: stream count does not match tokenizer");
  std::vector<nn::Var> tokens;
  for (std::size_t s = 0; s < streams.size(); ++s) tokens.push_back(nn::linear(g, g.constant(streams[s]), ids.embed[s]));
  if (tokens.size() == 1) return tokens[0];
  const std::size_t rows = streams[0].rows;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> picks;
  picks.reserve(rows * tokens.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t s = 0; s < tokens.size(); ++s)
      picks.emplace_back(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r));
  return g.pick_rows(tokens, std::move(picks));
}

template <typename T>
std::vector<nn::Var> project_out(nn::Graph<T>& g, nn::Var decoded, const TokenizerIds& ids) {
  const std::size_t streams = ids.project.size();
  if (g.rows(decoded) % streams) throw ValidationError("project_out: token count not a multiple of streams");
  std::vector<nn::Var> out;
  if (streams == 1) {
    out.push_back(nn::linear(g, decoded, ids.project[0]));
    return out;
  }
  const std::size_t rows = g.rows(decoded) / streams;
  for (std::size_t s = 0; s < streams; ++s) {
    std::vector<std::uint32_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) idx[r] = static_cast<std::uint32_t>(r * streams + s);
    out.push_back(nn::linear(g, g.gather_rows(decoded, std::move(idx)), ids.project[s]));
  }
  return out;
}

PatchGrid streams_to_grid(const std::vector<nn::Matrix<float>>& streams, const ModalitySpec& m, Multispectral flavor,
                          std::size_t bins) {
  const auto cols = stream_columns(m, flavor);
  if (cols.size() != streams.size()) throw ValidationError("streams_to_grid: stream count mismatch");
  const std::size_t n = m.num_positions();
  PatchGrid grid;
  grid.patch_size = m.patch_size;
  grid.channels = m.channels;
  grid.modality = m.name;
  grid.patches = TensorF({n, bins, m.patch_dim()});
  for (std::size_t s = 0; s < cols.size(); ++s) {
    if (streams[s].rows != bins * n || streams[s].cols != cols[s].size()) {
      throw ValidationError("streams_to_grid: stream shape mismatch");
    }
    for (std::size_t d = 0; d < bins; ++d)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < cols[s].size(); ++k)
          grid.patches.at({p, d, cols[s][k]}) = streams[s](d * n + p, k);
  }
  return grid;
}

template nn::Matrix<float> stream_matrix<float>(const PatchGrid&, const std::vector<std::size_t>&);
template nn::Matrix<double> stream_matrix<double>(const PatchGrid&, const std::vector<std::size_t>&);
template TokenizerIds add_tokenizer<float>(nn::ParamStore<float>&, const ModalitySpec&, Multispectral, std::size_t,
                                           std::size_t, Rng&);
template TokenizerIds add_tokenizer<double>(nn::ParamStore<double>&, const ModalitySpec&, Multispectral, std::size_t,
                                            std::size_t, Rng&);
template nn::Var embed<float>(nn::Graph<float>&, const std::vector<nn::Matrix<float>>&, const TokenizerIds&);
template nn::Var embed<double>(nn::Graph<double>&, const std::vector<nn::Matrix<double>>&, const TokenizerIds&);
template std::vector<nn::Var> project_out<float>(nn::Graph<float>&, nn::Var, const TokenizerIds&);
template std::vector<nn::Var> project_out<double>(nn::Graph<double>&, nn::Var, const TokenizerIds&);

}  // namespace maestro
