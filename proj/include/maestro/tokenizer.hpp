#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "maestro/layers.hpp"
#include "maestro/spec.hpp"
#include "maestro/tensor.hpp"

namespace maestro {

// Flattened patches of one modality: [positions, bins, P*P*C]. Within a patch
// the order is channel-major, then row, then column.
struct PatchGrid {
  TensorF patches;
  std::size_t patch_size = 1;
  std::size_t channels = 1;
  std::string modality;

  std::size_t positions() const { return patches.dim(0); }
  std::size_t bins() const { return patches.dim(1); }
  std::size_t patch_dim() const { return patches.dim(2); }
};

// image: [D, C, I, I]
PatchGrid patchify(const TensorF& image, std::size_t patch_size);
// Inverse of patchify. Throws ValidationError on inconsistent shapes.
TensorF unpatchify(const TensorF& patches, std::size_t patch_size, std::size_t channels);
inline TensorF unpatchify(const PatchGrid& grid) { return unpatchify(grid.patches, grid.patch_size, grid.channels); }

// Column indices of the band-group slice within a flattened patch.
std::vector<std::size_t> group_columns(const ModalitySpec& m, std::size_t group);

// Token streams of a modality: one stream for joint-token, one per band group
// for token-based. Each stream has bins * positions rows (bin-major).
std::vector<std::vector<std::size_t>> stream_columns(const ModalitySpec& m, Multispectral flavor);

// Rows = bins * positions (bin-major), columns = the given patch columns.
template <typename T>
nn::Matrix<T> stream_matrix(const PatchGrid& grid, const std::vector<std::size_t>& columns);

// Parameters of one modality's tokenizer.
struct TokenizerIds {
  std::vector<nn::LinearIds> embed;    // per stream, [stream width -> C_e]
  std::vector<nn::LinearIds> project;  // per stream, [C_d -> stream width]
  std::size_t mask_token = 0;          // [1, C_d]
};

template <typename T>
TokenizerIds add_tokenizer(nn::ParamStore<T>& ps, const ModalitySpec& m, Multispectral flavor,
                           std::size_t encoder_width, std::size_t decoder_width, Rng& rng);

// Token order within a modality is (bin, position, stream). Returns
// [bins * positions * streams, C_e].
template <typename T>
nn::Var embed(nn::Graph<T>& g, const std::vector<nn::Matrix<T>>& streams, const TokenizerIds& ids);

// Inverse routing of embed: decoded tokens [bins * positions * streams, C_d]
// to one reconstruction per stream [bins * positions, stream width].
template <typename T>
std::vector<nn::Var> project_out(nn::Graph<T>& g, nn::Var decoded, const TokenizerIds& ids);

// Maps reconstructed streams back into a PatchGrid (for inspection).
PatchGrid streams_to_grid(const std::vector<nn::Matrix<float>>& streams, const ModalitySpec& m, Multispectral flavor,
                          std::size_t bins);

}  // namespace maestro
