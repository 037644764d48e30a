#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "maestro/rng.hpp"
#include "maestro/spec.hpp"

namespace maestro {

// Token placement of one active modality in the global token index.
struct ModalitySlot {
  std::size_t modality = 0;  // index into DatasetSpec::modalities
  std::size_t positions = 0;
  std::size_t bins = 0;
  std::size_t streams = 1;  // band groups for token-based, else 1
  std::size_t offset = 0;

  std::size_t count() const { return positions * bins * streams; }
  std::size_t slab_size() const { return positions * streams; }
  // Order within a modality: bin, then position, then stream.
  std::size_t index(std::size_t bin, std::size_t pos, std::size_t stream) const {
    return offset + (bin * positions + pos) * streams + stream;
  }
};

struct TokenLayout {
  std::vector<ModalitySlot> slots;
  std::size_t total = 0;

  static TokenLayout build(const DatasetSpec& ds, Multispectral flavor);
  // Slot index owning a global token.
  std::size_t slot_of(std::size_t token) const;
};

struct MaskPlan {
  std::vector<std::uint8_t> masked;      // per global token, final
  std::vector<std::uint8_t> structured;  // per global token, before adjustment
  std::size_t total = 0;
  std::size_t masked_count = 0;
};

// A token is masked when its modality, its (modality, position) or its
// (modality, bin) is drawn. Draw order is modality, positions, bins per slot.
std::vector<std::uint8_t> structured_mask(const TokenLayout& layout, const StructuredProbs& probs, Rng& rng);

// Randomly masks or unmasks tokens until exactly nint(ratio * N) are masked.
MaskPlan adjust_to_ratio(std::vector<std::uint8_t> mask, double ratio, Rng& rng);

MaskPlan sample_mask(const TokenLayout& layout, const FusionConfig& fusion, Rng& structured_rng, Rng& adjust_rng);

// Empirical masking frequencies over many seeded plans.
struct MaskAuditRow {
  std::string stage;  // "structured" or "final"
  std::string axis;   // "modality", "position", "bin" or "overall"
  std::string modality;
  std::size_t index = 0;
  double masked_fraction = 0.0;
};

std::vector<MaskAuditRow> audit_masks(const DatasetSpec& ds, const FusionConfig& fusion, std::uint64_t seed,
                                      std::size_t plans);
void write_audit_csv(std::ostream& os, const std::vector<MaskAuditRow>& rows);

}  // namespace maestro
