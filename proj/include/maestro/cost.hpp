#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/spec.hpp"

namespace maestro {

struct CostTerm {
  std::string name;
  double macs = 0.0;
};

struct CostReport {
  std::string phase;  // "pretrain" or "transfer"
  std::vector<CostTerm> terms;
  double total_macs = 0.0;
  double total_flops() const { return 2.0 * total_macs; }
  double term(const std::string& name) const;
};

// Multiplies of one pre-norm block on L tokens of width C.
inline double block_macs(double tokens, double width) {
  return 12.0 * tokens * width * width + 2.0 * tokens * tokens * width;
}

// Masked pretraining forward: encoder on nint((1 - M) L) tokens per encoder
// sequence, decoder on all L tokens, plus tokenizer projections.
CostReport pretrain_cost(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims);
// Unmasked forward with the task head of ds.task.
CostReport transfer_cost(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims);

nlohmann::json cost_to_json(const CostReport& report);
void write_cost_csv(std::ostream& os, const CostReport& report);

}  // namespace maestro
