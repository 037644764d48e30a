#include "maestro/cost.hpp"

#include <iomanip>

#include "maestro/errors.hpp"
#include "maestro/router.hpp"

namespace maestro {

double CostReport::term(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return t.macs;
  return 0.0;
}

namespace {

struct Tokens {
  std::vector<double> sequence_lengths;
  double all = 0.0;
  double pixel_volume = 0.0;  // sum over modalities of I^2 * D * C
  RoutingPlan plan;
};

Tokens tokens_of(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims) {
  Tokens t;
  t.plan = build_routing(ds, fusion, dims);
  for (std::size_t len : t.plan.lengths()) t.sequence_lengths.push_back(static_cast<double>(len));
  for (double l : t.sequence_lengths) t.all += l;
  if (t.all == 0.0) throw ValidationError("cost model: empty model (no tokens)");
  for (std::size_t i : ds.active_modalities()) {
    const auto& m = ds.modalities[i];
    t.pixel_volume += static_cast<double>(m.image_size * m.image_size * m.temporal_bins * m.channels);
  }
  return t;
}

double encoder_macs(const Tokens& t, const std::vector<double>& lengths, const ModelDims& dims) {
  const double ce = static_cast<double>(dims.encoder_width);
  const std::size_t per_set = t.plan.fusion_boundary.value_or(dims.encoder_depth);
  double macs = 0.0, fused = 0.0;
  for (double l : lengths) {
    macs += block_macs(l, ce) * static_cast<double>(per_set);
    fused += l;
  }
  if (t.plan.fusion_boundary) macs += block_macs(fused, ce) * static_cast<double>(dims.encoder_depth - per_set);
  return macs;
}

CostReport finish(std::string phase, std::vector<CostTerm> terms) {
  CostReport r;
  r.phase = std::move(phase);
  r.terms = std::move(terms);
  for (const auto& t : r.terms) r.total_macs += t.macs;
  return r;
}

}  // namespace

CostReport pretrain_cost(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims) {
  const Tokens t = tokens_of(ds, fusion, dims);
  const double ce = static_cast<double>(dims.encoder_width), cd = static_cast<double>(dims.decoder_width);
  std::vector<double> visible;
  double visible_total = 0.0, decoder = 0.0;
  for (double l : t.sequence_lengths) {
    visible.push_back(static_cast<double>(nint((1.0 - fusion.mask_ratio) * l)));
    visible_total += visible.back();
    decoder += block_macs(l, cd) * static_cast<double>(dims.decoder_depth);
  }
  return finish("pretrain", {{"encoder", encoder_macs(t, visible, dims)},
                             {"decoder", decoder},
                             {"enc_to_dec", visible_total * ce * cd},
                             {"patchify", t.pixel_volume * ce},
                             {"unpatchify", t.pixel_volume * cd}});
}

CostReport transfer_cost(const DatasetSpec& ds, const FusionConfig& fusion, const ModelDims& dims) {
  const Tokens t = tokens_of(ds, fusion, dims);
  const double ce = static_cast<double>(dims.encoder_width);
  const double classes = static_cast<double>(ds.num_classes);
  std::vector<CostTerm> terms = {{"encoder", encoder_macs(t, t.sequence_lengths, dims)},
                                 {"attn_pool", 2.0 * t.all * ce}};
  if (ds.task == Task::kClassification) {
    terms.push_back({"proj_cls", ce * classes});
  } else {
    const double ref = static_cast<double>(ds.reference_side());
    terms.push_back({"proj_seg", ref * ref * ce * classes});
  }
  terms.push_back({"patchify", t.pixel_volume * ce});
  return finish("transfer", std::move(terms));
}

nlohmann::json cost_to_json(const CostReport& report) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& t : report.terms) terms[t.name] = t.macs;
  return {{"phase", report.phase},
          {"terms_macs", terms},
          {"total_macs", report.total_macs},
          {"total_flops", report.total_flops()},
          {"total_gmacs", report.total_macs / 1e9},
          {"total_gflops", report.total_flops() / 1e9}};
}

void write_cost_csv(std::ostream& os, const CostReport& report) {
  os << "phase,term,macs,flops\n" << std::setprecision(17);
  for (const auto& t : report.terms) os << report.phase << ',' << t.name << ',' << t.macs << ',' << 2.0 * t.macs << '\n';
  os << report.phase << ",total," << report.total_macs << ',' << report.total_flops() << '\n';
}

}  // namespace maestro
