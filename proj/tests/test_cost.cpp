#include <cmath>
#include <sstream>

#include "doctest.h"
#include "maestro/cost.hpp"
#include "maestro/errors.hpp"

using namespace maestro;

namespace {

DatasetSpec tiny(std::size_t bins = 1) {
  ModalitySpec m;
  m.name = "m";
  m.image_size = 4;
  m.patch_size = 2;
  m.temporal_bins = bins;
  m.channels = 2;
  m.band_groups = {{0, 1}};
  DatasetSpec ds;
  ds.name = "tiny";
  ds.modalities = {m};
  ds.num_classes = 3;
  return ds;
}

ModelDims tiny_dims() {
  return ModelDims{8, 2, 4, 1, 2, 2, 0};
}

FusionConfig mod_half() {
  FusionConfig f;
  f.mode = FusionMode::kMod;
  f.mask_ratio = 0.5;
  return f;
}

double gmacs(const CostReport& r) { return r.total_macs / 1e9; }

}  // namespace

TEST_CASE("block MACs formula") {
  CHECK(block_macs(1, 1) == 14.0);
  CHECK(block_macs(4, 8) == 12.0 * 4 * 64 + 2.0 * 16 * 8);
}

TEST_CASE("hand-computed pretraining cost on a four-token model") {
  // L = 4, visible 2, C_e = 8 over 2 blocks, C_d = 4 over 1 block, 32 pixel values.
  const CostReport r = pretrain_cost(tiny(), mod_half(), tiny_dims());
  CHECK(r.term("encoder") == 2 * (12.0 * 2 * 64 + 2.0 * 4 * 8));
  CHECK(r.term("decoder") == 12.0 * 4 * 16 + 2.0 * 16 * 4);
  CHECK(r.term("enc_to_dec") == 2.0 * 8 * 4);
  CHECK(r.term("patchify") == 32.0 * 8);
  CHECK(r.term("unpatchify") == 32.0 * 4);
  CHECK(r.total_macs == 4544.0);
  CHECK(r.total_flops() == 9088.0);
  CHECK(r.term("missing") == 0.0);
}

TEST_CASE("hand-computed transfer cost, classification and segmentation heads") {
  const CostReport r = transfer_cost(tiny(), mod_half(), tiny_dims());
  CHECK(r.term("encoder") == 2 * (12.0 * 4 * 64 + 2.0 * 16 * 8));
  CHECK(r.term("attn_pool") == 64.0);
  CHECK(r.term("proj_cls") == 24.0);
  CHECK(r.total_macs == 7000.0);

  DatasetSpec seg = tiny();
  seg.task = Task::kSegmentation;
  seg.tile_extent_m = seg.crop_extent_m = 40.0;
  seg.reference_grid_resolution_m = 10.0;
  const CostReport s = transfer_cost(seg, mod_half(), tiny_dims());
  CHECK(s.term("proj_cls") == 0.0);
  CHECK(s.term("proj_seg") == 4.0 * 4 * 8 * 3);
}

TEST_CASE("a zero-class head contributes nothing") {
  DatasetSpec ds = tiny();
  ds.num_classes = 0;
  CHECK(transfer_cost(ds, mod_half(), tiny_dims()).term("proj_cls") == 0.0);
}

TEST_CASE("fusion blocks run once over the concatenated sequences") {
  DatasetSpec ds = tiny();
  ds.modalities.push_back(ds.modalities[0]);
  ds.modalities[1].name = "n";
  FusionConfig f = mod_half();
  f.mode = FusionMode::kInterGroup;
  ModelDims d = tiny_dims();
  d.n_fusion_blocks = 1;
  const CostReport r = transfer_cost(ds, f, d);
  CHECK(r.term("encoder") == 2 * block_macs(4, 8) + block_macs(8, 8));
  f.mode = FusionMode::kGroup;
  CHECK(transfer_cost(ds, f, d).term("encoder") == 4 * block_macs(4, 8));
}

TEST_CASE("an empty model is rejected") {
  DatasetSpec ds = tiny(0);
  CHECK_THROWS_AS(pretrain_cost(ds, mod_half(), tiny_dims()), ValidationError);
  CHECK_THROWS_AS(transfer_cost(ds, mod_half(), tiny_dims()), ValidationError);
}

TEST_CASE("TreeSat reference cells within half a percent") {
  RunSpec run = load_preset("treesatai_ts");
  CHECK(gmacs(pretrain_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(14.3).epsilon(0.005));
  CHECK(gmacs(transfer_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(39.1).epsilon(0.005));
  run.fusion.multispectral = Multispectral::kTokenBased;
  CHECK(gmacs(pretrain_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(33.7).epsilon(0.005));
  CHECK(gmacs(transfer_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(95.0).epsilon(0.005));
}

TEST_CASE("PASTIS and FLAIR reference pretraining cells within half a percent") {
  for (auto [name, joint, token] : {std::tuple{"pastis_hd", 56.1, 173.6}, std::tuple{"flair2", 59.1, 133.9},
                                    std::tuple{"flair_hub", 65.4, 146.9}}) {
    RunSpec run = load_preset(name);
    run.fusion.multispectral = Multispectral::kJointToken;
    CHECK(gmacs(pretrain_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(joint).epsilon(0.005));
    run.fusion.multispectral = Multispectral::kTokenBased;
    CHECK(gmacs(pretrain_cost(run.dataset, run.fusion, run.dims)) == doctest::Approx(token).epsilon(0.005));
  }
}

TEST_CASE("token-based pretraining on TreeSat costs about 2.4 times joint-token") {
  RunSpec run = load_preset("treesatai_ts");
  run.fusion.multispectral = Multispectral::kJointToken;
  const double joint = pretrain_cost(run.dataset, run.fusion, run.dims).total_macs;
  run.fusion.multispectral = Multispectral::kTokenBased;
  const double token = pretrain_cost(run.dataset, run.fusion, run.dims).total_macs;
  CHECK(token / joint == doctest::Approx(2.4).epsilon(0.02));
}

TEST_CASE("JSON and CSV forms agree with the report") {
  const CostReport r = pretrain_cost(tiny(), mod_half(), tiny_dims());
  const auto j = cost_to_json(r);
  CHECK(j["phase"] == "pretrain");
  CHECK(j["total_macs"] == 4544.0);
  CHECK(j["total_flops"] == 9088.0);
  CHECK(j["terms_macs"]["decoder"] == 896.0);
  std::ostringstream os;
  write_cost_csv(os, r);
  CHECK(os.str().rfind("phase,term,macs,flops\n", 0) == 0);
  CHECK(os.str().find("pretrain,total,4544,9088\n") != std::string::npos);
}
