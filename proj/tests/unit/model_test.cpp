// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "mmpipe/errors.hpp"
#include "mmpipe/model.hpp"

namespace mmpipe {
namespace {

bool has_error(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(),
                     [&](const std::string& e) { return e.find(needle) != std::string::npos; });
}

TEST(Model, PresetsValidate) {
  for (const auto& [name, preset] : builtin_models()) {
    EXPECT_TRUE(validate_model(preset.model).empty()) << name;
  }
}

TEST(Model, VlmSmallDimensions) {
  const auto& p = builtin_model("VLM-S");
  ASSERT_EQ(p.model.modules.size(), 2u);
  const auto& vit = p.model.modules[0];
  const auto& lm = p.model.modules[1];
  EXPECT_EQ(vit.layers, 63);
  EXPECT_EQ(vit.embed_dim, 1792);
  EXPECT_EQ(vit.ffn_dim, 15360);
  EXPECT_EQ(vit.tokens_per_instance, 169);
  EXPECT_EQ(lm.layers, 32);
  EXPECT_EQ(lm.embed_dim, 4096);
  EXPECT_EQ(lm.ffn_dim, 14336);
  EXPECT_EQ(lm.attn_heads, 32);
  EXPECT_EQ(lm.attn_groups, 8);
  EXPECT_EQ(p.parallel.tp, 4);
  EXPECT_EQ(p.parallel.pp, 4);
}

TEST(Model, LargerPresets) {
  const auto& m = builtin_model("VLM-M").model;
  EXPECT_EQ(m.modules[1].layers, 64);
  EXPECT_EQ(m.modules[1].embed_dim, 5120);
  const auto& l = builtin_model("VLM-L");
  EXPECT_EQ(l.model.modules[0].embed_dim, 6144);
  EXPECT_EQ(l.model.modules[1].ffn_dim, 29568);
  EXPECT_EQ(l.parallel.pp, 8);
  EXPECT_EQ(l.parallel.tp, 8);
}

TEST(Model, TextToVideoLarge) {
  const auto& p = builtin_model("T2V-L");
  ASSERT_EQ(p.model.modules.size(), 2u);
  EXPECT_EQ(p.model.modules[0].role, ModuleRole::Encoder);
  EXPECT_EQ(p.model.modules[0].layers, 64);
  EXPECT_EQ(p.model.modules[0].embed_dim, 5120);
  EXPECT_EQ(p.model.modules[1].role, ModuleRole::Decoder);
  EXPECT_EQ(p.model.modules[1].layers, 48);
  EXPECT_EQ(p.model.modules[1].embed_dim, 6144);
  EXPECT_EQ(p.model.modules[1].modality.name, "video");
}

TEST(Model, UnknownPreset) { EXPECT_THROW(builtin_model("VLM-XXL"), NotFound); }

TEST(Model, MultipleBackbones) {
  auto m = builtin_model("VLM-S").model;
  m.modules[0].role = ModuleRole::Backbone;
  EXPECT_TRUE(has_error(validate_model(m), "multiple backbones"));
}

TEST(Model, DanglingEncoder) {
  auto m = builtin_model("VLM-S").model;
  m.edges.clear();
  EXPECT_TRUE(has_error(validate_model(m), "dangling encoder"));
}

TEST(Model, GroupsMustDivideHeads) {
  auto m = builtin_model("VLM-S").model;
  m.modules[1].attn_groups = 5;
  EXPECT_TRUE(has_error(validate_model(m), "divide"));
}

TEST(Model, BackwardEdgeIsACycle) {
  auto m = builtin_model("VLM-S").model;
  m.edges.push_back({1, 0, 0.0});
  EXPECT_TRUE(has_error(validate_model(m), "cycle"));
}

TEST(Device, PresetsValidate) {
  for (const auto& n : builtin_device_names()) EXPECT_TRUE(validate_device(builtin_device(n)).empty()) << n;
  auto d = builtin_device("h800");
  d.alpha_mem = 1.5;
  EXPECT_FALSE(validate_device(d).empty());
  EXPECT_THROW(builtin_device("tpu"), NotFound);
}

TEST(Placement, DetectsGapsAndMisorder) {
  const auto& m = builtin_model("VLM-S").model;
  ChunkPlacement p;
  p.num_ranks = 1;
  p.chunks = {{0, 0, 63, 0, 0}, {1, 0, 31, 0, 0}};
  EXPECT_TRUE(has_error(validate_placement(m, p), "uncovered"));
  p.chunks[1].hi = 32;
  EXPECT_TRUE(validate_placement(m, p).empty());
  p.num_ranks = 2;
  p.chunks = {{0, 0, 30, 0, 1}, {0, 30, 63, 0, 0}, {1, 0, 16, 0, 0}, {1, 16, 32, 0, 1}};
  EXPECT_TRUE(has_error(validate_placement(m, p), "ordered"));
}

}  // namespace
}  // namespace mmpipe
