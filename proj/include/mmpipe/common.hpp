// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>

namespace mmpipe {

enum class Direction { Forward, Backward };

/// Per-layer activation handling between a forward stage and its backward.
enum class LayerStrategy { None, Checkpoint, Offload };
inline constexpr int kNumLayerStrategies = 3;
inline constexpr std::array<LayerStrategy, kNumLayerStrategies> kAllLayerStrategies = {
    LayerStrategy::None, LayerStrategy::Checkpoint, LayerStrategy::Offload};

const char* to_string(Direction d);
const char* to_string(LayerStrategy s);
Direction direction_from_string(const std::string& s);
LayerStrategy layer_strategy_from_string(const std::string& s);

}  // namespace mmpipe
