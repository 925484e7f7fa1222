// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/common.hpp"

#include "mmpipe/errors.hpp"

namespace mmpipe {

const char* to_string(Direction d) { return d == Direction::Forward ? "fw" : "bw"; }

const char* to_string(LayerStrategy s) {
  switch (s) {
    case LayerStrategy::None: return "none";
    case LayerStrategy::Checkpoint: return "checkpoint";
    case LayerStrategy::Offload: return "offload";
  }
  return "?";
}

Direction direction_from_string(const std::string& s) {
  if (s == "fw" || s == "forward") return Direction::Forward;
  if (s == "bw" || s == "backward") return Direction::Backward;
  throw ParseError("unknown direction '" + s + "'");
}

LayerStrategy layer_strategy_from_string(const std::string& s) {
  if (s == "none") return LayerStrategy::None;
  if (s == "checkpoint") return LayerStrategy::Checkpoint;
  if (s == "offload") return LayerStrategy::Offload;
  throw ParseError("unknown layer strategy '" + s + "'");
}

}  // namespace mmpipe
