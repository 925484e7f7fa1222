// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Internal helpers shared by the scheduler translation units.

#pragma once

#include <functional>
#include <vector>

#include "mmpipe/scheduler.hpp"

namespace mmpipe::detail {

struct InterleaveHooks {
  bool gate_memory = true;
  // Extra eligibility test for a ready forward stage.
  std::function<bool(int stage)> forward_allowed;
  // Called after each placement.
  std::function<void(int stage)> on_place;
};

/// Dual-queue list scheduling with per-class priorities.
Schedule interleave(const ScheduleProblem& problem, const std::vector<int>& priority, const std::vector<int>& option,
                    const InterleaveHooks& hooks);

std::vector<int> default_options(const ScheduleProblem& problem);

}  // namespace mmpipe::detail
