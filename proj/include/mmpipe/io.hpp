// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON documents for every file artifact. Each document carries a
// "schema_version" of the form "mmpipe.<kind>/<n>"; readers reject other
// kinds and unknown versions with ParseError.

#pragma once

#include <string>
#include <vector>

#include "mmpipe/cost_model.hpp"
#include "mmpipe/partitioner.hpp"
#include "mmpipe/plan.hpp"
#include "mmpipe/scheduler.hpp"
#include "mmpipe/search.hpp"
#include "mmpipe/workload.hpp"

namespace mmpipe {

std::string batch_to_json(const BatchMeta& batch);
BatchMeta batch_from_json(const std::string& text);

std::string distribution_to_json(const DistributionSpec& dist);
DistributionSpec distribution_from_json(const std::string& text);

std::string model_to_json(const ModelPreset& preset);
ModelPreset model_from_json(const std::string& text);

std::string device_to_json(const DeviceSpec& device);
DeviceSpec device_from_json(const std::string& text);

std::string overrides_to_json(const CostOverride& overrides);
CostOverride overrides_from_json(const std::string& text);

std::string segment_plan_to_json(const ModelSpec& model, const SegmentPlan& plan);
SegmentPlan segment_plan_from_json(const std::string& text);

/// Per-rank stage records (segment, start, end, strategy) and the makespan.
std::string schedule_to_json(const ScheduleProblem& problem, const Schedule& schedule);

std::string plan_to_json(const ExecutionPlan& plan);
ExecutionPlan plan_from_json(const std::string& text);

/// Best-so-far trace as CSV: elapsed_ms,best_makespan_s (plus rollout).
std::string trace_csv(const std::vector<TracePoint>& trace);

/// Search summary without the full schedule.
std::string report_to_json(const SearchReport& report);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace mmpipe
