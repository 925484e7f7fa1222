// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Modality-aware partitioning: sub-microbatch sizes B_i, segment counts
// K_i = floor(T_i / T_1), layer chunking into P*K_i chunks and the online
// split of each microbatch into M_i = ceil(N_i / B_i) sub-microbatches.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmpipe/cost_model.hpp"
#include "mmpipe/model.hpp"
#include "mmpipe/workload.hpp"

namespace mmpipe {

struct EfficiencyPoint {
  int64_t size = 0;       // instances, or tokens for token-stream modules
  double latency_s = 0;   // whole-module forward+backward
  double throughput = 0;  // size / latency_s
};

/// Workload units of a module: instances for instance-based modules, the
/// whole packed sequence for the backbone, own tokens otherwise.
enum class UnitKind { Instances, Tokens };
UnitKind module_unit_kind(const ModelSpec& model, int module);

/// Stage workload for `units` units of `module`, with `sequences` equal-length
/// attention sequences for token-stream modules.
WorkShape module_shape(const ModelSpec& model, int module, int64_t units, int64_t sequences = 1);

std::vector<EfficiencyPoint> efficiency_curve(const CostContext& ctx, int module,
                                              std::span<const int64_t> sizes, int num_chunks);

/// Smallest size whose throughput reaches `threshold` x the best tested.
int64_t select_submb_size(std::span<const EfficiencyPoint> curve, double threshold = 0.95);

/// K_i = floor(T_i / T_1) for ascending T. Throws EmptyInput.
std::vector<int> segment_counts(std::span<const double> sorted_latencies);

/// P*K_i consecutive chunks per module; the first L_i mod (P*K_i) chunks get
/// an extra layer; chunk (module, k, rank) holds range k*P + rank.
ChunkPlacement partition_chunks(const ModelSpec& model, int P, std::span<const int> K);

/// Sizes ceil(n/M) or floor(n/M), larger first, M = ceil(n/B). Empty for n = 0.
std::vector<int64_t> balanced_split(int64_t n, int64_t B);

struct SubMicrobatchConfig {
  // B_i per module (index-aligned with ModelSpec::modules).
  std::vector<int64_t> size;
};

struct SegmentPlan {
  std::vector<int> K;       // per module
  std::vector<double> T;    // per module, reference latency at B_i
  std::vector<int> order;   // modules sorted by ascending T
  SubMicrobatchConfig submb;
  ChunkPlacement placement;
};

/// Offline phase: T_i at B_i, K_i, and the chunk placement. When
/// `fixed_K` is non-empty it replaces the derived counts.
SegmentPlan make_segment_plan(const CostContext& ctx, const SubMicrobatchConfig& cfg,
                              std::span<const int> fixed_K = {});

/// Default B_i: profiled for instance modules over `sizes` (when given),
/// the full context for token-stream modules.
SubMicrobatchConfig default_submb_config(const CostContext& ctx, std::span<const int64_t> sizes = {});

struct SubMicrobatch {
  int module = 0;
  int microbatch = 0;
  int index = 0;
  int64_t units = 0;
  WorkShape shape;
};

/// N_i of `module` in `mb`.
int64_t module_units(const ModelSpec& model, int module, const MicrobatchMeta& mb);

std::vector<SubMicrobatch> build_submicrobatches(const ModelSpec& model, const MicrobatchMeta& mb,
                                                 int microbatch_index, const SubMicrobatchConfig& cfg);

}  // namespace mmpipe
