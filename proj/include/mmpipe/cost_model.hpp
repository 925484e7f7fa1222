// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Transformer-layer cost model and the memoized stage cost table.
//
// Per layer, for a sub-microbatch of s tokens split into sequences of
// lengths l_j (sum_sq = sum l_j^2), hidden h, FFN f, H heads, g KV groups:
//
//   forward FLOPs = [ 2*s*h*(h + 2*h*g/H + h)     QKV + output projections
//                   + 3*2*s*h*f                   gated FFN
//                   + 4*h*sum_sq ] / TP           attention scores + context
//   backward FLOPs = 2 * forward FLOPs
//   parameters     = h*(h + 2*h*g/H + h) + 3*h*f
//
// Held activation bytes per layer are c_act*s*h/TP without recomputation,
// c_bnd*s*h/TP (the layer input) under checkpointing, and 0 under offload,
// where every held byte is copied to host in forward and back in backward.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmpipe/common.hpp"
#include "mmpipe/model.hpp"
#include "mmpipe/simulator.hpp"

namespace mmpipe {

/// Workload handed to one stage: how many instances and tokens, and the sum
/// of squared sequence lengths that drives attention cost.
struct WorkShape {
  int64_t instances = 0;
  int64_t tokens = 0;
  int64_t sum_sq = 0;

  static WorkShape sequence(int64_t tokens);
  static WorkShape instances_of(int64_t n, int64_t tokens_per_instance);
  friend bool operator==(const WorkShape&, const WorkShape&) = default;
};

struct CostModelConfig {
  double activation_bytes_per_element = 34;  // c_act
  double boundary_bytes_per_element = 2;     // c_bnd, BF16 hidden states
  double bytes_per_param = 2;                // weights read per pass
  double state_bytes_per_param = 16;         // weights + grads + optimizer
  // Fixed launch/synchronisation cost per stage, both directions.
  double stage_overhead_s = 250e-6;
  bool tp_communication = true;
};

/// Per-layer seconds keyed by (module name, direction), bypassing the
/// analytic FLOP/byte model.
struct CostOverride {
  std::map<std::pair<std::string, Direction>, double> per_layer_s;

  std::optional<double> get(const std::string& module, Direction d) const;
  bool empty() const { return per_layer_s.empty(); }
};

struct CostContext {
  ModelSpec model;
  ParallelConfig parallel;
  DeviceSpec device;
  CostModelConfig config;
  CostOverride overrides;
};

// Device ids used inside stage graphs.
inline constexpr int kGpuDevice = 0;
inline constexpr int kLinkDevice = 1;
inline constexpr int kCpuDevice = 2;

std::map<int, DeviceSpec> stage_devices(const CostContext& ctx);

double layer_forward_flops(const ModalityModuleSpec& m, const WorkShape& w, int tp);
int64_t layer_param_count(const ModalityModuleSpec& m);
int64_t layer_held_bytes(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w,
                         LayerStrategy s);
/// Hidden-state bytes crossing a stage boundary (P2P message size).
int64_t boundary_bytes(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w);

/// Operator/tensor DAG for one stage. `per_layer` has either one entry
/// (applied to all layers) or one per layer. Throws EmptyStage.
SimGraph build_stage_graph(const CostContext& ctx, const Chunk& chunk, const WorkShape& w,
                           std::span<const LayerStrategy> per_layer, Direction dir);

struct LayerCost {
  double fw_s = 0;
  double bw_s = 0;
  int64_t held_bytes = 0;
};

struct StageCost {
  int chunk = -1;
  WorkShape shape;
  LayerStrategy strategy = LayerStrategy::None;
  double fw_s = 0;
  double bw_s = 0;
  int64_t activation_bytes = 0;  // held between forward start and backward end
  int64_t param_bytes = 0;
  int64_t boundary_bytes = 0;
  double fw_flops = 0;
  double overhead_s = 0;  // included once in fw_s and once in bw_s
  // Per layer, per LayerStrategy (indexed by its enum value).
  std::vector<std::array<LayerCost, kNumLayerStrategies>> layers;
};

StageCost compute_stage_cost(const CostContext& ctx, const Chunk& chunk, const WorkShape& w,
                             LayerStrategy strategy);

/// Whole-module forward+backward seconds when split into `num_chunks`
/// stages (each paying the stage overhead twice).
double module_latency(const CostContext& ctx, int module, const WorkShape& w, int num_chunks);

/// Bytes of model state resident on each rank.
std::vector<int64_t> static_memory_per_rank(const CostContext& ctx, const ChunkPlacement& placement);

/// Read-mostly memo of stage costs, safe for concurrent readers.
class StageCostTable {
 public:
  StageCostTable(std::shared_ptr<const CostContext> ctx, ChunkPlacement placement);

  const StageCost& get(int chunk, const WorkShape& w, LayerStrategy strategy = LayerStrategy::None) const;
  size_t size() const;
  const CostContext& context() const { return *ctx_; }
  const ChunkPlacement& placement() const { return placement_; }

 private:
  struct Key {
    int chunk;
    int64_t instances, tokens, sum_sq;
    int strategy;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    size_t operator()(const Key& k) const noexcept;
  };

  std::shared_ptr<const CostContext> ctx_;
  ChunkPlacement placement_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<Key, std::unique_ptr<StageCost>, KeyHash> cache_;
};

}  // namespace mmpipe
