// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline schedule search: the segment/stage dependency graph, dual-queue
// stage interleaving, per-layer memory strategy selection, MCTS over
// segment-class priorities, baseline schedulers and a brute-force oracle.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmpipe/common.hpp"
#include "mmpipe/cost_model.hpp"
#include "mmpipe/partitioner.hpp"
#include "mmpipe/simulator.hpp"
#include "mmpipe/workload.hpp"

namespace mmpipe {

// ---------------------------------------------------------------------------
// Problem

/// One forward or backward pass of a sub-microbatch through one layer group
/// (depth k) of a module, across all ranks.
struct PipelineSegment {
  int id = 0;
  int module = 0;
  int microbatch = 0;
  int submb = 0;
  int depth = 0;
  Direction dir = Direction::Forward;
  int cls = 0;    // equivalence class: (microbatch, module, direction)
  int twin = -1;  // segment id of the opposite direction
  WorkShape shape;
};

struct StageEdge {
  int stage = 0;
  double latency_s = 0;  // message transfer before the consumer may start
  int64_t bytes = 0;     // message size; 0 for same-rank edges
};

/// One rank's share of a segment.
struct StageTask {
  int id = 0;
  int segment = 0;
  int rank = 0;
  int chunk = -1;
  Direction dir = Direction::Forward;
  int pair = 0;  // index into ScheduleProblem::pairs, shared with the twin
  std::vector<StageEdge> preds;
  std::vector<int> succs;
};

/// Latency/memory trade-off for one stage pair.
struct MemoryOption {
  double fw_s = 0;
  double bw_s = 0;
  int64_t bytes = 0;  // held from forward start to backward end
  std::vector<LayerStrategy> layers;

  double latency() const { return fw_s + bw_s; }
};

struct StagePair {
  int fw = 0;
  int bw = 0;
  int rank = 0;
  // Sorted by bytes ascending: options[0] is the most memory-efficient,
  // options.back() the fastest.
  std::vector<MemoryOption> options;
};

struct ScheduleProblem {
  int num_ranks = 1;
  std::vector<PipelineSegment> segments;
  std::vector<StageTask> stages;
  std::vector<StagePair> pairs;
  std::vector<int64_t> capacity;  // activation bytes available per rank
  int num_classes = 0;
  std::vector<int> class_module;     // per class
  std::vector<int> class_microbatch;  // per class
  std::vector<Direction> class_dir;  // per class
  std::vector<int> canonical_order;  // classes, highest priority first
  std::vector<std::string> module_names;
  std::vector<ModuleRole> module_roles;

  double latency(int stage, int option) const;
  int64_t activation(int stage, int option) const;
};

struct ProblemOptions {
  int max_candidates = 10;               // S
  int64_t quantum_bytes = int64_t{64} << 20;
  bool memory_options = true;            // false: no-recompute option only
  std::optional<int64_t> memory_bytes;   // overrides the device capacity
};

/// Segments and stages for one iteration under the modality-aware plan.
ScheduleProblem build_problem(const StageCostTable& table, const SegmentPlan& plan, const BatchMeta& batch,
                              const ProblemOptions& opts = {});

/// Classic contiguous split of the concatenated layer chain across ranks,
/// one chunk per rank (Megatron-style partitioning of a multimodal model).
struct ClassicRange {
  int module = 0;
  int lo = 0;
  int hi = 0;
};
using ClassicPartition = std::vector<std::vector<ClassicRange>>;  // per rank

/// Split minimising the slowest stage, ties broken by maximising the
/// fastest; `layer_costs` is the per-layer cost of the chain. Returns P+1
/// boundaries.
std::vector<int> best_contiguous_split(std::span<const double> layer_costs, int P);

/// Chain split of the model's modules balanced for `reference` workloads
/// (one WorkShape per module).
ClassicPartition classic_partition(const CostContext& ctx, std::span<const WorkShape> reference);

ScheduleProblem build_classic_problem(const CostContext& ctx, const ClassicPartition& partition,
                                      const BatchMeta& batch, const ProblemOptions& opts = {});

/// Workload of a whole microbatch for each module.
std::vector<WorkShape> microbatch_shapes(const ModelSpec& model, const MicrobatchMeta& mb);

/// Homogeneous single-module instance with fixed per-rank stage times.
ScheduleProblem uniform_problem(int P, int microbatches, std::span<const double> fw_s,
                                std::span<const double> bw_s, int64_t activation_bytes = 1,
                                int64_t capacity = std::numeric_limits<int64_t>::max() / 4);

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  std::vector<std::vector<int>> order;  // per rank, stage ids in execution order
  std::vector<double> start;            // per stage
  std::vector<double> end;              // per stage
  std::vector<int> option;              // per pair
  double makespan = 0;
};

double makespan(const Schedule& schedule);

/// Earliest start times for fixed per-rank orders and options.
Schedule retime(const ScheduleProblem& problem, std::vector<std::vector<int>> order, std::vector<int> option);

/// Violations of non-overlap, dependencies, latencies and memory; empty when valid.
std::vector<std::string> validate_schedule(const ScheduleProblem& problem, const Schedule& schedule);

/// Activation bytes live on `rank` as a step function over time.
std::vector<MemoryPoint> memory_timeline(const ScheduleProblem& problem, const Schedule& schedule, int rank);
int64_t peak_memory(const ScheduleProblem& problem, const Schedule& schedule);

/// Priority of each class given a class sequence (first = highest).
std::vector<int> class_priorities(const ScheduleProblem& problem, std::span<const int> sequence);

/// Dual-queue greedy interleaving using each pair's option in `option`
/// (default: the most memory-efficient). Throws Deadlock.
Schedule interleave_stages(const ScheduleProblem& problem, std::span<const int> class_sequence,
                           std::optional<std::vector<int>> option = std::nullopt);

// ---------------------------------------------------------------------------
// Memory strategies

struct LayerOption {
  double latency_s = 0;
  int64_t bytes = 0;
};

struct Candidate {
  double latency_s = 0;
  int64_t bytes = 0;
  std::vector<int> choice;  // per layer, index into that layer's options
};

/// At most S candidates: the fastest, the most memory-efficient and the
/// best of each of S-2 memory buckets in between; dominated entries are
/// dropped. Sorted by bytes ascending (latency strictly decreasing).
std::vector<Candidate> generate_candidates(const std::vector<std::vector<LayerOption>>& layers, int S,
                                           int64_t quantum_bytes = int64_t{64} << 20);

/// Multiple-choice selection with memory constraints: pick one option per
/// pair minimising total latency so that every constraint's pairs fit.
struct MemoryIlp {
  std::vector<std::vector<LayerOption>> options;  // per pair
  std::vector<std::vector<int>> constraints;      // pairs live together
  int64_t capacity = 0;
};

struct MemoryIlpResult {
  std::vector<int> choice;
  double objective = 0;
  double lower_bound = 0;
  int64_t nodes = 0;
  bool optimal_within_gap = true;
};

/// Branch and bound with a greedy warm start. Throws Infeasible.
MemoryIlpResult solve_memory_ilp(const MemoryIlp& ilp, double gap = 0.05, int64_t node_limit = 200000);

/// The ILP instance of one rank for a fixed stage order.
MemoryIlp rank_memory_ilp(const ScheduleProblem& problem, const Schedule& schedule, int rank,
                          std::vector<int>* pair_ids = nullptr);

/// Re-selects every pair's option per rank, then retimes.
Schedule optimize_memory(const ScheduleProblem& problem, const Schedule& schedule, double gap = 0.05);

// ---------------------------------------------------------------------------
// MCTS over class priority sequences

enum class Objective { Minimize, Maximize };

/// Makespan of a class sequence, or nullopt when infeasible.
using SequenceEvaluator = std::function<std::optional<double>(const std::vector<int>&)>;

struct MctsConfig {
  double alpha = 1.0;
  double beta = 1.4;
  int rollouts_per_expand = 10;
  uint64_t seed = 0;
  int workers = 1;
  std::optional<int64_t> max_rollouts;
  double wall_clock_ms = 1000;
  Objective objective = Objective::Minimize;
};

struct TracePoint {
  int64_t rollout = 0;
  double elapsed_ms = 0;
  double best = 0;  // best makespan so far
};

struct SearchResult {
  std::vector<int> best_sequence;
  double best_value = 0;
  int64_t rollouts = 0;
  int64_t evaluations = 0;
  size_t tree_size = 0;
  bool exhausted = false;
  bool budget_exhausted = false;
  std::vector<TracePoint> trace;
};

/// `reference` is the canonical sequence, used for score normalisation and
/// as the fallback answer.
SearchResult mcts_reorder(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                          std::vector<int> reference);

/// Depth-first enumeration (seed-shuffled child order) and uniform random
/// sampling under the same rollout accounting.
SearchResult dfs_explore(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                         std::vector<int> reference);
SearchResult random_explore(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                            std::vector<int> reference);

/// Makespan of interleave (+ optional memory optimisation) for a sequence.
SequenceEvaluator dip_evaluator(const ScheduleProblem& problem, bool optimize = true);

/// Full pipeline for one sequence.
Schedule dip_schedule(const ScheduleProblem& problem, std::span<const int> sequence, bool optimize = true);

// ---------------------------------------------------------------------------
// Baselines and oracle

/// Canonical 1F1B on a problem with one forward segment per microbatch.
Schedule schedule_1f1b(const ScheduleProblem& problem, std::optional<std::vector<int>> option = std::nullopt);

/// All encoder forwards of a rank before any backbone forward, without
/// memory gating.
Schedule schedule_encoder_first(const ScheduleProblem& problem,
                                std::optional<std::vector<int>> option = std::nullopt);

inline constexpr int kBruteForceStageLimit = 16;

/// Minimal makespan over all per-rank orders (memory-feasible, each pair
/// at `option`). Throws TooLarge above kBruteForceStageLimit stages.
Schedule brute_force_schedule(const ScheduleProblem& problem, std::optional<std::vector<int>> option = std::nullopt);

}  // namespace mmpipe
