// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-iteration planning loop: sub-microbatches, segment graph, budgeted
// parallel MCTS, and the best schedule found.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmpipe/scheduler.hpp"

namespace mmpipe {

struct SearchBudget {
  double wall_clock_ms = 1000;
  int workers = 1;
  std::optional<int64_t> max_rollouts;
  uint64_t seed = 0;

  /// Budget with workers capped at half the available cores.
  static SearchBudget automatic(double wall_clock_ms, uint64_t seed = 0);
};

void validate_budget(const SearchBudget& budget);

struct SearchOptions {
  double alpha = 1.0;
  double beta = 1.4;
  int rollouts_per_expand = 10;
  double gap = 0.05;
  bool optimize_memory = true;
  ProblemOptions problem;
};

struct SearchReport {
  std::shared_ptr<const ScheduleProblem> problem;
  Schedule schedule;
  std::vector<int> sequence;  // class priority order of `schedule`
  std::vector<TracePoint> trace;
  int64_t rollouts = 0;
  int64_t evaluations = 0;
  size_t tree_size = 0;
  bool budget_exhausted = false;
  bool exhausted = false;  // search space fully enumerated
  bool fallback = false;   // no rollout completed; canonical order returned
  double makespan = 0;
};

/// Searches one iteration's schedule. Throws Infeasible when even the most
/// memory-efficient strategies cannot be scheduled.
SearchReport plan_iteration(const StageCostTable& table, const SegmentPlan& plan, const BatchMeta& batch,
                            const SearchBudget& budget, const SearchOptions& options = {});

/// Same search on a prepared problem.
SearchReport search_problem(std::shared_ptr<const ScheduleProblem> problem, const SearchBudget& budget,
                            const SearchOptions& options = {});

enum class Explorer { Mcts, Dfs, Random };
const char* to_string(Explorer e);
Explorer explorer_from_string(const std::string& s);

/// Runs each explorer on the same problem, evaluator and rollout budget.
std::map<Explorer, SearchResult> compare_explorers(const ScheduleProblem& problem, const SearchBudget& budget,
                                                   const std::vector<Explorer>& explorers,
                                                   const SearchOptions& options = {});

/// Plans each batch with one iteration of lookahead: the search for batch
/// k+1 runs while `consume` handles report k. Reports are delivered in order.
std::vector<SearchReport> pipeline_ahead(const StageCostTable& table, const SegmentPlan& plan,
                                         const std::vector<BatchMeta>& batches, const SearchBudget& budget,
                                         const SearchOptions& options = {},
                                         const std::function<void(size_t, const SearchReport&)>& consume = {});

}  // namespace mmpipe
