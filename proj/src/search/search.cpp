// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/search.hpp"

#include <algorithm>
#include <future>
#include <thread>

#include "mmpipe/errors.hpp"

namespace mmpipe {

SearchBudget SearchBudget::automatic(double wall_clock_ms, uint64_t seed) {
  SearchBudget b;
  b.wall_clock_ms = wall_clock_ms;
  b.seed = seed;
  const unsigned cores = std::thread::hardware_concurrency();
  b.workers = std::max(1, static_cast<int>(cores / 2));
  return b;
}

void validate_budget(const SearchBudget& budget) {
  // A non-positive wall clock means "rollout cap only"; one of the two must bound the search.
  if (!(budget.wall_clock_ms > 0) && !budget.max_rollouts) throw InvalidArgument("wall-clock budget must be positive");
  if (budget.workers < 1) throw InvalidArgument("workers must be >= 1");
  if (budget.max_rollouts && *budget.max_rollouts < 0) throw InvalidArgument("max_rollouts must be >= 0");
}

namespace {

MctsConfig mcts_config(const SearchBudget& budget, const SearchOptions& options) {
  MctsConfig cfg;
  cfg.alpha = options.alpha;
  cfg.beta = options.beta;
  cfg.rollouts_per_expand = options.rollouts_per_expand;
  cfg.seed = budget.seed;
  cfg.workers = budget.workers;
  cfg.max_rollouts = budget.max_rollouts;
  cfg.wall_clock_ms = budget.wall_clock_ms;
  return cfg;
}

Schedule schedule_for(const ScheduleProblem& problem, const std::vector<int>& seq, const SearchOptions& options) {
  auto s = interleave_stages(problem, seq);
  if (options.optimize_memory) s = optimize_memory(problem, s, options.gap);
  return s;
}

SequenceEvaluator evaluator_for(const ScheduleProblem& problem, const SearchOptions& options) {
  return [&problem, options](const std::vector<int>& seq) -> std::optional<double> {
    try {
      return schedule_for(problem, seq, options).makespan;
    } catch (const Deadlock&) {
      return std::nullopt;
    } catch (const Infeasible&) {
      return std::nullopt;
    }
  };
}

}  // namespace

SearchReport search_problem(std::shared_ptr<const ScheduleProblem> problem, const SearchBudget& budget,
                            const SearchOptions& options) {
  validate_budget(budget);
  const auto& p = *problem;
  // The canonical order under min-memory options is the feasibility witness.
  try {
    (void)schedule_for(p, p.canonical_order, options);
  } catch (const Deadlock& e) {
    throw Infeasible(std::string("no memory-feasible schedule: ") + e.what());
  }
  const auto res = mcts_reorder(p.num_classes, evaluator_for(p, options), mcts_config(budget, options), p.canonical_order);

  SearchReport rep;
  rep.problem = problem;
  rep.sequence = res.best_sequence;
  rep.schedule = schedule_for(p, rep.sequence, options);
  rep.makespan = rep.schedule.makespan;
  rep.trace = res.trace;
  rep.rollouts = res.rollouts;
  rep.evaluations = res.evaluations;
  rep.tree_size = res.tree_size;
  rep.budget_exhausted = res.budget_exhausted;
  rep.exhausted = res.exhausted;
  rep.fallback = res.rollouts == 0;
  if (rep.trace.empty() || rep.trace.back().best != rep.makespan) {
    rep.trace.push_back({res.rollouts, rep.trace.empty() ? 0.0 : rep.trace.back().elapsed_ms, rep.makespan});
  }
  return rep;
}

SearchReport plan_iteration(const StageCostTable& table, const SegmentPlan& plan, const BatchMeta& batch,
                            const SearchBudget& budget, const SearchOptions& options) {
  validate_budget(budget);
  auto problem = std::make_shared<const ScheduleProblem>(build_problem(table, plan, batch, options.problem));
  return search_problem(std::move(problem), budget, options);
}

const char* to_string(Explorer e) {
  switch (e) {
    case Explorer::Mcts: return "mcts";
    case Explorer::Dfs: return "dfs";
    case Explorer::Random: return "random";
  }
  return "?";
}

Explorer explorer_from_string(const std::string& s) {
  if (s == "mcts") return Explorer::Mcts;
  if (s == "dfs") return Explorer::Dfs;
  if (s == "random") return Explorer::Random;
  throw ParseError("unknown explorer '" + s + "'");
}

std::map<Explorer, SearchResult> compare_explorers(const ScheduleProblem& problem, const SearchBudget& budget,
                                                   const std::vector<Explorer>& explorers,
                                                   const SearchOptions& options) {
  validate_budget(budget);
  const auto eval = evaluator_for(problem, options);
  auto cfg = mcts_config(budget, options);
  std::map<Explorer, SearchResult> out;
  for (Explorer e : explorers) {
    switch (e) {
      case Explorer::Mcts:
        out[e] = mcts_reorder(problem.num_classes, eval, cfg, problem.canonical_order);
        break;
      case Explorer::Dfs:
        out[e] = dfs_explore(problem.num_classes, eval, cfg, problem.canonical_order);
        break;
      case Explorer::Random:
        out[e] = random_explore(problem.num_classes, eval, cfg, problem.canonical_order);
        break;
    }
  }
  return out;
}

std::vector<SearchReport> pipeline_ahead(const StageCostTable& table, const SegmentPlan& plan,
                                         const std::vector<BatchMeta>& batches, const SearchBudget& budget,
                                         const SearchOptions& options,
                                         const std::function<void(size_t, const SearchReport&)>& consume) {
  validate_budget(budget);
  std::vector<SearchReport> out;
  if (batches.empty()) return out;
  auto launch = [&](size_t k) {
    return std::async(std::launch::async,
                      [&table, &plan, &batches, budget, options, k] { return plan_iteration(table, plan, batches[k], budget, options); });
  };
  auto next = launch(0);
  for (size_t k = 0; k < batches.size(); ++k) {
    auto report = next.get();
    if (k + 1 < batches.size()) next = launch(k + 1);
    if (consume) consume(k, report);
    out.push_back(std::move(report));
  }
  return out;
}

}  // namespace mmpipe
