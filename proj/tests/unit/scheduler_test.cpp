// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mmpipe/errors.hpp"
#include "mmpipe/scheduler.hpp"

namespace mmpipe {
namespace {

constexpr int64_t kGB = int64_t{1} << 30;

std::vector<int> canonical(const ScheduleProblem& p) { return p.canonical_order; }

ScheduleProblem uniform(int P, int n, double f, double b, int64_t cap = std::numeric_limits<int64_t>::max() / 4) {
  std::vector<double> fw(static_cast<size_t>(P), f), bw(static_cast<size_t>(P), b);
  return uniform_problem(P, n, fw, bw, 1, cap);
}

CostContext vlm_small() {
  CostContext ctx;
  const auto& p = builtin_model("VLM-S");
  ctx.model = p.model;
  ctx.parallel = p.parallel;
  ctx.device = builtin_device("h800");
  return ctx;
}

SampleMeta vlm_sample(int64_t id, int64_t images, int64_t text) {
  SampleMeta s;
  s.id = id;
  if (images > 0) {
    s.instances["image"] = images;
    s.tokens["image"] = images * 169;
  }
  s.tokens["text"] = text;
  return s;
}

TEST(BuildProblem, SingleSegmentPair) {
  auto p = uniform(4, 1, 1.0, 2.0);
  EXPECT_EQ(p.segments.size(), 2u);
  EXPECT_EQ(p.stages.size(), 8u);
  EXPECT_EQ(p.pairs.size(), 4u);
  EXPECT_EQ(p.num_classes, 2);
}

TEST(BuildProblem, VlmSegmentCountFollowsFormula) {
  auto ctx = std::make_shared<CostContext>(vlm_small());
  SubMicrobatchConfig cfg{{12, 8192}};
  const std::vector<int> K = {1, 3};
  const auto plan = make_segment_plan(*ctx, cfg, K);
  StageCostTable table(ctx, plan.placement);
  BatchMeta batch;
  batch.microbatches.emplace_back(8192, std::vector<SampleMeta>{vlm_sample(0, 20, 3000)});
  const auto p = build_problem(table, plan, batch);
  // 2 image pieces x K=1 and 1 text piece x K=3, each forward and backward.
  EXPECT_EQ(p.segments.size(), 2u * 2 * 1 + 2u * 1 * 3);
  EXPECT_EQ(p.stages.size(), p.segments.size() * 4);
  EXPECT_EQ(p.num_classes, 4);
  for (const auto& s : p.segments) EXPECT_EQ(p.segments[static_cast<size_t>(s.twin)].twin, s.id);
  // Canonical orders are consistent with the dependency graph.
  const auto s = interleave_stages(p, canonical(p));
  EXPECT_TRUE(validate_schedule(p, s).empty());
  for (const auto& pr : p.pairs) {
    ASSERT_FALSE(pr.options.empty());
    EXPECT_LE(pr.options.size(), 10u);
    for (size_t i = 1; i < pr.options.size(); ++i) {
      EXPECT_GT(pr.options[i].bytes, pr.options[i - 1].bytes);
      EXPECT_LT(pr.options[i].latency(), pr.options[i - 1].latency());
    }
  }
}

TEST(BuildProblem, RandomPlansAreAcyclic) {
  auto ctx = std::make_shared<CostContext>(vlm_small());
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    SubMicrobatchConfig cfg{{4 + static_cast<int64_t>(rng() % 16), 1024 + static_cast<int64_t>(rng() % 4096)}};
    const std::vector<int> K = {1 + static_cast<int>(rng() % 2), 1 + static_cast<int>(rng() % 4)};
    const auto plan = make_segment_plan(*ctx, cfg, K);
    StageCostTable table(ctx, plan.placement);
    BatchMeta batch;
    for (int m = 0; m < 3; ++m) {
      batch.microbatches.emplace_back(
          8192, std::vector<SampleMeta>{vlm_sample(m, static_cast<int64_t>(rng() % 30), 500 + static_cast<int64_t>(rng() % 2000))});
    }
    ProblemOptions opts;
    opts.memory_options = false;
    const auto p = build_problem(table, plan, batch, opts);
    std::vector<int> seq = canonical(p);
    std::shuffle(seq.begin(), seq.end(), rng);
    const auto s = interleave_stages(p, seq);
    EXPECT_TRUE(validate_schedule(p, s).empty());
  }
}

TEST(BuildProblem, ClassicSplitMinimisesBottleneckThenMaximisesMinimum) {
  const std::vector<double> costs = {1, 1, 1, 1, 4};
  EXPECT_EQ(best_contiguous_split(costs, 2), (std::vector<int>{0, 4, 5}));
  const std::vector<double> even = {2, 2, 2, 2};
  EXPECT_EQ(best_contiguous_split(even, 2), (std::vector<int>{0, 2, 4}));
  EXPECT_THROW(best_contiguous_split(even, 5), InvalidArgument);
}

TEST(Makespan, Examples) {
  EXPECT_EQ(makespan(Schedule{}), 0.0);
  auto p = uniform(1, 1, 3e-3, 4e-3);
  const auto s = interleave_stages(p, canonical(p));
  EXPECT_DOUBLE_EQ(s.makespan, 7e-3);
  EXPECT_DOUBLE_EQ(s.start[0], 0.0);
  EXPECT_DOUBLE_EQ(s.start[1], 3e-3);
}

TEST(Interleave, NoWorseThan1F1BOnHomogeneousPipeline) {
  auto p = uniform(4, 8, 1.0, 2.0);
  const auto dq = interleave_stages(p, canonical(p));
  const auto ref = schedule_1f1b(p);
  EXPECT_TRUE(validate_schedule(p, dq).empty());
  EXPECT_LE(dq.makespan, ref.makespan + 1e-12);
}

TEST(Interleave, MemoryGateLimitsLiveActivations) {
  auto p = uniform(4, 6, 1.0, 2.0, 1);
  const auto s = interleave_stages(p, canonical(p));
  EXPECT_TRUE(validate_schedule(p, s).empty());
  for (int r = 0; r < 4; ++r) {
    for (const auto& pt : memory_timeline(p, s, r)) EXPECT_LE(pt.bytes, 1);
  }
}

TEST(Interleave, DeadlockWhenOneStageDoesNotFit) {
  auto p = uniform(2, 1, 1.0, 1.0, 0);
  EXPECT_THROW(interleave_stages(p, canonical(p)), Deadlock);
}

TEST(Validate, ReportsOverlapAndDependencyViolations) {
  auto p = uniform(1, 2, 1.0, 1.0);
  auto s = interleave_stages(p, canonical(p));
  ASSERT_TRUE(validate_schedule(p, s).empty());
  s.start[1] -= 0.5;
  s.end[1] -= 0.5;
  EXPECT_FALSE(validate_schedule(p, s).empty());
}

TEST(Schedule1F1B, SingleRankAlternates) {
  auto p = uniform(1, 4, 1.0, 2.0);
  const auto s = schedule_1f1b(p);
  ASSERT_EQ(s.order[0].size(), 8u);
  for (size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(p.stages[static_cast<size_t>(s.order[0][i])].dir, i % 2 == 0 ? Direction::Forward : Direction::Backward);
  }
  EXPECT_DOUBLE_EQ(s.makespan, 12.0);
}

TEST(Schedule1F1B, BubbleFormula) {
  const int P = 4, n = 64;
  auto p = uniform(P, n, 1.0, 2.0);
  const auto s = schedule_1f1b(p);
  EXPECT_TRUE(validate_schedule(p, s).empty());
  const double busy = n * 3.0;
  EXPECT_NEAR((s.makespan - busy) / s.makespan, (P - 1.0) / (n + P - 1.0), 1e-12);
}

TEST(Candidates, TwoStrategiesGiveTheExtremes) {
  const std::vector<std::vector<LayerOption>> layers = {{{10e-3, 8 * kGB}, {13e-3, 2 * kGB}}};
  const auto c = generate_candidates(layers, 10);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].bytes, 2 * kGB);
  EXPECT_EQ(c[1].bytes, 8 * kGB);
}

TEST(Candidates, TwoLayersThreeBuckets) {
  const std::vector<LayerOption> l = {{10e-3, 8 * kGB}, {13e-3, 2 * kGB}};
  const auto c = generate_candidates({l, l}, 3);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_NEAR(c[0].latency_s, 26e-3, 1e-12);
  EXPECT_EQ(c[0].bytes, 4 * kGB);
  EXPECT_NEAR(c[1].latency_s, 23e-3, 1e-12);
  EXPECT_EQ(c[1].bytes, 10 * kGB);
  EXPECT_NEAR(c[2].latency_s, 20e-3, 1e-12);
  EXPECT_EQ(c[2].bytes, 16 * kGB);
}

TEST(Candidates, NonDominatedAndContainExtremes) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = 1 + static_cast<int>(rng() % 5);
    const int S = 2 + static_cast<int>(rng() % 6);
    std::vector<std::vector<LayerOption>> layers(static_cast<size_t>(L));
    for (auto& l : layers) {
      const int k = 1 + static_cast<int>(rng() % 3);
      for (int j = 0; j < k; ++j) {
        l.push_back({1e-3 * static_cast<double>(1 + rng() % 20), static_cast<int64_t>(rng() % 20) * (kGB / 4)});
      }
    }
    const auto c = generate_candidates(layers, S, kGB / 64);
    ASSERT_FALSE(c.empty());
    EXPECT_LE(static_cast<int>(c.size()), S);
    // Exhaustive enumeration for the two extremes.
    double best_lat = 1e300, lat_at_min = 1e300;
    int64_t min_mem = std::numeric_limits<int64_t>::max(), mem_at_best = 0;
    std::vector<int> idx(static_cast<size_t>(L), 0);
    while (true) {
      double lat = 0;
      int64_t mem = 0;
      for (int i = 0; i < L; ++i) {
        lat += layers[static_cast<size_t>(i)][static_cast<size_t>(idx[static_cast<size_t>(i)])].latency_s;
        mem += layers[static_cast<size_t>(i)][static_cast<size_t>(idx[static_cast<size_t>(i)])].bytes;
      }
      if (lat < best_lat - 1e-15 || (std::abs(lat - best_lat) <= 1e-15 && mem < mem_at_best)) {
        best_lat = lat;
        mem_at_best = mem;
      }
      if (mem < min_mem || (mem == min_mem && lat < lat_at_min)) {
        min_mem = mem;
        lat_at_min = lat;
      }
      int d = 0;
      while (d < L && ++idx[static_cast<size_t>(d)] == static_cast<int>(layers[static_cast<size_t>(d)].size())) {
        idx[static_cast<size_t>(d++)] = 0;
      }
      if (d == L) break;
    }
    EXPECT_EQ(c.front().bytes, min_mem);
    EXPECT_NEAR(c.front().latency_s, lat_at_min, 1e-12);
    EXPECT_NEAR(c.back().latency_s, best_lat, 1e-12);
    EXPECT_EQ(c.back().bytes, mem_at_best);
    for (size_t i = 1; i < c.size(); ++i) {
      EXPECT_GT(c[i].bytes, c[i - 1].bytes);
      EXPECT_LT(c[i].latency_s, c[i - 1].latency_s);
    }
  }
}

MemoryIlp single_pair(int64_t cap) {
  MemoryIlp ilp;
  ilp.options = {{{10e-3, 8 * kGB}, {6e-3, 12 * kGB}}};
  ilp.constraints = {{0}};
  ilp.capacity = cap;
  return ilp;
}

TEST(MemoryIlp, SinglePairExamples) {
  EXPECT_EQ(solve_memory_ilp(single_pair(10 * kGB)).choice[0], 0);
  EXPECT_EQ(solve_memory_ilp(single_pair(12 * kGB)).choice[0], 1);
  EXPECT_THROW(solve_memory_ilp(single_pair(7 * kGB)), Infeasible);
}

double brute_force_ilp(const MemoryIlp& ilp) {
  const size_t n = ilp.options.size();
  std::vector<int> idx(n, 0);
  double best = 1e300;
  while (true) {
    bool ok = true;
    for (const auto& c : ilp.constraints) {
      int64_t s = 0;
      for (int p : c) s += ilp.options[static_cast<size_t>(p)][static_cast<size_t>(idx[static_cast<size_t>(p)])].bytes;
      ok = ok && s <= ilp.capacity;
    }
    if (ok) {
      double lat = 0;
      for (size_t p = 0; p < n; ++p) lat += ilp.options[p][static_cast<size_t>(idx[p])].latency_s;
      best = std::min(best, lat);
    }
    size_t d = 0;
    while (d < n && ++idx[d] == static_cast<int>(ilp.options[d].size())) idx[d++] = 0;
    if (d == n) break;
  }
  return best;
}

TEST(MemoryIlp, WithinGapOfExhaustiveOptimum) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    MemoryIlp ilp;
    const int n = 3 + static_cast<int>(rng() % 4);
    for (int p = 0; p < n; ++p) {
      std::vector<LayerOption> opts;
      const int S = 1 + static_cast<int>(rng() % 4);
      for (int j = 0; j < S; ++j) {
        opts.push_back({1e-3 * static_cast<double>(1 + rng() % 30), static_cast<int64_t>(1 + rng() % 16) * kGB});
      }
      ilp.options.push_back(opts);
    }
    for (int p = 0; p < n; ++p) {
      std::vector<int> c;
      for (int q = std::max(0, p - 2); q <= p; ++q) c.push_back(q);
      ilp.constraints.push_back(c);
    }
    ilp.capacity = static_cast<int64_t>(10 + rng() % 30) * kGB;
    const double opt = brute_force_ilp(ilp);
    if (opt > 1e299) {
      EXPECT_THROW(solve_memory_ilp(ilp), Infeasible);
      continue;
    }
    const auto res = solve_memory_ilp(ilp);
    for (const auto& c : ilp.constraints) {
      int64_t s = 0;
      for (int p : c) s += ilp.options[static_cast<size_t>(p)][static_cast<size_t>(res.choice[static_cast<size_t>(p)])].bytes;
      EXPECT_LE(s, ilp.capacity);
    }
    EXPECT_GE(res.objective, opt - 1e-12);
    EXPECT_LE(res.objective, opt * 1.05 + 1e-12);
    EXPECT_LE(res.lower_bound, opt + 1e-12);
    const auto exact = solve_memory_ilp(ilp, 0.0);
    EXPECT_NEAR(exact.objective, opt, 1e-12);
  }
}

TEST(OptimizeMemory, KeepsScheduleValidAndNeverSlower) {
  auto ctx = std::make_shared<CostContext>(vlm_small());
  const auto plan = make_segment_plan(*ctx, default_submb_config(*ctx));
  StageCostTable table(ctx, plan.placement);
  const auto batch = synthetic_batch(builtin_distribution("vlm-mixed"), 8192, 4, 9);
  auto p = build_problem(table, plan, batch);
  const auto base = interleave_stages(p, canonical(p));
  const auto opt = optimize_memory(p, base);
  EXPECT_TRUE(validate_schedule(p, opt).empty());
  EXPECT_LE(opt.makespan, base.makespan + 1e-12);
}

TEST(BruteForce, SmallestInstances) {
  auto p = uniform(1, 1, 2.0, 3.0);
  const auto s = brute_force_schedule(p);
  EXPECT_DOUBLE_EQ(s.start[0], 0.0);
  EXPECT_DOUBLE_EQ(s.makespan, 5.0);

  auto q = uniform(2, 2, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(brute_force_schedule(q).makespan, schedule_1f1b(q).makespan);
  EXPECT_THROW(brute_force_schedule(uniform(4, 3, 1, 1)), TooLarge);
}

TEST(BruteForce, NeverWorseThanDualQueue) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int P = 1 + static_cast<int>(rng() % 3);
    const int n = 1 + static_cast<int>(rng() % static_cast<uint64_t>(8 / (2 * P)));
    std::vector<double> fw, bw;
    for (int r = 0; r < P; ++r) {
      fw.push_back(static_cast<double>(1 + rng() % 4));
      bw.push_back(static_cast<double>(1 + rng() % 6));
    }
    auto p = uniform_problem(P, n, fw, bw, 1, 1 + static_cast<int64_t>(rng() % 3));
    const auto dq = interleave_stages(p, canonical(p));
    const auto bf = brute_force_schedule(p);
    EXPECT_TRUE(validate_schedule(p, bf).empty());
    EXPECT_LE(bf.makespan, dq.makespan + 1e-12);
  }
}

TEST(Mcts, SingleClassReturnsCanonical) {
  auto eval = [](const std::vector<int>&) -> std::optional<double> { return 1.0; };
  MctsConfig cfg;
  const auto r = mcts_reorder(1, eval, cfg, {0});
  EXPECT_EQ(r.best_sequence, std::vector<int>{0});
  EXPECT_TRUE(r.exhausted);
}

TEST(Mcts, ExhaustiveBudgetFindsBestPermutation) {
  // Arbitrary costs over the 6 orders of three classes.
  auto eval = [](const std::vector<int>& s) -> std::optional<double> {
    return 10.0 + 3 * s[0] - 2 * s[1] + (s[2] == 1 ? 0.5 : 0.0);
  };
  MctsConfig cfg;
  cfg.wall_clock_ms = 0;
  cfg.max_rollouts = 1000;
  const auto r = mcts_reorder(3, eval, cfg, {0, 1, 2});
  EXPECT_TRUE(r.exhausted);
  std::vector<int> perm = {0, 1, 2};
  double best = 1e300;
  do {
    best = std::min(best, *eval(perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_DOUBLE_EQ(r.best_value, best);
  const auto d = dfs_explore(3, eval, cfg, {0, 1, 2});
  EXPECT_TRUE(d.exhausted);
  EXPECT_DOUBLE_EQ(d.best_value, best);
}

TEST(Mcts, DeterministicAndMonotoneTrace) {
  auto p = uniform(3, 4, 1.0, 2.0, 2);
  const auto eval = dip_evaluator(p, false);
  MctsConfig cfg;
  cfg.wall_clock_ms = 0;
  cfg.max_rollouts = 60;
  cfg.seed = 42;
  const auto a = mcts_reorder(p.num_classes, eval, cfg, canonical(p));
  const auto b = mcts_reorder(p.num_classes, eval, cfg, canonical(p));
  EXPECT_EQ(a.best_sequence, b.best_sequence);
  EXPECT_EQ(a.rollouts, b.rollouts);
  EXPECT_EQ(a.rollouts, 60);
  EXPECT_TRUE(a.budget_exhausted);
  for (size_t i = 1; i < a.trace.size(); ++i) EXPECT_LT(a.trace[i].best, a.trace[i - 1].best);
  EXPECT_DOUBLE_EQ(a.trace.back().best, a.best_value);
  EXPECT_DOUBLE_EQ(dip_schedule(p, a.best_sequence, false).makespan, a.best_value);
}

TEST(Mcts, ParallelWorkersStayWithinBudget) {
  auto p = uniform(3, 4, 1.0, 2.0, 2);
  const auto eval = dip_evaluator(p, false);
  MctsConfig cfg;
  cfg.wall_clock_ms = 0;
  cfg.max_rollouts = 100;
  cfg.workers = 4;
  const auto r = mcts_reorder(p.num_classes, eval, cfg, canonical(p));
  EXPECT_EQ(r.rollouts, 100);
  EXPECT_LE(r.best_value, *eval(canonical(p)));
}

TEST(EncoderFirst, WithoutImagesMatches1F1B) {
  auto ctx = std::make_shared<CostContext>(vlm_small());
  const auto plan = make_segment_plan(*ctx, SubMicrobatchConfig{{12, 8192}}, std::vector<int>{1, 1});
  StageCostTable table(ctx, plan.placement);
  BatchMeta batch;
  for (int m = 0; m < 6; ++m) batch.microbatches.emplace_back(8192, std::vector<SampleMeta>{vlm_sample(m, 0, 4000)});
  ProblemOptions opts;
  opts.memory_options = false;
  const auto p = build_problem(table, plan, batch, opts);
  const auto ef = schedule_encoder_first(p);
  const auto ref = schedule_1f1b(p);
  EXPECT_TRUE(validate_schedule(p, ef).empty());
  EXPECT_NEAR(ef.makespan, ref.makespan, 1e-12);
  EXPECT_EQ(ef.order, ref.order);
}

}  // namespace
}  // namespace mmpipe
