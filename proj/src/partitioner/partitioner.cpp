// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpipe/errors.hpp"

namespace mmpipe {

UnitKind module_unit_kind(const ModelSpec& model, int module) {
  const auto& m = model.modules.at(static_cast<size_t>(module));
  return m.tokens_per_instance ? UnitKind::Instances : UnitKind::Tokens;
}

WorkShape module_shape(const ModelSpec& model, int module, int64_t units, int64_t sequences) {
  const auto& m = model.modules.at(static_cast<size_t>(module));
  if (m.tokens_per_instance) return WorkShape::instances_of(units, *m.tokens_per_instance);
  sequences = std::max<int64_t>(1, sequences);
  return {0, units, units * units / sequences};
}

std::vector<EfficiencyPoint> efficiency_curve(const CostContext& ctx, int module,
                                              std::span<const int64_t> sizes, int num_chunks) {
  std::vector<EfficiencyPoint> out;
  out.reserve(sizes.size());
  for (int64_t b : sizes) {
    if (b < 1) throw InvalidArgument("sub-microbatch sizes must be >= 1");
    EfficiencyPoint p;
    p.size = b;
    p.latency_s = module_latency(ctx, module, module_shape(ctx.model, module, b), num_chunks);
    p.throughput = p.latency_s > 0 ? static_cast<double>(b) / p.latency_s : 0.0;
    out.push_back(p);
  }
  return out;
}

int64_t select_submb_size(std::span<const EfficiencyPoint> curve, double threshold) {
  if (curve.empty()) throw EmptyInput("efficiency curve is empty");
  double peak = 0;
  for (const auto& p : curve) peak = std::max(peak, p.throughput);
  for (const auto& p : curve) {
    if (p.throughput >= threshold * peak) return p.size;
  }
  return curve.back().size;
}

std::vector<int> segment_counts(std::span<const double> sorted_latencies) {
  if (sorted_latencies.empty()) throw EmptyInput("no module latencies");
  const double t1 = sorted_latencies.front();
  if (!(t1 > 0)) throw InvalidArgument("T_1 must be positive");
  std::vector<int> K;
  K.reserve(sorted_latencies.size());
  for (double t : sorted_latencies) {
    if (t < t1) throw InvalidArgument("latencies must be sorted ascending");
    // The epsilon absorbs rounding in ratios that are integral on paper.
    K.push_back(std::max(1, static_cast<int>(std::floor(t / t1 + 1e-9))));
  }
  return K;
}

ChunkPlacement partition_chunks(const ModelSpec& model, int P, std::span<const int> K) {
  if (P < 1) throw InvalidArgument("P must be >= 1");
  if (K.size() != model.modules.size()) throw InvalidArgument("one K per module is required");
  ChunkPlacement placement;
  placement.num_ranks = P;
  for (size_t m = 0; m < model.modules.size(); ++m) {
    const int L = model.modules[m].layers;
    const int k = K[m];
    if (k < 1) throw InvalidArgument("K must be >= 1");
    const int chunks = P * k;
    if (chunks > L) {
      throw TooManyChunks("module '" + model.modules[m].name + "': " + std::to_string(chunks) +
                          " chunks for " + std::to_string(L) + " layers");
    }
    const int base = L / chunks;
    const int extra = L % chunks;
    int lo = 0;
    for (int c = 0; c < chunks; ++c) {
      const int n = base + (c < extra ? 1 : 0);
      placement.chunks.push_back({static_cast<int>(m), lo, lo + n, c / P, c % P});
      lo += n;
    }
  }
  return placement;
}

std::vector<int64_t> balanced_split(int64_t n, int64_t B) {
  if (B < 1) throw InvalidArgument("B must be >= 1");
  if (n <= 0) return {};
  const int64_t M = (n + B - 1) / B;
  std::vector<int64_t> out(static_cast<size_t>(M), n / M);
  for (int64_t i = 0; i < n % M; ++i) ++out[static_cast<size_t>(i)];
  return out;
}

SubMicrobatchConfig default_submb_config(const CostContext& ctx, std::span<const int64_t> sizes) {
  static const std::vector<int64_t> kDefaultSizes = {4, 8, 12, 16, 20, 24, 28, 32};
  if (sizes.empty()) sizes = kDefaultSizes;
  SubMicrobatchConfig cfg;
  for (size_t m = 0; m < ctx.model.modules.size(); ++m) {
    if (module_unit_kind(ctx.model, static_cast<int>(m)) == UnitKind::Instances) {
      const auto curve = efficiency_curve(ctx, static_cast<int>(m), sizes, ctx.parallel.pp);
      cfg.size.push_back(select_submb_size(curve));
    } else {
      cfg.size.push_back(ctx.model.context_length);
    }
  }
  return cfg;
}

SegmentPlan make_segment_plan(const CostContext& ctx, const SubMicrobatchConfig& cfg,
                              std::span<const int> fixed_K) {
  const auto& model = ctx.model;
  const size_t n = model.modules.size();
  if (cfg.size.size() != n) throw InvalidArgument("one sub-microbatch size per module is required");
  const int P = ctx.parallel.pp;
  SegmentPlan plan;
  plan.submb = cfg;
  plan.T.resize(n);
  for (size_t m = 0; m < n; ++m) {
    plan.T[m] = module_latency(ctx, static_cast<int>(m),
                               module_shape(model, static_cast<int>(m), cfg.size[m]), P);
  }
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), 0);
  std::stable_sort(plan.order.begin(), plan.order.end(),
                   [&](int a, int b) { return plan.T[static_cast<size_t>(a)] < plan.T[static_cast<size_t>(b)]; });
  plan.K.assign(n, 1);
  if (!fixed_K.empty()) {
    if (fixed_K.size() != n) throw InvalidArgument("one K per module is required");
    plan.K.assign(fixed_K.begin(), fixed_K.end());
  } else {
    std::vector<double> sorted;
    for (int m : plan.order) sorted.push_back(plan.T[static_cast<size_t>(m)]);
    const auto K = segment_counts(sorted);
    for (size_t i = 0; i < n; ++i) {
      const int m = plan.order[i];
      // A module cannot be cut finer than one layer per chunk.
      const int cap = std::max(1, model.modules[static_cast<size_t>(m)].layers / P);
      plan.K[static_cast<size_t>(m)] = std::min(K[i], cap);
    }
  }
  plan.placement = partition_chunks(model, P, plan.K);
  return plan;
}

int64_t module_units(const ModelSpec& model, int module, const MicrobatchMeta& mb) {
  const auto& m = model.modules.at(static_cast<size_t>(module));
  if (m.role == ModuleRole::Backbone) return mb.total_tokens();
  if (m.tokens_per_instance) return mb.instances(m.modality.name);
  return mb.tokens(m.modality.name);
}

std::vector<SubMicrobatch> build_submicrobatches(const ModelSpec& model, const MicrobatchMeta& mb,
                                                 int microbatch_index, const SubMicrobatchConfig& cfg) {
  if (cfg.size.size() != model.modules.size()) {
    throw InvalidArgument("one sub-microbatch size per module is required");
  }
  std::vector<SubMicrobatch> out;
  for (size_t m = 0; m < model.modules.size(); ++m) {
    const auto& spec = model.modules[m];
    const int64_t N = module_units(model, static_cast<int>(m), mb);
    const auto sizes = balanced_split(N, cfg.size[m]);
    // Attention span of token-stream modules: per-sample sequences, shared
    // across pieces in proportion to their token counts.
    int64_t total_sq = 0;
    if (!spec.tokens_per_instance) {
      for (const auto& s : mb.samples()) {
        const int64_t t = spec.role == ModuleRole::Backbone ? s.total_tokens() : s.token_count(spec.modality.name);
        total_sq += t * t;
      }
    }
    int idx = 0;
    for (int64_t units : sizes) {
      SubMicrobatch sub;
      sub.module = static_cast<int>(m);
      sub.microbatch = microbatch_index;
      sub.index = idx++;
      sub.units = units;
      if (spec.tokens_per_instance) {
        sub.shape = WorkShape::instances_of(units, *spec.tokens_per_instance);
      } else {
        const auto sq = static_cast<int64_t>(std::llround(static_cast<double>(total_sq) *
                                                          static_cast<double>(units) / static_cast<double>(N)));
        sub.shape = {0, units, sq};
      }
      out.push_back(sub);
    }
  }
  return out;
}

}  // namespace mmpipe
