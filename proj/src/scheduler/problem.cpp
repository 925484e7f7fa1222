// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "mmpipe/errors.hpp"
#include "mmpipe/scheduler.hpp"

namespace mmpipe {

double ScheduleProblem::latency(int stage, int option) const {
  const auto& st = stages[static_cast<size_t>(stage)];
  const auto& opt = pairs[static_cast<size_t>(st.pair)].options[static_cast<size_t>(option)];
  return st.dir == Direction::Forward ? opt.fw_s : opt.bw_s;
}

int64_t ScheduleProblem::activation(int stage, int option) const {
  const auto& st = stages[static_cast<size_t>(stage)];
  return pairs[static_cast<size_t>(st.pair)].options[static_cast<size_t>(option)].bytes;
}

namespace {

double link_latency(const DeviceSpec& dev, int64_t bytes) {
  return dev.alpha_net * static_cast<double>(bytes) / dev.net_bandwidth;
}

// Memory options of one stage pair from per-layer strategy costs.
std::vector<MemoryOption> pair_options(const std::vector<std::array<LayerCost, kNumLayerStrategies>>& layers,
                                       double overhead_s, const ProblemOptions& opts) {
  std::vector<MemoryOption> out;
  if (!opts.memory_options) {
    MemoryOption o;
    o.fw_s = overhead_s;
    o.bw_s = overhead_s;
    for (const auto& l : layers) {
      o.fw_s += l[0].fw_s;
      o.bw_s += l[0].bw_s;
      o.bytes += l[0].held_bytes;
      o.layers.push_back(LayerStrategy::None);
    }
    out.push_back(std::move(o));
    return out;
  }
  std::vector<std::vector<LayerOption>> per_layer;
  per_layer.reserve(layers.size());
  for (const auto& l : layers) {
    std::vector<LayerOption> opts_l;
    for (const auto& c : l) opts_l.push_back({c.fw_s + c.bw_s, c.held_bytes});
    per_layer.push_back(std::move(opts_l));
  }
  for (const auto& cand : generate_candidates(per_layer, opts.max_candidates, opts.quantum_bytes)) {
    MemoryOption o;
    o.fw_s = overhead_s;
    o.bw_s = overhead_s;
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& c = layers[i][static_cast<size_t>(cand.choice[i])];
      o.fw_s += c.fw_s;
      o.bw_s += c.bw_s;
      o.bytes += c.held_bytes;
      o.layers.push_back(kAllLayerStrategies[static_cast<size_t>(cand.choice[i])]);
    }
    out.push_back(std::move(o));
  }
  return out;
}

// Shared construction: segments are created through this builder so that
// stage ids are segment * P + rank.
class Builder {
 public:
  explicit Builder(ScheduleProblem& p) : p_(p) {}

  int add_class(int module, int microbatch, Direction dir) {
    p_.class_module.push_back(module);
    p_.class_microbatch.push_back(microbatch);
    p_.class_dir.push_back(dir);
    return p_.num_classes++;
  }

  int add_segment(int module, int microbatch, int submb, int depth, Direction dir, int cls, const WorkShape& w) {
    const int P = p_.num_ranks;
    PipelineSegment s;
    s.id = static_cast<int>(p_.segments.size());
    s.module = module;
    s.microbatch = microbatch;
    s.submb = submb;
    s.depth = depth;
    s.dir = dir;
    s.cls = cls;
    s.shape = w;
    p_.segments.push_back(s);
    for (int r = 0; r < P; ++r) {
      StageTask t;
      t.id = s.id * P + r;
      t.segment = s.id;
      t.rank = r;
      t.dir = dir;
      p_.stages.push_back(std::move(t));
    }
    return s.id;
  }

  int stage(int segment, int rank) const { return segment * p_.num_ranks + rank; }

  void edge(int from, int to, double latency, int64_t bytes) {
    auto& dst = p_.stages[static_cast<size_t>(to)];
    for (const auto& e : dst.preds) {
      if (e.stage == from) return;
    }
    dst.preds.push_back({from, latency, bytes});
    p_.stages[static_cast<size_t>(from)].succs.push_back(to);
  }

  // Pipeline edges along a segment, forward: r-1 -> r, backward: r+1 -> r.
  void chain(int segment, const DeviceSpec& dev, int64_t bytes) {
    const int P = p_.num_ranks;
    const bool fw = p_.segments[static_cast<size_t>(segment)].dir == Direction::Forward;
    for (int r = 1; r < P; ++r) {
      if (fw) {
        edge(stage(segment, r - 1), stage(segment, r), link_latency(dev, bytes), bytes);
      } else {
        edge(stage(segment, r), stage(segment, r - 1), link_latency(dev, bytes), bytes);
      }
    }
  }

  void link(int from_stage, int to_stage, const DeviceSpec& dev, int64_t bytes, double extra) {
    const bool cross = p_.stages[static_cast<size_t>(from_stage)].rank != p_.stages[static_cast<size_t>(to_stage)].rank;
    if (cross) {
      edge(from_stage, to_stage, link_latency(dev, bytes) + extra, bytes);
    } else {
      edge(from_stage, to_stage, extra, 0);
    }
  }

  void pair(int fw_segment, int bw_segment, int rank, std::vector<MemoryOption> options) {
    StagePair pr;
    pr.fw = stage(fw_segment, rank);
    pr.bw = stage(bw_segment, rank);
    pr.rank = rank;
    pr.options = std::move(options);
    const int idx = static_cast<int>(p_.pairs.size());
    p_.stages[static_cast<size_t>(pr.fw)].pair = idx;
    p_.stages[static_cast<size_t>(pr.bw)].pair = idx;
    p_.pairs.push_back(std::move(pr));
    // A backward stage always follows its forward twin.
    edge(stage(fw_segment, rank), stage(bw_segment, rank), 0.0, 0);
  }

 private:
  ScheduleProblem& p_;
};

void finish(ScheduleProblem& p) {
  p.canonical_order.resize(static_cast<size_t>(p.num_classes));
  std::iota(p.canonical_order.begin(), p.canonical_order.end(), 0);
}

}  // namespace

std::vector<WorkShape> microbatch_shapes(const ModelSpec& model, const MicrobatchMeta& mb) {
  SubMicrobatchConfig whole;
  whole.size.assign(model.modules.size(), std::numeric_limits<int64_t>::max() / 2);
  std::vector<WorkShape> out(model.modules.size());
  for (const auto& s : build_submicrobatches(model, mb, 0, whole)) out[static_cast<size_t>(s.module)] = s.shape;
  return out;
}

ScheduleProblem build_problem(const StageCostTable& table, const SegmentPlan& plan, const BatchMeta& batch,
                              const ProblemOptions& opts) {
  const auto& ctx = table.context();
  const auto& model = ctx.model;
  const auto& placement = table.placement();
  const int P = placement.num_ranks;
  const int n_mod = static_cast<int>(model.modules.size());
  if (batch.microbatches.empty()) throw InvalidArgument("batch has no microbatches");

  ScheduleProblem p;
  p.num_ranks = P;
  for (const auto& m : model.modules) {
    p.module_names.push_back(m.name);
    p.module_roles.push_back(m.role);
  }
  const auto static_mem = static_memory_per_rank(ctx, placement);
  const int64_t M = opts.memory_bytes.value_or(ctx.device.memory_bytes);
  for (int r = 0; r < P; ++r) p.capacity.push_back(std::max<int64_t>(0, M - static_mem[static_cast<size_t>(r)]));

  Builder b(p);
  std::map<std::tuple<int, int64_t, int64_t, int64_t>, std::vector<MemoryOption>> option_cache;
  auto options_for = [&](int chunk, const WorkShape& w) -> const std::vector<MemoryOption>& {
    auto key = std::make_tuple(chunk, w.instances, w.tokens, w.sum_sq);
    auto it = option_cache.find(key);
    if (it != option_cache.end()) return it->second;
    const auto& cost = table.get(chunk, w);
    return option_cache.emplace(key, pair_options(cost.layers, cost.overhead_s, opts)).first->second;
  };
  auto boundary = [&](int module, const WorkShape& w) {
    return boundary_bytes(ctx, model.modules[static_cast<size_t>(module)], w);
  };
  auto adapter_latency = [&](int producer, int consumer) {
    for (const auto& e : model.edges) {
      if (e.producer == producer && e.consumer == consumer) return e.latency_s;
    }
    return 0.0;
  };

  for (int mb = 0; mb < static_cast<int>(batch.microbatches.size()); ++mb) {
    const auto subs = build_submicrobatches(model, batch.microbatches[static_cast<size_t>(mb)], mb, plan.submb);
    std::vector<std::vector<SubMicrobatch>> by_module(static_cast<size_t>(n_mod));
    for (const auto& s : subs) by_module[static_cast<size_t>(s.module)].push_back(s);

    // fw_seg[m][j][k], bw_seg[m][j][k]
    std::vector<std::vector<std::vector<int>>> fw_seg(static_cast<size_t>(n_mod)), bw_seg(static_cast<size_t>(n_mod));
    for (int m = 0; m < n_mod; ++m) {
      if (by_module[static_cast<size_t>(m)].empty()) continue;
      const int cls = b.add_class(m, mb, Direction::Forward);
      const int K = plan.K[static_cast<size_t>(m)];
      for (const auto& s : by_module[static_cast<size_t>(m)]) {
        std::vector<int> segs;
        for (int k = 0; k < K; ++k) segs.push_back(b.add_segment(m, mb, s.index, k, Direction::Forward, cls, s.shape));
        fw_seg[static_cast<size_t>(m)].push_back(std::move(segs));
      }
    }
    for (int m = n_mod - 1; m >= 0; --m) {
      if (by_module[static_cast<size_t>(m)].empty()) continue;
      const int cls = b.add_class(m, mb, Direction::Backward);
      const int K = plan.K[static_cast<size_t>(m)];
      for (const auto& s : by_module[static_cast<size_t>(m)]) {
        std::vector<int> segs(static_cast<size_t>(K));
        for (int k = K - 1; k >= 0; --k) {
          segs[static_cast<size_t>(k)] = b.add_segment(m, mb, s.index, k, Direction::Backward, cls, s.shape);
        }
        bw_seg[static_cast<size_t>(m)].push_back(std::move(segs));
      }
    }

    for (int m = 0; m < n_mod; ++m) {
      const auto& mod_subs = by_module[static_cast<size_t>(m)];
      const int K = plan.K[static_cast<size_t>(m)];
      for (size_t j = 0; j < mod_subs.size(); ++j) {
        const auto& w = mod_subs[j].shape;
        const int64_t bytes = boundary(m, w);
        for (int k = 0; k < K; ++k) {
          const int f = fw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(k)];
          const int g = bw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(k)];
          p.segments[static_cast<size_t>(f)].twin = g;
          p.segments[static_cast<size_t>(g)].twin = f;
          b.chain(f, ctx.device, bytes);
          b.chain(g, ctx.device, bytes);
          if (k > 0) {
            b.link(b.stage(fw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(k - 1)], P - 1), b.stage(f, 0),
                   ctx.device, bytes, 0.0);
            b.link(b.stage(g, P - 1), b.stage(bw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(k - 1)], 0),
                   ctx.device, bytes, 0.0);
          }
          for (int r = 0; r < P; ++r) {
            const int chunk = placement.find(m, k, r);
            if (chunk < 0) throw InvalidArgument("placement has no chunk for a scheduled stage");
            p.stages[static_cast<size_t>(b.stage(f, r))].chunk = chunk;
            p.stages[static_cast<size_t>(b.stage(g, r))].chunk = chunk;
            b.pair(f, g, r, options_for(chunk, w));
          }
        }
      }
    }

    // Cross-module edges and sinks.
    for (int m = 0; m < n_mod; ++m) {
      if (by_module[static_cast<size_t>(m)].empty()) continue;
      const int K = plan.K[static_cast<size_t>(m)];
      bool has_consumer = false;
      for (int c : model.consumers(m)) {
        if (by_module[static_cast<size_t>(c)].empty()) continue;
        has_consumer = true;
        const double extra = adapter_latency(m, c);
        for (size_t j = 0; j < by_module[static_cast<size_t>(m)].size(); ++j) {
          const int64_t bytes = boundary(m, by_module[static_cast<size_t>(m)][j].shape);
          const int prod_fw = b.stage(fw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(K - 1)], P - 1);
          const int prod_bw = b.stage(bw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(K - 1)], P - 1);
          for (size_t i = 0; i < by_module[static_cast<size_t>(c)].size(); ++i) {
            b.link(prod_fw, b.stage(fw_seg[static_cast<size_t>(c)][i][0], 0), ctx.device, bytes, extra);
            b.link(b.stage(bw_seg[static_cast<size_t>(c)][i][0], 0), prod_bw, ctx.device, bytes, extra);
          }
        }
      }
      if (!has_consumer) {
        // Loss: the backward of the last layer group follows its forward.
        for (size_t j = 0; j < by_module[static_cast<size_t>(m)].size(); ++j) {
          b.link(b.stage(fw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(K - 1)], P - 1),
                 b.stage(bw_seg[static_cast<size_t>(m)][j][static_cast<size_t>(K - 1)], P - 1), ctx.device, 0, 0.0);
        }
      }
    }
  }
  finish(p);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<int> best_contiguous_split(std::span<const double> layer_costs, int P) {
  const int n = static_cast<int>(layer_costs.size());
  if (P < 1 || n < P) throw InvalidArgument("need at least one layer per stage");
  std::vector<double> prefix(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[static_cast<size_t>(i) + 1] = prefix[static_cast<size_t>(i)] + layer_costs[static_cast<size_t>(i)];
  auto sum = [&](int a, int b) { return prefix[static_cast<size_t>(b)] - prefix[static_cast<size_t>(a)]; };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double eps = 1e-12 * std::max(1.0, prefix.back());

  // best[p][i]: minimal bottleneck placing layers [0, i) on p stages.
  std::vector<std::vector<double>> best(static_cast<size_t>(P) + 1, std::vector<double>(static_cast<size_t>(n) + 1, kInf));
  best[0][0] = 0;
  for (int p = 1; p <= P; ++p) {
    for (int i = p; i <= n; ++i) {
      for (int j = p - 1; j < i; ++j) {
        best[static_cast<size_t>(p)][static_cast<size_t>(i)] =
            std::min(best[static_cast<size_t>(p)][static_cast<size_t>(i)],
                     std::max(best[static_cast<size_t>(p - 1)][static_cast<size_t>(j)], sum(j, i)));
      }
    }
  }
  const double bottleneck = best[static_cast<size_t>(P)][static_cast<size_t>(n)];

  // Among splits attaining the bottleneck, maximise the smallest stage.
  std::vector<std::vector<double>> lo(static_cast<size_t>(P) + 1, std::vector<double>(static_cast<size_t>(n) + 1, -kInf));
  std::vector<std::vector<int>> from(static_cast<size_t>(P) + 1, std::vector<int>(static_cast<size_t>(n) + 1, -1));
  lo[0][0] = kInf;
  for (int p = 1; p <= P; ++p) {
    for (int i = p; i <= n; ++i) {
      for (int j = p - 1; j < i; ++j) {
        if (lo[static_cast<size_t>(p - 1)][static_cast<size_t>(j)] == -kInf) continue;
        const double s = sum(j, i);
        if (s > bottleneck + eps) continue;
        const double v = std::min(lo[static_cast<size_t>(p - 1)][static_cast<size_t>(j)], s);
        if (v > lo[static_cast<size_t>(p)][static_cast<size_t>(i)]) {
          lo[static_cast<size_t>(p)][static_cast<size_t>(i)] = v;
          from[static_cast<size_t>(p)][static_cast<size_t>(i)] = j;
        }
      }
    }
  }
  std::vector<int> bounds(static_cast<size_t>(P) + 1, 0);
  bounds[static_cast<size_t>(P)] = n;
  for (int p = P, i = n; p > 0; --p) {
    i = from[static_cast<size_t>(p)][static_cast<size_t>(i)];
    bounds[static_cast<size_t>(p - 1)] = i;
  }
  return bounds;
}

namespace {

// Per-layer fw+bw cost of the concatenated chain, with the chain position
// of each layer.
struct ChainLayer {
  int module;
  int layer;
};

std::vector<ChainLayer> chain_layers(const ModelSpec& model) {
  std::vector<ChainLayer> out;
  for (size_t m = 0; m < model.modules.size(); ++m) {
    for (int l = 0; l < model.modules[m].layers; ++l) out.push_back({static_cast<int>(m), l});
  }
  return out;
}

}  // namespace

ClassicPartition classic_partition(const CostContext& ctx, std::span<const WorkShape> reference) {
  const auto& model = ctx.model;
  if (reference.size() != model.modules.size()) throw InvalidArgument("one reference workload per module");
  const auto chain = chain_layers(model);
  std::vector<double> per_module(model.modules.size());
  for (size_t m = 0; m < model.modules.size(); ++m) {
    const auto c = compute_stage_cost(ctx, Chunk{static_cast<int>(m), 0, 1, 0, 0}, reference[m], LayerStrategy::None);
    per_module[m] = c.layers[0][0].fw_s + c.layers[0][0].bw_s;
  }
  std::vector<double> costs;
  for (const auto& cl : chain) costs.push_back(per_module[static_cast<size_t>(cl.module)]);
  const auto bounds = best_contiguous_split(costs, ctx.parallel.pp);
  ClassicPartition part(static_cast<size_t>(ctx.parallel.pp));
  for (int r = 0; r < ctx.parallel.pp; ++r) {
    for (int i = bounds[static_cast<size_t>(r)]; i < bounds[static_cast<size_t>(r) + 1]; ++i) {
      const auto& cl = chain[static_cast<size_t>(i)];
      auto& ranges = part[static_cast<size_t>(r)];
      if (!ranges.empty() && ranges.back().module == cl.module && ranges.back().hi == cl.layer) {
        ++ranges.back().hi;
      } else {
        ranges.push_back({cl.module, cl.layer, cl.layer + 1});
      }
    }
  }
  return part;
}

ScheduleProblem build_classic_problem(const CostContext& ctx, const ClassicPartition& partition,
                                      const BatchMeta& batch, const ProblemOptions& opts) {
  const int P = static_cast<int>(partition.size());
  if (P < 1) throw InvalidArgument("empty partition");
  ScheduleProblem p;
  p.num_ranks = P;
  p.module_names = {"pipeline"};
  p.module_roles = {ModuleRole::Backbone};

  // Static memory of each rank's layers.
  const double tp = static_cast<double>(std::max(1, ctx.parallel.tp));
  const int64_t M = opts.memory_bytes.value_or(ctx.device.memory_bytes);
  for (const auto& ranges : partition) {
    double state = 0;
    for (const auto& rg : ranges) {
      state += ctx.config.state_bytes_per_param *
               static_cast<double>(layer_param_count(ctx.model.modules[static_cast<size_t>(rg.module)])) *
               (rg.hi - rg.lo) / tp;
    }
    p.capacity.push_back(std::max<int64_t>(0, M - static_cast<int64_t>(state)));
  }

  Builder b(p);
  for (int mb = 0; mb < static_cast<int>(batch.microbatches.size()); ++mb) {
    const auto shapes = microbatch_shapes(ctx.model, batch.microbatches[static_cast<size_t>(mb)]);
    const int fc = b.add_class(0, mb, Direction::Forward);
    const int bc = b.add_class(0, mb, Direction::Backward);
    WorkShape total;
    for (const auto& w : shapes) {
      total.instances += w.instances;
      total.tokens += w.tokens;
      total.sum_sq += w.sum_sq;
    }
    const int f = b.add_segment(0, mb, 0, 0, Direction::Forward, fc, total);
    const int g = b.add_segment(0, mb, 0, 0, Direction::Backward, bc, total);
    p.segments[static_cast<size_t>(f)].twin = g;
    p.segments[static_cast<size_t>(g)].twin = f;
    // Hidden states crossing ranks: the widest module boundary on the chain.
    int64_t bytes = 0;
    for (size_t m = 0; m < ctx.model.modules.size(); ++m) {
      bytes = std::max(bytes, boundary_bytes(ctx, ctx.model.modules[m], shapes[m]));
    }
    b.chain(f, ctx.device, bytes);
    b.chain(g, ctx.device, bytes);
    b.link(b.stage(f, P - 1), b.stage(g, P - 1), ctx.device, 0, 0.0);
    for (int r = 0; r < P; ++r) {
      std::vector<std::array<LayerCost, kNumLayerStrategies>> layers;
      bool any_work = false;
      for (const auto& rg : partition[static_cast<size_t>(r)]) {
        const auto& w = shapes[static_cast<size_t>(rg.module)];
        if (w.tokens == 0) continue;
        any_work = true;
        const auto c = compute_stage_cost(ctx, Chunk{rg.module, rg.lo, rg.hi, 0, 0}, w, LayerStrategy::None);
        layers.insert(layers.end(), c.layers.begin(), c.layers.end());
      }
      const double overhead = any_work ? ctx.config.stage_overhead_s : 0.0;
      b.pair(f, g, r, pair_options(layers, overhead, opts));
    }
  }
  finish(p);
  return p;
}

ScheduleProblem uniform_problem(int P, int microbatches, std::span<const double> fw_s, std::span<const double> bw_s,
                                int64_t activation_bytes, int64_t capacity) {
  if (static_cast<int>(fw_s.size()) != P || static_cast<int>(bw_s.size()) != P) {
    throw InvalidArgument("one stage time per rank is required");
  }
  ScheduleProblem p;
  p.num_ranks = P;
  p.module_names = {"uniform"};
  p.module_roles = {ModuleRole::Backbone};
  p.capacity.assign(static_cast<size_t>(P), capacity);
  Builder b(p);
  DeviceSpec free_link;
  free_link.net_bandwidth = 1;
  for (int mb = 0; mb < microbatches; ++mb) {
    const int fc = b.add_class(0, mb, Direction::Forward);
    const int bc = b.add_class(0, mb, Direction::Backward);
    const int f = b.add_segment(0, mb, 0, 0, Direction::Forward, fc, {});
    const int g = b.add_segment(0, mb, 0, 0, Direction::Backward, bc, {});
    p.segments[static_cast<size_t>(f)].twin = g;
    p.segments[static_cast<size_t>(g)].twin = f;
    b.chain(f, free_link, 0);
    b.chain(g, free_link, 0);
    b.link(b.stage(f, P - 1), b.stage(g, P - 1), free_link, 0, 0.0);
    for (int r = 0; r < P; ++r) {
      MemoryOption o;
      o.fw_s = fw_s[static_cast<size_t>(r)];
      o.bw_s = bw_s[static_cast<size_t>(r)];
      o.bytes = activation_bytes;
      b.pair(f, g, r, {o});
    }
  }
  finish(p);
  return p;
}

}  // namespace mmpipe
