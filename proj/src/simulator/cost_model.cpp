// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/cost_model.hpp"

#include <functional>
#include <mutex>

#include "mmpipe/errors.hpp"

namespace mmpipe {

WorkShape WorkShape::sequence(int64_t tokens) { return {0, tokens, tokens * tokens}; }

WorkShape WorkShape::instances_of(int64_t n, int64_t tokens_per_instance) {
  return {n, n * tokens_per_instance, n * tokens_per_instance * tokens_per_instance};
}

std::optional<double> CostOverride::get(const std::string& module, Direction d) const {
  auto it = per_layer_s.find({module, d});
  if (it == per_layer_s.end()) return std::nullopt;
  return it->second;
}

std::map<int, DeviceSpec> stage_devices(const CostContext& ctx) {
  return {{kGpuDevice, ctx.device}, {kLinkDevice, ctx.device}, {kCpuDevice, ctx.device}};
}

namespace {

double tp_of(const CostContext& ctx) { return static_cast<double>(std::max(1, ctx.parallel.tp)); }

double attn_params(const ModalityModuleSpec& m) {
  const double h = static_cast<double>(m.embed_dim);
  return h * (h + 2.0 * h * m.attn_groups / m.attn_heads + h);
}

double mlp_params(const ModalityModuleSpec& m) {
  return 3.0 * static_cast<double>(m.embed_dim) * static_cast<double>(m.ffn_dim);
}

struct LayerOps {
  double attn_flops, mlp_flops;
  double attn_bytes, mlp_bytes;
  double allreduce_bytes;  // per all-reduce, 0 without TP
};

LayerOps layer_ops(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w) {
  const double tp = tp_of(ctx);
  const double s = static_cast<double>(w.tokens);
  const double h = static_cast<double>(m.embed_dim);
  const double f = static_cast<double>(m.ffn_dim);
  const double bpp = ctx.config.bytes_per_param;
  const double bnd = ctx.config.boundary_bytes_per_element;
  LayerOps ops{};
  ops.attn_flops = (2.0 * s * attn_params(m) + 4.0 * h * static_cast<double>(w.sum_sq)) / tp;
  ops.mlp_flops = 2.0 * s * mlp_params(m) / tp;
  // Weights streamed once, plus input/output activations of each block.
  ops.attn_bytes = (bpp * attn_params(m) + bnd * s * 4.0 * h) / tp;
  ops.mlp_bytes = (bpp * mlp_params(m) + bnd * s * (2.0 * h + 2.0 * f)) / tp;
  if (ctx.config.tp_communication && ctx.parallel.tp > 1) {
    ops.allreduce_bytes = 2.0 * (tp - 1.0) / tp * bnd * s * h;
  }
  return ops;
}

const ModalityModuleSpec& module_of(const CostContext& ctx, int module) {
  if (module < 0 || module >= static_cast<int>(ctx.model.modules.size())) {
    throw InvalidArgument("module index out of range");
  }
  return ctx.model.modules[static_cast<size_t>(module)];
}

class GraphBuilder {
 public:
  GraphBuilder(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w)
      : ctx_(ctx), m_(m), w_(w), ops_(layer_ops(ctx, m, w)) {}

  SimGraph& graph() { return g_; }
  int last() const { return last_; }

  int add(const std::string& name, DeviceKind kind, double flops, double mem, double net,
          std::optional<double> fixed = std::nullopt) {
    OperatorNode op;
    op.name = name;
    op.kind = kind;
    op.device = kind == DeviceKind::Link ? kLinkDevice : kind == DeviceKind::Cpu ? kCpuDevice : kGpuDevice;
    op.flops = flops;
    op.mem_bytes = mem;
    op.net_bytes = net;
    op.fixed_seconds = fixed;
    if (last_ >= 0) op.predecessors.push_back(last_);
    last_ = g_.add_operator(std::move(op));
    return last_;
  }

  void overhead() {
    if (w_.tokens > 0 && ctx_.config.stage_overhead_s > 0) {
      add("overhead", DeviceKind::Gpu, 0, 0, 0, ctx_.config.stage_overhead_s);
    }
  }

  // Forward compute of one layer, `scale` = 1 for forward/recompute, 2 for backward.
  void compute(const std::string& prefix, double scale, std::optional<double> fixed) {
    if (w_.tokens == 0) return;
    if (fixed) {
      add(prefix, DeviceKind::Gpu, 0, 0, 0, fixed);
      return;
    }
    add(prefix + ".attn", DeviceKind::Gpu, scale * ops_.attn_flops, scale * ops_.attn_bytes, 0);
    if (ops_.allreduce_bytes > 0) add(prefix + ".attn_ar", DeviceKind::Link, 0, 0, ops_.allreduce_bytes);
    add(prefix + ".mlp", DeviceKind::Gpu, scale * ops_.mlp_flops, scale * ops_.mlp_bytes, 0);
    if (ops_.allreduce_bytes > 0) add(prefix + ".mlp_ar", DeviceKind::Link, 0, 0, ops_.allreduce_bytes);
  }

  void forward_layer(int l, LayerStrategy st) {
    const std::string p = "L" + std::to_string(l);
    compute(p + ".fw", 1.0, ctx_.overrides.get(m_.name, Direction::Forward));
    const int produced = last_;
    if (st == LayerStrategy::Offload) {
      const auto bytes = layer_held_bytes(ctx_, m_, w_, LayerStrategy::None);
      add(p + ".d2h", DeviceKind::Link, 0, 0, static_cast<double>(bytes));
    }
    const auto held = layer_held_bytes(ctx_, m_, w_, st);
    if (held > 0 && produced >= 0) {
      TensorNode t;
      t.name = p + ".act";
      t.device = kGpuDevice;
      t.bytes = held;
      t.producer = produced;
      g_.add_tensor(std::move(t));
    }
  }

  void backward_layer(int l, LayerStrategy st) {
    const std::string p = "L" + std::to_string(l);
    const int entry = last_;
    if (st == LayerStrategy::Offload) {
      const auto bytes = layer_held_bytes(ctx_, m_, w_, LayerStrategy::None);
      add(p + ".h2d", DeviceKind::Link, 0, 0, static_cast<double>(bytes));
    }
    if (st == LayerStrategy::Checkpoint) {
      compute(p + ".recompute", 1.0, ctx_.overrides.get(m_.name, Direction::Forward));
    }
    compute(p + ".bw", 2.0, ctx_.overrides.get(m_.name, Direction::Backward));
    const auto held = layer_held_bytes(ctx_, m_, w_, st);
    if (held > 0 && entry >= 0 && last_ != entry) {
      TensorNode t;
      t.name = p + ".act";
      t.device = kGpuDevice;
      t.bytes = held;
      t.producer = entry;
      t.consumers.push_back(last_);
      g_.add_tensor(std::move(t));
    }
  }

 private:
  const CostContext& ctx_;
  const ModalityModuleSpec& m_;
  WorkShape w_;
  LayerOps ops_;
  SimGraph g_;
  int last_ = -1;
};

LayerStrategy strategy_at(std::span<const LayerStrategy> per_layer, int i) {
  if (per_layer.empty()) return LayerStrategy::None;
  if (per_layer.size() == 1) return per_layer[0];
  return per_layer[static_cast<size_t>(i)];
}

}  // namespace

double layer_forward_flops(const ModalityModuleSpec& m, const WorkShape& w, int tp) {
  const double s = static_cast<double>(w.tokens);
  const double h = static_cast<double>(m.embed_dim);
  const double t = static_cast<double>(std::max(1, tp));
  return (2.0 * s * attn_params(m) + 2.0 * s * mlp_params(m) + 4.0 * h * static_cast<double>(w.sum_sq)) / t;
}

int64_t layer_param_count(const ModalityModuleSpec& m) {
  return static_cast<int64_t>(attn_params(m) + mlp_params(m));
}

int64_t layer_held_bytes(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w,
                         LayerStrategy s) {
  const double sh = static_cast<double>(w.tokens) * static_cast<double>(m.embed_dim) / tp_of(ctx);
  switch (s) {
    case LayerStrategy::None:
      return static_cast<int64_t>(ctx.config.activation_bytes_per_element * sh);
    case LayerStrategy::Checkpoint:
      return static_cast<int64_t>(ctx.config.boundary_bytes_per_element * sh);
    case LayerStrategy::Offload:
      return 0;
  }
  return 0;
}

int64_t boundary_bytes(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w) {
  return layer_held_bytes(ctx, m, w, LayerStrategy::Checkpoint);
}

SimGraph build_stage_graph(const CostContext& ctx, const Chunk& chunk, const WorkShape& w,
                           std::span<const LayerStrategy> per_layer, Direction dir) {
  if (chunk.layers() <= 0) throw EmptyStage("chunk has an empty layer range");
  if (w.tokens < 0 || w.instances < 0 || w.sum_sq < 0) throw InvalidArgument("negative workload");
  if (per_layer.size() > 1 && static_cast<int>(per_layer.size()) != chunk.layers()) {
    throw InvalidArgument("per-layer strategy count does not match chunk size");
  }
  const auto& m = module_of(ctx, chunk.module);
  GraphBuilder b(ctx, m, w);
  b.overhead();
  if (dir == Direction::Forward) {
    for (int l = chunk.lo; l < chunk.hi; ++l) b.forward_layer(l, strategy_at(per_layer, l - chunk.lo));
  } else {
    for (int l = chunk.hi - 1; l >= chunk.lo; --l) b.backward_layer(l, strategy_at(per_layer, l - chunk.lo));
  }
  TensorNode weights;
  weights.name = "weights";
  weights.device = kGpuDevice;
  weights.bytes = static_cast<int64_t>(ctx.config.bytes_per_param * static_cast<double>(layer_param_count(m)) *
                                       chunk.layers() / tp_of(ctx));
  b.graph().add_tensor(std::move(weights));
  return std::move(b.graph());
}

namespace {

LayerCost single_layer_cost(const CostContext& ctx, const ModalityModuleSpec& m, const WorkShape& w,
                            LayerStrategy st) {
  const auto devices = stage_devices(ctx);
  GraphBuilder fw(ctx, m, w);
  fw.forward_layer(0, st);
  GraphBuilder bw(ctx, m, w);
  bw.backward_layer(0, st);
  LayerCost c;
  c.fw_s = fw.graph().operators().empty() ? 0.0 : simulate(fw.graph(), devices).makespan;
  c.bw_s = bw.graph().operators().empty() ? 0.0 : simulate(bw.graph(), devices).makespan;
  c.held_bytes = layer_held_bytes(ctx, m, w, st);
  return c;
}

}  // namespace

StageCost compute_stage_cost(const CostContext& ctx, const Chunk& chunk, const WorkShape& w,
                             LayerStrategy strategy) {
  if (chunk.layers() <= 0) throw EmptyStage("chunk has an empty layer range");
  const auto& m = module_of(ctx, chunk.module);
  StageCost c;
  c.shape = w;
  c.strategy = strategy;
  // Layers of one module are identical, so one evaluation per strategy.
  std::array<LayerCost, kNumLayerStrategies> per{};
  for (auto st : kAllLayerStrategies) per[static_cast<size_t>(st)] = single_layer_cost(ctx, m, w, st);
  c.layers.assign(static_cast<size_t>(chunk.layers()), per);
  c.overhead_s = (w.tokens > 0) ? ctx.config.stage_overhead_s : 0.0;
  c.fw_s = c.overhead_s;
  c.bw_s = c.overhead_s;
  for (const auto& l : c.layers) {
    const auto& lc = l[static_cast<size_t>(strategy)];
    c.fw_s += lc.fw_s;
    c.bw_s += lc.bw_s;
    c.activation_bytes += lc.held_bytes;
  }
  c.fw_flops = layer_forward_flops(m, w, ctx.parallel.tp) * chunk.layers();
  c.param_bytes = static_cast<int64_t>(ctx.config.bytes_per_param * static_cast<double>(layer_param_count(m)) *
                                       chunk.layers() / tp_of(ctx));
  c.boundary_bytes = boundary_bytes(ctx, m, w);
  return c;
}

double module_latency(const CostContext& ctx, int module, const WorkShape& w, int num_chunks) {
  const auto& m = module_of(ctx, module);
  const auto lc = single_layer_cost(ctx, m, w, LayerStrategy::None);
  const double overhead = (w.tokens > 0) ? ctx.config.stage_overhead_s : 0.0;
  return 2.0 * overhead * num_chunks + m.layers * (lc.fw_s + lc.bw_s);
}

std::vector<int64_t> static_memory_per_rank(const CostContext& ctx, const ChunkPlacement& placement) {
  std::vector<int64_t> out(static_cast<size_t>(placement.num_ranks), 0);
  for (const auto& c : placement.chunks) {
    const auto& m = module_of(ctx, c.module);
    out[static_cast<size_t>(c.rank)] += static_cast<int64_t>(
        ctx.config.state_bytes_per_param * static_cast<double>(layer_param_count(m)) * c.layers() / tp_of(ctx));
  }
  return out;
}

// ---------------------------------------------------------------------------

size_t StageCostTable::KeyHash::operator()(const Key& k) const noexcept {
  size_t h = std::hash<int>{}(k.chunk);
  auto mix = [&h](uint64_t v) { h ^= std::hash<uint64_t>{}(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
  mix(static_cast<uint64_t>(k.instances));
  mix(static_cast<uint64_t>(k.tokens));
  mix(static_cast<uint64_t>(k.sum_sq));
  mix(static_cast<uint64_t>(k.strategy));
  return h;
}

StageCostTable::StageCostTable(std::shared_ptr<const CostContext> ctx, ChunkPlacement placement)
    : ctx_(std::move(ctx)), placement_(std::move(placement)) {
  if (auto errors = validate_placement(ctx_->model, placement_); !errors.empty()) {
    throw InvalidArgument("invalid placement: " + errors.front());
  }
}

const StageCost& StageCostTable::get(int chunk, const WorkShape& w, LayerStrategy strategy) const {
  if (chunk < 0 || chunk >= static_cast<int>(placement_.chunks.size())) {
    throw InvalidArgument("chunk index out of range");
  }
  const Key key{chunk, w.instances, w.tokens, w.sum_sq, static_cast<int>(strategy)};
  {
    std::shared_lock lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return *it->second;
  }
  auto cost = std::make_unique<StageCost>(
      compute_stage_cost(*ctx_, placement_.chunks[static_cast<size_t>(chunk)], w, strategy));
  cost->chunk = chunk;
  std::unique_lock lock(mu_);
  auto [it, inserted] = cache_.try_emplace(key, std::move(cost));
  return *it->second;
}

size_t StageCostTable::size() const {
  std::shared_lock lock(mu_);
  return cache_.size();
}

}  // namespace mmpipe
