// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/model.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "mmpipe/errors.hpp"

namespace mmpipe {

const char* to_string(ModuleRole role) {
  switch (role) {
    case ModuleRole::Encoder: return "encoder";
    case ModuleRole::Backbone: return "backbone";
    case ModuleRole::Decoder: return "decoder";
  }
  return "encoder";
}

ModuleRole module_role_from_string(const std::string& s) {
  if (s == "encoder") return ModuleRole::Encoder;
  if (s == "backbone") return ModuleRole::Backbone;
  if (s == "decoder") return ModuleRole::Decoder;
  throw ParseError("unknown module role '" + s + "'");
}

int ModelSpec::module_index(const std::string& module_name) const {
  for (size_t i = 0; i < modules.size(); ++i) {
    if (modules[i].name == module_name) return static_cast<int>(i);
  }
  return -1;
}

int ModelSpec::module_for_modality(const std::string& modality) const {
  for (size_t i = 0; i < modules.size(); ++i) {
    if (modules[i].modality.name == modality) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> ModelSpec::consumers(int module) const {
  std::vector<int> out;
  for (const auto& e : edges) {
    if (e.producer == module) out.push_back(e.consumer);
  }
  return out;
}

std::vector<int> ModelSpec::producers(int module) const {
  std::vector<int> out;
  for (const auto& e : edges) {
    if (e.consumer == module) out.push_back(e.producer);
  }
  return out;
}

std::vector<std::string> validate_model(const ModelSpec& spec) {
  std::vector<std::string> errors;
  const int n = static_cast<int>(spec.modules.size());
  if (n == 0) {
    errors.emplace_back("model has no modules");
    return errors;
  }
  std::set<std::string> modality_names;
  std::set<std::string> module_names;
  int backbones = 0;
  int decoders = 0;
  for (int i = 0; i < n; ++i) {
    const auto& m = spec.modules[i];
    const std::string tag = "module '" + m.name + "'";
    if (!module_names.insert(m.name).second) errors.push_back(tag + ": duplicate module name");
    if (!modality_names.insert(m.modality.name).second) {
      errors.push_back(tag + ": modality '" + m.modality.name + "' already has a module");
    }
    if (m.modality.index < 0 || m.modality.index >= n) {
      errors.push_back(tag + ": modality index out of range");
    }
    if (m.layers < 1) errors.push_back(tag + ": layer count must be >= 1");
    if (m.embed_dim <= 0 || m.ffn_dim <= 0 || m.attn_heads <= 0 || m.attn_groups <= 0) {
      errors.push_back(tag + ": dimensions must be positive");
    } else if (m.attn_heads % m.attn_groups != 0) {
      errors.push_back(tag + ": attention groups must divide attention heads");
    }
    if (m.tokens_per_instance && *m.tokens_per_instance <= 0) {
      errors.push_back(tag + ": tokens_per_instance must be positive");
    }
    if (m.role == ModuleRole::Backbone) ++backbones;
    if (m.role == ModuleRole::Decoder) ++decoders;
  }
  std::set<int> indices;
  for (const auto& m : spec.modules) indices.insert(m.modality.index);
  if (static_cast<int>(indices.size()) != n) errors.emplace_back("modality indices are not unique");

  if (backbones > 1) errors.emplace_back("multiple backbones");
  if (backbones == 0 && decoders == 0) errors.emplace_back("missing backbone");

  for (const auto& e : spec.edges) {
    if (e.producer < 0 || e.producer >= n || e.consumer < 0 || e.consumer >= n) {
      errors.emplace_back("edge references an unknown module");
      return errors;
    }
    if (e.latency_s < 0) errors.emplace_back("edge latency must be non-negative");
    // Modules are listed in dependency order, so every edge points forward.
    if (e.producer >= e.consumer) {
      errors.push_back("edge " + spec.modules[e.producer].name + " -> " +
                       spec.modules[e.consumer].name + " breaks dependency order (cycle)");
    }
  }

  // Reachability from each encoder to the backbone (or to a decoder for
  // backbone-less generation models).
  std::function<bool(int, std::set<int>&)> reaches_sink = [&](int at, std::set<int>& seen) {
    if (!seen.insert(at).second) return false;
    const auto role = spec.modules[at].role;
    if (role == ModuleRole::Backbone) return true;
    if (backbones == 0 && role == ModuleRole::Decoder) return true;
    for (int c : spec.consumers(at)) {
      if (reaches_sink(c, seen)) return true;
    }
    return false;
  };
  for (int i = 0; i < n; ++i) {
    if (spec.modules[i].role != ModuleRole::Encoder) continue;
    std::set<int> seen;
    if (!reaches_sink(i, seen)) errors.push_back("dangling encoder '" + spec.modules[i].name + "'");
  }
  if (spec.context_length <= 0) errors.emplace_back("context length must be positive");
  return errors;
}

std::vector<std::string> validate_device(const DeviceSpec& dev) {
  std::vector<std::string> errors;
  if (!(dev.flops > 0) || !(dev.mem_bandwidth > 0) || !(dev.net_bandwidth > 0) || dev.memory_bytes <= 0) {
    errors.emplace_back("device capabilities must be strictly positive");
  }
  for (double a : {dev.alpha_fop, dev.alpha_mem, dev.alpha_net}) {
    if (!(a > 0) || a > 1) {
      errors.emplace_back("efficiency factors must lie in (0, 1]");
      break;
    }
  }
  return errors;
}

DeviceSpec builtin_device(const std::string& name) {
  constexpr int64_t kGiB = int64_t{1} << 30;
  if (name == "h800") return {"h800", 989e12, 3.35e12, 200e9, 80 * kGiB, 1, 1, 1};
  if (name == "h100") return {"h100", 989e12, 3.35e12, 450e9, 80 * kGiB, 1, 1, 1};
  if (name == "h20") return {"h20", 148e12, 4.0e12, 450e9, 96 * kGiB, 1, 1, 1};
  throw NotFound("no device preset named '" + name + "'");
}

std::vector<std::string> builtin_device_names() { return {"h100", "h20", "h800"}; }

namespace {

struct Arch {
  const char* name;
  int layers;
  int64_t h;
  int64_t f;
  int heads;
  int groups;
};

// Published layer/dimension numbers of the evaluated architectures.
constexpr Arch kVit5B{"vit-5b", 63, 1792, 15360, 16, 16};
constexpr Arch kVit22B{"vit-22b", 48, 6144, 24576, 48, 48};
constexpr Arch kLlama3_8B{"llama3-8b", 32, 4096, 14336, 32, 8};
constexpr Arch kQwen2_32B{"qwen2-32b", 64, 5120, 27648, 40, 8};
constexpr Arch kQwen2_72B{"qwen2-72b", 80, 8192, 29568, 64, 8};
constexpr Arch kDit5B{"dit-5b", 28, 3584, 10240, 28, 28};
constexpr Arch kDit30B{"dit-30b", 48, 6144, 24576, 48, 48};

ModalityModuleSpec make_module(const Arch& a, const char* modality, int index, ModuleRole role,
                               std::optional<int64_t> tokens_per_instance) {
  ModalityModuleSpec m;
  m.name = a.name;
  m.modality = {modality, index};
  m.role = role;
  m.layers = a.layers;
  m.embed_dim = a.h;
  m.ffn_dim = a.f;
  m.attn_heads = a.heads;
  m.attn_groups = a.groups;
  m.tokens_per_instance = tokens_per_instance;
  return m;
}

ModelPreset vlm(const char* name, const Arch& vit, const Arch& lm, int tp, int pp) {
  ModelPreset p;
  p.model.name = name;
  p.model.modules.push_back(make_module(vit, "image", 0, ModuleRole::Encoder, 169));
  p.model.modules.push_back(make_module(lm, "text", 1, ModuleRole::Backbone, std::nullopt));
  p.model.edges.push_back({0, 1, 0.0});
  p.model.context_length = 8192;
  p.parallel = {pp, tp, 1};
  return p;
}

// Text-to-video: an LM text encoder conditioning a DiT video decoder. Video
// is a token-stream modality; the clip-duration to latent-token factor lives
// in the sampler's DistributionSpec.
ModelPreset t2v(const char* name, const Arch& lm, const Arch& dit, int tp, int pp) {
  ModelPreset p;
  p.model.name = name;
  p.model.modules.push_back(make_module(lm, "text", 0, ModuleRole::Encoder, std::nullopt));
  p.model.modules.push_back(make_module(dit, "video", 1, ModuleRole::Decoder, std::nullopt));
  p.model.edges.push_back({0, 1, 0.0});
  p.model.context_length = 8192;
  p.parallel = {pp, tp, 1};
  return p;
}

}  // namespace

const std::map<std::string, ModelPreset>& builtin_models() {
  static const std::map<std::string, ModelPreset> presets = {
      {"VLM-S", vlm("VLM-S", kVit5B, kLlama3_8B, 4, 4)},
      {"VLM-M", vlm("VLM-M", kVit5B, kQwen2_32B, 8, 4)},
      {"VLM-L", vlm("VLM-L", kVit22B, kQwen2_72B, 8, 8)},
      {"T2V-S", t2v("T2V-S", kLlama3_8B, kDit5B, 4, 4)},
      {"T2V-L", t2v("T2V-L", kQwen2_32B, kDit30B, 8, 8)},
  };
  return presets;
}

const ModelPreset& builtin_model(const std::string& name) {
  const auto& presets = builtin_models();
  auto it = presets.find(name);
  if (it == presets.end()) throw NotFound("no model preset named '" + name + "'");
  return it->second;
}

int ChunkPlacement::find(int module, int segment, int rank) const {
  for (size_t i = 0; i < chunks.size(); ++i) {
    const auto& c = chunks[i];
    if (c.module == module && c.segment == segment && c.rank == rank) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> validate_placement(const ModelSpec& model, const ChunkPlacement& placement) {
  std::vector<std::string> errors;
  const int P = placement.num_ranks;
  for (size_t m = 0; m < model.modules.size(); ++m) {
    const auto& spec = model.modules[m];
    std::vector<int> owner(static_cast<size_t>(spec.layers), 0);
    std::map<int, std::vector<int>> ranks_by_segment;
    for (const auto& c : placement.chunks) {
      if (c.module != static_cast<int>(m)) continue;
      if (c.lo < 0 || c.hi > spec.layers || c.lo >= c.hi) {
        errors.push_back("module '" + spec.name + "': chunk range out of bounds");
        continue;
      }
      if (c.rank < 0 || c.rank >= P) errors.push_back("module '" + spec.name + "': bad rank");
      for (int l = c.lo; l < c.hi; ++l) ++owner[static_cast<size_t>(l)];
      ranks_by_segment[c.segment].push_back(c.rank);
    }
    for (int l = 0; l < spec.layers; ++l) {
      if (owner[static_cast<size_t>(l)] != 1) {
        errors.push_back("module '" + spec.name + "': layer " + std::to_string(l) +
                         (owner[static_cast<size_t>(l)] == 0 ? " is uncovered" : " is covered twice"));
        break;
      }
    }
    for (const auto& [k, ranks] : ranks_by_segment) {
      auto sorted = ranks;
      std::sort(sorted.begin(), sorted.end());
      bool complete = static_cast<int>(sorted.size()) == P;
      for (int r = 0; complete && r < P; ++r) complete = sorted[static_cast<size_t>(r)] == r;
      if (!complete) {
        errors.push_back("module '" + spec.name + "': segment " + std::to_string(k) +
                         " does not hold exactly one chunk per rank");
      }
    }
    // Segment k must span ranks in layer order 0..P-1.
    std::vector<const Chunk*> ordered;
    for (const auto& c : placement.chunks) {
      if (c.module == static_cast<int>(m)) ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(), [](const Chunk* a, const Chunk* b) { return a->lo < b->lo; });
    for (size_t i = 0; i < ordered.size(); ++i) {
      const int expect_segment = static_cast<int>(i) / std::max(P, 1);
      const int expect_rank = static_cast<int>(i) % std::max(P, 1);
      if (ordered[i]->segment != expect_segment || ordered[i]->rank != expect_rank) {
        errors.push_back("module '" + spec.name + "': chunks are not ordered segment-major by rank");
        break;
      }
    }
  }
  return errors;
}

}  // namespace mmpipe
