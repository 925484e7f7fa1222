// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model architecture, device capabilities and parallel configuration.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmpipe/workload.hpp"

namespace mmpipe {

enum class ModuleRole { Encoder, Backbone, Decoder };

const char* to_string(ModuleRole role);
ModuleRole module_role_from_string(const std::string& s);

/// One modality module (ViT encoder, LM backbone, DiT decoder, ...).
struct ModalityModuleSpec {
  std::string name;
  ModalityId modality;
  ModuleRole role = ModuleRole::Encoder;
  int layers = 1;
  int64_t embed_dim = 1;
  int64_t ffn_dim = 1;
  int attn_heads = 1;
  int attn_groups = 1;
  // Set for instance-based modalities (one image -> N patch tokens). Empty
  // for token-stream modalities whose workload is counted in tokens.
  std::optional<int64_t> tokens_per_instance;
};

/// Adapter link between modules. Priced as a fixed latency added to the
/// cross-module message (zero by default).
struct AdapterEdge {
  int producer = 0;
  int consumer = 0;
  double latency_s = 0;
};

struct ModelSpec {
  std::string name;
  std::vector<ModalityModuleSpec> modules;  // dependency order
  std::vector<AdapterEdge> edges;
  int64_t context_length = 8192;

  int module_index(const std::string& module_name) const;
  // Index of the module that consumes `modality`, or -1.
  int module_for_modality(const std::string& modality) const;
  std::vector<int> consumers(int module) const;
  std::vector<int> producers(int module) const;
};

/// All invariant violations, empty when the model is valid.
std::vector<std::string> validate_model(const ModelSpec& spec);

struct DeviceSpec {
  std::string name;
  double flops = 1;          // F, FLOP/s
  double mem_bandwidth = 1;  // B_mem, bytes/s
  double net_bandwidth = 1;  // B_net, bytes/s
  int64_t memory_bytes = 1;  // M
  double alpha_fop = 1;
  double alpha_mem = 1;
  double alpha_net = 1;
};

std::vector<std::string> validate_device(const DeviceSpec& dev);

/// "h800", "h20", "h100".
DeviceSpec builtin_device(const std::string& name);
std::vector<std::string> builtin_device_names();

struct ParallelConfig {
  int pp = 1;  // P, pipeline ranks
  int tp = 1;
  int dp = 1;
};

struct ModelPreset {
  ModelSpec model;
  ParallelConfig parallel;
};

/// VLM-S/M/L and T2V-S/L. Throws NotFound for unknown names.
const std::map<std::string, ModelPreset>& builtin_models();
const ModelPreset& builtin_model(const std::string& name);

/// One model chunk: layers [lo, hi) of `module`, pipeline segment `segment`,
/// placed on `rank`.
struct Chunk {
  int module = 0;
  int lo = 0;
  int hi = 0;
  int segment = 0;
  int rank = 0;

  int layers() const { return hi - lo; }
  friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct ChunkPlacement {
  int num_ranks = 1;
  std::vector<Chunk> chunks;

  // Chunk index for (module, segment, rank), or -1.
  int find(int module, int segment, int rank) const;
};

/// Coverage and segment-completeness violations, empty when valid.
std::vector<std::string> validate_placement(const ModelSpec& model, const ChunkPlacement& placement);

}  // namespace mmpipe
