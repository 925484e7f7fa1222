// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical training simulator: operator/tensor DAGs, the
// max-of-bottlenecks latency model, list scheduling with per-device
// serialization, and memory timelines derived from tensor lifetimes.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmpipe/model.hpp"

namespace mmpipe {

enum class DeviceKind { Gpu, Cpu, Link };

struct OperatorNode {
  int id = -1;  // assigned by SimGraph::add_operator
  std::string name;
  int device = 0;
  DeviceKind kind = DeviceKind::Gpu;
  double flops = 0;      // N_fop
  double mem_bytes = 0;  // N_mem
  double net_bytes = 0;  // N_net
  // Bypasses the analytic model when set (cost overrides, fixed overheads).
  std::optional<double> fixed_seconds;
  std::vector<int> predecessors;
};

struct TensorNode {
  int id = -1;
  std::string name;
  int device = 0;
  int64_t bytes = 0;
  std::optional<int> producer;  // none: persistent for the whole window
  std::vector<int> consumers;
};

class SimGraph {
 public:
  int add_operator(OperatorNode op);
  int add_tensor(TensorNode tensor);

  const std::vector<OperatorNode>& operators() const { return ops_; }
  const std::vector<TensorNode>& tensors() const { return tensors_; }
  std::vector<int> entries() const;  // operators without predecessors
  std::vector<int> exits() const;    // operators without successors

 private:
  std::vector<OperatorNode> ops_;
  std::vector<TensorNode> tensors_;
};

/// Memory on a device is `bytes` from `time` until the next point.
struct MemoryPoint {
  double time = 0;
  int64_t bytes = 0;
  friend bool operator==(const MemoryPoint&, const MemoryPoint&) = default;
};

struct SimTimeline {
  std::vector<double> start;
  std::vector<double> end;
  std::map<int, std::vector<MemoryPoint>> memory;
  std::map<int, int64_t> peak_memory;
  double makespan = 0;
};

/// max{a_fop*N_fop/F, a_mem*N_mem/B_mem, a_net*N_net/B_net}; CPU-side
/// operators are free unless they carry a fixed latency.
double op_latency(const OperatorNode& node, const DeviceSpec& dev);

/// Topological list schedule (lowest id first among ready operators) with
/// per-device serialization. Throws CycleDetected or NotFound (device).
SimTimeline simulate(const SimGraph& graph, const std::map<int, DeviceSpec>& devices);

/// CSV rows: device,op_id,op_name,start_s,end_s,bytes_delta.
void write_timeline_csv(std::ostream& os, const SimGraph& graph, const SimTimeline& timeline);

// ---------------------------------------------------------------------------
// Calibration of efficiency factors from measured operator latencies.

struct CalibrationObservation {
  double flops = 0;
  double mem_bytes = 0;
  double net_bytes = 0;
  double seconds = 0;
};

struct CalibrationResult {
  DeviceSpec device;
  // Factors without an observation bound by them ("alpha_fop", ...); their
  // values are left unchanged.
  std::vector<std::string> insufficient;
  double mean_relative_error = 0;
  int iterations = 0;
};

CalibrationResult calibrate(std::span<const CalibrationObservation> observations,
                            const DeviceSpec& dev);

}  // namespace mmpipe
