// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <queue>

#include "mmpipe/errors.hpp"

namespace mmpipe {

int SimGraph::add_operator(OperatorNode op) {
  op.id = static_cast<int>(ops_.size());
  for (int p : op.predecessors) {
    if (p < 0 || p >= op.id) {
      // Forward references are allowed only through explicit edges added
      // later, which keeps ids a valid insertion order.
      if (p < 0) throw InvalidArgument("negative predecessor id");
    }
  }
  ops_.push_back(std::move(op));
  return ops_.back().id;
}

int SimGraph::add_tensor(TensorNode tensor) {
  tensor.id = static_cast<int>(tensors_.size());
  if (tensor.bytes < 0) throw InvalidArgument("tensor bytes must be non-negative");
  tensors_.push_back(std::move(tensor));
  return tensors_.back().id;
}

std::vector<int> SimGraph::entries() const {
  std::vector<int> out;
  for (const auto& op : ops_) {
    if (op.predecessors.empty()) out.push_back(op.id);
  }
  return out;
}

std::vector<int> SimGraph::exits() const {
  std::vector<bool> has_succ(ops_.size(), false);
  for (const auto& op : ops_) {
    for (int p : op.predecessors) {
      if (p >= 0 && p < static_cast<int>(ops_.size())) has_succ[static_cast<size_t>(p)] = true;
    }
  }
  std::vector<int> out;
  for (const auto& op : ops_) {
    if (!has_succ[static_cast<size_t>(op.id)]) out.push_back(op.id);
  }
  return out;
}

double op_latency(const OperatorNode& node, const DeviceSpec& dev) {
  if (node.fixed_seconds) return *node.fixed_seconds;
  if (node.kind == DeviceKind::Cpu) return 0.0;
  const double t_fop = dev.alpha_fop * node.flops / dev.flops;
  const double t_mem = dev.alpha_mem * node.mem_bytes / dev.mem_bandwidth;
  const double t_net = dev.alpha_net * node.net_bytes / dev.net_bandwidth;
  return std::max({t_fop, t_mem, t_net});
}

SimTimeline simulate(const SimGraph& graph, const std::map<int, DeviceSpec>& devices) {
  const auto& ops = graph.operators();
  const size_t n = ops.size();
  std::vector<std::vector<int>> succ(n);
  std::vector<int> indeg(n, 0);
  for (const auto& op : ops) {
    for (int p : op.predecessors) {
      if (p < 0 || p >= static_cast<int>(n)) throw InvalidArgument("unknown predecessor id");
      succ[static_cast<size_t>(p)].push_back(op.id);
      ++indeg[static_cast<size_t>(op.id)];
    }
  }

  SimTimeline tl;
  tl.start.assign(n, 0.0);
  tl.end.assign(n, 0.0);
  std::map<int, double> device_free;
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (size_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) ready.push(static_cast<int>(i));
  }
  size_t done = 0;
  while (!ready.empty()) {
    const int id = ready.top();
    ready.pop();
    const auto& op = ops[static_cast<size_t>(id)];
    auto dev_it = devices.find(op.device);
    if (dev_it == devices.end() && !(op.kind == DeviceKind::Cpu || op.fixed_seconds)) {
      throw NotFound("no DeviceSpec for device " + std::to_string(op.device));
    }
    double start = device_free[op.device];
    for (int p : op.predecessors) start = std::max(start, tl.end[static_cast<size_t>(p)]);
    const double lat = dev_it == devices.end() ? op_latency(op, DeviceSpec{}) : op_latency(op, dev_it->second);
    tl.start[static_cast<size_t>(id)] = start;
    tl.end[static_cast<size_t>(id)] = start + lat;
    device_free[op.device] = start + lat;
    tl.makespan = std::max(tl.makespan, start + lat);
    ++done;
    for (int s : succ[static_cast<size_t>(id)]) {
      if (--indeg[static_cast<size_t>(s)] == 0) ready.push(s);
    }
  }
  if (done != n) throw CycleDetected("operator graph is not a DAG");

  // Tensor lifetimes: [producer end, last consumer end); persistent tensors
  // and tensors without consumers stay live until the end of the window.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::map<int, std::map<double, int64_t>> deltas;
  for (const auto& t : graph.tensors()) {
    const double alloc = t.producer ? tl.end[static_cast<size_t>(*t.producer)] : 0.0;
    double free_at = kInf;
    if (t.producer && !t.consumers.empty()) {
      free_at = 0;
      for (int c : t.consumers) free_at = std::max(free_at, tl.end[static_cast<size_t>(c)]);
    }
    if (!(alloc < free_at)) continue;
    deltas[t.device][alloc] += t.bytes;
    if (free_at != kInf) deltas[t.device][free_at] -= t.bytes;
  }
  for (const auto& [device, events] : deltas) {
    auto& points = tl.memory[device];
    int64_t cur = 0;
    int64_t peak = 0;
    for (const auto& [time, delta] : events) {
      cur += delta;
      points.push_back({time, cur});
      peak = std::max(peak, cur);
    }
    tl.peak_memory[device] = peak;
  }
  return tl;
}

void write_timeline_csv(std::ostream& os, const SimGraph& graph, const SimTimeline& timeline) {
  os << "device,op_id,op_name,start_s,end_s,bytes_delta\n";
  const auto& ops = graph.operators();
  std::vector<int64_t> delta(ops.size(), 0);
  for (const auto& t : graph.tensors()) {
    if (t.producer) delta[static_cast<size_t>(*t.producer)] += t.bytes;
    if (t.producer && !t.consumers.empty()) {
      int last = t.consumers.front();
      for (int c : t.consumers) {
        if (timeline.end[static_cast<size_t>(c)] > timeline.end[static_cast<size_t>(last)]) last = c;
      }
      delta[static_cast<size_t>(last)] -= t.bytes;
    }
  }
  char buf[64];
  for (const auto& op : ops) {
    os << op.device << ',' << op.id << ',' << op.name << ',';
    std::snprintf(buf, sizeof buf, "%.9g", timeline.start[static_cast<size_t>(op.id)]);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.9g", timeline.end[static_cast<size_t>(op.id)]);
    os << buf << ',' << delta[static_cast<size_t>(op.id)] << '\n';
  }
}

// ---------------------------------------------------------------------------

CalibrationResult calibrate(std::span<const CalibrationObservation> observations, const DeviceSpec& dev) {
  constexpr std::array<const char*, 3> kNames = {"alpha_fop", "alpha_mem", "alpha_net"};
  const size_t n = observations.size();
  // Unit-efficiency latency terms per observation and factor.
  std::vector<std::array<double, 3>> base(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& o = observations[i];
    if (!(o.seconds > 0)) throw InvalidArgument("observed latencies must be positive");
    base[i] = {o.flops / dev.flops, o.mem_bytes / dev.mem_bandwidth, o.net_bytes / dev.net_bandwidth};
  }

  std::array<double, 3> alpha = {dev.alpha_fop, dev.alpha_mem, dev.alpha_net};
  std::array<bool, 3> seen{};
  // Upper-envelope start: the true factor can never exceed y / x.
  for (int k = 0; k < 3; ++k) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (base[i][k] > 0) best = std::min(best, observations[i].seconds / base[i][k]);
    }
    if (std::isfinite(best)) {
      alpha[k] = best;
      seen[k] = true;
    }
  }

  std::vector<int> assign(n, -1);
  CalibrationResult result;
  std::array<bool, 3> fitted{};
  for (int iter = 0; iter < 100; ++iter) {
    result.iterations = iter + 1;
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int arg = -1;
      double best = -1;
      for (int k = 0; k < 3; ++k) {
        if (!seen[k] || base[i][k] <= 0) continue;
        const double v = alpha[k] * base[i][k];
        if (v > best) {
          best = v;
          arg = k;
        }
      }
      if (arg != assign[i]) {
        assign[i] = arg;
        changed = true;
      }
    }
    // Least squares on relative error: minimise sum (a*r - 1)^2, r = x / y.
    fitted = {};
    for (int k = 0; k < 3; ++k) {
      double num = 0;
      double den = 0;
      for (size_t i = 0; i < n; ++i) {
        if (assign[i] != k) continue;
        const double r = base[i][k] / observations[i].seconds;
        num += r;
        den += r * r;
      }
      if (den > 0) {
        alpha[k] = num / den;
        fitted[k] = true;
      }
    }
    if (!changed && iter > 0) break;
  }

  std::array<double, 3> original = {dev.alpha_fop, dev.alpha_mem, dev.alpha_net};
  for (int k = 0; k < 3; ++k) {
    if (!fitted[k]) {
      alpha[k] = original[k];
      result.insufficient.emplace_back(kNames[static_cast<size_t>(k)]);
    }
    alpha[k] = std::clamp(alpha[k], 1e-12, 1.0);
  }
  result.device = dev;
  result.device.alpha_fop = alpha[0];
  result.device.alpha_mem = alpha[1];
  result.device.alpha_net = alpha[2];

  double err = 0;
  for (size_t i = 0; i < n; ++i) {
    OperatorNode op;
    op.flops = observations[i].flops;
    op.mem_bytes = observations[i].mem_bytes;
    op.net_bytes = observations[i].net_bytes;
    err += std::abs(op_latency(op, result.device) / observations[i].seconds - 1.0);
  }
  result.mean_relative_error = n ? err / static_cast<double>(n) : 0.0;
  return result;
}

}  // namespace mmpipe
