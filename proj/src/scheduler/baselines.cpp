// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "detail.hpp"
#include "mmpipe/errors.hpp"

namespace mmpipe {

Schedule schedule_1f1b(const ScheduleProblem& problem, std::optional<std::vector<int>> option) {
  const int P = problem.num_ranks;
  // One forward and one backward segment per microbatch.
  std::map<int, int> fw_seg, bw_seg;
  for (const auto& s : problem.segments) {
    auto& m = s.dir == Direction::Forward ? fw_seg : bw_seg;
    if (!m.emplace(s.microbatch, s.id).second) {
      throw InvalidArgument("1F1B needs exactly one forward segment per microbatch");
    }
  }
  if (fw_seg.size() != bw_seg.size()) throw InvalidArgument("unpaired segments");
  std::vector<int> mbs;
  for (const auto& [mb, seg] : fw_seg) mbs.push_back(mb);
  const int n = static_cast<int>(mbs.size());

  std::vector<std::vector<int>> order(static_cast<size_t>(P));
  for (int r = 0; r < P; ++r) {
    auto& o = order[static_cast<size_t>(r)];
    auto fw = [&](int i) { return fw_seg.at(mbs[static_cast<size_t>(i)]) * P + r; };
    auto bw = [&](int i) { return bw_seg.at(mbs[static_cast<size_t>(i)]) * P + r; };
    const int warm = std::min(P - r, n);
    for (int i = 0; i < warm; ++i) o.push_back(fw(i));
    for (int i = 0; i < n; ++i) {
      o.push_back(bw(i));
      if (warm + i < n) o.push_back(fw(warm + i));
    }
  }
  return retime(problem, std::move(order), option ? *option : detail::default_options(problem));
}

Schedule schedule_encoder_first(const ScheduleProblem& problem, std::optional<std::vector<int>> option) {
  const int P = problem.num_ranks;
  auto role_of = [&](int stage) {
    const auto& seg = problem.segments[static_cast<size_t>(problem.stages[static_cast<size_t>(stage)].segment)];
    return problem.module_roles[static_cast<size_t>(seg.module)];
  };
  // Per rank: encoder forwards outstanding, backbone forwards in flight,
  // and the 1F1B window in backbone stages.
  std::vector<int> encoder_left(static_cast<size_t>(P), 0);
  std::vector<int> inflight(static_cast<size_t>(P), 0);
  std::vector<int> window(static_cast<size_t>(P), 0);
  std::map<int, int> backbone_fw_per_mb;
  for (const auto& st : problem.stages) {
    if (st.dir != Direction::Forward) continue;
    const auto role = role_of(st.id);
    if (role == ModuleRole::Encoder) ++encoder_left[static_cast<size_t>(st.rank)];
    if (role == ModuleRole::Backbone && st.rank == 0) {
      ++backbone_fw_per_mb[problem.segments[static_cast<size_t>(st.segment)].microbatch];
    }
  }
  int per_mb = 1;
  for (const auto& [mb, k] : backbone_fw_per_mb) per_mb = std::max(per_mb, k);
  for (int r = 0; r < P; ++r) window[static_cast<size_t>(r)] = (P - r) * per_mb;

  // Encoder forward classes first, everything else in canonical order.
  std::vector<int> seq;
  for (int c : problem.canonical_order) {
    if (problem.class_dir[static_cast<size_t>(c)] == Direction::Forward &&
        problem.module_roles[static_cast<size_t>(problem.class_module[static_cast<size_t>(c)])] == ModuleRole::Encoder) {
      seq.push_back(c);
    }
  }
  for (int c : problem.canonical_order) {
    if (std::find(seq.begin(), seq.end(), c) == seq.end()) seq.push_back(c);
  }

  detail::InterleaveHooks hooks;
  hooks.gate_memory = false;
  hooks.forward_allowed = [&](int s) {
    if (role_of(s) != ModuleRole::Backbone) return true;
    const auto r = static_cast<size_t>(problem.stages[static_cast<size_t>(s)].rank);
    return encoder_left[r] == 0 && inflight[r] < window[r];
  };
  hooks.on_place = [&](int s) {
    const auto& st = problem.stages[static_cast<size_t>(s)];
    const auto r = static_cast<size_t>(st.rank);
    const auto role = role_of(s);
    if (role == ModuleRole::Encoder && st.dir == Direction::Forward) --encoder_left[r];
    if (role == ModuleRole::Backbone) inflight[r] += st.dir == Direction::Forward ? 1 : -1;
  };
  const auto prio = class_priorities(problem, seq);
  auto s = detail::interleave(problem, prio, option ? *option : detail::default_options(problem), hooks);
  return retime(problem, std::move(s.order), std::move(s.option));
}

// ---------------------------------------------------------------------------

namespace {

class BruteForce {
 public:
  BruteForce(const ScheduleProblem& p, std::vector<int> option) : p_(p), option_(std::move(option)) {
    n_ = p_.stages.size();
    lat_.resize(n_);
    for (size_t i = 0; i < n_; ++i) lat_[i] = p_.latency(static_cast<int>(i), option_[static_cast<size_t>(p_.stages[i].pair)]);
    // Longest path from each stage to the end, including itself.
    tail_.assign(n_, 0.0);
    std::vector<int> topo = topological();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      const auto s = static_cast<size_t>(*it);
      double best = 0;
      for (int succ : p_.stages[s].succs) {
        for (const auto& e : p_.stages[static_cast<size_t>(succ)].preds) {
          if (e.stage == *it) best = std::max(best, e.latency_s + tail_[static_cast<size_t>(succ)]);
        }
      }
      tail_[s] = lat_[s] + best;
    }
    placed_.assign(n_, 0);
    start_.assign(n_, 0.0);
    end_.assign(n_, 0.0);
    free_.assign(static_cast<size_t>(p_.num_ranks), 0.0);
    used_.assign(static_cast<size_t>(p_.num_ranks), 0);
    work_left_.assign(static_cast<size_t>(p_.num_ranks), 0.0);
    for (size_t i = 0; i < n_; ++i) work_left_[static_cast<size_t>(p_.stages[i].rank)] += lat_[i];
    order_.assign(static_cast<size_t>(p_.num_ranks), {});
  }

  Schedule run() {
    dfs(0, -1.0, -1);
    if (!best_) throw Infeasible("no memory-feasible order exists");
    return retime(p_, best_order_, option_);
  }

 private:
  std::vector<int> topological() const {
    std::vector<int> indeg(n_), out;
    for (size_t i = 0; i < n_; ++i) indeg[i] = static_cast<int>(p_.stages[i].preds.size());
    for (size_t i = 0; i < n_; ++i) {
      if (indeg[i] == 0) out.push_back(static_cast<int>(i));
    }
    for (size_t k = 0; k < out.size(); ++k) {
      for (int s : p_.stages[static_cast<size_t>(out[k])].succs) {
        if (--indeg[static_cast<size_t>(s)] == 0) out.push_back(s);
      }
    }
    if (out.size() != n_) throw CycleDetected("stage graph has a cycle");
    return out;
  }

  int64_t act(size_t s) const { return p_.activation(static_cast<int>(s), option_[static_cast<size_t>(p_.stages[s].pair)]); }

  void dfs(size_t count, double last_start, int last_rank) {
    double current = 0;
    for (size_t r = 0; r < free_.size(); ++r) current = std::max(current, free_[r]);
    if (count == n_) {
      if (!best_ || current < *best_) {
        best_ = current;
        best_order_ = order_;
      }
      return;
    }
    // Lower bound: rank load and critical tails of ready stages.
    double lb = current;
    std::vector<std::pair<size_t, double>> ready;
    for (size_t s = 0; s < n_; ++s) {
      if (placed_[s]) continue;
      bool ok = true;
      double t = 0;
      for (const auto& e : p_.stages[s].preds) {
        if (!placed_[static_cast<size_t>(e.stage)]) {
          ok = false;
          break;
        }
        t = std::max(t, end_[static_cast<size_t>(e.stage)] + e.latency_s);
      }
      if (!ok) continue;
      const auto r = static_cast<size_t>(p_.stages[s].rank);
      t = std::max(t, free_[r]);
      lb = std::max(lb, t + tail_[s]);
      ready.push_back({s, t});
    }
    for (size_t r = 0; r < free_.size(); ++r) lb = std::max(lb, free_[r] + work_left_[r]);
    if (best_ && lb >= *best_ - 1e-12) return;

    std::sort(ready.begin(), ready.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    for (const auto& [s, t] : ready) {
      const auto& st = p_.stages[s];
      // Canonical enumeration: stages appended in (start, rank) order.
      if (t < last_start - 1e-12) continue;
      if (t <= last_start + 1e-12 && st.rank < last_rank) continue;
      const auto r = static_cast<size_t>(st.rank);
      if (st.dir == Direction::Forward && used_[r] + act(s) > p_.capacity[r]) continue;
      const double prev_free = free_[r];
      placed_[s] = 1;
      start_[s] = t;
      end_[s] = t + lat_[s];
      free_[r] = end_[s];
      work_left_[r] -= lat_[s];
      used_[r] += st.dir == Direction::Forward ? act(s) : -act(s);
      order_[r].push_back(static_cast<int>(s));
      dfs(count + 1, t, st.rank);
      order_[r].pop_back();
      used_[r] -= st.dir == Direction::Forward ? act(s) : -act(s);
      work_left_[r] += lat_[s];
      free_[r] = prev_free;
      placed_[s] = 0;
    }
  }

  const ScheduleProblem& p_;
  std::vector<int> option_;
  size_t n_ = 0;
  std::vector<double> lat_, tail_, start_, end_, free_, work_left_;
  std::vector<char> placed_;
  std::vector<int64_t> used_;
  std::vector<std::vector<int>> order_, best_order_;
  std::optional<double> best_;
};

}  // namespace

Schedule brute_force_schedule(const ScheduleProblem& problem, std::optional<std::vector<int>> option) {
  if (problem.stages.size() > static_cast<size_t>(kBruteForceStageLimit)) {
    throw TooLarge(std::to_string(problem.stages.size()) + " stages exceed the brute-force limit of " +
                   std::to_string(kBruteForceStageLimit));
  }
  BruteForce bf(problem, option ? *option : detail::default_options(problem));
  return bf.run();
}

}  // namespace mmpipe
