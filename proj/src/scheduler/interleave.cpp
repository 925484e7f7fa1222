// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <limits>

#include "detail.hpp"
#include "mmpipe/errors.hpp"

namespace mmpipe {
namespace detail {

std::vector<int> default_options(const ScheduleProblem& problem) { return std::vector<int>(problem.pairs.size(), 0); }

namespace {

struct Pick {
  int stage = -1;
  double eff = 0;
};

}  // namespace

Schedule interleave(const ScheduleProblem& problem, const std::vector<int>& priority, const std::vector<int>& option,
                    const InterleaveHooks& hooks) {
  const int P = problem.num_ranks;
  const size_t n = problem.stages.size();
  if (option.size() != problem.pairs.size()) throw InvalidArgument("one option per stage pair is required");

  std::vector<int> pending(n);
  std::vector<double> t_start(n, 0.0);
  std::vector<double> end(n, 0.0);
  std::vector<std::vector<int>> ready_fw(static_cast<size_t>(P)), ready_bw(static_cast<size_t>(P));
  for (size_t i = 0; i < n; ++i) {
    const auto& st = problem.stages[i];
    pending[i] = static_cast<int>(st.preds.size());
    if (pending[i] == 0) {
      (st.dir == Direction::Forward ? ready_fw : ready_bw)[static_cast<size_t>(st.rank)].push_back(static_cast<int>(i));
    }
  }
  std::vector<double> t_last(static_cast<size_t>(P), 0.0);
  std::vector<int> last_dir(static_cast<size_t>(P), -1);
  std::vector<int64_t> used(static_cast<size_t>(P), 0);
  std::vector<std::vector<int>> order(static_cast<size_t>(P));
  std::vector<Pick> pick(static_cast<size_t>(P));
  std::vector<char> dirty(static_cast<size_t>(P), 1);

  auto prio = [&](int s) {
    return priority[static_cast<size_t>(problem.segments[static_cast<size_t>(problem.stages[static_cast<size_t>(s)].segment)].cls)];
  };
  auto act = [&](int s) {
    return problem.activation(s, option[static_cast<size_t>(problem.stages[static_cast<size_t>(s)].pair)]);
  };
  // Higher priority first, then earlier t_start, then lower id.
  auto better = [&](int a, int b) {
    if (prio(a) != prio(b)) return prio(a) > prio(b);
    if (t_start[static_cast<size_t>(a)] != t_start[static_cast<size_t>(b)]) {
      return t_start[static_cast<size_t>(a)] < t_start[static_cast<size_t>(b)];
    }
    return problem.stages[static_cast<size_t>(a)].segment < problem.stages[static_cast<size_t>(b)].segment;
  };

  auto choose = [&](int r) -> Pick {
    const double tl = t_last[static_cast<size_t>(r)];
    int fw_now = -1, bw_now = -1, fw_later = -1, bw_later = -1;
    auto later_better = [&](int a, int b) {
      if (t_start[static_cast<size_t>(a)] != t_start[static_cast<size_t>(b)]) {
        return t_start[static_cast<size_t>(a)] < t_start[static_cast<size_t>(b)];
      }
      return better(a, b);
    };
    for (int s : ready_fw[static_cast<size_t>(r)]) {
      if (hooks.gate_memory && used[static_cast<size_t>(r)] + act(s) > problem.capacity[static_cast<size_t>(r)]) continue;
      if (hooks.forward_allowed && !hooks.forward_allowed(s)) continue;
      if (t_start[static_cast<size_t>(s)] <= tl) {
        if (fw_now < 0 || better(s, fw_now)) fw_now = s;
      } else if (fw_later < 0 || later_better(s, fw_later)) {
        fw_later = s;
      }
    }
    for (int s : ready_bw[static_cast<size_t>(r)]) {
      if (t_start[static_cast<size_t>(s)] <= tl) {
        if (bw_now < 0 || better(s, bw_now)) bw_now = s;
      } else if (bw_later < 0 || later_better(s, bw_later)) {
        bw_later = s;
      }
    }
    Pick p;
    if (fw_now >= 0 && bw_now >= 0) {
      // Both directions are waiting: alternate, emulating 1F1B.
      p.stage = last_dir[static_cast<size_t>(r)] == static_cast<int>(Direction::Forward) ? bw_now : fw_now;
    } else if (fw_now >= 0 || bw_now >= 0) {
      p.stage = fw_now >= 0 ? fw_now : bw_now;
    } else if (fw_later >= 0 || bw_later >= 0) {
      if (fw_later < 0) {
        p.stage = bw_later;
      } else if (bw_later < 0) {
        p.stage = fw_later;
      } else {
        const double a = t_start[static_cast<size_t>(fw_later)], b = t_start[static_cast<size_t>(bw_later)];
        if (a != b) {
          p.stage = a < b ? fw_later : bw_later;
        } else {
          p.stage = prio(fw_later) > prio(bw_later) ? fw_later : bw_later;
        }
      }
    }
    if (p.stage >= 0) p.eff = std::max(tl, t_start[static_cast<size_t>(p.stage)]);
    return p;
  };

  Schedule out;
  out.start.assign(n, 0.0);
  out.end.assign(n, 0.0);
  out.option = option;
  for (size_t placed = 0; placed < n; ++placed) {
    int best_rank = -1;
    for (int r = 0; r < P; ++r) {
      if (dirty[static_cast<size_t>(r)]) {
        pick[static_cast<size_t>(r)] = choose(r);
        dirty[static_cast<size_t>(r)] = 0;
      }
      const auto& pr = pick[static_cast<size_t>(r)];
      if (pr.stage < 0) continue;
      if (best_rank < 0 || pr.eff < pick[static_cast<size_t>(best_rank)].eff) best_rank = r;
    }
    if (best_rank < 0) {
      throw Deadlock("no rank can schedule; " + std::to_string(n - placed) + " stages remain");
    }
    const int s = pick[static_cast<size_t>(best_rank)].stage;
    const auto& st = problem.stages[static_cast<size_t>(s)];
    const size_t r = static_cast<size_t>(best_rank);
    const double start = pick[r].eff;
    const double finish = start + problem.latency(s, option[static_cast<size_t>(st.pair)]);
    auto& q = st.dir == Direction::Forward ? ready_fw[r] : ready_bw[r];
    q.erase(std::find(q.begin(), q.end(), s));
    out.start[static_cast<size_t>(s)] = start;
    out.end[static_cast<size_t>(s)] = finish;
    end[static_cast<size_t>(s)] = finish;
    order[r].push_back(s);
    t_last[r] = finish;
    last_dir[r] = static_cast<int>(st.dir);
    if (hooks.gate_memory) used[r] += st.dir == Direction::Forward ? act(s) : -act(s);
    dirty[r] = 1;
    if (hooks.on_place) {
      hooks.on_place(s);
      std::fill(dirty.begin(), dirty.end(), 1);
    }
    for (int succ : st.succs) {
      for (const auto& e : problem.stages[static_cast<size_t>(succ)].preds) {
        if (e.stage == s) t_start[static_cast<size_t>(succ)] = std::max(t_start[static_cast<size_t>(succ)], finish + e.latency_s);
      }
      if (--pending[static_cast<size_t>(succ)] == 0) {
        const auto& ss = problem.stages[static_cast<size_t>(succ)];
        (ss.dir == Direction::Forward ? ready_fw : ready_bw)[static_cast<size_t>(ss.rank)].push_back(succ);
        dirty[static_cast<size_t>(ss.rank)] = 1;
      }
    }
  }
  out.order = std::move(order);
  out.makespan = makespan(out);
  return out;
}

}  // namespace detail

Schedule interleave_stages(const ScheduleProblem& problem, std::span<const int> class_sequence,
                           std::optional<std::vector<int>> option) {
  const auto prio = class_priorities(problem, class_sequence);
  return detail::interleave(problem, prio, option ? *option : detail::default_options(problem), {});
}

}  // namespace mmpipe
