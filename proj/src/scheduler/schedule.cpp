// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mmpipe/errors.hpp"
#include "mmpipe/scheduler.hpp"

namespace mmpipe {

double makespan(const Schedule& schedule) {
  double m = 0;
  for (const auto& rank : schedule.order) {
    for (int s : rank) m = std::max(m, schedule.end[static_cast<size_t>(s)]);
  }
  return m;
}

Schedule retime(const ScheduleProblem& problem, std::vector<std::vector<int>> order, std::vector<int> option) {
  const size_t n = problem.stages.size();
  if (option.size() != problem.pairs.size()) throw InvalidArgument("one option per stage pair is required");
  if (static_cast<int>(order.size()) != problem.num_ranks) throw InvalidArgument("one order per rank is required");
  Schedule s;
  s.order = std::move(order);
  s.option = std::move(option);
  s.start.assign(n, 0.0);
  s.end.assign(n, 0.0);
  std::vector<char> placed(n, 0);
  size_t total = 0;
  for (const auto& r : s.order) total += r.size();
  if (total != n) throw InvalidSchedule("orders do not cover every stage exactly once");

  std::vector<size_t> next(s.order.size(), 0);
  std::vector<double> free_at(s.order.size(), 0.0);
  size_t done = 0;
  bool progress = true;
  while (done < n && progress) {
    progress = false;
    for (size_t r = 0; r < s.order.size(); ++r) {
      while (next[r] < s.order[r].size()) {
        const int id = s.order[r][next[r]];
        const auto& st = problem.stages.at(static_cast<size_t>(id));
        if (st.rank != static_cast<int>(r)) throw InvalidSchedule("stage " + std::to_string(id) + " on wrong rank");
        if (placed[static_cast<size_t>(id)]) throw InvalidSchedule("stage " + std::to_string(id) + " listed twice");
        double t = free_at[r];
        bool ready = true;
        for (const auto& e : st.preds) {
          if (!placed[static_cast<size_t>(e.stage)]) {
            ready = false;
            break;
          }
          t = std::max(t, s.end[static_cast<size_t>(e.stage)] + e.latency_s);
        }
        if (!ready) break;
        s.start[static_cast<size_t>(id)] = t;
        s.end[static_cast<size_t>(id)] = t + problem.latency(id, s.option[static_cast<size_t>(st.pair)]);
        free_at[r] = s.end[static_cast<size_t>(id)];
        placed[static_cast<size_t>(id)] = 1;
        ++next[r];
        ++done;
        progress = true;
      }
    }
  }
  if (done < n) throw Deadlock("per-rank orders contradict the dependency graph");
  s.makespan = makespan(s);
  return s;
}

namespace {

constexpr double kTimeTol = 1e-9;

bool time_le(double a, double b) { return a <= b + kTimeTol * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

std::vector<MemoryPoint> memory_timeline(const ScheduleProblem& problem, const Schedule& schedule, int rank) {
  // At equal times releases apply before acquisitions.
  std::vector<std::pair<double, int64_t>> events;
  for (size_t i = 0; i < problem.pairs.size(); ++i) {
    const auto& p = problem.pairs[i];
    if (p.rank != rank) continue;
    const int64_t bytes = p.options[static_cast<size_t>(schedule.option[i])].bytes;
    events.emplace_back(schedule.start[static_cast<size_t>(p.fw)], bytes);
    events.emplace_back(schedule.end[static_cast<size_t>(p.bw)], -bytes);
  }
  std::sort(events.begin(), events.end());
  std::vector<MemoryPoint> out;
  int64_t cur = 0;
  for (size_t i = 0; i < events.size();) {
    const double t = events[i].first;
    while (i < events.size() && events[i].first == t) cur += events[i++].second;
    if (!out.empty() && out.back().bytes == cur) continue;
    out.push_back({t, cur});
  }
  return out;
}

int64_t peak_memory(const ScheduleProblem& problem, const Schedule& schedule) {
  int64_t peak = 0;
  for (int r = 0; r < problem.num_ranks; ++r) {
    for (const auto& p : memory_timeline(problem, schedule, r)) peak = std::max(peak, p.bytes);
  }
  return peak;
}

std::vector<std::string> validate_schedule(const ScheduleProblem& problem, const Schedule& schedule) {
  std::vector<std::string> errs;
  auto fail = [&](const std::string& m) { errs.push_back(m); };
  const size_t n = problem.stages.size();
  if (schedule.start.size() != n || schedule.end.size() != n) {
    fail("start/end vectors do not match the stage count");
    return errs;
  }
  if (schedule.option.size() != problem.pairs.size()) {
    fail("option vector does not match the pair count");
    return errs;
  }
  if (static_cast<int>(schedule.order.size()) != problem.num_ranks) {
    fail("order vector does not match the rank count");
    return errs;
  }
  std::vector<int> seen(n, 0);
  for (int r = 0; r < problem.num_ranks; ++r) {
    const auto& ord = schedule.order[static_cast<size_t>(r)];
    for (size_t i = 0; i < ord.size(); ++i) {
      const int id = ord[i];
      if (id < 0 || static_cast<size_t>(id) >= n) {
        fail("rank " + std::to_string(r) + ": unknown stage " + std::to_string(id));
        continue;
      }
      ++seen[static_cast<size_t>(id)];
      if (problem.stages[static_cast<size_t>(id)].rank != r) {
        fail("stage " + std::to_string(id) + " scheduled on rank " + std::to_string(r));
      }
      if (i > 0 && !time_le(schedule.end[static_cast<size_t>(ord[i - 1])], schedule.start[static_cast<size_t>(id)])) {
        fail("rank " + std::to_string(r) + ": stages " + std::to_string(ord[i - 1]) + " and " + std::to_string(id) +
             " overlap");
      }
    }
  }
  for (size_t id = 0; id < n; ++id) {
    if (seen[id] != 1) fail("stage " + std::to_string(id) + " scheduled " + std::to_string(seen[id]) + " times");
  }
  if (!errs.empty()) return errs;

  for (size_t i = 0; i < problem.pairs.size(); ++i) {
    const int opt = schedule.option[i];
    if (opt < 0 || static_cast<size_t>(opt) >= problem.pairs[i].options.size()) {
      fail("pair " + std::to_string(i) + ": option out of range");
    }
  }
  if (!errs.empty()) return errs;

  for (size_t id = 0; id < n; ++id) {
    const auto& st = problem.stages[id];
    const double lat = problem.latency(static_cast<int>(id), schedule.option[static_cast<size_t>(st.pair)]);
    const double got = schedule.end[id] - schedule.start[id];
    if (std::abs(got - lat) > kTimeTol * std::max(1.0, lat)) {
      std::ostringstream m;
      m << "stage " << id << ": duration " << got << " != latency " << lat;
      fail(m.str());
    }
    if (schedule.start[id] < -kTimeTol) fail("stage " + std::to_string(id) + " starts before 0");
    for (const auto& e : st.preds) {
      if (!time_le(schedule.end[static_cast<size_t>(e.stage)] + e.latency_s, schedule.start[id])) {
        fail("stage " + std::to_string(id) + " starts before predecessor " + std::to_string(e.stage) + " is delivered");
      }
    }
  }

  // Memory at each forward-start event: pairs live over [fw.start, bw.end).
  for (int r = 0; r < problem.num_ranks; ++r) {
    std::vector<size_t> mine;
    for (size_t i = 0; i < problem.pairs.size(); ++i) {
      if (problem.pairs[i].rank == r) mine.push_back(i);
    }
    const int64_t cap = problem.capacity[static_cast<size_t>(r)];
    for (size_t a : mine) {
      const double t = schedule.start[static_cast<size_t>(problem.pairs[a].fw)];
      int64_t live = 0;
      for (size_t b : mine) {
        const auto& pb = problem.pairs[b];
        if (schedule.start[static_cast<size_t>(pb.fw)] <= t && t < schedule.end[static_cast<size_t>(pb.bw)]) {
          live += pb.options[static_cast<size_t>(schedule.option[b])].bytes;
        }
      }
      if (live > cap) {
        fail("rank " + std::to_string(r) + ": " + std::to_string(live) + " bytes live at t=" + std::to_string(t) +
             " exceed capacity " + std::to_string(cap));
        break;
      }
    }
  }
  return errs;
}

std::vector<int> class_priorities(const ScheduleProblem& problem, std::span<const int> sequence) {
  if (static_cast<int>(sequence.size()) != problem.num_classes) {
    throw InvalidArgument("class sequence must list every class once");
  }
  std::vector<int> prio(static_cast<size_t>(problem.num_classes), -1);
  const int n = problem.num_classes;
  for (int i = 0; i < n; ++i) {
    const int c = sequence[static_cast<size_t>(i)];
    if (c < 0 || c >= n || prio[static_cast<size_t>(c)] != -1) {
      throw InvalidArgument("class sequence must be a permutation");
    }
    prio[static_cast<size_t>(c)] = n - i;
  }
  return prio;
}

}  // namespace mmpipe
