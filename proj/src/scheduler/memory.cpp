// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "mmpipe/errors.hpp"
#include "mmpipe/scheduler.hpp"

namespace mmpipe {

namespace {

int fastest_of(const std::vector<LayerOption>& opts) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(opts.size()); ++j) {
    const auto& a = opts[static_cast<size_t>(j)];
    const auto& b = opts[static_cast<size_t>(best)];
    if (a.latency_s < b.latency_s || (a.latency_s == b.latency_s && a.bytes < b.bytes)) best = j;
  }
  return best;
}

int smallest_of(const std::vector<LayerOption>& opts) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(opts.size()); ++j) {
    const auto& a = opts[static_cast<size_t>(j)];
    const auto& b = opts[static_cast<size_t>(best)];
    if (a.bytes < b.bytes || (a.bytes == b.bytes && a.latency_s < b.latency_s)) best = j;
  }
  return best;
}

Candidate make_candidate(const std::vector<std::vector<LayerOption>>& layers, std::vector<int> choice) {
  Candidate c;
  for (size_t i = 0; i < layers.size(); ++i) {
    c.latency_s += layers[i][static_cast<size_t>(choice[i])].latency_s;
    c.bytes += layers[i][static_cast<size_t>(choice[i])].bytes;
  }
  c.choice = std::move(choice);
  return c;
}

}  // namespace

std::vector<Candidate> generate_candidates(const std::vector<std::vector<LayerOption>>& layers, int S,
                                           int64_t quantum_bytes) {
  if (S < 2) throw InvalidArgument("S must be >= 2");
  if (quantum_bytes < 1) throw InvalidArgument("quantum must be positive");
  for (const auto& l : layers) {
    if (l.empty()) throw InvalidArgument("every layer needs at least one option");
  }
  const size_t L = layers.size();
  std::vector<int> fast(L), small(L);
  for (size_t i = 0; i < L; ++i) {
    fast[i] = fastest_of(layers[i]);
    small[i] = smallest_of(layers[i]);
  }
  std::vector<Candidate> all;
  all.push_back(make_candidate(layers, fast));
  all.push_back(make_candidate(layers, small));
  const int64_t lo = all[1].bytes;
  const int64_t hi = all[0].bytes;

  if (S > 2 && hi > lo && L > 0) {
    const int64_t range = hi - lo;
    // Quantum shrinks for narrow ranges so every bucket spans several units.
    const int64_t unit = std::max<int64_t>(1, std::min<int64_t>(quantum_bytes, range / (8 * (S - 2))));
    // Multiple-choice knapsack DP keyed by quantized excess over the
    // per-layer minimum; each key keeps its fastest combination.
    struct State {
      double lat;
      int64_t mem;
      int prev;
      int opt;
    };
    std::vector<std::vector<State>> trail(L);
    std::map<int64_t, int> frontier;  // key -> index in trail[layer]
    int64_t min_prefix = 0;
    std::vector<int64_t> min_suffix(L + 1, 0);
    for (size_t i = L; i-- > 0;) {
      min_suffix[i] = min_suffix[i + 1] + layers[i][static_cast<size_t>(small[i])].bytes;
    }
    std::vector<State> prev_states{{0.0, 0, -1, -1}};
    for (size_t i = 0; i < L; ++i) {
      std::map<int64_t, State> next;
      const int64_t layer_min = layers[i][static_cast<size_t>(small[i])].bytes;
      for (size_t p = 0; p < prev_states.size(); ++p) {
        const auto& ps = prev_states[p];
        for (size_t j = 0; j < layers[i].size(); ++j) {
          const auto& o = layers[i][j];
          const int64_t mem = ps.mem + o.bytes;
          // Anything at or above the fastest total is dominated by it.
          if (mem + min_suffix[i + 1] > hi) continue;
          const int64_t key = (mem - min_prefix - layer_min) / unit;
          State s{ps.lat + o.latency_s, mem, static_cast<int>(p), static_cast<int>(j)};
          auto it = next.find(key);
          if (it == next.end() || s.lat < it->second.lat || (s.lat == it->second.lat && s.mem < it->second.mem)) {
            next[key] = s;
          }
        }
      }
      min_prefix += layer_min;
      trail[i].clear();
      for (auto& [k, s] : next) trail[i].push_back(s);
      prev_states = trail[i];
    }
    const double width = static_cast<double>(range) / (S - 2);
    std::vector<int> bucket_best(static_cast<size_t>(S - 2), -1);
    const auto& final_states = trail[L - 1];
    for (size_t k = 0; k < final_states.size(); ++k) {
      const auto& s = final_states[k];
      if (s.mem <= lo || s.mem >= hi) continue;
      auto b = static_cast<int>(std::ceil(static_cast<double>(s.mem - lo) / width)) - 1;
      b = std::clamp(b, 0, S - 3);
      int& cur = bucket_best[static_cast<size_t>(b)];
      if (cur < 0 || s.lat < final_states[static_cast<size_t>(cur)].lat) cur = static_cast<int>(k);
    }
    for (int idx : bucket_best) {
      if (idx < 0) continue;
      std::vector<int> choice(L);
      int at = idx;
      for (size_t i = L; i-- > 0;) {
        const auto& s = trail[i][static_cast<size_t>(at)];
        choice[i] = s.opt;
        at = s.prev;
      }
      all.push_back(make_candidate(layers, std::move(choice)));
    }
  }

  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.bytes != b.bytes) return a.bytes < b.bytes;
    return a.latency_s < b.latency_s;
  });
  std::vector<Candidate> out;
  for (auto& c : all) {
    if (!out.empty() && c.latency_s >= out.back().latency_s) continue;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct IlpSolver {
  const MemoryIlp& ilp;
  double gap;
  int64_t node_limit;

  size_t n = 0;
  std::vector<std::vector<int>> pair_constraints;  // constraints touching each pair
  std::vector<double> min_lat;
  std::vector<int64_t> min_bytes;
  // Per pair: lower convex hull of (bytes, latency), from the smallest
  // option towards the fastest, as (delta bytes, delta latency) steps.
  std::vector<std::vector<std::pair<int64_t, double>>> hull_steps;
  std::vector<double> base_lat;  // latency at the hull's first (smallest) point
  struct Step {
    int pair;
    int64_t bytes;
    double latency;
  };
  std::vector<std::vector<Step>> constraint_steps;  // per constraint, by efficiency
  std::vector<double> excess;                       // per constraint, current bound term
  std::vector<int> order;  // branching order
  std::vector<int> choice;
  std::vector<int64_t> used;  // assigned bytes per constraint
  std::vector<int64_t> free_min;  // min bytes of unassigned pairs per constraint
  double fixed = 0;
  double free_min_lat = 0;
  std::vector<int> best;
  double best_obj = std::numeric_limits<double>::infinity();
  int64_t nodes = 0;
  bool truncated = false;

  IlpSolver(const MemoryIlp& i, double g, int64_t limit) : ilp(i), gap(g), node_limit(limit) {}

  void prepare() {
    n = ilp.options.size();
    pair_constraints.assign(n, {});
    for (size_t c = 0; c < ilp.constraints.size(); ++c) {
      for (int p : ilp.constraints[c]) pair_constraints[static_cast<size_t>(p)].push_back(static_cast<int>(c));
    }
    min_lat.resize(n);
    min_bytes.resize(n);
    hull_steps.resize(n);
    base_lat.resize(n);
    for (size_t p = 0; p < n; ++p) {
      const auto& opts = ilp.options[p];
      min_lat[p] = opts[static_cast<size_t>(fastest_of(opts))].latency_s;
      min_bytes[p] = opts[static_cast<size_t>(smallest_of(opts))].bytes;
      std::vector<LayerOption> sorted = opts;
      std::sort(sorted.begin(), sorted.end(), [](const LayerOption& a, const LayerOption& b) {
        return a.bytes != b.bytes ? a.bytes < b.bytes : a.latency_s < b.latency_s;
      });
      std::vector<LayerOption> hull;
      for (const auto& o : sorted) {
        if (!hull.empty() && o.latency_s >= hull.back().latency_s) continue;
        while (hull.size() >= 2) {
          const auto& a = hull[hull.size() - 2];
          const auto& b = hull.back();
          // Drop b when it lies on or above the segment a-o.
          const double lhs = (b.latency_s - a.latency_s) * static_cast<double>(o.bytes - a.bytes);
          const double rhs = (o.latency_s - a.latency_s) * static_cast<double>(b.bytes - a.bytes);
          if (lhs >= rhs) {
            hull.pop_back();
          } else {
            break;
          }
        }
        hull.push_back(o);
      }
      base_lat[p] = hull.front().latency_s;
      for (size_t k = 1; k < hull.size(); ++k) {
        hull_steps[p].push_back({hull[k].bytes - hull[k - 1].bytes, hull[k - 1].latency_s - hull[k].latency_s});
      }
    }
    constraint_steps.assign(ilp.constraints.size(), {});
    for (size_t c = 0; c < ilp.constraints.size(); ++c) {
      auto& steps = constraint_steps[c];
      for (int p : ilp.constraints[c]) {
        for (const auto& [db, dl] : hull_steps[static_cast<size_t>(p)]) steps.push_back({p, db, dl});
      }
      std::stable_sort(steps.begin(), steps.end(), [](const Step& a, const Step& b) {
        return a.latency * static_cast<double>(std::max<int64_t>(1, b.bytes)) >
               b.latency * static_cast<double>(std::max<int64_t>(1, a.bytes));
      });
    }
    // Branch first on pairs whose choice matters most.
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    auto spread = [&](int p) {
      double mx = 0;
      for (const auto& o : ilp.options[static_cast<size_t>(p)]) mx = std::max(mx, o.latency_s);
      return mx - min_lat[static_cast<size_t>(p)];
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return spread(a) > spread(b); });
  }

  bool feasible(const std::vector<int>& ch) const {
    for (const auto& c : ilp.constraints) {
      int64_t s = 0;
      for (int p : c) s += ilp.options[static_cast<size_t>(p)][static_cast<size_t>(ch[static_cast<size_t>(p)])].bytes;
      if (s > ilp.capacity) return false;
    }
    return true;
  }

  double objective(const std::vector<int>& ch) const {
    double s = 0;
    for (size_t p = 0; p < n; ++p) s += ilp.options[p][static_cast<size_t>(ch[p])].latency_s;
    return s;
  }

  // Greedy repair from all-fastest by best memory saved per latency added.
  std::vector<int> warm_start() const {
    std::vector<int> ch(n);
    for (size_t p = 0; p < n; ++p) ch[p] = fastest_of(ilp.options[p]);
    std::vector<int64_t> load(ilp.constraints.size(), 0);
    for (size_t c = 0; c < ilp.constraints.size(); ++c) {
      for (int p : ilp.constraints[c]) {
        load[c] += ilp.options[static_cast<size_t>(p)][static_cast<size_t>(ch[static_cast<size_t>(p)])].bytes;
      }
    }
    while (true) {
      std::vector<char> in_violated(n, 0);
      bool any = false;
      for (size_t c = 0; c < ilp.constraints.size(); ++c) {
        if (load[c] <= ilp.capacity) continue;
        any = true;
        for (int p : ilp.constraints[c]) in_violated[static_cast<size_t>(p)] = 1;
      }
      if (!any) return ch;
      int bp = -1, bj = -1;
      double best_ratio = -1;
      for (size_t p = 0; p < n; ++p) {
        if (!in_violated[p]) continue;
        const auto& cur = ilp.options[p][static_cast<size_t>(ch[p])];
        for (size_t j = 0; j < ilp.options[p].size(); ++j) {
          const auto& o = ilp.options[p][j];
          if (o.bytes >= cur.bytes) continue;
          const double dmem = static_cast<double>(cur.bytes - o.bytes);
          const double dlat = o.latency_s - cur.latency_s;
          const double ratio = dlat <= 0 ? std::numeric_limits<double>::infinity() : dmem / dlat;
          if (ratio > best_ratio) {
            best_ratio = ratio;
            bp = static_cast<int>(p);
            bj = static_cast<int>(j);
          }
        }
      }
      if (bp < 0) throw Infeasible("memory constraints cannot be met");
      const int64_t delta = ilp.options[static_cast<size_t>(bp)][static_cast<size_t>(bj)].bytes -
                            ilp.options[static_cast<size_t>(bp)][static_cast<size_t>(ch[static_cast<size_t>(bp)])].bytes;
      for (int c : pair_constraints[static_cast<size_t>(bp)]) load[static_cast<size_t>(c)] += delta;
      ch[static_cast<size_t>(bp)] = bj;
    }
  }

  // Fractional multiple-choice knapsack over the free pairs of constraint
  // c: how far above their fastest options those pairs must stay within the
  // remaining capacity. Steps are pre-sorted by efficiency; each pair's
  // hull steps have strictly decreasing efficiency, so the global order
  // keeps them in sequence.
  double constraint_excess(size_t c, const std::vector<char>& assigned) const {
    int64_t room = ilp.capacity - used[c] - free_min[c];
    double excess = 0;
    for (int p : ilp.constraints[c]) {
      if (!assigned[static_cast<size_t>(p)]) excess += base_lat[static_cast<size_t>(p)] - min_lat[static_cast<size_t>(p)];
    }
    for (const auto& st : constraint_steps[c]) {
      if (room <= 0) break;
      if (assigned[static_cast<size_t>(st.pair)]) continue;
      if (st.bytes <= room) {
        excess -= st.latency;
        room -= st.bytes;
      } else {
        excess -= st.latency * static_cast<double>(room) / static_cast<double>(st.bytes);
        room = 0;
      }
    }
    return std::max(0.0, excess);
  }

  double bound() const {
    double worst = 0;
    for (double e : excess) worst = std::max(worst, e);
    return fixed + free_min_lat + worst;
  }

  void dfs(size_t depth, std::vector<char>& assigned) {
    if (truncated) return;
    if (++nodes > node_limit) {
      truncated = true;
      return;
    }
    if (depth == n) {
      if (fixed < best_obj) {
        best_obj = fixed;
        best = choice;
      }
      return;
    }
    if (bound() * (1 + gap) >= best_obj) return;
    const int p = order[depth];
    const auto& opts = ilp.options[static_cast<size_t>(p)];
    const auto& touched = pair_constraints[static_cast<size_t>(p)];
    std::vector<int> idx(opts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return opts[static_cast<size_t>(a)].latency_s < opts[static_cast<size_t>(b)].latency_s;
    });
    std::vector<double> saved(touched.size());
    for (size_t k = 0; k < touched.size(); ++k) saved[k] = excess[static_cast<size_t>(touched[k])];
    assigned[static_cast<size_t>(p)] = 1;
    fixed_free_update(p, -1);
    for (int j : idx) {
      const auto& o = opts[static_cast<size_t>(j)];
      bool ok = true;
      for (int c : touched) {
        if (used[static_cast<size_t>(c)] + o.bytes + free_min[static_cast<size_t>(c)] > ilp.capacity) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      for (int c : touched) used[static_cast<size_t>(c)] += o.bytes;
      for (int c : touched) excess[static_cast<size_t>(c)] = constraint_excess(static_cast<size_t>(c), assigned);
      fixed += o.latency_s;
      choice[static_cast<size_t>(p)] = j;
      dfs(depth + 1, assigned);
      fixed -= o.latency_s;
      for (int c : touched) used[static_cast<size_t>(c)] -= o.bytes;
      if (truncated) break;
    }
    fixed_free_update(p, +1);
    assigned[static_cast<size_t>(p)] = 0;
    for (size_t k = 0; k < touched.size(); ++k) excess[static_cast<size_t>(touched[k])] = saved[k];
  }

  // Moves pair p into (sign -1) or out of (sign +1) the assigned set.
  void fixed_free_update(int p, int sign) {
    free_min_lat += sign * min_lat[static_cast<size_t>(p)];
    for (int c : pair_constraints[static_cast<size_t>(p)]) free_min[static_cast<size_t>(c)] += sign * min_bytes[static_cast<size_t>(p)];
  }

  MemoryIlpResult solve() {
    prepare();
    for (size_t p = 0; p < n; ++p) {
      if (ilp.options[p].empty()) throw InvalidArgument("every pair needs at least one option");
    }
    MemoryIlpResult res;
    res.choice.resize(n);
    for (size_t p = 0; p < n; ++p) res.choice[p] = fastest_of(ilp.options[p]);
    if (feasible(res.choice)) {
      res.objective = res.lower_bound = objective(res.choice);
      return res;
    }
    for (const auto& c : ilp.constraints) {
      int64_t s = 0;
      for (int p : c) s += min_bytes[static_cast<size_t>(p)];
      if (s > ilp.capacity) throw Infeasible("even the most memory-efficient options exceed capacity");
    }
    best = warm_start();
    best_obj = objective(best);

    used.assign(ilp.constraints.size(), 0);
    free_min.assign(ilp.constraints.size(), 0);
    for (size_t c = 0; c < ilp.constraints.size(); ++c) {
      for (int p : ilp.constraints[c]) free_min[c] += min_bytes[static_cast<size_t>(p)];
    }
    free_min_lat = std::accumulate(min_lat.begin(), min_lat.end(), 0.0);
    fixed = 0;
    choice.assign(n, 0);
    std::vector<char> assigned(n, 0);
    excess.resize(ilp.constraints.size());
    for (size_t c = 0; c < ilp.constraints.size(); ++c) excess[c] = constraint_excess(c, assigned);
    const double root = bound();
    dfs(0, assigned);

    res.choice = best;
    res.objective = best_obj;
    res.nodes = nodes;
    res.optimal_within_gap = !truncated;
    res.lower_bound = truncated ? std::min(root, best_obj) : std::max(root, best_obj / (1 + gap));
    return res;
  }
};

}  // namespace

MemoryIlpResult solve_memory_ilp(const MemoryIlp& ilp, double gap, int64_t node_limit) {
  if (gap < 0) throw InvalidArgument("gap must be non-negative");
  for (const auto& c : ilp.constraints) {
    for (int p : c) {
      if (p < 0 || static_cast<size_t>(p) >= ilp.options.size()) throw InvalidArgument("constraint names unknown pair");
    }
  }
  IlpSolver s(ilp, gap, node_limit);
  return s.solve();
}

MemoryIlp rank_memory_ilp(const ScheduleProblem& problem, const Schedule& schedule, int rank,
                          std::vector<int>* pair_ids) {
  const auto& ord = schedule.order.at(static_cast<size_t>(rank));
  std::map<int, size_t> pos;
  for (size_t i = 0; i < ord.size(); ++i) pos[ord[i]] = i;
  std::vector<int> ids;
  for (int s : ord) {
    const auto& st = problem.stages[static_cast<size_t>(s)];
    if (st.dir == Direction::Forward) ids.push_back(st.pair);
  }
  MemoryIlp ilp;
  ilp.capacity = problem.capacity[static_cast<size_t>(rank)];
  for (int pid : ids) {
    std::vector<LayerOption> opts;
    for (const auto& o : problem.pairs[static_cast<size_t>(pid)].options) opts.push_back({o.latency(), o.bytes});
    ilp.options.push_back(std::move(opts));
  }
  // Pairs live at each forward position, in execution order.
  std::vector<std::vector<int>> raw;
  for (size_t a = 0; a < ids.size(); ++a) {
    const size_t at = pos.at(problem.pairs[static_cast<size_t>(ids[a])].fw);
    std::vector<int> live;
    for (size_t b = 0; b < ids.size(); ++b) {
      const auto& pb = problem.pairs[static_cast<size_t>(ids[b])];
      if (pos.at(pb.fw) <= at && at < pos.at(pb.bw)) live.push_back(static_cast<int>(b));
    }
    raw.push_back(std::move(live));
  }
  // Drop constraints implied by a superset.
  for (size_t i = 0; i < raw.size(); ++i) {
    bool implied = false;
    for (size_t j = 0; j < raw.size() && !implied; ++j) {
      if (i == j || raw[j].size() < raw[i].size()) continue;
      if (raw[j].size() == raw[i].size() && j > i) continue;
      implied = std::includes(raw[j].begin(), raw[j].end(), raw[i].begin(), raw[i].end());
    }
    if (!implied) ilp.constraints.push_back(raw[i]);
  }
  if (pair_ids) *pair_ids = std::move(ids);
  return ilp;
}

Schedule optimize_memory(const ScheduleProblem& problem, const Schedule& schedule, double gap) {
  std::vector<int> option = schedule.option;
  for (int r = 0; r < problem.num_ranks; ++r) {
    std::vector<int> ids;
    const auto ilp = rank_memory_ilp(problem, schedule, r, &ids);
    if (ids.empty()) continue;
    const auto res = solve_memory_ilp(ilp, gap);
    for (size_t i = 0; i < ids.size(); ++i) option[static_cast<size_t>(ids[i])] = res.choice[i];
  }
  return retime(problem, schedule.order, std::move(option));
}

}  // namespace mmpipe
