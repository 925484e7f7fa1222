// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "mmpipe/errors.hpp"
#include "mmpipe/scheduler.hpp"

namespace mmpipe {

namespace {

using Clock = std::chrono::steady_clock;

std::mt19937_64 worker_rng(uint64_t seed, int worker) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(worker)};
  return std::mt19937_64(seq);
}

// Rollout accounting shared by all explorers: budget, evaluation cache,
// score normalisation and the best-so-far trace.
class Tracker {
 public:
  Tracker(int num_classes, const SequenceEvaluator& eval, const MctsConfig& cfg, std::vector<int> reference)
      : eval_(eval), cfg_(cfg), t0_(Clock::now()) {
    if (static_cast<int>(reference.size()) != num_classes) {
      reference.resize(static_cast<size_t>(num_classes));
      std::iota(reference.begin(), reference.end(), 0);
    }
    result_.best_sequence = reference;
    const auto v = lookup(reference);
    if (v) {
      ref_ = *v;
      result_.best_value = *v;
      have_best_ = true;
      result_.trace.push_back({0, elapsed_ms(), *v});
    }
  }

  // Reserves one rollout slot; false when the budget is spent.
  bool reserve() {
    std::lock_guard lock(mu_);
    if (out_of_budget_locked()) {
      result_.budget_exhausted = true;
      return false;
    }
    ++result_.rollouts;
    return true;
  }

  bool out_of_budget() {
    std::lock_guard lock(mu_);
    if (!out_of_budget_locked()) return false;
    result_.budget_exhausted = true;
    return true;
  }

  // Evaluates a complete sequence and returns its score (0 if infeasible).
  double score(const std::vector<int>& seq) {
    const auto v = lookup(seq);
    std::lock_guard lock(mu_);
    if (!v) return 0.0;
    if (!ref_) ref_ = *v;
    if (!have_best_ || improves(*v, result_.best_value)) {
      have_best_ = true;
      result_.best_value = *v;
      result_.best_sequence = seq;
      result_.trace.push_back({result_.rollouts, elapsed_ms(), *v});
    }
    const double ref = *ref_;
    if (cfg_.objective == Objective::Minimize) return *v > 0 ? ref / *v : 0.0;
    return ref != 0 ? *v / ref : *v;
  }

  SearchResult finish(size_t tree_size, bool exhausted) {
    std::lock_guard lock(mu_);
    result_.tree_size = tree_size;
    result_.exhausted = exhausted;
    if (exhausted) result_.budget_exhausted = false;
    return result_;
  }

 private:
  std::optional<double> lookup(const std::vector<int>& seq) {
    {
      std::lock_guard lock(mu_);
      auto it = cache_.find(seq);
      if (it != cache_.end()) return it->second;
    }
    const auto v = eval_(seq);
    std::lock_guard lock(mu_);
    if (cache_.emplace(seq, v).second) ++result_.evaluations;
    return v;
  }

  bool improves(double a, double b) const { return cfg_.objective == Objective::Minimize ? a < b : a > b; }

  double elapsed_ms() const { return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count(); }

  bool out_of_budget_locked() const {
    if (cfg_.max_rollouts && result_.rollouts >= *cfg_.max_rollouts) return true;
    return cfg_.wall_clock_ms > 0 && elapsed_ms() >= cfg_.wall_clock_ms;
  }

  const SequenceEvaluator& eval_;
  const MctsConfig& cfg_;
  Clock::time_point t0_;
  std::mutex mu_;
  std::map<std::vector<int>, std::optional<double>> cache_;
  std::optional<double> ref_;
  bool have_best_ = false;
  SearchResult result_;
};

struct Node {
  int parent = -1;
  int cls = -1;
  int depth = 0;
  std::vector<int> children;
  std::vector<int> untried;
  double s = 0;  // best score below
  double N = 0;  // rollouts through
  bool exhausted = false;
};

class Tree {
 public:
  explicit Tree(int num_classes) : n_(num_classes) {
    Node root;
    root.untried.resize(static_cast<size_t>(n_));
    std::iota(root.untried.begin(), root.untried.end(), 0);
    root.exhausted = n_ == 0;
    nodes_.push_back(std::move(root));
  }

  bool root_exhausted() const { return nodes_[0].exhausted; }
  size_t size() const { return nodes_.size(); }

  // Walks down by UCB and expands one child; returns its index, or -1 when
  // the tree is exhausted.
  int select_expand(const MctsConfig& cfg, std::mt19937_64& rng) {
    int v = 0;
    while (true) {
      Node& node = nodes_[static_cast<size_t>(v)];
      if (node.exhausted) return -1;
      if (!node.untried.empty()) {
        std::uniform_int_distribution<size_t> pick(0, node.untried.size() - 1);
        const size_t i = pick(rng);
        const int cls = node.untried[i];
        node.untried.erase(node.untried.begin() + static_cast<std::ptrdiff_t>(i));
        Node child;
        child.parent = v;
        child.cls = cls;
        child.depth = node.depth + 1;
        for (int c : prefix_rest(v)) {
          if (c != cls) child.untried.push_back(c);
        }
        const int id = static_cast<int>(nodes_.size());
        nodes_[static_cast<size_t>(v)].children.push_back(id);
        nodes_.push_back(std::move(child));
        return id;
      }
      int best = -1;
      double best_ucb = -std::numeric_limits<double>::infinity();
      const double lnN = std::log(std::max(1.0, node.N));
      for (int c : node.children) {
        const Node& ch = nodes_[static_cast<size_t>(c)];
        if (ch.exhausted) continue;
        const double ucb = std::pow(ch.s, cfg.alpha) + cfg.beta * std::sqrt(lnN / std::max(1.0, ch.N));
        if (ucb > best_ucb) {
          best_ucb = ucb;
          best = c;
        }
      }
      if (best < 0) {
        mark_exhausted(v);
        return -1;
      }
      v = best;
    }
  }

  std::vector<int> prefix(int v) const {
    std::vector<int> seq;
    for (int u = v; u > 0; u = nodes_[static_cast<size_t>(u)].parent) seq.push_back(nodes_[static_cast<size_t>(u)].cls);
    std::reverse(seq.begin(), seq.end());
    return seq;
  }

  // Classes not yet placed on the path to v.
  std::vector<int> prefix_rest(int v) const {
    std::vector<char> used(static_cast<size_t>(n_), 0);
    for (int c : prefix(v)) used[static_cast<size_t>(c)] = 1;
    std::vector<int> rest;
    for (int c = 0; c < n_; ++c) {
      if (!used[static_cast<size_t>(c)]) rest.push_back(c);
    }
    return rest;
  }

  bool terminal(int v) const { return nodes_[static_cast<size_t>(v)].depth == n_; }

  void backprop(int v, double rollouts, double best_score) {
    for (int u = v; u >= 0; u = nodes_[static_cast<size_t>(u)].parent) {
      Node& node = nodes_[static_cast<size_t>(u)];
      node.N += rollouts;
      node.s = std::max(node.s, best_score);
    }
  }

  void mark_exhausted(int v) {
    nodes_[static_cast<size_t>(v)].exhausted = true;
    for (int u = nodes_[static_cast<size_t>(v)].parent; u >= 0; u = nodes_[static_cast<size_t>(u)].parent) {
      Node& node = nodes_[static_cast<size_t>(u)];
      if (!node.untried.empty()) return;
      for (int c : node.children) {
        if (!nodes_[static_cast<size_t>(c)].exhausted) return;
      }
      node.exhausted = true;
    }
  }

 private:
  int n_;
  std::vector<Node> nodes_;
};

}  // namespace

SearchResult mcts_reorder(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                          std::vector<int> reference) {
  if (num_classes < 0) throw InvalidArgument("negative class count");
  if (config.workers < 1) throw InvalidArgument("workers must be >= 1");
  if (config.rollouts_per_expand < 1) throw InvalidArgument("rollouts_per_expand must be >= 1");
  Tracker tracker(num_classes, evaluate, config, std::move(reference));
  if (num_classes <= 1) return tracker.finish(1, true);

  Tree tree(num_classes);
  std::mutex tree_mu;
  std::atomic<bool> done{false};

  auto worker = [&](int w) {
    auto rng = worker_rng(config.seed, w);
    while (!done.load()) {
      if (tracker.out_of_budget()) {
        done = true;
        break;
      }
      int leaf;
      std::vector<int> prefix, rest;
      bool terminal;
      {
        std::lock_guard lock(tree_mu);
        leaf = tree.select_expand(config, rng);
        if (leaf < 0) {
          if (tree.root_exhausted()) done = true;
          if (done) break;
          continue;
        }
        prefix = tree.prefix(leaf);
        rest = tree.prefix_rest(leaf);
        terminal = tree.terminal(leaf);
      }
      // A complete sequence needs only one evaluation.
      const int batch = terminal || rest.size() <= 1 ? 1 : config.rollouts_per_expand;
      double best = 0;
      int done_rollouts = 0;
      for (int i = 0; i < batch; ++i) {
        if (!tracker.reserve()) break;
        std::vector<int> seq = prefix;
        std::shuffle(rest.begin(), rest.end(), rng);
        seq.insert(seq.end(), rest.begin(), rest.end());
        best = std::max(best, tracker.score(seq));
        ++done_rollouts;
      }
      std::lock_guard lock(tree_mu);
      if (done_rollouts > 0) tree.backprop(leaf, done_rollouts, best);
      if (done_rollouts > 0 && (terminal || rest.size() <= 1)) tree.mark_exhausted(leaf);
      if (tree.root_exhausted()) done = true;
      if (done_rollouts < batch) done = true;
    }
  };

  if (config.workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < config.workers; ++w) threads.emplace_back(worker, w);
    for (auto& t : threads) t.join();
  }
  return tracker.finish(tree.size(), tree.root_exhausted());
}

SearchResult dfs_explore(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                         std::vector<int> reference) {
  Tracker tracker(num_classes, evaluate, config, std::move(reference));
  if (num_classes <= 1) return tracker.finish(1, true);
  auto rng = worker_rng(config.seed, 0);
  struct Frame {
    std::vector<int> children;
    size_t next = 0;
  };
  std::vector<int> seq;
  std::vector<char> used(static_cast<size_t>(num_classes), 0);
  std::vector<Frame> stack;
  auto push_frame = [&]() {
    Frame f;
    for (int c = 0; c < num_classes; ++c) {
      if (!used[static_cast<size_t>(c)]) f.children.push_back(c);
    }
    std::shuffle(f.children.begin(), f.children.end(), rng);
    stack.push_back(std::move(f));
  };
  push_frame();
  size_t visited = 1;
  bool exhausted = false;
  while (true) {
    if (stack.empty()) {
      exhausted = true;
      break;
    }
    Frame& f = stack.back();
    if (f.next == f.children.size()) {
      stack.pop_back();
      if (!seq.empty()) {
        used[static_cast<size_t>(seq.back())] = 0;
        seq.pop_back();
      }
      continue;
    }
    const int c = f.children[f.next++];
    seq.push_back(c);
    used[static_cast<size_t>(c)] = 1;
    ++visited;
    if (static_cast<int>(seq.size()) == num_classes) {
      if (!tracker.reserve()) break;
      tracker.score(seq);
      used[static_cast<size_t>(c)] = 0;
      seq.pop_back();
    } else {
      push_frame();
    }
  }
  return tracker.finish(visited, exhausted);
}

SearchResult random_explore(int num_classes, const SequenceEvaluator& evaluate, const MctsConfig& config,
                            std::vector<int> reference) {
  Tracker tracker(num_classes, evaluate, config, std::move(reference));
  if (num_classes <= 1) return tracker.finish(1, true);
  auto rng = worker_rng(config.seed, 0);
  std::vector<int> seq(static_cast<size_t>(num_classes));
  std::iota(seq.begin(), seq.end(), 0);
  while (tracker.reserve()) {
    std::shuffle(seq.begin(), seq.end(), rng);
    tracker.score(seq);
  }
  return tracker.finish(0, false);
}

// ---------------------------------------------------------------------------

Schedule dip_schedule(const ScheduleProblem& problem, std::span<const int> sequence, bool optimize) {
  auto s = interleave_stages(problem, sequence);
  if (optimize) s = optimize_memory(problem, s);
  return s;
}

SequenceEvaluator dip_evaluator(const ScheduleProblem& problem, bool optimize) {
  return [&problem, optimize](const std::vector<int>& seq) -> std::optional<double> {
    try {
      return dip_schedule(problem, seq, optimize).makespan;
    } catch (const Deadlock&) {
      return std::nullopt;
    } catch (const Infeasible&) {
      return std::nullopt;
    }
  };
}

}  // namespace mmpipe
