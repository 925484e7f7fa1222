// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/plan.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "mmpipe/errors.hpp"

namespace mmpipe {

const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::FwStage: return "fw_stage";
    case ActionKind::BwStage: return "bw_stage";
    case ActionKind::Isend: return "isend";
    case ActionKind::Irecv: return "irecv";
    case ActionKind::WaitIsend: return "wait_isend";
    case ActionKind::WaitIrecv: return "wait_irecv";
    case ActionKind::BatchedP2p: return "batched_p2p";
  }
  return "?";
}

ActionKind action_kind_from_string(const std::string& s) {
  for (auto k : {ActionKind::FwStage, ActionKind::BwStage, ActionKind::Isend, ActionKind::Irecv, ActionKind::WaitIsend,
                 ActionKind::WaitIrecv, ActionKind::BatchedP2p}) {
    if (s == to_string(k)) return k;
  }
  throw ParseError("unknown action kind '" + s + "'");
}

const char* to_string(PlanIssue i) {
  switch (i) {
    case PlanIssue::UnmatchedTag: return "UnmatchedTag";
    case PlanIssue::MissingWait: return "MissingWait";
    case PlanIssue::DuplicateTag: return "DuplicateTag";
    case PlanIssue::Deadlock: return "Deadlock";
  }
  return "?";
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool is_post(ActionKind k) { return k == ActionKind::Isend || k == ActionKind::Irecv; }

}  // namespace

uint64_t schedule_digest(const Schedule& schedule) {
  std::ostringstream os;
  for (size_t r = 0; r < schedule.order.size(); ++r) {
    os << 'r' << r << ':';
    for (int s : schedule.order[r]) {
      os << s << '@' << fmt(schedule.start[static_cast<size_t>(s)]) << '-' << fmt(schedule.end[static_cast<size_t>(s)])
         << ';';
    }
  }
  os << "o:";
  for (int o : schedule.option) os << o << ',';
  return fnv1a(os.str());
}

ExecutionPlan compile_plan(const ScheduleProblem& problem, const Schedule& schedule, const CompileOptions& opts) {
  const auto errs = validate_schedule(problem, schedule);
  if (!errs.empty()) {
    std::string msg = errs.front();
    if (errs.size() > 1) msg += " (+" + std::to_string(errs.size() - 1) + " more)";
    throw InvalidSchedule(msg);
  }
  const int P = problem.num_ranks;
  std::vector<int> position(problem.stages.size(), 0);
  for (const auto& ord : schedule.order) {
    for (size_t i = 0; i < ord.size(); ++i) position[static_cast<size_t>(ord[i])] = static_cast<int>(i);
  }

  // Slot k of a rank lies between its stages k-1 and k. Within a slot:
  // sends of stage k-1, receives, send waits, then receive waits of stage k.
  enum Phase { kSend = 0, kRecv = 1, kWaitSend = 2, kWaitRecv = 3 };
  using Key = std::tuple<int, int, int>;  // slot, phase, tag
  std::vector<std::map<Key, Action>> slots(static_cast<size_t>(P));

  int tag = 0;
  for (size_t id = 0; id < problem.stages.size(); ++id) {
    const auto& st = problem.stages[id];
    for (const auto& e : st.preds) {
      const auto& src = problem.stages[static_cast<size_t>(e.stage)];
      if (src.rank == st.rank) continue;
      const int t = tag++;
      const double send_at = schedule.end[static_cast<size_t>(e.stage)];
      const double done_at = send_at + e.latency_s;
      const auto& src_order = schedule.order[static_cast<size_t>(src.rank)];
      const auto& dst_order = schedule.order[static_cast<size_t>(st.rank)];

      Action send;
      send.kind = ActionKind::Isend;
      send.peer = st.rank;
      send.tag = t;
      send.bytes = e.bytes;
      send.latency_s = e.latency_s;
      const int send_slot = position[static_cast<size_t>(e.stage)] + 1;
      slots[static_cast<size_t>(src.rank)][{send_slot, kSend, t}] = send;

      // The send buffer is released before the first later stage that
      // starts after the transfer has finished.
      int wait_slot = send_slot;
      while (wait_slot < static_cast<int>(src_order.size()) &&
             schedule.start[static_cast<size_t>(src_order[static_cast<size_t>(wait_slot)])] < done_at) {
        ++wait_slot;
      }
      Action wsend = send;
      wsend.kind = ActionKind::WaitIsend;
      slots[static_cast<size_t>(src.rank)][{wait_slot, kWaitSend, t}] = wsend;

      // Receive posted after the last local stage finishing by the send.
      const int consumer = position[id];
      int recv_slot = 0;
      while (recv_slot < consumer &&
             schedule.end[static_cast<size_t>(dst_order[static_cast<size_t>(recv_slot)])] <= send_at) {
        ++recv_slot;
      }
      Action recv;
      recv.kind = ActionKind::Irecv;
      recv.peer = src.rank;
      recv.tag = t;
      recv.bytes = e.bytes;
      recv.latency_s = e.latency_s;
      slots[static_cast<size_t>(st.rank)][{recv_slot, kRecv, t}] = recv;
      Action wrecv = recv;
      wrecv.kind = ActionKind::WaitIrecv;
      slots[static_cast<size_t>(st.rank)][{consumer, kWaitRecv, t}] = wrecv;
    }
  }

  ExecutionPlan plan;
  plan.num_ranks = P;
  plan.ranks.resize(static_cast<size_t>(P));
  for (int r = 0; r < P; ++r) {
    const auto& ord = schedule.order[static_cast<size_t>(r)];
    auto& out = plan.ranks[static_cast<size_t>(r)];
    auto it = slots[static_cast<size_t>(r)].begin();
    const auto stop = slots[static_cast<size_t>(r)].end();
    for (int k = 0; k <= static_cast<int>(ord.size()); ++k) {
      for (; it != stop && std::get<0>(it->first) == k; ++it) out.push_back(it->second);
      if (k == static_cast<int>(ord.size())) break;
      const int s = ord[static_cast<size_t>(k)];
      const auto& st = problem.stages[static_cast<size_t>(s)];
      const auto& seg = problem.segments[static_cast<size_t>(st.segment)];
      Action a;
      a.kind = st.dir == Direction::Forward ? ActionKind::FwStage : ActionKind::BwStage;
      a.stage = s;
      a.chunk = st.chunk;
      a.segment = st.segment;
      a.microbatch = seg.microbatch;
      a.submb = seg.submb;
      a.option = schedule.option[static_cast<size_t>(st.pair)];
      a.duration_s = schedule.end[static_cast<size_t>(s)] - schedule.start[static_cast<size_t>(s)];
      out.push_back(a);
    }
    if (opts.batch_p2p) {
      std::vector<Action> merged;
      for (size_t i = 0; i < out.size();) {
        size_t j = i;
        while (j < out.size() && is_post(out[j].kind)) ++j;
        if (j - i >= 2) {
          Action b;
          b.kind = ActionKind::BatchedP2p;
          b.members.assign(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(j));
          merged.push_back(std::move(b));
          i = j;
        } else {
          merged.push_back(out[i]);
          ++i;
        }
      }
      out = std::move(merged);
    }
  }
  plan.schedule_digest = schedule_digest(schedule);
  std::ostringstream os;
  for (const auto& rank : plan.ranks) {
    os << '|';
    for (const auto& a : rank) {
      os << to_string(a.kind) << ',' << a.stage << ',' << a.tag << ',' << a.peer << ',' << a.members.size() << ';';
    }
  }
  plan.plan_id = "plan-" + hex(fnv1a(os.str()) ^ plan.schedule_digest);
  return plan;
}

ExecutionPlan unbatch(const ExecutionPlan& plan) {
  ExecutionPlan out = plan;
  for (auto& rank : out.ranks) {
    std::vector<Action> flat;
    for (auto& a : rank) {
      if (a.kind == ActionKind::BatchedP2p) {
        flat.insert(flat.end(), a.members.begin(), a.members.end());
      } else {
        flat.push_back(a);
      }
    }
    rank = std::move(flat);
  }
  return out;
}

// ---------------------------------------------------------------------------

PlanReplay replay_plan(const ExecutionPlan& plan) {
  PlanReplay out;
  const auto flat = unbatch(plan);
  const int P = flat.num_ranks;
  int max_stage = -1;
  for (const auto& rank : flat.ranks) {
    for (const auto& a : rank) max_stage = std::max(max_stage, a.stage);
  }
  out.stage_start.assign(static_cast<size_t>(max_stage + 1), -1.0);
  out.stage_end.assign(static_cast<size_t>(max_stage + 1), -1.0);

  struct Msg {
    std::optional<double> send, recv;
    double latency = 0;
    int send_rank = -1, recv_rank = -1;
  };
  std::map<int, Msg> msgs;
  auto complete = [&](int tag) -> std::optional<double> {
    auto it = msgs.find(tag);
    if (it == msgs.end() || !it->second.send || !it->second.recv) return std::nullopt;
    return std::max(*it->second.send, *it->second.recv) + it->second.latency;
  };

  // Batched members post at the same instant, exactly like the flat plan;
  // the original plan's structure only matters for the post order.
  std::vector<size_t> pc(static_cast<size_t>(P), 0);
  std::vector<double> clock(static_cast<size_t>(P), 0.0);
  bool progress = true;
  while (progress) {
    progress = false;
    for (int r = 0; r < P; ++r) {
      const auto& acts = flat.ranks[static_cast<size_t>(r)];
      auto& i = pc[static_cast<size_t>(r)];
      auto& t = clock[static_cast<size_t>(r)];
      while (i < acts.size()) {
        const auto& a = acts[i];
        if (a.kind == ActionKind::FwStage || a.kind == ActionKind::BwStage) {
          if (a.stage >= 0) {
            out.stage_start[static_cast<size_t>(a.stage)] = t;
            out.stage_end[static_cast<size_t>(a.stage)] = t + a.duration_s;
          }
          t += a.duration_s;
        } else if (a.kind == ActionKind::Isend) {
          auto& m = msgs[a.tag];
          m.send = t;
          m.send_rank = r;
          m.latency = a.latency_s;
        } else if (a.kind == ActionKind::Irecv) {
          auto& m = msgs[a.tag];
          m.recv = t;
          m.recv_rank = r;
        } else {
          const auto done = complete(a.tag);
          if (!done) break;
          t = std::max(t, *done);
        }
        ++i;
        progress = true;
      }
    }
  }
  out.completed = true;
  for (int r = 0; r < P; ++r) {
    if (pc[static_cast<size_t>(r)] < flat.ranks[static_cast<size_t>(r)].size()) out.completed = false;
    out.makespan = std::max(out.makespan, clock[static_cast<size_t>(r)]);
  }
  if (!out.completed) {
    // Wait-for graph: a blocked rank waits on the peer that has not posted.
    std::vector<int> waits_on(static_cast<size_t>(P), -1);
    for (int r = 0; r < P; ++r) {
      const auto& acts = flat.ranks[static_cast<size_t>(r)];
      if (pc[static_cast<size_t>(r)] >= acts.size()) continue;
      const auto& a = acts[pc[static_cast<size_t>(r)]];
      if (a.peer >= 0 && a.peer < P && a.peer != r) {
        waits_on[static_cast<size_t>(r)] = a.peer;
      } else {
        waits_on[static_cast<size_t>(r)] = r;
      }
    }
    int start = -1;
    for (int r = 0; r < P && start < 0; ++r) {
      if (waits_on[static_cast<size_t>(r)] >= 0) start = r;
    }
    std::vector<int> path;
    std::vector<int> seen(static_cast<size_t>(P), -1);
    int v = start;
    while (v >= 0 && seen[static_cast<size_t>(v)] < 0) {
      seen[static_cast<size_t>(v)] = static_cast<int>(path.size());
      path.push_back(v);
      v = waits_on[static_cast<size_t>(v)];
    }
    PlanDiagnostic d;
    d.issue = PlanIssue::Deadlock;
    if (v >= 0) {
      d.witness.assign(path.begin() + seen[static_cast<size_t>(v)], path.end());
    } else {
      d.witness = path;
    }
    std::ostringstream m;
    m << "execution stalls; wait cycle over ranks";
    for (int w : d.witness) m << ' ' << w;
    d.message = m.str();
    out.diagnostics.push_back(std::move(d));
  }
  return out;
}

std::vector<PlanDiagnostic> validate_plan(const ExecutionPlan& plan) {
  std::vector<PlanDiagnostic> out;
  auto add = [&](PlanIssue i, const std::string& m) { out.push_back({i, m, {}}); };
  if (static_cast<int>(plan.ranks.size()) != plan.num_ranks) {
    add(PlanIssue::UnmatchedTag, "rank count does not match the action lists");
    return out;
  }
  for (const auto& rank : plan.ranks) {
    for (const auto& a : rank) {
      if (a.kind != ActionKind::BatchedP2p) continue;
      for (const auto& m : a.members) {
        if (!is_post(m.kind)) add(PlanIssue::MissingWait, "batched_p2p holds a non-communication action");
      }
    }
  }
  const auto flat = unbatch(plan);
  struct Side {
    int rank = -1, peer = -1, count = 0;
  };
  std::map<int, Side> sends, recvs;
  for (int r = 0; r < flat.num_ranks; ++r) {
    // Outstanding posts of this rank by (kind, tag).
    std::map<std::pair<int, int>, int> open;
    for (const auto& a : flat.ranks[static_cast<size_t>(r)]) {
      if (is_post(a.kind)) {
        auto& side = (a.kind == ActionKind::Isend ? sends : recvs)[a.tag];
        if (++side.count > 1) {
          add(PlanIssue::DuplicateTag, std::string(to_string(a.kind)) + " tag " + std::to_string(a.tag) + " posted twice");
        }
        side.rank = r;
        side.peer = a.peer;
        ++open[{static_cast<int>(a.kind), a.tag}];
      } else if (a.kind == ActionKind::WaitIsend || a.kind == ActionKind::WaitIrecv) {
        const auto post = a.kind == ActionKind::WaitIsend ? ActionKind::Isend : ActionKind::Irecv;
        auto it = open.find({static_cast<int>(post), a.tag});
        if (it == open.end() || it->second == 0) {
          add(PlanIssue::MissingWait, std::string(to_string(a.kind)) + " on rank " + std::to_string(r) + " for tag " +
                                          std::to_string(a.tag) + " has no preceding post");
        } else {
          --it->second;
        }
      }
    }
    for (const auto& [key, n] : open) {
      if (n > 0) {
        add(PlanIssue::MissingWait, std::string(to_string(static_cast<ActionKind>(key.first))) + " on rank " +
                                        std::to_string(r) + " for tag " + std::to_string(key.second) + " is never waited");
      }
    }
  }
  for (const auto& [t, s] : sends) {
    auto it = recvs.find(t);
    if (it == recvs.end()) {
      add(PlanIssue::UnmatchedTag, "isend tag " + std::to_string(t) + " has no irecv");
    } else if (it->second.rank != s.peer || it->second.peer != s.rank) {
      add(PlanIssue::UnmatchedTag, "tag " + std::to_string(t) + " pairs mismatched ranks");
    }
  }
  for (const auto& [t, s] : recvs) {
    if (!sends.count(t)) add(PlanIssue::UnmatchedTag, "irecv tag " + std::to_string(t) + " has no isend");
  }
  auto rep = replay_plan(plan);
  for (auto& d : rep.diagnostics) out.push_back(std::move(d));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Row {
  int rank;
  int stage;
};

std::vector<Row> rows_of(const Schedule& schedule) {
  std::vector<Row> rows;
  for (size_t r = 0; r < schedule.order.size(); ++r) {
    for (int s : schedule.order[r]) rows.push_back({static_cast<int>(r), s});
  }
  return rows;
}

}  // namespace

std::string gantt_csv(const ScheduleProblem& problem, const Schedule& schedule) {
  std::ostringstream os;
  os << "rank,stage,segment,module,microbatch,submb,depth,direction,start_s,end_s,option,bytes\n";
  for (const auto& row : rows_of(schedule)) {
    const auto& st = problem.stages[static_cast<size_t>(row.stage)];
    const auto& seg = problem.segments[static_cast<size_t>(st.segment)];
    const int opt = schedule.option[static_cast<size_t>(st.pair)];
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.9f,%.9f", schedule.start[static_cast<size_t>(row.stage)],
                  schedule.end[static_cast<size_t>(row.stage)]);
    os << row.rank << ',' << row.stage << ',' << st.segment << ',' << problem.module_names[static_cast<size_t>(seg.module)]
       << ',' << seg.microbatch << ',' << seg.submb << ',' << seg.depth << ',' << to_string(st.dir) << ',' << buf << ','
       << opt << ',' << problem.activation(row.stage, opt) << '\n';
  }
  return os.str();
}

std::string gantt_svg(const ScheduleProblem& problem, const Schedule& schedule) {
  // Forward / backward shade per module.
  static const char* kPalette[][2] = {
      {"#9ecae1", "#3182bd"}, {"#a1d99b", "#31a354"}, {"#fdae6b", "#e6550d"},
      {"#bcbddc", "#756bb1"}, {"#fa9fb5", "#c51b8a"}, {"#d9d9d9", "#636363"},
  };
  constexpr double kLeft = 60, kWidth = 1100, kLane = 28, kTop = 20;
  const int P = problem.num_ranks;
  const double span = schedule.makespan > 0 ? schedule.makespan : 1.0;
  std::ostringstream os;
  char buf[256];
  const double height = kTop * 2 + kLane * P;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"monospace\" "
                "font-size=\"11\">\n",
                kLeft + kWidth + 20, height);
  os << buf;
  for (int r = 0; r < P; ++r) {
    const double y = kTop + r * kLane;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"4\" y=\"%.1f\">rank %d</text>\n<rect x=\"%.0f\" y=\"%.1f\" width=\"%.0f\" height=\"%.0f\" "
                  "fill=\"none\" stroke=\"#cccccc\"/>\n",
                  y + kLane * 0.6, r, kLeft, y, kWidth, kLane - 4);
    os << buf;
  }
  for (const auto& row : rows_of(schedule)) {
    const auto& st = problem.stages[static_cast<size_t>(row.stage)];
    const auto& seg = problem.segments[static_cast<size_t>(st.segment)];
    const auto& colors = kPalette[static_cast<size_t>(seg.module) % (sizeof kPalette / sizeof kPalette[0])];
    const double x0 = kLeft + kWidth * schedule.start[static_cast<size_t>(row.stage)] / span;
    const double w = kWidth * (schedule.end[static_cast<size_t>(row.stage)] - schedule.start[static_cast<size_t>(row.stage)]) / span;
    const double y = kTop + row.rank * kLane;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.3f\" y=\"%.1f\" width=\"%.3f\" height=\"%.0f\" fill=\"%s\" stroke=\"#ffffff\" "
                  "stroke-width=\"0.5\"><title>%s mb%d.%d k%d %s</title></rect>\n",
                  x0, y, w, kLane - 4, colors[st.dir == Direction::Forward ? 0 : 1],
                  problem.module_names[static_cast<size_t>(seg.module)].c_str(), seg.microbatch, seg.submb, seg.depth,
                  to_string(st.dir));
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mmpipe
