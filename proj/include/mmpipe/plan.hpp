// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compilation of schedules into per-rank action lists with asynchronous
// point-to-point messages, a discrete-event checker/replayer for such plans,
// and Gantt rendering.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmpipe/scheduler.hpp"

namespace mmpipe {

enum class ActionKind { FwStage, BwStage, Isend, Irecv, WaitIsend, WaitIrecv, BatchedP2p };

const char* to_string(ActionKind k);
ActionKind action_kind_from_string(const std::string& s);

struct Action {
  ActionKind kind = ActionKind::FwStage;
  // Stage actions.
  int stage = -1;
  int chunk = -1;
  int segment = -1;
  int microbatch = -1;
  int submb = -1;
  int option = 0;
  double duration_s = 0;
  // Communication actions.
  int peer = -1;
  int tag = -1;
  int64_t bytes = 0;
  double latency_s = 0;  // transfer time once both sides are posted
  // batched_p2p: consecutive isend/irecv actions posted together.
  std::vector<Action> members;

  friend bool operator==(const Action&, const Action&) = default;
};

struct ExecutionPlan {
  int num_ranks = 0;
  std::vector<std::vector<Action>> ranks;
  std::string plan_id;
  uint64_t schedule_digest = 0;

  friend bool operator==(const ExecutionPlan&, const ExecutionPlan&) = default;
};

/// FNV-1a over the schedule's orders, times and options.
uint64_t schedule_digest(const Schedule& schedule);

struct CompileOptions {
  bool batch_p2p = true;
};

/// Throws InvalidSchedule when the schedule fails validation.
ExecutionPlan compile_plan(const ScheduleProblem& problem, const Schedule& schedule, const CompileOptions& opts = {});

/// Replaces each batched_p2p by its members.
ExecutionPlan unbatch(const ExecutionPlan& plan);

enum class PlanIssue { UnmatchedTag, MissingWait, DuplicateTag, Deadlock };
const char* to_string(PlanIssue i);

struct PlanDiagnostic {
  PlanIssue issue = PlanIssue::UnmatchedTag;
  std::string message;
  std::vector<int> witness;  // ranks forming a wait cycle, for Deadlock
};

struct PlanReplay {
  bool completed = false;
  std::vector<double> stage_start;  // indexed by stage id, -1 if never run
  std::vector<double> stage_end;
  double makespan = 0;
  std::vector<PlanDiagnostic> diagnostics;
};

/// Discrete-event execution: posts are instantaneous, a transfer starts
/// once both sides are posted, waits block until it completes.
PlanReplay replay_plan(const ExecutionPlan& plan);

/// Tag pairing, wait matching and termination; empty when the plan is sound.
std::vector<PlanDiagnostic> validate_plan(const ExecutionPlan& plan);

/// Timeline rows: header plus one row per stage.
std::string gantt_csv(const ScheduleProblem& problem, const Schedule& schedule);
/// One lane per rank, boxes coloured by module and direction.
std::string gantt_svg(const ScheduleProblem& problem, const Schedule& schedule);

}  // namespace mmpipe
