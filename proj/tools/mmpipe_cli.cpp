// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// mmpipe command-line driver.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "mmpipe/errors.hpp"
#include "mmpipe/io.hpp"

namespace fs = std::filesystem;
using namespace mmpipe;

namespace {

struct CommonArgs {
  std::string model = "VLM-S";
  std::string device = "h800";
  std::string batch;  // batch JSON; synthetic when empty
  std::string dist = "vlm-mixed";
  std::string overrides;
  int pp = 0;
  int microbatches = 8;
  int64_t capacity = 8192;
  double budget_ms = 1000;
  int workers = 1;
  uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool search) {
  cmd->add_option("--model", a.model, "builtin model name or model JSON file")->capture_default_str();
  cmd->add_option("--device", a.device, "builtin device name or device JSON file")->capture_default_str();
  cmd->add_option("--overrides", a.overrides, "per-layer cost override JSON file");
  cmd->add_option("--pp", a.pp, "pipeline ranks (default: model preset)");
  if (!search) return;
  cmd->add_option("--batch", a.batch, "batch JSON file (default: synthetic)");
  cmd->add_option("--dist", a.dist, "synthetic sampler preset")->capture_default_str();
  cmd->add_option("--microbatches", a.microbatches, "synthetic microbatches per iteration")->capture_default_str();
  cmd->add_option("--capacity", a.capacity, "microbatch token capacity")->capture_default_str();
  cmd->add_option("--budget-ms", a.budget_ms, "search wall-clock budget")->capture_default_str();
  cmd->add_option("--workers", a.workers, "search worker threads")->capture_default_str();
  cmd->add_option("--seed", a.seed, "random seed")->capture_default_str();
}

std::shared_ptr<CostContext> make_context(const CommonArgs& a) {
  auto ctx = std::make_shared<CostContext>();
  const ModelPreset preset = fs::exists(a.model) ? model_from_json(read_file(a.model)) : builtin_model(a.model);
  ctx->model = preset.model;
  ctx->parallel = preset.parallel;
  if (a.pp > 0) ctx->parallel.pp = a.pp;
  ctx->device = fs::exists(a.device) ? device_from_json(read_file(a.device)) : builtin_device(a.device);
  if (!a.overrides.empty()) ctx->overrides = overrides_from_json(read_file(a.overrides));
  return ctx;
}

BatchMeta load_batch(const CommonArgs& a, int64_t iteration = 0) {
  if (!a.batch.empty()) return batch_from_json(read_file(a.batch));
  return synthetic_batch(builtin_distribution(a.dist), a.capacity, a.microbatches, a.seed + static_cast<uint64_t>(iteration),
                         iteration);
}

SearchBudget budget_of(const CommonArgs& a) {
  SearchBudget b;
  b.wall_clock_ms = a.budget_ms;
  b.workers = a.workers;
  b.seed = a.seed;
  return b;
}

// Writes to `<out>/<name>` when --out is set, else to stdout.
void emit(const CommonArgs& a, const std::string& name, const std::string& content) {
  if (a.out.empty()) {
    std::cout << content;
    if (!content.empty() && content.back() != '\n') std::cout << '\n';
    return;
  }
  fs::create_directories(a.out);
  write_file((fs::path(a.out) / name).string(), content);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int run_profile(const CommonArgs& a) {
  const auto ctx = make_context(a);
  const int P = ctx->parallel.pp;
  std::ostringstream os;
  os << "module,size,latency_s,throughput\n";
  for (int m = 0; m < static_cast<int>(ctx->model.modules.size()); ++m) {
    std::vector<int64_t> sizes;
    if (module_unit_kind(ctx->model, m) == UnitKind::Instances) {
      sizes = {1, 2, 4, 8, 12, 16, 24, 32, 48, 64};
    } else {
      for (int64_t t = 256; t <= ctx->model.context_length; t *= 2) sizes.push_back(t);
    }
    for (const auto& pt : efficiency_curve(*ctx, m, sizes, P)) {
      os << ctx->model.modules[static_cast<size_t>(m)].name << ',' << pt.size << ',' << fmt("%.9f", pt.latency_s) << ','
         << fmt("%.3f", pt.throughput) << '\n';
    }
  }
  emit(a, "profile.csv", os.str());
  return 0;
}

int run_partition(const CommonArgs& a, const std::vector<int>& fixed_k) {
  const auto ctx = make_context(a);
  const auto plan = make_segment_plan(*ctx, default_submb_config(*ctx), fixed_k);
  emit(a, "segment_plan.json", segment_plan_to_json(ctx->model, plan));
  return 0;
}

int run_plan(const CommonArgs& a) {
  const auto ctx = make_context(a);
  const auto seg = make_segment_plan(*ctx, default_submb_config(*ctx));
  StageCostTable table(ctx, seg.placement);
  const auto rep = plan_iteration(table, seg, load_batch(a), budget_of(a));
  const auto plan = compile_plan(*rep.problem, rep.schedule);
  if (a.out.empty()) {
    std::cout << plan_to_json(plan) << '\n';
  } else {
    emit(a, "schedule.json", schedule_to_json(*rep.problem, rep.schedule));
    emit(a, "plan.json", plan_to_json(plan));
    emit(a, "report.json", report_to_json(rep));
    emit(a, "trace.csv", trace_csv(rep.trace));
    emit(a, "gantt.csv", gantt_csv(*rep.problem, rep.schedule));
    emit(a, "gantt.svg", gantt_svg(*rep.problem, rep.schedule));
  }
  std::cerr << "makespan_s=" << fmt("%.6f", rep.makespan) << " rollouts=" << rep.rollouts
            << " stages=" << rep.problem->stages.size() << " plan_id=" << plan.plan_id << '\n';
  return 0;
}

int run_simulate(const std::string& path) {
  const auto plan = plan_from_json(read_file(path));
  const auto diags = validate_plan(plan);
  for (const auto& d : diags) std::cout << to_string(d.issue) << ": " << d.message << '\n';
  if (!diags.empty()) return 1;
  const auto rep = replay_plan(plan);
  std::cout << "ok makespan_s=" << fmt("%.9f", rep.makespan) << '\n';
  return 0;
}

// Baselines keep every activation (no recomputation or offload).
std::vector<int> fastest_options(const ScheduleProblem& p) {
  std::vector<int> out;
  for (const auto& pr : p.pairs) out.push_back(static_cast<int>(pr.options.size()) - 1);
  return out;
}

std::string row(const std::string& name, const ScheduleProblem& p, const Schedule& s) {
  const char* status = validate_schedule(p, s).empty() ? "ok" : "exceeds-memory";
  return name + "," + fmt("%.9f", s.makespan) + "," + std::to_string(peak_memory(p, s)) + "," + status + "\n";
}

int run_compare(const CommonArgs& a) {
  const auto ctx = make_context(a);
  const auto seg = make_segment_plan(*ctx, default_submb_config(*ctx));
  StageCostTable table(ctx, seg.placement);
  const auto batch = load_batch(a);
  const auto rep = plan_iteration(table, seg, batch, budget_of(a));
  const auto& dip_problem = *rep.problem;

  std::ostringstream os;
  os << "scheduler,makespan_s,peak_memory_bytes,status\n";
  os << row("dip", dip_problem, rep.schedule);

  try {
    os << row("encoder-first", dip_problem, schedule_encoder_first(dip_problem, fastest_options(dip_problem)));
  } catch (const Error& e) {
    os << "encoder-first,,," << e.what() << '\n';
  }

  try {
    std::vector<WorkShape> ref = microbatch_shapes(ctx->model, batch.microbatches.front());
    const auto classic = build_classic_problem(*ctx, classic_partition(*ctx, ref), batch);
    os << row("1f1b", classic, schedule_1f1b(classic, fastest_options(classic)));
  } catch (const Error& e) {
    os << "1f1b,,," << e.what() << '\n';
  }
  emit(a, "compare.csv", os.str());
  return 0;
}

int run_bench(const CommonArgs& a, int iterations) {
  const auto ctx = make_context(a);
  const auto seg = make_segment_plan(*ctx, default_submb_config(*ctx));
  StageCostTable table(ctx, seg.placement);
  std::vector<BatchMeta> batches;
  for (int k = 0; k < iterations; ++k) batches.push_back(load_batch(a, k));
  std::ostringstream os;
  os << "iteration,stages,makespan_s,rollouts,fallback\n";
  pipeline_ahead(table, seg, batches, budget_of(a), {}, [&](size_t k, const SearchReport& r) {
    os << k << ',' << r.problem->stages.size() << ',' << fmt("%.9f", r.makespan) << ',' << r.rollouts << ','
       << (r.fallback ? 1 : 0) << '\n';
  });
  emit(a, "bench.csv", os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal pipeline schedule planner"};
  app.require_subcommand(1);
  CommonArgs args;
  std::vector<int> fixed_k;
  std::string plan_path;
  int iterations = 4;

  auto* profile = app.add_subcommand("profile", "module efficiency curves (CSV)");
  add_common(profile, args, false);
  profile->add_option("--out", args.out, "output directory");

  auto* partition = app.add_subcommand("partition", "emit the segment plan");
  add_common(partition, args, false);
  partition->add_option("--K", fixed_k, "fixed segment counts per module");
  partition->add_option("--out", args.out, "output directory");

  auto* plan = app.add_subcommand("plan", "search one iteration and compile its execution plan");
  add_common(plan, args, true);
  plan->add_option("--out", args.out, "output directory");

  auto* simulate = app.add_subcommand("simulate", "validate and replay an execution plan");
  simulate->add_option("plan", plan_path, "execution plan JSON")->required();

  auto* compare = app.add_subcommand("compare", "DIP vs 1F1B vs encoder-first");
  add_common(compare, args, true);
  compare->add_option("--out", args.out, "output directory");

  auto* bench = app.add_subcommand("bench", "multi-iteration sweep over synthetic batches");
  add_common(bench, args, true);
  bench->add_option("--iterations", iterations, "iterations")->capture_default_str();
  bench->add_option("--out", args.out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*profile) return run_profile(args);
    if (*partition) return run_partition(args, fixed_k);
    if (*plan) return run_plan(args);
    if (*simulate) return run_simulate(plan_path);
    if (*compare) return run_compare(args);
    if (*bench) return run_bench(args, iterations);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
