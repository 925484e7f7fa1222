// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/io.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mmpipe/errors.hpp"

namespace mmpipe {

using nlohmann::json;

namespace {

json document(const std::string& kind) { return json{{"schema_version", "mmpipe." + kind + "/1"}}; }

json parse(const std::string& text, const std::string& kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) throw ParseError("missing schema_version");
  const auto v = j.at("schema_version").get<std::string>();
  if (v != "mmpipe." + kind + "/1") throw ParseError("expected mmpipe." + kind + "/1, got " + v);
  return j;
}

// Field access that reports which key is missing or mistyped.
template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

json range_json(const ValueRange& r) { return {{"lo", r.lo}, {"hi", r.hi}, {"log_uniform", r.log_uniform}}; }
ValueRange range_from(const json& j) {
  return {field<double>(j, "lo"), field<double>(j, "hi"), field_or<bool>(j, "log_uniform", false)};
}

}  // namespace

// --- batch ------------------------------------------------------------------

std::string batch_to_json(const BatchMeta& batch) {
  auto j = document("batch");
  j["iteration"] = batch.iteration;
  json mbs = json::array();
  for (const auto& mb : batch.microbatches) {
    json samples = json::array();
    for (const auto& s : mb.samples()) samples.push_back({{"id", s.id}, {"instances", s.instances}, {"tokens", s.tokens}});
    mbs.push_back({{"capacity", mb.capacity()}, {"samples", samples}});
  }
  j["microbatches"] = mbs;
  return j.dump(2);
}

BatchMeta batch_from_json(const std::string& text) {
  const auto j = parse(text, "batch");
  BatchMeta b;
  b.iteration = field_or<int64_t>(j, "iteration", 0);
  for (const auto& m : field<json>(j, "microbatches")) {
    std::vector<SampleMeta> samples;
    for (const auto& s : field<json>(m, "samples")) {
      SampleMeta x;
      x.id = field_or<int64_t>(s, "id", 0);
      x.instances = field_or<std::map<std::string, int64_t>>(s, "instances", {});
      x.tokens = field_or<std::map<std::string, int64_t>>(s, "tokens", {});
      samples.push_back(std::move(x));
    }
    b.microbatches.emplace_back(field<int64_t>(m, "capacity"), std::move(samples));
  }
  const auto errs = validate_batch(b);
  if (!errs.empty()) throw ParseError("invalid batch: " + errs.front());
  return b;
}

// --- distribution -------------------------------------------------------------

std::string distribution_to_json(const DistributionSpec& dist) {
  auto j = document("distribution");
  j["text_modality"] = dist.text_modality;
  json comps = json::array();
  for (const auto& c : dist.components) {
    json mods = json::object();
    for (const auto& [name, law] : c.modalities) {
      json l = {{"instances", range_json(law.instances)}, {"tokens_per_instance", range_json(law.tokens_per_instance)}};
      if (law.duration_s) {
        l["duration_s"] = range_json(*law.duration_s);
        l["tokens_per_second"] = law.tokens_per_second;
      }
      mods[name] = l;
    }
    comps.push_back({{"name", c.name}, {"weight", c.weight}, {"text_tokens", range_json(c.text_tokens)}, {"modalities", mods}});
  }
  j["components"] = comps;
  return j.dump(2);
}

DistributionSpec distribution_from_json(const std::string& text) {
  const auto j = parse(text, "distribution");
  DistributionSpec d;
  d.text_modality = field_or<std::string>(j, "text_modality", "text");
  for (const auto& c : field<json>(j, "components")) {
    MixtureComponent mc;
    mc.name = field_or<std::string>(c, "name", "");
    mc.weight = field_or<double>(c, "weight", 1.0);
    mc.text_tokens = range_from(field<json>(c, "text_tokens"));
    if (c.contains("modalities")) {
      for (const auto& [name, l] : c.at("modalities").items()) {
        ModalityLaw law;
        law.instances = range_from(field<json>(l, "instances"));
        if (l.contains("tokens_per_instance")) law.tokens_per_instance = range_from(l.at("tokens_per_instance"));
        if (l.contains("duration_s")) {
          law.duration_s = range_from(l.at("duration_s"));
          law.tokens_per_second = field<double>(l, "tokens_per_second");
        }
        mc.modalities[name] = law;
      }
    }
    d.components.push_back(std::move(mc));
  }
  const auto errs = validate_distribution(d);
  if (!errs.empty()) throw ParseError("invalid distribution: " + errs.front());
  return d;
}

// --- model / device / overrides ----------------------------------------------

std::string model_to_json(const ModelPreset& preset) {
  auto j = document("model");
  const auto& m = preset.model;
  j["name"] = m.name;
  j["context_length"] = m.context_length;
  j["parallel"] = {{"pp", preset.parallel.pp}, {"tp", preset.parallel.tp}, {"dp", preset.parallel.dp}};
  json mods = json::array();
  for (const auto& x : m.modules) {
    json o = {{"name", x.name},         {"modality", x.modality.name}, {"role", to_string(x.role)},
              {"layers", x.layers},     {"embed_dim", x.embed_dim},    {"ffn_dim", x.ffn_dim},
              {"attn_heads", x.attn_heads}, {"attn_groups", x.attn_groups}};
    if (x.tokens_per_instance) o["tokens_per_instance"] = *x.tokens_per_instance;
    mods.push_back(o);
  }
  j["modules"] = mods;
  json edges = json::array();
  for (const auto& e : m.edges) {
    edges.push_back({{"producer", m.modules[static_cast<size_t>(e.producer)].name},
                     {"consumer", m.modules[static_cast<size_t>(e.consumer)].name},
                     {"latency_s", e.latency_s}});
  }
  j["edges"] = edges;
  return j.dump(2);
}

ModelPreset model_from_json(const std::string& text) {
  const auto j = parse(text, "model");
  ModelPreset p;
  auto& m = p.model;
  m.name = field<std::string>(j, "name");
  m.context_length = field_or<int64_t>(j, "context_length", 8192);
  if (j.contains("parallel")) {
    const auto& par = j.at("parallel");
    p.parallel.pp = field_or<int>(par, "pp", 1);
    p.parallel.tp = field_or<int>(par, "tp", 1);
    p.parallel.dp = field_or<int>(par, "dp", 1);
  }
  int idx = 0;
  for (const auto& x : field<json>(j, "modules")) {
    ModalityModuleSpec s;
    s.name = field<std::string>(x, "name");
    s.modality = {field<std::string>(x, "modality"), idx++};
    s.role = module_role_from_string(field<std::string>(x, "role"));
    s.layers = field<int>(x, "layers");
    s.embed_dim = field<int64_t>(x, "embed_dim");
    s.ffn_dim = field<int64_t>(x, "ffn_dim");
    s.attn_heads = field<int>(x, "attn_heads");
    s.attn_groups = field<int>(x, "attn_groups");
    if (x.contains("tokens_per_instance")) s.tokens_per_instance = field<int64_t>(x, "tokens_per_instance");
    m.modules.push_back(std::move(s));
  }
  for (const auto& e : field_or<json>(j, "edges", json::array())) {
    AdapterEdge a;
    a.producer = m.module_index(field<std::string>(e, "producer"));
    a.consumer = m.module_index(field<std::string>(e, "consumer"));
    a.latency_s = field_or<double>(e, "latency_s", 0.0);
    m.edges.push_back(a);
  }
  const auto errs = validate_model(m);
  if (!errs.empty()) throw ParseError("invalid model: " + errs.front());
  return p;
}

std::string device_to_json(const DeviceSpec& d) {
  auto j = document("device");
  j.update({{"name", d.name},
            {"flops", d.flops},
            {"mem_bandwidth", d.mem_bandwidth},
            {"net_bandwidth", d.net_bandwidth},
            {"memory_bytes", d.memory_bytes},
            {"alpha_fop", d.alpha_fop},
            {"alpha_mem", d.alpha_mem},
            {"alpha_net", d.alpha_net}});
  return j.dump(2);
}

DeviceSpec device_from_json(const std::string& text) {
  const auto j = parse(text, "device");
  DeviceSpec d;
  d.name = field_or<std::string>(j, "name", "custom");
  d.flops = field<double>(j, "flops");
  d.mem_bandwidth = field<double>(j, "mem_bandwidth");
  d.net_bandwidth = field<double>(j, "net_bandwidth");
  d.memory_bytes = field<int64_t>(j, "memory_bytes");
  d.alpha_fop = field_or<double>(j, "alpha_fop", 1.0);
  d.alpha_mem = field_or<double>(j, "alpha_mem", 1.0);
  d.alpha_net = field_or<double>(j, "alpha_net", 1.0);
  const auto errs = validate_device(d);
  if (!errs.empty()) throw ParseError("invalid device: " + errs.front());
  return d;
}

std::string overrides_to_json(const CostOverride& o) {
  auto j = document("overrides");
  json rows = json::array();
  for (const auto& [key, s] : o.per_layer_s) {
    rows.push_back({{"module", key.first}, {"direction", to_string(key.second)}, {"seconds_per_layer", s}});
  }
  j["layers"] = rows;
  return j.dump(2);
}

CostOverride overrides_from_json(const std::string& text) {
  const auto j = parse(text, "overrides");
  CostOverride o;
  for (const auto& r : field<json>(j, "layers")) {
    const double s = field<double>(r, "seconds_per_layer");
    if (s < 0) throw ParseError("negative override");
    o.per_layer_s[{field<std::string>(r, "module"), direction_from_string(field<std::string>(r, "direction"))}] = s;
  }
  return o;
}

// --- segment plan ---------------------------------------------------------------

std::string segment_plan_to_json(const ModelSpec& model, const SegmentPlan& plan) {
  auto j = document("segment_plan");
  json mods = json::array();
  for (size_t m = 0; m < plan.K.size(); ++m) {
    mods.push_back({{"module", model.modules[m].name},
                    {"K", plan.K[m]},
                    {"T_s", plan.T[m]},
                    {"submb_size", plan.submb.size[m]}});
  }
  j["modules"] = mods;
  j["order"] = plan.order;
  json chunks = json::array();
  for (const auto& c : plan.placement.chunks) {
    chunks.push_back({{"module", c.module}, {"lo", c.lo}, {"hi", c.hi}, {"segment", c.segment}, {"rank", c.rank}});
  }
  j["placement"] = {{"num_ranks", plan.placement.num_ranks}, {"chunks", chunks}};
  return j.dump(2);
}

SegmentPlan segment_plan_from_json(const std::string& text) {
  const auto j = parse(text, "segment_plan");
  SegmentPlan p;
  for (const auto& m : field<json>(j, "modules")) {
    p.K.push_back(field<int>(m, "K"));
    p.T.push_back(field<double>(m, "T_s"));
    p.submb.size.push_back(field<int64_t>(m, "submb_size"));
  }
  p.order = field<std::vector<int>>(j, "order");
  const auto& pl = field<json>(j, "placement");
  p.placement.num_ranks = field<int>(pl, "num_ranks");
  for (const auto& c : field<json>(pl, "chunks")) {
    p.placement.chunks.push_back(
        {field<int>(c, "module"), field<int>(c, "lo"), field<int>(c, "hi"), field<int>(c, "segment"), field<int>(c, "rank")});
  }
  return p;
}

// --- schedule / plan ---------------------------------------------------------

std::string schedule_to_json(const ScheduleProblem& problem, const Schedule& schedule) {
  auto j = document("schedule");
  j["num_ranks"] = problem.num_ranks;
  j["makespan_s"] = schedule.makespan;
  j["peak_memory_bytes"] = peak_memory(problem, schedule);
  json ranks = json::array();
  for (size_t r = 0; r < schedule.order.size(); ++r) {
    json rows = json::array();
    for (int s : schedule.order[r]) {
      const auto& st = problem.stages[static_cast<size_t>(s)];
      const auto& seg = problem.segments[static_cast<size_t>(st.segment)];
      const auto& opt = problem.pairs[static_cast<size_t>(st.pair)].options[static_cast<size_t>(
          schedule.option[static_cast<size_t>(st.pair)])];
      json strategy = json::array();
      for (auto l : opt.layers) strategy.push_back(to_string(l));
      rows.push_back({{"stage", s},
                      {"segment", st.segment},
                      {"module", problem.module_names[static_cast<size_t>(seg.module)]},
                      {"microbatch", seg.microbatch},
                      {"submb", seg.submb},
                      {"depth", seg.depth},
                      {"direction", to_string(st.dir)},
                      {"start_s", schedule.start[static_cast<size_t>(s)]},
                      {"end_s", schedule.end[static_cast<size_t>(s)]},
                      {"activation_bytes", opt.bytes},
                      {"strategy", strategy}});
    }
    ranks.push_back(rows);
  }
  j["ranks"] = ranks;
  return j.dump(2);
}

namespace {

json action_json(const Action& a) {
  json o = {{"kind", to_string(a.kind)}};
  switch (a.kind) {
    case ActionKind::FwStage:
    case ActionKind::BwStage:
      o.update({{"stage", a.stage},
                {"chunk", a.chunk},
                {"segment", a.segment},
                {"microbatch", a.microbatch},
                {"submb", a.submb},
                {"option", a.option},
                {"duration_s", a.duration_s}});
      break;
    case ActionKind::BatchedP2p: {
      json members = json::array();
      for (const auto& m : a.members) members.push_back(action_json(m));
      o["members"] = members;
      break;
    }
    default:
      o.update({{"peer", a.peer}, {"tag", a.tag}, {"bytes", a.bytes}, {"latency_s", a.latency_s}});
  }
  return o;
}

Action action_from(const json& o) {
  Action a;
  a.kind = action_kind_from_string(field<std::string>(o, "kind"));
  switch (a.kind) {
    case ActionKind::FwStage:
    case ActionKind::BwStage:
      a.stage = field<int>(o, "stage");
      a.chunk = field_or<int>(o, "chunk", -1);
      a.segment = field_or<int>(o, "segment", -1);
      a.microbatch = field_or<int>(o, "microbatch", -1);
      a.submb = field_or<int>(o, "submb", -1);
      a.option = field_or<int>(o, "option", 0);
      a.duration_s = field<double>(o, "duration_s");
      break;
    case ActionKind::BatchedP2p:
      for (const auto& m : field<json>(o, "members")) a.members.push_back(action_from(m));
      break;
    default:
      a.peer = field<int>(o, "peer");
      a.tag = field<int>(o, "tag");
      a.bytes = field_or<int64_t>(o, "bytes", 0);
      a.latency_s = field_or<double>(o, "latency_s", 0.0);
  }
  return a;
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string plan_to_json(const ExecutionPlan& plan) {
  auto j = document("execution_plan");
  j["plan_id"] = plan.plan_id;
  j["schedule_digest"] = hex64(plan.schedule_digest);
  j["num_ranks"] = plan.num_ranks;
  json ranks = json::array();
  for (const auto& rank : plan.ranks) {
    json acts = json::array();
    for (const auto& a : rank) acts.push_back(action_json(a));
    ranks.push_back(acts);
  }
  j["ranks"] = ranks;
  return j.dump(2);
}

ExecutionPlan plan_from_json(const std::string& text) {
  const auto j = parse(text, "execution_plan");
  ExecutionPlan p;
  p.plan_id = field_or<std::string>(j, "plan_id", "");
  p.schedule_digest = std::stoull(field_or<std::string>(j, "schedule_digest", "0"), nullptr, 16);
  p.num_ranks = field<int>(j, "num_ranks");
  for (const auto& rank : field<json>(j, "ranks")) {
    std::vector<Action> acts;
    for (const auto& a : rank) acts.push_back(action_from(a));
    p.ranks.push_back(std::move(acts));
  }
  return p;
}

std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream os;
  os << "elapsed_ms,best_makespan_s,rollout\n";
  char buf[96];
  for (const auto& t : trace) {
    std::snprintf(buf, sizeof buf, "%.3f,%.9f,%lld\n", t.elapsed_ms, t.best, static_cast<long long>(t.rollout));
    os << buf;
  }
  return os.str();
}

std::string report_to_json(const SearchReport& report) {
  auto j = document("search_report");
  j["makespan_s"] = report.makespan;
  j["rollouts"] = report.rollouts;
  j["evaluations"] = report.evaluations;
  j["tree_size"] = report.tree_size;
  j["budget_exhausted"] = report.budget_exhausted;
  j["exhausted"] = report.exhausted;
  j["fallback"] = report.fallback;
  j["sequence"] = report.sequence;
  json trace = json::array();
  for (const auto& t : report.trace) trace.push_back({{"rollout", t.rollout}, {"elapsed_ms", t.elapsed_ms}, {"best_makespan_s", t.best}});
  j["trace"] = trace;
  return j.dump(2);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << content;
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

}  // namespace mmpipe
