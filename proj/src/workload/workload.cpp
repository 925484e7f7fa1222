// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpipe/workload.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "mmpipe/errors.hpp"

namespace mmpipe {

namespace {

int64_t lookup(const std::map<std::string, int64_t>& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? 0 : it->second;
}

int64_t sample_instances(const SampleMeta& s) {
  int64_t n = 0;
  for (const auto& [_, c] : s.instances) n += c;
  return n;
}

}  // namespace

int64_t SampleMeta::total_tokens() const {
  int64_t n = 0;
  for (const auto& [_, t] : tokens) n += t;
  return n;
}

int64_t SampleMeta::instance_count(const std::string& modality) const {
  return lookup(instances, modality);
}

int64_t SampleMeta::token_count(const std::string& modality) const {
  return lookup(tokens, modality);
}

MicrobatchMeta::MicrobatchMeta(int64_t capacity, std::vector<SampleMeta> samples)
    : capacity_(capacity), samples_(std::move(samples)) {
  for (const auto& s : samples_) {
    for (const auto& [m, c] : s.instances) instance_totals_[m] += c;
    for (const auto& [m, t] : s.tokens) token_totals_[m] += t;
    total_tokens_ += s.total_tokens();
  }
}

int64_t MicrobatchMeta::instances(const std::string& modality) const {
  return lookup(instance_totals_, modality);
}

int64_t MicrobatchMeta::tokens(const std::string& modality) const {
  return lookup(token_totals_, modality);
}

std::vector<std::string> validate_batch(const BatchMeta& batch) {
  std::vector<std::string> errors;
  if (batch.microbatches.empty()) errors.emplace_back("batch has no microbatches");
  for (size_t i = 0; i < batch.microbatches.size(); ++i) {
    const auto& mb = batch.microbatches[i];
    if (mb.capacity() != batch.microbatches.front().capacity()) {
      errors.push_back("microbatch " + std::to_string(i) + " has a different capacity");
    }
    if (mb.total_tokens() > mb.capacity()) {
      errors.push_back("microbatch " + std::to_string(i) + " exceeds its capacity");
    }
    for (const auto& s : mb.samples()) {
      for (const auto& [m, c] : s.instances) {
        if (c < 0) errors.push_back("negative instance count for " + m);
      }
      for (const auto& [m, t] : s.tokens) {
        if (t < 0) errors.push_back("negative token count for " + m);
      }
    }
  }
  return errors;
}

std::vector<MicrobatchMeta> pack_samples(std::span<const SampleMeta> samples, int64_t capacity,
                                         std::optional<int64_t> max_instances) {
  std::vector<MicrobatchMeta> out;
  std::vector<SampleMeta> current;
  int64_t used = 0;
  int64_t used_instances = 0;
  for (const auto& s : samples) {
    const int64_t t = s.total_tokens();
    const int64_t n = sample_instances(s);
    if (t > capacity) {
      throw SampleTooLarge("sample " + std::to_string(s.id) + " has " + std::to_string(t) +
                           " tokens, capacity is " + std::to_string(capacity));
    }
    if (max_instances && n > *max_instances) {
      throw SampleTooLarge("sample " + std::to_string(s.id) + " has " + std::to_string(n) +
                           " instances, limit is " + std::to_string(*max_instances));
    }
    const bool fits =
        used + t <= capacity && (!max_instances || used_instances + n <= *max_instances);
    if (!fits && !current.empty()) {
      out.emplace_back(capacity, std::move(current));
      current.clear();
      used = 0;
      used_instances = 0;
    }
    current.push_back(s);
    used += t;
    used_instances += n;
  }
  if (!current.empty()) out.emplace_back(capacity, std::move(current));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool bad_range(const ValueRange& r) { return !(r.lo <= r.hi) || (r.log_uniform && r.lo <= 0); }

double draw(const ValueRange& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  if (r.log_uniform) return std::exp(std::log(r.lo) + x * (std::log(r.hi) - std::log(r.lo)));
  return r.lo + x * (r.hi - r.lo);
}

// Integer draw over [lo, hi] inclusive.
int64_t draw_int(const ValueRange& r, std::mt19937_64& rng) {
  const auto lo = static_cast<int64_t>(std::ceil(r.lo));
  const auto hi = static_cast<int64_t>(std::floor(r.hi));
  if (hi <= lo) return lo;
  if (!r.log_uniform) {
    std::uniform_int_distribution<int64_t> u(lo, hi);
    return u(rng);
  }
  // log-uniform over [lo, hi + 1) then floor, so hi stays reachable.
  const ValueRange widened{static_cast<double>(lo), static_cast<double>(hi) + 1.0, true};
  return std::min<int64_t>(hi, static_cast<int64_t>(std::floor(draw(widened, rng))));
}

}  // namespace

std::vector<std::string> validate_distribution(const DistributionSpec& dist) {
  std::vector<std::string> errors;
  if (dist.components.empty()) errors.emplace_back("distribution has no components");
  double wsum = 0;
  for (const auto& c : dist.components) {
    if (c.weight < 0) errors.push_back("component " + c.name + " has a negative weight");
    wsum += c.weight;
    if (bad_range(c.text_tokens)) errors.push_back("component " + c.name + ": bad text_tokens");
    for (const auto& [m, law] : c.modalities) {
      if (bad_range(law.instances) || law.instances.lo < 0) {
        errors.push_back("component " + c.name + ": bad instances range for " + m);
      }
      if (law.duration_s) {
        if (bad_range(*law.duration_s) || law.tokens_per_second <= 0) {
          errors.push_back("component " + c.name + ": bad duration law for " + m);
        }
      } else if (bad_range(law.tokens_per_instance) || law.tokens_per_instance.lo < 0) {
        errors.push_back("component " + c.name + ": bad tokens_per_instance for " + m);
      }
    }
  }
  if (!dist.components.empty() && std::abs(wsum - 1.0) > 1e-9) {
    errors.emplace_back("mixture weights do not sum to 1");
  }
  return errors;
}

std::vector<SampleMeta> sample_synthetic(const DistributionSpec& dist, int64_t n_samples,
                                         uint64_t seed) {
  if (auto errors = validate_distribution(dist); !errors.empty()) {
    throw InvalidArgument(errors.front());
  }
  std::vector<SampleMeta> out;
  if (n_samples <= 0) return out;
  out.reserve(static_cast<size_t>(n_samples));

  std::vector<double> weights;
  for (const auto& c : dist.components) weights.push_back(c.weight);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<size_t> pick(weights.begin(), weights.end());

  for (int64_t i = 0; i < n_samples; ++i) {
    const auto& comp = dist.components[pick(rng)];
    SampleMeta s;
    s.id = i;
    const int64_t text = draw_int(comp.text_tokens, rng);
    if (text > 0) s.tokens[dist.text_modality] = text;
    for (const auto& [m, law] : comp.modalities) {
      const int64_t n = draw_int(law.instances, rng);
      int64_t tokens = 0;
      for (int64_t k = 0; k < n; ++k) {
        if (law.duration_s) {
          tokens += static_cast<int64_t>(std::llround(draw(*law.duration_s, rng) * law.tokens_per_second));
        } else {
          tokens += static_cast<int64_t>(std::llround(draw(law.tokens_per_instance, rng)));
        }
      }
      s.instances[m] = n;
      s.tokens[m] = tokens;
    }
    out.push_back(std::move(s));
  }
  return out;
}

DistributionSpec builtin_distribution(const std::string& name) {
  DistributionSpec d;
  const ModalityLaw one_image{{1, 1, false}, {169, 169, false}, std::nullopt, 0};
  if (name == "caption-pair") {
    d.components.push_back({"caption", 1.0, {8, 32, false}, {{"image", one_image}}});
  } else if (name == "interleaved-document") {
    d.components.push_back(
        {"document", 1.0, {16, 3000, true}, {{"image", {{0, 10, false}, {169, 169, false}, {}, 0}}}});
  } else if (name == "vlm-mixed") {
    d.components.push_back({"caption", 0.5, {8, 32, false}, {{"image", one_image}}});
    d.components.push_back(
        {"document", 0.3, {16, 3000, true}, {{"image", {{0, 10, false}, {169, 169, false}, {}, 0}}}});
    d.components.push_back({"text-only", 0.2, {256, 4096, true}, {}});
  } else if (name == "video-caption") {
    // Latent video tokens per second of 16 FPS footage; there is no
    // canonical value, this preset just picks one.
    d.text_modality = "text";
    ModalityLaw clip{{1, 1, false}, {}, ValueRange{1.0, 16.0, true}, 512.0};
    d.components.push_back({"clip", 1.0, {16, 256, false}, {{"video", clip}}});
  } else {
    throw NotFound("no distribution preset named '" + name + "'");
  }
  return d;
}

std::vector<std::string> builtin_distribution_names() {
  return {"caption-pair", "interleaved-document", "vlm-mixed", "video-caption"};
}

BatchMeta synthetic_batch(const DistributionSpec& dist, int64_t capacity, int microbatches,
                          uint64_t seed, int64_t iteration, std::optional<int64_t> max_instances) {
  BatchMeta batch;
  batch.iteration = iteration;
  // Draw in chunks until enough microbatches are packed; trailing partial
  // microbatch is dropped so every microbatch is "full" like a real packer.
  int64_t drawn = 0;
  std::vector<SampleMeta> pool;
  uint64_t round = 0;
  while (true) {
    auto more = sample_synthetic(dist, std::max<int64_t>(64, microbatches * 8), seed + 0x9E3779B97F4A7C15ULL * round++);
    for (auto& s : more) {
      s.id = drawn++;
      // Samples larger than one microbatch are skipped, as a real loader
      // would truncate or drop them.
      if (s.total_tokens() <= capacity) pool.push_back(std::move(s));
    }
    auto packed = pack_samples(pool, capacity, max_instances);
    if (static_cast<int>(packed.size()) > microbatches) {
      packed.resize(static_cast<size_t>(microbatches));
      batch.microbatches = std::move(packed);
      return batch;
    }
  }
}

BatchStats batch_stats(const BatchMeta& batch) {
  BatchStats stats;
  stats.microbatches = static_cast<int>(batch.microbatches.size());
  std::set<std::string> names;
  for (const auto& mb : batch.microbatches) {
    for (const auto& [m, _] : mb.instance_totals()) names.insert(m);
    for (const auto& [m, _] : mb.token_totals()) names.insert(m);
  }
  for (const auto& m : names) {
    ModalityStats s;
    s.min_instances = std::numeric_limits<int64_t>::max();
    s.min_tokens = std::numeric_limits<int64_t>::max();
    for (const auto& mb : batch.microbatches) {
      const int64_t n = mb.instances(m);
      const int64_t t = mb.tokens(m);
      s.min_instances = std::min(s.min_instances, n);
      s.max_instances = std::max(s.max_instances, n);
      s.min_tokens = std::min(s.min_tokens, t);
      s.max_tokens = std::max(s.max_tokens, t);
      s.total_instances += n;
      s.total_tokens += t;
    }
    const auto count = static_cast<double>(batch.microbatches.size());
    s.mean_instances = static_cast<double>(s.total_instances) / count;
    s.mean_tokens = static_cast<double>(s.total_tokens) / count;
    if (s.min_instances > 0) {
      s.instance_ratio = static_cast<double>(s.max_instances) / static_cast<double>(s.min_instances);
    }
    stats.modalities[m] = s;
  }
  return stats;
}

}  // namespace mmpipe
