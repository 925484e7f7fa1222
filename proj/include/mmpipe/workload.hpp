// Copyright 2026 The mmpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multimodal training-data metadata: samples, packed microbatches, batches
// and a synthetic sampler standing in for real dataset readers.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmpipe {

/// Modality tag. The index is stable within one ModelSpec.
struct ModalityId {
  std::string name;
  int index = 0;

  friend bool operator==(const ModalityId&, const ModalityId&) = default;
};

/// One training sample. Instance counts are only meaningful for
/// instance-based modalities (image, video clip); token-stream modalities
/// (text) carry tokens only.
struct SampleMeta {
  int64_t id = 0;
  std::map<std::string, int64_t> instances;
  std::map<std::string, int64_t> tokens;

  int64_t total_tokens() const;
  int64_t instance_count(const std::string& modality) const;
  int64_t token_count(const std::string& modality) const;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// A packed microbatch. Totals are derived from the samples on construction.
class MicrobatchMeta {
 public:
  MicrobatchMeta() = default;
  MicrobatchMeta(int64_t capacity, std::vector<SampleMeta> samples);

  int64_t capacity() const { return capacity_; }
  const std::vector<SampleMeta>& samples() const { return samples_; }
  int64_t total_tokens() const { return total_tokens_; }
  int64_t instances(const std::string& modality) const;
  int64_t tokens(const std::string& modality) const;
  const std::map<std::string, int64_t>& instance_totals() const { return instance_totals_; }
  const std::map<std::string, int64_t>& token_totals() const { return token_totals_; }

  friend bool operator==(const MicrobatchMeta&, const MicrobatchMeta&) = default;

 private:
  int64_t capacity_ = 0;
  std::vector<SampleMeta> samples_;
  std::map<std::string, int64_t> instance_totals_;
  std::map<std::string, int64_t> token_totals_;
  int64_t total_tokens_ = 0;
};

struct BatchMeta {
  int64_t iteration = 0;
  std::vector<MicrobatchMeta> microbatches;
};

/// Checks the BatchMeta invariants (non-empty, shared capacity, no overflow).
std::vector<std::string> validate_batch(const BatchMeta& batch);

/// First-fit greedy packing in input order. Samples are never split. When
/// `max_instances` is set, the summed instance count of a microbatch is
/// capped as well (used for "up to N clips" video grouping).
/// Throws SampleTooLarge if a single sample exceeds the capacity.
std::vector<MicrobatchMeta> pack_samples(std::span<const SampleMeta> samples, int64_t capacity,
                                         std::optional<int64_t> max_instances = std::nullopt);

// ---------------------------------------------------------------------------
// Synthetic sampler

/// Closed range [lo, hi]; drawn uniformly or log-uniformly.
struct ValueRange {
  double lo = 0;
  double hi = 0;
  bool log_uniform = false;
};

/// Generative law for one instance-based modality inside a mixture component.
struct ModalityLaw {
  ValueRange instances;  // instances per sample (integers)
  // Tokens per instance. Ignored when `duration_s` is set.
  ValueRange tokens_per_instance{169, 169, false};
  // Video: clip duration in seconds, mapped to tokens linearly.
  std::optional<ValueRange> duration_s;
  double tokens_per_second = 0;
};

struct MixtureComponent {
  std::string name;
  double weight = 1.0;
  ValueRange text_tokens;
  std::map<std::string, ModalityLaw> modalities;
};

struct DistributionSpec {
  std::string text_modality = "text";
  std::vector<MixtureComponent> components;
};

std::vector<std::string> validate_distribution(const DistributionSpec& dist);

/// Deterministic for a fixed (dist, n_samples, seed).
std::vector<SampleMeta> sample_synthetic(const DistributionSpec& dist, int64_t n_samples,
                                         uint64_t seed);

/// Named sampler presets: "caption-pair", "interleaved-document",
/// "vlm-mixed", "video-caption". Throws NotFound otherwise.
DistributionSpec builtin_distribution(const std::string& name);
std::vector<std::string> builtin_distribution_names();

/// Samples and packs `microbatches` microbatches for one iteration.
BatchMeta synthetic_batch(const DistributionSpec& dist, int64_t capacity, int microbatches,
                          uint64_t seed, int64_t iteration = 0,
                          std::optional<int64_t> max_instances = std::nullopt);

// ---------------------------------------------------------------------------
// Statistics

struct ModalityStats {
  int64_t min_instances = 0;
  int64_t max_instances = 0;
  double mean_instances = 0;
  int64_t min_tokens = 0;
  int64_t max_tokens = 0;
  double mean_tokens = 0;
  int64_t total_tokens = 0;
  int64_t total_instances = 0;
  // max/min instance count across microbatches; nullopt when min is zero.
  std::optional<double> instance_ratio;
};

struct BatchStats {
  int microbatches = 0;
  std::map<std::string, ModalityStats> modalities;
};

BatchStats batch_stats(const BatchMeta& batch);

}  // namespace mmpipe
