#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masr/annotation.hpp"
#include "masr/dataset.hpp"
#include "masr/numerics.hpp"

namespace masr {

// Generator recipe for a desk-scale corpus with planted structure. Attribute j
// belongs to class (j mod n_classes); owned attributes fire with p_on, foreign
// ones with p_off, unless an explicit class_attribute_prob matrix overrides
// both. Fired detections score in [score_present_min, score_present_max];
// non-fired ones can still emit a low spurious score so the score filter has
// something to cut. class_separation 0 makes features carry no class signal.
struct SynthSpec {
  std::size_t n_classes = 5;
  std::size_t n_attributes = 12;
  std::size_t feature_dim = 16;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 20;
  double xi = 0.8;  // reference threshold used for the planted fire counts
  double p_on = 0.9;
  double p_off = 0.05;
  double score_present_min = 0.85;
  double score_present_max = 1.0;
  double spurious_prob = 0.3;
  double score_spurious_min = 0.05;
  double score_spurious_max = 0.5;
  double class_separation = 0.0;
  double feature_noise = 1.0;
  std::vector<std::vector<double>> class_attribute_prob;  // optional, K x m
};

// JSON object whose keys mirror the field names; unknown keys are rejected.
SynthSpec load_synth_spec(const std::string& path);
void validate_spec(const SynthSpec& spec);

struct SynthCorpus {
  std::vector<DetectorSource> sources;  // "stuff" then "things"
  CategoryIndex categories;
  std::vector<DetectionRecord> train_detections;
  std::vector<DetectionRecord> test_detections;
  FeatureTable train_features;
  FeatureTable test_features;
  // planted truth: per (class, attribute) count of train images whose realized
  // score lands strictly above spec.xi
  DenseMatrix train_fire_counts;
};

SynthCorpus generate_corpus(const SynthSpec& spec, std::uint64_t seed);

// Writes sources.json, categories.tsv, planted.json and per-split
// detections.jsonl + features.tsv under <out_dir>/train and <out_dir>/test.
void write_corpus(const SynthCorpus& corpus, const SynthSpec& spec, const std::string& out_dir);

}  // namespace masr
