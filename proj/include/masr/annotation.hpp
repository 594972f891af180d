#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "masr/numerics.hpp"

namespace masr {

// One detector task and the label universe it can emit. The default pipeline
// uses two sources (stuff + things) but any number is accepted; the merged
// vocabulary is just their concatenation in declaration order.
struct DetectorSource {
  std::string source_id;
  std::vector<std::string> labels;
};

struct Detection {
  std::string label;
  double score = 0.0;  // in [0, 1]
};

// One detector's scored predictions for one image. `category` is the scene
// label of the image; detection files may omit it, in which case the whole
// corpus is treated as a single "unlabeled" category.
struct DetectionRecord {
  std::string image_id;
  std::string category;
  std::string source_id;
  std::vector<Detection> detections;
};

struct Attribute {
  std::string label;
  std::string origin;  // source_id that declared the label
};

// Ordered union of the source label sets. Index j in every score vector refers
// to this order, which is fixed once built and persisted verbatim.
struct AttributeVocabulary {
  std::vector<Attribute> attributes;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return attributes.size(); }
  std::optional<std::size_t> find(const std::string& label) const {
    auto it = index.find(label);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

// Per-image score vector over the vocabulary. Zero means "not detected".
struct AttributeAnnotation {
  std::string image_id;
  std::string category;
  DenseVector scores;  // dim = vocabulary size, entries in [0, 1]

  bool operator==(const AttributeAnnotation&) const = default;
};

enum class CollisionPolicy {
  Error,  // cross-source duplicate labels are rejected (the default)
  Max,    // duplicate labels share one slot, colliding scores keep the max
};

struct AttributeStats {
  std::size_t count_nonzero = 0;
  double min_score = 0.0;
  double avg_score = 0.0;
  double max_score = 0.0;
  bool retained = false;
};

// Frequency-filter outcome for one category: per-attribute nonzero counts,
// score stats over the nonzero occurrences, and the retained set.
struct CategoryAttributeProfile {
  std::string category;
  std::size_t n_images = 0;
  std::vector<AttributeStats> per_attribute;
  bool empty_category = false;  // warning signal: no images carried this category
};

AttributeVocabulary build_vocabulary(const std::vector<DetectorSource>& sources,
                                     CollisionPolicy policy);

struct MergeResult {
  AttributeVocabulary vocabulary;
  std::vector<AttributeAnnotation> annotations;  // sorted by image_id
};

// Merges per-source predictions into one raw score vector per image. Duplicate
// detections of one label within a source keep the max score; the merged
// vector is never renormalized. Records naming an undeclared source or label
// are rejected.
MergeResult merge_predictions(const std::vector<DetectionRecord>& records,
                              const std::vector<DetectorSource>& sources,
                              CollisionPolicy policy);

// Keeps entries with score strictly above xi, zeroes the rest. xi in [0, 1).
DenseVector filter_by_score(const DenseVector& scores, double xi);

void apply_score_filter(std::vector<AttributeAnnotation>& corpus, double xi);

// Frequency filter over the annotations of a single category: attribute j is
// retained iff its nonzero count reaches beta (inclusive). Non-retained scores
// are zeroed in place. Expects score filtering to have run already.
CategoryAttributeProfile filter_by_frequency(std::vector<AttributeAnnotation*>& category_annotations,
                                             const std::string& category, std::size_t beta,
                                             std::size_t m);

// Groups a corpus by category (processed in sorted category order, images in
// sorted image_id order) and runs the per-category frequency filter in place.
std::vector<CategoryAttributeProfile> apply_frequency_filter(
    std::vector<AttributeAnnotation>& corpus, std::size_t beta, std::size_t m);

// 1 where score > xi, else 0.
DenseVector binarize(const DenseVector& scores, double xi);

struct AttributeScoreStats {
  std::size_t count_nonzero = 0;
  double min_score = 0.0;
  double avg_score = 0.0;
  double max_score = 0.0;
};

struct CorpusStatistics {
  std::size_t n_images = 0;
  std::map<std::size_t, std::size_t> attributes_per_image;  // nonzero count -> images
  double mean_attributes_per_image = 0.0;
  std::vector<AttributeScoreStats> per_attribute;  // stats over nonzero occurrences
};

// Histogram, per-attribute score stats and mean attributes-per-image for one
// corpus. Empty corpus is a report error.
CorpusStatistics compute_statistics(const std::vector<AttributeAnnotation>& corpus, std::size_t m);

// One row of the per-category mining report: distinct attributes seen in the
// raw merge, how many the score and frequency filters removed, and how many
// survive. The four values are computed independently of one another.
struct CategoryTableRow {
  std::string category;
  std::size_t n_images = 0;
  std::size_t attributes_seen = 0;
  std::size_t removed_by_score = 0;
  std::size_t removed_by_frequency = 0;
  std::size_t used = 0;
};

struct MiningConfig {
  double xi = 0.8;
  std::size_t beta = 20;
  CollisionPolicy collision_policy = CollisionPolicy::Error;
  std::vector<DetectorSource> sources;
};

struct MiningResult {
  AttributeVocabulary vocabulary;
  std::vector<AttributeAnnotation> raw;          // merged, unfiltered
  std::vector<AttributeAnnotation> annotations;  // after score + frequency filters
  std::vector<CategoryAttributeProfile> profiles;
  std::vector<CategoryTableRow> category_table;
  CorpusStatistics raw_stats;    // detector score statistics
  CorpusStatistics final_stats;  // statistics of the emitted annotations
};

// The full mining pipeline: merge, score filter, frequency filter, statistics.
MiningResult mine_annotations(const std::vector<DetectionRecord>& records,
                              const MiningConfig& config);

// ---- persistence ----------------------------------------------------------

// Line-delimited JSON, one record per line:
//   {"image_id": ..., "source_id": ..., "category": ..., "detections": [{"label":..., "score":...}]}
// `category` is optional. Malformed lines raise parse errors naming the line;
// out-of-range scores raise schema errors.
std::vector<DetectionRecord> load_detections(const std::string& path);
void write_detections(const std::vector<DetectionRecord>& records, const std::string& path);

// Writes <dir>/vocabulary.tsv ("index<TAB>label<TAB>origin") and
// <dir>/annotations.tsv ("image_id<TAB>category<TAB>idx:score idx:score ...").
// Scores are printed in shortest round-trip form, so load(emit(x)) == x bit-exactly.
void emit_annotations(const std::vector<AttributeAnnotation>& corpus,
                      const AttributeVocabulary& vocabulary, const std::string& dir);

struct AnnotationData {
  AttributeVocabulary vocabulary;
  std::vector<AttributeAnnotation> annotations;
};

AnnotationData load_annotations(const std::string& dir);

// JSON array of {source_id, labels} objects.
std::vector<DetectorSource> load_sources(const std::string& path);
void write_sources(const std::vector<DetectorSource>& sources, const std::string& path);

// Human-readable mining summary: vocabulary size, per-category filter table,
// and corpus statistics before and after filtering.
std::string render_mining_report(const MiningResult& result);
std::string render_statistics(const CorpusStatistics& stats,
                              const AttributeVocabulary& vocabulary);

// Exact round-trip double formatting used by every emitted file.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& context);

}  // namespace masr
