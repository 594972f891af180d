#include "masr/annotation.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "masr/error.hpp"

namespace masr {

AttributeVocabulary build_vocabulary(const std::vector<DetectorSource>& sources,
                                     CollisionPolicy policy) {
  AttributeVocabulary vocab;
  for (const auto& source : sources) {
    if (source.source_id.empty()) {
      throw Error(ErrorCategory::Config, "source with empty source_id");
    }
    std::set<std::string> seen_in_source;
    for (const auto& label : source.labels) {
      if (!seen_in_source.insert(label).second) {
        throw Error(ErrorCategory::Config, "source '" + source.source_id +
                                               "' declares label '" + label + "' twice");
      }
      if (auto existing = vocab.find(label)) {
        if (policy == CollisionPolicy::Error) {
          throw Error(ErrorCategory::Collision,
                      "label '" + label + "' declared by both '" +
                          vocab.attributes[*existing].origin + "' and '" + source.source_id + "'");
        }
        continue;  // Max policy: the label keeps its first slot
      }
      vocab.index.emplace(label, vocab.attributes.size());
      vocab.attributes.push_back({label, source.source_id});
    }
  }
  return vocab;
}

MergeResult merge_predictions(const std::vector<DetectionRecord>& records,
                              const std::vector<DetectorSource>& sources,
                              CollisionPolicy policy) {
  MergeResult result;
  result.vocabulary = build_vocabulary(sources, policy);
  const std::size_t m = result.vocabulary.size();

  std::unordered_map<std::string, std::set<std::string>> source_labels;
  for (const auto& source : sources) {
    source_labels[source.source_id] = {source.labels.begin(), source.labels.end()};
  }

  // deterministic reduction order regardless of record order
  std::map<std::string, AttributeAnnotation> by_image;
  for (const auto& record : records) {
    auto src = source_labels.find(record.source_id);
    if (src == source_labels.end()) {
      throw Error(ErrorCategory::Ingestion, "record for image '" + record.image_id +
                                                "' names undeclared source '" +
                                                record.source_id + "'");
    }
    auto [it, inserted] = by_image.try_emplace(record.image_id);
    AttributeAnnotation& ann = it->second;
    if (inserted) {
      ann.image_id = record.image_id;
      ann.category = record.category;
      ann.scores.assign(m, 0.0);
    } else if (!record.category.empty() && ann.category.empty()) {
      ann.category = record.category;
    } else if (!record.category.empty() && record.category != ann.category) {
      throw Error(ErrorCategory::Ingestion, "image '" + record.image_id +
                                                "' appears with categories '" + ann.category +
                                                "' and '" + record.category + "'");
    }
    for (const auto& det : record.detections) {
      if (!src->second.count(det.label)) {
        throw Error(ErrorCategory::Ingestion, "source '" + record.source_id +
                                                  "' does not declare label '" + det.label +
                                                  "' (image '" + record.image_id + "')");
      }
      const std::size_t j = *result.vocabulary.find(det.label);
      // duplicates of one label collapse to their max score
      ann.scores[j] = std::max(ann.scores[j], det.score);
    }
  }

  result.annotations.reserve(by_image.size());
  for (auto& [id, ann] : by_image) {
    if (ann.category.empty()) ann.category = "unlabeled";
    result.annotations.push_back(std::move(ann));
  }
  return result;
}

static void check_xi(double xi) {
  if (!(xi >= 0.0 && xi < 1.0)) {
    throw Error(ErrorCategory::Config, "xi must be in [0, 1), got " + format_double(xi));
  }
}

DenseVector filter_by_score(const DenseVector& scores, double xi) {
  check_xi(xi);
  DenseVector out(scores.size(), 0.0);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > xi) out[j] = scores[j];  // strictly above the threshold
  }
  return out;
}

void apply_score_filter(std::vector<AttributeAnnotation>& corpus, double xi) {
  check_xi(xi);
  for (auto& ann : corpus) ann.scores = filter_by_score(ann.scores, xi);
}

CategoryAttributeProfile filter_by_frequency(std::vector<AttributeAnnotation*>& category_annotations,
                                             const std::string& category, std::size_t beta,
                                             std::size_t m) {
  CategoryAttributeProfile profile;
  profile.category = category;
  profile.n_images = category_annotations.size();
  profile.per_attribute.assign(m, {});
  if (category_annotations.empty()) {
    profile.empty_category = true;
    return profile;
  }

  for (const AttributeAnnotation* ann : category_annotations) {
    if (ann->scores.size() != m) {
      throw Error(ErrorCategory::Shape, "annotation '" + ann->image_id + "' has dim " +
                                            std::to_string(ann->scores.size()) + ", expected " +
                                            std::to_string(m));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double s = ann->scores[j];
      if (s == 0.0) continue;
      AttributeStats& st = profile.per_attribute[j];
      if (st.count_nonzero == 0) {
        st.min_score = st.max_score = s;
      } else {
        st.min_score = std::min(st.min_score, s);
        st.max_score = std::max(st.max_score, s);
      }
      st.avg_score += s;
      ++st.count_nonzero;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    AttributeStats& st = profile.per_attribute[j];
    if (st.count_nonzero > 0) st.avg_score /= static_cast<double>(st.count_nonzero);
    st.retained = st.count_nonzero >= beta;  // inclusive threshold
  }
  for (AttributeAnnotation* ann : category_annotations) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!profile.per_attribute[j].retained) ann->scores[j] = 0.0;
    }
  }
  return profile;
}

std::vector<CategoryAttributeProfile> apply_frequency_filter(
    std::vector<AttributeAnnotation>& corpus, std::size_t beta, std::size_t m) {
  std::map<std::string, std::vector<AttributeAnnotation*>> groups;
  for (auto& ann : corpus) groups[ann.category].push_back(&ann);
  for (auto& [category, anns] : groups) {
    std::sort(anns.begin(), anns.end(), [](const AttributeAnnotation* a,
                                           const AttributeAnnotation* b) {
      return a->image_id < b->image_id;
    });
  }
  std::vector<CategoryAttributeProfile> profiles;
  profiles.reserve(groups.size());
  for (auto& [category, anns] : groups) {
    profiles.push_back(filter_by_frequency(anns, category, beta, m));
  }
  return profiles;
}

DenseVector binarize(const DenseVector& scores, double xi) {
  check_xi(xi);
  DenseVector out(scores.size(), 0.0);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > xi) out[j] = 1.0;
  }
  return out;
}

CorpusStatistics compute_statistics(const std::vector<AttributeAnnotation>& corpus,
                                    std::size_t m) {
  if (corpus.empty()) {
    throw Error(ErrorCategory::Report, "empty corpus");
  }
  CorpusStatistics stats;
  stats.n_images = corpus.size();
  stats.per_attribute.assign(m, {});
  std::size_t total_nonzero = 0;
  for (const auto& ann : corpus) {
    if (ann.scores.size() != m) {
      throw Error(ErrorCategory::Shape, "annotation '" + ann.image_id + "' has dim " +
                                            std::to_string(ann.scores.size()) + ", expected " +
                                            std::to_string(m));
    }
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double s = ann.scores[j];
      if (s == 0.0) continue;
      ++nonzero;
      AttributeScoreStats& st = stats.per_attribute[j];
      if (st.count_nonzero == 0) {
        st.min_score = st.max_score = s;
      } else {
        st.min_score = std::min(st.min_score, s);
        st.max_score = std::max(st.max_score, s);
      }
      st.avg_score += s;
      ++st.count_nonzero;
    }
    total_nonzero += nonzero;
    ++stats.attributes_per_image[nonzero];
  }
  for (auto& st : stats.per_attribute) {
    if (st.count_nonzero > 0) st.avg_score /= static_cast<double>(st.count_nonzero);
  }
  stats.mean_attributes_per_image =
      static_cast<double>(total_nonzero) / static_cast<double>(stats.n_images);
  return stats;
}

namespace {

std::size_t count_distinct_present(const std::vector<const AttributeAnnotation*>& anns,
                                   std::size_t m) {
  std::vector<bool> present(m, false);
  for (const auto* ann : anns) {
    for (std::size_t j = 0; j < m; ++j) {
      if (ann->scores[j] != 0.0) present[j] = true;
    }
  }
  return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

}  // namespace

MiningResult mine_annotations(const std::vector<DetectionRecord>& records,
                              const MiningConfig& config) {
  if (records.empty()) {
    throw Error(ErrorCategory::Report, "empty corpus: no detection records");
  }
  MiningResult result;
  MergeResult merged = merge_predictions(records, config.sources, config.collision_policy);
  result.vocabulary = std::move(merged.vocabulary);
  result.raw = std::move(merged.annotations);
  const std::size_t m = result.vocabulary.size();

  result.annotations = result.raw;
  apply_score_filter(result.annotations, config.xi);
  std::vector<AttributeAnnotation> after_score = result.annotations;
  result.profiles = apply_frequency_filter(result.annotations, config.beta, m);

  // per-category report rows, each column recomputed from its own stage
  std::map<std::string, std::vector<const AttributeAnnotation*>> raw_groups, score_groups,
      final_groups;
  for (const auto& ann : result.raw) raw_groups[ann.category].push_back(&ann);
  for (const auto& ann : after_score) score_groups[ann.category].push_back(&ann);
  for (const auto& ann : result.annotations) final_groups[ann.category].push_back(&ann);
  for (const auto& [category, anns] : raw_groups) {
    CategoryTableRow row;
    row.category = category;
    row.n_images = anns.size();
    row.attributes_seen = count_distinct_present(anns, m);
    const std::size_t after_score_cut = count_distinct_present(score_groups[category], m);
    row.used = count_distinct_present(final_groups[category], m);
    row.removed_by_score = row.attributes_seen - after_score_cut;
    row.removed_by_frequency = after_score_cut - row.used;
    result.category_table.push_back(std::move(row));
  }

  result.raw_stats = compute_statistics(result.raw, m);
  result.final_stats = compute_statistics(result.annotations, m);
  return result;
}

}  // namespace masr
