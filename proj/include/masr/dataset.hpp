#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "masr/annotation.hpp"
#include "masr/model.hpp"

namespace masr {

// Ordered scene category universe. Category indices in every Sample refer to
// this order, persisted as "index<TAB>name" lines.
struct CategoryIndex {
  std::vector<std::string> names;
  std::unordered_map<std::string, std::size_t> index;

  static CategoryIndex from_names(const std::vector<std::string>& names);
  std::size_t size() const { return names.size(); }
  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

CategoryIndex load_categories(const std::string& path);
void write_categories(const CategoryIndex& categories, const std::string& path);

// image_id -> precomputed feature vector; ordered so emission is deterministic.
using FeatureTable = std::map<std::string, DenseVector>;

// "image_id<TAB>v0 v1 ... v{d-1}" per line, shortest round-trip doubles.
FeatureTable load_features(const std::string& path);
void write_features(const FeatureTable& features, const std::string& path);

// Joins annotations with features and the category universe into training
// samples. Every annotation must have a feature row and a known category;
// binary attribute targets come from thresholding scores at xi.
std::vector<Sample> assemble_samples(const std::vector<AttributeAnnotation>& annotations,
                                     const FeatureTable& features,
                                     const CategoryIndex& categories, double xi);

struct DatasetBundle {
  AttributeVocabulary vocabulary;
  CategoryIndex categories;
  std::vector<Sample> samples;
};

DatasetBundle load_dataset(const std::string& annotations_dir, const std::string& features_path,
                           const std::string& categories_path, double xi);

}  // namespace masr
