#include "masr/dataset.hpp"

#include <fstream>
#include <sstream>

#include "masr/error.hpp"

namespace masr {

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

CategoryIndex CategoryIndex::from_names(const std::vector<std::string>& names) {
  CategoryIndex c;
  for (const auto& name : names) {
    if (name.empty()) throw Error(ErrorCategory::Schema, "empty category name");
    if (!c.index.emplace(name, c.names.size()).second) {
      throw Error(ErrorCategory::Schema, "duplicate category '" + name + "'");
    }
    c.names.push_back(name);
  }
  return c;
}

CategoryIndex load_categories(const std::string& path) {
  std::vector<std::string> names;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    const std::string context = path + ":" + std::to_string(line_no);
    if (fields.size() != 2) {
      throw Error(ErrorCategory::Parse, context + ": expected 2 tab-separated fields, got " +
                                            std::to_string(fields.size()));
    }
    std::size_t idx = 0;
    try {
      idx = std::stoul(fields[0]);
    } catch (const std::exception&) {
      throw Error(ErrorCategory::Parse, context + ": bad category index '" + fields[0] + "'");
    }
    if (idx != names.size()) {
      throw Error(ErrorCategory::Schema, context + ": category index " + fields[0] +
                                             " out of order, expected " +
                                             std::to_string(names.size()));
    }
    names.push_back(fields[1]);
  }
  try {
    return CategoryIndex::from_names(names);
  } catch (const Error& e) {
    throw Error(e.category(), path + ": " + e.what());
  }
}

void write_categories(const CategoryIndex& categories, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < categories.names.size(); ++i) {
    out << i << '\t' << categories.names[i] << '\n';
  }
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

FeatureTable load_features(const std::string& path) {
  FeatureTable table;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = path + ":" + std::to_string(line_no);
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCategory::Parse, context + ": missing tab after image_id");
    }
    const std::string image_id = line.substr(0, tab);
    if (image_id.empty()) throw Error(ErrorCategory::Schema, context + ": empty image_id");
    DenseVector feature;
    std::istringstream values(line.substr(tab + 1));
    std::string token;
    while (values >> token) feature.push_back(parse_double(token, context));
    if (feature.empty()) throw Error(ErrorCategory::Schema, context + ": empty feature vector");
    if (dim == 0) {
      dim = feature.size();
    } else if (feature.size() != dim) {
      throw Error(ErrorCategory::Schema, context + ": feature dim " +
                                             std::to_string(feature.size()) + ", expected " +
                                             std::to_string(dim));
    }
    if (!table.emplace(image_id, std::move(feature)).second) {
      throw Error(ErrorCategory::Schema, context + ": duplicate image '" + image_id + "'");
    }
  }
  return table;
}

void write_features(const FeatureTable& features, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  for (const auto& [image_id, feature] : features) {
    out << image_id << '\t';
    for (std::size_t i = 0; i < feature.size(); ++i) {
      if (i > 0) out << ' ';
      out << format_double(feature[i]);
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

std::vector<Sample> assemble_samples(const std::vector<AttributeAnnotation>& annotations,
                                     const FeatureTable& features,
                                     const CategoryIndex& categories, double xi) {
  std::vector<Sample> samples;
  samples.reserve(annotations.size());
  std::size_t dim = 0;
  for (const auto& ann : annotations) {
    const auto feature = features.find(ann.image_id);
    if (feature == features.end()) {
      throw Error(ErrorCategory::Schema, "no feature row for image '" + ann.image_id + "'");
    }
    const auto category = categories.find(ann.category);
    if (!category) {
      throw Error(ErrorCategory::Schema, "image '" + ann.image_id + "' has unknown category '" +
                                             ann.category + "'");
    }
    if (dim == 0) {
      dim = feature->second.size();
    } else if (feature->second.size() != dim) {
      throw Error(ErrorCategory::Shape, "feature of '" + ann.image_id + "' has dim " +
                                            std::to_string(feature->second.size()) +
                                            ", expected " + std::to_string(dim));
    }
    Sample s;
    s.image_id = ann.image_id;
    s.feature = feature->second;
    s.category = *category;
    s.attr_scores = ann.scores;
    s.attr_binary = binarize(ann.scores, xi);
    samples.push_back(std::move(s));
  }
  return samples;
}

DatasetBundle load_dataset(const std::string& annotations_dir, const std::string& features_path,
                           const std::string& categories_path, double xi) {
  DatasetBundle bundle;
  AnnotationData data = load_annotations(annotations_dir);
  bundle.vocabulary = std::move(data.vocabulary);
  bundle.categories = load_categories(categories_path);
  const FeatureTable features = load_features(features_path);
  bundle.samples = assemble_samples(data.annotations, features, bundle.categories, xi);
  return bundle;
}

}  // namespace masr
