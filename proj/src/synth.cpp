#include "masr/synth.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "masr/error.hpp"
#include "masr/rng.hpp"

namespace fs = std::filesystem;

namespace masr {

namespace {

std::string padded(const char* prefix, std::size_t n, int width) {
  std::string digits = std::to_string(n);
  while (static_cast<int>(digits.size()) < width) digits.insert(digits.begin(), '0');
  return prefix + digits;
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCategory::Config, std::string(name) + " must be in [0, 1]");
  }
}

void check_range(double lo, double hi, const char* name) {
  check_prob(lo, name);
  check_prob(hi, name);
  if (lo > hi) {
    throw Error(ErrorCategory::Config, std::string(name) + " range is inverted");
  }
}

}  // namespace

void validate_spec(const SynthSpec& spec) {
  if (spec.n_classes < 2) {
    throw Error(ErrorCategory::Config,
                "synth corpus needs at least 2 classes, got " + std::to_string(spec.n_classes));
  }
  if (spec.n_attributes == 0 || spec.feature_dim == 0) {
    throw Error(ErrorCategory::Config, "n_attributes and feature_dim must be positive");
  }
  if (spec.train_per_class == 0 || spec.test_per_class == 0) {
    throw Error(ErrorCategory::Config, "train_per_class and test_per_class must be positive");
  }
  if (!(spec.xi >= 0.0 && spec.xi < 1.0)) {
    throw Error(ErrorCategory::Config, "xi must be in [0, 1)");
  }
  check_prob(spec.p_on, "p_on");
  check_prob(spec.p_off, "p_off");
  check_prob(spec.spurious_prob, "spurious_prob");
  check_range(spec.score_present_min, spec.score_present_max, "score_present");
  check_range(spec.score_spurious_min, spec.score_spurious_max, "score_spurious");
  if (spec.class_separation < 0.0 || spec.feature_noise < 0.0) {
    throw Error(ErrorCategory::Config, "class_separation and feature_noise must be >= 0");
  }
  if (!spec.class_attribute_prob.empty()) {
    if (spec.class_attribute_prob.size() != spec.n_classes) {
      throw Error(ErrorCategory::Config, "class_attribute_prob must have n_classes rows");
    }
    for (const auto& row : spec.class_attribute_prob) {
      if (row.size() != spec.n_attributes) {
        throw Error(ErrorCategory::Config, "class_attribute_prob rows must have n_attributes entries");
      }
      for (double p : row) check_prob(p, "class_attribute_prob entry");
    }
  }
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Parse, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCategory::Schema, path + ": spec must be a JSON object");

  SynthSpec spec;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_classes") spec.n_classes = value.get<std::size_t>();
      else if (key == "n_attributes") spec.n_attributes = value.get<std::size_t>();
      else if (key == "feature_dim") spec.feature_dim = value.get<std::size_t>();
      else if (key == "train_per_class") spec.train_per_class = value.get<std::size_t>();
      else if (key == "test_per_class") spec.test_per_class = value.get<std::size_t>();
      else if (key == "xi") spec.xi = value.get<double>();
      else if (key == "p_on") spec.p_on = value.get<double>();
      else if (key == "p_off") spec.p_off = value.get<double>();
      else if (key == "score_present_min") spec.score_present_min = value.get<double>();
      else if (key == "score_present_max") spec.score_present_max = value.get<double>();
      else if (key == "spurious_prob") spec.spurious_prob = value.get<double>();
      else if (key == "score_spurious_min") spec.score_spurious_min = value.get<double>();
      else if (key == "score_spurious_max") spec.score_spurious_max = value.get<double>();
      else if (key == "class_separation") spec.class_separation = value.get<double>();
      else if (key == "feature_noise") spec.feature_noise = value.get<double>();
      else if (key == "class_attribute_prob") {
        spec.class_attribute_prob = value.get<std::vector<std::vector<double>>>();
      } else {
        throw Error(ErrorCategory::Config, path + ": unknown spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Schema, path + ": " + e.what());
  }
  validate_spec(spec);
  return spec;
}

SynthCorpus generate_corpus(const SynthSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  const std::size_t k_classes = spec.n_classes;
  const std::size_t m = spec.n_attributes;
  const std::size_t d = spec.feature_dim;

  SynthCorpus corpus;
  const std::size_t n_stuff = (m + 1) / 2;
  DetectorSource stuff{"stuff", {}};
  DetectorSource things{"things", {}};
  std::vector<std::string> labels(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (j < n_stuff) {
      labels[j] = padded("stuff_", j, 2);
      stuff.labels.push_back(labels[j]);
    } else {
      labels[j] = padded("thing_", j, 2);
      things.labels.push_back(labels[j]);
    }
  }
  corpus.sources = {stuff, things};

  std::vector<std::string> category_names;
  for (std::size_t k = 0; k < k_classes; ++k) category_names.push_back(padded("scene_", k, 2));
  corpus.categories = CategoryIndex::from_names(category_names);

  corpus.train_fire_counts = DenseMatrix(k_classes, m);

  auto prob = [&](std::size_t k, std::size_t j) {
    if (!spec.class_attribute_prob.empty()) return spec.class_attribute_prob[k][j];
    return j % k_classes == k ? spec.p_on : spec.p_off;
  };

  Rng rng(seed);
  std::size_t counter = 0;
  auto emit_split = [&](bool train, std::size_t per_class, const char* prefix,
                        std::vector<DetectionRecord>& detections, FeatureTable& features) {
    for (std::size_t k = 0; k < k_classes; ++k) {
      for (std::size_t i = 0; i < per_class; ++i) {
        const std::string image_id = padded(prefix, counter++, 4);

        DenseVector feature(d);
        for (std::size_t c = 0; c < d; ++c) {
          const double proto = c % k_classes == k ? spec.class_separation : 0.0;
          feature[c] = proto + spec.feature_noise * rng.normal();
        }
        features.emplace(image_id, std::move(feature));

        DetectionRecord stuff_rec{image_id, category_names[k], "stuff", {}};
        DetectionRecord things_rec{image_id, category_names[k], "things", {}};
        for (std::size_t j = 0; j < m; ++j) {
          double score = 0.0;
          if (rng.uniform() < prob(k, j)) {
            score = rng.uniform(spec.score_present_min, spec.score_present_max);
          } else if (rng.uniform() < spec.spurious_prob) {
            score = rng.uniform(spec.score_spurious_min, spec.score_spurious_max);
          }
          if (score == 0.0) continue;
          auto& rec = j < n_stuff ? stuff_rec : things_rec;
          rec.detections.push_back({labels[j], score});
          if (train && score > spec.xi) corpus.train_fire_counts.at(k, j) += 1.0;
        }
        detections.push_back(std::move(stuff_rec));
        detections.push_back(std::move(things_rec));
      }
    }
  };

  emit_split(true, spec.train_per_class, "tr_", corpus.train_detections, corpus.train_features);
  counter = 0;
  emit_split(false, spec.test_per_class, "te_", corpus.test_detections, corpus.test_features);
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const SynthSpec& spec, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "test");
  write_sources(corpus.sources, (fs::path(out_dir) / "sources.json").string());
  write_categories(corpus.categories, (fs::path(out_dir) / "categories.tsv").string());
  write_detections(corpus.train_detections,
                   (fs::path(out_dir) / "train" / "detections.jsonl").string());
  write_features(corpus.train_features, (fs::path(out_dir) / "train" / "features.tsv").string());
  write_detections(corpus.test_detections,
                   (fs::path(out_dir) / "test" / "detections.jsonl").string());
  write_features(corpus.test_features, (fs::path(out_dir) / "test" / "features.tsv").string());

  nlohmann::ordered_json planted;
  planted["n_classes"] = spec.n_classes;
  planted["n_attributes"] = spec.n_attributes;
  planted["feature_dim"] = spec.feature_dim;
  planted["train_per_class"] = spec.train_per_class;
  planted["test_per_class"] = spec.test_per_class;
  planted["xi"] = spec.xi;
  std::vector<std::vector<double>> counts(spec.n_classes, std::vector<double>(spec.n_attributes));
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    for (std::size_t j = 0; j < spec.n_attributes; ++j) {
      counts[k][j] = corpus.train_fire_counts.at(k, j);
    }
  }
  planted["train_fire_counts"] = counts;
  const std::string path = (fs::path(out_dir) / "planted.json").string();
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  out << planted.dump(2) << '\n';
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

}  // namespace masr
