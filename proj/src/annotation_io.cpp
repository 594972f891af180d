#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "masr/annotation.hpp"
#include "masr/error.hpp"

namespace fs = std::filesystem;

namespace masr {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& context) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw Error(ErrorCategory::Parse, context + ": not a number: '" + text + "'");
  }
  return value;
}

namespace {

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  return out;
}

void check_score_range(double score, const std::string& where) {
  if (!(score >= 0.0 && score <= 1.0) || !std::isfinite(score)) {
    throw Error(ErrorCategory::Schema,
                where + ": score " + format_double(score) + " outside [0, 1]");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace

std::vector<DetectionRecord> load_detections(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::vector<DetectionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCategory::Parse, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("image_id") || !j.contains("source_id") ||
        !j.contains("detections")) {
      throw Error(ErrorCategory::Parse,
                  where + ": record needs image_id, source_id and detections fields");
    }
    DetectionRecord record;
    try {
      record.image_id = j.at("image_id").get<std::string>();
      record.source_id = j.at("source_id").get<std::string>();
      record.category = j.value("category", std::string{});
      for (const auto& d : j.at("detections")) {
        Detection det;
        det.label = d.at("label").get<std::string>();
        det.score = d.at("score").get<double>();
        check_score_range(det.score, where + " label '" + det.label + "'");
        record.detections.push_back(std::move(det));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCategory::Parse, where + ": " + e.what());
    }
    records.push_back(std::move(record));
  }
  return records;
}

void write_detections(const std::vector<DetectionRecord>& records, const std::string& path) {
  std::ofstream out = open_for_write(path);
  for (const auto& record : records) {
    nlohmann::ordered_json j;
    j["image_id"] = record.image_id;
    if (!record.category.empty()) j["category"] = record.category;
    j["source_id"] = record.source_id;
    auto& dets = j["detections"] = nlohmann::ordered_json::array();
    for (const auto& det : record.detections) {
      dets.push_back({{"label", det.label}, {"score", det.score}});
    }
    out << j.dump() << '\n';
  }
}

void emit_annotations(const std::vector<AttributeAnnotation>& corpus,
                      const AttributeVocabulary& vocabulary, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out = open_for_write((fs::path(dir) / "vocabulary.tsv").string());
    for (std::size_t j = 0; j < vocabulary.size(); ++j) {
      out << j << '\t' << vocabulary.attributes[j].label << '\t'
          << vocabulary.attributes[j].origin << '\n';
    }
  }
  std::ofstream out = open_for_write((fs::path(dir) / "annotations.tsv").string());
  const std::size_t m = vocabulary.size();
  for (const auto& ann : corpus) {
    if (ann.scores.size() != m) {
      throw Error(ErrorCategory::Schema, "annotation '" + ann.image_id + "' has dim " +
                                             std::to_string(ann.scores.size()) +
                                             " but vocabulary has " + std::to_string(m));
    }
    out << ann.image_id << '\t' << ann.category << '\t';
    bool first = true;
    for (std::size_t j = 0; j < m; ++j) {
      if (ann.scores[j] == 0.0) continue;
      if (!first) out << ' ';
      out << j << ':' << format_double(ann.scores[j]);
      first = false;
    }
    out << '\n';
  }
}

AnnotationData load_annotations(const std::string& dir) {
  AnnotationData data;
  const std::string vocab_path = (fs::path(dir) / "vocabulary.tsv").string();
  {
    std::ifstream in = open_for_read(vocab_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = vocab_path + ":" + std::to_string(line_no);
      const auto fields = split(line, '\t');
      if (fields.size() != 3) {
        throw Error(ErrorCategory::Parse, where + ": expected index<TAB>label<TAB>origin");
      }
      std::size_t index = 0;
      auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), index);
      if (ec != std::errc{} || ptr != fields[0].data() + fields[0].size()) {
        throw Error(ErrorCategory::Parse, where + ": bad index '" + fields[0] + "'");
      }
      if (index != data.vocabulary.size()) {
        throw Error(ErrorCategory::Schema, where + ": index " + std::to_string(index) +
                                               " out of order, expected " +
                                               std::to_string(data.vocabulary.size()));
      }
      if (fields[1].empty()) {
        throw Error(ErrorCategory::Schema, where + ": empty label");
      }
      if (data.vocabulary.find(fields[1])) {
        throw Error(ErrorCategory::Schema, where + ": duplicate label '" + fields[1] + "'");
      }
      data.vocabulary.index.emplace(fields[1], data.vocabulary.attributes.size());
      data.vocabulary.attributes.push_back({fields[1], fields[2]});
    }
  }
  const std::size_t m = data.vocabulary.size();

  const std::string ann_path = (fs::path(dir) / "annotations.tsv").string();
  std::ifstream in = open_for_read(ann_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = ann_path + ":" + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw Error(ErrorCategory::Parse,
                  where + ": expected image_id<TAB>category<TAB>sparse scores");
    }
    AttributeAnnotation ann;
    ann.image_id = fields[0];
    ann.category = fields[1];
    ann.scores.assign(m, 0.0);
    if (!fields[2].empty()) {
      for (const auto& pair : split(fields[2], ' ')) {
        const std::size_t colon = pair.find(':');
        if (colon == std::string::npos) {
          throw Error(ErrorCategory::Parse, where + ": expected idx:score, got '" + pair + "'");
        }
        const std::string idx_text = pair.substr(0, colon);
        std::size_t j = 0;
        auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), j);
        if (ec != std::errc{} || ptr != idx_text.data() + idx_text.size()) {
          throw Error(ErrorCategory::Parse, where + ": bad attribute index '" + idx_text + "'");
        }
        if (j >= m) {
          throw Error(ErrorCategory::Schema, where + ": attribute index " + std::to_string(j) +
                                                 " out of range for vocabulary of " +
                                                 std::to_string(m));
        }
        if (ann.scores[j] != 0.0) {
          throw Error(ErrorCategory::Schema,
                      where + ": attribute index " + std::to_string(j) + " repeated");
        }
        const double score = parse_double(pair.substr(colon + 1), where);
        check_score_range(score, where);
        if (score == 0.0) {
          throw Error(ErrorCategory::Schema,
                      where + ": explicit zero score for index " + std::to_string(j));
        }
        ann.scores[j] = score;
      }
    }
    data.annotations.push_back(std::move(ann));
  }
  return data;
}

std::vector<DetectorSource> load_sources(const std::string& path) {
  std::ifstream in = open_for_read(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Parse, path + ": " + e.what());
  }
  if (!j.is_array()) {
    throw Error(ErrorCategory::Schema, path + ": expected a JSON array of sources");
  }
  std::vector<DetectorSource> sources;
  try {
    for (const auto& item : j) {
      DetectorSource source;
      source.source_id = item.at("source_id").get<std::string>();
      source.labels = item.at("labels").get<std::vector<std::string>>();
      if (source.source_id.empty()) {
        throw Error(ErrorCategory::Schema, path + ": empty source_id");
      }
      sources.push_back(std::move(source));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Schema, path + ": " + e.what());
  }
  if (sources.empty()) {
    throw Error(ErrorCategory::Schema, path + ": no sources declared");
  }
  return sources;
}

void write_sources(const std::vector<DetectorSource>& sources, const std::string& path) {
  std::ofstream out = open_for_write(path);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& source : sources) {
    j.push_back({{"source_id", source.source_id}, {"labels", source.labels}});
  }
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

std::string render_statistics(const CorpusStatistics& stats,
                              const AttributeVocabulary& vocabulary) {
  std::string text;
  text += "images: " + std::to_string(stats.n_images) + "\n";
  text += "mean attributes per image: " + format_double(stats.mean_attributes_per_image) + "\n";
  text += "attributes per image (count\timages):\n";
  for (const auto& [count, images] : stats.attributes_per_image) {
    text += "  " + std::to_string(count) + "\t" + std::to_string(images) + "\n";
  }
  text += "attribute scores over nonzero occurrences (label\tcount\tmin\tavg\tmax):\n";
  for (std::size_t j = 0; j < stats.per_attribute.size(); ++j) {
    const auto& a = stats.per_attribute[j];
    const std::string label =
        j < vocabulary.size() ? vocabulary.attributes[j].label : std::to_string(j);
    text += "  " + label + "\t" + std::to_string(a.count_nonzero);
    if (a.count_nonzero > 0) {
      text += "\t" + format_double(a.min_score) + "\t" + format_double(a.avg_score) + "\t" +
              format_double(a.max_score);
    }
    text += "\n";
  }
  return text;
}

std::string render_mining_report(const MiningResult& result) {
  std::string text;
  text += "vocabulary: " + std::to_string(result.vocabulary.size()) + " attributes\n";
  text += "category\timages\tseen\tcut_by_score\tcut_by_rare\tused\n";
  for (const auto& row : result.category_table) {
    text += row.category + "\t" + std::to_string(row.n_images) + "\t" +
            std::to_string(row.attributes_seen) + "\t" + std::to_string(row.removed_by_score) +
            "\t" + std::to_string(row.removed_by_frequency) + "\t" + std::to_string(row.used) +
            "\n";
  }
  for (const auto& profile : result.profiles) {
    if (profile.empty_category) {
      text += "warning: category '" + profile.category + "' has no images\n";
    }
  }
  text += "\nraw detector scores:\n";
  text += render_statistics(result.raw_stats, result.vocabulary);
  text += "\nemitted annotations:\n";
  text += render_statistics(result.final_stats, result.vocabulary);
  return text;
}

}  // namespace masr
