#include "masr/evaluator.hpp"

#include <algorithm>
#include <fstream>

#include "masr/annotation.hpp"
#include "masr/error.hpp"

namespace masr {

namespace {

// True when class `truth` ranks inside the top k, lower index winning ties:
// strictly higher logits always outrank, equal logits outrank only from a
// lower index.
bool topk_hit(const DenseVector& logits, std::size_t truth, std::size_t k) {
  std::size_t ahead = 0;
  const double ref = logits[truth];
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (logits[c] > ref || (logits[c] == ref && c < truth)) ++ahead;
  }
  return ahead < k;
}

void check_binary(const DenseVector& v, const char* what) {
  for (double x : v) {
    if (x != 0.0 && x != 1.0) {
      throw Error(ErrorCategory::Contract, std::string(what) + " is not binary");
    }
  }
}

}  // namespace

double topk_accuracy(const std::vector<DenseVector>& logits,
                     const std::vector<std::size_t>& truths, std::size_t k) {
  if (logits.size() != truths.size()) {
    throw Error(ErrorCategory::Shape, "got " + std::to_string(logits.size()) +
                                          " logit rows for " + std::to_string(truths.size()) +
                                          " truths");
  }
  if (logits.empty()) {
    throw Error(ErrorCategory::Report, "no samples to score");
  }
  const std::size_t n_classes = logits.front().size();
  if (k < 1 || k > n_classes) {
    throw Error(ErrorCategory::Config, "k=" + std::to_string(k) + " out of range for " +
                                           std::to_string(n_classes) + " classes");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i].size() != n_classes) {
      throw Error(ErrorCategory::Shape, "logit row " + std::to_string(i) + " has dim " +
                                            std::to_string(logits[i].size()) + ", expected " +
                                            std::to_string(n_classes));
    }
    if (truths[i] >= n_classes) {
      throw Error(ErrorCategory::Index,
                  "truth " + std::to_string(truths[i]) + " >= K=" + std::to_string(n_classes));
    }
    if (topk_hit(logits[i], truths[i], k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

std::vector<AttributePrecisionRow> attribute_precision(
    const std::vector<DenseVector>& predicted, const std::vector<DenseVector>& truth,
    const std::vector<std::string>& labels) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCategory::Shape, "got " + std::to_string(predicted.size()) +
                                          " prediction rows for " + std::to_string(truth.size()) +
                                          " truth rows");
  }
  const std::size_t m = labels.size();
  std::vector<AttributePrecisionRow> rows(m);
  for (std::size_t j = 0; j < m; ++j) rows[j].label = labels[j];
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != m || truth[i].size() != m) {
      throw Error(ErrorCategory::Shape,
                  "row " + std::to_string(i) + " does not match " + std::to_string(m) +
                      " attributes");
    }
    check_binary(predicted[i], "prediction");
    check_binary(truth[i], "truth");
    for (std::size_t j = 0; j < m; ++j) {
      if (predicted[i][j] == 1.0) {
        if (truth[i][j] == 1.0) ++rows[j].tp;
        else ++rows[j].fp;
      }
    }
  }
  for (auto& row : rows) {
    const std::size_t denom = row.tp + row.fp;
    if (denom > 0) {
      row.defined = true;
      row.precision = static_cast<double>(row.tp) / static_cast<double>(denom);
    }
  }
  return rows;
}

EvalReport evaluate(const std::vector<Sample>& samples, const MasrParams& params,
                    ForwardMode mode, const std::vector<std::string>& attribute_labels,
                    const std::vector<std::size_t>& ks) {
  if (samples.empty()) {
    throw Error(ErrorCategory::Report, "no samples to evaluate");
  }
  if (attribute_labels.size() != params.n_attributes) {
    throw Error(ErrorCategory::Shape, "got " + std::to_string(attribute_labels.size()) +
                                          " attribute labels for m=" +
                                          std::to_string(params.n_attributes));
  }
  std::vector<DenseVector> logits, pred_binary, truth_binary;
  std::vector<std::size_t> truths;
  logits.reserve(samples.size());
  for (const auto& sample : samples) {
    const DenseVector z = attribute_logits(sample.feature, params);
    const DenseVector v = mode == ForwardMode::Joint
                              ? arl_cascade(sample.attr_scores, z, params.arl)
                              : DenseVector(params.n_attributes, 0.0);
    logits.push_back(scene_forward(sample.feature, v, params));
    truths.push_back(sample.category);
    pred_binary.push_back(binarize(sigmoid(z), 0.5));
    truth_binary.push_back(sample.attr_binary);
  }

  EvalReport report;
  report.n_samples = samples.size();
  std::vector<std::size_t> sorted_ks = ks;
  std::sort(sorted_ks.begin(), sorted_ks.end());
  for (std::size_t k : sorted_ks) {
    if (k < 1 || k > params.n_classes) continue;
    report.topk.emplace_back(k, topk_accuracy(logits, truths, k));
  }
  report.per_attribute = attribute_precision(pred_binary, truth_binary, attribute_labels);
  double sum = 0.0;
  for (const auto& row : report.per_attribute) {
    if (!row.defined) continue;
    sum += row.precision;
    ++report.n_defined;
  }
  report.attribute_ap = report.n_defined > 0 ? sum / static_cast<double>(report.n_defined) : 0.0;
  return report;
}

void export_embeddings(const std::vector<Sample>& samples, const MasrParams& params,
                       ForwardMode mode, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  out << "image_id\tcategory\tembedding\n";
  for (const auto& sample : samples) {
    const DenseVector v = reweighted_scores(sample, params, mode);
    out << sample.image_id << '\t' << sample.category << '\t';
    for (std::size_t i = 0; i < sample.feature.size(); ++i) {
      if (i > 0) out << ' ';
      out << format_double(sample.feature[i]);
    }
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  }
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

std::string render_report(const EvalReport& report) {
  std::string text;
  text += "samples: " + std::to_string(report.n_samples) + "\n";
  for (const auto& [k, acc] : report.topk) {
    text += "top@" + std::to_string(k) + ": " + format_double(acc) + "\n";
  }
  text += "attribute precision at threshold 0.5 (label\ttp\tfp\tprecision):\n";
  for (const auto& row : report.per_attribute) {
    text += "  " + row.label + "\t" + std::to_string(row.tp) + "\t" + std::to_string(row.fp) +
            "\t" + (row.defined ? format_double(row.precision) : "undefined") + "\n";
  }
  text += "AP over " + std::to_string(report.n_defined) + " defined attributes: " +
          (report.n_defined > 0 ? format_double(report.attribute_ap) : "undefined") + "\n";
  return text;
}

void write_report_tsv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  out << "n_samples\t" << report.n_samples << '\n';
  for (const auto& [k, acc] : report.topk) {
    out << "top@" << k << '\t' << format_double(acc) << '\n';
  }
  for (const auto& row : report.per_attribute) {
    out << "precision:" << row.label << '\t'
        << (row.defined ? format_double(row.precision) : "undefined") << '\n';
  }
  out << "attribute_ap\t" << (report.n_defined > 0 ? format_double(report.attribute_ap) : "undefined")
      << '\n';
  out << "attribute_ap_defined\t" << report.n_defined << '\n';
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

}  // namespace masr
