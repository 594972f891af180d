#pragma once

#include <string>
#include <vector>

#include "masr/model.hpp"

namespace masr {

struct AttributePrecisionRow {
  std::string label;
  std::size_t tp = 0;
  std::size_t fp = 0;
  bool defined = false;  // false when the attribute was never predicted (tp + fp = 0)
  double precision = 0.0;
};

struct EvalReport {
  std::size_t n_samples = 0;
  std::vector<std::pair<std::size_t, double>> topk;  // (k, accuracy), ascending k
  std::vector<AttributePrecisionRow> per_attribute;
  std::size_t n_defined = 0;
  double attribute_ap = 0.0;  // mean precision over defined attributes; see n_defined
};

// Fraction of samples whose true class is among the k highest logits, ties
// broken toward the lower class index.
double topk_accuracy(const std::vector<DenseVector>& logits,
                     const std::vector<std::size_t>& truths, std::size_t k);

// Per-attribute TP/(TP+FP) over binary predictions and ground truth.
// Never-predicted attributes come back with defined = false.
std::vector<AttributePrecisionRow> attribute_precision(
    const std::vector<DenseVector>& predicted, const std::vector<DenseVector>& truth,
    const std::vector<std::string>& labels);

// Full report: scene logits under the given mode, attribute predictions
// thresholded at 0.5. Requested k values above the class count are dropped.
EvalReport evaluate(const std::vector<Sample>& samples, const MasrParams& params,
                    ForwardMode mode, const std::vector<std::string>& attribute_labels,
                    const std::vector<std::size_t>& ks = {1, 2, 5});

// "image_id<TAB>category<TAB>e0 e1 ..." rows under a header line; the embedding
// is concat(feature, v) for the given mode.
void export_embeddings(const std::vector<Sample>& samples, const MasrParams& params,
                       ForwardMode mode, const std::string& path);

std::string render_report(const EvalReport& report);

// Machine-readable lines: "metric<TAB>value", one per metric, precision rows
// keyed "precision:<label>".
void write_report_tsv(const EvalReport& report, const std::string& path);

}  // namespace masr
