#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "masr/numerics.hpp"

namespace masr {

// One training/evaluation example: a precomputed image feature, the scene
// category index, the mined attribute score vector and its binarized view.
struct Sample {
  std::string image_id;
  DenseVector feature;      // dim d
  std::size_t category = 0; // in 0..K-1
  DenseVector attr_scores;  // a, dim m, entries in [0, 1]
  DenseVector attr_binary;  // binarized a, entries in {0, 1}
};

// One attribute re-weighting layer. The gate input mixes the incoming score
// vector with the attribute predictions; gate_bias is the learnable vector
// added inside the sigmoid.
struct ArlLayer {
  DenseMatrix score_weight;  // m x m, applied to the score line
  DenseMatrix pred_weight;   // m x m, applied to the attribute predictions
  DenseVector gate_bias;     // m, added inside the sigmoid
  DenseVector bias;          // m, added before the ReLU

  bool operator==(const ArlLayer&) const = default;
};

// All trainable head parameters. Attribute branches are independent per
// attribute: row j of attr_weight touches only prediction j.
struct MasrParams {
  std::size_t feature_dim = 0;   // d
  std::size_t n_attributes = 0;  // m
  std::size_t n_classes = 0;     // K

  DenseMatrix scene_weight;  // K x (d + m), columns d.. consume the re-weighted scores
  DenseVector scene_bias;    // K
  DenseMatrix attr_weight;   // m x d
  DenseVector attr_bias;     // m
  std::vector<ArlLayer> arl; // cascade, depth >= 1

  bool operator==(const MasrParams&) const = default;
};

// Gradients share the parameter layout exactly.
using MasrGrads = MasrParams;

// Weights drawn uniform in +/-1/sqrt(fan_in), biases included, seed-controlled.
MasrParams init_params(std::size_t feature_dim, std::size_t n_attributes, std::size_t n_classes,
                       std::size_t cascade_depth, std::uint64_t seed);

MasrParams zeros_like(const MasrParams& p);
std::size_t param_count(const MasrParams& p);
DenseVector flatten(const MasrParams& p);
void unflatten(const DenseVector& flat, MasrParams& p);

// Applies f to every parameter of p paired with the same slot of g.
template <typename F>
void for_each_param(MasrParams& p, const MasrParams& g, F&& f) {
  auto zip = [&f](DenseVector& a, const DenseVector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) f(a[i], b[i]);
  };
  zip(p.scene_weight.data, g.scene_weight.data);
  zip(p.scene_bias, g.scene_bias);
  zip(p.attr_weight.data, g.attr_weight.data);
  zip(p.attr_bias, g.attr_bias);
  for (std::size_t l = 0; l < p.arl.size(); ++l) {
    zip(p.arl[l].score_weight.data, g.arl[l].score_weight.data);
    zip(p.arl[l].pred_weight.data, g.arl[l].pred_weight.data);
    zip(p.arl[l].gate_bias, g.arl[l].gate_bias);
    zip(p.arl[l].bias, g.arl[l].bias);
  }
}

// Per-(attribute, class) imbalance weights: beta[j][k] = positives of attribute
// j in class k over its positives in all other classes. A zero denominator is
// smoothed to 1 so single-class attributes stay finite.
struct RegularizerTable {
  DenseMatrix beta;  // m x K

  static RegularizerTable ones(std::size_t m, std::size_t k) {
    RegularizerTable t;
    t.beta = DenseMatrix(m, k, 1.0);
    return t;
  }
};

RegularizerTable compute_regularizer(const std::vector<Sample>& train_set, std::size_t n_classes);

// Pre-sigmoid attribute branch outputs, one affine map per attribute.
DenseVector attribute_logits(const DenseVector& feature, const MasrParams& params);
// Attribute probabilities sigmoid(attribute_logits).
DenseVector attribute_forward(const DenseVector& feature, const MasrParams& params);

struct AttributeLossOptions {
  // beta scales the positive log term (the imbalance-compensating reading);
  // flip to scale the negative term instead.
  bool beta_on_positive = true;
  // divide the per-sample sum by m so the attribute and scene losses stay on
  // comparable scales inside their unweighted sum
  bool normalize_by_m = true;

  bool operator==(const AttributeLossOptions&) const = default;
};

// Weighted multi-label cross entropy over one sample's m attribute branches.
double attribute_loss(const DenseVector& pred_prob, const DenseVector& binary,
                      std::size_t category, const RegularizerTable& reg,
                      const AttributeLossOptions& options = {});

// One re-weighting step: v = a * sigmoid(gate_bias + ReLU(Wa a + Wp pred + b)),
// elementwise product against the incoming score line.
DenseVector arl_forward(const DenseVector& scores, const DenseVector& pred,
                        const ArlLayer& layer);

// Layer 1 consumes the raw scores; each later layer consumes the previous
// output, with the prediction vector re-fed to every layer.
DenseVector arl_cascade(const DenseVector& scores, const DenseVector& pred,
                        const std::vector<ArlLayer>& layers);

// Scene logits over concat(feature, v).
DenseVector scene_forward(const DenseVector& feature, const DenseVector& v,
                          const MasrParams& params);
// Scene-only variant: the re-weighted score block is zero, so only the feature
// columns of the head participate.
DenseVector scene_forward_baseline(const DenseVector& feature, const MasrParams& params);

enum class ForwardMode {
  SceneOnly,  // v = 0; attribute branches and ARL inert
  Joint,      // full pipeline
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double att = 0.0;
};

// Joint loss = scene cross entropy + weighted attribute loss. SceneOnly mode
// reports att = 0 and total = cls.
LossBreakdown masr_loss(const Sample& sample, const MasrParams& params,
                        const RegularizerTable& reg, ForwardMode mode = ForwardMode::Joint,
                        const AttributeLossOptions& options = {});

// Analytic gradients of the loss above w.r.t. every parameter.
MasrGrads masr_backward(const Sample& sample, const MasrParams& params,
                        const RegularizerTable& reg, ForwardMode mode = ForwardMode::Joint,
                        const AttributeLossOptions& options = {});

// Re-weighted scores for one sample under Joint mode (zeros for SceneOnly).
DenseVector reweighted_scores(const Sample& sample, const MasrParams& params, ForwardMode mode);

// Gradients of dot(upstream, arl_cascade(scores, pred, layers)) — lets tests
// check the cascade in isolation. d_scores/d_pred receive the input gradients.
void arl_cascade_backward(const DenseVector& scores, const DenseVector& pred,
                          const std::vector<ArlLayer>& layers, const DenseVector& upstream,
                          std::vector<ArlLayer>& layer_grads, DenseVector& d_scores,
                          DenseVector& d_pred);

// ---- checkpointing ---------------------------------------------------------

// Versioned binary block: magic, version, (d, m, K, cascade depth), then raw
// parameter arrays in declared order. Round-trips bit-exactly.
void save_params(std::ostream& out, const MasrParams& params);
MasrParams load_params(std::istream& in, const std::string& context);
void save_params_file(const std::string& path, const MasrParams& params);
MasrParams load_params_file(const std::string& path);

}  // namespace masr
