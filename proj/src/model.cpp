#include "masr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "masr/error.hpp"
#include "masr/rng.hpp"

namespace masr {

namespace {

void check_dim(const DenseVector& v, std::size_t expected, const char* what) {
  if (v.size() != expected) {
    throw Error(ErrorCategory::Shape, std::string(what) + " has dim " +
                                          std::to_string(v.size()) + ", expected " +
                                          std::to_string(expected));
  }
}

void fill_uniform(DenseVector& v, double bound, Rng& rng) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}

}  // namespace

MasrParams init_params(std::size_t feature_dim, std::size_t n_attributes, std::size_t n_classes,
                       std::size_t cascade_depth, std::uint64_t seed) {
  if (feature_dim == 0 || n_attributes == 0 || n_classes == 0) {
    throw Error(ErrorCategory::Config, "init_params: dimensions must be positive");
  }
  if (cascade_depth == 0) {
    throw Error(ErrorCategory::Config, "init_params: cascade depth must be >= 1");
  }
  MasrParams p;
  p.feature_dim = feature_dim;
  p.n_attributes = n_attributes;
  p.n_classes = n_classes;
  p.scene_weight = DenseMatrix(n_classes, feature_dim + n_attributes);
  p.scene_bias.assign(n_classes, 0.0);
  p.attr_weight = DenseMatrix(n_attributes, feature_dim);
  p.attr_bias.assign(n_attributes, 0.0);
  p.arl.resize(cascade_depth);
  for (auto& layer : p.arl) {
    layer.score_weight = DenseMatrix(n_attributes, n_attributes);
    layer.pred_weight = DenseMatrix(n_attributes, n_attributes);
    layer.gate_bias.assign(n_attributes, 0.0);
    layer.bias.assign(n_attributes, 0.0);
  }

  Rng rng(seed);
  const double scene_bound = 1.0 / std::sqrt(static_cast<double>(feature_dim + n_attributes));
  const double attr_bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  const double arl_bound = 1.0 / std::sqrt(static_cast<double>(n_attributes));
  fill_uniform(p.scene_weight.data, scene_bound, rng);
  fill_uniform(p.scene_bias, scene_bound, rng);
  fill_uniform(p.attr_weight.data, attr_bound, rng);
  fill_uniform(p.attr_bias, attr_bound, rng);
  for (auto& layer : p.arl) {
    fill_uniform(layer.score_weight.data, arl_bound, rng);
    fill_uniform(layer.pred_weight.data, arl_bound, rng);
    fill_uniform(layer.gate_bias, arl_bound, rng);
    fill_uniform(layer.bias, arl_bound, rng);
  }
  return p;
}

MasrParams zeros_like(const MasrParams& p) {
  MasrParams z = p;
  auto clear = [](DenseVector& v) { std::fill(v.begin(), v.end(), 0.0); };
  clear(z.scene_weight.data);
  clear(z.scene_bias);
  clear(z.attr_weight.data);
  clear(z.attr_bias);
  for (auto& layer : z.arl) {
    clear(layer.score_weight.data);
    clear(layer.pred_weight.data);
    clear(layer.gate_bias);
    clear(layer.bias);
  }
  return z;
}

std::size_t param_count(const MasrParams& p) {
  std::size_t n = p.scene_weight.data.size() + p.scene_bias.size() + p.attr_weight.data.size() +
                  p.attr_bias.size();
  for (const auto& layer : p.arl) {
    n += layer.score_weight.data.size() + layer.pred_weight.data.size() + layer.gate_bias.size() +
         layer.bias.size();
  }
  return n;
}

DenseVector flatten(const MasrParams& p) {
  DenseVector flat;
  flat.reserve(param_count(p));
  auto append = [&flat](const DenseVector& v) { flat.insert(flat.end(), v.begin(), v.end()); };
  append(p.scene_weight.data);
  append(p.scene_bias);
  append(p.attr_weight.data);
  append(p.attr_bias);
  for (const auto& layer : p.arl) {
    append(layer.score_weight.data);
    append(layer.pred_weight.data);
    append(layer.gate_bias);
    append(layer.bias);
  }
  return flat;
}

void unflatten(const DenseVector& flat, MasrParams& p) {
  if (flat.size() != param_count(p)) {
    throw Error(ErrorCategory::Shape, "unflatten: got " + std::to_string(flat.size()) +
                                          " values, expected " +
                                          std::to_string(param_count(p)));
  }
  std::size_t offset = 0;
  auto take = [&](DenseVector& v) {
    std::copy(flat.begin() + offset, flat.begin() + offset + v.size(), v.begin());
    offset += v.size();
  };
  take(p.scene_weight.data);
  take(p.scene_bias);
  take(p.attr_weight.data);
  take(p.attr_bias);
  for (auto& layer : p.arl) {
    take(layer.score_weight.data);
    take(layer.pred_weight.data);
    take(layer.gate_bias);
    take(layer.bias);
  }
}

RegularizerTable compute_regularizer(const std::vector<Sample>& train_set,
                                     std::size_t n_classes) {
  if (n_classes < 2) {
    throw Error(ErrorCategory::Config,
                "regularizer needs at least 2 classes, got " + std::to_string(n_classes));
  }
  if (train_set.empty()) {
    throw Error(ErrorCategory::Contract, "regularizer needs a non-empty training set");
  }
  const std::size_t m = train_set.front().attr_binary.size();
  DenseMatrix counts(m, n_classes);  // positives of attribute j in class k
  for (const auto& sample : train_set) {
    if (sample.category >= n_classes) {
      throw Error(ErrorCategory::Index, "sample '" + sample.image_id + "' has category " +
                                            std::to_string(sample.category) + " >= K=" +
                                            std::to_string(n_classes));
    }
    check_dim(sample.attr_binary, m, "attr_binary");
    for (std::size_t j = 0; j < m; ++j) {
      const double b = sample.attr_binary[j];
      if (b != 0.0 && b != 1.0) {
        throw Error(ErrorCategory::Contract,
                    "attr_binary of '" + sample.image_id + "' is not binary at index " +
                        std::to_string(j));
      }
      counts.at(j, sample.category) += b;
    }
  }
  RegularizerTable table;
  table.beta = DenseMatrix(m, n_classes);
  for (std::size_t j = 0; j < m; ++j) {
    double total = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k) total += counts.at(j, k);
    for (std::size_t k = 0; k < n_classes; ++k) {
      double denom = total - counts.at(j, k);
      if (denom == 0.0) denom = 1.0;  // smoothing: attribute positive in only one class
      table.beta.at(j, k) = counts.at(j, k) / denom;
    }
  }
  return table;
}

DenseVector attribute_logits(const DenseVector& feature, const MasrParams& params) {
  check_dim(feature, params.feature_dim, "feature");
  DenseVector z = matvec(params.attr_weight, feature);
  for (std::size_t j = 0; j < z.size(); ++j) z[j] += params.attr_bias[j];
  return z;
}

DenseVector attribute_forward(const DenseVector& feature, const MasrParams& params) {
  return sigmoid(attribute_logits(feature, params));
}

double attribute_loss(const DenseVector& pred_prob, const DenseVector& binary,
                      std::size_t category, const RegularizerTable& reg,
                      const AttributeLossOptions& options) {
  const std::size_t m = pred_prob.size();
  check_dim(binary, m, "binary attribute vector");
  if (reg.beta.rows != m) {
    throw Error(ErrorCategory::Shape, "regularizer has " + std::to_string(reg.beta.rows) +
                                          " attributes, expected " + std::to_string(m));
  }
  if (category >= reg.beta.cols) {
    throw Error(ErrorCategory::Index, "category " + std::to_string(category) +
                                          " out of range for K=" + std::to_string(reg.beta.cols));
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double b = binary[j];
    if (b != 0.0 && b != 1.0) {
      throw Error(ErrorCategory::Contract,
                  "attribute ground truth is not binary at index " + std::to_string(j));
    }
    const double beta = reg.beta.at(j, category);
    const double w_pos = options.beta_on_positive ? beta : 1.0;
    const double w_neg = options.beta_on_positive ? 1.0 : beta;
    const double p = std::clamp(pred_prob[j], kProbEps, 1.0 - kProbEps);
    sum -= w_pos * b * std::log(p) + w_neg * (1.0 - b) * std::log(1.0 - p);
  }
  return options.normalize_by_m ? sum / static_cast<double>(m) : sum;
}

DenseVector arl_forward(const DenseVector& scores, const DenseVector& pred,
                        const ArlLayer& layer) {
  const std::size_t m = layer.score_weight.rows;
  check_dim(scores, m, "arl scores");
  check_dim(pred, m, "arl predictions");
  check_dim(layer.gate_bias, m, "arl gate_bias");
  check_dim(layer.bias, m, "arl bias");
  DenseVector pre = matvec(layer.score_weight, scores);
  const DenseVector from_pred = matvec(layer.pred_weight, pred);
  for (std::size_t j = 0; j < m; ++j) pre[j] += from_pred[j] + layer.bias[j];
  DenseVector v(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double c = pre[j] > 0.0 ? pre[j] : 0.0;
    v[j] = scores[j] * sigmoid(layer.gate_bias[j] + c);
  }
  return v;
}

DenseVector arl_cascade(const DenseVector& scores, const DenseVector& pred,
                        const std::vector<ArlLayer>& layers) {
  if (layers.empty()) {
    throw Error(ErrorCategory::Config, "arl cascade must have at least one layer");
  }
  DenseVector v = arl_forward(scores, pred, layers.front());
  for (std::size_t t = 1; t < layers.size(); ++t) {
    v = arl_forward(v, pred, layers[t]);
  }
  return v;
}

DenseVector scene_forward(const DenseVector& feature, const DenseVector& v,
                          const MasrParams& params) {
  check_dim(feature, params.feature_dim, "feature");
  check_dim(v, params.n_attributes, "re-weighted scores");
  DenseVector concat;
  concat.reserve(feature.size() + v.size());
  concat.insert(concat.end(), feature.begin(), feature.end());
  concat.insert(concat.end(), v.begin(), v.end());
  DenseVector logits = matvec(params.scene_weight, concat);
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += params.scene_bias[k];
  return logits;
}

DenseVector scene_forward_baseline(const DenseVector& feature, const MasrParams& params) {
  return scene_forward(feature, DenseVector(params.n_attributes, 0.0), params);
}

namespace {

// Cached intermediates of one cascade run. u has layers+1 entries, u[0] being
// the raw scores; pre and gate have one entry per layer.
struct ArlCache {
  std::vector<DenseVector> u;
  std::vector<DenseVector> pre;
  std::vector<DenseVector> gate;
};

DenseVector arl_run(const DenseVector& scores, const DenseVector& pred,
                    const std::vector<ArlLayer>& layers, ArlCache& cache) {
  if (layers.empty()) {
    throw Error(ErrorCategory::Config, "arl cascade must have at least one layer");
  }
  const std::size_t m = scores.size();
  cache.u.clear();
  cache.pre.clear();
  cache.gate.clear();
  cache.u.push_back(scores);
  for (const auto& layer : layers) {
    const DenseVector& u_in = cache.u.back();
    check_dim(u_in, layer.score_weight.rows, "arl scores");
    DenseVector pre = matvec(layer.score_weight, u_in);
    const DenseVector from_pred = matvec(layer.pred_weight, pred);
    for (std::size_t j = 0; j < m; ++j) pre[j] += from_pred[j] + layer.bias[j];
    DenseVector gate(m), u_out(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double c = pre[j] > 0.0 ? pre[j] : 0.0;
      gate[j] = sigmoid(layer.gate_bias[j] + c);
      u_out[j] = u_in[j] * gate[j];
    }
    cache.pre.push_back(std::move(pre));
    cache.gate.push_back(std::move(gate));
    cache.u.push_back(std::move(u_out));
  }
  return cache.u.back();
}

void arl_backprop(const DenseVector& pred, const std::vector<ArlLayer>& layers,
                  const ArlCache& cache, const DenseVector& upstream,
                  std::vector<ArlLayer>& layer_grads, DenseVector& d_scores,
                  DenseVector& d_pred) {
  const std::size_t m = upstream.size();
  DenseVector du = upstream;
  for (std::size_t t = layers.size(); t-- > 0;) {
    const ArlLayer& layer = layers[t];
    ArlLayer& grad = layer_grads[t];
    const DenseVector& u_in = cache.u[t];
    const DenseVector& pre = cache.pre[t];
    const DenseVector& gate = cache.gate[t];

    DenseVector du_in(m), dpre(m);
    for (std::size_t j = 0; j < m; ++j) {
      du_in[j] = du[j] * gate[j];
      const double dgate = du[j] * u_in[j];
      const double dsig = dgate * gate[j] * (1.0 - gate[j]);
      grad.gate_bias[j] += dsig;
      dpre[j] = pre[j] > 0.0 ? dsig : 0.0;  // ReLU subgradient 0 at 0
      grad.bias[j] += dpre[j];
    }
    for (std::size_t r = 0; r < m; ++r) {
      if (dpre[r] == 0.0) continue;
      double* score_row = grad.score_weight.data.data() + r * m;
      double* pred_row = grad.pred_weight.data.data() + r * m;
      for (std::size_t c = 0; c < m; ++c) {
        score_row[c] += dpre[r] * u_in[c];
        pred_row[c] += dpre[r] * pred[c];
      }
    }
    const DenseVector through_scores = matvec_transposed(layer.score_weight, dpre);
    const DenseVector through_pred = matvec_transposed(layer.pred_weight, dpre);
    for (std::size_t j = 0; j < m; ++j) {
      du_in[j] += through_scores[j];
      d_pred[j] += through_pred[j];
    }
    du = std::move(du_in);
  }
  d_scores = std::move(du);
}

ArlLayer zero_layer(std::size_t m) {
  ArlLayer layer;
  layer.score_weight = DenseMatrix(m, m);
  layer.pred_weight = DenseMatrix(m, m);
  layer.gate_bias.assign(m, 0.0);
  layer.bias.assign(m, 0.0);
  return layer;
}

}  // namespace

void arl_cascade_backward(const DenseVector& scores, const DenseVector& pred,
                          const std::vector<ArlLayer>& layers, const DenseVector& upstream,
                          std::vector<ArlLayer>& layer_grads, DenseVector& d_scores,
                          DenseVector& d_pred) {
  const std::size_t m = scores.size();
  ArlCache cache;
  arl_run(scores, pred, layers, cache);
  layer_grads.assign(layers.size(), zero_layer(m));
  d_scores.assign(m, 0.0);
  d_pred.assign(m, 0.0);
  arl_backprop(pred, layers, cache, upstream, layer_grads, d_scores, d_pred);
}

DenseVector reweighted_scores(const Sample& sample, const MasrParams& params, ForwardMode mode) {
  if (mode == ForwardMode::SceneOnly) {
    return DenseVector(params.n_attributes, 0.0);
  }
  const DenseVector z = attribute_logits(sample.feature, params);
  return arl_cascade(sample.attr_scores, z, params.arl);
}

LossBreakdown masr_loss(const Sample& sample, const MasrParams& params,
                        const RegularizerTable& reg, ForwardMode mode,
                        const AttributeLossOptions& options) {
  LossBreakdown out;
  if (mode == ForwardMode::SceneOnly) {
    const DenseVector logits = scene_forward_baseline(sample.feature, params);
    out.cls = softmax_cross_entropy(logits, sample.category);
    out.att = 0.0;
    out.total = out.cls;
    return out;
  }
  const DenseVector z = attribute_logits(sample.feature, params);
  const DenseVector prob = sigmoid(z);
  const DenseVector v = arl_cascade(sample.attr_scores, z, params.arl);
  const DenseVector logits = scene_forward(sample.feature, v, params);
  out.cls = softmax_cross_entropy(logits, sample.category);
  out.att = attribute_loss(prob, sample.attr_binary, sample.category, reg, options);
  out.total = out.cls + out.att;
  return out;
}

MasrGrads masr_backward(const Sample& sample, const MasrParams& params,
                        const RegularizerTable& reg, ForwardMode mode,
                        const AttributeLossOptions& options) {
  const std::size_t d = params.feature_dim;
  const std::size_t m = params.n_attributes;
  const std::size_t k_classes = params.n_classes;
  check_dim(sample.feature, d, "feature");
  if (sample.category >= k_classes) {
    throw Error(ErrorCategory::Index, "sample '" + sample.image_id + "' has category " +
                                          std::to_string(sample.category) + " >= K=" +
                                          std::to_string(k_classes));
  }
  MasrGrads grads = zeros_like(params);

  // forward
  DenseVector z, prob, v;
  ArlCache cache;
  if (mode == ForwardMode::Joint) {
    z = attribute_logits(sample.feature, params);
    prob = sigmoid(z);
    check_dim(sample.attr_scores, m, "attr_scores");
    v = arl_run(sample.attr_scores, z, params.arl, cache);
  } else {
    v.assign(m, 0.0);
  }
  DenseVector concat;
  concat.reserve(d + m);
  concat.insert(concat.end(), sample.feature.begin(), sample.feature.end());
  concat.insert(concat.end(), v.begin(), v.end());
  DenseVector logits = matvec(params.scene_weight, concat);
  for (std::size_t k = 0; k < k_classes; ++k) logits[k] += params.scene_bias[k];

  // scene head
  DenseVector dlogits = softmax(logits);
  dlogits[sample.category] -= 1.0;
  for (std::size_t r = 0; r < k_classes; ++r) {
    grads.scene_bias[r] = dlogits[r];
    double* row = grads.scene_weight.data.data() + r * (d + m);
    for (std::size_t c = 0; c < d + m; ++c) row[c] = dlogits[r] * concat[c];
  }
  if (mode == ForwardMode::SceneOnly) {
    return grads;
  }

  const DenseVector dconcat = matvec_transposed(params.scene_weight, dlogits);
  DenseVector dv(dconcat.begin() + static_cast<std::ptrdiff_t>(d), dconcat.end());

  // re-weighting cascade
  DenseVector d_scores, dz(m, 0.0);
  arl_backprop(z, params.arl, cache, dv, grads.arl, d_scores, dz);

  // attribute loss; clamped probabilities contribute no gradient
  const double factor = options.normalize_by_m ? 1.0 / static_cast<double>(m) : 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double p = prob[j];
    if (p <= kProbEps || p >= 1.0 - kProbEps) continue;
    const double b = sample.attr_binary[j];
    const double beta = reg.beta.at(j, sample.category);
    const double w_pos = options.beta_on_positive ? beta : 1.0;
    const double w_neg = options.beta_on_positive ? 1.0 : beta;
    const double dp = factor * (-w_pos * b / p + w_neg * (1.0 - b) / (1.0 - p));
    dz[j] += dp * p * (1.0 - p);
  }

  // attribute branches: row j touches only z_j
  for (std::size_t j = 0; j < m; ++j) {
    grads.attr_bias[j] = dz[j];
    double* row = grads.attr_weight.data.data() + j * d;
    for (std::size_t c = 0; c < d; ++c) row[c] = dz[j] * sample.feature[c];
  }
  return grads;
}

// ---- checkpointing ---------------------------------------------------------

namespace {

constexpr std::uint32_t kParamsMagic = 0x4D535250;  // "MSRP"
constexpr std::uint32_t kParamsVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::string& context) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error(ErrorCategory::Parse, context + ": truncated header");
  return v;
}

void write_doubles(std::ostream& out, const DenseVector& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, DenseVector& v, const std::string& context) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw Error(ErrorCategory::Parse, context + ": truncated parameter block");
}

}  // namespace

void save_params(std::ostream& out, const MasrParams& params) {
  write_u32(out, kParamsMagic);
  write_u32(out, kParamsVersion);
  write_u32(out, static_cast<std::uint32_t>(params.feature_dim));
  write_u32(out, static_cast<std::uint32_t>(params.n_attributes));
  write_u32(out, static_cast<std::uint32_t>(params.n_classes));
  write_u32(out, static_cast<std::uint32_t>(params.arl.size()));
  write_doubles(out, params.scene_weight.data);
  write_doubles(out, params.scene_bias);
  write_doubles(out, params.attr_weight.data);
  write_doubles(out, params.attr_bias);
  for (const auto& layer : params.arl) {
    write_doubles(out, layer.score_weight.data);
    write_doubles(out, layer.pred_weight.data);
    write_doubles(out, layer.gate_bias);
    write_doubles(out, layer.bias);
  }
}

MasrParams load_params(std::istream& in, const std::string& context) {
  if (read_u32(in, context) != kParamsMagic) {
    throw Error(ErrorCategory::Parse, context + ": not a parameter block");
  }
  const std::uint32_t version = read_u32(in, context);
  if (version != kParamsVersion) {
    throw Error(ErrorCategory::Parse,
                context + ": unsupported parameter version " + std::to_string(version));
  }
  const std::uint32_t d = read_u32(in, context);
  const std::uint32_t m = read_u32(in, context);
  const std::uint32_t k = read_u32(in, context);
  const std::uint32_t depth = read_u32(in, context);
  if (d == 0 || m == 0 || k == 0 || depth == 0) {
    throw Error(ErrorCategory::Schema, context + ": zero dimension in header");
  }
  MasrParams p;
  p.feature_dim = d;
  p.n_attributes = m;
  p.n_classes = k;
  p.scene_weight = DenseMatrix(k, d + m);
  p.scene_bias.assign(k, 0.0);
  p.attr_weight = DenseMatrix(m, d);
  p.attr_bias.assign(m, 0.0);
  p.arl.resize(depth);
  read_doubles(in, p.scene_weight.data, context);
  read_doubles(in, p.scene_bias, context);
  read_doubles(in, p.attr_weight.data, context);
  read_doubles(in, p.attr_bias, context);
  for (auto& layer : p.arl) {
    layer.score_weight = DenseMatrix(m, m);
    layer.pred_weight = DenseMatrix(m, m);
    layer.gate_bias.assign(m, 0.0);
    layer.bias.assign(m, 0.0);
    read_doubles(in, layer.score_weight.data, context);
    read_doubles(in, layer.pred_weight.data, context);
    read_doubles(in, layer.gate_bias, context);
    read_doubles(in, layer.bias, context);
  }
  return p;
}

void save_params_file(const std::string& path, const MasrParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  save_params(out, params);
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

MasrParams load_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  return load_params(in, path);
}

}  // namespace masr
