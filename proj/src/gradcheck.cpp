#include "masr/gradcheck.hpp"

#include <cmath>

#include "masr/annotation.hpp"
#include "masr/error.hpp"
#include "masr/numerics.hpp"
#include "masr/rng.hpp"

namespace masr {

namespace {

struct DrawnConfig {
  MasrParams params;
  Sample sample;
  RegularizerTable reg;
  AttributeLossOptions options;
  ForwardMode mode;
};

// Rejects draws where a ReLU pre-activation sits within `margin` of 0 or an
// attribute logit is saturated enough to hit the probability clamp; finite
// differences straddle the kink there and disagree with any subgradient.
bool well_conditioned(const MasrParams& params, const Sample& sample, double margin) {
  const DenseVector z = attribute_logits(sample.feature, params);
  for (double x : z) {
    if (std::abs(x) > 15.0) return false;
  }
  DenseVector u = sample.attr_scores;
  for (const auto& layer : params.arl) {
    DenseVector pre = matvec(layer.score_weight, u);
    const DenseVector from_pred = matvec(layer.pred_weight, z);
    for (std::size_t j = 0; j < u.size(); ++j) {
      pre[j] += from_pred[j] + layer.bias[j];
      if (std::abs(pre[j]) < margin) return false;
      const double c = pre[j] > 0.0 ? pre[j] : 0.0;
      u[j] *= sigmoid(layer.gate_bias[j] + c);
    }
  }
  return true;
}

DrawnConfig draw(const GradCheckOptions& options, std::size_t idx) {
  for (std::size_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(Rng::mix(options.seed, idx * 131 + attempt));
    const std::size_t d = 2 + rng.uniform_int(31);
    const std::size_t m = 2 + rng.uniform_int(15);
    const std::size_t k = 2 + rng.uniform_int(4);
    const std::size_t depth = 1 + rng.uniform_int(3);

    DrawnConfig cfg;
    cfg.params = init_params(d, m, k, depth, Rng::mix(options.seed, idx * 977 + attempt));
    cfg.sample.image_id = "gradcheck_" + std::to_string(idx);
    cfg.sample.feature.resize(d);
    for (double& x : cfg.sample.feature) x = rng.normal();
    cfg.sample.category = rng.uniform_int(k);
    cfg.sample.attr_scores.resize(m);
    cfg.sample.attr_binary.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      cfg.sample.attr_scores[j] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
      cfg.sample.attr_binary[j] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    cfg.reg.beta = DenseMatrix(m, k);
    for (double& b : cfg.reg.beta.data) {
      b = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.05, 3.0);
    }
    cfg.options.beta_on_positive = idx % 2 == 0;
    cfg.options.normalize_by_m = idx % 3 != 0;
    cfg.mode = idx % 7 == 6 ? ForwardMode::SceneOnly : ForwardMode::Joint;

    if (well_conditioned(cfg.params, cfg.sample, 100.0 * options.step)) return cfg;
  }
  throw Error(ErrorCategory::Numeric,
              "no well-conditioned draw for configuration " + std::to_string(idx));
}

// Flat-index attribution matching flatten()'s layout.
std::string group_of(std::size_t idx, const MasrParams& p, std::string& detail) {
  const std::size_t d = p.feature_dim, m = p.n_attributes, k = p.n_classes;
  std::size_t offset = k * (d + m) + k;
  if (idx < offset) return "scene_head";
  if (idx < offset + m * d) {
    detail = "branch " + std::to_string((idx - offset) / d);
    return "attribute_head";
  }
  offset += m * d;
  if (idx < offset + m) {
    detail = "branch " + std::to_string(idx - offset);
    return "attribute_head";
  }
  offset += m;
  const std::size_t per_layer = 2 * m * m + 2 * m;
  const std::size_t layer = (idx - offset) / per_layer;
  const std::size_t within = (idx - offset) % per_layer;
  detail = "layer " + std::to_string(layer);
  if (within < m * m) return "arl.score_weight";
  if (within < 2 * m * m) return "arl.pred_weight";
  if (within < 2 * m * m + m) return "arl.gate_bias";
  return "arl.bias";
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckOptions& options) {
  if (options.n_configs == 0 || options.tolerance <= 0.0 || options.step <= 0.0) {
    throw Error(ErrorCategory::Config, "gradcheck needs n_configs >= 1 and positive tolerance/step");
  }
  GradCheckResult result;
  result.n_configs = options.n_configs;
  for (const char* name : {"scene_head", "attribute_head", "arl.score_weight", "arl.pred_weight",
                           "arl.gate_bias", "arl.bias"}) {
    result.groups[name] = {};
  }

  for (std::size_t i = 0; i < options.n_configs; ++i) {
    const DrawnConfig cfg = draw(options, i);
    const DenseVector analytic =
        flatten(masr_backward(cfg.sample, cfg.params, cfg.reg, cfg.mode, cfg.options));
    auto f = [&cfg](const DenseVector& flat) {
      MasrParams q = cfg.params;
      unflatten(flat, q);
      return masr_loss(cfg.sample, q, cfg.reg, cfg.mode, cfg.options).total;
    };
    const DenseVector fd = finite_diff_gradient(f, flatten(cfg.params), options.step);

    for (std::size_t idx = 0; idx < analytic.size(); ++idx) {
      const double a = analytic[idx];
      const double b = fd[idx];
      const double rel = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
      std::string detail;
      GradCheckGroup& group = result.groups[group_of(idx, cfg.params, detail)];
      ++group.checked;
      if (rel > group.worst) {
        group.worst = rel;
        group.worst_at = "config " + std::to_string(i) + (detail.empty() ? "" : ", " + detail);
      }
      if (rel >= options.tolerance) ++group.failures;
    }
  }

  result.pass = true;
  for (const auto& [name, group] : result.groups) {
    if (group.failures > 0) result.pass = false;
  }
  return result;
}

std::string render_gradcheck(const GradCheckResult& result, const GradCheckOptions& options) {
  std::string text = "gradient check: " + std::to_string(result.n_configs) +
                     " configurations, tolerance " + format_double(options.tolerance) +
                     ", step " + format_double(options.step) + "\n";
  for (const auto& [name, group] : result.groups) {
    text += "  " + name + ": " + std::to_string(group.checked) + " coordinates, worst " +
            format_double(group.worst);
    if (!group.worst_at.empty()) text += " (" + group.worst_at + ")";
    if (group.failures > 0) text += ", " + std::to_string(group.failures) + " over tolerance";
    text += "\n";
  }
  text += result.pass ? "PASS\n" : "FAIL\n";
  return text;
}

}  // namespace masr
