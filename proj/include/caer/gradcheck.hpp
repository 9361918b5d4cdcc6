#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "caer/model.hpp"

namespace caer {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_err = 0.0;
  std::string worst_tensor;
};

namespace detail {

// Guarded relative error: an absolute floor keeps near-zero gradients from
// amplifying finite-difference truncation noise.
inline double rel_err(double a, double n) {
  const double denom = std::max({std::fabs(a), std::fabs(n), 1e-4});
  return std::fabs(a - n) / denom;
}

template <typename LossFn>
double central_difference(Tensor<double>& t, std::int64_t i, LossFn& loss, double h) {
  const double saved = t[i];
  t[i] = saved + h;
  const double lp = loss();
  t[i] = saved - h;
  const double lm = loss();
  t[i] = saved;
  return (lp - lm) / (2.0 * h);
}

template <typename LossFn>
GradCheckReport fd_check(ModelParams<double>& params, const ModelParams<double>& analytic,
                         LossFn loss, double step) {
  std::vector<Tensor<double>*> ps;
  std::vector<std::string> names;
  for_each_param(params, [&](const std::string& n, Tensor<double>& t, bool learnable) {
    if (learnable) {
      ps.push_back(&t);
      names.push_back(n);
    }
  });
  std::vector<const Tensor<double>*> gs;
  for_each_param(analytic, [&](const std::string&, const Tensor<double>& t, bool learnable) {
    if (learnable) gs.push_back(&t);
  });
  GradCheckReport report;
  for (std::size_t ti = 0; ti < ps.size(); ++ti) {
    Tensor<double>& t = *ps[ti];
    const Tensor<double>& g = *gs[ti];
    double worst = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      double err = rel_err(g[i], central_difference(t, i, loss, step));
      // A perturbation of +-step can cross ReLU or max-pool kinks, where
      // central differences misreport an exact gradient. Suspicious elements
      // are re-measured at smaller steps; a wrong gradient fails at every
      // step, a kink crossing does not.
      for (const double h : {step / 100.0, step / 1000.0}) {
        if (err < 1e-4) break;
        err = std::min(err, rel_err(g[i], central_difference(t, i, loss, h)));
      }
      worst = std::max(worst, err);
    }
    report.tensors.push_back({names[ti], worst});
    if (worst > report.max_rel_err) {
      report.max_rel_err = worst;
      report.worst_tensor = names[ti];
    }
  }
  return report;
}

}  // namespace detail

/// Checks every parameter gradient of the full model (both streams, attention
/// module, gates, classifier) against 64-bit central finite differences with
/// step 1e-3 on a shrunken architecture.
inline GradCheckReport gradient_check(const ModelConfig& cfg, std::uint32_t seed) {
  ModelConfig tiny = cfg;
  tiny.dropout_rate = 0.0;  // finite differences need a deterministic forward
  ModelParams<double> params = init_params<double>(tiny, seed);
  const std::int64_t n = 2;
  std::mt19937 rng(seed + 1);
  Tensor<double> v_f(tiny.face_input(n)), v_c(tiny.context_input(n));
  fill_uniform(v_f, rng, 0.0, 1.0);
  fill_uniform(v_c, rng, 0.0, 1.0);
  std::vector<int> labels;
  for (std::int64_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % tiny.K));

  std::mt19937 fwd_rng(0);
  auto out = model_forward(v_f, v_c, params, Mode::kTrain, fwd_rng);
  auto ce = softmax_cross_entropy(out.logits, labels);
  ModelParams<double> analytic = model_backward(out, params, ce.d_logits);

  auto loss = [&]() {
    std::mt19937 r(0);
    auto o = model_forward(v_f, v_c, params, Mode::kTrain, r);
    return static_cast<double>(softmax_cross_entropy(o.logits, labels).loss);
  };
  return detail::fd_check(params, analytic, loss, 1e-3);
}

/// The fusion gates and classifier in isolation, against the same oracle.
inline GradCheckReport gradient_check_fusion(std::uint32_t seed) {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  cfg.dropout_rate = 0.0;
  ModelParams<double> params = init_params<double>(cfg, seed);
  const std::int64_t n = 3;
  std::mt19937 rng(seed + 7);
  Tensor<double> x_f(Shape{n, cfg.feature_dim()}), x_c(Shape{n, cfg.feature_dim()});
  fill_normal(x_f, rng, 1.0);
  fill_normal(x_c, rng, 1.0);
  std::vector<int> labels;
  for (std::int64_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % cfg.K));

  std::mt19937 fwd_rng(0);
  auto acts = fuse_forward(x_f, x_c, params.fusion, cfg, Mode::kTrain, fwd_rng);
  auto ce = softmax_cross_entropy(acts.logits, labels);
  ModelParams<double> analytic = make_params<double>(cfg);
  fuse_backward(acts, params.fusion, cfg, ce.d_logits, analytic.fusion);

  auto loss = [&]() {
    std::mt19937 r(0);
    auto a = fuse_forward(x_f, x_c, params.fusion, cfg, Mode::kTrain, r);
    return static_cast<double>(softmax_cross_entropy(a.logits, labels).loss);
  };
  // The sweep covers every tensor; only the fusion ones feed this loss, so
  // the report is filtered down to them.
  auto report = detail::fd_check(params, analytic, loss, 1e-3);
  GradCheckReport filtered;
  for (auto& e : report.tensors)
    if (e.name.rfind("fusion.", 0) == 0) {
      filtered.tensors.push_back(e);
      if (e.max_rel_err > filtered.max_rel_err) {
        filtered.max_rel_err = e.max_rel_err;
        filtered.worst_tensor = e.name;
      }
    }
  return filtered;
}

inline std::string format_gradcheck_report(const GradCheckReport& report) {
  std::ostringstream os;
  for (const auto& e : report.tensors)
    os << std::left << std::setw(32) << e.name << " max rel err " << std::scientific
       << std::setprecision(3) << e.max_rel_err << '\n';
  os << "overall max rel err " << std::scientific << std::setprecision(3) << report.max_rel_err
     << " (" << report.worst_tensor << ")\n";
  return os.str();
}

}  // namespace caer
