#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pagkit/gap.hpp"

namespace pagkit::stats {

enum class Covariate { Pag, Age, Psa, VolumeMl, Psad, PiradsGe3 };

std::string_view to_string(Covariate c) noexcept;

/// Adjustment sets of the six reported PAG models.
enum class ModelId { I, II, III, IV, V, VI };

std::string_view to_string(ModelId m) noexcept;
std::optional<ModelId> parse_model_id(std::string_view s);

/// Covariates of a model in column order (intercept excluded).
std::vector<Covariate> model_covariates(ModelId m);

/// Human-readable adjustment list, e.g. "Age, volume and PSA".
std::string model_adjustment(ModelId m);

struct DesignMatrix {
  std::vector<std::string> columns;  // "intercept" first
  Eigen::MatrixXd x;
  Eigen::VectorXd y;  // 1 = csPC
};

DesignMatrix build_design(std::span<const gap::AnalysisRow> rows, std::span<const Covariate> covariates);
DesignMatrix build_design(std::span<const gap::AnalysisRow> rows, ModelId model);

struct LogisticOptions {
  int max_iter = 100;
  double score_tol = 1e-8;
  double step_tol = 1e-10;
  // Limit on the logit change per covariate SD and on the logit at the covariate means.
  double separation_bound = 30.0;
};

struct LogisticFit {
  std::vector<std::string> columns;
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;  // inverse observed information
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;
  Eigen::VectorXd score;

  Eigen::Index column_index(std::string_view name) const;
};

/// Newton-Raphson maximum likelihood with step halving.
LogisticFit fit_logistic(const DesignMatrix& design, const LogisticOptions& options = {});

struct OddsRatio {
  double odds_ratio = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double p_value = 1.0;
  double beta = 0.0;
  double se = 0.0;
};

/// Wald odds ratio per one-unit increase of `covariate`.
OddsRatio odds_ratio(const LogisticFit& fit, std::string_view covariate, double level = 0.95);

/// sigmoid(x . beta) per row.
std::vector<double> predicted_risk(const LogisticFit& fit, const DesignMatrix& design);

}  // namespace pagkit::stats
