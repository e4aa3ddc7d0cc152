#include "pagkit/stats/logistic.hpp"

#include <cmath>

#include "pagkit/error.hpp"
#include "pagkit/stats/descriptive.hpp"

namespace pagkit::stats {

std::string_view to_string(Covariate c) noexcept {
  switch (c) {
    case Covariate::Pag: return "pag";
    case Covariate::Age: return "age";
    case Covariate::Psa: return "psa";
    case Covariate::VolumeMl: return "volume_ml";
    case Covariate::Psad: return "psad";
    case Covariate::PiradsGe3: return "pirads_ge3";
  }
  return "?";
}

std::string_view to_string(ModelId m) noexcept {
  switch (m) {
    case ModelId::I: return "I";
    case ModelId::II: return "II";
    case ModelId::III: return "III";
    case ModelId::IV: return "IV";
    case ModelId::V: return "V";
    case ModelId::VI: return "VI";
  }
  return "?";
}

std::optional<ModelId> parse_model_id(std::string_view s) {
  for (auto m : {ModelId::I, ModelId::II, ModelId::III, ModelId::IV, ModelId::V, ModelId::VI}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

std::vector<Covariate> model_covariates(ModelId m) {
  using C = Covariate;
  switch (m) {
    case ModelId::I: return {C::Pag};
    case ModelId::II: return {C::Pag, C::Age, C::VolumeMl, C::Psa};
    case ModelId::III: return {C::Pag, C::Age, C::VolumeMl, C::Psa, C::PiradsGe3};
    case ModelId::IV: return {C::Pag, C::Age, C::Psad};
    case ModelId::V: return {C::Pag, C::Age, C::Psad, C::PiradsGe3};
    case ModelId::VI: return {C::Pag, C::Age, C::PiradsGe3};
  }
  return {};
}

std::string model_adjustment(ModelId m) {
  switch (m) {
    case ModelId::I: return "-";
    case ModelId::II: return "Age, volume and PSA";
    case ModelId::III: return "Age, volume, PSA and PI-RADS";
    case ModelId::IV: return "Age and PSAd";
    case ModelId::V: return "Age, PSAd and PI-RADS";
    case ModelId::VI: return "Age and PI-RADS";
  }
  return "";
}

namespace {

std::optional<double> covariate_value(const gap::AnalysisRow& r, Covariate c) {
  switch (c) {
    case Covariate::Pag: return r.pag;
    case Covariate::Age: return r.chronological_age;
    case Covariate::Psa: return r.psa;
    case Covariate::VolumeMl: return r.volume_ml;
    case Covariate::Psad: return r.psad;
    case Covariate::PiradsGe3:
      if (!r.pirads) return std::nullopt;
      return *r.pirads >= 3 ? 1.0 : 0.0;
  }
  return std::nullopt;
}

double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::fabs(eta))); }

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
};

double log_likelihood(const DesignMatrix& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = d.x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += d.y[i] * eta[i] - softplus(eta[i]);
  return ll;
}

Evaluation evaluate(const DesignMatrix& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = d.x * beta;
  Eigen::VectorXd p(eta.size());
  Eigen::VectorXd w(eta.size());
  Evaluation e;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    p[i] = sigmoid(eta[i]);
    w[i] = p[i] * sigmoid(-eta[i]);
    e.loglik += d.y[i] * eta[i] - softplus(eta[i]);
  }
  e.score = d.x.transpose() * (d.y - p);
  e.info = d.x.transpose() * w.asDiagonal() * d.x;
  return e;
}

Eigen::MatrixXd solve_information(const Eigen::MatrixXd& info, const Eigen::MatrixXd& rhs) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
    fail(ErrorCode::Singular, "information matrix is not invertible");
  }
  return ldlt.solve(rhs);
}

struct ColumnScale {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

ColumnScale column_scale(const DesignMatrix& d) {
  ColumnScale s;
  const auto n = static_cast<double>(d.x.rows());
  s.mean = d.x.colwise().mean().transpose();
  s.sd = ((d.x.rowwise() - s.mean.transpose()).colwise().squaredNorm().transpose() / n).cwiseSqrt();
  return s;
}

// Logit change per covariate SD; the intercept slot holds the logit at the covariate means.
Eigen::VectorXd scaled_effects(const Eigen::VectorXd& beta, const ColumnScale& s) {
  Eigen::VectorXd e = (beta.array() * s.sd.array()).abs().matrix();
  e[0] = std::fabs(beta.dot(s.mean));
  return e;
}

}  // namespace

DesignMatrix build_design(std::span<const gap::AnalysisRow> rows, std::span<const Covariate> covariates) {
  DesignMatrix d;
  d.columns.emplace_back("intercept");
  for (auto c : covariates) {
    std::string name(to_string(c));
    for (const auto& existing : d.columns) {
      if (existing == name) fail(ErrorCode::InvalidArgument, "duplicate design column " + name);
    }
    d.columns.push_back(std::move(name));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(d.columns.size());
  d.x.resize(n, p);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    d.x(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < p; ++j) {
      const auto v = covariate_value(r, covariates[static_cast<std::size_t>(j - 1)]);
      if (!v) {
        fail(ErrorCode::MissingCovariate, "patient " + r.patient_id + " lacks " + d.columns[static_cast<std::size_t>(j)]);
      }
      d.x(i, j) = *v;
    }
    d.y[i] = r.label == cohort::Label::CsPC ? 1.0 : 0.0;
  }
  return d;
}

DesignMatrix build_design(std::span<const gap::AnalysisRow> rows, ModelId model) {
  const auto covariates = model_covariates(model);
  return build_design(rows, covariates);
}

Eigen::Index LogisticFit::column_index(std::string_view name) const {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] == name) return static_cast<Eigen::Index>(j);
  }
  fail(ErrorCode::ColumnMismatch, "fit has no column " + std::string(name));
}

LogisticFit fit_logistic(const DesignMatrix& design, const LogisticOptions& options) {
  const Eigen::Index n = design.x.rows();
  const Eigen::Index p = design.x.cols();
  if (n <= p) fail(ErrorCode::Singular, "need more rows than columns");
  const double cases = design.y.sum();
  if (cases <= 0.0 || cases >= static_cast<double>(n)) fail(ErrorCode::OneClassOutcome, "outcome has a single class");

  const ColumnScale scale = column_scale(design);
  LogisticFit fit;
  fit.columns = design.columns;
  fit.beta = Eigen::VectorXd::Zero(p);
  Evaluation ev = evaluate(design, fit.beta);

  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (iter == 0 && ev.score.cwiseAbs().maxCoeff() < options.score_tol) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd delta = solve_information(ev.info, ev.score);
    double t = 1.0;
    Eigen::VectorXd candidate = fit.beta + delta;
    double ll = log_likelihood(design, candidate);
    for (int halvings = 0; halvings < 40 && ll < ev.loglik - 1e-12 * (1.0 + std::fabs(ev.loglik)); ++halvings) {
      t *= 0.5;
      candidate = fit.beta + t * delta;
      ll = log_likelihood(design, candidate);
    }
    const double step = (t * delta).cwiseAbs().maxCoeff();
    fit.beta = candidate;
    fit.n_iter = iter + 1;
    ev = evaluate(design, fit.beta);
    // A small score alone is not convergence: under separation the score
    // vanishes while Newton steps stay near one logit.
    if (step < options.step_tol || (step < 1e-6 && ev.score.cwiseAbs().maxCoeff() < options.score_tol)) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd effect = scaled_effects(fit.beta, scale);
    if (Eigen::Index j = 0; effect.maxCoeff(&j) > options.separation_bound) {
      fail(ErrorCode::QuasiSeparation, "coefficient '" + design.columns[static_cast<std::size_t>(j)] +
                                           "' diverges (effect " + std::to_string(effect[j]) + " logits)");
    }
  }

  fit.loglik = ev.loglik;
  fit.score = ev.score;
  fit.cov = solve_information(ev.info, Eigen::MatrixXd::Identity(p, p));
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  return fit;
}

OddsRatio odds_ratio(const LogisticFit& fit, std::string_view covariate, double level) {
  if (!fit.converged) fail(ErrorCode::NotConverged, "odds ratio from a non-converged fit");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidArgument, "confidence level must be in (0, 1)");
  const Eigen::Index j = fit.column_index(covariate);
  OddsRatio out;
  out.beta = fit.beta[j];
  out.se = std::sqrt(fit.cov(j, j));
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  out.odds_ratio = std::exp(out.beta);
  out.ci_low = std::exp(out.beta - z * out.se);
  out.ci_high = std::exp(out.beta + z * out.se);
  out.p_value = out.se > 0.0 ? std::erfc(std::fabs(out.beta / out.se) / std::sqrt(2.0)) : (out.beta == 0.0 ? 1.0 : 0.0);
  return out;
}

std::vector<double> predicted_risk(const LogisticFit& fit, const DesignMatrix& design) {
  if (!fit.converged) fail(ErrorCode::NotConverged, "risk from a non-converged fit");
  if (design.columns != fit.columns) fail(ErrorCode::ColumnMismatch, "design columns differ from the fitted model");
  const Eigen::VectorXd eta = design.x * fit.beta;
  std::vector<double> risk(static_cast<std::size_t>(eta.size()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) risk[static_cast<std::size_t>(i)] = sigmoid(eta[i]);
  return risk;
}

}  // namespace pagkit::stats
