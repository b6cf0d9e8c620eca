#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brainage/dataset.hpp"
#include "brainage/splitter.hpp"

namespace brainage::stats {

/// Row-major design matrix with named columns; column 0 is usually the
/// intercept.
struct Design {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<std::string> names;

  double at(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

  /// Intercept column followed by the given named regressors.
  static Design with_intercept(std::span<const std::pair<std::string, std::span<const double>>> columns);
};

struct OlsFit {
  std::vector<std::string> names;
  std::vector<double> coefficients;  // intercept first
  std::vector<double> y;
  std::vector<double> fitted;
  std::vector<double> residuals;
  std::vector<double> xtx_inv;  // p x p, row-major
  double rss = 0.0;
  double sigma2 = 0.0;
  std::size_t n = 0;
  std::size_t p = 0;
};

/// Pivot threshold (relative to the column's diagonal) below which XtX is
/// declared singular.
inline constexpr double kRankTolerance = 1e-10;

/// Least squares via Cholesky of the normal equations. Throws TooFewRows
/// unless n > p and RankDeficient when a pivot collapses.
OlsFit ols_fit(const Design& x, std::span<const double> y);

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
};

/// Throws ZeroVariance when all actual values are equal.
Metrics metrics(std::span<const double> pred, std::span<const double> actual);
double mean_absolute_error(std::span<const double> pred, std::span<const double> actual);

/// I_x(a, b) by Lentz's continued fraction with a log-gamma prefactor.
double regularized_incomplete_beta(double x, double a, double b);

/// Upper tail P(F > f) of an F(d1, d2) variable.
double f_upper_tail(double f, double d1, double d2);
/// Two-sided Student-t p value.
double t_two_sided(double t, double df);

struct AnovaResult {
  double f = 0.0;
  std::size_t df_num = 0;
  std::size_t df_den = 0;
  double p_value = 1.0;
};

/// Nested-model F test. Throws NotNested unless the reduced model's
/// regressors are a subset of the full model's and both fit the same y.
AnovaResult anova_nested(const OlsFit& reduced, const OlsFit& full);

struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double t = 0.0;
  double p_value = 1.0;
};

struct CoefficientTable {
  std::vector<CoefficientRow> rows;
  bool degenerate = false;  // residual variance is zero; p values reported as 0
};

CoefficientTable coefficient_inference(const OlsFit& fit);

// ---------------------------------------------------------------------------
// Ensembles

struct PredictionRow {
  std::string record_id;
  double actual_age = 0.0;
  double t1w_pred = 0.0;
  double aicbv_pred = 0.0;
  Sex sex = Sex::Female;
  std::string project;
  Role role = Role::Train;

  bool operator==(const PredictionRow&) const = default;
};

struct PredictionTable {
  std::vector<PredictionRow> rows;
};

/// Columns: record_id, actual_age, t1w_pred, aicbv_pred, sex (0/1), project, role.
std::string table_to_csv(const PredictionTable& t);
PredictionTable table_from_csv(const std::string& text);

struct ModelReport {
  std::string name;  // T, A, TA, TAS
  OlsFit fit;
  CoefficientTable inference;
  Metrics fit_metrics;
  Metrics test_metrics;
  std::vector<double> test_predictions;
};

struct Comparison {
  std::string label;  // e.g. "T vs TA"
  AnovaResult result;
};

struct EnsembleReport {
  std::vector<ModelReport> models;
  std::vector<Comparison> comparisons;
  std::vector<std::size_t> test_rows;  // indices into the table
  std::size_t n_fit = 0;
  bool degraded = false;
  std::string note;

  const ModelReport* model(std::string_view name) const;
};

/// Fits T, A, TA and TAS on train + validation rows, evaluates on test rows
/// and runs T vs TA, A vs TA and TA vs TAS. If the two modality predictions
/// are collinear only the T model is reported and the report is flagged.
EnsembleReport build_ensembles(const PredictionTable& table);

struct AgeGroupRow {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
  double mae = 0.0;
};

/// Bins [k * width, (k + 1) * width); empty bins are omitted.
std::vector<AgeGroupRow> report_by_age_group(std::span<const double> actual,
                                             std::span<const double> predicted,
                                             double width = 5.0);

struct ProjectRow {
  std::string project;
  std::size_t n = 0;
  double mae = 0.0;
};

std::vector<ProjectRow> report_by_project(std::span<const std::string> projects,
                                          std::span<const double> actual,
                                          std::span<const double> predicted);

/// Machine-readable report: per-model metrics, coefficients, comparisons and
/// per-age-group / per-project breakdowns on the test rows.
std::string report_to_json(const EnsembleReport& report, const PredictionTable& table);
/// Table-1 style text: model, MAE, MSE, R^2, comparison p values.
std::string report_to_text(const EnsembleReport& report);
std::string age_groups_to_csv(const EnsembleReport& report, const PredictionTable& table);
std::string projects_to_csv(const EnsembleReport& report, const PredictionTable& table);

}  // namespace brainage::stats
