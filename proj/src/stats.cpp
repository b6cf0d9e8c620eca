#include "brainage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "brainage/error.hpp"

namespace brainage::stats {

Design Design::with_intercept(
    std::span<const std::pair<std::string, std::span<const double>>> columns) {
  Design d;
  d.rows = columns.empty() ? 0 : columns.front().second.size();
  d.cols = columns.size() + 1;
  d.names.push_back("(Intercept)");
  for (const auto& [name, col] : columns) {
    if (col.size() != d.rows) throw Error(ErrorCode::ShapeMismatch, "column '" + name + "' length");
    d.names.push_back(name);
  }
  d.data.resize(d.rows * d.cols);
  for (std::size_t r = 0; r < d.rows; ++r) {
    d.data[r * d.cols] = 1.0;
    for (std::size_t c = 0; c < columns.size(); ++c) d.data[r * d.cols + c + 1] = columns[c].second[r];
  }
  return d;
}

namespace {

// In-place Cholesky A = L L^T (lower triangle of `a`).
void cholesky(std::vector<double>& a, std::size_t p, const std::vector<std::string>& names) {
  for (std::size_t j = 0; j < p; ++j) {
    const double diag = a[j * p + j];
    double d = diag;
    for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    if (!(d > kRankTolerance * diag)) {
      throw Error(ErrorCode::RankDeficient,
                  "design column '" + names[j] + "' is collinear with earlier columns");
    }
    const double l = std::sqrt(d);
    a[j * p + j] = l;
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = s / l;
    }
  }
}

// Solves L L^T x = b in place.
void cholesky_solve(const std::vector<double>& l, std::size_t p, std::vector<double>& b) {
  for (std::size_t i = 0; i < p; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * p + k] * b[k];
    b[i] = s / l[i * p + i];
  }
  for (std::size_t i = p; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < p; ++k) s -= l[k * p + i] * b[k];
    b[i] = s / l[i * p + i];
  }
}

}  // namespace

OlsFit ols_fit(const Design& x, std::span<const double> y) {
  const std::size_t n = x.rows, p = x.cols;
  if (y.size() != n) throw Error(ErrorCode::ShapeMismatch, "y length does not match design rows");
  if (n <= p) {
    throw Error(ErrorCode::TooFewRows,
                std::to_string(n) + " rows cannot support " + std::to_string(p) + " regressors");
  }

  std::vector<double> xtx(p * p, 0.0), xty(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data.data() + r * p;
    for (std::size_t i = 0; i < p; ++i) {
      xty[i] += row[i] * y[r];
      for (std::size_t j = 0; j <= i; ++j) xtx[i * p + j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) xtx[i * p + j] = xtx[j * p + i];
  }

  std::vector<double> l = xtx;
  cholesky(l, p, x.names);

  OlsFit fit;
  fit.names = x.names;
  fit.n = n;
  fit.p = p;
  fit.coefficients = xty;
  cholesky_solve(l, p, fit.coefficients);

  fit.xtx_inv.assign(p * p, 0.0);
  for (std::size_t c = 0; c < p; ++c) {
    std::vector<double> e(p, 0.0);
    e[c] = 1.0;
    cholesky_solve(l, p, e);
    for (std::size_t r = 0; r < p; ++r) fit.xtx_inv[r * p + c] = e[r];
  }

  fit.y.assign(y.begin(), y.end());
  fit.fitted.resize(n);
  fit.residuals.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double yhat = 0.0;
    for (std::size_t c = 0; c < p; ++c) yhat += x.at(r, c) * fit.coefficients[c];
    fit.fitted[r] = yhat;
    fit.residuals[r] = y[r] - yhat;
    fit.rss += fit.residuals[r] * fit.residuals[r];
  }
  fit.sigma2 = fit.rss / static_cast<double>(n - p);
  return fit;
}

double mean_absolute_error(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size() || pred.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and actual lengths differ or are empty");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - actual[i]);
  return acc / static_cast<double>(pred.size());
}

Metrics metrics(std::span<const double> pred, std::span<const double> actual) {
  Metrics m;
  m.mae = mean_absolute_error(pred, actual);
  const double n = static_cast<double>(pred.size());
  const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
  double sse = 0.0, tss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sse += (pred[i] - actual[i]) * (pred[i] - actual[i]);
    tss += (actual[i] - mean) * (actual[i] - mean);
  }
  m.mse = sse / n;
  if (!(tss > 0.0)) throw Error(ErrorCode::ZeroVariance, "actual values have zero variance");
  m.r2 = 1.0 - sse / tss;
  return m;
}

// ---------------------------------------------------------------------------
// Distributions

namespace {

double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 1000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0) || !(x >= 0.0 && x <= 1.0)) {
    throw Error(ErrorCode::DomainError, "incomplete beta needs x in [0,1] and a, b > 0");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double f_upper_tail(double f, double d1, double d2) {
  if (!(f > 0.0)) return 1.0;
  if (std::isinf(f)) return 0.0;
  return regularized_incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0);
}

double t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
}

AnovaResult anova_nested(const OlsFit& reduced, const OlsFit& full) {
  const bool subset = std::all_of(reduced.names.begin(), reduced.names.end(), [&](const auto& nm) {
    return std::find(full.names.begin(), full.names.end(), nm) != full.names.end();
  });
  if (!subset || reduced.p >= full.p || reduced.n != full.n || reduced.y != full.y) {
    throw Error(ErrorCode::NotNested, "reduced model is not nested in the full model");
  }
  AnovaResult r;
  r.df_num = full.p - reduced.p;
  r.df_den = full.n - full.p;
  // Differences at rounding level count as no gain.
  const double gain = std::max(reduced.rss - full.rss, 0.0);
  if (gain <= 1e-12 * reduced.rss) {
    r.f = 0.0;
    r.p_value = 1.0;
    return r;
  }
  if (!(full.rss > 0.0)) {
    r.f = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    return r;
  }
  r.f = (gain / static_cast<double>(r.df_num)) / (full.rss / static_cast<double>(r.df_den));
  r.p_value = f_upper_tail(r.f, static_cast<double>(r.df_num), static_cast<double>(r.df_den));
  return r;
}

CoefficientTable coefficient_inference(const OlsFit& fit) {
  CoefficientTable table;
  const double df = static_cast<double>(fit.n - fit.p);
  double ss_y = 0.0;
  for (double v : fit.y) ss_y += v * v;
  table.degenerate = !(fit.rss > 1e-20 * ss_y);
  for (std::size_t j = 0; j < fit.p; ++j) {
    CoefficientRow row;
    row.name = fit.names[j];
    row.estimate = fit.coefficients[j];
    if (table.degenerate) {
      row.std_error = 0.0;
      row.t = row.estimate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), row.estimate);
      row.p_value = 0.0;
    } else {
      row.std_error = std::sqrt(fit.sigma2 * fit.xtx_inv[j * fit.p + j]);
      row.t = row.estimate / row.std_error;
      row.p_value = t_two_sided(row.t, df);
    }
    table.rows.push_back(row);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Prediction tables

std::string table_to_csv(const PredictionTable& t) {
  std::ostringstream out;
  out << "record_id,actual_age,t1w_pred,aicbv_pred,sex,project,role\n";
  char buf[128];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r.actual_age, r.t1w_pred, r.aicbv_pred);
    out << r.record_id << ',' << buf << ',' << static_cast<int>(r.sex) << ',' << r.project << ','
        << to_string(r.role) << '\n';
  }
  return out.str();
}

PredictionTable table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("record_id,", 0) != 0) {
    throw Error(ErrorCode::InvalidRecord, "prediction table lacks its header");
  }
  PredictionTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error(ErrorCode::InvalidRecord, "prediction row needs 7 fields: " + line);
    PredictionRow r;
    r.record_id = f[0];
    try {
      r.actual_age = std::stod(f[1]);
      r.t1w_pred = std::stod(f[2]);
      r.aicbv_pred = std::stod(f[3]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidRecord, "non-numeric prediction field: " + line);
    }
    if (!std::isfinite(r.t1w_pred) || !std::isfinite(r.aicbv_pred)) {
      throw Error(ErrorCode::InvalidRecord, "non-finite prediction for " + r.record_id);
    }
    if (f[4] == "0") {
      r.sex = Sex::Female;
    } else if (f[4] == "1") {
      r.sex = Sex::Male;
    } else {
      throw Error(ErrorCode::BadSexCode, "sex must be 0 or 1 in " + line);
    }
    r.project = f[5];
    r.role = parse_role(f[6]);
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Ensembles

const ModelReport* EnsembleReport::model(std::string_view name) const {
  for (const auto& m : models) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

namespace {

struct Columns {
  std::vector<double> age, t1w, aicbv, sex;
};

Columns gather(const PredictionTable& table, std::span<const std::size_t> rows) {
  Columns c;
  for (std::size_t i : rows) {
    const auto& r = table.rows[i];
    c.age.push_back(r.actual_age);
    c.t1w.push_back(r.t1w_pred);
    c.aicbv.push_back(r.aicbv_pred);
    c.sex.push_back(static_cast<double>(static_cast<int>(r.sex)));
  }
  return c;
}

Design design_for(std::string_view model, const Columns& c) {
  using Col = std::pair<std::string, std::span<const double>>;
  std::vector<Col> cols;
  if (model.find('T') != std::string_view::npos) cols.emplace_back("t1w_pred", c.t1w);
  if (model.find('A') != std::string_view::npos) cols.emplace_back("aicbv_pred", c.aicbv);
  if (model == "TAS") cols.emplace_back("sex", c.sex);
  return Design::with_intercept(cols);
}

ModelReport fit_model(std::string name, const Columns& fit_cols, const Columns& test_cols) {
  ModelReport m;
  m.name = std::move(name);
  m.fit = ols_fit(design_for(m.name, fit_cols), fit_cols.age);
  m.inference = coefficient_inference(m.fit);
  m.fit_metrics = metrics(m.fit.fitted, fit_cols.age);
  const Design test = design_for(m.name, test_cols);
  for (std::size_t r = 0; r < test.rows; ++r) {
    double yhat = 0.0;
    for (std::size_t c = 0; c < test.cols; ++c) yhat += test.at(r, c) * m.fit.coefficients[c];
    m.test_predictions.push_back(yhat);
  }
  m.test_metrics = metrics(m.test_predictions, test_cols.age);
  return m;
}

}  // namespace

EnsembleReport build_ensembles(const PredictionTable& table) {
  std::vector<std::size_t> fit_rows;
  EnsembleReport report;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    (table.rows[i].role == Role::Test ? report.test_rows : fit_rows).push_back(i);
  }
  if (fit_rows.empty() || report.test_rows.empty()) {
    throw Error(ErrorCode::EmptySplit, "prediction table needs both fitting and test rows");
  }
  report.n_fit = fit_rows.size();
  const Columns fit_cols = gather(table, fit_rows);
  const Columns test_cols = gather(table, report.test_rows);

  report.models.push_back(fit_model("T", fit_cols, test_cols));
  std::optional<ModelReport> ta;
  try {
    ta = fit_model("TA", fit_cols, test_cols);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::RankDeficient) throw;
    report.degraded = true;
    report.note = "T1w and AICBV predictions are collinear; only the T model is reported";
    return report;
  }
  report.models.push_back(fit_model("A", fit_cols, test_cols));
  report.models.push_back(std::move(*ta));
  report.models.push_back(fit_model("TAS", fit_cols, test_cols));

  const auto& t = report.models[0].fit;
  const auto& a = report.models[1].fit;
  const auto& ta_fit = report.models[2].fit;
  const auto& tas = report.models[3].fit;
  report.comparisons.push_back({"T vs TA", anova_nested(t, ta_fit)});
  report.comparisons.push_back({"A vs TA", anova_nested(a, ta_fit)});
  report.comparisons.push_back({"TA vs TAS", anova_nested(ta_fit, tas)});
  return report;
}

std::vector<AgeGroupRow> report_by_age_group(std::span<const double> actual,
                                             std::span<const double> predicted, double width) {
  if (actual.size() != predicted.size()) throw Error(ErrorCode::ShapeMismatch, "length mismatch");
  if (!(width > 0.0)) throw Error(ErrorCode::DomainError, "bin width must be positive");
  std::map<long long, std::pair<std::size_t, double>> bins;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const auto k = static_cast<long long>(std::floor(actual[i] / width));
    auto& [n, sum] = bins[k];
    ++n;
    sum += std::abs(predicted[i] - actual[i]);
  }
  std::vector<AgeGroupRow> out;
  for (const auto& [k, v] : bins) {
    out.push_back({static_cast<double>(k) * width, static_cast<double>(k + 1) * width, v.first,
                   v.second / static_cast<double>(v.first)});
  }
  return out;
}

std::vector<ProjectRow> report_by_project(std::span<const std::string> projects,
                                          std::span<const double> actual,
                                          std::span<const double> predicted) {
  if (actual.size() != predicted.size() || projects.size() != actual.size()) {
    throw Error(ErrorCode::ShapeMismatch, "length mismatch");
  }
  std::map<std::string, std::pair<std::size_t, double>> groups;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    auto& [n, sum] = groups[projects[i]];
    ++n;
    sum += std::abs(predicted[i] - actual[i]);
  }
  std::vector<ProjectRow> out;
  for (const auto& [name, v] : groups) {
    out.push_back({name, v.first, v.second / static_cast<double>(v.first)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report emission

namespace {

struct TestView {
  std::vector<double> actual;
  std::vector<std::string> projects;
};

TestView test_view(const EnsembleReport& report, const PredictionTable& table) {
  TestView v;
  for (std::size_t i : report.test_rows) {
    v.actual.push_back(table.rows[i].actual_age);
    v.projects.push_back(table.rows[i].project);
  }
  return v;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string format_p(double p) {
  if (p < 2.2e-16) return "< 2.2e-16";
  return fmt("%.3g", p);
}

}  // namespace

std::string report_to_json(const EnsembleReport& report, const PredictionTable& table) {
  using nlohmann::json;
  const TestView view = test_view(report, table);
  json doc;
  doc["n_fit"] = report.n_fit;
  doc["n_test"] = report.test_rows.size();
  doc["degraded"] = report.degraded;
  if (!report.note.empty()) doc["note"] = report.note;

  json models = json::array();
  for (const auto& m : report.models) {
    json coeffs = json::array();
    for (const auto& c : m.inference.rows) {
      coeffs.push_back({{"name", c.name},
                        {"estimate", c.estimate},
                        {"std_error", c.std_error},
                        {"t", c.t},
                        {"p_value", c.p_value}});
    }
    json by_age = json::array();
    for (const auto& r : report_by_age_group(view.actual, m.test_predictions)) {
      by_age.push_back({{"lo", r.lo}, {"hi", r.hi}, {"n", r.n}, {"mae", r.mae}});
    }
    json by_project = json::array();
    for (const auto& r : report_by_project(view.projects, view.actual, m.test_predictions)) {
      by_project.push_back({{"project", r.project}, {"n", r.n}, {"mae", r.mae}});
    }
    models.push_back({{"name", m.name},
                      {"test", {{"mae", m.test_metrics.mae}, {"mse", m.test_metrics.mse}, {"r2", m.test_metrics.r2}}},
                      {"fit", {{"mae", m.fit_metrics.mae}, {"mse", m.fit_metrics.mse}, {"r2", m.fit_metrics.r2}}},
                      {"rss", m.fit.rss},
                      {"coefficients", coeffs},
                      {"degenerate_fit", m.inference.degenerate},
                      {"by_age_group", by_age},
                      {"by_project", by_project}});
  }
  doc["models"] = models;

  json comparisons = json::array();
  for (const auto& c : report.comparisons) {
    comparisons.push_back({{"comparison", c.label},
                           {"f", c.result.f},
                           {"df_num", c.result.df_num},
                           {"df_den", c.result.df_den},
                           {"p_value", c.result.p_value}});
  }
  doc["anova"] = comparisons;
  return doc.dump(2) + "\n";
}

std::string report_to_text(const EnsembleReport& report) {
  std::map<std::string, std::string> comparison_for;
  for (const auto& c : report.comparisons) {
    const auto target = c.label.substr(c.label.rfind(' ') + 1);
    auto& cell = comparison_for[target];
    if (!cell.empty()) cell += "; ";
    cell += c.label + ": " + format_p(c.result.p_value);
  }
  const std::map<std::string, std::string> labels{{"T", "T1w only (T-model)"},
                                                  {"A", "AICBV only (A-model)"},
                                                  {"TA", "T1w + AICBV (TA-model)"},
                                                  {"TAS", "T1w + AICBV + sex (TAS-model)"}};
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %8s %9s %7s  %s\n", "Model", "MAE", "MSE", "R^2",
                "ANOVA p-value");
  out << line << std::string(80, '-') << '\n';
  for (const auto& m : report.models) {
    const auto it = comparison_for.find(m.name);
    std::snprintf(line, sizeof line, "%-32s %8.2f %9.2f %7.3f  %s\n", labels.at(m.name).c_str(),
                  m.test_metrics.mae, m.test_metrics.mse, m.test_metrics.r2,
                  it == comparison_for.end() ? "-" : it->second.c_str());
    out << line;
  }
  if (const auto* tas = report.model("TAS")) {
    for (const auto& c : tas->inference.rows) {
      if (c.name == "sex") {
        out << "\nTAS sex coefficient: " << fmt("%.3f", c.estimate) << " (p = " << format_p(c.p_value)
            << "; sex coded 0 = female, 1 = male)\n";
      }
    }
  }
  if (report.degraded) out << "\nNOTE: " << report.note << '\n';
  out << "\nn_fit = " << report.n_fit << ", n_test = " << report.test_rows.size() << '\n';
  return out.str();
}

std::string age_groups_to_csv(const EnsembleReport& report, const PredictionTable& table) {
  const TestView view = test_view(report, table);
  std::ostringstream out;
  out << "model,age_lo,age_hi,n,mae\n";
  for (const auto& m : report.models) {
    for (const auto& r : report_by_age_group(view.actual, m.test_predictions)) {
      out << m.name << ',' << fmt("%g", r.lo) << ',' << fmt("%g", r.hi) << ',' << r.n << ','
          << fmt("%.17g", r.mae) << '\n';
    }
  }
  return out.str();
}

std::string projects_to_csv(const EnsembleReport& report, const PredictionTable& table) {
  const TestView view = test_view(report, table);
  std::ostringstream out;
  out << "model,project,n,mae\n";
  for (const auto& m : report.models) {
    for (const auto& r : report_by_project(view.projects, view.actual, m.test_predictions)) {
      out << m.name << ',' << r.project << ',' << r.n << ',' << fmt("%.17g", r.mae) << '\n';
    }
  }
  return out.str();
}

}  // namespace brainage::stats
