#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "brainage/error.hpp"
#include "brainage/stats.hpp"
#include "support/oracles.hpp"

using namespace brainage;
using namespace brainage::stats;

namespace {

using Col = std::pair<std::string, std::span<const double>>;

Design simple_design(const std::vector<double>& x) {
  const std::vector<Col> cols{{"x", x}};
  return Design::with_intercept(cols);
}

Design intercept_only(std::size_t n) {
  Design d;
  d.rows = n;
  d.cols = 1;
  d.names = {"(Intercept)"};
  d.data.assign(n, 1.0);
  return d;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

PredictionRow row(std::string id, double age, double t, double a, Sex s, std::string project, Role role) {
  return {std::move(id), age, t, a, s, std::move(project), role};
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("OLS closed-form examples") {
    const std::vector<double> x{1, 2, 3};
    const auto exact = ols_fit(simple_design(x), std::vector<double>{2, 4, 6});
    CHECK(std::abs(exact.coefficients[0]) < 1e-10);
    CHECK(std::abs(exact.coefficients[1] - 2.0) < 1e-10);

    const auto fit = ols_fit(simple_design(x), std::vector<double>{1, 3, 4});
    CHECK(fit.coefficients[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(fit.coefficients[0] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    CHECK(fit.rss == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  }

  TEST_CASE("OLS error cases") {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<Col> dup{{"a", x}, {"b", x}};
    CHECK(code_of([&] { ols_fit(Design::with_intercept(dup), std::vector<double>{1, 2, 3, 5}); }) ==
          ErrorCode::RankDeficient);
    const std::vector<double> two{1, 2};
    CHECK(code_of([&] { ols_fit(simple_design(two), std::vector<double>{1, 2}); }) == ErrorCode::TooFewRows);
  }

  TEST_CASE("OLS agrees with a quad-precision oracle") {
    std::mt19937_64 g(5);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> a(50), b(50), y(50);
      for (std::size_t i = 0; i < 50; ++i) {
        a[i] = n(g);
        b[i] = 3 + 2 * n(g);
        y[i] = 1 + 0.5 * a[i] - 2 * b[i] + n(g);
      }
      const std::vector<Col> cols{{"a", a}, {"b", b}};
      const Design d = Design::with_intercept(cols);
      const auto fit = ols_fit(d, y);
      const auto ref = oracle::ols_quad(d.data, y, 50, 3);
      for (std::size_t j = 0; j < 3; ++j) CHECK(fit.coefficients[j] == doctest::Approx(ref[j]).epsilon(1e-8));
    }
  }

  TEST_CASE("metrics") {
    const std::vector<double> actual{2, 2, 5};
    const auto m = metrics(std::vector<double>{1, 2, 3}, actual);
    CHECK(m.mae == doctest::Approx(1.0));
    CHECK(m.mse == doctest::Approx(5.0 / 3.0));
    const auto perfect = metrics(actual, actual);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.r2 == 1.0);
    const auto flat = metrics(std::vector<double>{3, 3, 3}, actual);
    CHECK(std::abs(flat.r2) < 1e-12);
    CHECK(code_of([] { metrics(std::vector<double>{1, 2}, std::vector<double>{4, 4}); }) == ErrorCode::ZeroVariance);
  }

  TEST_CASE("incomplete beta closed forms") {
    CHECK(regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0);
    CHECK(regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0);
    CHECK(std::abs(regularized_incomplete_beta(0.25, 0.5, 0.5) - 1.0 / 3.0) < 1e-10);
    CHECK(std::abs(regularized_incomplete_beta(0.3, 1.0, 4.0) - (1.0 - std::pow(0.7, 4))) < 1e-10);
    CHECK(regularized_incomplete_beta(0.3, 1.0, 4.0) == doctest::Approx(0.7599).epsilon(1e-4));
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
    CHECK(std::abs(regularized_incomplete_beta(0.8, 3.5, 2.0) + regularized_incomplete_beta(0.2, 2.0, 3.5) - 1.0) <
          1e-12);
    CHECK(code_of([] { regularized_incomplete_beta(1.5, 1, 1); }) == ErrorCode::DomainError);
    CHECK(code_of([] { regularized_incomplete_beta(0.5, 0, 1); }) == ErrorCode::DomainError);
  }

  TEST_CASE("nested F test on the three-point example") {
    const std::vector<double> x{1, 2, 3}, y{1, 3, 4};
    const auto reduced = ols_fit(intercept_only(3), y);
    const auto full = ols_fit(simple_design(x), y);
    CHECK(reduced.rss == doctest::Approx(42.0 / 9.0));
    const auto r = anova_nested(reduced, full);
    CHECK(r.f == doctest::Approx(27.0).epsilon(1e-12));
    CHECK(r.df_num == 1);
    CHECK(r.df_den == 1);
    const double arcsine = 2.0 / std::numbers::pi * std::asin(std::sqrt(1.0 / 28.0));
    CHECK(std::abs(r.p_value - arcsine) < 1e-10);
    CHECK(r.p_value == doctest::Approx(0.1211).epsilon(1e-3));

    const auto inf = coefficient_inference(full);
    CHECK(inf.rows[1].t == doctest::Approx(std::sqrt(27.0)).epsilon(1e-12));
    CHECK(std::abs(inf.rows[1].p_value - r.p_value) < 1e-9);
  }

  TEST_CASE("anova edge cases") {
    const std::vector<double> x{1, 2, 3, 4}, y{1, 1, 1, 2}, other{4, 3, 1, 1};
    const auto full = ols_fit(simple_design(x), y);
    CHECK(code_of([&] { anova_nested(full, full); }) == ErrorCode::NotNested);
    const auto reduced_other_y = ols_fit(intercept_only(4), other);
    CHECK(code_of([&] { anova_nested(reduced_other_y, full); }) == ErrorCode::NotNested);

    // Adding a regressor that is orthogonal to the residual leaves RSS unchanged.
    const std::vector<double> z{1, -1, -1, 1};
    const std::vector<double> y2{1, 2, 3, 4};
    const auto f1 = ols_fit(intercept_only(4), y2);
    const std::vector<Col> zc{{"z", z}};
    const auto f2 = ols_fit(Design::with_intercept(zc), y2);
    const auto r = anova_nested(f1, f2);
    CHECK(r.f == 0.0);
    CHECK(r.p_value == 1.0);
  }

  TEST_CASE("F equals t squared when one regressor is added") {
    std::mt19937_64 g(9);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 25; ++t) {
      std::vector<double> a(30), b(30), y(30);
      for (std::size_t i = 0; i < 30; ++i) {
        a[i] = n(g);
        b[i] = n(g);
        y[i] = a[i] + 0.3 * b[i] + n(g);
      }
      const std::vector<Col> rc{{"a", a}}, fc{{"a", a}, {"b", b}};
      const auto reduced = ols_fit(Design::with_intercept(rc), y);
      const auto full = ols_fit(Design::with_intercept(fc), y);
      const auto r = anova_nested(reduced, full);
      const auto inf = coefficient_inference(full);
      CHECK(std::abs(r.f - inf.rows[2].t * inf.rows[2].t) < 1e-9 * std::max(1.0, r.f));
      CHECK(std::abs(r.p_value - inf.rows[2].p_value) < 1e-9);
    }
  }

  TEST_CASE("coefficient inference") {
    const std::vector<double> x{1, 2, 3};
    const auto exact = coefficient_inference(ols_fit(simple_design(x), std::vector<double>{2, 4, 6}));
    CHECK(exact.degenerate);
    for (const auto& r : exact.rows) CHECK(r.p_value == 0.0);

    // Scaling y's residual pattern doubles se and leaves t unchanged when the
    // coefficients scale too.
    const std::vector<double> xs{1, 2, 3, 4, 5};
    const std::vector<double> y1{1, 3, 2, 5, 4};
    std::vector<double> y2;
    for (double v : y1) y2.push_back(2 * v);
    const auto i1 = coefficient_inference(ols_fit(simple_design(xs), y1));
    const auto i2 = coefficient_inference(ols_fit(simple_design(xs), y2));
    CHECK_FALSE(i1.degenerate);
    CHECK(i2.rows[1].std_error == doctest::Approx(2 * i1.rows[1].std_error).epsilon(1e-12));
    CHECK(i2.rows[1].t == doctest::Approx(i1.rows[1].t).epsilon(1e-12));
  }

  TEST_CASE("prediction CSV round trip") {
    PredictionTable t;
    t.rows.push_back(row("a", 40.125, 41.0000001, 39.5, Sex::Male, "p1", Role::Train));
    t.rows.push_back(row("b", 70.0, 1.0 / 3.0, 69.0, Sex::Female, "p2", Role::Test));
    const auto back = table_from_csv(table_to_csv(t));
    CHECK(back.rows == t.rows);
    CHECK(table_to_csv(t).rfind("record_id,actual_age,t1w_pred,aicbv_pred,sex,project,role\n", 0) == 0);
    CHECK(code_of([] { table_from_csv("nope\n"); }) == ErrorCode::InvalidRecord);
  }

  TEST_CASE("collinear modality predictions fall back to the T model") {
    PredictionTable t;
    std::mt19937_64 g(4);
    std::normal_distribution<double> n(0, 3);
    for (int i = 0; i < 30; ++i) {
      const double age = 20 + 2 * i;
      const double p = age + n(g);
      t.rows.push_back(row("r" + std::to_string(i), age, p, p, i % 2 ? Sex::Male : Sex::Female, "p",
                           i % 5 == 0 ? Role::Test : Role::Train));
    }
    const auto rep = build_ensembles(t);
    CHECK(rep.degraded);
    REQUIRE(rep.models.size() == 1);
    CHECK(rep.models[0].name == "T");
    CHECK(rep.comparisons.empty());
    CHECK(report_to_text(rep).find("NOTE") != std::string::npos);
  }

  TEST_CASE("ensembles on a synthetic table") {
    PredictionTable t;
    std::mt19937_64 g(6);
    std::normal_distribution<double> n(0, 5);
    std::uniform_real_distribution<double> u(10, 90);
    for (int i = 0; i < 400; ++i) {
      const double age = u(g);
      const Sex s = i % 2 ? Sex::Male : Sex::Female;
      const double tp = age + n(g) + (s == Sex::Male ? 2.0 : 0.0);
      const double ap = age + n(g);
      t.rows.push_back(row("r" + std::to_string(i), age, tp, ap, s, i % 3 ? "a" : "b",
                           i % 10 == 0 ? Role::Test : (i % 10 == 1 ? Role::Validation : Role::Train)));
    }
    const auto rep = build_ensembles(t);
    CHECK_FALSE(rep.degraded);
    CHECK(rep.n_fit == 360);
    CHECK(rep.test_rows.size() == 40);
    REQUIRE(rep.models.size() == 4);
    CHECK(rep.comparisons.size() == 3);
    const auto* tas = rep.model("TAS");
    REQUIRE(tas != nullptr);
    CHECK(tas->inference.rows.back().name == "sex");
    CHECK(tas->inference.rows.back().estimate < 0);
    CHECK(rep.comparisons[0].label == "T vs TA");
    CHECK(rep.comparisons[0].result.p_value < 1e-6);

    const std::string json = report_to_json(rep, t);
    CHECK(json.find("\"anova\"") != std::string::npos);
    CHECK(report_to_json(rep, t) == json);
    CHECK(age_groups_to_csv(rep, t).rfind("model,age_lo,age_hi,n,mae\n", 0) == 0);
    CHECK(projects_to_csv(rep, t).rfind("model,project,n,mae\n", 0) == 0);
  }

  TEST_CASE("age-group report uses half-open 5-year bins") {
    const std::vector<double> actual{20.0, 24.999, 25.0, 31.0, 33.5, 49.0};
    const std::vector<double> pred{22.0, 24.0, 20.0, 30.0, 36.5, 50.5};
    const auto rows = report_by_age_group(actual, pred);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].lo == 20.0);
    CHECK(rows[0].hi == 25.0);
    CHECK(rows[0].n == 2);
    CHECK(rows[0].mae == doctest::Approx((2.0 + 0.999) / 2));
    CHECK(rows[1].lo == 25.0);
    CHECK(rows[1].n == 1);
    CHECK(rows[1].mae == 5.0);
    CHECK(rows[2].lo == 30.0);
    CHECK(rows[2].n == 2);
    CHECK(rows[2].mae == 2.0);
    CHECK(rows[3].lo == 45.0);
    CHECK(rows[3].mae == 1.5);
  }

  TEST_CASE("per-project report averages back to overall MAE") {
    const std::vector<std::string> proj{"b", "a", "b", "c", "a"};
    const std::vector<double> actual{10, 20, 30, 40, 50}, pred{12, 19, 33, 40, 45};
    const auto rows = report_by_project(proj, actual, pred);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].project == "a");
    double weighted = 0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      weighted += r.mae * r.n;
      n += r.n;
    }
    CHECK(n == 5);
    CHECK(std::abs(weighted / n - mean_absolute_error(pred, actual)) < 1e-9);
  }
}
