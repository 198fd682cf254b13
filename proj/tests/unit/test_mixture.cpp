#include "doctest.h"

#include "fpkit/mixture.hpp"
#include "support/hand_fixtures.hpp"

using namespace fpkit;

TEST_CASE("mixture spec validation") {
    auto spec = fixtures::two_gaussian_world();
    CHECK_NOTHROW(spec.validate());
    auto bad = spec;
    bad.components[0].prior = 0.7;  // priors no longer sum to one
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = spec;
    bad.pi_in = 0.999;
    CHECK_THROWS_AS(bad.validate(), InvalidParam);
    bad = spec;
    bad.reject_cost = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidParam);
    bad = spec;
    bad.components[1].variance = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = spec;
    bad.ood.hi = {-11.0};
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("mixture JSON round trip") {
    const auto spec = fixtures::two_gaussian_world();
    const auto j = mixture_to_json(spec);
    const auto back = mixture_from_json(j);
    CHECK(back.components.size() == 2);
    CHECK(back.components[0].mean[0] == spec.components[0].mean[0]);
    CHECK(back.pi_in == spec.pi_in);
    CHECK(back.reject_cost == spec.reject_cost);
    CHECK(back.ood.kind == OodDensity::Kind::uniform_box);

    nlohmann::json missing;
    missing["components"] = j["components"];
    CHECK_THROWS_AS(mixture_from_json(missing), InvalidInput);
}

TEST_CASE("2-D regions answer through the indicator") {
    MixtureSpec spec;
    spec.components = {{{-1.5, 0.0}, 1.0, 0.5}, {{1.5, 0.0}, 1.0, 0.5}};
    spec.ood.kind = OodDensity::Kind::uniform_box;
    spec.ood.lo = {-8.0, -8.0};
    spec.ood.hi = {8.0, 8.0};
    spec.pi_in = 0.5;
    spec.reject_cost = 0.2;

    const auto chow = chow_reject_region(spec);
    CHECK(chow.intervals.empty());  // no 1-D materialisation in 2-D
    CHECK(chow.contains(std::vector<double>{0.0, 0.0}));        // between the classes
    CHECK_FALSE(chow.contains(std::vector<double>{1.5, 0.0}));  // at a mean

    const auto ood = ood_reject_region(spec);
    CHECK(ood.contains(std::vector<double>{6.0, 6.0}));         // far from both classes
    CHECK_FALSE(ood.contains(std::vector<double>{1.5, 0.0}));
}

TEST_CASE("numeric 1-D region scan agrees with the indicator") {
    // unequal priors: the closed form does not apply, forcing the scan
    MixtureSpec spec;
    spec.components = {{{-1.0}, 1.0, 0.3}, {{1.0}, 1.0, 0.7}};
    spec.ood.kind = OodDensity::Kind::uniform_box;
    spec.ood.lo = {-10.0};
    spec.ood.hi = {10.0};
    spec.pi_in = 0.5;
    spec.reject_cost = 0.25;
    const auto region = chow_reject_region(spec);
    CHECK_FALSE(region.closed_form);
    REQUIRE(region.intervals.size() == 1);
    auto inside = [&](double x) { return region.contains(std::vector<double>{x}); };
    const auto& iv = region.intervals[0];
    CHECK(inside(0.5 * (iv.lo + iv.hi)));
    CHECK_FALSE(inside(iv.lo - 0.01));
    CHECK_FALSE(inside(iv.hi + 0.01));
    CHECK(inside(iv.lo + 0.01));
    CHECK(inside(iv.hi - 0.01));
}

TEST_CASE("risk estimates are deterministic in the seed") {
    const auto spec = fixtures::two_gaussian_world();
    ThresholdRule rule{RuleScore::true_posterior_max, 0.8};
    const auto a = fp_risk(spec, rule, 20000, 99);
    const auto b = fp_risk(spec, rule, 20000, 99);
    CHECK(a.value == b.value);
    CHECK(a.std_error == b.std_error);
    const auto c = fp_risk(spec, rule, 20000, 100);
    CHECK(a.value != c.value);  // different seed, different draw
}

TEST_CASE("doubling the sample count shrinks stderr like 1/sqrt(2)") {
    const auto spec = fixtures::two_gaussian_world();
    ThresholdRule rule{RuleScore::density_ratio, 1.0};
    double ratio_sum = 0.0;
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        const auto half = ood_risk(spec, rule, 40000, 1000 + s);
        const auto full = ood_risk(spec, rule, 80000, 2000 + s);
        ratio_sum += half.std_error / full.std_error;
    }
    const double mean_ratio = ratio_sum / seeds;
    CHECK(mean_ratio > std::sqrt(2.0) * 0.8);
    CHECK(mean_ratio < std::sqrt(2.0) * 1.2);
}

TEST_CASE("model-backed rule scores") {
    Rng rng(601);
    const auto model = MlpModel::init({1, 4, 2}, rng);
    const auto spec = fixtures::two_gaussian_world();
    ThresholdRule rule{RuleScore::msp_of_model, 0.5, &model};
    const double v = rule_score_value(spec, rule, std::vector<double>{0.3});
    CHECK(v >= 0.5);  // MSP of a 2-class model is at least 1/2
    CHECK(v <= 1.0);
    ThresholdRule missing{RuleScore::msp_of_model, 0.5, nullptr};
    CHECK_THROWS_AS(rule_score_value(spec, missing, std::vector<double>{0.3}), MissingModelAccess);
}

TEST_CASE("sweep rows carry both risks and their standard errors") {
    const auto spec = fixtures::two_gaussian_world();
    const std::vector<double> grid = {0.6, 0.8, 0.95};
    const auto rows = sweep_thresholds(spec, RuleScore::true_posterior_max, grid, 5000, 7);
    REQUIRE(rows.size() == 3);
    for (const auto& row : rows) {
        CHECK(row.fp_stderr > 0.0);
        CHECK(row.ood_stderr > 0.0);
        CHECK(row.fp_risk >= 0.0);
        CHECK(row.ood_risk >= 0.0);
        CHECK(row.ood_risk <= 1.0);
    }
    std::ostringstream out;
    save_sweep_csv(rows, out);
    CHECK(out.str().rfind("delta,fp_risk,fp_stderr,ood_risk,ood_stderr\n", 0) == 0);
}
