#include "doctest.h"

#include "fpkit/metrics.hpp"
#include "support/oracles.hpp"

using namespace fpkit;

namespace {

ScoreVector wrap(std::vector<double> values) {
    ScoreVector sv;
    sv.values = std::move(values);
    return sv;
}

CorrectnessMask wrap_mask(std::vector<bool> correct) {
    CorrectnessMask mask;
    mask.predicted.assign(correct.size(), 0);
    mask.correct = std::move(correct);
    return mask;
}

}  // namespace

TEST_CASE("auroc matches the pairwise oracle, ties included") {
    Rng rng(201);
    std::uniform_int_distribution<std::size_t> size(2, 64);
    int done = 0;
    while (done < 60) {
        const std::size_t n = size(rng);
        const auto scores = oracles::random_scores(n, rng);
        const auto mask = oracles::random_mask(n, rng);
        if (!oracles::has_both_classes(mask)) continue;
        const double fast = auroc(scores, mask);
        const double slow = oracles::auroc_pairwise(scores, mask);
        CHECK(std::abs(fast - slow) <= 1e-12);
        ++done;
    }
}

TEST_CASE("aurc matches per-prefix recomputation") {
    Rng rng(202);
    std::uniform_int_distribution<std::size_t> size(1, 48);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = size(rng);
        const auto scores = oracles::random_scores(n, rng);
        const auto mask = oracles::random_mask(n, rng);
        const double fast = aurc(wrap(scores), wrap_mask(mask));
        const double slow = oracles::aurc_prefix_recompute(scores, mask);
        CHECK(std::abs(fast - slow) <= 1e-12);
    }
}

TEST_CASE("ranking metrics are invariant under monotone transforms") {
    Rng rng(203);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 40;
        const auto scores = oracles::random_scores(n, rng);
        auto mask = oracles::random_mask(n, rng);
        if (!oracles::has_both_classes(mask)) continue;

        auto apply = [&](auto&& fn) {
            std::vector<double> out(scores.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(scores[i]);
            return out;
        };
        const std::vector<std::vector<double>> variants = {
            apply([](double x) { return std::exp(x); }),
            apply([](double x) { return 2.3 * x - 1.0; }),
            apply([](double x) { return x * x * x; }),
        };
        const double base_auroc = auroc(scores, mask);
        const double base_aurc = aurc(wrap(scores), wrap_mask(mask));
        const double base_eaurc = e_aurc(wrap(scores), wrap_mask(mask));
        const double base_fpr = fpr_at_tpr(scores, mask);
        const double base_aupr = aupr(scores, mask);
        for (const auto& v : variants) {
            CHECK(std::abs(auroc(v, mask) - base_auroc) <= 1e-12);
            CHECK(std::abs(aurc(wrap(v), wrap_mask(mask)) - base_aurc) <= 1e-12);
            CHECK(std::abs(e_aurc(wrap(v), wrap_mask(mask)) - base_eaurc) <= 1e-12);
            CHECK(std::abs(fpr_at_tpr(v, mask) - base_fpr) <= 1e-12);
            CHECK(std::abs(aupr(v, mask) - base_aupr) <= 1e-12);
        }
    }
}

TEST_CASE("auroc complement identities on tie-free data") {
    Rng rng(204);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 24;
        std::vector<double> scores(n);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (auto& s : scores) s = unif(rng);  // continuous: ties have measure zero
        auto mask = oracles::random_mask(n, rng);
        if (!oracles::has_both_classes(mask)) continue;
        std::vector<bool> complement(n);
        std::vector<double> negated(n);
        for (std::size_t i = 0; i < n; ++i) {
            complement[i] = !mask[i];
            negated[i] = -scores[i];
        }
        const double base = auroc(scores, mask);
        CHECK(std::abs(base + auroc(scores, complement) - 1.0) <= 1e-12);
        CHECK(std::abs(base + auroc(negated, mask) - 1.0) <= 1e-12);
        CHECK(std::abs(auroc(negated, complement) - base) <= 1e-12);
    }
}

TEST_CASE("e_aurc is nonnegative and zero exactly at perfect rankings") {
    Rng rng(205);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + trial % 32;
        const auto scores = oracles::random_scores(n, rng);
        const auto mask = oracles::random_mask(n, rng);
        CHECK(e_aurc(wrap(scores), wrap_mask(mask)) >= -1e-12);
    }
    // tie-free perfect ranking
    CHECK(e_aurc(wrap({0.9, 0.7, 0.4, 0.2}), wrap_mask({true, true, false, false})) ==
          doctest::Approx(0.0).epsilon(1e-15));
    // imperfect tie-free ranking is strictly positive
    CHECK(e_aurc(wrap({0.9, 0.7, 0.4, 0.2}), wrap_mask({true, false, true, false})) > 0.0);
}

TEST_CASE("fpr_at_tpr tie handling keeps ties on the accept side") {
    // threshold sweep visits distinct values only; at threshold 0.5 all three
    // 0.5-scored samples are accepted together
    const std::vector<double> scores = {0.9, 0.5, 0.5, 0.5, 0.1};
    const std::vector<bool> pos = {true, true, true, false, false};
    // thresholds: 0.9 (tpr 1/3), 0.5 (tpr 1, fpr 1/2) -> report 1/2
    CHECK(fpr_at_tpr(scores, pos, 0.95) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("aupr tie order is stable by original index") {
    // equal scores keep input order: positive first, so precision at its
    // rank is computed before the negative with the same score
    const std::vector<double> scores = {0.5, 0.5};
    CHECK(aupr(scores, {true, false}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(aupr(scores, {false, true}) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("ece bins are equal width with a closed last bin") {
    CHECK(ece_bin_index(0.0, 15) == 0);
    CHECK(ece_bin_index(1.0, 15) == 14);
    CHECK(ece_bin_index(0.5, 2) == 1);  // [0.5, 1] belongs to the upper bin
    const auto result = ece(wrap({0.05, 0.95}), wrap_mask({false, true}), 10);
    CHECK(result.bins.count[0] == 1);
    CHECK(result.bins.count[9] == 1);
    std::size_t total = 0;
    for (auto c : result.bins.count) total += c;
    CHECK(total == 2);
}

TEST_CASE("ece is zero when every bin's confidence matches its accuracy") {
    // two bins, each internally matched
    const auto result = ece(wrap({0.25, 0.25, 0.25, 0.25, 0.8, 0.8, 0.8, 0.8, 0.8}),
                            wrap_mask({true, false, false, false, true, true, true, true, false}),
                            2);
    CHECK(result.ece == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("full_report propagates per-metric failures without aborting") {
    EvalSet eval;
    eval.logits = Matrix(3, 2);
    eval.logits(0, 0) = 2.0;
    eval.logits(1, 0) = 1.0;
    eval.logits(2, 0) = 3.0;
    eval.labels = {0, 0, 0};  // everything correct: failure AUROC undefined
    const auto report = full_report(eval, ScoreKind::msp);
    CHECK_FALSE(report.auroc.has_value());
    CHECK(report.notes.at("auroc") == "degenerate_labels");
    CHECK_FALSE(report.aupr_e.has_value());
    CHECK(report.aupr_s.has_value());  // all-positive is well-defined (AP = 1)
    CHECK(report.accuracy == doctest::Approx(1.0));
    CHECK(report.aurc.has_value());
    const auto j = report_to_json(report, 1000.0);
    CHECK(j["auroc"].is_null());
    CHECK(j["aurc"].get<double>() == doctest::Approx(*report.aurc * 1000.0));
}
