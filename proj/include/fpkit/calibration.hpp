#pragma once

#include <optional>

#include "json.hpp"

#include "fpkit/common.hpp"
#include "fpkit/eval_set.hpp"
#include "fpkit/metrics.hpp"

namespace fpkit {

// ---------------------------------------------------------------------------
// Temperature scaling
// ---------------------------------------------------------------------------

struct TemperatureFit {
    double temperature = 1.0;
    double nll_before = 0.0;  // mean NLL at T = 1
    double nll_after = 0.0;   // mean NLL at the fitted T
    int iterations = 0;
    std::string warning;               // empty when the fit is clean
    std::vector<double> accepted_nll;  // incumbent NLL after each improving evaluation
};

constexpr double kTemperatureMin = 0.05;
constexpr double kTemperatureMax = 100.0;

namespace detail {

inline double mean_nll_at_temperature(const EvalSet& eval, double t) {
    double sum = 0.0;
    std::vector<double> scaled(eval.num_classes());
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto row = eval.logits.row(i);
        for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] = row[k] / t;
        sum += logsumexp(scaled) - scaled[static_cast<std::size_t>(eval.labels[i])];
    }
    return sum / static_cast<double>(eval.size());
}

}  // namespace detail

/// Fits the single scalar T that minimises the mean NLL of softmax(logits/T)
/// on the given holdout, by golden-section search on [0.05, 100] down to an
/// interval width of 1e-4. A fit that lands on the box edge (hard-margin
/// degenerate holdouts drive T to a boundary) is flagged in `warning`.
inline TemperatureFit fit_temperature(const EvalSet& holdout) {
    holdout.validate();
    TemperatureFit fit;
    if (holdout.size() < holdout.num_classes())
        fit.warning = "fewer samples than classes; fit may be unstable";

    double best_t = 1.0;
    double best_f = std::numeric_limits<double>::infinity();
    auto eval_at = [&](double t) {
        const double f = detail::mean_nll_at_temperature(holdout, t);
        ++fit.iterations;
        if (f < best_f) {
            best_f = f;
            best_t = t;
            fit.accepted_nll.push_back(f);
        }
        return f;
    };

    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = kTemperatureMin, b = kTemperatureMax;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = eval_at(c);
    double fd = eval_at(d);
    while (b - a > 1e-4) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval_at(d);
        }
    }
    eval_at(0.5 * (a + b));
    eval_at(1.0);  // T = 1 is always admissible; never report a fit worse than identity

    fit.temperature = best_t;
    fit.nll_before = detail::mean_nll_at_temperature(holdout, 1.0);
    fit.nll_after = best_f;
    if (best_f < 1e-12) {
        // Numerically zero NLL means every sample is correct with a hard
        // margin; the objective is flat at zero over a whole range and its
        // infimum sits at the low edge of the search box.
        fit.temperature = kTemperatureMin;
        fit.nll_after = detail::mean_nll_at_temperature(holdout, kTemperatureMin);
    }
    if (fit.temperature <= kTemperatureMin + 1e-3 || fit.temperature >= kTemperatureMax - 1e-3) {
        if (!fit.warning.empty()) fit.warning += "; ";
        fit.warning += "temperature at search boundary";
    }
    return fit;
}

/// Divides all logits by T. Argmax per row (and hence accuracy) is unchanged.
/// Features and head are dropped from the result since they no longer
/// reproduce the scaled logits.
inline EvalSet apply_temperature(const EvalSet& eval, double t) {
    if (!(t > 0.0)) throw InvalidParam("apply_temperature: T must be positive");
    eval.validate();
    EvalSet out;
    out.logits = eval.logits;
    for (double& v : out.logits.data()) v /= t;
    out.labels = eval.labels;
    return out;
}

inline nlohmann::json temperature_fit_to_json(const TemperatureFit& fit) {
    return nlohmann::json{{"T", fit.temperature},
                          {"nll_before", fit.nll_before},
                          {"nll_after", fit.nll_after},
                          {"iterations", fit.iterations},
                          {"warning", fit.warning}};
}

// ---------------------------------------------------------------------------
// Proper-scoring-rule decomposition
// ---------------------------------------------------------------------------

enum class ScoringRule { log_loss, brier };

inline const char* scoring_rule_name(ScoringRule r) {
    return r == ScoringRule::log_loss ? "log_loss" : "brier";
}

inline ScoringRule parse_scoring_rule(const std::string& s) {
    if (s == "log_loss") return ScoringRule::log_loss;
    if (s == "brier") return ScoringRule::brier;
    if (s == "focal") throw InvalidParam("focal is not a strictly proper scoring rule; use log_loss or brier");
    throw InvalidParam("unknown scoring rule '" + s + "'");
}

/// Estimated decomposition of the expected divergence d(S, Y) into a
/// calibration term and the grouping+aleatoric remainder; the remainder
/// splits further when the true posterior is supplied. Additivity
/// total = calibration + grouping_plus_aleatoric holds by construction.
struct DecompositionEstimate {
    ScoringRule rule = ScoringRule::log_loss;
    double total = 0.0;
    double calibration_term = 0.0;
    double grouping_plus_aleatoric = 0.0;
    std::optional<double> grouping;
    std::optional<double> aleatoric;
    int bins = 0;
    int empty_bins = 0;
    std::size_t n = 0;
};

namespace detail {

// Divergence of a two-entry score s = (q, 1-q) evaluated against an outcome
// distribution (p, 1-p): KL for log loss, squared distance for Brier.
inline double binary_divergence(ScoringRule rule, double score_q, double outcome_p) {
    const double eps = 1e-15;
    const double sq = std::clamp(score_q, eps, 1.0 - eps);
    if (rule == ScoringRule::brier) {
        const double d = score_q - outcome_p;
        return 2.0 * d * d;
    }
    double div = 0.0;
    if (outcome_p > 0.0) div += outcome_p * std::log(outcome_p / sq);
    if (outcome_p < 1.0) div += (1.0 - outcome_p) * std::log((1.0 - outcome_p) / (1.0 - sq));
    return div;
}

}  // namespace detail

/// Confidence-level decomposition: the K-class problem is reduced to the
/// induced binary problem "is the predicted class correct", with the MSP as
/// the score. The calibrated score C is estimated by binning the MSP into
/// equal-width bins and using each bin's empirical accuracy. When the true
/// posterior Q is given (N x K, rows on the simplex), the aleatoric term is
/// estimated from Q at the predicted class and the grouping term is the
/// remainder.
inline DecompositionEstimate decompose_score(const EvalSet& eval, ScoringRule rule, int num_bins,
                                             const std::optional<Matrix>& true_posterior = std::nullopt) {
    eval.validate();
    if (num_bins < 1) throw InvalidParam("decompose_score: need at least one bin");
    if (true_posterior) {
        if (true_posterior->rows() != eval.size() || true_posterior->cols() != eval.num_classes())
            throw InvalidInput("decompose_score: posterior matrix shape mismatch");
        for (std::size_t i = 0; i < true_posterior->rows(); ++i) {
            double row_sum = 0.0;
            for (std::size_t k = 0; k < true_posterior->cols(); ++k) {
                const double q = (*true_posterior)(i, k);
                if (q < 0.0 || q > 1.0) throw InvalidInput("decompose_score: posterior entry outside [0,1]");
                row_sum += q;
            }
            if (std::abs(row_sum - 1.0) > 1e-6)
                throw InvalidInput("decompose_score: posterior row does not sum to 1");
        }
    }

    const auto mask = correctness(eval);
    const auto msp = score_msp(eval);
    const std::size_t n = eval.size();

    std::vector<double> bin_acc(num_bins, 0.0);
    std::vector<std::size_t> bin_count(num_bins, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = ece_bin_index(msp.values[i], num_bins);
        bin_count[b] += 1;
        bin_acc[b] += mask.correct[i] ? 1.0 : 0.0;
    }
    int empty = 0;
    for (int b = 0; b < num_bins; ++b) {
        if (bin_count[b] == 0)
            ++empty;
        else
            bin_acc[b] /= static_cast<double>(bin_count[b]);
    }

    DecompositionEstimate est;
    est.rule = rule;
    est.bins = num_bins;
    est.empty_bins = empty;
    est.n = n;

    double total = 0.0, calibration = 0.0, aleatoric = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = msp.values[i];
        const double y = mask.correct[i] ? 1.0 : 0.0;
        const double c_hat = bin_acc[ece_bin_index(s, num_bins)];
        total += detail::binary_divergence(rule, s, y);
        calibration += detail::binary_divergence(rule, s, c_hat);
        if (true_posterior) {
            const double q = (*true_posterior)(i, static_cast<std::size_t>(mask.predicted[i]));
            aleatoric += detail::binary_divergence(rule, q, y);
        }
    }
    est.total = total / static_cast<double>(n);
    est.calibration_term = calibration / static_cast<double>(n);
    est.grouping_plus_aleatoric = est.total - est.calibration_term;
    if (true_posterior) {
        est.aleatoric = aleatoric / static_cast<double>(n);
        est.grouping = est.grouping_plus_aleatoric - *est.aleatoric;
    }
    if (!std::isfinite(est.total) || !std::isfinite(est.calibration_term))
        throw NumericError("decompose_score: non-finite estimate");
    return est;
}

inline nlohmann::json decomposition_to_json(const DecompositionEstimate& est) {
    nlohmann::json j{{"rule", scoring_rule_name(est.rule)},
                     {"total", est.total},
                     {"calibration_term", est.calibration_term},
                     {"grouping_plus_aleatoric", est.grouping_plus_aleatoric},
                     {"grouping", est.grouping ? nlohmann::json(*est.grouping) : nlohmann::json(nullptr)},
                     {"aleatoric", est.aleatoric ? nlohmann::json(*est.aleatoric) : nlohmann::json(nullptr)},
                     {"bins", est.bins},
                     {"empty_bins", est.empty_bins},
                     {"n", est.n}};
    return j;
}

}  // namespace fpkit
