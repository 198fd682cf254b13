#pragma once

#include <numeric>
#include <optional>

#include "json.hpp"

#include "fpkit/common.hpp"
#include "fpkit/eval_set.hpp"
#include "fpkit/scores.hpp"

namespace fpkit {

// ---------------------------------------------------------------------------
// Risk-coverage
// ---------------------------------------------------------------------------

/// Selective risk against coverage. coverage[i] = (i+1)/n, and risk[i] is the
/// error rate among the i+1 most-confident samples.
struct RcCurve {
    std::vector<double> coverage;
    std::vector<double> risk;
};

namespace detail {

/// Indices sorted by score descending; equal scores keep their original order.
inline std::vector<std::size_t> confidence_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

inline void check_aligned(std::span<const double> scores, const std::vector<bool>& flags,
                          const char* what) {
    if (scores.size() != flags.size() || scores.empty())
        throw InvalidInput(std::string(what) + ": score/mask length mismatch or empty input");
    for (double v : scores)
        if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite score");
}

}  // namespace detail

inline RcCurve rc_curve(const ScoreVector& score, const CorrectnessMask& mask) {
    detail::check_aligned(score.values, mask.correct, "rc_curve");
    const std::size_t n = score.values.size();
    const auto order = detail::confidence_order(score.values);
    RcCurve curve;
    curve.coverage.resize(n);
    curve.risk.resize(n);
    double errors = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.correct[order[i]]) errors += 1.0;
        curve.coverage[i] = static_cast<double>(i + 1) / static_cast<double>(n);
        curve.risk[i] = errors / static_cast<double>(i + 1);
    }
    return curve;
}

/// Discrete AURC: the mean of the selective risk over all n prefix coverages.
inline double aurc(const ScoreVector& score, const CorrectnessMask& mask) {
    const auto curve = rc_curve(score, mask);
    return mean_of(curve.risk);
}

/// AURC of the oracle ranking (all correct samples ahead of all incorrect).
inline double oracle_aurc(const CorrectnessMask& mask) {
    const std::size_t n = mask.correct.size();
    if (n == 0) throw InvalidInput("oracle_aurc: empty mask");
    std::size_t n_correct = 0;
    for (bool c : mask.correct) n_correct += c ? 1 : 0;
    double sum = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        const double errors = i > n_correct ? static_cast<double>(i - n_correct) : 0.0;
        sum += errors / static_cast<double>(i);
    }
    return sum / static_cast<double>(n);
}

inline double e_aurc(const ScoreVector& score, const CorrectnessMask& mask) {
    return aurc(score, mask) - oracle_aurc(mask);
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(equal), computed with
/// midranks in a single sort. Throws DegenerateLabels when either class is
/// empty; callers building reports translate that into a null metric.
inline double auroc(std::span<const double> scores, const std::vector<bool>& positives) {
    detail::check_aligned(scores, positives, "auroc");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateLabels("auroc: needs both positives and negatives");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (positives[order[t]]) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// FPR at the operating point where TPR first clears the target, sweeping
/// thresholds over the distinct score values in descending order with ties on
/// the accept side (score >= threshold). A TPR that only equals the target
/// does not count as reached, so the threshold keeps dropping; with the
/// default target this reports the FPR at the largest threshold whose TPR
/// exceeds 95%.
inline double fpr_at_tpr(std::span<const double> scores, const std::vector<bool>& positives,
                         double tpr_target = 0.95) {
    detail::check_aligned(scores, positives, "fpr_at_tpr");
    if (!(tpr_target > 0.0 && tpr_target < 1.0))
        throw InvalidParam("fpr_at_tpr: target must be in (0, 1)");
    std::size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    const std::size_t n_neg = positives.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateLabels("fpr_at_tpr: needs both positives and negatives");

    const auto order = detail::confidence_order(scores);
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t < j; ++t) {
            if (positives[order[t]])
                ++tp;
            else
                ++fp;
        }
        const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        if (tpr > tpr_target) return static_cast<double>(fp) / static_cast<double>(n_neg);
        i = j;
    }
    return 1.0;  // unreachable for targets < 1: the full set has TPR 1
}

/// Average precision: sum over positives, in score-descending order (stable
/// for ties), of precision-at-that-rank times 1/n_pos.
inline double aupr(std::span<const double> scores, const std::vector<bool>& positives) {
    detail::check_aligned(scores, positives, "aupr");
    std::size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    if (n_pos == 0) throw DegenerateLabels("aupr: no positive samples");

    const auto order = detail::confidence_order(scores);
    double ap = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 1; rank <= order.size(); ++rank) {
        if (positives[order[rank - 1]]) {
            ++tp;
            ap += (static_cast<double>(tp) / static_cast<double>(rank)) / static_cast<double>(n_pos);
        }
    }
    return ap;
}

// ---------------------------------------------------------------------------
// Calibration metrics
// ---------------------------------------------------------------------------

/// Per-bin statistics behind ECE; bins are equal-width over [0,1], the last
/// bin closed on the right.
struct BinStats {
    int num_bins = 0;
    std::vector<std::size_t> count;
    std::vector<double> mean_confidence;
    std::vector<double> accuracy;
};

inline std::size_t ece_bin_index(double confidence, int num_bins) {
    auto idx = static_cast<long>(confidence * num_bins);
    if (idx >= num_bins) idx = num_bins - 1;
    if (idx < 0) idx = 0;
    return static_cast<std::size_t>(idx);
}

struct EceResult {
    double ece = 0.0;
    BinStats bins;
};

inline EceResult ece(const ScoreVector& confidence, const CorrectnessMask& mask, int num_bins = 15) {
    detail::check_aligned(confidence.values, mask.correct, "ece");
    if (num_bins < 1) throw InvalidParam("ece: need at least one bin");
    for (double v : confidence.values)
        if (v < 0.0 || v > 1.0)
            throw InvalidInput("ece: confidence outside [0,1]; ECE is defined only for probability scores");

    const std::size_t n = confidence.values.size();
    BinStats bins;
    bins.num_bins = num_bins;
    bins.count.assign(num_bins, 0);
    bins.mean_confidence.assign(num_bins, 0.0);
    bins.accuracy.assign(num_bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = ece_bin_index(confidence.values[i], num_bins);
        bins.count[b] += 1;
        bins.mean_confidence[b] += confidence.values[i];
        bins.accuracy[b] += mask.correct[i] ? 1.0 : 0.0;
    }
    double total = 0.0;
    for (int b = 0; b < num_bins; ++b) {
        if (bins.count[b] == 0) continue;
        bins.mean_confidence[b] /= static_cast<double>(bins.count[b]);
        bins.accuracy[b] /= static_cast<double>(bins.count[b]);
        total += static_cast<double>(bins.count[b]) / static_cast<double>(n) *
                 std::abs(bins.accuracy[b] - bins.mean_confidence[b]);
    }
    return {total, std::move(bins)};
}

/// Mean negative log-likelihood of the true class (natural log, per sample).
inline double nll(const EvalSet& eval) {
    eval.validate();
    double sum = 0.0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto row = eval.logits.row(i);
        sum += logsumexp(row) - row[static_cast<std::size_t>(eval.labels[i])];
    }
    return sum / static_cast<double>(eval.size());
}

/// Mean squared error between the softmax vector and the one-hot label.
inline double brier(const EvalSet& eval) {
    eval.validate();
    double sum = 0.0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto p = softmax(eval.logits.row(i));
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double t = (static_cast<int>(k) == eval.labels[i]) ? 1.0 : 0.0;
            sum += (p[k] - t) * (p[k] - t);
        }
    }
    return sum / static_cast<double>(eval.size());
}

inline double accuracy(const CorrectnessMask& mask) {
    if (mask.correct.empty()) throw InvalidInput("accuracy: empty mask");
    double sum = 0.0;
    for (bool c : mask.correct) sum += c ? 1.0 : 0.0;
    return sum / static_cast<double>(mask.correct.size());
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

/// The complete metric bundle for one score on one EvalSet. Metrics that are
/// undefined for the input are null, with the reason recorded in notes.
struct MetricsReport {
    std::string score_kind;
    std::size_t n = 0;
    double accuracy = 0.0;
    std::optional<double> aurc;
    std::optional<double> e_aurc;
    std::optional<double> auroc;
    std::optional<double> fpr95;
    std::optional<double> aupr_s;
    std::optional<double> aupr_e;
    std::optional<double> ece;
    std::optional<double> nll;
    std::optional<double> brier;
    std::map<std::string, double> params;
    std::map<std::string, std::string> notes;
};

inline MetricsReport full_report(const EvalSet& eval, ScoreKind kind,
                                 const std::map<std::string, double>& params = {}, int ece_bins = 15) {
    eval.validate();
    const auto mask = correctness(eval);
    const auto score = compute_score(eval, kind, params);

    MetricsReport report;
    report.score_kind = score_kind_name(kind);
    report.n = eval.size();
    report.params = score.params;
    report.accuracy = fpkit::accuracy(mask);
    report.aurc = fpkit::aurc(score, mask);
    report.e_aurc = fpkit::e_aurc(score, mask);

    std::vector<bool> errors(mask.correct.size());
    for (std::size_t i = 0; i < errors.size(); ++i) errors[i] = !mask.correct[i];
    std::vector<double> negated(score.values.size());
    for (std::size_t i = 0; i < negated.size(); ++i) negated[i] = -score.values[i];

    auto guarded = [&](std::optional<double>& slot, const char* name, auto&& fn) {
        try {
            slot = fn();
        } catch (const DegenerateLabels&) {
            report.notes[name] = "degenerate_labels";
        }
    };
    guarded(report.auroc, "auroc", [&] { return fpkit::auroc(score.values, mask.correct); });
    guarded(report.fpr95, "fpr95", [&] { return fpkit::fpr_at_tpr(score.values, mask.correct); });
    guarded(report.aupr_s, "aupr_s", [&] { return fpkit::aupr(score.values, mask.correct); });
    guarded(report.aupr_e, "aupr_e", [&] { return fpkit::aupr(negated, errors); });

    if (is_probability_score(kind)) {
        report.ece = fpkit::ece(score, mask, ece_bins).ece;
        report.nll = fpkit::nll(eval);
        report.brier = fpkit::brier(eval);
    } else {
        report.notes["ece"] = "not_a_probability_score";
        report.notes["nll"] = "not_a_probability_score";
        report.notes["brier"] = "not_a_probability_score";
    }
    return report;
}

/// JSON with stable field names; `aurc_scale` records the display scaling
/// applied to AURC/E-AURC (1 or 1000).
inline nlohmann::json report_to_json(const MetricsReport& report, double aurc_scale = 1.0) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    auto opt_scaled = [&](const std::optional<double>& v) {
        return v ? nlohmann::json(*v * aurc_scale) : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["score_kind"] = report.score_kind;
    j["n"] = report.n;
    j["accuracy"] = report.accuracy;
    j["aurc"] = opt_scaled(report.aurc);
    j["e_aurc"] = opt_scaled(report.e_aurc);
    j["aurc_scale"] = aurc_scale;
    j["auroc"] = opt(report.auroc);
    j["fpr95"] = opt(report.fpr95);
    j["aupr_s"] = opt(report.aupr_s);
    j["aupr_e"] = opt(report.aupr_e);
    j["ece"] = opt(report.ece);
    j["nll"] = opt(report.nll);
    j["brier"] = opt(report.brier);
    j["params"] = report.params;
    j["notes"] = report.notes;
    return j;
}

inline void save_rc_curve_csv(const RcCurve& curve, std::ostream& out) {
    out << "coverage,risk\n";
    for (std::size_t i = 0; i < curve.coverage.size(); ++i)
        out << format_double(curve.coverage[i]) << ',' << format_double(curve.risk[i]) << '\n';
}

}  // namespace fpkit
