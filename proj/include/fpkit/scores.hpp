#pragma once

#include <map>
#include <string>
#include <vector>

#include "fpkit/common.hpp"
#include "fpkit/eval_set.hpp"

namespace fpkit {

/// Post-hoc confidence scores. Every kind is oriented so that higher means
/// "trust this prediction" — entropy and energy are negated relative to
/// their textbook definitions so a single comparison direction serves all
/// downstream metrics.
enum class ScoreKind { msp, neg_entropy, margin, max_logit, energy, odin_t, react_msp, doctor_none };

inline const char* score_kind_name(ScoreKind k) {
    switch (k) {
        case ScoreKind::msp: return "msp";
        case ScoreKind::neg_entropy: return "neg_entropy";
        case ScoreKind::margin: return "margin";
        case ScoreKind::max_logit: return "max_logit";
        case ScoreKind::energy: return "energy";
        case ScoreKind::odin_t: return "odin_t";
        case ScoreKind::react_msp: return "react_msp";
        case ScoreKind::doctor_none: return "doctor_none";
    }
    return "?";
}

inline ScoreKind parse_score_kind(const std::string& s) {
    for (ScoreKind k : {ScoreKind::msp, ScoreKind::neg_entropy, ScoreKind::margin, ScoreKind::max_logit,
                        ScoreKind::energy, ScoreKind::odin_t, ScoreKind::react_msp, ScoreKind::doctor_none}) {
        if (s == score_kind_name(k)) return k;
    }
    throw InvalidParam("unknown score kind '" + s + "'");
}

/// True for scores whose values are probabilities in [0,1]; only these are
/// admissible for ECE and get NLL/Brier rows in a report.
inline bool is_probability_score(ScoreKind k) {
    return k == ScoreKind::msp || k == ScoreKind::odin_t || k == ScoreKind::react_msp;
}

struct ScoreVector {
    ScoreKind kind = ScoreKind::msp;
    std::vector<double> values;  // length N, higher = more confident
    std::map<std::string, double> params;
};

/// Numerically safe softmax of one logit row (max-subtraction).
inline std::vector<double> softmax(std::span<const double> logits) {
    for (double v : logits)
        if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite input");
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - m);
        sum += p[k];
    }
    for (double& v : p) v /= sum;
    return p;
}

namespace detail {

template <typename RowScore>
ScoreVector score_rows(const EvalSet& eval, ScoreKind kind, RowScore&& row_score) {
    eval.validate();
    ScoreVector sv;
    sv.kind = kind;
    sv.values.resize(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) sv.values[i] = row_score(eval.logits.row(i));
    return sv;
}

inline double msp_of_row(std::span<const double> row) {
    const auto p = softmax(row);
    return *std::max_element(p.begin(), p.end());
}

}  // namespace detail

/// Maximum softmax probability.
inline ScoreVector score_msp(const EvalSet& eval) {
    return detail::score_rows(eval, ScoreKind::msp, detail::msp_of_row);
}

/// Negated Shannon entropy of the softmax row, natural log, 0*log 0 = 0.
inline ScoreVector score_neg_entropy(const EvalSet& eval) {
    return detail::score_rows(eval, ScoreKind::neg_entropy, [](std::span<const double> row) {
        const auto p = softmax(row);
        double s = 0.0;
        for (double v : p)
            if (v > 0.0) s += v * std::log(v);
        return s;
    });
}

/// Gap between the two largest softmax probabilities.
inline ScoreVector score_margin(const EvalSet& eval) {
    return detail::score_rows(eval, ScoreKind::margin, [](std::span<const double> row) {
        auto p = softmax(row);
        std::size_t a = 0, b = 1;
        if (p[b] > p[a]) std::swap(a, b);
        for (std::size_t k = 2; k < p.size(); ++k) {
            if (p[k] > p[a]) {
                b = a;
                a = k;
            } else if (p[k] > p[b]) {
                b = k;
            }
        }
        return p[a] - p[b];
    });
}

inline ScoreVector score_max_logit(const EvalSet& eval) {
    return detail::score_rows(eval, ScoreKind::max_logit, [](std::span<const double> row) {
        return *std::max_element(row.begin(), row.end());
    });
}

/// Negated energy T*log(sum(exp(z/T))); higher = more in-distribution.
inline ScoreVector score_energy(const EvalSet& eval, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw InvalidParam("energy: temperature must be positive");
    auto sv = detail::score_rows(eval, ScoreKind::energy, [&](std::span<const double> row) {
        std::vector<double> scaled(row.begin(), row.end());
        for (double& v : scaled) v /= temperature;
        return temperature * logsumexp(scaled);
    });
    sv.params["T"] = temperature;
    return sv;
}

/// Temperature-scaled MSP (the temperature half of the ODIN score).
inline ScoreVector score_odin_t(const EvalSet& eval, double temperature = 1000.0) {
    if (!(temperature > 0.0)) throw InvalidParam("odin_t: temperature must be positive");
    auto sv = detail::score_rows(eval, ScoreKind::odin_t, [&](std::span<const double> row) {
        std::vector<double> scaled(row.begin(), row.end());
        for (double& v : scaled) v /= temperature;
        return detail::msp_of_row(scaled);
    });
    sv.params["T"] = temperature;
    return sv;
}

/// Clamps penultimate activations at the given percentile of all activations
/// pooled over this evaluation split, pushes them back through the classifier
/// head and returns the MSP of the rectified logits. The reference split for
/// the percentile is deliberately a caller choice; this function uses the
/// split it is given.
inline ScoreVector score_react(const EvalSet& eval, double pct = 90.0) {
    eval.validate();
    if (!eval.features || !eval.head)
        throw MissingModelAccess("react_msp: needs penultimate features and the classifier head");
    const Matrix& feats = *eval.features;
    const double threshold = percentile(feats.data(), pct);

    ScoreVector sv;
    sv.kind = ScoreKind::react_msp;
    sv.params["percentile"] = pct;
    sv.params["threshold"] = threshold;
    sv.values.resize(eval.size());
    std::vector<double> clipped(feats.cols());
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto row = feats.row(i);
        for (std::size_t d = 0; d < row.size(); ++d) clipped[d] = std::min(row[d], threshold);
        const auto logits = eval.head->apply(clipped);
        sv.values[i] = detail::msp_of_row(logits);
    }
    return sv;
}

/// Dispatcher used by reports and the CLI. Recognised params: "T" for
/// energy/odin_t, "percentile" for react_msp.
inline ScoreVector compute_score(const EvalSet& eval, ScoreKind kind,
                                 const std::map<std::string, double>& params = {}) {
    auto get = [&](const char* key, double fallback) {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    };
    switch (kind) {
        case ScoreKind::msp: return score_msp(eval);
        case ScoreKind::neg_entropy: return score_neg_entropy(eval);
        case ScoreKind::margin: return score_margin(eval);
        case ScoreKind::max_logit: return score_max_logit(eval);
        case ScoreKind::energy: return score_energy(eval, get("T", 1.0));
        case ScoreKind::odin_t: return score_odin_t(eval, get("T", 1000.0));
        case ScoreKind::react_msp: return score_react(eval, get("percentile", 90.0));
        case ScoreKind::doctor_none: break;  // reserved, intentionally unimplemented
    }
    throw InvalidParam(std::string("score kind '") + score_kind_name(kind) + "' is reserved");
}

}  // namespace fpkit
