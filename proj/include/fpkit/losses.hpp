#pragma once

#include "fpkit/common.hpp"
#include "fpkit/mlp.hpp"
#include "fpkit/scores.hpp"

namespace fpkit {

enum class LossKind { ce, focal, label_smoothing, l1_logit, logitnorm, ce_plus_oe, ce_plus_crl };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::ce: return "ce";
        case LossKind::focal: return "focal";
        case LossKind::label_smoothing: return "label_smoothing";
        case LossKind::l1_logit: return "l1_logit";
        case LossKind::logitnorm: return "logitnorm";
        case LossKind::ce_plus_oe: return "ce_plus_oe";
        case LossKind::ce_plus_crl: return "ce_plus_crl";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    for (LossKind k : {LossKind::ce, LossKind::focal, LossKind::label_smoothing, LossKind::l1_logit,
                       LossKind::logitnorm, LossKind::ce_plus_oe, LossKind::ce_plus_crl}) {
        if (s == loss_kind_name(k)) return k;
    }
    throw InvalidParam("unknown loss '" + s + "'");
}

struct LossSpec {
    LossKind kind = LossKind::ce;
    double focal_gamma = 3.0;
    double ls_epsilon = 0.05;
    double l1_lambda = 0.01;
    double logitnorm_tau = 0.04;
    double oe_lambda = 0.5;
    double crl_lambda = 1.0;

    void validate() const {
        if (kind == LossKind::focal && focal_gamma < 0.0) throw InvalidParam("focal: gamma must be >= 0");
        if (kind == LossKind::label_smoothing && !(ls_epsilon >= 0.0 && ls_epsilon < 1.0))
            throw InvalidParam("label_smoothing: epsilon must be in [0, 1)");
        if (kind == LossKind::l1_logit && l1_lambda < 0.0) throw InvalidParam("l1_logit: lambda must be >= 0");
        if (kind == LossKind::logitnorm && !(logitnorm_tau > 0.0))
            throw InvalidParam("logitnorm: tau must be positive");
        if (kind == LossKind::ce_plus_oe && oe_lambda < 0.0) throw InvalidParam("oe: lambda must be >= 0");
        if (kind == LossKind::ce_plus_crl && crl_lambda < 0.0) throw InvalidParam("crl: lambda must be >= 0");
    }
};

/// One correctness-ranking hinge term: zero when the sample with the higher
/// historical correct rate is more confident by at least |c_i - c_j|. Equal
/// rates contribute nothing regardless of the confidences.
inline double crl_hinge(double rate_i, double rate_j, double conf_i, double conf_j) {
    const double dc = rate_i - rate_j;
    const double sign = dc > 0.0 ? 1.0 : (dc < 0.0 ? -1.0 : 0.0);
    return std::max(0.0, -sign * (conf_i - conf_j) + std::abs(dc));
}

/// Per-batch inputs for the correctness-ranking term: pair indices into the
/// batch and each batch sample's historical correct rate.
struct CrlBatch {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> correct_rate;
};

struct LossResult {
    double loss = 0.0;
    ParamVec grads;
    std::vector<int> predictions;  // argmax of the (unperturbed) logits
};

inline Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes) {
    Matrix t(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw InvalidInput("one_hot: label out of range");
        t(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

namespace detail {

// The softmax chain rule in the p-weighted form: given gp_k = p_k * dL/dp_k,
// dL/dz_k = gp_k - p_k * sum(gp). Avoids any division by p.
inline void softmax_chain(std::span<const double> p, std::span<const double> gp, std::span<double> dz) {
    double s = 0.0;
    for (double v : gp) s += v;
    for (std::size_t k = 0; k < p.size(); ++k) dz[k] = gp[k] - p[k] * s;
}

struct RowTerm {
    double loss = 0.0;
    std::vector<double> gp;  // p-weighted dL/dp for the softmax chain
};

// Cross-entropy against a soft target: loss -sum t*log p, gp = -t.
inline RowTerm ce_row(std::span<const double> t, std::span<const double> log_p) {
    RowTerm r;
    r.gp.assign(t.size(), 0.0);
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] != 0.0) {
            r.loss -= t[k] * log_p[k];
            r.gp[k] = -t[k];
        }
    }
    return r;
}

// Focal term -sum_k t_k (1-p_k)^gamma log p_k with soft targets; reduces to
// cross-entropy at gamma = 0.
inline RowTerm focal_row(std::span<const double> t, std::span<const double> p,
                         std::span<const double> log_p, double gamma) {
    RowTerm r;
    r.gp.assign(t.size(), 0.0);
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] == 0.0) continue;
        const double u = 1.0 - p[k];
        if (u <= 0.0) continue;  // p = 1: loss and gradient both vanish in the limit
        const double u_gamma = std::pow(u, gamma);
        r.loss -= t[k] * u_gamma * log_p[k];
        double gp = -t[k] * u_gamma;  // gamma = 0 leaves the plain CE term
        if (gamma > 0.0) gp += t[k] * gamma * std::pow(u, gamma - 1.0) * p[k] * log_p[k];
        r.gp[k] = gp;
    }
    return r;
}

}  // namespace detail

/// Loss value and manual-backprop parameter gradients for one batch.
/// `targets` is a row-stochastic m x K matrix (one-hot labels or mixup
/// blends). Outliers feed the OE term; `crl` feeds the ranking term.
inline LossResult loss_and_grad(const MlpModel& model, const Matrix& batch, const Matrix& targets,
                                const LossSpec& spec, const Matrix* outliers = nullptr,
                                const CrlBatch* crl = nullptr) {
    spec.validate();
    if (batch.rows() != targets.rows() || targets.cols() != model.output_dim())
        throw InvalidInput("loss_and_grad: target shape mismatch");
    if (batch.rows() == 0) throw InvalidInput("loss_and_grad: empty batch");
    if (spec.kind == LossKind::ce_plus_oe && (outliers == nullptr || outliers->rows() == 0))
        throw InvalidParam("ce_plus_oe: outlier batch required");
    if (spec.kind == LossKind::ce_plus_crl && crl == nullptr)
        throw InvalidParam("ce_plus_crl: crl batch info required");

    const std::size_t m = batch.rows();
    const std::size_t k = model.output_dim();
    const auto cache = forward_cached(model, batch);
    const Matrix& logits = cache.logits();

    LossResult result;
    result.predictions.resize(m);

    // Per-row softmax, log-softmax and confidence margins.
    Matrix probs(m, k);
    Matrix log_probs(m, k);
    std::vector<double> margin_conf(m);
    std::vector<std::size_t> top1(m), top2(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto z = logits.row(i);
        const double lse = logsumexp(z);
        for (std::size_t c = 0; c < k; ++c) {
            log_probs(i, c) = z[c] - lse;
            probs(i, c) = std::exp(log_probs(i, c));
        }
        result.predictions[i] = argmax_row(z);
        std::size_t a = 0, b = 1;
        if (probs(i, b) > probs(i, a)) std::swap(a, b);
        for (std::size_t c = 2; c < k; ++c) {
            if (probs(i, c) > probs(i, a)) {
                b = a;
                a = c;
            } else if (probs(i, c) > probs(i, b)) {
                b = c;
            }
        }
        top1[i] = a;
        top2[i] = b;
        margin_conf[i] = probs(i, a) - probs(i, b);
    }

    Matrix dlogits(m, k);
    double total_loss = 0.0;
    std::vector<double> gp(k);
    std::vector<double> dz(k);
    std::vector<double> smoothed(k);

    // dL/dp contributions from the CRL pairs, accumulated per row before the
    // softmax chain is applied.
    Matrix crl_dp;
    if (spec.kind == LossKind::ce_plus_crl) {
        crl_dp = Matrix(m, k);
        if (crl->correct_rate.size() != m) throw InvalidInput("crl: correct_rate length mismatch");
        const std::size_t n_pairs = crl->pairs.size();
        if (n_pairs > 0) {
            double crl_loss_sum = 0.0;
            const double pair_w = spec.crl_lambda / static_cast<double>(n_pairs);
            for (const auto& [i, j] : crl->pairs) {
                if (i >= m || j >= m) throw InvalidInput("crl: pair index out of range");
                const double dc = crl->correct_rate[i] - crl->correct_rate[j];
                const double sign = dc > 0.0 ? 1.0 : (dc < 0.0 ? -1.0 : 0.0);
                const double hinge =
                    crl_hinge(crl->correct_rate[i], crl->correct_rate[j], margin_conf[i], margin_conf[j]);
                if (sign != 0.0 && hinge > 0.0) {
                    crl_loss_sum += hinge;
                    // d hinge / d kappa_i = -sign, / d kappa_j = +sign;
                    // kappa = p[top1] - p[top2].
                    crl_dp(i, top1[i]) += -sign * pair_w;
                    crl_dp(i, top2[i]) += sign * pair_w;
                    crl_dp(j, top1[j]) += sign * pair_w;
                    crl_dp(j, top2[j]) += -sign * pair_w;
                }
            }
            total_loss += spec.crl_lambda * crl_loss_sum / static_cast<double>(n_pairs);
        }
    }

    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto t = targets.row(i);
        const auto p = probs.row(i);
        const auto lp = log_probs.row(i);
        detail::RowTerm term;
        switch (spec.kind) {
            case LossKind::ce:
            case LossKind::l1_logit:
            case LossKind::ce_plus_oe:
            case LossKind::ce_plus_crl:
                term = detail::ce_row(t, lp);
                break;
            case LossKind::focal:
                term = detail::focal_row(t, p, lp, spec.focal_gamma);
                break;
            case LossKind::label_smoothing: {
                const double eps = spec.ls_epsilon;
                const double off = eps / static_cast<double>(k - 1);
                for (std::size_t c = 0; c < k; ++c) smoothed[c] = (1.0 - eps) * t[c] + off * (1.0 - t[c]);
                term = detail::ce_row(smoothed, lp);
                break;
            }
            case LossKind::logitnorm: {
                // Cross-entropy on z / (tau * ||z||); gradient pulled back
                // through the normalisation.
                const auto z = logits.row(i);
                double norm = 0.0;
                for (double v : z) norm += v * v;
                norm = std::sqrt(norm) + 1e-12;
                std::vector<double> u(k);
                for (std::size_t c = 0; c < k; ++c) u[c] = z[c] / (spec.logitnorm_tau * norm);
                const double lse = logsumexp(u);
                std::vector<double> du(k);
                for (std::size_t c = 0; c < k; ++c) {
                    const double log_pu = u[c] - lse;
                    if (t[c] != 0.0) total_loss -= inv_m * t[c] * log_pu;
                    du[c] = std::exp(log_pu) - t[c];
                }
                double du_dot_zhat = 0.0;
                for (std::size_t c = 0; c < k; ++c) du_dot_zhat += du[c] * (z[c] / norm);
                for (std::size_t c = 0; c < k; ++c)
                    dlogits(i, c) = inv_m * (du[c] - du_dot_zhat * z[c] / norm) / (spec.logitnorm_tau * norm);
                continue;  // handled fully, no softmax chain on raw logits
            }
        }
        total_loss += inv_m * term.loss;
        for (std::size_t c = 0; c < k; ++c) gp[c] = inv_m * term.gp[c];
        if (spec.kind == LossKind::ce_plus_crl) {
            for (std::size_t c = 0; c < k; ++c) gp[c] += p[c] * crl_dp(i, c);
        }
        detail::softmax_chain(p, gp, dz);
        for (std::size_t c = 0; c < k; ++c) dlogits(i, c) = dz[c];
        if (spec.kind == LossKind::l1_logit) {
            const auto z = logits.row(i);
            for (std::size_t c = 0; c < k; ++c) {
                total_loss += inv_m * spec.l1_lambda * std::abs(z[c]);
                const double sign = z[c] > 0.0 ? 1.0 : (z[c] < 0.0 ? -1.0 : 0.0);
                dlogits(i, c) += inv_m * spec.l1_lambda * sign;
            }
        }
    }

    result.grads = backward(model, cache, dlogits);

    // Outlier exposure: KL(uniform || softmax) on the outlier batch, pushing
    // outlier predictions toward the uniform distribution.
    if (spec.kind == LossKind::ce_plus_oe) {
        const auto out_cache = forward_cached(model, *outliers);
        const Matrix& out_logits = out_cache.logits();
        const std::size_t mo = outliers->rows();
        const double w = spec.oe_lambda / static_cast<double>(mo);
        Matrix d_out(mo, k);
        const double log_k = std::log(static_cast<double>(k));
        for (std::size_t i = 0; i < mo; ++i) {
            const auto z = out_logits.row(i);
            const double lse = logsumexp(z);
            double kl = -log_k;
            for (std::size_t c = 0; c < k; ++c) {
                const double log_p = z[c] - lse;
                kl -= log_p / static_cast<double>(k);
                d_out(i, c) = w * (std::exp(log_p) - 1.0 / static_cast<double>(k));
            }
            total_loss += w * kl;
        }
        const auto out_grads = backward(model, out_cache, d_out);
        result.grads.zip(out_grads, [](double& a, double bv) { a += bv; });
    }

    result.loss = total_loss;
    return result;
}

}  // namespace fpkit
