#pragma once

#include <optional>

#include "fpkit/common.hpp"
#include "fpkit/datasets.hpp"
#include "fpkit/eval_set.hpp"
#include "fpkit/losses.hpp"
#include "fpkit/metrics.hpp"
#include "fpkit/mlp.hpp"

namespace fpkit {

enum class Method { sgd, sam, swa, fmfp };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::sgd: return "sgd";
        case Method::sam: return "sam";
        case Method::swa: return "swa";
        case Method::fmfp: return "fmfp";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::sgd, Method::sam, Method::swa, Method::fmfp})
        if (s == method_name(m)) return m;
    throw InvalidParam("unknown method '" + s + "'");
}

inline bool uses_sam(Method m) { return m == Method::sam || m == Method::fmfp; }
inline bool uses_swa(Method m) { return m == Method::swa || m == Method::fmfp; }

struct TrainConfig {
    Method method = Method::sgd;
    LossSpec loss;
    std::optional<double> mixup_alpha;
    int epochs = 200;
    int batch_size = 128;
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double sam_rho = 0.0;  // must be positive exactly when the method takes SAM steps
    int swa_start = 100;   // 1-based epoch at which the averaging window opens
    int swa_cycle = 5;
    std::uint64_t seed = 1;
    std::vector<std::size_t> hidden = {32, 32};

    void validate() const {
        loss.validate();
        if (epochs < 0) throw InvalidParam("train: epochs must be >= 0");
        if (batch_size < 1) throw InvalidParam("train: batch_size must be >= 1");
        if (!(base_lr > 0.0)) throw InvalidParam("train: base_lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw InvalidParam("train: momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw InvalidParam("train: weight_decay must be >= 0");
        if (uses_sam(method) != (sam_rho > 0.0))
            throw InvalidParam("train: sam_rho must be positive exactly for methods sam and fmfp");
        if (uses_swa(method)) {
            if (swa_cycle < 1) throw InvalidParam("train: swa_cycle must be >= 1");
            if (swa_start < 1) throw InvalidParam("train: swa_start must be >= 1");
            if (epochs > 0 && swa_start >= epochs)
                throw InvalidParam("train: swa_start must be < epochs for swa/fmfp");
        }
        if (mixup_alpha && !(*mixup_alpha > 0.0))
            throw InvalidParam("train: mixup_alpha must be positive when set");
    }
};

// ---------------------------------------------------------------------------
// Optimizer pieces
// ---------------------------------------------------------------------------

/// First-order SAM ascent direction: rho * g / ||g||_2 over the whole
/// parameter vector; zero when the gradient is (numerically) zero.
inline ParamVec sam_perturb(const ParamVec& grads, double rho) {
    if (!(rho > 0.0)) throw InvalidParam("sam_perturb: rho must be positive");
    ParamVec eps = grads;
    const double norm = grads.norm2();
    if (norm < 1e-12) {
        eps.scale(0.0);
        return eps;
    }
    eps.scale(rho / norm);
    return eps;
}

/// SGD with momentum and decoupled-from-nothing weight decay (decay is added
/// to the gradient before the momentum buffer, the classic recipe):
///   v <- mu * v + (g + wd * theta);  theta <- theta - lr * v
inline void sgd_update(MlpModel& model, const ParamVec& grads, ParamVec& velocity, double lr,
                       double momentum, double weight_decay) {
    for (std::size_t l = 0; l < model.w.size(); ++l) {
        auto& theta = model.w[l].data();
        const auto& g = grads.w[l].data();
        auto& v = velocity.w[l].data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = momentum * v[i] + g[i] + weight_decay * theta[i];
            theta[i] -= lr * v[i];
        }
    }
    for (std::size_t l = 0; l < model.b.size(); ++l) {
        auto& theta = model.b[l];
        const auto& g = grads.b[l];
        auto& v = velocity.b[l];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = momentum * v[i] + g[i] + weight_decay * theta[i];
            theta[i] -= lr * v[i];
        }
    }
}

struct StepResult {
    double loss = 0.0;               // loss at the unperturbed weights
    std::vector<int> predictions;    // argmax at the unperturbed weights
};

inline StepResult sgd_step(MlpModel& model, ParamVec& velocity, const Matrix& batch,
                           const Matrix& targets, const LossSpec& spec, double lr, double momentum,
                           double weight_decay, const Matrix* outliers = nullptr,
                           const CrlBatch* crl = nullptr) {
    auto res = loss_and_grad(model, batch, targets, spec, outliers, crl);
    sgd_update(model, res.grads, velocity, lr, momentum, weight_decay);
    return {res.loss, std::move(res.predictions)};
}

/// One SAM step: gradients at theta give the worst-case perturbation, the
/// update uses the gradients re-evaluated at theta + eps. The perturbed
/// weights are transient. With rho = 0 this degenerates to sgd_step bitwise.
inline StepResult sam_step(MlpModel& model, ParamVec& velocity, const Matrix& batch,
                           const Matrix& targets, const LossSpec& spec, double rho, double lr,
                           double momentum, double weight_decay, const Matrix* outliers = nullptr,
                           const CrlBatch* crl = nullptr) {
    auto first = loss_and_grad(model, batch, targets, spec, outliers, crl);
    ParamVec eps = first.grads;
    const double norm = eps.norm2();
    if (rho > 0.0 && norm >= 1e-12) {
        eps.scale(rho / norm);
    } else {
        eps.scale(0.0);
    }
    model.add_scaled(eps, 1.0);
    auto second = loss_and_grad(model, batch, targets, spec, outliers, crl);
    model.add_scaled(eps, -1.0);
    sgd_update(model, second.grads, velocity, lr, momentum, weight_decay);
    return {first.loss, std::move(first.predictions)};
}

// ---------------------------------------------------------------------------
// Stochastic weight averaging
// ---------------------------------------------------------------------------

/// Running arithmetic mean of flattened checkpoints.
struct SwaState {
    std::vector<double> averaged;
    std::size_t count = 0;
};

inline void swa_update(SwaState& state, std::span<const double> theta) {
    if (state.count == 0) {
        state.averaged.assign(theta.begin(), theta.end());
        state.count = 1;
        return;
    }
    if (state.averaged.size() != theta.size()) throw InvalidInput("swa_update: size mismatch");
    const double s = static_cast<double>(state.count);
    for (std::size_t i = 0; i < theta.size(); ++i)
        state.averaged[i] = (state.averaged[i] * s + theta[i]) / (s + 1.0);
    state.count += 1;
}

// ---------------------------------------------------------------------------
// Correctness history for CRL
// ---------------------------------------------------------------------------

/// Running per-training-sample record of how often the model classified the
/// sample correctly when it was examined. Unexamined samples report rate 0.
struct CrlHistory {
    std::vector<std::size_t> correct_count;
    std::vector<std::size_t> examined_count;

    explicit CrlHistory(std::size_t n = 0) : correct_count(n, 0), examined_count(n, 0) {}

    double rate(std::size_t i) const {
        return examined_count[i] == 0
                   ? 0.0
                   : static_cast<double>(correct_count[i]) / static_cast<double>(examined_count[i]);
    }

    void record(std::size_t i, bool correct) {
        examined_count[i] += 1;
        if (correct) correct_count[i] += 1;
    }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double test_auroc = 0.0;  // failure-prediction AUROC of MSP; NaN when degenerate
};

struct TrainResult {
    MlpModel final_model;
    std::optional<MlpModel> swa_model;
    std::vector<EpochStats> history;

    /// The model the run hands to evaluation: the averaged weights when the
    /// method produced them, the last-step weights otherwise.
    const MlpModel& eval_model() const { return swa_model ? *swa_model : final_model; }
};

inline EvalSet eval_set_from_model(const MlpModel& model, const Matrix& x, const std::vector<int>& y) {
    EvalSet eval;
    eval.logits = forward(model, x);
    eval.labels = y;
    return eval;
}

namespace detail {

/// Cyclical schedule for the averaging phase: within each cycle the rate
/// falls linearly from base_lr to base_lr/10, and a checkpoint is collected
/// at the end of each descent.
inline double lr_for_epoch(const TrainConfig& cfg, int epoch) {
    if (!uses_swa(cfg.method) || epoch < cfg.swa_start || cfg.swa_cycle < 2) return cfg.base_lr;
    const int phase = (epoch - cfg.swa_start) % cfg.swa_cycle;
    const double t = static_cast<double>(phase) / static_cast<double>(cfg.swa_cycle - 1);
    return cfg.base_lr * (1.0 - 0.9 * t);
}

inline bool swa_checkpoint_epoch(const TrainConfig& cfg, int epoch) {
    if (!uses_swa(cfg.method) || epoch < cfg.swa_start) return false;
    return (epoch - cfg.swa_start) % cfg.swa_cycle == cfg.swa_cycle - 1;
}

/// Unvalidated training loop; train() is the public entry point. Kept
/// callable on its own so update-path identities (e.g. the rho = 0
/// degeneration to plain SGD) can be exercised on full traces.
inline TrainResult train_loop(const TrainConfig& cfg, const Dataset& data) {
    const std::size_t n = data.x_train.rows();
    const std::size_t k = static_cast<std::size_t>(data.num_classes);
    if (data.y_train.size() != n) throw InvalidInput("train: label length mismatch");
    if (cfg.loss.kind == LossKind::ce_plus_oe && (!data.outliers || data.outliers->rows() == 0))
        throw InvalidParam("train: ce_plus_oe needs a non-empty outlier pool in the dataset");

    Rng rng(cfg.seed);
    std::vector<std::size_t> arch;
    arch.push_back(data.x_train.cols());
    arch.insert(arch.end(), cfg.hidden.begin(), cfg.hidden.end());
    arch.push_back(k);
    MlpModel model = MlpModel::init(arch, rng);

    TrainResult result;
    if (cfg.epochs == 0 || n == 0) {
        result.final_model = model;
        return result;
    }

    ParamVec velocity = model.zeros_like();
    SwaState swa;
    CrlHistory history(n);
    const bool crl_active = cfg.loss.kind == LossKind::ce_plus_crl;
    const bool oe_active = cfg.loss.kind == LossKind::ce_plus_oe;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> outlier_order;
    if (oe_active) {
        outlier_order.resize(data.outliers->rows());
        std::iota(outlier_order.begin(), outlier_order.end(), std::size_t{0});
    }
    std::size_t outlier_cursor = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_for_epoch(cfg, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        if (oe_active) std::shuffle(outlier_order.begin(), outlier_order.end(), rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t m = std::min<std::size_t>(cfg.batch_size, n - start);
            Matrix x(m, data.x_train.cols());
            std::vector<int> labels(m);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t src = order[start + i];
                for (std::size_t d = 0; d < x.cols(); ++d) x(i, d) = data.x_train(src, d);
                labels[i] = data.y_train[src];
            }
            Matrix targets = one_hot(labels, k);

            // All per-batch randomness is drawn before the step so that one-
            // and two-pass methods consume the stream identically.
            if (cfg.mixup_alpha) {
                std::gamma_distribution<double> gamma(*cfg.mixup_alpha, 1.0);
                const double ga = gamma(rng);
                const double gb = gamma(rng);
                const double lam = ga / (ga + gb);
                std::vector<std::size_t> perm(m);
                std::iota(perm.begin(), perm.end(), std::size_t{0});
                std::shuffle(perm.begin(), perm.end(), rng);
                Matrix mixed_x(m, x.cols());
                Matrix mixed_t(m, k);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t d = 0; d < x.cols(); ++d)
                        mixed_x(i, d) = lam * x(i, d) + (1.0 - lam) * x(perm[i], d);
                    for (std::size_t c = 0; c < k; ++c)
                        mixed_t(i, c) = lam * targets(i, c) + (1.0 - lam) * targets(perm[i], c);
                }
                x = std::move(mixed_x);
                targets = std::move(mixed_t);
            }

            CrlBatch crl;
            if (crl_active) {
                crl.correct_rate.resize(m);
                for (std::size_t i = 0; i < m; ++i) crl.correct_rate[i] = history.rate(order[start + i]);
                std::vector<std::size_t> perm(m);
                std::iota(perm.begin(), perm.end(), std::size_t{0});
                std::shuffle(perm.begin(), perm.end(), rng);
                for (std::size_t i = 0; i + 1 < m; i += 2) crl.pairs.emplace_back(perm[i], perm[i + 1]);
            }

            std::optional<Matrix> outlier_batch;
            if (oe_active) {
                const std::size_t mo = std::min<std::size_t>(m, outlier_order.size());
                outlier_batch.emplace(mo, data.outliers->cols());
                for (std::size_t i = 0; i < mo; ++i) {
                    const std::size_t src = outlier_order[outlier_cursor % outlier_order.size()];
                    ++outlier_cursor;
                    for (std::size_t d = 0; d < outlier_batch->cols(); ++d)
                        (*outlier_batch)(i, d) = (*data.outliers)(src, d);
                }
            }

            StepResult step;
            const Matrix* out_ptr = outlier_batch ? &*outlier_batch : nullptr;
            const CrlBatch* crl_ptr = crl_active ? &crl : nullptr;
            if (uses_sam(cfg.method)) {
                step = sam_step(model, velocity, x, targets, cfg.loss, cfg.sam_rho, lr, cfg.momentum,
                                cfg.weight_decay, out_ptr, crl_ptr);
            } else {
                step = sgd_step(model, velocity, x, targets, cfg.loss, lr, cfg.momentum,
                                cfg.weight_decay, out_ptr, crl_ptr);
            }
            if (!std::isfinite(step.loss))
                throw DivergedTraining("training diverged at epoch " + std::to_string(epoch), epoch);
            loss_sum += step.loss;
            ++batches;

            if (crl_active) {
                // Record correctness against the dominant target class, which
                // is the plain label whenever mixup is off.
                for (std::size_t i = 0; i < m; ++i) {
                    const int dominant = argmax_row(targets.row(i));
                    history.record(order[start + i], step.predictions[i] == dominant);
                }
            }
        }

        if (swa_checkpoint_epoch(cfg, epoch)) {
            const auto flat = model.to_flat();
            swa_update(swa, flat);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(batches);
        const auto test_eval = eval_set_from_model(model, data.x_test, data.y_test);
        if (!test_eval.logits.all_finite())
            throw DivergedTraining("training diverged at epoch " + std::to_string(epoch), epoch);
        const auto mask = correctness(test_eval);
        stats.test_acc = accuracy(mask);
        try {
            stats.test_auroc = auroc(score_msp(test_eval).values, mask.correct);
        } catch (const DegenerateLabels&) {
            stats.test_auroc = std::numeric_limits<double>::quiet_NaN();
        }
        result.history.push_back(stats);
    }

    result.final_model = model;
    if (swa.count > 0) {
        MlpModel averaged = model;
        averaged.from_flat(swa.averaged);
        result.swa_model = std::move(averaged);
    }
    return result;
}

}  // namespace detail

/// Trains the built-in MLP with the requested method. Deterministic for a
/// fixed config: the seed drives initialisation, shuffling and every draw.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    return detail::train_loop(cfg, data);
}

inline void save_history_csv(const std::vector<EpochStats>& history, std::ostream& out) {
    out << "epoch,train_loss,test_acc,test_auroc\n";
    for (const auto& row : history) {
        out << row.epoch << ',' << format_double(row.train_loss) << ',' << format_double(row.test_acc)
            << ',' << format_double(row.test_auroc) << '\n';
    }
}

}  // namespace fpkit
