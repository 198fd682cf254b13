#pragma once

#include <functional>
#include <optional>

#include "json.hpp"

#include "fpkit/common.hpp"
#include "fpkit/mlp.hpp"
#include "fpkit/scores.hpp"

namespace fpkit {

// ---------------------------------------------------------------------------
// Parametric world
// ---------------------------------------------------------------------------

/// One in-distribution class: isotropic Gaussian in d <= 2 dimensions.
struct GaussianComponent {
    std::vector<double> mean;
    double variance = 1.0;
    double prior = 0.5;
};

struct OodDensity {
    enum class Kind { gaussian, uniform_box } kind = Kind::uniform_box;
    // gaussian
    std::vector<double> mean;
    double variance = 1.0;
    // uniform_box
    std::vector<double> lo;
    std::vector<double> hi;
};

/// K Gaussian classes plus one OOD density, a mixture weight pi_in and the
/// reject cost c of the failure-prediction risk.
struct MixtureSpec {
    std::vector<GaussianComponent> components;
    OodDensity ood;
    double pi_in = 0.5;
    double reject_cost = 0.2;

    std::size_t dim() const { return components.empty() ? 0 : components.front().mean.size(); }

    void validate() const {
        if (components.size() < 2) throw InvalidInput("MixtureSpec: need at least two classes");
        const std::size_t d = dim();
        if (d < 1 || d > 2) throw InvalidInput("MixtureSpec: dimension must be 1 or 2");
        double prior_sum = 0.0;
        for (const auto& comp : components) {
            if (comp.mean.size() != d) throw InvalidInput("MixtureSpec: mixed component dimensions");
            if (!(comp.variance > 0.0)) throw InvalidInput("MixtureSpec: variance must be positive");
            if (comp.prior < 0.0) throw InvalidInput("MixtureSpec: negative prior");
            prior_sum += comp.prior;
        }
        if (std::abs(prior_sum - 1.0) > 1e-9) throw InvalidInput("MixtureSpec: class priors must sum to 1");
        // The density-ratio threshold (1-pi)/pi blows up toward the prior
        // edges; keep the mixture weight comfortably interior.
        if (!(pi_in > 0.01 && pi_in < 0.99))
            throw InvalidParam("MixtureSpec: pi_in must lie in (0.01, 0.99)");
        if (!(reject_cost > 0.0 && reject_cost < 1.0))
            throw InvalidParam("MixtureSpec: reject cost must lie in (0, 1)");
        if (ood.kind == OodDensity::Kind::gaussian) {
            if (ood.mean.size() != d || !(ood.variance > 0.0))
                throw InvalidInput("MixtureSpec: bad OOD gaussian");
        } else {
            if (ood.lo.size() != d || ood.hi.size() != d) throw InvalidInput("MixtureSpec: bad OOD box");
            for (std::size_t i = 0; i < d; ++i)
                if (!(ood.hi[i] > ood.lo[i])) throw InvalidInput("MixtureSpec: empty OOD box");
        }
    }
};

namespace detail {

inline double isotropic_gaussian_pdf(std::span<const double> x, std::span<const double> mean,
                                     double variance) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - mean[i];
        sq += diff * diff;
    }
    const double d = static_cast<double>(x.size());
    return std::exp(-0.5 * sq / variance) / std::pow(2.0 * M_PI * variance, 0.5 * d);
}

}  // namespace detail

inline double density_in(const MixtureSpec& spec, std::span<const double> x) {
    double p = 0.0;
    for (const auto& comp : spec.components)
        p += comp.prior * detail::isotropic_gaussian_pdf(x, comp.mean, comp.variance);
    return p;
}

inline double density_out(const MixtureSpec& spec, std::span<const double> x) {
    if (spec.ood.kind == OodDensity::Kind::gaussian)
        return detail::isotropic_gaussian_pdf(x, spec.ood.mean, spec.ood.variance);
    double volume = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < spec.ood.lo[i] || x[i] > spec.ood.hi[i]) return 0.0;
        volume *= spec.ood.hi[i] - spec.ood.lo[i];
    }
    return 1.0 / volume;
}

/// Exact class posterior P(y|x) by Bayes' rule over the class components.
inline std::vector<double> true_posterior(const MixtureSpec& spec, std::span<const double> x) {
    std::vector<double> post(spec.components.size());
    double sum = 0.0;
    for (std::size_t y = 0; y < post.size(); ++y) {
        post[y] = spec.components[y].prior *
                  detail::isotropic_gaussian_pdf(x, spec.components[y].mean, spec.components[y].variance);
        sum += post[y];
    }
    if (sum <= 0.0) {
        // Deep tails can underflow every likelihood; fall back to the nearest
        // component in Mahalanobis distance, which is the correct limit.
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t y = 0; y < post.size(); ++y) {
            double sq = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double diff = x[i] - spec.components[y].mean[i];
                sq += diff * diff;
            }
            const double dist = sq / spec.components[y].variance;
            if (dist < best_d) {
                best_d = dist;
                best = y;
            }
        }
        std::fill(post.begin(), post.end(), 0.0);
        post[best] = 1.0;
        return post;
    }
    for (double& v : post) v /= sum;
    return post;
}

inline int bayes_classifier(const MixtureSpec& spec, std::span<const double> x) {
    const auto post = true_posterior(spec, x);
    return argmax_row(post);
}

// ---------------------------------------------------------------------------
// Threshold rules
// ---------------------------------------------------------------------------

enum class RuleScore { true_posterior_max, density_ratio, msp_of_model };

inline const char* rule_score_name(RuleScore s) {
    switch (s) {
        case RuleScore::true_posterior_max: return "true_posterior_max";
        case RuleScore::density_ratio: return "density_ratio";
        case RuleScore::msp_of_model: return "msp_of_model";
    }
    return "?";
}

inline RuleScore parse_rule_score(const std::string& s) {
    for (RuleScore r : {RuleScore::true_posterior_max, RuleScore::density_ratio, RuleScore::msp_of_model})
        if (s == rule_score_name(r)) return r;
    throw InvalidParam("unknown rule score '" + s + "'");
}

/// Accept (g = 1) when the score strictly exceeds the threshold; a score
/// exactly at the threshold rejects. Boundary sets have measure zero under
/// every supported density, so this only matters for constructed ties.
struct ThresholdRule {
    RuleScore score = RuleScore::true_posterior_max;
    double threshold = 0.5;
    const MlpModel* model = nullptr;  // required for msp_of_model
};

inline double rule_score_value(const MixtureSpec& spec, const ThresholdRule& rule,
                               std::span<const double> x) {
    switch (rule.score) {
        case RuleScore::true_posterior_max: {
            const auto post = true_posterior(spec, x);
            return *std::max_element(post.begin(), post.end());
        }
        case RuleScore::density_ratio: {
            const double out = density_out(spec, x);
            const double in = density_in(spec, x);
            if (out <= 0.0) return std::numeric_limits<double>::infinity();
            return in / out;
        }
        case RuleScore::msp_of_model: {
            if (rule.model == nullptr) throw MissingModelAccess("msp_of_model: no model attached");
            Matrix input(1, x.size());
            for (std::size_t i = 0; i < x.size(); ++i) input(0, i) = x[i];
            const auto logits = forward(*rule.model, input);
            return detail::msp_of_row(logits.row(0));
        }
    }
    throw InvalidParam("rule_score_value: bad score id");
}

inline bool rule_accepts(const MixtureSpec& spec, const ThresholdRule& rule, std::span<const double> x) {
    return rule_score_value(spec, rule, x) > rule.threshold;
}

// ---------------------------------------------------------------------------
// Reject regions
// ---------------------------------------------------------------------------

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// A reject region: always queryable through the indicator; in one dimension
/// also materialised as a union of intervals (closed form where available,
/// otherwise located numerically inside the scan window).
struct Region {
    std::function<bool(std::span<const double>)> contains;
    std::vector<Interval> intervals;
    bool closed_form = false;
};

namespace detail {

inline std::pair<double, double> scan_window(const MixtureSpec& spec) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& comp : spec.components) {
        const double sigma = std::sqrt(comp.variance);
        lo = std::min(lo, comp.mean[0] - 10.0 * sigma);
        hi = std::max(hi, comp.mean[0] + 10.0 * sigma);
    }
    if (spec.ood.kind == OodDensity::Kind::uniform_box) {
        lo = std::min(lo, spec.ood.lo[0] - 1.0);
        hi = std::max(hi, spec.ood.hi[0] + 1.0);
    } else {
        const double sigma = std::sqrt(spec.ood.variance);
        lo = std::min(lo, spec.ood.mean[0] - 10.0 * sigma);
        hi = std::max(hi, spec.ood.mean[0] + 10.0 * sigma);
    }
    return {lo, hi};
}

/// Locates the intervals of a 1-D indicator by dense scan plus bisection.
inline std::vector<Interval> scan_intervals(const std::function<bool(double)>& inside, double lo,
                                            double hi) {
    constexpr int kGrid = 8192;
    auto refine = [&](double a, double b) {
        // invariant: inside(a) != inside(b)
        for (int it = 0; it < 60 && b - a > 1e-12; ++it) {
            const double mid = 0.5 * (a + b);
            if (inside(mid) == inside(a))
                a = mid;
            else
                b = mid;
        }
        return 0.5 * (a + b);
    };
    std::vector<Interval> intervals;
    double prev_x = lo;
    bool prev_in = inside(lo);
    double open_at = prev_in ? lo : 0.0;
    for (int i = 1; i <= kGrid; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / kGrid;
        const bool now = inside(x);
        if (now != prev_in) {
            const double edge = refine(prev_x, x);
            if (now)
                open_at = edge;
            else
                intervals.push_back({open_at, edge});
        }
        prev_x = x;
        prev_in = now;
    }
    if (prev_in) intervals.push_back({open_at, hi});
    return intervals;
}

}  // namespace detail

/// Chow's reject region {x : max_y P(y|x) < 1 - c}. For the 1-D two-Gaussian
/// equal-variance equal-prior world the interval is returned in closed form:
/// |x - midpoint| < (sigma^2 / delta_mu) * ln((1-c)/c).
inline Region chow_reject_region(const MixtureSpec& spec) {
    spec.validate();
    const double c = spec.reject_cost;
    Region region;
    region.contains = [spec, c](std::span<const double> x) {
        const auto post = true_posterior(spec, x);
        return *std::max_element(post.begin(), post.end()) < 1.0 - c;
    };
    if (spec.dim() != 1) return region;

    const bool symmetric_pair = spec.components.size() == 2 &&
                                spec.components[0].variance == spec.components[1].variance &&
                                spec.components[0].prior == spec.components[1].prior;
    if (symmetric_pair) {
        region.closed_form = true;
        if (c >= 0.5) return region;  // max posterior of 2 classes is >= 1/2: empty region
        const double mu0 = spec.components[0].mean[0];
        const double mu1 = spec.components[1].mean[0];
        const double delta = std::abs(mu1 - mu0);
        if (delta == 0.0) {
            // Identical components: posterior is (1/2, 1/2) everywhere, which
            // is below 1 - c for c < 1/2.
            const auto [lo, hi] = detail::scan_window(spec);
            region.intervals.push_back({lo, hi});
            return region;
        }
        const double mid = 0.5 * (mu0 + mu1);
        const double half = spec.components[0].variance / delta * std::log((1.0 - c) / c);
        region.intervals.push_back({mid - half, mid + half});
        return region;
    }
    const auto [lo, hi] = detail::scan_window(spec);
    const auto& contains = region.contains;
    region.intervals = detail::scan_intervals(
        [&](double x) {
            const double point[1] = {x};
            return contains(std::span<const double>(point, 1));
        },
        lo, hi);
    return region;
}

/// Density-ratio reject region {x : p(x|in)/p(x|out) <= (1-pi)/pi}; ties
/// reject, so when the two densities coincide at pi = 1/2 the whole space is
/// rejected.
inline Region ood_reject_region(const MixtureSpec& spec) {
    spec.validate();
    const double threshold = (1.0 - spec.pi_in) / spec.pi_in;
    Region region;
    region.contains = [spec, threshold](std::span<const double> x) {
        const double out = density_out(spec, x);
        if (out <= 0.0) return false;  // ratio is +infinity: accepted
        return density_in(spec, x) / out <= threshold;
    };
    if (spec.dim() != 1) return region;
    const auto [lo, hi] = detail::scan_window(spec);
    const auto& contains = region.contains;
    region.intervals = detail::scan_intervals(
        [&](double x) {
            const double point[1] = {x};
            return contains(std::span<const double>(point, 1));
        },
        lo, hi);
    return region;
}

// ---------------------------------------------------------------------------
// Monte Carlo risks
// ---------------------------------------------------------------------------

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

namespace detail {

inline std::vector<double> sample_gaussian(std::span<const double> mean, double variance, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(mean.size());
    const double sigma = std::sqrt(variance);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean[i] + sigma * normal(rng);
    return x;
}

inline std::vector<double> sample_ood(const MixtureSpec& spec, Rng& rng) {
    if (spec.ood.kind == OodDensity::Kind::gaussian)
        return sample_gaussian(spec.ood.mean, spec.ood.variance, rng);
    std::vector<double> x(spec.dim());
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::uniform_real_distribution<double> u(spec.ood.lo[i], spec.ood.hi[i]);
        x[i] = u(rng);
    }
    return x;
}

inline std::size_t sample_class(const MixtureSpec& spec, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng);
    for (std::size_t y = 0; y + 1 < spec.components.size(); ++y) {
        if (r < spec.components[y].prior) return y;
        r -= spec.components[y].prior;
    }
    return spec.components.size() - 1;
}

inline McEstimate summarize(std::span<const double> losses) {
    const double m = mean_of(losses);
    double var = 0.0;
    for (double v : losses) var += (v - m) * (v - m);
    var /= static_cast<double>(losses.size() - 1);
    return {m, std::sqrt(var / static_cast<double>(losses.size())), losses.size()};
}

}  // namespace detail

/// Monte-Carlo failure-prediction risk E[c 1(g=0) + 1(f* != y) 1(g=1)] under
/// the in-distribution mixture, with f* the Bayes classifier.
inline McEstimate fp_risk(const MixtureSpec& spec, const ThresholdRule& rule, std::size_t n_mc,
                          std::uint64_t seed) {
    spec.validate();
    if (n_mc < 2) throw InvalidParam("fp_risk: need at least two samples");
    Rng rng(seed);
    std::vector<double> losses(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const std::size_t y = detail::sample_class(spec, rng);
        const auto x = detail::sample_gaussian(spec.components[y].mean, spec.components[y].variance, rng);
        const bool accept = rule_accepts(spec, rule, x);
        if (!accept) {
            losses[i] = spec.reject_cost;
        } else {
            losses[i] = bayes_classifier(spec, x) != static_cast<int>(y) ? 1.0 : 0.0;
        }
    }
    return detail::summarize(losses);
}

/// Monte-Carlo OOD-detection risk pi_in P(reject|in) + (1-pi_in) P(accept|out).
inline McEstimate ood_risk(const MixtureSpec& spec, const ThresholdRule& rule, std::size_t n_mc,
                           std::uint64_t seed) {
    spec.validate();
    if (n_mc < 2) throw InvalidParam("ood_risk: need at least two samples");
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> losses(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const bool from_in = u(rng) < spec.pi_in;
        std::vector<double> x;
        if (from_in) {
            const std::size_t y = detail::sample_class(spec, rng);
            x = detail::sample_gaussian(spec.components[y].mean, spec.components[y].variance, rng);
        } else {
            x = detail::sample_ood(spec, rng);
        }
        const bool accept = rule_accepts(spec, rule, x);
        losses[i] = (from_in && !accept) || (!from_in && accept) ? 1.0 : 0.0;
    }
    return detail::summarize(losses);
}

struct SweepRow {
    double delta = 0.0;
    double fp_risk = 0.0;
    double fp_stderr = 0.0;
    double ood_risk = 0.0;
    double ood_stderr = 0.0;
};

/// Evaluates both risks across a threshold grid. All thresholds share one
/// sample set drawn from the seed (common random numbers), so rows are
/// directly comparable and the whole table is reproducible from the seed.
inline std::vector<SweepRow> sweep_thresholds(const MixtureSpec& spec, RuleScore score,
                                              std::span<const double> grid, std::size_t n_mc,
                                              std::uint64_t seed, const MlpModel* model = nullptr) {
    spec.validate();
    if (grid.empty()) throw InvalidParam("sweep_thresholds: empty grid");
    if (n_mc < 2) throw InvalidParam("sweep_thresholds: need at least two samples");
    ThresholdRule rule{score, 0.0, model};

    Rng rng(seed);
    std::vector<double> fp_score(n_mc), ood_score(n_mc);
    std::vector<char> fp_err(n_mc), ood_is_in(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const std::size_t y = detail::sample_class(spec, rng);
        const auto x = detail::sample_gaussian(spec.components[y].mean, spec.components[y].variance, rng);
        fp_score[i] = rule_score_value(spec, rule, x);
        fp_err[i] = bayes_classifier(spec, x) != static_cast<int>(y) ? 1 : 0;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const bool from_in = u(rng) < spec.pi_in;
        std::vector<double> x;
        if (from_in) {
            const std::size_t y = detail::sample_class(spec, rng);
            x = detail::sample_gaussian(spec.components[y].mean, spec.components[y].variance, rng);
        } else {
            x = detail::sample_ood(spec, rng);
        }
        ood_score[i] = rule_score_value(spec, rule, x);
        ood_is_in[i] = from_in ? 1 : 0;
    }

    std::vector<SweepRow> rows;
    std::vector<double> losses(n_mc);
    for (double delta : grid) {
        SweepRow row;
        row.delta = delta;
        for (std::size_t i = 0; i < n_mc; ++i)
            losses[i] = fp_score[i] > delta ? (fp_err[i] ? 1.0 : 0.0) : spec.reject_cost;
        auto fp = detail::summarize(losses);
        row.fp_risk = fp.value;
        row.fp_stderr = fp.std_error;
        for (std::size_t i = 0; i < n_mc; ++i) {
            const bool accept = ood_score[i] > delta;
            losses[i] = (ood_is_in[i] && !accept) || (!ood_is_in[i] && accept) ? 1.0 : 0.0;
        }
        auto ood = detail::summarize(losses);
        row.ood_risk = ood.value;
        row.ood_stderr = ood.std_error;
        rows.push_back(row);
    }
    return rows;
}

inline void save_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
    out << "delta,fp_risk,fp_stderr,ood_risk,ood_stderr\n";
    for (const auto& row : rows) {
        out << format_double(row.delta) << ',' << format_double(row.fp_risk) << ','
            << format_double(row.fp_stderr) << ',' << format_double(row.ood_risk) << ','
            << format_double(row.ood_stderr) << '\n';
    }
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
    MixtureSpec spec;
    if (!j.contains("components") || !j.contains("ood") || !j.contains("pi_in") ||
        !j.contains("reject_cost"))
        throw InvalidInput("mixture JSON needs components, ood, pi_in, reject_cost");
    for (const auto& cj : j["components"]) {
        GaussianComponent comp;
        comp.mean = cj.at("mean").get<std::vector<double>>();
        comp.variance = cj.at("variance").get<double>();
        comp.prior = cj.at("prior").get<double>();
        spec.components.push_back(std::move(comp));
    }
    const auto& oj = j["ood"];
    const std::string kind = oj.at("kind").get<std::string>();
    if (kind == "gaussian") {
        spec.ood.kind = OodDensity::Kind::gaussian;
        spec.ood.mean = oj.at("mean").get<std::vector<double>>();
        spec.ood.variance = oj.at("variance").get<double>();
    } else if (kind == "uniform_box") {
        spec.ood.kind = OodDensity::Kind::uniform_box;
        spec.ood.lo = oj.at("lo").get<std::vector<double>>();
        spec.ood.hi = oj.at("hi").get<std::vector<double>>();
    } else {
        throw InvalidInput("mixture JSON: unknown ood kind '" + kind + "'");
    }
    spec.pi_in = j["pi_in"].get<double>();
    spec.reject_cost = j["reject_cost"].get<double>();
    spec.validate();
    return spec;
}

inline nlohmann::json mixture_to_json(const MixtureSpec& spec) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : spec.components)
        comps.push_back({{"mean", c.mean}, {"variance", c.variance}, {"prior", c.prior}});
    nlohmann::json ood;
    if (spec.ood.kind == OodDensity::Kind::gaussian) {
        ood = {{"kind", "gaussian"}, {"mean", spec.ood.mean}, {"variance", spec.ood.variance}};
    } else {
        ood = {{"kind", "uniform_box"}, {"lo", spec.ood.lo}, {"hi", spec.ood.hi}};
    }
    return nlohmann::json{
        {"components", comps}, {"ood", ood}, {"pi_in", spec.pi_in}, {"reject_cost", spec.reject_cost}};
}

}  // namespace fpkit
