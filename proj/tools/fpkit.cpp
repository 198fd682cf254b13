// fpkit command-line front end: evaluate, rc-curve, fit-temperature,
// decompose, train, simulate. Data goes to stdout (or --output), logs and the
// resolved configuration go to stderr. Exit codes: 0 ok, 2 input error,
// 3 numeric failure, 4 diverged training.

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "fpkit/fpkit.hpp"

namespace {

using nlohmann::json;

int max_threads() {
    if (const char* env = std::getenv("FPKIT_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void emit(const std::string& payload, const std::string& output_path) {
    if (output_path.empty()) {
        std::cout << payload;
        return;
    }
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw fpkit::IoError("cannot write " + output_path);
    out << payload;
}

void log_config(const json& resolved) { std::cerr << "config " << resolved.dump() << "\n"; }

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_grid(const std::string& grid_spec) {
    // "lo:hi:count" or "lo:hi:count:log"
    auto parts = [&] {
        std::vector<std::string> out;
        std::stringstream ss(grid_spec);
        std::string item;
        while (std::getline(ss, item, ':')) out.push_back(item);
        return out;
    }();
    if (parts.size() != 3 && parts.size() != 4)
        throw fpkit::InvalidParam("grid must be lo:hi:count or lo:hi:count:log");
    const double lo = std::strtod(parts[0].c_str(), nullptr);
    const double hi = std::strtod(parts[1].c_str(), nullptr);
    const long count = std::strtol(parts[2].c_str(), nullptr, 10);
    const bool log_scale = parts.size() == 4 && parts[3] == "log";
    if (count < 1) throw fpkit::InvalidParam("grid count must be >= 1");
    if (log_scale && (lo <= 0.0 || hi <= 0.0)) throw fpkit::InvalidParam("log grid needs positive bounds");
    std::vector<double> grid(count);
    for (long i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        grid[i] = log_scale ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                            : lo + t * (hi - lo);
    }
    return grid;
}

struct EvaluateArgs {
    std::string input;
    std::string features;
    std::string head;
    std::string scores = "msp";
    double energy_t = 1.0;
    double odin_t = 1000.0;
    double react_percentile = 90.0;
    int ece_bins = 15;
    bool x1000 = false;
    std::string output;
};

fpkit::EvalSet load_full_eval(const std::string& input, const std::string& features,
                              const std::string& head) {
    auto eval = fpkit::load_eval_csv(input);
    if (!features.empty()) eval.features = fpkit::load_features_csv(features);
    if (!head.empty()) eval.head = fpkit::load_head_json(head);
    eval.validate();
    return eval;
}

int run_evaluate(const EvaluateArgs& args) {
    const auto eval = load_full_eval(args.input, args.features, args.head);
    const auto kinds = split_list(args.scores);
    if (kinds.empty()) throw fpkit::InvalidParam("no scores requested");

    json resolved{{"cmd", "evaluate"},     {"input", args.input},
                  {"features", args.features}, {"head", args.head},
                  {"scores", kinds},       {"energy_t", args.energy_t},
                  {"odin_t", args.odin_t}, {"react_percentile", args.react_percentile},
                  {"ece_bins", args.ece_bins}, {"x1000", args.x1000},
                  {"threads", max_threads()}, {"log_base", "natural"}};
    log_config(resolved);

    auto report_for = [&](const std::string& name) {
        const auto kind = fpkit::parse_score_kind(name);
        std::map<std::string, double> params;
        if (kind == fpkit::ScoreKind::energy) params["T"] = args.energy_t;
        if (kind == fpkit::ScoreKind::odin_t) params["T"] = args.odin_t;
        if (kind == fpkit::ScoreKind::react_msp) params["percentile"] = args.react_percentile;
        return fpkit::full_report(eval, kind, params, args.ece_bins);
    };

    std::vector<fpkit::MetricsReport> reports(kinds.size());
    const int threads = std::min<int>(max_threads(), static_cast<int>(kinds.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < kinds.size(); ++i) reports[i] = report_for(kinds[i]);
    } else {
        std::vector<std::future<fpkit::MetricsReport>> futures;
        futures.reserve(kinds.size());
        for (const auto& name : kinds)
            futures.push_back(std::async(std::launch::async, report_for, name));
        for (std::size_t i = 0; i < futures.size(); ++i) reports[i] = futures[i].get();
    }

    json out;
    out["reports"] = json::array();
    const double scale = args.x1000 ? 1000.0 : 1.0;
    for (const auto& report : reports) out["reports"].push_back(fpkit::report_to_json(report, scale));
    emit(out.dump(2) + "\n", args.output);
    return 0;
}

struct RcArgs {
    std::string input;
    std::string features;
    std::string head;
    std::string score = "msp";
    double energy_t = 1.0;
    double odin_t = 1000.0;
    double react_percentile = 90.0;
    std::string output;
};

int run_rc_curve(const RcArgs& args) {
    const auto eval = load_full_eval(args.input, args.features, args.head);
    log_config(json{{"cmd", "rc-curve"}, {"input", args.input}, {"score", args.score}});
    const auto kind = fpkit::parse_score_kind(args.score);
    std::map<std::string, double> params;
    if (kind == fpkit::ScoreKind::energy) params["T"] = args.energy_t;
    if (kind == fpkit::ScoreKind::odin_t) params["T"] = args.odin_t;
    if (kind == fpkit::ScoreKind::react_msp) params["percentile"] = args.react_percentile;
    const auto score = fpkit::compute_score(eval, kind, params);
    const auto curve = fpkit::rc_curve(score, fpkit::correctness(eval));
    std::ostringstream out;
    fpkit::save_rc_curve_csv(curve, out);
    emit(out.str(), args.output);
    return 0;
}

struct FitTempArgs {
    std::string input;
    std::string output;
    std::string write_scaled;
};

int run_fit_temperature(const FitTempArgs& args) {
    const auto eval = fpkit::load_eval_csv(args.input);
    log_config(json{{"cmd", "fit-temperature"},
                    {"input", args.input},
                    {"search_box", {fpkit::kTemperatureMin, fpkit::kTemperatureMax}},
                    {"tolerance", 1e-4},
                    {"log_base", "natural"}});
    const auto fit = fpkit::fit_temperature(eval);
    if (!fit.warning.empty()) std::cerr << "warning: " << fit.warning << "\n";
    emit(fpkit::temperature_fit_to_json(fit).dump(2) + "\n", args.output);
    if (!args.write_scaled.empty()) {
        const auto scaled = fpkit::apply_temperature(eval, fit.temperature);
        fpkit::save_eval_csv(scaled, args.write_scaled);
    }
    return 0;
}

struct DecomposeArgs {
    std::string input;
    std::string rule = "log_loss";
    int bins = 15;
    std::string posterior;
    std::string output;
};

int run_decompose(const DecomposeArgs& args) {
    const auto eval = fpkit::load_eval_csv(args.input);
    log_config(json{{"cmd", "decompose"},
                    {"input", args.input},
                    {"rule", args.rule},
                    {"bins", args.bins},
                    {"posterior", args.posterior},
                    {"log_base", "natural"}});
    const auto rule = fpkit::parse_scoring_rule(args.rule);
    std::optional<fpkit::Matrix> q;
    if (!args.posterior.empty()) q = fpkit::load_matrix_csv(args.posterior, "q");
    const auto est = fpkit::decompose_score(eval, rule, args.bins, q);
    emit(fpkit::decomposition_to_json(est).dump(2) + "\n", args.output);
    return 0;
}

struct TrainArgs {
    std::string method = "sgd";
    std::string loss = "ce";
    double focal_gamma = 3.0;
    double ls_epsilon = 0.05;
    double l1_lambda = 0.01;
    double logitnorm_tau = 0.04;
    double oe_lambda = 0.5;
    double crl_lambda = 1.0;
    double mixup_alpha = 0.0;  // 0 disables
    std::string dataset = "two_moons";
    std::size_t n = 500;
    double noise = 0.15;
    double label_noise = 0.0;
    double outlier_noise = 0.3;
    int epochs = 200;
    int batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double rho = 0.05;
    int swa_start = 100;
    int swa_cycle = 5;
    std::string hidden = "32,32";
    std::uint64_t seed = 1;
    std::string model_out;
    std::string logits_out;
    std::string history_out;
};

int run_train(const TrainArgs& args) {
    fpkit::TrainConfig cfg;
    cfg.method = fpkit::parse_method(args.method);
    cfg.loss.kind = fpkit::parse_loss_kind(args.loss);
    cfg.loss.focal_gamma = args.focal_gamma;
    cfg.loss.ls_epsilon = args.ls_epsilon;
    cfg.loss.l1_lambda = args.l1_lambda;
    cfg.loss.logitnorm_tau = args.logitnorm_tau;
    cfg.loss.oe_lambda = args.oe_lambda;
    cfg.loss.crl_lambda = args.crl_lambda;
    if (args.mixup_alpha > 0.0) cfg.mixup_alpha = args.mixup_alpha;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    cfg.base_lr = args.lr;
    cfg.momentum = args.momentum;
    cfg.weight_decay = args.weight_decay;
    cfg.sam_rho = fpkit::uses_sam(cfg.method) ? args.rho : 0.0;
    cfg.swa_start = args.swa_start;
    cfg.swa_cycle = args.swa_cycle;
    cfg.seed = args.seed;
    cfg.hidden.clear();
    for (const auto& h : split_list(args.hidden)) cfg.hidden.push_back(std::strtoul(h.c_str(), nullptr, 10));

    auto data = fpkit::make_dataset(fpkit::parse_dataset_kind(args.dataset), args.n, args.noise,
                                    args.label_noise, args.seed);
    if (cfg.loss.kind == fpkit::LossKind::ce_plus_oe) {
        // Outlier pool for outlier exposure, derived deterministically from
        // the run seed.
        const auto ring =
            fpkit::make_dataset(fpkit::DatasetKind::ring_ood, args.n, args.outlier_noise, 0.0,
                                args.seed + 7777);
        data.outliers = ring.x_train;
    }

    json resolved{{"cmd", "train"},
                  {"method", args.method},
                  {"loss", args.loss},
                  {"focal_gamma", cfg.loss.focal_gamma},
                  {"ls_epsilon", cfg.loss.ls_epsilon},
                  {"l1_lambda", cfg.loss.l1_lambda},
                  {"logitnorm_tau", cfg.loss.logitnorm_tau},
                  {"oe_lambda", cfg.loss.oe_lambda},
                  {"crl_lambda", cfg.loss.crl_lambda},
                  {"mixup_alpha", args.mixup_alpha},
                  {"dataset", args.dataset},
                  {"n", args.n},
                  {"noise", args.noise},
                  {"label_noise", args.label_noise},
                  {"epochs", cfg.epochs},
                  {"batch_size", cfg.batch_size},
                  {"lr", cfg.base_lr},
                  {"momentum", cfg.momentum},
                  {"weight_decay", cfg.weight_decay},
                  {"rho", cfg.sam_rho},
                  {"swa_start", cfg.swa_start},
                  {"swa_cycle", cfg.swa_cycle},
                  {"hidden", args.hidden},
                  {"seed", cfg.seed}};
    log_config(resolved);

    const auto result = fpkit::train(cfg, data);
    const auto& model = result.eval_model();

    if (!args.model_out.empty()) {
        std::ofstream out(args.model_out, std::ios::binary);
        if (!out) throw fpkit::IoError("cannot write " + args.model_out);
        out << fpkit::model_to_json(model).dump(2) << "\n";
    }
    if (!args.logits_out.empty()) {
        const auto eval = fpkit::eval_set_from_model(model, data.x_test, data.y_test);
        fpkit::save_eval_csv(eval, args.logits_out);
    }
    std::ostringstream hist;
    fpkit::save_history_csv(result.history, hist);
    emit(hist.str(), args.history_out);
    return 0;
}

struct SimulateArgs {
    std::string spec_path;
    std::string score = "true_posterior_max";
    std::string model_path;
    bool sweep = false;
    std::string grid;
    double delta = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_mc = 100000;
    std::uint64_t seed = 1;
    std::string output;
};

int run_simulate(const SimulateArgs& args) {
    std::ifstream in(args.spec_path);
    if (!in) throw fpkit::IoError("cannot open " + args.spec_path);
    json sj;
    try {
        in >> sj;
    } catch (const std::exception& e) {
        throw fpkit::InvalidInput(args.spec_path + ": " + e.what());
    }
    const auto spec = fpkit::mixture_from_json(sj);
    const auto score = fpkit::parse_rule_score(args.score);

    fpkit::MlpModel model;
    const fpkit::MlpModel* model_ptr = nullptr;
    if (score == fpkit::RuleScore::msp_of_model) {
        if (args.model_path.empty()) throw fpkit::InvalidParam("msp_of_model needs --model");
        std::ifstream min(args.model_path);
        if (!min) throw fpkit::IoError("cannot open " + args.model_path);
        json mj;
        min >> mj;
        model = fpkit::model_from_json(mj);
        model_ptr = &model;
    }

    std::vector<double> grid;
    if (!std::isnan(args.delta)) {
        grid.push_back(args.delta);
    } else {
        std::string grid_spec = args.grid;
        if (grid_spec.empty()) {
            grid_spec = score == fpkit::RuleScore::density_ratio ? "0.01:100:41:log" : "0.5:0.99:50";
        }
        grid = parse_grid(grid_spec);
    }

    log_config(json{{"cmd", "simulate"},
                    {"spec", args.spec_path},
                    {"score", args.score},
                    {"model", args.model_path},
                    {"grid_size", grid.size()},
                    {"n_mc", args.n_mc},
                    {"seed", args.seed}});

    const auto rows = fpkit::sweep_thresholds(spec, score, grid, args.n_mc, args.seed, model_ptr);
    std::ostringstream out;
    fpkit::save_sweep_csv(rows, out);
    emit(out.str(), args.output);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"failure-prediction toolkit: confidence scores, metrics, calibration, "
                 "flat-minima training and Bayes reject-rule simulation"};
    app.require_subcommand(1);

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "compute a metrics report per score");
    evaluate->add_option("input", ev.input, "logits CSV (l0,...,l{K-1},label)")->required();
    evaluate->add_option("--features", ev.features, "row-aligned features CSV");
    evaluate->add_option("--head", ev.head, "classifier head JSON");
    evaluate->add_option("--scores", ev.scores, "comma list of score kinds");
    evaluate->add_option("--energy-t", ev.energy_t, "energy temperature");
    evaluate->add_option("--odin-t", ev.odin_t, "odin temperature");
    evaluate->add_option("--react-percentile", ev.react_percentile, "react clamp percentile");
    evaluate->add_option("--ece-bins", ev.ece_bins, "ECE bin count");
    evaluate->add_flag("--x1000", ev.x1000, "display AURC/E-AURC multiplied by 1000");
    evaluate->add_option("--output", ev.output, "write JSON here instead of stdout");

    RcArgs rc;
    auto* rc_cmd = app.add_subcommand("rc-curve", "risk-coverage curve as CSV");
    rc_cmd->add_option("input", rc.input, "logits CSV")->required();
    rc_cmd->add_option("--features", rc.features, "row-aligned features CSV");
    rc_cmd->add_option("--head", rc.head, "classifier head JSON");
    rc_cmd->add_option("--score", rc.score, "score kind");
    rc_cmd->add_option("--energy-t", rc.energy_t, "energy temperature");
    rc_cmd->add_option("--odin-t", rc.odin_t, "odin temperature");
    rc_cmd->add_option("--react-percentile", rc.react_percentile, "react clamp percentile");
    rc_cmd->add_option("--output", rc.output, "write CSV here instead of stdout");

    FitTempArgs ft;
    auto* fit_cmd = app.add_subcommand("fit-temperature", "fit the temperature on a holdout split");
    fit_cmd->add_option("input", ft.input, "holdout logits CSV")->required();
    fit_cmd->add_option("--output", ft.output, "write JSON here instead of stdout");
    fit_cmd->add_option("--write-scaled", ft.write_scaled, "also write the rescaled logits CSV");

    DecomposeArgs dc;
    auto* dec_cmd = app.add_subcommand("decompose", "proper-scoring-rule decomposition");
    dec_cmd->add_option("input", dc.input, "logits CSV")->required();
    dec_cmd->add_option("--rule", dc.rule, "log_loss or brier");
    dec_cmd->add_option("--bins", dc.bins, "confidence bins for the calibrated-score estimate");
    dec_cmd->add_option("--posterior", dc.posterior, "true posterior CSV (q0,...,q{K-1})");
    dec_cmd->add_option("--output", dc.output, "write JSON here instead of stdout");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "train the built-in MLP on a synthetic dataset");
    tr_cmd->add_option("--method", tr.method, "sgd | sam | swa | fmfp");
    tr_cmd->add_option("--loss", tr.loss,
                       "ce | focal | label_smoothing | l1_logit | logitnorm | ce_plus_oe | ce_plus_crl");
    tr_cmd->add_option("--focal-gamma", tr.focal_gamma, "focal strength");
    tr_cmd->add_option("--ls-epsilon", tr.ls_epsilon, "label smoothing mass");
    tr_cmd->add_option("--l1-lambda", tr.l1_lambda, "logit L1 penalty weight");
    tr_cmd->add_option("--logitnorm-tau", tr.logitnorm_tau, "logitnorm temperature");
    tr_cmd->add_option("--oe-lambda", tr.oe_lambda, "outlier exposure weight");
    tr_cmd->add_option("--crl-lambda", tr.crl_lambda, "correctness ranking weight");
    tr_cmd->add_option("--mixup-alpha", tr.mixup_alpha, "mixup Beta parameter (0 disables)");
    tr_cmd->add_option("--dataset", tr.dataset, "two_moons | gaussian_blobs | ring_ood");
    tr_cmd->add_option("--n", tr.n, "train (and test) sample count");
    tr_cmd->add_option("--noise", tr.noise, "feature noise");
    tr_cmd->add_option("--label-noise", tr.label_noise, "train label flip probability");
    tr_cmd->add_option("--outlier-noise", tr.outlier_noise, "noise of the OE outlier ring");
    tr_cmd->add_option("--epochs", tr.epochs, "training epochs");
    tr_cmd->add_option("--batch-size", tr.batch_size, "mini-batch size");
    tr_cmd->add_option("--lr", tr.lr, "base learning rate");
    tr_cmd->add_option("--momentum", tr.momentum, "SGD momentum");
    tr_cmd->add_option("--weight-decay", tr.weight_decay, "L2 weight decay");
    tr_cmd->add_option("--rho", tr.rho, "SAM neighborhood size (sam/fmfp)");
    tr_cmd->add_option("--swa-start", tr.swa_start, "first averaging epoch (swa/fmfp)");
    tr_cmd->add_option("--swa-cycle", tr.swa_cycle, "averaging cycle length in epochs");
    tr_cmd->add_option("--hidden", tr.hidden, "comma list of hidden layer widths");
    tr_cmd->add_option("--seed", tr.seed, "seed for every random draw of the run");
    tr_cmd->add_option("--model-out", tr.model_out, "write the trained model JSON here");
    tr_cmd->add_option("--logits-out", tr.logits_out, "write the test-split logits CSV here");
    tr_cmd->add_option("--history-out", tr.history_out, "write the history CSV here (default stdout)");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Bayes reject-rule risks on a Gaussian mixture");
    sim_cmd->add_option("--spec", sim.spec_path, "mixture spec JSON")->required();
    sim_cmd->add_option("--score", sim.score, "true_posterior_max | density_ratio | msp_of_model");
    sim_cmd->add_option("--model", sim.model_path, "model JSON for msp_of_model");
    sim_cmd->add_flag("--sweep", sim.sweep, "sweep a threshold grid (default when no --delta)");
    sim_cmd->add_option("--grid", sim.grid, "threshold grid lo:hi:count[:log]");
    sim_cmd->add_option("--delta", sim.delta, "single threshold instead of a sweep");
    sim_cmd->add_option("--n-mc", sim.n_mc, "Monte Carlo sample count");
    sim_cmd->add_option("--seed", sim.seed, "Monte Carlo seed");
    sim_cmd->add_option("--output", sim.output, "write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*evaluate) return run_evaluate(ev);
        if (*rc_cmd) return run_rc_curve(rc);
        if (*fit_cmd) return run_fit_temperature(ft);
        if (*dec_cmd) return run_decompose(dc);
        if (*tr_cmd) return run_train(tr);
        if (*sim_cmd) return run_simulate(sim);
    } catch (const fpkit::DivergedTraining& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const fpkit::InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fpkit::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fpkit::InvalidParam& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fpkit::MissingModelAccess& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
