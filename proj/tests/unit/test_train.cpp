#include "doctest.h"

#include <sstream>

#include "fpkit/train.hpp"

using namespace fpkit;

namespace {

Dataset small_moons(std::uint64_t seed = 5) { return make_dataset(DatasetKind::two_moons, 96, 0.25, 0.1, seed); }

}  // namespace

TEST_CASE("sam_perturb norm equals rho for nonzero gradients") {
    Rng rng(501);
    MlpModel model = MlpModel::init({3, 6, 2}, rng);
    ParamVec grads = model.zeros_like();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& m : grads.w)
        for (double& v : m.data()) v = normal(rng);
    for (auto& b : grads.b)
        for (double& v : b) v = normal(rng);
    for (double rho : {0.01, 0.05, 1.0, 7.5}) {
        const auto eps = sam_perturb(grads, rho);
        CHECK(std::abs(eps.norm2() - rho) <= 1e-12 * std::max(1.0, rho));
    }
    CHECK_THROWS_AS(sam_perturb(grads, 0.0), InvalidParam);
}

TEST_CASE("sam_step with rho=0 is bitwise identical to sgd_step") {
    Rng rng(502);
    MlpModel a = MlpModel::init({2, 8, 2}, rng);
    MlpModel b = a;
    ParamVec va = a.zeros_like();
    ParamVec vb = b.zeros_like();
    Matrix x(10, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : x.data()) v = normal(rng);
    const auto targets = one_hot({0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
    LossSpec spec;
    const auto ra = sam_step(a, va, x, targets, spec, 0.0, 0.1, 0.9, 5e-4);
    const auto rb = sgd_step(b, vb, x, targets, spec, 0.1, 0.9, 5e-4);
    CHECK(ra.loss == rb.loss);
    CHECK(a.to_flat() == b.to_flat());
}

TEST_CASE("one hand-checked momentum sgd step") {
    MlpModel m;
    m.layers = {1, 1};
    m.w.push_back(Matrix(1, 1));
    m.w[0](0, 0) = 2.0;
    m.b.push_back({});
    ParamVec v = m.zeros_like();
    ParamVec g = m.zeros_like();
    g.w[0](0, 0) = 0.5;
    const double lr = 0.1, mu = 0.9, wd = 5e-4;
    sgd_update(m, g, v, lr, mu, wd);
    double v_expected = mu * 0.0 + 0.5 + wd * 2.0;
    double theta_expected = 2.0 - lr * v_expected;
    CHECK(m.w[0](0, 0) == theta_expected);
    g.w[0](0, 0) = 0.25;
    sgd_update(m, g, v, lr, mu, wd);
    v_expected = mu * v_expected + 0.25 + wd * theta_expected;
    theta_expected = theta_expected - lr * v_expected;
    CHECK(m.w[0](0, 0) == theta_expected);
}

TEST_CASE("fmfp with rho=0 and averaging disabled matches sgd trace bitwise") {
    const auto data = small_moons();
    TrainConfig sgd_cfg;
    sgd_cfg.method = Method::sgd;
    sgd_cfg.epochs = 6;
    sgd_cfg.batch_size = 32;
    sgd_cfg.seed = 77;
    sgd_cfg.hidden = {8};

    TrainConfig fmfp_cfg = sgd_cfg;
    fmfp_cfg.method = Method::fmfp;
    fmfp_cfg.sam_rho = 0.0;      // degenerate on purpose: exercised via the raw loop
    fmfp_cfg.swa_start = 1000;   // no checkpoint ever fires

    const auto a = train(sgd_cfg, data);
    const auto b = detail::train_loop(fmfp_cfg, data);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].test_acc == b.history[i].test_acc);
        CHECK(a.history[i].test_auroc == b.history[i].test_auroc);
    }
    CHECK(a.final_model.to_flat() == b.final_model.to_flat());
    CHECK_FALSE(b.swa_model.has_value());
}

TEST_CASE("config validation enforces the method/rho coupling") {
    TrainConfig cfg;
    cfg.method = Method::sam;
    cfg.sam_rho = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
    cfg.sam_rho = 0.05;
    CHECK_NOTHROW(cfg.validate());
    cfg.method = Method::sgd;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);  // rho set but unused
    cfg.sam_rho = 0.0;
    CHECK_NOTHROW(cfg.validate());
    cfg.method = Method::swa;
    cfg.epochs = 50;
    cfg.swa_start = 50;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
    cfg.swa_start = 25;
    CHECK_NOTHROW(cfg.validate());
    cfg.mixup_alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidParam);
}

TEST_CASE("cyclical learning rate schedule and checkpoint cadence") {
    TrainConfig cfg;
    cfg.method = Method::fmfp;
    cfg.sam_rho = 0.05;
    cfg.base_lr = 0.1;
    cfg.epochs = 30;
    cfg.swa_start = 10;
    cfg.swa_cycle = 5;
    CHECK(detail::lr_for_epoch(cfg, 1) == 0.1);
    CHECK(detail::lr_for_epoch(cfg, 9) == 0.1);
    CHECK(detail::lr_for_epoch(cfg, 10) == 0.1);  // cycle start
    CHECK(detail::lr_for_epoch(cfg, 14) == doctest::Approx(0.01));  // cycle end: base/10
    CHECK(detail::lr_for_epoch(cfg, 15) == 0.1);  // next cycle restarts
    CHECK_FALSE(detail::swa_checkpoint_epoch(cfg, 9));
    CHECK_FALSE(detail::swa_checkpoint_epoch(cfg, 10));
    CHECK(detail::swa_checkpoint_epoch(cfg, 14));
    CHECK(detail::swa_checkpoint_epoch(cfg, 19));
    TrainConfig sgd_cfg;
    sgd_cfg.method = Method::sgd;
    sgd_cfg.base_lr = 0.1;
    CHECK(detail::lr_for_epoch(sgd_cfg, 150) == 0.1);  // flat for non-averaging methods
}

TEST_CASE("swa training returns the checkpoint average") {
    const auto data = small_moons();
    TrainConfig cfg;
    cfg.method = Method::swa;
    cfg.epochs = 12;
    cfg.swa_start = 4;
    cfg.swa_cycle = 3;
    cfg.batch_size = 32;
    cfg.seed = 9;
    cfg.hidden = {8};
    const auto result = train(cfg, data);
    REQUIRE(result.swa_model.has_value());
    CHECK(result.swa_model->to_flat() != result.final_model.to_flat());
    CHECK(&result.eval_model() == &*result.swa_model);
    CHECK(result.history.size() == 12);
}

TEST_CASE("divergent training aborts with the failing epoch") {
    const auto data = small_moons();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.base_lr = 1e18;  // guaranteed blow-up
    cfg.batch_size = 32;
    cfg.hidden = {8};
    try {
        train(cfg, data);
        FAIL("expected DivergedTraining");
    } catch (const DivergedTraining& e) {
        CHECK(e.epoch >= 1);
        CHECK(e.epoch <= 5);
    }
}

TEST_CASE("mixup, crl and oe training paths run deterministically") {
    auto data = small_moons();
    data.outliers = make_dataset(DatasetKind::ring_ood, 64, 0.3, 0.0, 6).x_train;

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.hidden = {8};
    cfg.seed = 21;

    SUBCASE("mixup") {
        cfg.mixup_alpha = 0.2;
        const auto a = train(cfg, data);
        const auto b = train(cfg, data);
        CHECK(a.final_model.to_flat() == b.final_model.to_flat());
    }
    SUBCASE("crl") {
        cfg.loss.kind = LossKind::ce_plus_crl;
        const auto result = train(cfg, data);
        for (const auto& row : result.history) CHECK(std::isfinite(row.train_loss));
    }
    SUBCASE("oe") {
        cfg.loss.kind = LossKind::ce_plus_oe;
        const auto result = train(cfg, data);
        for (const auto& row : result.history) CHECK(std::isfinite(row.train_loss));
        Dataset no_outliers = data;
        no_outliers.outliers.reset();
        CHECK_THROWS_AS(train(cfg, no_outliers), InvalidParam);
    }
}

TEST_CASE("history csv shape") {
    const auto data = small_moons();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 48;
    cfg.hidden = {4};
    const auto result = train(cfg, data);
    std::ostringstream out;
    save_history_csv(result.history, out);
    const auto text = out.str();
    CHECK(text.rfind("epoch,train_loss,test_acc,test_auroc\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("dataset geometry: blobs have three classes, the ring sits far out") {
    const auto blobs = make_dataset(DatasetKind::gaussian_blobs, 90, 0.3, 0.0, 11);
    CHECK(blobs.num_classes == 3);
    const auto ring = make_dataset(DatasetKind::ring_ood, 50, 0.2, 0.0, 11);
    for (std::size_t i = 0; i < ring.x_train.rows(); ++i) {
        const double r = std::hypot(ring.x_train(i, 0), ring.x_train(i, 1));
        CHECK(r > 4.0);  // class centroids live at radius 2
    }
    CHECK_THROWS_AS(make_dataset(DatasetKind::two_moons, 10, -0.1, 0.0, 1), InvalidParam);
    CHECK_THROWS_AS(make_dataset(DatasetKind::two_moons, 10, 0.1, 1.0, 1), InvalidParam);
}
