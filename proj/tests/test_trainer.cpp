#include "smct/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fd_check.hpp"

using namespace smct;

namespace {

ModelParams tiny_params(int r, int d_in, int d_obs, int d_ff, uint64_t seed) {
    return init_params(ModelDims{r, d_in, d_obs, d_ff}, SeededRng(seed));
}

std::vector<Vec> tiny_sequence(int t_len, uint64_t seed) {
    SyntheticSpec spec;
    spec.n_series = 1;
    spec.t_len = t_len;
    spec.seed = seed;
    return gen_model_I(spec).series[0];
}

SeriesDataset tiny_dataset(int n, int t_len, uint64_t seed) {
    SyntheticSpec spec;
    spec.n_series = n;
    spec.t_len = t_len;
    spec.seed = seed;
    return split_normalize(gen_model_I(spec), SplitRatios{0.6, 0.2, 0.2}, seed, false);
}

bool same_weights(const ModelParams& a, const ModelParams& b) {
    auto va = weight_views(a), vb = weight_views(b);
    for (int i = 0; i < kParamCount; ++i)
        if (*va[i] != *vb[i]) return false;
    return true;
}

bool same_noise(const NoiseScales& a, const NoiseScales& b) {
    return a.var_q == b.var_q && a.var_k == b.var_k && a.var_v == b.var_v &&
           a.var_z == b.var_z && a.var_obs == b.var_obs;
}

std::string temp_path(const char* name) {
    return std::string("trainer_test_") + name;
}

}  // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    cfg.learning_rate = 0.002;

    SUBCASE("constant ignores the step") {
        cfg.schedule = LrSchedule::kConstant;
        CHECK(learning_rate_at(cfg, 1) == 0.002);
        CHECK(learning_rate_at(cfg, 123456) == 0.002);
    }

    SUBCASE("warmup ramps linearly then decays as inverse square root") {
        cfg.schedule = LrSchedule::kWarmup;
        cfg.warmup_steps = 400;
        CHECK(learning_rate_at(cfg, 1) == doctest::Approx(0.002 / 400).epsilon(1e-12));
        CHECK(learning_rate_at(cfg, 200) == doctest::Approx(0.001).epsilon(1e-12));
        CHECK(learning_rate_at(cfg, 400) == doctest::Approx(0.002).epsilon(1e-12));
        CHECK(learning_rate_at(cfg, 1600) == doctest::Approx(0.001).epsilon(1e-12));
        double prev = 0.0;
        for (long s = 1; s <= 400; ++s) {
            double lr = learning_rate_at(cfg, s);
            CHECK(lr > prev);
            prev = lr;
        }
        CHECK(learning_rate_at(cfg, 401) < learning_rate_at(cfg, 400));
    }

    SUBCASE("step below 1 is rejected") {
        CHECK_THROWS_AS(learning_rate_at(cfg, 0), std::domain_error);
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(validate(cfg));
    auto reject = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(validate(c), std::domain_error);
    };
    reject([](TrainConfig& c) { c.particles = 0; });
    reject([](TrainConfig& c) { c.lag = -1; });
    reject([](TrainConfig& c) { c.epochs = -1; });
    reject([](TrainConfig& c) { c.batch_size = 0; });
    reject([](TrainConfig& c) { c.learning_rate = 0.0; });
    reject([](TrainConfig& c) { c.em_exponent = 0.5; });
    reject([](TrainConfig& c) { c.adam_beta1 = 1.0; });
    reject([](TrainConfig& c) { c.adam_epsilon = 0.0; });
    reject([](TrainConfig& c) { c.variance_floor = 0.0; });
    reject([](TrainConfig& c) { c.warmup_steps = 0; });
    reject([](TrainConfig& c) { c.patience = 0; });
    reject([](TrainConfig& c) { c.threads = 0; });
}

TEST_CASE("adam step") {
    ModelParams p = tiny_params(2, 1, 1, 3, 4);
    OptState st = init_opt_state(p);
    TrainConfig cfg;
    cfg.learning_rate = 0.001;
    auto views = weight_views(p);

    SUBCASE("unit gradients move every weight by about the learning rate") {
        ModelParams before = p;
        GradMap g;
        g.grads.resize(kParamCount);
        for (int i = 0; i < kParamCount; ++i) g.grads[i].assign(views[i]->size(), 1.0);
        adam_step(p, g, st, cfg);
        CHECK(st.step == 1);
        auto vb = weight_views(before);
        const double expected = 0.001 / (1.0 + 1e-8);
        for (int i = 0; i < kParamCount; ++i)
            for (size_t j = 0; j < views[i]->size(); ++j)
                CHECK((*vb[i])[j] - (*views[i])[j] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(same_noise(p.noise, before.noise));
    }

    SUBCASE("zero gradients leave weights untouched") {
        ModelParams before = p;
        GradMap g;
        g.grads.resize(kParamCount);
        for (int i = 0; i < kParamCount; ++i) g.grads[i].assign(views[i]->size(), 0.0);
        adam_step(p, g, st, cfg);
        CHECK(same_weights(p, before));
        CHECK(st.step == 1);
    }

    SUBCASE("gradient shape mismatch is rejected") {
        GradMap g;
        g.grads.resize(kParamCount);
        for (int i = 0; i < kParamCount; ++i) g.grads[i].assign(views[i]->size(), 0.0);
        g.grads[0].push_back(0.0);
        CHECK_THROWS_AS(adam_step(p, g, st, cfg), std::domain_error);
    }

    SUBCASE("two steps apply bias correction") {
        // single scalar check against the textbook recursion
        GradMap g;
        g.grads.resize(kParamCount);
        for (int i = 0; i < kParamCount; ++i) g.grads[i].assign(views[i]->size(), 0.0);
        g.grads[kParamWq][0] = 2.0;
        const double w0 = (*views[kParamWq])[0];
        adam_step(p, g, st, cfg);
        g.grads[kParamWq][0] = -1.0;
        adam_step(p, g, st, cfg);
        double m = 0.0, v = 0.0, w = w0;
        long step = 0;
        for (double gv : {2.0, -1.0}) {
            step += 1;
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            const double mh = m / (1.0 - std::pow(0.9, step));
            const double vh = v / (1.0 - std::pow(0.999, step));
            w -= 0.001 * mh / (std::sqrt(vh) + 1e-8);
        }
        CHECK((*views[kParamWq])[0] == doctest::Approx(w).epsilon(1e-14));
        CHECK(st.step == 2);
    }
}

TEST_CASE("em sufficient statistics and variance update") {
    TrainConfig cfg;

    SUBCASE("average of squared residuals over terms times dimension") {
        // one particle, two scalar residuals 1 and sqrt(3): mean square is 2
        TrajStats tr;
        tr.residual_sq[kEmObs] = 1.0 + 3.0;
        tr.steps = 2;
        EmBatch b;
        b.add_run(Vec{1.0}, {tr}, 3, 1);
        CHECK(b.weighted_sq[kEmObs] == 4.0);
        CHECK(b.denom[kEmObs] == 2.0);
        CHECK(b.denom[kEmQ] == 6.0);  // 2 steps x depth 3

        NoiseScales cur;
        cur.var_obs = 0.9;
        NoiseScales out = em_update_variances(cur, b, 1, cfg);
        CHECK(out.var_obs == 2.0);  // eta_1 = 1 replaces the old value
        // q residuals were all zero across 6 slots, so eta_1 = 1 floors var_q
        CHECK(out.var_q == cfg.variance_floor);
    }

    SUBCASE("step size decays as p^-exponent") {
        TrajStats tr;
        tr.residual_sq[kEmObs] = 4.0;
        tr.steps = 2;
        EmBatch b;
        b.add_run(Vec{1.0}, {tr}, 1, 1);
        NoiseScales cur;
        cur.var_obs = 0.9;
        const double eta = std::pow(4.0, -0.6);
        NoiseScales out = em_update_variances(cur, b, 4, cfg);
        CHECK(out.var_obs == doctest::Approx((1 - eta) * 0.9 + eta * 2.0).epsilon(1e-14));
    }

    SUBCASE("particle weights average the statistics") {
        TrajStats a, c;
        a.residual_sq[kEmObs] = 8.0;
        c.residual_sq[kEmObs] = 2.0;
        a.steps = c.steps = 1;
        EmBatch b;
        b.add_run(Vec{0.25, 0.75}, {a, c}, 1, 1);
        CHECK(b.weighted_sq[kEmObs] == doctest::Approx(0.25 * 8.0 + 0.75 * 2.0).epsilon(1e-15));
        CHECK(b.denom[kEmObs] == 1.0);
    }

    SUBCASE("merge pools numerators and denominators") {
        TrajStats tr;
        tr.residual_sq[kEmObs] = 4.0;
        tr.steps = 2;
        EmBatch b1, b2;
        b1.add_run(Vec{1.0}, {tr}, 1, 1);
        tr.residual_sq[kEmObs] = 6.0;
        tr.steps = 3;
        b2.add_run(Vec{1.0}, {tr}, 1, 1);
        b1.merge(b2);
        CHECK(b1.weighted_sq[kEmObs] == 10.0);
        CHECK(b1.denom[kEmObs] == 5.0);
    }

    SUBCASE("floor binds") {
        TrajStats tr;
        tr.steps = 5;  // residuals all zero
        EmBatch b;
        b.add_run(Vec{1.0}, {tr}, 1, 1);
        NoiseScales cur;
        cur.var_obs = 1e-7;
        NoiseScales out = em_update_variances(cur, b, 1, cfg);
        CHECK(out.var_obs == cfg.variance_floor);
    }

    SUBCASE("disabled sources and empty batches stay put") {
        TrajStats tr;
        tr.residual_sq[kEmObs] = 4.0;
        tr.steps = 2;
        EmBatch b;
        b.add_run(Vec{1.0}, {tr}, 1, 1);
        TrainConfig off;
        off.em_update[kEmObs] = false;
        NoiseScales cur;
        CHECK(em_update_variances(cur, b, 1, off).var_obs == cur.var_obs);
        EmBatch empty;
        CHECK(same_noise(em_update_variances(cur, empty, 1, cfg), cur));
    }

    SUBCASE("invalid inputs") {
        EmBatch b;
        TrajStats tr;
        CHECK_THROWS_AS(b.add_run(Vec{0.5, 0.5}, {tr}, 1, 1), std::domain_error);
        CHECK_THROWS_AS(b.add_run(Vec{}, {}, 1, 1), std::domain_error);
        NoiseScales cur;
        CHECK_THROWS_AS(em_update_variances(cur, b, 0, TrainConfig{}), std::domain_error);
    }
}

TEST_CASE("loss closed form for a single deterministic trajectory") {
    // All residuals zero, unit variances: each r-dim transition density is
    // -(r/2) ln 2pi and the scalar observation density is -(1/2) ln 2pi, so
    // one scored step gives loss (4r+1)/2 ln 2pi.
    const int r = 3;
    Tape t;
    Vec mean{0.5, -0.2, 1.0};
    NodeRef mn = t.constant(mean);
    NodeRef xn = t.constant(mean);
    std::array<NodeRef, 4> trans{t.gauss_logdensity(xn, mn, 1.0), t.gauss_logdensity(xn, mn, 1.0),
                                 t.gauss_logdensity(xn, mn, 1.0), t.gauss_logdensity(xn, mn, 1.0)};
    NodeRef obs = t.gauss_logdensity(t.constant_scalar(0.7), t.constant_scalar(0.7), 1.0);
    NodeRef step = t.add(t.sum(trans), obs);
    std::array<NodeRef, 1> sums{step};
    std::array<NodeRef, 1> finals{obs};
    NodeRef loss = smc_loss(t, sums, finals);
    const double expected = (4.0 * r + 1.0) / 2.0 * std::log(2.0 * 3.14159265358979323846);
    CHECK(t.val(loss)[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss weighting properties") {
    Tape t;
    std::array<NodeRef, 2> sums{t.constant_scalar(-3.0), t.constant_scalar(-5.0)};
    std::array<NodeRef, 2> finals{t.constant_scalar(0.3), t.constant_scalar(-0.7)};
    const double base = t.val(smc_loss(t, sums, finals))[0];

    SUBCASE("value matches the softmax-weighted sum") {
        Vec w = softmax(Vec{0.3, -0.7});
        CHECK(base == doctest::Approx(-(w[0] * -3.0 + w[1] * -5.0)).epsilon(1e-15));
    }

    SUBCASE("shifting all final log weights changes nothing") {
        std::array<NodeRef, 2> shifted{t.constant_scalar(0.3 + 11.0),
                                       t.constant_scalar(-0.7 + 11.0)};
        CHECK(t.val(smc_loss(t, sums, shifted))[0] == doctest::Approx(base).epsilon(1e-12));
    }

    SUBCASE("particle order is irrelevant") {
        std::array<NodeRef, 2> sums2{sums[1], sums[0]};
        std::array<NodeRef, 2> finals2{finals[1], finals[0]};
        CHECK(t.val(smc_loss(t, sums2, finals2))[0] == doctest::Approx(base).epsilon(1e-15));
    }

    SUBCASE("frozen weights equal to the softmax reproduce the loss") {
        Vec w = softmax(Vec{0.3, -0.7});
        CHECK(t.val(smc_loss(t, sums, finals, &w))[0] == base);
    }

    SUBCASE("weights carry no gradient") {
        // move only through the trajectory sums: d loss / d S_m = -w_m, and
        // the final log weights receive exactly zero
        Tape t2;
        NodeRef f0 = t2.param(0, Vec{0.3}, 1, 1);
        NodeRef s0 = t2.param(1, Vec{-3.0}, 1, 1);
        std::array<NodeRef, 2> ss{s0, t2.constant_scalar(-5.0)};
        std::array<NodeRef, 2> ff{f0, t2.constant_scalar(-0.7)};
        GradMap g = t2.backward(smc_loss(t2, ss, ff));
        Vec w = softmax(Vec{0.3, -0.7});
        CHECK(g.at(1)[0] == doctest::Approx(-w[0]).epsilon(1e-14));
        CHECK(g.at(0)[0] == 0.0);
    }

    SUBCASE("mismatched lengths are rejected") {
        std::array<NodeRef, 1> one{sums[0]};
        CHECK_THROWS_AS(smc_loss(t, sums, one), std::domain_error);
        Vec wrong{1.0};
        CHECK_THROWS_AS(smc_loss(t, sums, finals, &wrong), std::domain_error);
    }
}

TEST_CASE("taped filter reproduces the plain filter bit for bit") {
    ModelParams p = tiny_params(4, 1, 1, 5, 7);
    std::vector<Vec> xs = tiny_sequence(7, 21);
    SeededRng stream = SeededRng(99).child(5);
    const int particles = 5, lag = 3;

    TapedRun run = taped_filter_loss(xs, p, particles, lag, stream);
    FilterResult res = filter_sequence(xs, p, particles, lag, stream);

    REQUIRE(run.final_weights.size() == res.weights.size());
    for (size_t m = 0; m < res.weights.size(); ++m)
        CHECK(run.final_weights[m] == res.weights[m]);
    CHECK(run.genealogy == res.genealogy);
    REQUIRE(run.step_weights.size() == res.step_weights.size());
    for (size_t t = 0; t < res.step_weights.size(); ++t)
        for (size_t m = 0; m < res.step_weights[t].size(); ++m)
            CHECK(run.step_weights[t][m] == res.step_weights[t][m]);
    CHECK(run.log_likelihood == res.log_likelihood);
    REQUIRE(run.stats.size() == res.trajs.size());
    for (size_t m = 0; m < res.trajs.size(); ++m) {
        CHECK(run.stats[m].logdensity_sum == res.trajs[m].logdensity_sum);
        CHECK(run.stats[m].steps == res.trajs[m].steps);
        for (int s = 0; s < kEmSourceCount; ++s)
            CHECK(run.stats[m].residual_sq[s] == res.trajs[m].residual_sq[s]);
    }

    double manual = 0.0;
    for (size_t m = 0; m < res.weights.size(); ++m)
        manual += res.weights[m] * res.trajs[m].logdensity_sum;
    CHECK(run.loss_value == -manual);
    CHECK(sequence_loss(xs, p, particles, lag, stream) == run.loss_value);
}

TEST_CASE("taped filter rejects degenerate inputs") {
    ModelParams p = tiny_params(3, 1, 1, 4, 1);
    std::vector<Vec> xs = tiny_sequence(4, 2);
    SeededRng stream(3);
    CHECK_THROWS_AS(taped_filter_loss({xs[0]}, p, 2, 0, stream), std::domain_error);
    ModelParams bad = p;
    bad.noise.var_v = 0.0;
    CHECK_THROWS_AS(taped_filter_loss(xs, bad, 2, 0, stream), std::domain_error);
    CHECK_THROWS_AS(sequence_loss(xs, bad, 2, 0, stream), std::domain_error);
}

TEST_CASE("analytic gradient matches finite differences") {
    // r=3, window 2, 2 particles, 4 steps; genealogy and final weights frozen
    // at the base point so central differences probe the same function the
    // backward pass differentiates.
    ModelParams p = tiny_params(3, 1, 1, 4, 11);
    std::vector<Vec> xs = tiny_sequence(4, 31);
    SeededRng stream = SeededRng(123).child(1);
    const int particles = 2, lag = 2;

    TapedRun base = taped_filter_loss(xs, p, particles, lag, stream);
    GradMap grads = base.tape.backward(base.loss);

    const auto genealogy = base.genealogy;
    const Vec frozen = base.final_weights;
    TapedLossOptions opt;
    opt.replay = &genealogy;
    opt.frozen_weights = &frozen;

    // freezing at the base point must not move the loss itself
    TapedRun frozen_base = taped_filter_loss(xs, p, particles, lag, stream, opt);
    CHECK(frozen_base.loss_value == base.loss_value);

    auto loss_at = [&](int tensor, size_t j, double v) {
        ModelParams q = p;
        (*weight_views(q)[tensor])[j] = v;
        return taped_filter_loss(xs, q, particles, lag, stream, opt).loss_value;
    };

    SeededRng pick(2024);
    auto cviews = weight_views(std::as_const(p));
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int tensor = static_cast<int>(pick.next_u64() % kParamCount);
        const size_t j = pick.next_u64() % cviews[tensor]->size();
        const double v = (*cviews[tensor])[j];
        const double h = 1e-5;
        const double fd = (loss_at(tensor, j, v + h) - loss_at(tensor, j, v - h)) / (2.0 * h);
        const double an = grads.at(tensor)[j];
        INFO("tensor ", tensor, " index ", j, " fd ", fd, " analytic ", an);
        CHECK(rel_err(fd, an) < 1e-4);
        ++checked;
    }
    CHECK(checked == 20);
}

TEST_CASE("fit core behaviors") {
    SeriesDataset ds = tiny_dataset(10, 6, 17);
    ModelParams init = tiny_params(3, 1, 1, 4, 2);
    TrainConfig cfg;
    cfg.particles = 3;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.01;
    cfg.seed = 5;

    SUBCASE("zero epochs is a no-op") {
        cfg.epochs = 0;
        FitResult out = fit(ds, init, cfg);
        CHECK(out.log.empty());
        CHECK(out.best_epoch == -1);
        CHECK(same_weights(out.params, init));
        CHECK(same_noise(out.params.noise, init.noise));
        CHECK(out.opt.step == 0);
    }

    SUBCASE("same seed, same result") {
        FitResult a = fit(ds, init, cfg);
        FitResult b = fit(ds, init, cfg);
        CHECK(same_weights(a.params, b.params));
        CHECK(same_noise(a.params.noise, b.params.noise));
        REQUIRE(a.log.size() == b.log.size());
        for (size_t i = 0; i < a.log.size(); ++i) {
            CHECK(a.log[i].train_loss == b.log[i].train_loss);
            CHECK(a.log[i].val_loss == b.log[i].val_loss);
            CHECK(a.log[i].train_mse == b.log[i].train_mse);
        }
        CHECK(a.best_epoch == b.best_epoch);
        // the returned optimizer is the best-epoch snapshot; 6 train series
        // in batches of 4 make 2 steps per epoch
        CHECK(a.opt.step == 2 * a.best_epoch);
        CHECK(a.opt.em_step == a.opt.step);
    }

    SUBCASE("thread count does not change the numbers") {
        FitResult a = fit(ds, init, cfg);
        TrainConfig cfg3 = cfg;
        cfg3.threads = 3;
        FitResult b = fit(ds, init, cfg3);
        CHECK(same_weights(a.params, b.params));
        CHECK(same_noise(a.params.noise, b.params.noise));
        REQUIRE(a.log.size() == b.log.size());
        for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].val_loss == b.log[i].val_loss);
    }

    SUBCASE("em switches freeze the variances while weights still move") {
        TrainConfig frozen = cfg;
        frozen.em_update = {false, false, false, false, false};
        FitResult out = fit(ds, init, frozen);
        CHECK(same_noise(out.params.noise, init.noise));
        CHECK_FALSE(same_weights(out.params, init));
    }

    SUBCASE("em moves variances") {
        FitResult out = fit(ds, init, cfg);
        CHECK_FALSE(same_noise(out.params.noise, init.noise));
        CHECK(out.params.noise.var_obs >= cfg.variance_floor);
    }

    SUBCASE("best epoch is the validation mse argmin") {
        cfg.epochs = 3;
        FitResult out = fit(ds, init, cfg);
        REQUIRE(out.best_epoch >= 1);
        const double best = out.log[out.best_epoch - 1].val_mse;
        for (const EpochLog& row : out.log) CHECK(best <= row.val_mse);
    }

    SUBCASE("non-finite loss aborts with context") {
        ModelParams bad = init;
        bad.head.ln_gain[0] = std::numeric_limits<double>::quiet_NaN();
        try {
            fit(ds, bad, cfg);
            FAIL("expected abort");
        } catch (const std::runtime_error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("epoch 1") != std::string::npos);
            CHECK(msg.find("sequence") != std::string::npos);
        }
    }

    SUBCASE("missing train split is rejected") {
        SeriesDataset noval = ds;
        for (auto& s : noval.split) s = SplitId::kTest;
        CHECK_THROWS_AS(fit(noval, init, cfg), std::domain_error);
    }

    SUBCASE("early stopping caps the epoch count") {
        cfg.epochs = 6;
        cfg.early_stopping = true;
        cfg.patience = 1;
        FitResult out = fit(ds, init, cfg);
        CHECK(out.log.size() <= 6);
        CHECK(out.best_epoch >= 1);
    }
}

TEST_CASE("train log format") {
    std::vector<EpochLog> log(2);
    log[0].epoch = 1;
    log[0].train_loss = 10.5;
    log[0].train_mse = 1.25;
    log[0].val_loss = 11.0;
    log[0].val_mse = 1.5;
    log[0].noise = NoiseScales{};
    log[1] = log[0];
    log[1].epoch = 2;
    const std::string path = temp_path("log.csv");
    write_train_log(path, log);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "epoch,split,loss,mse,var_q,var_k,var_v,var_z,var_obs");
    REQUIRE(std::getline(in, line));
    CHECK(line == "1,train,10.5,1.25,0.5,0.5,0.5,0.5,0.5");
    REQUIRE(std::getline(in, line));
    CHECK(line == "1,val,11,1.5,0.5,0.5,0.5,0.5,0.5");
    int rows = 2;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip") {
    ModelParams p = tiny_params(3, 1, 1, 4, 9);
    p.noise.var_obs = 0.123456789012345;
    Checkpoint c;
    c.params = p;
    c.opt = init_opt_state(p);
    c.opt.step = 7;
    c.opt.em_step = 3;
    c.opt.m1[0][0] = 0.25;
    c.opt.m2[0][0] = 1e-9;
    c.norm.mean = Vec{0.5};
    c.norm.stddev = Vec{2.0};

    const std::string path = temp_path("ckpt.json");
    save_checkpoint(path, c);
    Checkpoint back = load_checkpoint(path);
    CHECK(same_weights(back.params, c.params));
    CHECK(same_noise(back.params.noise, c.params.noise));
    CHECK(back.params.head.ln_epsilon == c.params.head.ln_epsilon);
    CHECK(back.opt.step == 7);
    CHECK(back.opt.em_step == 3);
    CHECK(back.opt.m1 == c.opt.m1);
    CHECK(back.opt.m2 == c.opt.m2);
    CHECK(back.norm.mean == c.norm.mean);
    CHECK(back.norm.stddev == c.norm.stddev);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects unknown versions and bad shapes") {
    const std::string path = temp_path("ckpt_bad.json");
    {
        std::ofstream out(path);
        out << "{\"format_version\": 2}\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    {
        std::ofstream out(path);
        out << "not json\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}
