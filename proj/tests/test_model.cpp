#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "mct/grad_check.hpp"
#include "mct/model.hpp"

using namespace mct;

TEST_CASE("init_params layout and determinism") {
    ModelSpec spec{16, {64, 64}, 4};
    ParamVector p = init_params(spec, 9);
    REQUIRE(p.group_count() == 6);
    CHECK(p.groups[0].value.shape == std::vector<int64_t>{16, 64});
    CHECK(p.groups[1].value.shape == std::vector<int64_t>{1, 64});
    CHECK(p.groups[5].value.shape == std::vector<int64_t>{1, 4});
    CHECK(p.param_count() == 16 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);

    for (size_t l = 0; l < 3; ++l)
        for (double v : p.groups[2 * l + 1].value.data) CHECK(v == 0.0);

    ParamVector q = init_params(spec, 9);
    CHECK(p.flatten() == q.flatten());
    CHECK(init_params(spec, 10).flatten() != p.flatten());
}

TEST_CASE("init weight sample mean is near zero") {
    // Uniform(-a, a) with a = sqrt(6/256); the mean of 128*128 draws has
    // standard deviation a/sqrt(3*16384).
    ModelSpec spec{128, {}, 128};
    ParamVector p = init_params(spec, 4);
    const auto& w = p.groups[0].value.data;
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    const double bound = std::sqrt(6.0 / 256.0);
    const double sigma_mean = bound / std::sqrt(3.0 * 16384.0);
    CHECK(std::abs(mean) < 3.0 * sigma_mean);

    for (double v : w) CHECK(std::abs(v) <= bound);
}

TEST_CASE("flatten and unflatten round trip bit exactly") {
    ModelSpec spec{5, {7}, 3};
    ParamVector p = init_params(spec, 21);
    auto flat = p.flatten();
    ParamVector q = p.unflatten(flat);
    REQUIRE(q.group_count() == p.group_count());
    for (size_t g = 0; g < p.group_count(); ++g) {
        CHECK(q.groups[g].name == p.groups[g].name);
        CHECK(std::memcmp(q.groups[g].value.data.data(), p.groups[g].value.data.data(),
                          p.groups[g].value.data.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("cross entropy of an all-zero model is ln C") {
    ModelSpec spec{3, {}, 2};
    ParamVector p = init_params(spec, 0);
    for (auto& g : p.groups) std::fill(g.value.data.begin(), g.value.data.end(), 0.0);

    Tape tape;
    Tensor x({4, 3}, {1, 2, 3, -1, 0, 1, 0.5, 0.5, 0.5, 2, -2, 0});
    Var loss = forward_loss(tape, lift(tape, p), tape.put(x), {0, 1, 0, 1}, 2);
    CHECK(loss.value().item() == Catch::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("saturated logits give near-zero loss") {
    ModelSpec spec{2, {}, 2};
    ParamVector p = init_params(spec, 0);
    std::fill(p.groups[0].value.data.begin(), p.groups[0].value.data.end(), 0.0);
    p.groups[1].value.data = {50.0, 0.0};  // margin 50 for class 0

    Tape tape;
    Tensor x({3, 2}, {1, 0, 0, 1, 1, 1});
    Var loss = forward_loss(tape, lift(tape, p), tape.put(x), {0, 0, 0}, 2);
    CHECK(loss.value().item() < 1e-6);
}

TEST_CASE("forward_loss rejects out-of-range labels") {
    ModelSpec spec{2, {}, 2};
    ParamVector p = init_params(spec, 1);
    Tape tape;
    Tensor x({1, 2}, {0.0, 1.0});
    CHECK_THROWS_AS(forward_loss(tape, lift(tape, p), tape.put(x), {2}, 2), ValueError);
}

TEST_CASE("loss gradient w.r.t. input features passes the FD oracle") {
    ModelSpec spec{4, {6}, 3};
    ParamVector p = init_params(spec, 14);
    Rng rng(2);
    Tensor x = Tensor::zeros({5, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    std::vector<int64_t> labels = {0, 2, 1, 1, 0};

    auto f = [&](Tape& t, Var xv) { return forward_loss(t, lift(t, p), xv, labels, 3); };
    CHECK(finite_difference_check(f, x, 1e-5) < 1e-6);
}

TEST_CASE("sgd_step hand values and zero-lr identity") {
    Tape tape;
    std::vector<Var> params = {tape.put(Tensor({2}, {1, 2}))};
    std::vector<Var> grads = {tape.put(Tensor({2}, {10, -10}))};

    auto stepped = sgd_step(tape, params, grads, tape.put(Tensor::scalar(0.1)));
    CHECK(stepped[0].value().data == std::vector<double>{0.0, 3.0});

    auto frozen = sgd_step(tape, params, grads, tape.put(Tensor::scalar(0.0)));
    CHECK(std::memcmp(frozen[0].value().data.data(), params[0].value().data.data(), 2 * sizeof(double)) == 0);
}

TEST_CASE("sgd_step derivative w.r.t. lr is minus the gradient") {
    Rng rng(8);
    Tensor theta = Tensor::zeros({4});
    Tensor g = Tensor::zeros({4});
    Tensor probe = Tensor::zeros({4});
    for (double& v : theta.data) v = rng.uniform(-1.0, 1.0);
    for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
    for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);

    // f(alpha) = <theta - alpha g, probe>; df/dalpha = -<g, probe>
    auto f = [&](Tape& t, Var alpha) {
        auto out = sgd_step(t, {t.put(theta)}, {t.put(g)}, alpha);
        return sum(mul(out[0], t.put(probe)));
    };
    Tape tape;
    Var a = tape.put(Tensor::scalar(0.3));
    Var fa = f(tape, a);
    double analytic = tape.grad(fa, {a})[0].value().item();
    CHECK(analytic == Catch::Approx(-dot(g.data, probe.data)).epsilon(1e-12));
    CHECK(finite_difference_check(f, Tensor::scalar(0.3), 1e-5) < 1e-8);
}

TEST_CASE("sgd_step is linear in lr") {
    // dyadic values make the float identity exact
    Tape tape;
    std::vector<Var> params = {tape.put(Tensor({3}, {1.0, 2.0, -0.5}))};
    std::vector<Var> grads = {tape.put(Tensor({3}, {0.5, -0.25, 2.0}))};
    const double alpha = 0.125;

    auto at = sgd_step(tape, params, grads, tape.put(Tensor::scalar(alpha)));
    auto at0 = sgd_step(tape, params, grads, tape.put(Tensor::scalar(0.0)));
    for (int64_t i = 0; i < 3; ++i)
        CHECK(at[0].value().at(i) - at0[0].value().at(i) == -alpha * grads[0].value().at(i));
}

TEST_CASE("a small step on the batch decreases the loss") {
    ModelSpec spec{4, {8}, 3};
    Rng rng(31);
    Tensor x = Tensor::zeros({6, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    std::vector<int64_t> labels = {0, 1, 2, 0, 1, 2};

    for (int trial = 0; trial < 50; ++trial) {
        ParamVector p = init_params(spec, 1000 + static_cast<uint64_t>(trial));
        Tape tape;
        auto vars = lift(tape, p);
        Var loss = forward_loss(tape, vars, tape.put(x), labels, 3);
        auto grads = tape.grad(loss, vars);
        std::vector<Tensor> gt;
        for (Var g : grads) gt.push_back(g.value());
        ParamVector stepped = sgd_step_numeric(p, gt, 1e-4);

        Tape t2;
        Var loss2 = forward_loss(t2, lift(t2, stepped), t2.put(x), labels, 3);
        CHECK(loss2.value().item() < loss.value().item());
    }
}

TEST_CASE("accuracy argmax and tie-breaking") {
    // hand-built perfect 1-d classifier
    ParamVector perfect;
    perfect.groups.push_back({"fc0.w", Tensor({1, 2}, {-5.0, 5.0})});
    perfect.groups.push_back({"fc0.b", Tensor({1, 2}, {0.0, 0.0})});
    Tensor x({2, 1}, {-1.0, 1.0});
    CHECK(accuracy(perfect, x, {0, 1}) == 1.0);

    // constant logits predict class 0 everywhere; balanced set scores 0.5
    ParamVector flat;
    flat.groups.push_back({"fc0.w", Tensor::zeros({1, 2})});
    flat.groups.push_back({"fc0.b", Tensor::zeros({1, 2})});
    Tensor x4({4, 1}, {0.3, -0.2, 0.9, -0.7});
    CHECK(accuracy(flat, x4, {0, 1, 0, 1}) == 0.5);
}

TEST_CASE("random init scores near chance on a balanced set") {
    ModelSpec spec{8, {16}, 4};
    LabeledDataset ds = gen_blobs(4, 50, 8, 0.5, 77);
    double mean_acc = 0.0;
    for (int s = 0; s < 20; ++s) mean_acc += accuracy(init_params(spec, 500 + static_cast<uint64_t>(s)), ds);
    mean_acc /= 20.0;
    CHECK(mean_acc > 0.20);
    CHECK(mean_acc < 0.30);
}
