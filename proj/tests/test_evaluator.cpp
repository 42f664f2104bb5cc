#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "mct/evaluator.hpp"
#include "mct/expert_trainer.hpp"

using namespace mct;

namespace {

std::vector<EvalPoint> trace_of(const std::vector<double>& accs) {
    std::vector<EvalPoint> t;
    for (size_t i = 0; i < accs.size(); ++i) t.push_back({static_cast<long>(i), accs[i], 0.0});
    return t;
}

}  // namespace

TEST_CASE("convergence iteration hand cases") {
    // 10, 40, 50, 49, 50.5 settles at point 2: everything later stays
    // within 2 points of the max 50.5
    auto t = trace_of({10, 40, 50, 49, 50.5});
    CHECK(convergence_iteration(t, 2.0) == 2);

    // monotone trace whose earlier points already sit within epsilon
    auto m = trace_of({49.2, 49.5, 49.8, 50.0});
    CHECK(convergence_iteration(m, 2.0) == 0);

    // flat trace converges immediately
    auto f = trace_of({42, 42, 42});
    CHECK(convergence_iteration(f, 2.0) == 0);

    // a trace that ends far below its max never converges
    auto bad = trace_of({50, 10});
    CHECK(!convergence_iteration(bad, 2.0).has_value());

    CHECK_THROWS_AS(convergence_iteration({}, 2.0), ValueError);
}

TEST_CASE("tighter epsilon never converges earlier") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> accs;
        for (int i = 0; i < 12; ++i) accs.push_back(rng.uniform(0.0, 100.0));
        auto t = trace_of(accs);
        for (double wide = 1.0; wide <= 64.0; wide *= 2.0) {
            auto loose = convergence_iteration(t, wide * 2.0);
            auto tight = convergence_iteration(t, wide);
            if (tight.has_value()) {
                REQUIRE(loose.has_value());
                CHECK(*loose <= *tight);
            }
        }
    }
}

TEST_CASE("stability metric") {
    CHECK(stability_metric(trace_of({3, 3, 3, 3}), 4) == 0.0);
    CHECK(stability_metric(trace_of({1, 2, 50, 52}), 2) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK_THROWS_AS(stability_metric(trace_of({1, 2, 3}), 1), ValueError);
    CHECK_THROWS_AS(stability_metric(trace_of({1, 2, 3}), 4), ValueError);
}

TEST_CASE("evaluation of a separable synthetic set hits the ceiling") {
    auto [train, val] = gen_blobs_split(2, 20, 10, 3, 1e-6, 4);
    SyntheticDataset synth = init_synthetic(train, 1, 0.5, 1);
    ModelSpec spec{3, {8}, 2};

    EvalReport report = evaluate_synthetic(synth, val, spec, 3, 200, 11);
    CHECK(report.mean >= 0.99);
}

TEST_CASE("evaluation is deterministic and thread-count independent") {
    auto [train, val] = gen_blobs_split(3, 15, 10, 4, 0.3, 9);
    SyntheticDataset synth = init_synthetic(train, 2, 0.2, 3);
    ModelSpec spec{4, {6}, 3};

    EvalReport a = evaluate_synthetic(synth, val, spec, 5, 80, 21);
    EvalReport b = evaluate_synthetic(synth, val, spec, 5, 80, 21);
    CHECK(a.accuracies == b.accuracies);

    setenv("MCT_THREADS", "1", 1);
    EvalReport serial = evaluate_synthetic(synth, val, spec, 5, 80, 21);
    unsetenv("MCT_THREADS");
    CHECK(a.accuracies == serial.accuracies);

    EvalReport single = evaluate_synthetic(synth, val, spec, 1, 80, 21);
    CHECK(single.stdev == 0.0);
}

TEST_CASE("baseline with every example equals training on the full set") {
    auto [train, val] = gen_blobs_split(2, 12, 8, 3, 0.4, 13);
    ModelSpec spec{3, {5}, 2};

    const double baseline = random_subset_baseline(train, 12, val, spec, 2, 60, 17, 0.1);

    // the same full set, class-major, evaluated directly
    SyntheticDataset full;
    full.ipc = 12;
    full.num_classes = 2;
    full.alpha = 0.1;
    full.features = Tensor::zeros({24, 3});
    for (int64_t c = 0; c < 2; ++c) {
        auto pool = train.indices_of_class(c);
        for (size_t i = 0; i < pool.size(); ++i) {
            for (int64_t j = 0; j < 3; ++j)
                full.features.at(c * 12 + static_cast<int64_t>(i), j) = train.features.at(pool[i], j);
            full.labels.push_back(c);
        }
    }
    CHECK(baseline == evaluate_synthetic(full, val, spec, 2, 60, 17).mean);

    CHECK_THROWS_AS(random_subset_baseline(train, 13, val, spec, 2, 60, 17, 0.1), ValueError);

    // deterministic in seed
    CHECK(random_subset_baseline(train, 3, val, spec, 2, 60, 23, 0.1) ==
          random_subset_baseline(train, 3, val, spec, 2, 60, 23, 0.1));
}

TEST_CASE("pca flattens collinear waypoints onto the first component") {
    ModelSpec spec{3, {4}, 2};
    ParamVector base = init_params(spec, 31);
    ParamVector dir = init_params(spec, 32);
    Rng rng(33);
    for (auto& g : dir.groups)
        for (double& v : g.value.data) v = rng.uniform(-1.0, 1.0);

    std::vector<ParamVector> waypoints;
    std::vector<double> val_accs;
    for (double s : {0.0, 0.2, 0.3, 0.7, 1.0}) {
        ParamVector p = base;
        for (size_t g = 0; g < p.group_count(); ++g)
            for (size_t i = 0; i < p.groups[g].value.data.size(); ++i)
                p.groups[g].value.data[i] += s * dir.groups[g].value.data[i];
        waypoints.push_back(std::move(p));
        val_accs.push_back(0.5 + 0.4 * s);
    }

    PcaResult pca = pca_project_trajectory(waypoints, val_accs);
    CHECK(pca.component_variance[1] < 1e-8 * pca.component_variance[0]);
    REQUIRE(pca.one_minus_val_acc.size() == 5);
    CHECK(pca.one_minus_val_acc[0] == Catch::Approx(0.5));

    // orthonormal components
    CHECK(std::abs(l2_norm(pca.components[0]) - 1.0) < 1e-8);
    CHECK(std::abs(l2_norm(pca.components[1]) - 1.0) < 1e-8);
    CHECK(std::abs(dot(pca.components[0], pca.components[1])) < 1e-8);
}

TEST_CASE("pca directions are seed independent up to sign") {
    ModelSpec spec{4, {5}, 3};
    std::vector<ParamVector> waypoints;
    Rng rng(41);
    ParamVector p = init_params(spec, 40);
    for (int t = 0; t < 8; ++t) {
        for (auto& g : p.groups)
            for (double& v : g.value.data) v += 0.1 * rng.normal();
        waypoints.push_back(p);
    }

    PcaResult a = pca_project_trajectory(waypoints, {}, 0);
    PcaResult b = pca_project_trajectory(waypoints, {}, 1);
    CHECK(std::abs(dot(a.components[0], b.components[0])) > 0.9999);
    CHECK(std::abs(dot(a.components[1], b.components[1])) > 0.9999);
}

TEST_CASE("pca input validation") {
    ModelSpec spec{2, {}, 2};
    ParamVector p = init_params(spec, 50);
    CHECK_THROWS_AS(pca_project_trajectory({p, p}, {}), ValueError);
    CHECK_THROWS_MATCHES(pca_project_trajectory({p, p, p}, {}), ValueError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("rank")));
}
