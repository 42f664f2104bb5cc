#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mct/trajectory_store.hpp"

using namespace mct;

namespace {

// single-group buffer whose checkpoints take the given scalar values
MttBuffer scalar_buffer(const std::vector<double>& values) {
    MttBuffer buf;
    buf.spec = ModelSpec{1, {}, 1};
    for (double v : values) {
        ParamVector p;
        p.groups.push_back({"w", Tensor({1}, {v})});
        buf.checkpoints.push_back(std::move(p));
    }
    for (size_t t = 0; t + 1 < values.size(); ++t)
        buf.delta_norms.push_back({std::abs(values[t + 1] - values[t])});
    return buf;
}

// random-walk buffer with the MLP layout of `spec`
MttBuffer fake_buffer(const ModelSpec& spec, int K, uint64_t seed) {
    Rng rng(seed);
    MttBuffer buf;
    buf.spec = spec;
    ParamVector p = init_params(spec, seed);
    buf.checkpoints.push_back(p);
    for (int k = 0; k < K; ++k) {
        for (auto& g : p.groups)
            for (double& v : g.value.data) v += 0.05 * rng.normal();
        buf.delta_norms.push_back(group_delta_norms(p, buf.checkpoints.back()));
        buf.checkpoints.push_back(p);
    }
    return buf;
}

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("beta hand case") {
    // checkpoints 0,1,3,4 -> step norms 1,2,1 over the single segment [0,3]
    MttBuffer buf = scalar_buffer({0, 1, 3, 4});
    ConvexTrajectory traj = convexify(buf, {0, 3});

    REQUIRE(traj.beta.size() == 4);
    CHECK(traj.beta[0][0] == 0.0);
    CHECK(traj.beta[1][0] == 0.25);
    CHECK(traj.beta[2][0] == 0.75);
    CHECK(traj.beta[3][0] == 1.0);

    // continuous sampling: c = 1.5 interpolates beta to 0.5, value 2.0
    CHECK(sample_continuous(traj, 1.5).groups[0].value.at(0) == 2.0);

    // integer c reproduces the discrete convexified waypoint
    for (int t = 0; t <= 3; ++t) {
        const double expect = (1.0 - traj.beta[static_cast<size_t>(t)][0]) * 0.0 +
                              traj.beta[static_cast<size_t>(t)][0] * 4.0;
        CHECK(sample_continuous(traj, t).groups[0].value.at(0) == expect);
    }

    // exact endpoints
    CHECK(sample_continuous(traj, 0.0).groups[0].value.at(0) == 0.0);
    CHECK(sample_continuous(traj, 3.0).groups[0].value.at(0) == 4.0);
}

TEST_CASE("K=1 trajectory is the single segment") {
    MttBuffer buf = scalar_buffer({2.0, 6.0});
    ConvexTrajectory traj = convexify(buf, {0, 1});
    CHECK(traj.beta[0][0] == 0.0);
    CHECK(traj.beta[1][0] == 1.0);
    CHECK(sample_continuous(traj, 0.5).groups[0].value.at(0) == 4.0);
}

TEST_CASE("interior anchors rescale beta per segment") {
    // values 0,1,2,6,10: step norms 1,1,4,4; anchors split at t=2
    MttBuffer buf = scalar_buffer({0, 1, 2, 6, 10});
    ConvexTrajectory traj = convexify(buf, {0, 2, 4});

    CHECK(traj.beta[1][0] == 0.5);
    CHECK(traj.beta[2][0] == 1.0);
    CHECK(traj.beta[3][0] == 0.5);
    CHECK(traj.beta[4][0] == 1.0);

    // c = 1.5 sits in segment [0,2]: beta_hat = 0.75 -> 0.25*0 + 0.75*2
    CHECK(sample_continuous(traj, 1.5).groups[0].value.at(0) == 1.5);
    // anchor timestep sampled exactly
    CHECK(sample_continuous(traj, 2.0).groups[0].value.at(0) == 2.0);
    // c = 2.5 sits in segment [2,4]: beta_hat = 0.25 -> 0.75*2 + 0.25*10
    CHECK(sample_continuous(traj, 2.5).groups[0].value.at(0) == 4.0);
}

TEST_CASE("beta table properties on seeded buffers") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        MttBuffer buf = fake_buffer(ModelSpec{4, {5}, 3}, 8, seed);
        std::vector<int> anchors = (seed % 2 == 0) ? std::vector<int>{0, 8} : std::vector<int>{0, 3, 8};
        ConvexTrajectory traj = convexify(buf, anchors);

        for (size_t g = 0; g < traj.group_count(); ++g) {
            CHECK(traj.beta[0][g] == 0.0);
            for (size_t j = 0; j + 1 < anchors.size(); ++j) {
                const int lo = anchors[j], hi = anchors[j + 1];
                CHECK(std::abs(traj.beta[static_cast<size_t>(hi)][g] - 1.0) <= 1e-12);
                double prev = 0.0;
                for (int t = lo + 1; t <= hi; ++t) {
                    const double b = traj.beta[static_cast<size_t>(t)][g];
                    CHECK(b >= prev);
                    CHECK(b >= 0.0);
                    CHECK(b <= 1.0);
                    prev = b;
                }
            }
        }
    }
}

TEST_CASE("sampled points stay on the anchor segment") {
    MttBuffer buf = fake_buffer(ModelSpec{6, {8}, 3}, 10, 42);
    ConvexTrajectory traj = convexify(buf, {0, 4, 10});
    Rng rng(7);

    for (int trial = 0; trial < 50; ++trial) {
        const double c = rng.uniform(0.0, 10.0);
        ParamVector p = sample_continuous(traj, c);
        const int j = traj.segment_of(c);
        const ParamVector& s = traj.anchor_params[static_cast<size_t>(j)];
        const ParamVector& e = traj.anchor_params[static_cast<size_t>(j) + 1];

        for (size_t g = 0; g < p.group_count(); ++g) {
            const auto& pv = p.groups[g].value.data;
            const auto& sv = s.groups[g].value.data;
            const auto& ev = e.groups[g].value.data;
            // least-squares projection of (p - s) onto (e - s)
            double num = 0.0, den = 0.0;
            for (size_t i = 0; i < pv.size(); ++i) {
                num += (pv[i] - sv[i]) * (ev[i] - sv[i]);
                den += (ev[i] - sv[i]) * (ev[i] - sv[i]);
            }
            const double t = num / den;
            double residual = 0.0;
            for (size_t i = 0; i < pv.size(); ++i) {
                const double r = pv[i] - sv[i] - t * (ev[i] - sv[i]);
                residual += r * r;
            }
            CHECK(std::sqrt(residual) < 1e-10);
        }
    }
}

TEST_CASE("convexify only depends on delta norm ratios") {
    MttBuffer buf = fake_buffer(ModelSpec{3, {4}, 2}, 6, 5);

    MttBuffer scaled4 = buf;
    for (auto& row : scaled4.delta_norms)
        for (double& v : row) v *= 4.0;  // power of two: bitwise identical ratios
    CHECK(convexify(scaled4, {0, 6}).beta == convexify(buf, {0, 6}).beta);

    MttBuffer scaled3 = buf;
    for (auto& row : scaled3.delta_norms)
        for (double& v : row) v *= 3.0;
    auto a = convexify(buf, {0, 6}).beta;
    auto b = convexify(scaled3, {0, 6}).beta;
    for (size_t t = 0; t < a.size(); ++t)
        for (size_t g = 0; g < a[t].size(); ++g) CHECK(a[t][g] == Catch::Approx(b[t][g]).margin(1e-12));
}

TEST_CASE("convexification is lossless on an already-linear trajectory") {
    // waypoints on a line with uneven spacing
    ModelSpec spec{4, {6}, 2};
    ParamVector start = init_params(spec, 77);
    ParamVector dir = init_params(spec, 78);
    Rng dir_rng(79);
    for (auto& g : dir.groups)
        for (double& v : g.value.data) v = dir_rng.uniform(-1.0, 1.0);
    const std::vector<double> s = {0.0, 0.1, 0.35, 0.4, 0.8, 1.0};

    MttBuffer buf;
    buf.spec = spec;
    for (double si : s) {
        ParamVector p = start;
        for (size_t g = 0; g < p.group_count(); ++g)
            for (size_t i = 0; i < p.groups[g].value.data.size(); ++i)
                p.groups[g].value.data[i] += si * dir.groups[g].value.data[i];
        buf.checkpoints.push_back(std::move(p));
    }
    for (size_t t = 0; t + 1 < buf.checkpoints.size(); ++t)
        buf.delta_norms.push_back(group_delta_norms(buf.checkpoints[t + 1], buf.checkpoints[t]));

    ConvexTrajectory traj = convexify(buf, {0, 5});
    for (int t = 0; t <= 5; ++t) {
        ParamVector p = sample_continuous(traj, t);
        const auto expect = buf.checkpoints[static_cast<size_t>(t)].flatten();
        const auto got = p.flatten();
        for (size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == Catch::Approx(expect[i]).margin(1e-12));
    }
}

TEST_CASE("degenerate segments are rejected") {
    MttBuffer frozen = scalar_buffer({1.0, 1.0, 1.0});
    CHECK_THROWS_MATCHES(convexify(frozen, {0, 2}), ValueError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("degenerate")));

    // a single frozen group poisons the segment even if others move
    MttBuffer buf = fake_buffer(ModelSpec{2, {}, 2}, 3, 1);
    for (auto& row : buf.delta_norms) row[1] = 0.0;
    CHECK_THROWS_AS(convexify(buf, {0, 3}), ValueError);
}

TEST_CASE("anchor validation") {
    MttBuffer buf = fake_buffer(ModelSpec{2, {}, 2}, 4, 3);
    CHECK_THROWS_AS(convexify(buf, {0}), ValueError);
    CHECK_THROWS_AS(convexify(buf, {1, 4}), ValueError);
    CHECK_THROWS_AS(convexify(buf, {0, 3}), ValueError);
    CHECK_THROWS_AS(convexify(buf, {0, 2, 2, 4}), ValueError);

    ConvexTrajectory traj = convexify(buf, {0, 4});
    CHECK_THROWS_AS(sample_continuous(traj, -0.1), ValueError);
    CHECK_THROWS_AS(sample_continuous(traj, 4.1), ValueError);
}

TEST_CASE("buffer file round trip") {
    MttBuffer buf = fake_buffer(ModelSpec{3, {4}, 2}, 4, 9);
    // place params on the f32 grid so the in-memory/file comparison is exact
    for (auto& chk : buf.checkpoints)
        for (auto& g : chk.groups)
            for (double& v : g.value.data) v = static_cast<double>(static_cast<float>(v));

    const std::string path = tmp_path("mct_buf.mttb");
    write_buffer(path, buf);
    MttBuffer loaded = read_buffer(path);

    CHECK(loaded.spec == buf.spec);
    REQUIRE(loaded.K() == buf.K());
    for (size_t k = 0; k < buf.checkpoints.size(); ++k) {
        CHECK(loaded.checkpoints[k].flatten() == buf.checkpoints[k].flatten());
        CHECK(loaded.checkpoints[k].groups[0].name == "fc0.w");
    }
    CHECK(loaded.delta_norms == buf.delta_norms);

    // read-then-write reproduces the bytes
    CHECK(serialize_buffer(loaded) == read_file(path));
}

TEST_CASE("convex file round trip") {
    MttBuffer buf = fake_buffer(ModelSpec{3, {4}, 2}, 6, 13);
    for (auto& chk : buf.checkpoints)
        for (auto& g : chk.groups)
            for (double& v : g.value.data) v = static_cast<double>(static_cast<float>(v));
    ConvexTrajectory traj = convexify(buf, {0, 2, 6});

    const std::string path = tmp_path("mct_traj.mctb");
    write_convex(path, traj);
    ConvexTrajectory loaded = read_convex(path);

    CHECK(loaded.spec == traj.spec);
    CHECK(loaded.anchors == traj.anchors);
    CHECK(loaded.K == traj.K);
    CHECK(loaded.beta == traj.beta);
    for (size_t i = 0; i < traj.anchor_params.size(); ++i)
        CHECK(loaded.anchor_params[i].flatten() == traj.anchor_params[i].flatten());
    CHECK(serialize_convex(loaded) == read_file(path));
}

TEST_CASE("malformed trajectory files are rejected") {
    MttBuffer buf = fake_buffer(ModelSpec{2, {}, 2}, 2, 4);
    auto bytes = serialize_buffer(buf);

    auto corrupted = bytes;
    corrupted[0] = 'X';
    CHECK_THROWS_MATCHES(deserialize_buffer(corrupted, "corrupted"), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("bad magic")));

    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_MATCHES(deserialize_buffer(truncated, "truncated"), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("truncated")));

    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_MATCHES(deserialize_buffer(bad_version, "bad_version"), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("version")));
}

TEST_CASE("storage ratios") {
    const ModelSpec spec{16, {64, 64}, 4};

    {
        MttBuffer buf = fake_buffer(spec, 50, 1);
        StorageReport two = storage_report(buf, convexify(buf, {0, 50}));
        CHECK(two.ratio < 0.05);
        CHECK(two.param_count == 5508);
        CHECK(two.beta_entries == 51 * 6);

        // the two inserted waypoints roughly double the stored models
        StorageReport four = storage_report(buf, convexify(buf, {0, 6, 25, 50}));
        CHECK(four.ratio >= 0.06);
        CHECK(four.ratio <= 0.10);
    }
    {
        MttBuffer buf = fake_buffer(spec, 20, 2);
        StorageReport rep = storage_report(buf, convexify(buf, {0, 20}));
        CHECK(rep.ratio < 0.15);
    }
    {
        // K=1 stores two models either way; no savings possible
        MttBuffer buf = fake_buffer(spec, 1, 3);
        StorageReport rep = storage_report(buf, convexify(buf, {0, 1}));
        CHECK(std::abs(rep.ratio - 1.0) < 0.05);
    }
}

TEST_CASE("storage report from files on disk") {
    MttBuffer buf = fake_buffer(ModelSpec{4, {8}, 3}, 6, 17);
    ConvexTrajectory traj = convexify(buf, {0, 6});
    const std::string mp = tmp_path("mct_sr.mttb"), cp = tmp_path("mct_sr.mctb");
    write_buffer(mp, buf);
    write_convex(cp, traj);

    StorageReport rep = storage_report_files(mp, cp);
    CHECK(rep.bytes_mtt == std::filesystem::file_size(mp));
    CHECK(rep.bytes_conv == std::filesystem::file_size(cp));
    CHECK(rep.ratio == static_cast<double>(rep.bytes_conv) / static_cast<double>(rep.bytes_mtt));
}
