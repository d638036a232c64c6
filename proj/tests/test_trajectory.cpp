#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "mdmx/error.hpp"
#include "mdmx/numerics/random.hpp"
#include "mdmx/trajectory.hpp"

using namespace mdmx;

namespace {

// Three regimes traced along the progress axis with light noise.
TrajectoryData regime_data(int per_cluster, double noise, std::uint64_t seed) {
    Rng rng(seed);
    TrajectoryData d;
    d.n_clusters = 3;
    const int n = 3 * per_cluster;
    d.z.resize(n, 2 * kDefaultAges);
    d.e0.resize(n);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < per_cluster; ++i) {
            const int row = k * per_cluster + i;
            Vector z = testing::regime_schedule(k, rng.uniform(0.0, 1.6));
            for (int j = 0; j < z.size(); ++j) z[j] += noise * rng.normal();
            d.z.row(row) = z.transpose();
            d.e0[row] = forward_e0(z);
            d.labels.push_back(k);
            d.cells.push_back({k, i});
        }
    return d;
}

}  // namespace

TEST_CASE("planted linear trajectory is reproduced with its slope") {
    Rng rng(3);
    const int n = 300, p = 12;
    Vector a(p), b(p);
    for (int j = 0; j < p; ++j) a[j] = rng.normal(), b[j] = 0.1 * rng.normal();
    Vector e0(n);
    Matrix z(n, p);
    for (int i = 0; i < n; ++i) {
        e0[i] = rng.uniform(40, 80);
        z.row(i) = (a + b * e0[i]).transpose();
    }
    const TrajectoryGrid g = fit_trajectory_grid(1, e0, z);
    CHECK(g.e0.size() == 150);
    CHECK(g.e0_min() == e0.minCoeff());
    CHECK(g.e0_max() == e0.maxCoeff());
    for (int i = 0; i < 150; ++i) {
        if (i > 0) CHECK(g.e0[i] > g.e0[i - 1]);
        CHECK((g.values.row(i).transpose() - (a + b * g.e0[i])).cwiseAbs().maxCoeff() < 1e-3);
        CHECK((g.tangents.row(i).transpose() - b).cwiseAbs().maxCoeff() < 1e-3);
    }
    // interior tangent is the central difference of stored values
    const Vector cd = (g.values.row(11) - g.values.row(9)).transpose() / (g.e0[11] - g.e0[9]);
    CHECK((g.tangents.row(10).transpose() - cd).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grid nodes are returned verbatim and linear in between") {
    Rng rng(1);
    Vector e0(50);
    Matrix z(50, 3);
    for (int i = 0; i < 50; ++i) e0[i] = i, z.row(i) << std::sin(0.1 * i), i * i * 0.01, rng.normal();
    const TrajectoryGrid g = fit_trajectory_grid(0, e0, z);
    for (int i : {0, 17, 80, 149}) CHECK(interpolate(g, g.e0[i]) == g.values.row(i).transpose());
    const double mid = 0.5 * (g.e0[20] + g.e0[21]);
    const Vector expect = 0.5 * (g.values.row(20) + g.values.row(21)).transpose();
    CHECK((interpolate(g, mid) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("targets outside the range are rejected with the supported range") {
    const TrajectoryData d = regime_data(60, 0.0, 2);
    const TrajectoryGrid g = fit_trajectory_grid(0, d.e0, d.z);
    try {
        reconstruct_at(g, g.e0_min() - 1.0);
        FAIL("expected ExtrapolationError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExtrapolationError);
        CHECK(std::string(e.what()).find("supported range") != std::string::npos);
    }
    CHECK_THROWS_AS(interpolate(g, g.e0_max() + 0.5), Error);
    RefineOptions ro;
    ro.allow_extrapolation = true;
    const Reconstruction r = reconstruct_at(g, g.e0_max() + 1.0, ro);
    CHECK(std::abs(r.e0 - (g.e0_max() + 1.0)) <= 0.01);
}

TEST_CASE("refined reconstruction hits the target everywhere in range") {
    const TrajectoryData d = regime_data(120, 0.02, 5);
    const TrajectoryGrid g = fit_trajectory_grid(0, d.e0, d.z);
    Rng rng(8);
    for (int i = 0; i < 150; ++i) {
        const double target = i < 100 ? rng.uniform(g.e0_min(), g.e0_max()) : g.e0[(i - 100) * 3];
        const Reconstruction r = reconstruct_at(g, target);
        CHECK(r.converged);
        CHECK(std::abs(forward_e0(r.z) - target) <= 0.01);
    }
    RefineOptions plain;
    plain.refine = false;
    CHECK(reconstruct_at(g, g.e0[40], plain).z == g.values.row(40).transpose());
}

TEST_CASE("forward e0 increases along grids fit to monotone data") {
    const TrajectoryData d = regime_data(100, 0.0, 9);
    const TrajectorySet set = fit_trajectories(d);
    REQUIRE(set.grids.size() == 4);
    for (const auto& g : set.grids) {
        double prev = -INFINITY;
        for (int i = 0; i < 150; ++i) {
            const double e = forward_e0(g.values.row(i).transpose());
            CHECK(e > prev);
            prev = e;
        }
    }
}

TEST_CASE("female and male halves are fit independently") {
    TrajectoryData d = regime_data(80, 0.02, 4);
    const TrajectoryGrid g1 = fit_trajectory_grid(0, d.e0, d.z);
    Rng rng(6);
    for (Eigen::Index i = 0; i < d.z.rows(); ++i)
        for (int a = kDefaultAges; a < 2 * kDefaultAges; ++a) d.z(i, a) += 0.3 * rng.normal();
    const TrajectoryGrid g2 = fit_trajectory_grid(0, d.e0, d.z);
    CHECK(g1.values.leftCols(kDefaultAges) == g2.values.leftCols(kDefaultAges));
    CHECK((g1.values.rightCols(kDefaultAges) - g2.values.rightCols(kDefaultAges)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("small clusters are skipped with a warning") {
    TrajectoryData d = regime_data(30, 0.01, 1);
    for (int i = 30; i < 55; ++i) d.labels[static_cast<std::size_t>(i)] = 0;  // label 1 keeps 5 rows
    std::vector<std::string> warnings;
    const TrajectorySet set = fit_trajectories(d, {}, &warnings);
    CHECK(set.skipped == std::vector<int>{2});
    CHECK(set.find(2) == nullptr);
    CHECK(set.find(0) != nullptr);
    CHECK(set.find(0)->n_obs == 90);
    CHECK(warnings.size() == 1);
}

TEST_CASE("trajectory data from a fitted decomposition") {
    const auto panel = testing::synthetic_panel(4, 50, 12);
    const TuckerModel m = hosvd(panel.tensor);
    const AgeStructureFeatures feat = extract_features(m, panel.tensor);
    std::vector<int> labels(feat.cells.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = feat.cells[i].c % 2;
    const TrajectoryData d = trajectory_data(m, feat, labels, 2);
    CHECK(d.z.rows() == static_cast<Eigen::Index>(feat.cells.size()));
    CHECK(d.e0[5] == forward_e0(reconstruct_pair(m, feat.cells[5].c, feat.cells[5].t)));
    const TrajectorySet set = fit_trajectories(d);
    CHECK(set.grids.size() == 3);
}

TEST_CASE("e0 encoding and embedding layout") {
    E0Encoding enc{40, 80};
    const Vector f = enc.features(60);
    CHECK(f[0] == doctest::Approx(0.5));
    CHECK(f[2] == doctest::Approx(0.125));
    CHECK(f[3] == doctest::Approx(1.0));
    CHECK(f[6] == doctest::Approx(-1.0));
    CHECK(enc.features(90)[0] == doctest::Approx(1.25));  // not clamped

    const TrajectoryData d = regime_data(30, 0.0, 3);
    const ClusterEmbeddings emb = cluster_embeddings(d);
    CHECK(emb.dim() == 3);
    CHECK(emb.e.cwiseAbs().maxCoeff() == doctest::Approx(1.0));
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) CHECK((emb.e.row(i) - emb.e.row(j)).norm() > 1e-3);
}

TEST_CASE("neural trajectory parameter count") {
    const Mlp net({15, 256, 128, 220}, 0);
    CHECK(net.n_parameters() == 65372);
}

TEST_CASE("untrained network gives a finite forward pass") {
    const TrajectoryData d = regime_data(20, 0.0, 2);
    NeuralTrajectoryOptions o;
    o.epochs = 0;
    const NeuralTrajectory nt = train_neural_trajectory(d, o);
    const Vector z = nt.predict(1, 60.0);
    CHECK(z.size() == 2 * kDefaultAges);
    CHECK(z.allFinite());
}

TEST_CASE("neural trajectory tracks the LOWESS grids") {
    const TrajectoryData d = regime_data(200, 0.02, 21);
    const TrajectorySet set = fit_trajectories(d);
    NeuralTrajectoryOptions o;
    o.seed = 5;
    const NeuralTrajectory nt = train_neural_trajectory(d, o);
    CHECK(std::isfinite(nt.train_mse));

    for (int k = 0; k < 3; ++k) {
        const TrajectoryGrid* g = set.find(k + 1);
        REQUIRE(g != nullptr);
        double sse = 0.0;
        long cnt = 0;
        for (int i = 0; i < 150; ++i) {
            const Vector diff = nt.predict(k, g->e0[i]) - g->values.row(i).transpose();
            sse += diff.squaredNorm();
            cnt += diff.size();
        }
        const double rmse = std::sqrt(sse / static_cast<double>(cnt));
        CHECK(rmse <= 0.15);
    }

    // bit-for-bit determinism at an exact embedding
    const Vector e1 = nt.embeddings.e.row(1).transpose();
    CHECK(nt.predict(1, 65.0) == nt.predict_embedding(e1, 65.0));
    CHECK(nt.predict(1, 65.0) == nt.net.forward(nt.input(e1, 65.0).transpose()).row(0).transpose());

    // midpoint of two embeddings lands between the two outputs
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const double e0 = 68.0;
            const Vector zi = nt.predict(i, e0), zj = nt.predict(j, e0);
            const Vector mid = nt.predict_embedding(0.5 * (nt.embeddings.e.row(i) + nt.embeddings.e.row(j)).transpose(), e0);
            const double dij = (zi - zj).norm();
            CHECK((mid - zi).norm() <= dij);
            CHECK((mid - zj).norm() <= dij);
        }

    // modest extrapolation stays well behaved
    const double target = nt.encoding.e0_max + 2.0;
    for (int k = 0; k < 3; ++k) {
        const Vector z = nt.predict(k, target);
        CHECK(z.allFinite());
        CHECK(std::abs(forward_e0(z) - target) <= 3.0);
        for (int s = 0; s < 2; ++s) {
            int violations = 0;
            for (int a = 41; a < kDefaultAges; ++a)
                if (z[s * kDefaultAges + a] < z[s * kDefaultAges + a - 1]) ++violations;
            CHECK(violations <= 2);
        }
    }
}
