#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mdmx/error.hpp"
#include "mdmx/numerics/gmm.hpp"
#include "mdmx/numerics/linalg.hpp"
#include "mdmx/numerics/mlp.hpp"
#include "mdmx/numerics/optimize.hpp"
#include "mdmx/numerics/pca.hpp"
#include "mdmx/numerics/random.hpp"
#include "mdmx/numerics/smoothing.hpp"
#include "mdmx/numerics/ward.hpp"

using namespace mdmx;

namespace {

Matrix random_matrix(Rng& rng, int r, int c) {
    Matrix m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    Rng c(7);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = c.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    double ps = 0;
    for (int i = 0; i < 20000; ++i) ps += static_cast<double>(c.poisson(3.5));
    CHECK(std::abs(ps / 20000 - 3.5) < 0.05);
}

TEST_CASE("thin svd reconstructs and matches eigenvalues of the Gram matrix") {
    Rng rng(1);
    const Matrix m = random_matrix(rng, 12, 5);
    const Svd s = thin_svd(m);
    CHECK((s.u * s.s.asDiagonal() * s.v.transpose() - m).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((s.u.transpose() * s.u - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.transpose() * m);
    Vector ev = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
    CHECK((ev - s.s).cwiseAbs().maxCoeff() < 1e-10);
    Matrix bad = m;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(thin_svd(bad), Error);
}

TEST_CASE("qr orthonormalisation") {
    Rng rng(2);
    const Matrix q0 = qr_orthonormalize(random_matrix(rng, 10, 4));
    CHECK((q0.transpose() * q0 - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
    // an orthonormal input comes back as itself
    const Matrix again = qr_orthonormalize(q0);
    CHECK((again - q0).cwiseAbs().maxCoeff() < 1e-12);
    // span is preserved: projecting the input onto Q loses nothing
    const Matrix m = random_matrix(rng, 10, 3);
    const Matrix q = qr_orthonormalize(m);
    CHECK((q * (q.transpose() * m) - m).cwiseAbs().maxCoeff() < 1e-12);
    Matrix dup(6, 2);
    dup.col(0) = Vector::LinSpaced(6, 1, 6);
    dup.col(1) = 2 * dup.col(0);
    CHECK_THROWS_AS(qr_orthonormalize(dup), Error);
}

TEST_CASE("pca retains components by variance fraction") {
    // orthogonal design with column variances 10, 1, 1e-8
    const int n = 8;
    Matrix x = Matrix::Zero(n, 3);
    const double sd[3] = {std::sqrt(10.0), 1.0, 1e-4};
    for (int i = 0; i < n; ++i) {
        // Hadamard-like sign patterns: mutually orthogonal and zero-mean
        x(i, 0) = sd[0] * ((i & 1) ? 1 : -1);
        x(i, 1) = sd[1] * ((i & 2) ? 1 : -1);
        x(i, 2) = sd[2] * ((i & 4) ? 1 : -1);
    }
    const Pca p = pca_fit(x, PcaTarget::variance(0.999));
    CHECK(p.dim() == 2);
    CHECK(p.explained_ratio.sum() <= 1.0 + 1e-12);
    CHECK_THROWS_AS(pca_fit(x.topRows(1), PcaTarget::variance(0.9)), Error);
}

TEST_CASE("pca ratios match covariance eigenvalues") {
    Rng rng(3);
    Matrix x = random_matrix(rng, 200, 5);
    x.col(1) *= 3.0;
    x.col(3) += 0.5 * x.col(1);
    const Pca p = pca_fit(x, PcaTarget::components(5));
    const Matrix c = x.rowwise() - x.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.transpose() * c);
    const Vector ev = eig.eigenvalues().reverse();
    CHECK((p.explained_ratio - ev / ev.sum()).cwiseAbs().maxCoeff() < 1e-10);
    for (int j = 1; j < 5; ++j) CHECK(p.explained_ratio[j] <= p.explained_ratio[j - 1] + 1e-15);
    // round trip with all components
    CHECK((p.inverse_transform(p.transform(x)) - x).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("lowess reproduces linear data and resists an outlier") {
    Vector x = Vector::LinSpaced(50, 0, 49);
    Vector y = 2.0 + 0.5 * x.array();
    Lowess fit(x, y, {0.3, 1});
    CHECK((fit.fitted() - y).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(fit(12.25) - (2.0 + 0.5 * 12.25)) < 1e-8);
    Vector yo = y;
    yo[25] += 100.0;
    Lowess robust(x, yo, {0.3, 1});
    CHECK(std::abs(robust(25.0) - y[25]) < 0.5);
    // column helper agrees with the scalar object
    Matrix ys(50, 2);
    ys.col(0) = yo;
    ys.col(1) = y;
    const Vector q = Vector::LinSpaced(7, 0, 49);
    const Matrix cols = lowess_columns(x, ys, q, {0.3, 1});
    for (int i = 0; i < 7; ++i) CHECK(cols(i, 0) == doctest::Approx(robust(q[i])).epsilon(1e-12));
    CHECK_THROWS_AS(Lowess(x, y, {0.0, 1}), Error);
}

TEST_CASE("savitzky-golay keeps cubics and copies edges") {
    const int n = 30;
    Vector y(n);
    for (int i = 0; i < n; ++i) y[i] = 1.0 - 0.2 * i + 0.03 * i * i - 0.001 * i * i * i;
    const Vector s = savitzky_golay(y, 11, 3, false);
    CHECK((s - y).cwiseAbs().maxCoeff() < 1e-9);
    Vector noisy = y;
    noisy[0] += 1.0;
    noisy[n - 1] -= 1.0;
    const Vector e = savitzky_golay(noisy, 11, 3, true);
    CHECK(e[0] == noisy[0]);
    CHECK(e[n - 1] == noisy[n - 1]);
    CHECK_THROWS_AS(savitzky_golay(y, 10, 3, true), Error);
    CHECK_THROWS_AS(savitzky_golay(y.head(5), 11, 3, true), Error);
    CHECK_THROWS_AS(savitzky_golay(y, 5, 5, true), Error);
}

TEST_CASE("variable-bandwidth gaussian smoothing") {
    const Vector c = Vector::Constant(110, -3.25);
    CHECK((gaussian_smooth_varbw(c, 40, 0.25, 2.0) - c).cwiseAbs().maxCoeff() < 1e-12);
    Rng rng(4);
    Vector y(110);
    for (int i = 0; i < 110; ++i) y[i] = rng.normal();
    CHECK((gaussian_smooth_varbw(y, 40, 0.25, 0.0).array() == y.array()).all());
    // direct evaluation at age 60, where the width is sigma_max
    const Vector s = gaussian_smooth_varbw(y, 40, 0.25, 2.5);
    double sw = 0, swy = 0;
    for (int j = 0; j < 110; ++j) {
        const double w = std::exp(-0.5 * (j - 60) * (j - 60) / 6.25);
        sw += w;
        swy += w * y[j];
    }
    CHECK(s[60] == doctest::Approx(swy / sw).epsilon(1e-12));
    CHECK_THROWS_AS(gaussian_smooth_varbw(y, 0.0, 0.25, 2.0), Error);
}

TEST_CASE("brent root finding") {
    const double r = brent_root([](double x) { return std::cos(x) - x; }, 0.0, 1.0, 1e-14);
    CHECK(std::abs(std::cos(r) - r) < 1e-12);
    CHECK_THROWS_AS(brent_root([](double x) { return x * x + 1; }, -1, 1), Error);
}

TEST_CASE("bounded minimisation") {
    auto quad = [](const Vector& x) { return (x[0] - 5) * (x[0] - 5); };
    auto r1 = bounded_minimize(quad, Vector::Constant(1, 1.0), Vector::Constant(1, 0), Vector::Constant(1, 10));
    CHECK(std::abs(r1.x[0] - 5.0) < 1e-6);
    auto far = [](const Vector& x) { return (x[0] - 15) * (x[0] - 15) + (x[1] + 2) * (x[1] + 2); };
    Vector lo(2), hi(2);
    lo << 0, 0;
    hi << 10, 10;
    auto r2 = bounded_minimize(far, Vector::Constant(2, 3.0), lo, hi);
    CHECK(std::abs(r2.x[0] - 10) < 1e-9);
    CHECK(std::abs(r2.x[1]) < 1e-9);
    auto rosen = [](const Vector& x) {
        return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
    };
    Vector start(2);
    start << -1.2, 1.0;
    auto r3 = bounded_minimize(rosen, start, Vector::Constant(2, -5), Vector::Constant(2, 5));
    CHECK(std::abs(r3.x[0] - 1) < 1e-4);
    CHECK(std::abs(r3.x[1] - 1) < 1e-4);
    auto bad = [](const Vector&) { return std::nan(""); };
    CHECK_THROWS_AS(bounded_minimize(bad, start, Vector::Constant(2, -5), Vector::Constant(2, 5)), Error);
}

TEST_CASE("gmm with one component is the sample mean and covariance") {
    Rng rng(5);
    Matrix x = random_matrix(rng, 300, 3);
    x.col(2) += 0.7 * x.col(0);
    const Gmm g = gmm_fit_em(x, 1, {});
    const Vector mu = x.colwise().mean().transpose();
    const Matrix c = x.rowwise() - mu.transpose();
    const Matrix cov = c.transpose() * c / 300.0;
    CHECK((g.means[0] - mu).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((g.covs[0] - cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(g.n_parameters() == 0 + 3 + 6);
}

TEST_CASE("gmm separates blobs and em is monotone") {
    Rng rng(6);
    Matrix x(300, 2);
    std::vector<int> truth(300);
    for (int i = 0; i < 300; ++i) {
        const int k = i % 3;
        truth[i] = k;
        x(i, 0) = 10.0 * k + rng.normal();
        x(i, 1) = (k == 1 ? 8.0 : 0.0) + rng.normal();
    }
    GmmOptions o;
    o.seed = 11;
    const Gmm g = gmm_fit_em(x, 3, o);
    for (std::size_t i = 1; i < g.ll_history.size(); ++i)
        CHECK(g.ll_history[i] >= g.ll_history[i - 1] - 1e-8 * std::abs(g.ll_history[i - 1]));
    CHECK(matched_agreement(truth, g.predict(x)) == 1.0);
    CHECK(g.n_parameters() == 2 + 6 + 9);
    CHECK(g.bic(300) == doctest::Approx(-2 * g.log_likelihood + 17 * std::log(300.0)));
    // identical seed -> identical fit
    const Gmm h = gmm_fit_em(x, 3, o);
    CHECK(h.log_likelihood == g.log_likelihood);
}

TEST_CASE("hungarian matches brute force") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix cost = random_matrix(rng, 5, 5);
        std::vector<int> perm(5);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e300;
        do {
            double c = 0;
            for (int i = 0; i < 5; ++i) c += cost(i, perm[i]);
            best = std::min(best, c);
        } while (std::next_permutation(perm.begin(), perm.end()));
        const auto a = hungarian(cost);
        double got = 0;
        for (int i = 0; i < 5; ++i) got += cost(i, a[i]);
        CHECK(got == doctest::Approx(best).epsilon(1e-12));
    }
    CHECK(matched_agreement({0, 0, 1, 1, 2}, {2, 2, 0, 0, 1}) == 1.0);
}

TEST_CASE("ward linkage and silhouette") {
    Matrix p(3, 1);
    p << 0, 1, 10;
    const auto m = ward_linkage(p);
    REQUIRE(m.size() == 2);
    CHECK(((m[0].a == 0 && m[0].b == 1) || (m[0].a == 1 && m[0].b == 0)));
    CHECK(m[0].height <= m[1].height);
    const auto lab = ward_cluster(p, 2);
    CHECK(lab == std::vector<int>{0, 0, 1});

    Matrix q(4, 2);
    q << 0, 0, 0, 0.001, 1000, 0, 1000, 0.001;
    CHECK(silhouette(q, {0, 0, 1, 1}) > 0.999);
    CHECK_THROWS_AS(silhouette(q, {0, 0, 0, 0}), Error);

    // brute-force silhouette oracle
    Rng rng(9);
    const Matrix r = random_matrix(rng, 12, 2);
    std::vector<int> l(12);
    for (int i = 0; i < 12; ++i) l[i] = i % 3;
    double total = 0;
    for (int i = 0; i < 12; ++i) {
        double in = 0, out[3] = {0, 0, 0};
        for (int j = 0; j < 12; ++j) {
            if (j == i) continue;
            const double d = (r.row(i) - r.row(j)).norm();
            if (l[j] == l[i]) in += d; else out[l[j]] += d;
        }
        const double a = in / 3.0;
        double b = 1e300;
        for (int k = 0; k < 3; ++k)
            if (k != l[i]) b = std::min(b, out[k] / 4.0);
        total += (b - a) / std::max(a, b);
    }
    CHECK(silhouette(r, l) == doctest::Approx(total / 12).epsilon(1e-12));
}

TEST_CASE("ward recovers separated groups") {
    Rng rng(10);
    Matrix x(60, 3);
    std::vector<int> truth(60);
    for (int i = 0; i < 60; ++i) {
        truth[i] = i / 20;
        for (int j = 0; j < 3; ++j) x(i, j) = (j == truth[i] ? 20.0 : 0.0) + rng.normal();
    }
    CHECK(matched_agreement(truth, ward_cluster(x, 3)) == 1.0);
}

TEST_CASE("mlp gradient agrees with finite differences") {
    Mlp net({3, 5, 4, 2}, 12);
    Rng rng(13);
    // nonzero biases keep pre-activations away from the ReLU kink
    for (auto& l : net.layers)
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = 0.5 + 0.1 * rng.normal();
    const Matrix x = random_matrix(rng, 7, 3);
    const Matrix y = random_matrix(rng, 7, 3);
    LossSpec spec;
    spec.map = random_matrix(rng, 3, 2);
    spec.cell_weights = Vector::Constant(3, 0.5);
    spec.cell_weights[0] = 2.0;
    spec.weight_decay = 1e-3;
    const LossGrad lg = mlp_loss_grad(net, x, y, spec);
    CHECK(lg.loss == doctest::Approx(mlp_loss(net, x, y, spec)).epsilon(1e-12));
    Mlp g = net;
    g.layers = lg.grad;
    const Vector analytic = g.flatten();
    Vector theta = net.flatten();
    double worst = 0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double h = 1e-6;
        Mlp a = net, b = net;
        Vector tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        a.unflatten(tp);
        b.unflatten(tm);
        const double fd = (mlp_loss(a, x, y, spec) - mlp_loss(b, x, y, spec)) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(fd)));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("mlp training") {
    Rng rng(14);
    Matrix x(256, 1), y(256, 1);
    for (int i = 0; i < 256; ++i) {
        x(i, 0) = rng.uniform(-1, 1);
        y(i, 0) = std::sin(3 * x(i, 0));
    }
    Mlp net({1, 32, 32, 1}, 15);
    const Mlp before = net;
    TrainOptions frozen;
    frozen.lr = 0.0;
    frozen.epochs = 3;
    mlp_train(net, x, y, {}, frozen);
    CHECK((net.flatten().array() == before.flatten().array()).all());

    TrainOptions opts;
    opts.epochs = 400;
    opts.batch_size = 32;
    opts.lr = 3e-3;
    opts.seed = 16;
    const auto rep = mlp_train(net, x, y, {}, opts);
    CHECK(rep.train_loss.back() < 0.01 * rep.train_loss.front());
    CHECK(mlp_loss(net, x, y, {}) < 0.01);

    Matrix ybad = y;
    ybad(0, 0) = std::nan("");
    CHECK_THROWS_AS(mlp_train(net, x, ybad, {}, opts), Error);

    TrainOptions es = opts;
    es.validation_fraction = 0.1;
    es.patience = 5;
    es.epochs = 2000;
    Mlp other({1, 8, 1}, 17);
    const auto r2 = mlp_train(other, x, y, {}, es);
    CHECK(r2.val_loss.size() == static_cast<std::size_t>(r2.epochs_run));
}

TEST_CASE("mlp with huge learning rate diverges loudly") {
    Matrix x = Matrix::Constant(4, 1, 1e150), y = Matrix::Constant(4, 1, 1e150);
    Mlp net({1, 4, 1}, 1);
    TrainOptions o;
    o.lr = 1e300;
    o.epochs = 5;
    CHECK_THROWS_AS(mlp_train(net, x, y, {}, o), Error);
}
