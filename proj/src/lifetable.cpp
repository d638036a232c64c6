#include "mdmx/lifetable.hpp"

#include <algorithm>
#include <cmath>

#include "mdmx/error.hpp"

namespace mdmx {

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::DomainError, "logit: argument outside (0,1)");
    return std::log(p / (1.0 - p));
}

double expit(double y) {
    if (y >= 0) return 1.0 / (1.0 + std::exp(-y));
    const double e = std::exp(y);
    return e / (1.0 + e);
}

Vector logit(const Vector& p) {
    Vector out(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = logit(p[i]);
    return out;
}

Vector expit(const Vector& y) {
    Vector out(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = expit(y[i]);
    return out;
}

Vector floor_and_logit(const Vector& qx, double q_min) {
    Vector out(qx.size());
    for (Eigen::Index i = 0; i < qx.size(); ++i) {
        require(std::isfinite(qx[i]), ErrorCode::DomainError, "floor_and_logit: non-finite qx");
        out[i] = logit(std::clamp(qx[i], q_min, 1.0 - q_min));
    }
    return out;
}

double e0_from_qx(const Vector& qx, double a0) {
    const Eigen::Index n = qx.size();
    require(n >= 2, ErrorCode::InvalidInput, "e0_from_qx: need at least two ages");
    for (Eigen::Index i = 0; i < n; ++i)
        require(qx[i] >= 0.0 && qx[i] <= 1.0, ErrorCode::DomainError, "e0_from_qx: qx outside [0,1]");
    double l = 1.0;
    double l1 = 1.0 - qx[0];
    double e0 = a0 * l + (1.0 - a0) * l1;
    l = l1;
    for (Eigen::Index x = 1; x < n - 1; ++x) {
        const double next = l * (1.0 - qx[x]);
        e0 += 0.5 * (l + next);
        l = next;
    }
    e0 += 0.5 * l;  // closed final interval
    return e0;
}

void forward_e0_pair(const Vector& z, double& female, double& male) {
    require(z.size() % 2 == 0 && z.size() >= 4, ErrorCode::InvalidInput, "forward_e0: schedule length must be 2A");
    const Eigen::Index a = z.size() / 2;
    female = e0_from_qx(expit(Vector(z.head(a))));
    male = e0_from_qx(expit(Vector(z.tail(a))));
}

double forward_e0(const Vector& z, E0Summary summary) {
    double f, m;
    forward_e0_pair(z, f, m);
    switch (summary) {
        case E0Summary::Female: return f;
        case E0Summary::Male: return m;
        case E0Summary::Mean: break;
    }
    return 0.5 * (f + m);
}

Vector default_ax(int ages) {
    Vector ax = Vector::Constant(ages, 0.5);
    if (ages > 0) ax[0] = 0.3;
    return ax;
}

LifeTable lifetable_from_mx_ax(const Vector& mx, const Vector& ax) {
    const Eigen::Index n = mx.size();
    require(n >= 1 && ax.size() == n, ErrorCode::InvalidInput, "lifetable_from_mx_ax: length mismatch");
    LifeTable t;
    t.mx = mx;
    t.ax = ax;
    t.qx.resize(n);
    for (Eigen::Index x = 0; x < n; ++x) {
        require(mx[x] >= 0.0 && std::isfinite(mx[x]), ErrorCode::DomainError, "lifetable_from_mx_ax: invalid mx");
        require(ax[x] >= 0.0 && ax[x] <= 1.0, ErrorCode::DomainError, "lifetable_from_mx_ax: ax outside [0,1]");
        t.qx[x] = std::min(mx[x] / (1.0 + (1.0 - ax[x]) * mx[x]), kQMax);
    }
    t.lx.resize(n);
    t.dx.resize(n);
    t.Lx.resize(n);
    double l = 1.0;
    for (Eigen::Index x = 0; x < n; ++x) {
        t.lx[x] = l;
        t.dx[x] = l * t.qx[x];
        const double next = l - t.dx[x];
        t.Lx[x] = next + ax[x] * t.dx[x];
        l = next;
    }
    t.Tx.resize(n);
    double acc = 0.0;
    for (Eigen::Index x = n; x-- > 0;) {
        acc += t.Lx[x];
        t.Tx[x] = acc;
    }
    t.ex = t.Tx.cwiseQuotient(t.lx);
    return t;
}

Vector mx_from_qx(const Vector& qx, const Vector& ax) {
    require(qx.size() == ax.size(), ErrorCode::InvalidInput, "mx_from_qx: length mismatch");
    Vector mx(qx.size());
    for (Eigen::Index x = 0; x < qx.size(); ++x) {
        require(qx[x] >= 0.0 && qx[x] < 1.0, ErrorCode::DomainError, "mx_from_qx: qx outside [0,1)");
        mx[x] = qx[x] / (1.0 - (1.0 - ax[x]) * qx[x]);
    }
    return mx;
}

}  // namespace mdmx
