#pragma once

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

constexpr int kDefaultAges = 110;
constexpr double kQMin = 1e-8;
constexpr double kQMax = 1.0 - 1e-12;

double logit(double p);
double expit(double y);
Vector logit(const Vector& p);
Vector expit(const Vector& y);

// Clamps to [q_min, 1 - q_min] before the logit so zero death rates stay finite.
Vector floor_and_logit(const Vector& qx, double q_min = kQMin);

// Period life expectancy at birth. l0 = 1, L0 = a0*l0 + (1-a0)*l1,
// Lx = (lx + lx+1)/2, and the last age is closed: nobody survives past it.
double e0_from_qx(const Vector& qx, double a0 = 0.3);

enum class E0Summary { Mean, Female, Male };

// z is a stacked logit schedule [female ages; male ages].
double forward_e0(const Vector& z, E0Summary summary = E0Summary::Mean);
void forward_e0_pair(const Vector& z, double& female, double& male);

struct LifeTable {
    Vector mx, qx, ax, lx, dx, Lx, Tx, ex;
    double e0() const { return ex[0]; }
};

// Standard single-year table from central rates and separation factors:
// qx = mx / (1 + (1 - ax) mx) capped below 1, lx recursion, Lx = lx+1 + ax dx.
LifeTable lifetable_from_mx_ax(const Vector& mx, const Vector& ax);

// Inverse of the qx conversion under the same ax.
Vector mx_from_qx(const Vector& qx, const Vector& ax);

// Default separation factors: 0.3 at age 0, 0.5 elsewhere.
Vector default_ax(int ages);

}  // namespace mdmx
