#include "mdmx/numerics/ward.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "mdmx/error.hpp"

namespace mdmx {

std::vector<Merge> ward_linkage(const Matrix& points) {
    const int n = static_cast<int>(points.rows());
    require(n >= 1, ErrorCode::InvalidInput, "ward_linkage: no points");
    require(points.allFinite(), ErrorCode::DomainError, "ward_linkage: non-finite input");
    // dist holds Lance-Williams Ward distances between active clusters
    Matrix dist(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) dist(i, j) = dist(j, i) = (points.row(i) - points.row(j)).squaredNorm();
    std::vector<int> size(n, 1);
    std::vector<char> active(n, 1);
    std::vector<Merge> merges;
    std::vector<int> chain;
    const double inf = std::numeric_limits<double>::infinity();
    while (static_cast<int>(merges.size()) < n - 1) {
        if (chain.empty()) {
            for (int i = 0; i < n; ++i)
                if (active[i]) {
                    chain.push_back(i);
                    break;
                }
        }
        while (true) {
            const int a = chain.back();
            const int prev = chain.size() > 1 ? chain[chain.size() - 2] : -1;
            int best = -1;
            double bd = inf;
            for (int j = 0; j < n; ++j) {
                if (!active[j] || j == a) continue;
                // prefer the predecessor on ties so the chain terminates
                if (dist(a, j) < bd || (dist(a, j) == bd && j == prev)) {
                    bd = dist(a, j);
                    best = j;
                }
            }
            if (best == prev) {
                chain.pop_back();
                chain.pop_back();
                const int i = std::min(a, best), j = std::max(a, best);
                merges.push_back({i, j, bd, size[i] + size[j]});
                for (int m = 0; m < n; ++m) {
                    if (!active[m] || m == i || m == j) continue;
                    const double ni = size[i], nj = size[j], nm = size[m];
                    const double d = ((ni + nm) * dist(m, i) + (nj + nm) * dist(m, j) - nm * dist(i, j)) / (ni + nj + nm);
                    dist(m, i) = dist(i, m) = d;
                }
                size[i] += size[j];
                active[j] = 0;
                break;
            }
            chain.push_back(best);
        }
    }
    std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });
    return merges;
}

std::vector<int> ward_cut(const std::vector<Merge>& merges, int n, int k) {
    require(k >= 1 && k <= n, ErrorCode::InvalidInput, "ward_cut: k out of range");
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int v) { return parent[v] == v ? v : parent[v] = find(parent[v]); };
    int done = 0;
    for (const Merge& m : merges) {
        if (done == n - k) break;
        parent[find(m.b)] = find(m.a);
        ++done;
    }
    std::vector<int> labels(n, -1);
    std::map<int, int> root_label;
    for (int i = 0; i < n; ++i) {
        const int r = find(i);
        auto it = root_label.find(r);
        if (it == root_label.end()) it = root_label.emplace(r, static_cast<int>(root_label.size())).first;
        labels[i] = it->second;
    }
    return labels;
}

std::vector<int> ward_cluster(const Matrix& points, int k) {
    return ward_cut(ward_linkage(points), static_cast<int>(points.rows()), k);
}

double silhouette(const Matrix& points, const std::vector<int>& labels) {
    const Eigen::Index n = points.rows();
    require(static_cast<Eigen::Index>(labels.size()) == n, ErrorCode::InvalidInput, "silhouette: label size mismatch");
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    require(sizes.size() >= 2, ErrorCode::InvalidInput, "silhouette: need at least two clusters");
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sizes[labels[i]] == 1) continue;
        std::map<int, double> sum;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[labels[j]] += (points.row(i) - points.row(j)).norm();
        }
        const double a = sum[labels[i]] / (sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [lab, s] : sum)
            if (lab != labels[i]) b = std::min(b, s / sizes[lab]);
        const double m = std::max(a, b);
        total += m > 0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

}  // namespace mdmx
