#pragma once

#include <vector>

#include "mdmx/numerics/linalg.hpp"

namespace mdmx {

struct Merge {
    int a = 0, b = 0;     // one member point of each merged cluster
    double height = 0.0;  // Lance-Williams Ward distance
    int size = 0;
};

// Full Ward dendrogram (nearest-neighbour chain), merges sorted by height.
std::vector<Merge> ward_linkage(const Matrix& points);

// Cuts the dendrogram into k clusters. Labels are 0..k-1 in order of first
// appearance by point index.
std::vector<int> ward_cut(const std::vector<Merge>& merges, int n, int k);

std::vector<int> ward_cluster(const Matrix& points, int k);

// Mean silhouette; members of singleton clusters score 0.
double silhouette(const Matrix& points, const std::vector<int>& labels);

}  // namespace mdmx
