#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "pcgm/descriptor.hpp"
#include "pcgm/keypoints.hpp"
#include "pcgm/spatial_grid.hpp"

namespace pcgm {

struct TooFewValidKeypoints : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Keypoint graph with one shared edge set carrying two weightings: Gaussian
/// kernels on Euclidean and on feature edge lengths.
struct KeypointGraph {
    std::vector<Eigen::Vector3d> positions;   // node coordinates (meters)
    std::vector<Eigen::VectorXd> features;    // node descriptors
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // i1 < i2, no self-edges
    std::vector<double> edge_len_euclid;
    std::vector<double> edge_len_feat;
    Eigen::MatrixXd adjacency_euclid;  // symmetric, zero off the edge set
    Eigen::MatrixXd adjacency_feat;

    std::size_t size() const { return positions.size(); }

    Eigen::MatrixXd position_matrix() const {
        Eigen::MatrixXd m(positions.size(), 3);
        for (std::size_t i = 0; i < positions.size(); ++i) m.row(i) = positions[i].transpose();
        return m;
    }
    Eigen::MatrixXd feature_matrix() const {
        if (features.empty()) return {};
        Eigen::MatrixXd m(features.size(), features.front().size());
        for (std::size_t i = 0; i < features.size(); ++i) m.row(i) = features[i].transpose();
        return m;
    }
};

struct DissimilarityMatrix {
    Eigen::MatrixXd values;  // m x n, rescaled to [0, 1]
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

}  // namespace detail

/// Symmetrized k-NN graph over the valid keypoints. Adjacency weights are
/// exp(-len^2 / sigma^2) with sigma the median edge length in each domain.
inline KeypointGraph build_graph(const KeypointSet& keypoints, const DescriptorSet& descriptors,
                                 std::size_t k_nn = 8) {
    if (k_nn < 2) throw std::invalid_argument("k_nn must be >= 2");
    if (keypoints.size() != descriptors.features.size())
        throw ShapeMismatch("keypoint and descriptor counts differ");

    KeypointGraph g;
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        if (!descriptors.valid[i]) continue;
        g.positions.push_back(keypoints.positions[i]);
        g.features.push_back(descriptors.features[i]);
    }
    const std::size_t n = g.size();
    if (n < 4) throw TooFewValidKeypoints("need >= 4 valid keypoints, got " + std::to_string(n));

    double cell = 1.0;
    {
        PointCloud tmp;
        tmp.points = g.positions;
        const double spacing = mean_point_spacing(tmp);
        if (spacing > 0) cell = 2.0 * spacing;
    }
    SpatialGrid grid(g.positions, cell);
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    for (std::size_t i = 0; i < n; ++i)
        for (auto j : grid.knn_of(i, std::min(k_nn, n - 1)))
            edge_set.insert({std::min(i, j), std::max(i, j)});

    g.edges.assign(edge_set.begin(), edge_set.end());
    g.edge_len_euclid.reserve(g.edges.size());
    g.edge_len_feat.reserve(g.edges.size());
    for (const auto& [a, b] : g.edges) {
        g.edge_len_euclid.push_back((g.positions[a] - g.positions[b]).norm());
        g.edge_len_feat.push_back((g.features[a] - g.features[b]).norm());
    }

    const double sigma_e = detail::median(g.edge_len_euclid);
    const double sigma_f = detail::median(g.edge_len_feat);
    g.adjacency_euclid = Eigen::MatrixXd::Zero(n, n);
    g.adjacency_feat = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto& [a, b] = g.edges[e];
        const double we = sigma_e > 0
                              ? std::exp(-g.edge_len_euclid[e] * g.edge_len_euclid[e] /
                                         (sigma_e * sigma_e))
                              : 1.0;
        const double wf =
            sigma_f > 0
                ? std::exp(-g.edge_len_feat[e] * g.edge_len_feat[e] / (sigma_f * sigma_f))
                : 1.0;
        g.adjacency_euclid(a, b) = g.adjacency_euclid(b, a) = we;
        g.adjacency_feat(a, b) = g.adjacency_feat(b, a) = wf;
    }
    return g;
}

/// D[i][j] = ||f_i - f_j||, rescaled to [0, 1] by the matrix maximum.
inline DissimilarityMatrix node_dissimilarity(const KeypointGraph& g1, const KeypointGraph& g2) {
    DissimilarityMatrix d;
    d.values.resize(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i)
        for (std::size_t j = 0; j < g2.size(); ++j)
            d.values(i, j) = (g1.features[i] - g2.features[j]).norm();
    const double max = d.values.maxCoeff();
    if (max > 0) d.values /= max;
    return d;
}

/// Gaussian adjacency over an arbitrary node set with the same k-NN +
/// median-bandwidth rule used by build_graph. Used for the Laplacian of the
/// transformed nodes in the refinement objective.
inline Eigen::MatrixXd gaussian_adjacency(const std::vector<Eigen::Vector3d>& nodes,
                                          std::size_t k_nn = 8) {
    const std::size_t n = nodes.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    if (n < 2) return a;
    PointCloud tmp;
    tmp.points = nodes;
    const double spacing = mean_point_spacing(tmp);
    SpatialGrid grid(nodes, spacing > 0 ? 2.0 * spacing : 1.0);
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    for (std::size_t i = 0; i < n; ++i)
        for (auto j : grid.knn_of(i, std::min(k_nn, n - 1)))
            edge_set.insert({std::min(i, j), std::max(i, j)});
    std::vector<double> lens;
    lens.reserve(edge_set.size());
    for (const auto& [i, j] : edge_set) lens.push_back((nodes[i] - nodes[j]).norm());
    const double sigma = detail::median(lens);
    for (const auto& [i, j] : edge_set) {
        const double len = (nodes[i] - nodes[j]).norm();
        const double w = sigma > 0 ? std::exp(-len * len / (sigma * sigma)) : 1.0;
        a(i, j) = a(j, i) = w;
    }
    return a;
}

inline Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& adjacency) {
    return Eigen::MatrixXd(adjacency.rowwise().sum().asDiagonal()) - adjacency;
}

}  // namespace pcgm
