#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "pcgm/graph.hpp"
#include "pcgm/graph_matching.hpp"
#include "pcgm/hungarian.hpp"

namespace pcgm {

struct TooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Materializes the full mn x mn affinity matrix: node similarities
/// (1 - normalized dissimilarity) on the diagonal, Gaussian edge-length
/// agreement on pair entries, weighted like the reformulated objective.
/// Small instances only; this exists to cross-check the reformulation.
inline Eigen::MatrixXd affinity_matrix(const KeypointGraph& g1, const KeypointGraph& g2,
                                       const DissimilarityMatrix& d, const GmConfig& cfg) {
    const std::size_t m = g1.size(), n = g2.size();
    if (m * n > 400) throw TooLarge("affinity matrix limited to m*n <= 400");

    Eigen::MatrixXd aff = Eigen::MatrixXd::Zero(m * n, m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < n; ++a)
            aff(i * n + a, i * n + a) = 1.0 - d.values(i, a);

    double sigma_f = 0.0, sigma_e = 0.0;
    for (std::size_t e = 0; e < g1.edges.size(); ++e) {
        sigma_f += g1.edge_len_feat[e];
        sigma_e += g1.edge_len_euclid[e];
    }
    if (!g1.edges.empty()) {
        sigma_f /= double(g1.edges.size());
        sigma_e /= double(g1.edges.size());
    }

    auto agreement = [](double l1, double l2, double sigma) {
        if (sigma <= 0) return l1 == l2 ? 1.0 : 0.0;
        const double gap = l1 - l2;
        return std::exp(-gap * gap / (sigma * sigma));
    };

    for (std::size_t e1 = 0; e1 < g1.edges.size(); ++e1) {
        const auto& [i, j] = g1.edges[e1];
        for (std::size_t e2 = 0; e2 < g2.edges.size(); ++e2) {
            const auto& [a, b] = g2.edges[e2];
            const double value =
                cfg.alpha1 * g1.adjacency_feat(i, j) *
                    agreement(g1.edge_len_feat[e1], g2.edge_len_feat[e2], sigma_f) +
                cfg.alpha2 * g1.adjacency_euclid(i, j) *
                    agreement(g1.edge_len_euclid[e1], g2.edge_len_euclid[e2], sigma_e);
            // undirected edges: fill both orientation pairings symmetrically
            for (auto [p, q] : {std::pair{i, j}, std::pair{j, i}}) {
                aff(p * n + a, q * n + b) = value;
                aff(q * n + b, p * n + a) = value;
                aff(p * n + b, q * n + a) = value;
                aff(q * n + a, p * n + b) = value;
            }
        }
    }
    return aff;
}

/// vec(C)^T M vec(C) for a discrete correspondence; higher is better.
inline double affinity_objective_oracle(const CorrespondenceMatrix& c, const KeypointGraph& g1,
                                        const KeypointGraph& g2, const DissimilarityMatrix& d,
                                        const GmConfig& cfg) {
    const Eigen::MatrixXd aff = affinity_matrix(g1, g2, d, cfg);
    Eigen::VectorXd vec(c.values.size());
    const std::size_t n = c.cols();
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t a = 0; a < n; ++a) vec(i * n + a) = c.values(i, a);
    return vec.dot(aff * vec);
}

}  // namespace pcgm
