#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pcgm/graph.hpp"
#include "pcgm/hungarian.hpp"
#include "pcgm/transform.hpp"

namespace pcgm {

struct GmConfig {
    double alpha1 = 1.0;  // feature-space pairwise weight
    double alpha2 = 1.0;  // Euclidean pairwise weight
    double alpha3 = 0.5;  // refinement / transform pairwise weight
    std::size_t max_fw_iters = 100;
    double fw_tol = 1e-8;          // relative objective change
    double unmatched_cost = -1.0;  // < 0: 75th percentile of D at the call site
};

struct FwIteration {
    std::size_t iter;
    double objective;
    double step;
};

namespace detail {

inline void check_shapes(const CorrespondenceMatrix& c, const KeypointGraph& g1,
                         const KeypointGraph& g2, const DissimilarityMatrix& d) {
    if (c.rows() != g1.size() || c.cols() != g2.size() ||
        d.values.rows() != Eigen::Index(g1.size()) || d.values.cols() != Eigen::Index(g2.size()))
        throw ShapeMismatch("correspondence/graph/dissimilarity shapes disagree");
}

/// One pairwise term of J1: sum over graph-1 edges of
/// w_e (len_e - ||(C V2)_a - (C V2)_b||)^2, with Y = C V2 precomputed.
inline double edge_length_penalty(const KeypointGraph& g1, const std::vector<double>& lengths,
                                  const Eigen::MatrixXd& weights, const Eigen::MatrixXd& mapped) {
    double total = 0.0;
    for (std::size_t e = 0; e < g1.edges.size(); ++e) {
        const auto& [a, b] = g1.edges[e];
        const double mapped_len = (mapped.row(a) - mapped.row(b)).norm();
        const double gap = lengths[e] - mapped_len;
        total += weights(a, b) * gap * gap;
    }
    return total;
}

inline void edge_length_penalty_grad(const KeypointGraph& g1, const std::vector<double>& lengths,
                                     const Eigen::MatrixXd& weights, const Eigen::MatrixXd& mapped,
                                     Eigen::MatrixXd& grad_mapped) {
    for (std::size_t e = 0; e < g1.edges.size(); ++e) {
        const auto& [a, b] = g1.edges[e];
        const Eigen::RowVectorXd diff = mapped.row(a) - mapped.row(b);
        const double nrm = diff.norm();
        if (nrm == 0.0) continue;
        const double coeff = 2.0 * weights(a, b) * (nrm - lengths[e]) / nrm;
        grad_mapped.row(a) += coeff * diff;
        grad_mapped.row(b) -= coeff * diff;
    }
}

/// Frank-Wolfe over the partial-permutation polytope. The minimized
/// objective is the caller's plus unmatched_cost per unmatched node,
/// u*(m + n - 2*sum(C)); without that term C = 0 is a fixed point whenever
/// the dissimilarities are nonnegative, since nothing rewards matching.
/// The linear subproblem is then a partial assignment on the gradient with
/// the same unmatched cost; the step is chosen by golden-section search
/// guarded to never increase the objective.
inline CorrespondenceMatrix frank_wolfe_minimize(
    const std::function<double(const Eigen::MatrixXd&)>& objective,
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& gradient,
    CorrespondenceMatrix c, std::size_t max_iters, double tol, double unmatched_cost,
    std::vector<FwIteration>* trace = nullptr) {
    const double total_nodes = double(c.rows() + c.cols());
    auto augmented = [&](const Eigen::MatrixXd& values) {
        return objective(values) + unmatched_cost * (total_nodes - 2.0 * values.sum());
    };
    double obj = augmented(c.values);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        const Eigen::MatrixXd grad = gradient(c.values);
        const CorrespondenceMatrix vertex = hungarian(grad, unmatched_cost);
        const Eigen::MatrixXd dir = vertex.values - c.values;

        auto along = [&](double t) { return augmented(c.values + t * dir); };
        double lo = 0.0, hi = 1.0;
        const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
        double f1 = along(x1), f2 = along(x2);
        for (int k = 0; k < 40; ++k) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = along(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = along(x2);
            }
        }
        // the quartic restriction need not be unimodal; keep the best of the
        // bracket result and the endpoints, which also guarantees descent
        double step = 0.5 * (lo + hi);
        double best = along(step);
        for (double cand : {0.0, 1.0}) {
            const double f = along(cand);
            if (f < best) {
                best = f;
                step = cand;
            }
        }

        c.values += step * dir;
        const double new_obj = best;
        if (trace) trace->push_back({iter, new_obj, step});
        const double rel_change = std::abs(obj - new_obj) / std::max(1.0, std::abs(obj));
        obj = new_obj;
        if (rel_change < tol) break;
    }
    return c;
}

}  // namespace detail

/// J1: Frobenius inner product with D plus edge-length agreement in feature
/// and Euclidean space, with graph-2 nodes mapped through C.
inline double objective_j1(const CorrespondenceMatrix& c, const KeypointGraph& g1,
                           const KeypointGraph& g2, const DissimilarityMatrix& d,
                           const GmConfig& cfg) {
    detail::check_shapes(c, g1, g2, d);
    double obj = (c.values.array() * d.values.array()).sum();
    if (cfg.alpha1 > 0) {
        const Eigen::MatrixXd mapped_feat = c.values * g2.feature_matrix();
        obj += cfg.alpha1 *
               detail::edge_length_penalty(g1, g1.edge_len_feat, g1.adjacency_feat, mapped_feat);
    }
    if (cfg.alpha2 > 0) {
        const Eigen::MatrixXd mapped_pos = c.values * g2.position_matrix();
        obj += cfg.alpha2 * detail::edge_length_penalty(g1, g1.edge_len_euclid,
                                                        g1.adjacency_euclid, mapped_pos);
    }
    return obj;
}

inline Eigen::MatrixXd gradient_j1(const CorrespondenceMatrix& c, const KeypointGraph& g1,
                                   const KeypointGraph& g2, const DissimilarityMatrix& d,
                                   const GmConfig& cfg) {
    detail::check_shapes(c, g1, g2, d);
    Eigen::MatrixXd grad = d.values;
    if (cfg.alpha1 > 0) {
        const Eigen::MatrixXd feat2 = g2.feature_matrix();
        const Eigen::MatrixXd mapped = c.values * feat2;
        Eigen::MatrixXd grad_mapped = Eigen::MatrixXd::Zero(mapped.rows(), mapped.cols());
        detail::edge_length_penalty_grad(g1, g1.edge_len_feat, g1.adjacency_feat, mapped,
                                         grad_mapped);
        grad += cfg.alpha1 * grad_mapped * feat2.transpose();
    }
    if (cfg.alpha2 > 0) {
        const Eigen::MatrixXd pos2 = g2.position_matrix();
        const Eigen::MatrixXd mapped = c.values * pos2;
        Eigen::MatrixXd grad_mapped = Eigen::MatrixXd::Zero(mapped.rows(), mapped.cols());
        detail::edge_length_penalty_grad(g1, g1.edge_len_euclid, g1.adjacency_euclid, mapped,
                                         grad_mapped);
        grad += cfg.alpha2 * grad_mapped * pos2.transpose();
    }
    return grad;
}

/// Default unmatched cost: 75th percentile of the dissimilarity entries.
inline double default_unmatched_cost(const DissimilarityMatrix& d) {
    std::vector<double> v(d.values.data(), d.values.data() + d.values.size());
    if (v.empty()) return 0.0;
    const std::size_t k = std::min(v.size() - 1, std::size_t(0.75 * double(v.size())));
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

inline double resolve_unmatched_cost(const GmConfig& cfg, const DissimilarityMatrix& d) {
    return cfg.unmatched_cost < 0 ? default_unmatched_cost(d) : cfg.unmatched_cost;
}

inline CorrespondenceMatrix frank_wolfe(const KeypointGraph& g1, const KeypointGraph& g2,
                                        const DissimilarityMatrix& d, const GmConfig& cfg,
                                        const CorrespondenceMatrix& c0,
                                        std::vector<FwIteration>* trace = nullptr) {
    detail::check_shapes(c0, g1, g2, d);
    auto obj = [&](const Eigen::MatrixXd& values) {
        CorrespondenceMatrix c{values, CorrespondenceMatrix::Mode::Relaxed};
        return objective_j1(c, g1, g2, d, cfg);
    };
    auto grad = [&](const Eigen::MatrixXd& values) {
        CorrespondenceMatrix c{values, CorrespondenceMatrix::Mode::Relaxed};
        return gradient_j1(c, g1, g2, d, cfg);
    };
    return detail::frank_wolfe_minimize(obj, grad, c0, cfg.max_fw_iters, cfg.fw_tol,
                                        resolve_unmatched_cost(cfg, d), trace);
}

/// J2: linear term plus the Laplacian smoothness penalty on the offset of
/// mapped nodes from the incumbent mapping. `anchor` is C*_1 V_2 and
/// `laplacian` is L_{A_t} built from the transformed graph-1 nodes.
inline double objective_j2(const CorrespondenceMatrix& c, const DissimilarityMatrix& d,
                           const Eigen::MatrixXd& pos2, const Eigen::MatrixXd& anchor,
                           const Eigen::MatrixXd& laplacian, double alpha3) {
    const Eigen::MatrixXd offset = c.values * pos2 - anchor;
    return (c.values.array() * d.values.array()).sum() +
           alpha3 * (offset.transpose() * laplacian * offset).trace();
}

/// Refines the incumbent correspondence under the current transform. The
/// incumbent C_init anchors the quadratic term, so its own penalty is zero
/// and the result never scores worse than the incumbent.
inline CorrespondenceMatrix refine_j2(const CorrespondenceMatrix& c_init,
                                      const KeypointGraph& g1, const KeypointGraph& g2,
                                      const DissimilarityMatrix& d,
                                      const SimilarityTransform& transform, const GmConfig& cfg,
                                      std::vector<FwIteration>* trace = nullptr) {
    detail::check_shapes(c_init, g1, g2, d);
    std::vector<Eigen::Vector3d> moved = transform.apply(g1.positions);
    const Eigen::MatrixXd a_t = gaussian_adjacency(moved);
    const Eigen::MatrixXd laplacian = graph_laplacian(a_t);
    const Eigen::MatrixXd pos2 = g2.position_matrix();
    const Eigen::MatrixXd anchor = c_init.values * pos2;

    auto obj = [&](const Eigen::MatrixXd& values) {
        const Eigen::MatrixXd offset = values * pos2 - anchor;
        return (values.array() * d.values.array()).sum() +
               cfg.alpha3 * (offset.transpose() * laplacian * offset).trace();
    };
    auto grad = [&](const Eigen::MatrixXd& values) {
        const Eigen::MatrixXd offset = values * pos2 - anchor;
        return Eigen::MatrixXd(d.values +
                               2.0 * cfg.alpha3 * laplacian * offset * pos2.transpose());
    };
    return detail::frank_wolfe_minimize(obj, grad, c_init, cfg.max_fw_iters, cfg.fw_tol,
                                        resolve_unmatched_cost(cfg, d), trace);
}

/// Rounds a relaxed correspondence to a partial permutation; entries below
/// `min_value` prefer staying unmatched.
inline CorrespondenceMatrix discretize(const CorrespondenceMatrix& c, double min_value = 0.1) {
    return hungarian(-c.values, -0.5 * min_value);
}

}  // namespace pcgm
