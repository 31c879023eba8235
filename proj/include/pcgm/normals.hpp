#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <stdexcept>
#include <vector>

#include "pcgm/cloud.hpp"
#include "pcgm/spatial_grid.hpp"

namespace pcgm {

struct DegenerateNeighborhood : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalEstimate {
    PointCloud cloud;
    std::vector<bool> valid;  // false where the k-NN covariance had rank < 2
};

/// Per-point normal from the k-NN covariance: unit eigenvector of the
/// smallest eigenvalue, sign flipped away from the cloud centroid. Points
/// with a rank-deficient neighborhood keep a zero normal and are flagged.
inline NormalEstimate estimate_normals_flagged(const PointCloud& cloud, std::size_t k) {
    if (k < 3) throw std::invalid_argument("k must be >= 3");
    if (cloud.size() < k + 1) throw std::invalid_argument("cloud smaller than k+1 points");

    const double spacing = mean_point_spacing(cloud);
    SpatialGrid grid(cloud.points, spacing > 0 ? 2.0 * spacing : 1.0);
    const Eigen::Vector3d centroid = cloud.centroid();

    NormalEstimate result;
    result.cloud = cloud;
    result.cloud.normals.assign(cloud.size(), Eigen::Vector3d::Zero());
    result.valid.assign(cloud.size(), false);

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto nbrs = grid.knn_of(i, k);
        Eigen::Vector3d mean = cloud.points[i];
        for (auto j : nbrs) mean += cloud.points[j];
        mean /= double(nbrs.size() + 1);

        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        auto accumulate = [&](const Eigen::Vector3d& p) {
            Eigen::Vector3d d = p - mean;
            cov += d * d.transpose();
        };
        accumulate(cloud.points[i]);
        for (auto j : nbrs) accumulate(cloud.points[j]);

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        const Eigen::Vector3d evals = eig.eigenvalues();  // ascending
        // rank < 2: the two largest eigenvalues do not dominate; the normal
        // direction is not defined by a surface patch
        if (evals(1) <= 1e-12 * std::max(evals(2), 1e-300)) continue;

        Eigen::Vector3d n = eig.eigenvectors().col(0);
        if (n.dot(cloud.points[i] - centroid) < 0) n = -n;
        result.cloud.normals[i] = n.normalized();
        result.valid[i] = true;
    }
    return result;
}

inline PointCloud estimate_normals(const PointCloud& cloud, std::size_t k) {
    return estimate_normals_flagged(cloud, k).cloud;
}

}  // namespace pcgm
