#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <stdexcept>
#include <vector>

#include "pcgm/cloud.hpp"
#include "pcgm/spatial_grid.hpp"

namespace pcgm {

struct TooFewPoints : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KeypointSet {
    std::vector<std::size_t> indices;        // into the source cloud, ascending
    std::vector<Eigen::Vector3d> positions;  // cloud.points[indices[i]]
    std::vector<double> saliency;            // smallest covariance eigenvalue

    std::size_t size() const { return indices.size(); }
};

struct IssParams {
    double salient_radius = 0.0;  // 0 -> 6 * mean point spacing
    double nms_radius = 0.0;      // 0 -> 4 * mean point spacing
    double gamma21 = 0.975;
    double gamma32 = 0.975;
    std::size_t min_neighbors = 5;
    // lambda3/lambda1 floor rejecting (numerically) planar neighborhoods,
    // whose smallest eigenvalue is sampling or sensor noise rather than
    // structure; such candidates are unrepeatable between scans
    double min_planarity_ratio = 1e-9;
};

/// Intrinsic Shape Signatures keypoints. Neighborhood covariance is weighted
/// by 1/|N(p_j)| for density robustness; a point is salient when
/// lambda2/lambda1 < gamma21 and lambda3/lambda2 < gamma32, and survives
/// non-maximum suppression on lambda3 within nms_radius (ties to lower index).
inline KeypointSet detect_iss(const PointCloud& cloud, IssParams params = {}) {
    if (params.gamma21 <= 0 || params.gamma21 >= 1 || params.gamma32 <= 0 || params.gamma32 >= 1)
        throw std::invalid_argument("gamma ratios must lie in (0, 1)");
    if (params.min_neighbors < 5) throw std::invalid_argument("min_neighbors must be >= 5");
    if (cloud.size() < params.min_neighbors + 1)
        throw TooFewPoints("cloud smaller than min_neighbors+1");

    double salient_radius = params.salient_radius;
    double nms_radius = params.nms_radius;
    if (salient_radius <= 0 || nms_radius <= 0) {
        const double spacing = mean_point_spacing(cloud);
        if (salient_radius <= 0) salient_radius = 6.0 * spacing;
        if (nms_radius <= 0) nms_radius = 4.0 * spacing;
    }

    const std::size_t n = cloud.size();
    SpatialGrid grid(cloud.points, salient_radius);

    // neighbor counts define the density weights
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = grid.radius_search(cloud.points[i], salient_radius);
        std::erase(nbrs[i], i);
        weight[i] = 1.0 / double(nbrs[i].size() + 1);
    }

    std::vector<double> lambda3(n, -1.0);  // -1 marks non-candidates
    for (std::size_t i = 0; i < n; ++i) {
        if (nbrs[i].size() < params.min_neighbors) continue;
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        double wsum = 0.0;
        for (auto j : nbrs[i]) {
            Eigen::Vector3d d = cloud.points[j] - cloud.points[i];
            cov += weight[j] * d * d.transpose();
            wsum += weight[j];
        }
        if (wsum <= 0) continue;
        cov /= wsum;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        const double l1 = eig.eigenvalues()(2);
        const double l2 = eig.eigenvalues()(1);
        const double l3 = eig.eigenvalues()(0);
        if (l1 <= 0 || l2 <= 0 || l3 <= params.min_planarity_ratio * l1) continue;
        if (l2 / l1 < params.gamma21 && l3 / l2 < params.gamma32) lambda3[i] = l3;
    }

    // NMS on lambda3 within nms_radius
    SpatialGrid nms_grid(cloud.points, nms_radius);
    KeypointSet out;
    for (std::size_t i = 0; i < n; ++i) {
        if (lambda3[i] <= 0) continue;
        bool is_max = true;
        for (auto j : nms_grid.radius_search(cloud.points[i], nms_radius)) {
            if (j == i || lambda3[j] <= 0) continue;
            if (lambda3[j] > lambda3[i] || (lambda3[j] == lambda3[i] && j < i)) {
                is_max = false;
                break;
            }
        }
        if (!is_max) continue;
        out.indices.push_back(i);
        out.positions.push_back(cloud.points[i]);
        out.saliency.push_back(lambda3[i]);
    }
    return out;
}

}  // namespace pcgm
