#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace pcgm {

/// Uniform hash grid over a fixed point set for radius and k-NN queries.
/// Cell size should be on the order of the typical query radius.
class SpatialGrid {
public:
    SpatialGrid(const std::vector<Eigen::Vector3d>& points, double cell_size)
        : points_(points), cell_(cell_size > 0 ? cell_size : 1.0) {
        for (std::size_t i = 0; i < points_.size(); ++i)
            cells_[key_of(points_[i])].push_back(i);
    }

    /// Indices of points within `radius` of `q`, ascending index order.
    std::vector<std::size_t> radius_search(const Eigen::Vector3d& q, double radius) const {
        std::vector<std::size_t> out;
        const double r2 = radius * radius;
        const int span = int(std::ceil(radius / cell_));
        const auto center = key_of(q);
        for (int dx = -span; dx <= span; ++dx)
            for (int dy = -span; dy <= span; ++dy)
                for (int dz = -span; dz <= span; ++dz) {
                    auto it = cells_.find({center[0] + dx, center[1] + dy, center[2] + dz});
                    if (it == cells_.end()) continue;
                    for (std::size_t i : it->second)
                        if ((points_[i] - q).squaredNorm() <= r2) out.push_back(i);
                }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// k nearest neighbors of point index `self` (excluded), by distance then index.
    std::vector<std::size_t> knn_of(std::size_t self, std::size_t k) const {
        const Eigen::Vector3d& q = points_[self];
        // grow the search radius until enough candidates are inside the
        // guaranteed-complete ball
        double radius = cell_;
        for (;;) {
            auto cand = radius_search(q, radius);
            std::erase(cand, self);
            if (cand.size() >= k || radius > 1e12) {
                std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
                    double da = (points_[a] - q).squaredNorm();
                    double db = (points_[b] - q).squaredNorm();
                    return da != db ? da < db : a < b;
                });
                if (cand.size() > k) cand.resize(k);
                return cand;
            }
            radius *= 2.0;
        }
    }

private:
    struct KeyHash {
        std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
            std::size_t h = 1469598103934665603ull;
            for (auto v : k) {
                h ^= std::size_t(v);
                h *= 1099511628211ull;
            }
            return h;
        }
    };

    std::array<std::int64_t, 3> key_of(const Eigen::Vector3d& p) const {
        return {std::int64_t(std::floor(p.x() / cell_)), std::int64_t(std::floor(p.y() / cell_)),
                std::int64_t(std::floor(p.z() / cell_))};
    }

    const std::vector<Eigen::Vector3d>& points_;
    double cell_;
    std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::size_t>, KeyHash> cells_;
};

}  // namespace pcgm
