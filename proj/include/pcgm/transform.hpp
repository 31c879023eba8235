#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "pcgm/graph.hpp"
#include "pcgm/hungarian.hpp"

namespace pcgm {

struct DegenerateConfiguration : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientMatches : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 7DOF similarity transform p -> s R p + t (column-vector convention).
struct SimilarityTransform {
    double s = 1.0;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return s * (R * p) + t; }

    std::vector<Eigen::Vector3d> apply(const std::vector<Eigen::Vector3d>& pts) const {
        std::vector<Eigen::Vector3d> out;
        out.reserve(pts.size());
        for (const auto& p : pts) out.push_back(apply(p));
        return out;
    }

    SimilarityTransform inverse() const {
        SimilarityTransform inv;
        inv.s = 1.0 / s;
        inv.R = R.transpose();
        inv.t = -(inv.s) * (inv.R * t);
        return inv;
    }

    /// this after other: (this * other)(p) = this(other(p)).
    SimilarityTransform compose(const SimilarityTransform& other) const {
        SimilarityTransform out;
        out.s = s * other.s;
        out.R = R * other.R;
        out.t = s * (R * other.t) + t;
        return out;
    }

    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = s * R;
        m.topRightCorner<3, 1>() = t;
        return m;
    }

    static SimilarityTransform from_matrix(const Eigen::Matrix4d& m) {
        SimilarityTransform out;
        const Eigen::Matrix3d sr = m.topLeftCorner<3, 3>();
        out.s = std::cbrt(sr.determinant());
        if (!(out.s > 0)) throw std::invalid_argument("matrix has non-positive scale");
        out.R = sr / out.s;
        out.t = m.topRightCorner<3, 1>();
        return out;
    }
};

struct RegistrationErrors {
    double rotation_error_deg = 0.0;
    double translation_error = 0.0;
    double scale_error = 0.0;
};

inline RegistrationErrors registration_errors(const SimilarityTransform& est,
                                              const SimilarityTransform& gt) {
    RegistrationErrors e;
    // atan2 of (sin, cos) of the residual rotation angle; acos of the trace
    // alone loses half the significant digits near zero
    const Eigen::Matrix3d r = gt.R.transpose() * est.R;
    const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    e.rotation_error_deg = std::atan2(0.5 * axis.norm(), (r.trace() - 1.0) / 2.0) * 180.0 / M_PI;
    e.translation_error = (est.t - gt.t).norm();
    e.scale_error = std::abs(est.s / gt.s - 1.0);
    return e;
}

/// Closed-form weighted Procrustes/Umeyama fit of q ~ s R p + t over
/// (a) matched node pairs weighted by the correspondence entries and
/// (b) graph-1 edge difference pairs weighted by alpha3 * A1 (translation
/// cancels on differences, so they only shape rotation and scale).
inline SimilarityTransform estimate_transform(const CorrespondenceMatrix& correspondence,
                                              const KeypointGraph& g1, const KeypointGraph& g2,
                                              double alpha3, bool rigid = true) {
    if (correspondence.rows() != g1.size() || correspondence.cols() != g2.size())
        throw ShapeMismatch("correspondence does not match graph sizes");

    const Eigen::MatrixXd pos2 = g2.position_matrix();
    const Eigen::MatrixXd mapped = correspondence.values * pos2;
    const Eigen::VectorXd row_sum = correspondence.values.rowwise().sum();
    constexpr double kWeightFloor = 1e-6;

    // matched node pairs; mapped coordinates are renormalized barycenters
    std::vector<Eigen::Vector3d> src, dst;
    std::vector<double> w;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        if (row_sum(i) < kWeightFloor) continue;
        src.push_back(g1.positions[i]);
        dst.push_back(mapped.row(i).transpose() / row_sum(i));
        w.push_back(row_sum(i));
    }
    if (src.size() < 3) throw InsufficientMatches("fewer than 3 matched pairs");

    double wsum = 0.0;
    Eigen::Vector3d src_mean = Eigen::Vector3d::Zero(), dst_mean = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        wsum += w[i];
        src_mean += w[i] * src[i];
        dst_mean += w[i] * dst[i];
    }
    src_mean /= wsum;
    dst_mean /= wsum;

    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    double src_var = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Eigen::Vector3d x = src[i] - src_mean;
        const Eigen::Vector3d y = dst[i] - dst_mean;
        cross += w[i] * y * x.transpose();
        src_var += w[i] * x.squaredNorm();
    }

    // edge-difference pairs, both endpoints matched
    if (alpha3 > 0) {
        for (std::size_t e = 0; e < g1.edges.size(); ++e) {
            const auto& [a, b] = g1.edges[e];
            if (row_sum(a) < kWeightFloor || row_sum(b) < kWeightFloor) continue;
            const double we = alpha3 * g1.adjacency_euclid(a, b);
            if (we <= 0) continue;
            const Eigen::Vector3d dp = g1.positions[a] - g1.positions[b];
            const Eigen::Vector3d dq = (mapped.row(a) / row_sum(a) - mapped.row(b) / row_sum(b))
                                           .transpose();
            cross += we * dq * dp.transpose();
            src_var += we * dp.squaredNorm();
        }
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (sv(0) <= 0 || sv(1) <= 1e-9 * sv(0))
        throw DegenerateConfiguration("matched configuration has rank < 2");

    Eigen::Vector3d sign_fix = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) sign_fix(2) = -1.0;

    SimilarityTransform out;
    out.R = svd.matrixU() * sign_fix.asDiagonal() * svd.matrixV().transpose();
    out.s = rigid ? 1.0 : sv.dot(sign_fix) / src_var;
    if (!(out.s > 0)) throw DegenerateConfiguration("non-positive estimated scale");
    out.t = dst_mean - out.s * (out.R * src_mean);
    return out;
}

/// The transform-fit objective the closed form minimizes: weighted squared
/// residuals over node pairs plus alpha3-weighted edge-difference residuals.
inline double transform_objective(const SimilarityTransform& T,
                                  const CorrespondenceMatrix& correspondence,
                                  const KeypointGraph& g1, const KeypointGraph& g2,
                                  double alpha3) {
    const Eigen::MatrixXd pos2 = g2.position_matrix();
    const Eigen::MatrixXd mapped = correspondence.values * pos2;
    const Eigen::VectorXd row_sum = correspondence.values.rowwise().sum();
    constexpr double kWeightFloor = 1e-6;

    double obj = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        if (row_sum(i) < kWeightFloor) continue;
        const Eigen::Vector3d q = mapped.row(i).transpose() / row_sum(i);
        obj += row_sum(i) * (q - T.apply(g1.positions[i])).squaredNorm();
    }
    if (alpha3 > 0) {
        for (std::size_t e = 0; e < g1.edges.size(); ++e) {
            const auto& [a, b] = g1.edges[e];
            if (row_sum(a) < kWeightFloor || row_sum(b) < kWeightFloor) continue;
            const double we = alpha3 * g1.adjacency_euclid(a, b);
            const Eigen::Vector3d dq = (mapped.row(a) / row_sum(a) - mapped.row(b) / row_sum(b))
                                           .transpose();
            const Eigen::Vector3d dp = g1.positions[a] - g1.positions[b];
            obj += we * (dq - T.s * (T.R * dp)).squaredNorm();
        }
    }
    return obj;
}

inline void save_transform(const SimilarityTransform& T, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(16);
    const Eigen::Matrix4d m = T.matrix();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) out << m(r, c) << (c == 3 ? "" : " ");
        out << "\n";
    }
}

inline SimilarityTransform load_transform(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(in >> m(r, c))) throw std::runtime_error("malformed transform file " + path);
    return SimilarityTransform::from_matrix(m);
}

}  // namespace pcgm
