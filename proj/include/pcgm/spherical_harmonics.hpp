#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace pcgm {

struct UnsupportedDegree : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace sh {

constexpr int kMaxRotationDegree = 4;

/// Associated Legendre P_l^m(x) without the Condon-Shortley phase.
inline double legendre_plm(int l, int m, double x) {
    double pmm = 1.0;
    if (m > 0) {
        const double somx2 = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
        double fact = 1.0;
        for (int i = 1; i <= m; ++i) {
            pmm *= fact * somx2;
            fact += 2.0;
        }
    }
    if (l == m) return pmm;
    double pmmp1 = x * (2.0 * m + 1.0) * pmm;
    if (l == m + 1) return pmmp1;
    double pll = 0.0;
    for (int ll = m + 2; ll <= l; ++ll) {
        pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / double(ll - m);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    return pll;
}

inline double factorial_ratio(int l, int m) {
    // (l-m)! / (l+m)!
    double r = 1.0;
    for (int i = l - m + 1; i <= l + m; ++i) r /= double(i);
    return r;
}

/// Real Schmidt semi-normalized spherical harmonic of degree l, order m,
/// evaluated at a unit direction. Satisfies the addition theorem
/// sum_m Y_lm(a) Y_lm(b) = P_l(a . b).
inline double real_schmidt(int l, int m, const Eigen::Vector3d& u) {
    const double ct = std::clamp(u.z(), -1.0, 1.0);
    const double phi = std::atan2(u.y(), u.x());
    if (m == 0) return legendre_plm(l, 0, ct);
    const int am = std::abs(m);
    const double norm = std::sqrt(2.0 * factorial_ratio(l, am));
    const double plm = legendre_plm(l, am, ct);
    return m > 0 ? norm * plm * std::cos(am * phi) : norm * plm * std::sin(am * phi);
}

/// All orders of one degree, m = -l..l, as a (2l+1)-vector.
inline Eigen::VectorXd eval_band(int l, const Eigen::Vector3d& u) {
    Eigen::VectorXd out(2 * l + 1);
    for (int m = -l; m <= l; ++m) out(m + l) = real_schmidt(l, m, u);
    return out;
}

inline std::vector<Eigen::Vector3d> fibonacci_sphere(int n) {
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(n);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / double(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * double(i);
        pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return pts;
}

/// Rotation operator on degree-l coefficients in the real Schmidt basis,
/// for the convention (rotated f)(u) = f(R^-1 u). Recovered by least squares
/// over a spherical sample set; exact to solver precision since degree-l
/// harmonics span a rotation-closed space.
inline Eigen::MatrixXd band_rotation(const Eigen::Matrix3d& R, int l) {
    if (l > kMaxRotationDegree) throw UnsupportedDegree("band rotation supports l <= 4");
    if (l == 0) return Eigen::MatrixXd::Identity(1, 1);
    const int dim = 2 * l + 1;
    const auto samples = fibonacci_sphere(std::max(32, 8 * dim));
    Eigen::MatrixXd Y(samples.size(), dim), Yrot(samples.size(), dim);
    const Eigen::Matrix3d Rinv = R.transpose();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Y.row(i) = eval_band(l, samples[i]).transpose();
        Yrot.row(i) = eval_band(l, Rinv * samples[i]).transpose();
    }
    return Y.colPivHouseholderQr().solve(Yrot);
}

}  // namespace sh

/// Applies the degree-l rotation operator to one band of coefficients.
inline Eigen::VectorXd rotate_sh_band(const Eigen::VectorXd& coeffs_l, const Eigen::Matrix3d& R,
                                      int l) {
    if (coeffs_l.size() != 2 * l + 1) throw std::invalid_argument("coefficient count != 2l+1");
    return sh::band_rotation(R, l) * coeffs_l;
}

}  // namespace pcgm
