#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pcgm/cloud.hpp"
#include "pcgm/keypoints.hpp"
#include "pcgm/spatial_grid.hpp"
#include "pcgm/spherical_harmonics.hpp"

namespace pcgm {

struct EmptyPatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Voxelized local neighborhood of a keypoint: an axis-aligned G^3 grid over
/// the cube [center - radius, center + radius]^3. Only points inside the
/// inscribed ball are splatted, so the content rotates within the grid.
struct VoxelPatch {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 0.0;
    int grid_size = 0;                       // G, odd
    std::vector<double> density;             // G^3, row-major (x, y, z)
    std::vector<Eigen::Vector3d> gradients;  // central differences of density

    double voxel_size() const { return 2.0 * radius / double(grid_size); }
    std::size_t flat(int x, int y, int z) const {
        return (std::size_t(x) * grid_size + y) * grid_size + z;
    }
    /// Voxel center in world coordinates.
    Eigen::Vector3d voxel_center(int x, int y, int z) const {
        const double h = voxel_size();
        return center + Eigen::Vector3d((x + 0.5) * h - radius, (y + 0.5) * h - radius,
                                        (z + 0.5) * h - radius);
    }
};

/// Per-voxel spherical-harmonic expansion of the gradient orientation field,
/// locally energy-normalized. Band l occupies columns [l^2, l^2 + 2l].
struct ShHogField {
    Eigen::MatrixXd coeffs;  // G^3 rows, (L+1)^2 columns
    int max_degree = 0;
    int grid_size = 0;
    double voxel_size = 0.0;
    double kernel_sigma = 0.0;
};

struct DescriptorSet {
    std::vector<Eigen::VectorXd> features;  // one per keypoint, length dim
    std::vector<bool> valid;                // false: empty patch or zero energy
    int dim = 0;
};

struct DescriptorConfig {
    int max_degree = 3;    // L
    int n_orders = 2;      // Gaussian-derivative orders, d_f = (L+1) * n_orders
    int grid_size = 11;    // G, odd
    double radius = 0.0;   // 0 -> 2 * salient_radius at the call site
    double kernel_sigma = 0.0;  // 0 -> radius / 4
};

namespace detail {

/// Separable zero-padded Gaussian smoothing of a G^3 scalar field.
inline std::vector<double> gaussian_smooth3(const std::vector<double>& field, int g,
                                            double sigma_voxels) {
    const int half = std::max(1, int(std::ceil(3.0 * sigma_voxels)));
    std::vector<double> kernel(2 * half + 1);
    double ksum = 0.0;
    for (int i = -half; i <= half; ++i) {
        kernel[i + half] = std::exp(-0.5 * double(i) * double(i) / (sigma_voxels * sigma_voxels));
        ksum += kernel[i + half];
    }
    for (auto& k : kernel) k /= ksum;

    auto flat = [g](int x, int y, int z) { return (std::size_t(x) * g + y) * g + z; };
    std::vector<double> a = field, b(field.size());
    for (int axis = 0; axis < 3; ++axis) {
        for (int x = 0; x < g; ++x)
            for (int y = 0; y < g; ++y)
                for (int z = 0; z < g; ++z) {
                    double acc = 0.0;
                    for (int t = -half; t <= half; ++t) {
                        int xx = x, yy = y, zz = z;
                        (axis == 0 ? xx : axis == 1 ? yy : zz) += t;
                        if (xx < 0 || xx >= g || yy < 0 || yy >= g || zz < 0 || zz >= g) continue;
                        acc += kernel[t + half] * a[flat(xx, yy, zz)];
                    }
                    b[flat(x, y, z)] = acc;
                }
        std::swap(a, b);
    }
    return a;
}

/// n-th radial derivative of exp(-r^2 / 2 sigma^2) via Hermite polynomials.
inline double gaussian_derivative(int n, double r, double sigma) {
    const double u = r / (sigma * std::numbers::sqrt2);
    double h0 = 1.0, h1 = 2.0 * u;
    double h = n == 0 ? h0 : h1;
    for (int k = 2; k <= n; ++k) {
        h = 2.0 * u * h1 - 2.0 * (k - 1) * h0;
        h0 = h1;
        h1 = h;
    }
    const double scale = std::pow(-1.0 / (sigma * std::numbers::sqrt2), n);
    return scale * h * std::exp(-u * u);
}

}  // namespace detail

inline VoxelPatch extract_patch(const PointCloud& cloud, const Eigen::Vector3d& center,
                                double radius, int grid_size) {
    if (radius <= 0) throw std::invalid_argument("patch radius must be positive");
    if (grid_size < 5 || grid_size % 2 == 0)
        throw std::invalid_argument("grid size must be odd and >= 5");

    VoxelPatch patch;
    patch.center = center;
    patch.radius = radius;
    patch.grid_size = grid_size;
    const int g = grid_size;
    patch.density.assign(std::size_t(g) * g * g, 0.0);

    const double h = patch.voxel_size();
    const double r2 = radius * radius;
    std::size_t splatted = 0;
    for (const auto& p : cloud.points) {
        if ((p - center).squaredNorm() > r2) continue;
        ++splatted;
        // continuous voxel-grid coordinates; voxel centers sit at integers
        Eigen::Vector3d gc = (p - center + Eigen::Vector3d::Constant(radius)) / h -
                             Eigen::Vector3d::Constant(0.5);
        int base[3];
        double frac[3];
        for (int a = 0; a < 3; ++a) {
            base[a] = int(std::floor(gc(a)));
            frac[a] = gc(a) - base[a];
        }
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz) {
                    const int x = base[0] + dx, y = base[1] + dy, z = base[2] + dz;
                    if (x < 0 || x >= g || y < 0 || y >= g || z < 0 || z >= g) continue;
                    const double w = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) *
                                     (dz ? frac[2] : 1 - frac[2]);
                    patch.density[patch.flat(x, y, z)] += w;
                }
    }
    if (splatted == 0) throw EmptyPatch("no points within patch radius");

    // differentiate a Gaussian-smoothed copy: raw splat densities are
    // sampling-noise dominated for sparse clouds, and the isotropic kernel
    // keeps the gradient field rotation-covariant
    const std::vector<double> smoothed = detail::gaussian_smooth3(patch.density, g, 2.0);
    patch.gradients.assign(patch.density.size(), Eigen::Vector3d::Zero());
    auto dens = [&](int x, int y, int z) { return smoothed[patch.flat(x, y, z)]; };
    for (int x = 0; x < g; ++x)
        for (int y = 0; y < g; ++y)
            for (int z = 0; z < g; ++z) {
                auto diff = [&](double lo, double hi, double span) { return (hi - lo) / span; };
                Eigen::Vector3d d;
                d.x() = x == 0       ? diff(dens(0, y, z), dens(1, y, z), h)
                        : x == g - 1 ? diff(dens(g - 2, y, z), dens(g - 1, y, z), h)
                                     : diff(dens(x - 1, y, z), dens(x + 1, y, z), 2 * h);
                d.y() = y == 0       ? diff(dens(x, 0, z), dens(x, 1, z), h)
                        : y == g - 1 ? diff(dens(x, g - 2, z), dens(x, g - 1, z), h)
                                     : diff(dens(x, y - 1, z), dens(x, y + 1, z), 2 * h);
                d.z() = z == 0       ? diff(dens(x, y, 0), dens(x, y, 1), h)
                        : z == g - 1 ? diff(dens(x, y, g - 2), dens(x, y, g - 1), h)
                                     : diff(dens(x, y, z - 1), dens(x, y, z + 1), 2 * h);
                patch.gradients[patch.flat(x, y, z)] = d;
            }
    return patch;
}

/// Per-voxel SH expansion of the gradient direction, scaled by gradient
/// magnitude and normalized by the Gaussian-smoothed local gradient energy.
inline ShHogField compute_sh_hog(const VoxelPatch& patch, int max_degree, double kernel_sigma) {
    if (max_degree < 1) throw std::invalid_argument("max degree must be >= 1");
    if (kernel_sigma <= 0) throw std::invalid_argument("kernel sigma must be positive");

    const int g = patch.grid_size;
    const std::size_t n_vox = patch.density.size();
    const int n_coeffs = (max_degree + 1) * (max_degree + 1);

    std::vector<double> energy(n_vox);
    for (std::size_t v = 0; v < n_vox; ++v) energy[v] = patch.gradients[v].squaredNorm();
    const double sigma_vox = kernel_sigma / patch.voxel_size();
    std::vector<double> smooth = detail::gaussian_smooth3(energy, g, sigma_vox);

    double max_energy = 0.0;
    for (double e : smooth) max_energy = std::max(max_energy, e);
    const double eps = 1e-8 * max_energy;

    ShHogField field;
    field.max_degree = max_degree;
    field.grid_size = g;
    field.voxel_size = patch.voxel_size();
    field.kernel_sigma = kernel_sigma;
    field.coeffs = Eigen::MatrixXd::Zero(n_vox, n_coeffs);

    if (max_energy == 0.0) return field;  // no gradients anywhere

    for (std::size_t v = 0; v < n_vox; ++v) {
        const double mag = patch.gradients[v].norm();
        if (mag == 0.0) continue;
        const Eigen::Vector3d dir = patch.gradients[v] / mag;
        const double denom = std::sqrt(smooth[v] + eps);
        for (int l = 0; l <= max_degree; ++l) {
            const double amp = (2.0 * l + 1.0) / (4.0 * M_PI) * mag / denom;
            const Eigen::VectorXd band = sh::eval_band(l, dir);
            field.coeffs.block(v, l * l, 1, 2 * l + 1) = amp * band.transpose();
        }
    }
    return field;
}

struct InvariantResult {
    Eigen::VectorXd feature;
    bool zero_energy = false;
};

/// Rotation-invariant feature: each degree-l band is filtered against an
/// isotropic radial Gaussian-derivative profile of order n (response taken
/// at the patch center), and the rank-0 coupling sum_m |response|^2 makes
/// the result invariant. Concatenated over (n, l) and L2-normalized.
inline InvariantResult compute_invariants(const ShHogField& field, int n_orders) {
    if (n_orders < 1) throw std::invalid_argument("n_orders must be >= 1");
    const int g = field.grid_size;
    const int L = field.max_degree;
    const int center = g / 2;
    const double h = field.voxel_size;

    InvariantResult out;
    out.feature = Eigen::VectorXd::Zero((L + 1) * n_orders);
    if (field.coeffs.cwiseAbs().maxCoeff() == 0.0) {
        out.zero_energy = true;
        return out;
    }

    // radial weights shared by all bands; responses stay band-covariant
    const double sigma = field.kernel_sigma;
    std::vector<std::vector<double>> weights(n_orders, std::vector<double>(field.coeffs.rows()));
    for (int x = 0; x < g; ++x)
        for (int y = 0; y < g; ++y)
            for (int z = 0; z < g; ++z) {
                const std::size_t v = (std::size_t(x) * g + y) * g + z;
                const double r =
                    h * Eigen::Vector3d(x - center, y - center, z - center).norm();
                for (int n = 1; n <= n_orders; ++n)
                    weights[n - 1][v] = detail::gaussian_derivative(n, r, sigma);
            }

    int idx = 0;
    for (int n = 1; n <= n_orders; ++n) {
        for (int l = 0; l <= L; ++l) {
            Eigen::VectorXd response = Eigen::VectorXd::Zero(2 * l + 1);
            for (Eigen::Index v = 0; v < field.coeffs.rows(); ++v) {
                const double w = weights[n - 1][v];
                if (w == 0.0) continue;
                response += w * field.coeffs.block(v, l * l, 1, 2 * l + 1).transpose();
            }
            out.feature(idx++) = response.squaredNorm();
        }
    }
    const double norm = out.feature.norm();
    if (norm > 0) out.feature /= norm;
    return out;
}

/// One feature per keypoint; empty patches and zero-energy fields yield a
/// zero vector with valid = false.
inline DescriptorSet describe_keypoints(const PointCloud& cloud, const KeypointSet& keypoints,
                                        const DescriptorConfig& cfg) {
    if (keypoints.size() == 0) throw std::invalid_argument("no keypoints to describe");
    if (cfg.radius <= 0) throw std::invalid_argument("descriptor radius must be set");
    const double kernel_sigma = cfg.kernel_sigma > 0 ? cfg.kernel_sigma : cfg.radius / 4.0;

    DescriptorSet set;
    set.dim = (cfg.max_degree + 1) * cfg.n_orders;
    set.features.reserve(keypoints.size());
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        try {
            VoxelPatch patch =
                extract_patch(cloud, keypoints.positions[i], cfg.radius, cfg.grid_size);
            ShHogField field = compute_sh_hog(patch, cfg.max_degree, kernel_sigma);
            InvariantResult inv = compute_invariants(field, cfg.n_orders);
            set.features.push_back(inv.feature);
            set.valid.push_back(!inv.zero_energy);
        } catch (const EmptyPatch&) {
            set.features.push_back(Eigen::VectorXd::Zero(set.dim));
            set.valid.push_back(false);
        }
    }
    return set;
}

}  // namespace pcgm
