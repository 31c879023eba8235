#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcgm/cloud.hpp"
#include "pcgm/pipeline.hpp"
#include "pcgm/transform.hpp"

namespace pcgm {

enum class SceneKind { CubeRoom, Facade, Terrain };

inline std::string to_string(SceneKind kind) {
    switch (kind) {
        case SceneKind::CubeRoom: return "cube-room";
        case SceneKind::Facade: return "facade";
        default: return "terrain";
    }
}

inline SceneKind scene_kind_from_string(const std::string& name) {
    if (name == "cube-room") return SceneKind::CubeRoom;
    if (name == "facade") return SceneKind::Facade;
    if (name == "terrain") return SceneKind::Terrain;
    throw std::invalid_argument("unknown scene kind: " + name);
}

struct SyntheticScene {
    PointCloud source;
    PointCloud target;  // transformed overlapping crop of the source
    SimilarityTransform ground_truth;  // maps source coordinates to target coordinates
    std::vector<std::pair<std::size_t, std::size_t>> true_correspondence;
    double overlap_fraction = 1.0;
};

struct NoiseSpec {
    double ratio = 0.0;  // fraction of points perturbed
    double level = 0.0;  // per-axis Gaussian sigma, meters
    std::uint64_t seed = 0;
};

struct RandomMotionSpec {
    double max_angle_deg = 180.0;
    double max_translation = 10.0;
    double min_scale = 1.0;
    double max_scale = 1.0;
};

inline SimilarityTransform random_similarity(std::mt19937_64& rng, const RandomMotionSpec& spec) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Eigen::Vector3d axis;
    do {
        axis = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
    } while (axis.squaredNorm() < 1e-6 || axis.squaredNorm() > 1.0);
    axis.normalize();
    std::uniform_real_distribution<double> angle(0.0, spec.max_angle_deg * M_PI / 180.0);
    std::uniform_real_distribution<double> trans(-spec.max_translation, spec.max_translation);
    std::uniform_real_distribution<double> scale(spec.min_scale, spec.max_scale);

    SimilarityTransform t;
    t.R = Eigen::AngleAxisd(angle(rng), axis).toRotationMatrix();
    t.t = Eigen::Vector3d(trans(rng), trans(rng), trans(rng));
    t.s = scale(rng);
    return t;
}

namespace detail {

/// Uniform sample on an axis-aligned box surface (all six faces).
inline Eigen::Vector3d sample_box_surface(std::mt19937_64& rng, const Eigen::Vector3d& lo,
                                          const Eigen::Vector3d& hi) {
    const Eigen::Vector3d size = hi - lo;
    const double areas[3] = {size.y() * size.z(), size.x() * size.z(), size.x() * size.y()};
    std::discrete_distribution<int> face({areas[0], areas[0], areas[1], areas[1], areas[2],
                                          areas[2]});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int f = face(rng);
    Eigen::Vector3d p(lo.x() + u(rng) * size.x(), lo.y() + u(rng) * size.y(),
                      lo.z() + u(rng) * size.z());
    const int axis = f / 2;
    p(axis) = (f % 2) ? hi(axis) : lo(axis);
    return p;
}

inline std::vector<Eigen::Vector3d> make_cube_room(std::size_t n, std::mt19937_64& rng) {
    // 10 m square room, 3 m high, with box "furniture" providing corners
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> boxes;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int b = 0; b < 8; ++b) {
        const Eigen::Vector3d size(0.6 + 1.2 * u(rng), 0.6 + 1.2 * u(rng), 0.5 + 1.5 * u(rng));
        const Eigen::Vector3d lo(0.5 + u(rng) * (9.0 - size.x()), 0.5 + u(rng) * (9.0 - size.y()),
                                 0.0);
        boxes.emplace_back(lo, lo + size);
    }

    std::vector<Eigen::Vector3d> pts;
    pts.reserve(n);
    const double room_area = 100.0 + 4.0 * 30.0;  // floor + walls
    double box_area = 0.0;
    for (const auto& [lo, hi] : boxes) {
        const Eigen::Vector3d s = hi - lo;
        box_area += 2.0 * (s.x() * s.y() + s.x() * s.z() + s.y() * s.z());
    }
    const std::size_t n_boxes = std::size_t(n * box_area / (room_area + box_area));
    const std::size_t n_room = n - n_boxes;

    for (std::size_t i = 0; i < n_room; ++i) {
        std::discrete_distribution<int> face({100.0, 30.0, 30.0, 30.0, 30.0});
        switch (face(rng)) {
            case 0: pts.emplace_back(10 * u(rng), 10 * u(rng), 0.0); break;
            case 1: pts.emplace_back(10 * u(rng), 0.0, 3 * u(rng)); break;
            case 2: pts.emplace_back(10 * u(rng), 10.0, 3 * u(rng)); break;
            case 3: pts.emplace_back(0.0, 10 * u(rng), 3 * u(rng)); break;
            default: pts.emplace_back(10.0, 10 * u(rng), 3 * u(rng)); break;
        }
    }
    for (std::size_t i = 0; i < n_boxes; ++i) {
        const auto& [lo, hi] = boxes[i % boxes.size()];
        pts.push_back(sample_box_surface(rng, lo, hi));
    }
    return pts;
}

inline std::vector<Eigen::Vector3d> make_facade(std::size_t n, std::mt19937_64& rng) {
    // 12 x 8 m wall in the xz plane with a grid of protruding window frames
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> frames;
    for (int col = 0; col < 4; ++col)
        for (int row = 0; row < 2; ++row) {
            const Eigen::Vector3d lo(1.0 + 3.0 * col, 0.0, 1.0 + 3.5 * row);
            frames.emplace_back(lo, lo + Eigen::Vector3d(1.6, 0.4, 2.0));
        }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(n);
    const std::size_t n_frames = n / 2;
    for (std::size_t i = 0; i + n_frames < n; ++i)
        pts.emplace_back(12.0 * u(rng), 0.0, 8.0 * u(rng));
    for (std::size_t i = 0; i < n_frames; ++i) {
        const auto& [lo, hi] = frames[i % frames.size()];
        pts.push_back(sample_box_surface(rng, lo, hi));
    }
    return pts;
}

inline std::vector<Eigen::Vector3d> make_terrain(std::size_t n, std::mt19937_64& rng) {
    // smooth random heightfield over 12 x 12 m, sum of seeded sinusoids
    struct Wave {
        double ax, ay, amp, phase;
    };
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Wave> waves;
    for (int k = 0; k < 6; ++k)
        waves.push_back({0.3 + 1.2 * u(rng), 0.3 + 1.2 * u(rng), 0.25 + 0.55 * u(rng),
                         2.0 * M_PI * u(rng)});
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 12.0 * u(rng), y = 12.0 * u(rng);
        double z = 0.0;
        for (const auto& w : waves) z += w.amp * std::sin(w.ax * x + w.ay * y + w.phase);
        pts.emplace_back(x, y, z);
    }
    return pts;
}

}  // namespace detail

/// Deterministic synthetic scene with ground truth: the target is the
/// transformed crop of the source containing the requested point fraction
/// (crop taken along the first principal axis of the bounding box).
inline SyntheticScene generate_scene(SceneKind kind, std::size_t n_points,
                                     const SimilarityTransform& motion, double overlap,
                                     std::uint64_t seed) {
    if (n_points < 500) throw std::invalid_argument("need at least 500 points");
    if (!(overlap > 0.0 && overlap <= 1.0)) throw std::invalid_argument("overlap must be in (0,1]");

    std::mt19937_64 rng(seed);
    SyntheticScene scene;
    switch (kind) {
        case SceneKind::CubeRoom: scene.source.points = detail::make_cube_room(n_points, rng); break;
        case SceneKind::Facade: scene.source.points = detail::make_facade(n_points, rng); break;
        case SceneKind::Terrain: scene.source.points = detail::make_terrain(n_points, rng); break;
    }
    scene.source.frame_id = to_string(kind) + "/source";
    scene.ground_truth = motion;
    scene.overlap_fraction = overlap;

    std::vector<std::size_t> keep;
    if (overlap >= 1.0) {
        keep.resize(scene.source.size());
        std::iota(keep.begin(), keep.end(), 0);
    } else {
        // crop along x at the (1 - overlap) quantile
        std::vector<double> xs;
        xs.reserve(scene.source.size());
        for (const auto& p : scene.source.points) xs.push_back(p.x());
        std::vector<double> sorted = xs;
        const std::size_t cut = std::size_t((1.0 - overlap) * double(sorted.size()));
        std::nth_element(sorted.begin(), sorted.begin() + cut, sorted.end());
        const double threshold = sorted[cut];
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (xs[i] >= threshold) keep.push_back(i);
    }

    scene.target.frame_id = to_string(kind) + "/target";
    scene.target.points.reserve(keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
        scene.target.points.push_back(motion.apply(scene.source.points[keep[j]]));
        scene.true_correspondence.emplace_back(keep[j], j);
    }
    return scene;
}

inline SyntheticScene generate_scene(SceneKind kind, std::size_t n_points,
                                     const RandomMotionSpec& motion_spec, double overlap,
                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    return generate_scene(kind, n_points, random_similarity(rng, motion_spec), overlap, seed);
}

/// Displaces exactly round(ratio * N) points, chosen uniformly by seed, with
/// i.i.d. per-axis Gaussian offsets of sigma = level.
inline PointCloud add_noise(const PointCloud& cloud, const NoiseSpec& spec) {
    if (spec.ratio < 0 || spec.ratio > 1) throw std::invalid_argument("ratio must be in [0,1]");
    if (spec.level < 0) throw std::invalid_argument("level must be >= 0");

    PointCloud out = cloud;
    const std::size_t k = std::size_t(std::llround(spec.ratio * double(cloud.size())));
    if (k == 0) return out;
    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> idx(cloud.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto i : idx) {
        const Eigen::Vector3d offset(gauss(rng), gauss(rng), gauss(rng));
        out.points[i] += spec.level * offset;
    }
    return out;
}

struct SweepRow {
    std::string kind;
    std::uint64_t seed = 0;
    double ratio = 0.0;
    double level = 0.0;
    double rot_err_deg = 0.0;
    double trans_err_m = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    bool failed = false;  // pipeline error in this cell
};

/// Noise-sensitivity grid: registers a freshly noised target per
/// (ratio, level, seed) cell and compares against the ground truth. Failed
/// cells are recorded and the sweep continues.
inline std::vector<SweepRow> sensitivity_sweep(const SyntheticScene& scene,
                                               const std::vector<double>& ratios,
                                               const std::vector<double>& levels,
                                               const PipelineConfig& cfg,
                                               const std::vector<std::uint64_t>& seeds = {1, 2, 3,
                                                                                          4, 5}) {
    std::vector<SweepRow> rows;
    const SimilarityTransform gt =
        cfg.target_to_source ? scene.ground_truth.inverse() : scene.ground_truth;
    for (double ratio : ratios)
        for (double level : levels)
            for (auto seed : seeds) {
                SweepRow row;
                row.kind = scene.source.frame_id.substr(0, scene.source.frame_id.find('/'));
                if (row.kind.empty()) row.kind = "scene";
                row.seed = seed;
                row.ratio = ratio;
                row.level = level;
                try {
                    const PointCloud noisy = add_noise(scene.target, {ratio, level, seed});
                    const RegistrationResult result = register_clouds(scene.source, noisy, cfg);
                    const RegistrationErrors err = registration_errors(result.transform, gt);
                    row.rot_err_deg = err.rotation_error_deg;
                    row.trans_err_m = err.translation_error;
                    row.iterations = result.iterations;
                    row.converged = result.converged;
                } catch (const std::exception&) {
                    row.failed = true;
                    row.rot_err_deg = std::nan("");
                    row.trans_err_m = std::nan("");
                }
                rows.push_back(row);
            }
    return rows;
}

/// Fixed column order, header row, '.' decimal separator, locale-free.
inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out.imbue(std::locale::classic());
    out << "kind,seed,ratio,level,rot_err_deg,trans_err_m,iterations,converged\n";
    char buf[64];
    auto fixed = [&](double v) {
        if (std::isnan(v)) return std::string("nan");
        std::snprintf(buf, sizeof buf, "%.9f", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out << r.kind << "," << r.seed << "," << fixed(r.ratio) << "," << fixed(r.level) << ","
            << fixed(r.rot_err_deg) << "," << fixed(r.trans_err_m) << "," << r.iterations << ","
            << (r.failed ? "failed" : r.converged ? "true" : "false") << "\n";
    }
}

}  // namespace pcgm
