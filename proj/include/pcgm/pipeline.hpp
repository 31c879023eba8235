#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcgm/cloud.hpp"
#include "pcgm/descriptor.hpp"
#include "pcgm/graph.hpp"
#include "pcgm/graph_matching.hpp"
#include "pcgm/keypoints.hpp"
#include "pcgm/transform.hpp"

namespace pcgm {

struct TooFewKeypoints : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoValidDescriptors : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    double downsample_leaf = 0.0;  // 0: no downsampling before detection
    IssParams iss;
    DescriptorConfig descriptor;
    std::size_t graph_k_nn = 8;
    GmConfig gm;
    bool rigid = true;                 // estimate s = 1
    bool target_to_source = true;      // report the transform aligning cloud 2 onto cloud 1
    double discretize_min_value = 0.1; // relaxed entries below this stay unmatched
    std::size_t outer_max_iters = 10;
    double outer_tol = 1e-4;  // on both the rotation delta (deg) and ||t delta||
    // pairwise-distance agreement tolerance for the consensus filter, as a
    // fraction of the source graph's median Euclidean edge length
    double consensus_rel_tol = 0.08;
    // descriptor neighbors per source node entering the consensus pool
    std::size_t consensus_candidates = 5;
    std::size_t trim_rounds = 5;  // residual re-admission rounds; 0 disables
};

struct RegistrationResult {
    SimilarityTransform transform;
    CorrespondenceMatrix correspondence;  // discrete, over graph nodes
    std::size_t iterations = 0;
    std::vector<double> objective_trace;
    bool converged = false;
    std::size_t keypoints_source = 0;
    std::size_t keypoints_target = 0;
};

/// Flat key=value configuration file; '#' starts a comment, unknown keys are
/// an error so typos cannot silently fall back to defaults.
inline PipelineConfig parse_config(std::istream& in) {
    PipelineConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r\n");
            auto e = s.find_last_not_of(" \t\r\n");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        auto as_double = [&] { return std::stod(value); };
        auto as_size = [&] { return std::size_t(std::stoull(value)); };
        auto as_int = [&] { return std::stoi(value); };
        auto as_bool = [&] {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw ConfigError("key " + key + ": expected a boolean, got '" + value + "'");
        };

        if (key == "downsample_leaf") cfg.downsample_leaf = as_double();
        else if (key == "iss_salient_radius") cfg.iss.salient_radius = as_double();
        else if (key == "iss_nms_radius") cfg.iss.nms_radius = as_double();
        else if (key == "iss_gamma21") cfg.iss.gamma21 = as_double();
        else if (key == "iss_gamma32") cfg.iss.gamma32 = as_double();
        else if (key == "iss_min_neighbors") cfg.iss.min_neighbors = as_size();
        else if (key == "iss_min_planarity_ratio") cfg.iss.min_planarity_ratio = as_double();
        else if (key == "descriptor_max_degree") cfg.descriptor.max_degree = as_int();
        else if (key == "descriptor_n_orders") cfg.descriptor.n_orders = as_int();
        else if (key == "descriptor_grid_size") cfg.descriptor.grid_size = as_int();
        else if (key == "descriptor_radius") cfg.descriptor.radius = as_double();
        else if (key == "descriptor_kernel_sigma") cfg.descriptor.kernel_sigma = as_double();
        else if (key == "graph_k_nn") cfg.graph_k_nn = as_size();
        else if (key == "alpha1") cfg.gm.alpha1 = as_double();
        else if (key == "alpha2") cfg.gm.alpha2 = as_double();
        else if (key == "alpha3") cfg.gm.alpha3 = as_double();
        else if (key == "max_fw_iters") cfg.gm.max_fw_iters = as_size();
        else if (key == "fw_tol") cfg.gm.fw_tol = as_double();
        else if (key == "unmatched_cost") cfg.gm.unmatched_cost = as_double();
        else if (key == "rigid") cfg.rigid = as_bool();
        else if (key == "target_to_source") cfg.target_to_source = as_bool();
        else if (key == "discretize_min_value") cfg.discretize_min_value = as_double();
        else if (key == "outer_max_iters") cfg.outer_max_iters = as_size();
        else if (key == "outer_tol") cfg.outer_tol = as_double();
        else if (key == "consensus_rel_tol") cfg.consensus_rel_tol = as_double();
        else if (key == "consensus_candidates") cfg.consensus_candidates = as_size();
        else if (key == "trim_rounds") cfg.trim_rounds = as_size();
        else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in);
}

namespace detail {

struct CloudFeatures {
    KeypointSet keypoints;
    DescriptorSet descriptors;
    KeypointGraph graph;
};

inline CloudFeatures detect_and_describe(const PointCloud& input, const PipelineConfig& cfg) {
    PointCloud cloud =
        cfg.downsample_leaf > 0 ? voxel_downsample(input, cfg.downsample_leaf) : input;

    CloudFeatures out;
    out.keypoints = detect_iss(cloud, cfg.iss);
    if (out.keypoints.size() < 4)
        throw TooFewKeypoints("detected " + std::to_string(out.keypoints.size()) +
                              " keypoints, need >= 4");

    DescriptorConfig dcfg = cfg.descriptor;
    if (dcfg.radius <= 0) {
        double salient = cfg.iss.salient_radius;
        if (salient <= 0) salient = 6.0 * mean_point_spacing(cloud);
        dcfg.radius = 2.0 * salient;
    }
    out.descriptors = describe_keypoints(cloud, out.keypoints, dcfg);
    if (std::none_of(out.descriptors.valid.begin(), out.descriptors.valid.end(),
                     [](bool v) { return v; }))
        throw NoValidDescriptors("every keypoint descriptor is invalid");

    out.graph = build_graph(out.keypoints, out.descriptors, cfg.graph_k_nn);
    return out;
}

inline double rotation_angle_deg(const Eigen::Matrix3d& r) {
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

inline double median_copy(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

/// Greedy maximum clique in the pairwise-distance consistency graph over
/// matched pairs. Two matches (i,a) and (j,b) are consistent when
/// |s * ||p_i - p_j|| - ||q_a - q_b||| <= tau; under similarity (non-rigid)
/// mode the scale s is the median distance ratio over all match pairs.
/// Seed is the match of maximal consistency degree, ties broken by lower
/// index; candidates join in descending degree order, same tie rule.
inline std::vector<std::size_t> consensus_pairs(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const KeypointGraph& g1,
    const KeypointGraph& g2, double tau, bool rigid) {
    const std::size_t n = pairs.size();
    if (n == 0) return {};

    std::vector<double> d1(n * n, 0.0), d2(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            d1[a * n + b] = (g1.positions[pairs[a].first] - g1.positions[pairs[b].first]).norm();
            d2[a * n + b] =
                (g2.positions[pairs[a].second] - g2.positions[pairs[b].second]).norm();
        }

    double scale = 1.0;
    if (!rigid) {
        std::vector<double> ratios;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (d1[a * n + b] > 1e-12) ratios.push_back(d2[a * n + b] / d1[a * n + b]);
        if (!ratios.empty()) scale = median_copy(std::move(ratios));
    }

    std::vector<std::vector<bool>> consistent(n, std::vector<bool>(n, false));
    std::vector<std::size_t> degree(n, 0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            if (std::abs(scale * d1[a * n + b] - d2[a * n + b]) <= tau) {
                consistent[a][b] = consistent[b][a] = true;
                ++degree[a];
                ++degree[b];
            }

    const std::size_t seed = std::size_t(
        std::max_element(degree.begin(), degree.end()) - degree.begin());
    std::vector<std::size_t> clique{seed};
    while (true) {
        std::size_t best = n;
        for (std::size_t a = 0; a < n; ++a) {
            bool ok = true;
            for (std::size_t s : clique)
                if (a == s || !consistent[a][s]) {
                    ok = false;
                    break;
                }
            if (ok && (best == n || degree[a] > degree[best])) best = a;
        }
        if (best == n) break;
        clique.push_back(best);
    }
    std::sort(clique.begin(), clique.end());
    return clique;
}

}  // namespace detail

/// Full coarse-to-fine registration: ISS keypoints and invariant descriptors
/// on both clouds, Frank-Wolfe graph matching for the coarse correspondence,
/// then alternating refinement and closed-form transform estimation until
/// the motion update falls below outer_tol.
inline RegistrationResult register_clouds(const PointCloud& source, const PointCloud& target,
                                          const PipelineConfig& cfg) {
    auto f1 = detail::detect_and_describe(source, cfg);
    auto f2 = detail::detect_and_describe(target, cfg);
    const KeypointGraph& g1 = f1.graph;
    const KeypointGraph& g2 = f2.graph;

    DissimilarityMatrix d = node_dissimilarity(g1, g2);
    GmConfig gm = cfg.gm;
    if (gm.unmatched_cost < 0) gm.unmatched_cost = default_unmatched_cost(d);

    RegistrationResult result;
    result.keypoints_source = f1.keypoints.size();
    result.keypoints_target = f2.keypoints.size();

    // coarse stage: J1 from the uniform start. Trace entries carry the
    // unmatched penalty u*(m+n-2*sum(C)) the solver minimizes; under it the
    // J2 entries below never increase, because each incumbent re-enters the
    // next refinement with a zero quadratic term.
    const double total_nodes = double(g1.size() + g2.size());
    auto unmatched_penalty = [&](const CorrespondenceMatrix& c) {
        return gm.unmatched_cost * (total_nodes - 2.0 * c.values.sum());
    };
    CorrespondenceMatrix c_relaxed =
        frank_wolfe(g1, g2, d, gm, CorrespondenceMatrix::uniform(g1.size(), g2.size()));
    result.objective_trace.push_back(objective_j1(c_relaxed, g1, g2, d, gm) +
                                     unmatched_penalty(c_relaxed));

    // rigid-consistency tolerance: pairwise distances between correct matches
    // agree up to keypoint jitter, a small fraction of the typical edge length
    const double consensus_tau =
        cfg.consensus_rel_tol * detail::median_copy(g1.edge_len_euclid);

    // candidate pool for the consensus fit: each source node's best
    // descriptor neighbors in the target. Under noise the correct partner
    // often drops out of the top spot but stays in this short list, so the
    // pool keeps enough true pairs for a large consistent clique even when
    // the one-to-one matching is heavily contaminated.
    std::vector<std::pair<std::size_t, std::size_t>> candidate_pool;
    {
        const std::size_t k_cand = std::min<std::size_t>(cfg.consensus_candidates, g2.size());
        for (std::size_t i = 0; i < g1.size(); ++i) {
            std::vector<std::pair<double, std::size_t>> by_dist;
            by_dist.reserve(g2.size());
            for (std::size_t j = 0; j < g2.size(); ++j)
                by_dist.emplace_back(d.values(i, j), j);
            std::partial_sort(by_dist.begin(), by_dist.begin() + k_cand, by_dist.end());
            for (std::size_t r = 0; r < k_cand; ++r)
                candidate_pool.emplace_back(i, by_dist[r].second);
        }
    }

    // transform estimation robustified in two stages. First a consensus
    // filter over the matched pairs plus the candidate pool: pairs whose
    // mutual point-to-point distances agree between the two graphs form a
    // clique in a consistency graph, and descriptor confusions on repetitive
    // structure are mutually consistent only in small groups, so a greedy
    // maximum clique isolates the rigid-consistent core even when it is a
    // minority. Then residual re-admission rounds grow the fit set back out
    // from that core. The correspondence itself is untouched; only the
    // transform fit is robustified.
    auto trimmed_estimate = [&](const CorrespondenceMatrix& dc) {
        std::vector<std::pair<std::size_t, std::size_t>> pool = dc.matched_pairs();
        {
            std::vector<std::vector<bool>> seen(g1.size(), std::vector<bool>(g2.size(), false));
            for (const auto& [i, j] : pool) seen[i][j] = true;
            for (const auto& [i, j] : candidate_pool)
                if (!seen[i][j]) {
                    seen[i][j] = true;
                    pool.emplace_back(i, j);
                }
        }
        const std::size_t n = pool.size();

        auto estimate_on = [&](const std::vector<std::size_t>& sel) {
            CorrespondenceMatrix sub;
            sub.values = Eigen::MatrixXd::Zero(dc.values.rows(), dc.values.cols());
            sub.mode = CorrespondenceMatrix::Mode::Relaxed;
            for (std::size_t p : sel)
                sub.values(pool[p].first, pool[p].second) = 1.0;
            return estimate_transform(sub, g1, g2, gm.alpha3, cfg.rigid);
        };
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});

        std::vector<std::size_t> keep_set =
            detail::consensus_pairs(pool, g1, g2, consensus_tau, cfg.rigid);
        SimilarityTransform t;
        if (keep_set.size() >= 3) {
            try {
                t = estimate_on(keep_set);
            } catch (const DegenerateConfiguration&) {
                keep_set = all;
                t = estimate_on(keep_set);
            }
        } else {
            keep_set = all;
            t = estimate_on(keep_set);
        }

        for (std::size_t round = 0; round < cfg.trim_rounds; ++round) {
            std::vector<double> res(n);
            for (std::size_t p = 0; p < n; ++p)
                res[p] = (t.apply(g1.positions[pool[p].first]) - g2.positions[pool[p].second])
                             .norm();
            // residual scale from the current keep set, not all pairs: the
            // keep set is known-consistent, so its median stays meaningful
            // when inliers are a minority overall
            std::vector<double> kept_res;
            kept_res.reserve(keep_set.size());
            for (std::size_t p : keep_set) kept_res.push_back(res[p]);
            const double tau =
                std::max(3.0 * detail::median_copy(kept_res), consensus_tau);
            std::vector<std::size_t> next;
            for (std::size_t p = 0; p < n; ++p)
                if (res[p] <= tau) next.push_back(p);
            if (next.size() < 4 || next == keep_set) break;
            try {
                SimilarityTransform refit = estimate_on(next);
                keep_set = std::move(next);
                t = refit;
            } catch (const DegenerateConfiguration&) {
                break;
            }
        }
        return t;
    };

    CorrespondenceMatrix c_discrete = discretize(c_relaxed, cfg.discretize_min_value);
    // estimated as source -> matched target coordinates
    SimilarityTransform t_fwd = trimmed_estimate(c_discrete);

    for (std::size_t iter = 1; iter <= cfg.outer_max_iters; ++iter) {
        result.iterations = iter;
        CorrespondenceMatrix refined = refine_j2(c_relaxed, g1, g2, d, t_fwd, gm);

        // J2 at the accepted iterate, under this iteration's anchor
        std::vector<Eigen::Vector3d> moved = t_fwd.apply(g1.positions);
        const Eigen::MatrixXd lap = graph_laplacian(gaussian_adjacency(moved));
        result.objective_trace.push_back(
            objective_j2(refined, d, g2.position_matrix(),
                         c_relaxed.values * g2.position_matrix(), lap, gm.alpha3) +
            unmatched_penalty(refined));

        c_relaxed = refined;
        c_discrete = discretize(c_relaxed, cfg.discretize_min_value);
        SimilarityTransform t_new = trimmed_estimate(c_discrete);

        const double rot_delta = detail::rotation_angle_deg(t_new.R.transpose() * t_fwd.R);
        const double trans_delta = (t_new.t - t_fwd.t).norm();
        t_fwd = t_new;
        if (rot_delta < cfg.outer_tol && trans_delta < cfg.outer_tol) {
            result.converged = true;
            break;
        }
    }

    result.correspondence = c_discrete;
    result.transform = cfg.target_to_source ? t_fwd.inverse() : t_fwd;
    return result;
}

}  // namespace pcgm
