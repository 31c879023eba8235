#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pcgm/descriptor.hpp"
#include "pcgm/synthetic.hpp"
#include "test_utils.hpp"

namespace {

pcgm::VoxelPatch patch_with_gradients(int g, const std::vector<Eigen::Vector3d>& gradients) {
    pcgm::VoxelPatch patch;
    patch.center = Eigen::Vector3d::Zero();
    patch.radius = 1.0;
    patch.grid_size = g;
    patch.density.assign(std::size_t(g) * g * g, 0.0);
    patch.gradients = gradients;
    return patch;
}

pcgm::PointCloud rotated(const pcgm::PointCloud& cloud, const Eigen::Matrix3d& rot) {
    pcgm::PointCloud out = cloud;
    for (auto& p : out.points) p = rot * p;
    return out;
}

}  // namespace

TEST_CASE("single point at the patch center lands in the center voxel") {
    pcgm::PointCloud cloud;
    cloud.points.emplace_back(0, 0, 0);
    auto patch = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 5);
    const int c = 2;
    CHECK(patch.density[patch.flat(c, c, c)] == Catch::Approx(1.0));
    CHECK(patch.gradients[patch.flat(c, c, c)].norm() < 1e-12);
}

TEST_CASE("half-space density step points its gradients along -x") {
    pcgm::PointCloud cloud;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    for (int i = 0; i < 20000; ++i) {
        Eigen::Vector3d p(u(rng), u(rng), u(rng));
        if (p.x() < 0 && p.norm() < 0.95) cloud.points.push_back(p);
    }
    auto patch = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 9);
    const int c = 4;
    // at the step the density falls with x
    CHECK(patch.gradients[patch.flat(c, c, c)].x() < 0.0);
    CHECK(std::abs(patch.gradients[patch.flat(c, c, c)].y()) <
          0.2 * std::abs(patch.gradients[patch.flat(c, c, c)].x()));
}

TEST_CASE("patch of a rotated cloud matches the rotated patch") {
    auto cloud = testutil::surface_patch(11, 6000, 1.0);
    std::mt19937_64 rng(19);
    const Eigen::Matrix3d rot = testutil::random_rotation(rng);
    const int g = 11;

    auto p0 = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, g);
    auto p1 = pcgm::extract_patch(rotated(cloud, rot), {0, 0, 0}, 1.0, g);

    // smooth both densities (isotropic, so it commutes with the rotation),
    // then resample the original at rotated voxel centers by trilinear
    // interpolation and compare
    auto s0 = pcgm::detail::gaussian_smooth3(p0.density, g, 1.0);
    auto s1 = pcgm::detail::gaussian_smooth3(p1.density, g, 1.0);
    const double h = p0.voxel_size();

    auto sample = [&](const std::vector<double>& field, const Eigen::Vector3d& pos) {
        Eigen::Vector3d gc = (pos + Eigen::Vector3d::Constant(1.0)) / h -
                             Eigen::Vector3d::Constant(0.5);
        double acc = 0.0;
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
                    acc += field[(std::size_t(x) * g + y) * g + z] *
                           (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) *
                           (dz ? frac[2] : 1 - frac[2]);
                }
        return acc;
    };

    double num = 0.0, den = 0.0;
    for (int x = 0; x < g; ++x)
        for (int y = 0; y < g; ++y)
            for (int z = 0; z < g; ++z) {
                const Eigen::Vector3d pos = p1.voxel_center(x, y, z);
                if (pos.norm() > 0.8) continue;  // interior of the ball only
                const double expect = sample(s0, rot.transpose() * pos);
                const double got = s1[(std::size_t(x) * g + y) * g + z];
                num += (got - expect) * (got - expect);
                den += expect * expect;
            }
    CHECK(std::sqrt(num / den) < 0.02 * 10);  // trilinear splat tolerance
}

TEST_CASE("patch extraction rejects empty neighborhoods") {
    pcgm::PointCloud cloud;
    cloud.points.emplace_back(100, 0, 0);
    CHECK_THROWS_AS(pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 5), pcgm::EmptyPatch);
}

TEST_CASE("zero gradients give zero coefficients") {
    const int g = 5;
    auto patch = patch_with_gradients(
        g, std::vector<Eigen::Vector3d>(g * g * g, Eigen::Vector3d::Zero()));
    auto field = pcgm::compute_sh_hog(patch, 2, 0.25);
    CHECK(field.coeffs.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a unit z gradient has F_0^0 = 1/(4 pi) before normalization") {
    const int g = 5;
    std::vector<Eigen::Vector3d> grads(g * g * g, Eigen::Vector3d::Zero());
    grads[(2 * g + 2) * g + 2] = Eigen::Vector3d(0, 0, 1);
    auto patch = patch_with_gradients(g, grads);
    auto field = pcgm::compute_sh_hog(patch, 2, 0.25);

    // undo the normalization of the center voxel to recover F from F-tilde
    std::vector<double> energy(g * g * g, 0.0);
    energy[(2 * g + 2) * g + 2] = 1.0;
    auto smooth = pcgm::detail::gaussian_smooth3(energy, g, 0.25 / patch.voxel_size());
    double max_energy = *std::max_element(smooth.begin(), smooth.end());
    const double denom = std::sqrt(smooth[(2 * g + 2) * g + 2] + 1e-8 * max_energy);
    CHECK(field.coeffs((2 * g + 2) * g + 2, 0) * denom == Catch::Approx(1.0 / (4.0 * M_PI)));
}

TEST_CASE("uniform gradient field gives constant interior coefficients") {
    const int g = 7;
    auto patch = patch_with_gradients(
        g, std::vector<Eigen::Vector3d>(g * g * g, Eigen::Vector3d(0, 0, 1)));
    // kernel support of one voxel: interior voxels see no boundary padding,
    // so their smoothed energies (and hence coefficients) agree exactly
    auto field = pcgm::compute_sh_hog(patch, 2, 0.05);
    const Eigen::Index center = (3 * g + 3) * g + 3;
    for (int x = 2; x <= 4; ++x)
        for (int y = 2; y <= 4; ++y)
            for (int z = 2; z <= 4; ++z) {
                const Eigen::Index v = (Eigen::Index(x) * g + y) * g + z;
                CHECK((field.coeffs.row(v) - field.coeffs.row(center)).norm() < 1e-9);
            }
}

TEST_CASE("per-voxel gradient rotation steers the bands through normalization") {
    // rotating every gradient vector in place leaves energies unchanged, so
    // each band must transform exactly by the band rotation operator
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int g = 5;
    std::vector<Eigen::Vector3d> grads(g * g * g);
    for (auto& d : grads) d = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    const Eigen::Matrix3d rot = testutil::random_rotation(rng);
    std::vector<Eigen::Vector3d> grads_rot(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) grads_rot[i] = rot * grads[i];

    const int L = 2;
    auto f0 = pcgm::compute_sh_hog(patch_with_gradients(g, grads), L, 0.25);
    auto f1 = pcgm::compute_sh_hog(patch_with_gradients(g, grads_rot), L, 0.25);
    for (int l = 0; l <= L; ++l) {
        const Eigen::MatrixXd d = pcgm::sh::band_rotation(rot, l);
        for (Eigen::Index v = 0; v < f0.coeffs.rows(); ++v) {
            const Eigen::VectorXd expect =
                d * f0.coeffs.block(v, l * l, 1, 2 * l + 1).transpose();
            const Eigen::VectorXd got = f1.coeffs.block(v, l * l, 1, 2 * l + 1).transpose();
            CHECK((got - expect).norm() < 1e-6);
        }
    }
}

TEST_CASE("all-zero field is flagged zero energy") {
    const int g = 5;
    auto patch = patch_with_gradients(
        g, std::vector<Eigen::Vector3d>(g * g * g, Eigen::Vector3d::Zero()));
    auto field = pcgm::compute_sh_hog(patch, 2, 0.25);
    auto inv = pcgm::compute_invariants(field, 2);
    CHECK(inv.zero_energy);
    CHECK(inv.feature.norm() == 0.0);
}

TEST_CASE("features are invariant to patch rotation within voxel tolerance") {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto cloud = testutil::surface_patch(seed, 6000, 1.0);
        auto base_patch = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 11);
        auto base = pcgm::compute_invariants(pcgm::compute_sh_hog(base_patch, 3, 0.25), 2);
        REQUIRE_FALSE(base.zero_energy);

        std::mt19937_64 rng(seed * 100 + 7);
        for (int trial = 0; trial < 5; ++trial) {
            const Eigen::Matrix3d rot = testutil::random_rotation(rng);
            auto patch = pcgm::extract_patch(rotated(cloud, rot), {0, 0, 0}, 1.0, 11);
            auto inv = pcgm::compute_invariants(pcgm::compute_sh_hog(patch, 3, 0.25), 2);
            CHECK((inv.feature - base.feature).norm() / base.feature.norm() <= 0.05);
        }
    }
}

TEST_CASE("features are exactly invariant to density scale") {
    auto cloud = testutil::surface_patch(4, 4000, 1.0);
    auto patch = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 9);
    auto f0 = pcgm::compute_invariants(pcgm::compute_sh_hog(patch, 3, 0.25), 2);

    pcgm::VoxelPatch doubled = patch;
    for (auto& d : doubled.density) d *= 2.0;
    for (auto& d : doubled.gradients) d *= 2.0;
    auto f1 = pcgm::compute_invariants(pcgm::compute_sh_hog(doubled, 3, 0.25), 2);
    CHECK((f0.feature - f1.feature).norm() < 1e-9);
}

TEST_CASE("repeated computation is bit-identical") {
    auto cloud = testutil::surface_patch(6, 3000, 1.0);
    auto p0 = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 9);
    auto p1 = pcgm::extract_patch(cloud, {0, 0, 0}, 1.0, 9);
    auto f0 = pcgm::compute_invariants(pcgm::compute_sh_hog(p0, 3, 0.25), 2);
    auto f1 = pcgm::compute_invariants(pcgm::compute_sh_hog(p1, 3, 0.25), 2);
    CHECK(f0.feature == f1.feature);
}

TEST_CASE("describe_keypoints flags bad keypoints and keeps order") {
    auto cloud = testutil::surface_patch(9, 3000, 1.0);
    pcgm::KeypointSet kps;
    kps.indices = {0, 1, 2};
    kps.positions = {cloud.points[0], Eigen::Vector3d(50, 50, 50), cloud.points[1]};
    kps.saliency = {1.0, 1.0, 1.0};

    pcgm::DescriptorConfig cfg;
    cfg.radius = 0.5;
    cfg.grid_size = 7;
    auto set = pcgm::describe_keypoints(cloud, kps, cfg);
    REQUIRE(set.features.size() == 3);
    CHECK(set.valid[0]);
    CHECK_FALSE(set.valid[1]);  // empty patch
    CHECK(set.valid[2]);
    CHECK(set.features[1].norm() == 0.0);
    CHECK(set.dim == (cfg.max_degree + 1) * cfg.n_orders);
}

TEST_CASE("identical local geometry gives identical features") {
    auto cloud = testutil::surface_patch(10, 3000, 1.0);
    // duplicate the whole patch far away
    pcgm::PointCloud doubled = cloud;
    for (const auto& p : cloud.points) doubled.points.push_back(p + Eigen::Vector3d(100, 0, 0));

    pcgm::KeypointSet kps;
    kps.indices = {0, 1};
    kps.positions = {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(100, 0, 0)};
    kps.saliency = {1.0, 1.0};
    pcgm::DescriptorConfig cfg;
    cfg.radius = 0.8;
    cfg.grid_size = 9;
    auto set = pcgm::describe_keypoints(doubled, kps, cfg);
    CHECK((set.features[0] - set.features[1]).norm() < 1e-9);
}

TEST_CASE("corresponding keypoints match by nearest descriptor across a rigid copy") {
    auto scene = pcgm::generate_scene(pcgm::SceneKind::CubeRoom, 4000,
                                      pcgm::SimilarityTransform{}, 1.0, 21);
    std::mt19937_64 rng(22);
    pcgm::SimilarityTransform motion;
    motion.R = testutil::random_rotation(rng);
    motion.t = Eigen::Vector3d(5, -3, 2);
    pcgm::PointCloud moved = scene.source;
    moved.points = motion.apply(moved.points);

    const double spacing = pcgm::mean_point_spacing(scene.source);
    pcgm::IssParams iss;
    iss.salient_radius = 6.0 * spacing;
    iss.nms_radius = 4.0 * spacing;
    auto k1 = pcgm::detect_iss(scene.source, iss);
    auto k2 = pcgm::detect_iss(moved, iss);
    REQUIRE(k1.size() == k2.size());
    REQUIRE(k1.size() >= 5);

    pcgm::DescriptorConfig cfg;
    cfg.radius = 2.0 * iss.salient_radius;
    auto d1 = pcgm::describe_keypoints(scene.source, k1, cfg);
    auto d2 = pcgm::describe_keypoints(moved, k2, cfg);

    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < k1.size(); ++i) {
        if (!d1.valid[i]) continue;
        ++total;
        std::size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k2.size(); ++j) {
            const double dist = (d1.features[i] - d2.features[j]).norm();
            if (dist < best_dist) {
                best_dist = dist;
                best = j;
            }
        }
        // detection is equivariant, so index i corresponds to index i
        if (best == i) ++correct;
    }
    REQUIRE(total > 0);
    CHECK(double(correct) / double(total) >= 0.9);
}
