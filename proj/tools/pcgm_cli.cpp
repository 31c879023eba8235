// Command-line front end: registration, per-stage debugging, synthetic
// scene generation, and noise-sensitivity sweeps.

#include <CLI11.hpp>

#include <cxxabi.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pcgm/pcgm.hpp"

namespace {

std::string demangled(const std::type_info& info) {
    int status = 0;
    std::unique_ptr<char, void (*)(void*)> name(
        abi::__cxa_demangle(info.name(), nullptr, nullptr, &status), std::free);
    std::string out = status == 0 && name ? name.get() : info.name();
    if (auto pos = out.rfind("::"); pos != std::string::npos) out = out.substr(pos + 2);
    return out;
}

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

pcgm::PipelineConfig config_or_default(const std::string& path) {
    return path.empty() ? pcgm::PipelineConfig{} : pcgm::load_config(path);
}

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
    if (path.empty()) return std::cout;
    file.open(path);
    if (!file) throw std::runtime_error("cannot open " + path + " for writing");
    return file;
}

void run_register(const std::string& src_path, const std::string& tgt_path,
                  const std::string& config_path, const std::string& out_path,
                  const std::string& gt_path) {
    const auto cfg = config_or_default(config_path);
    const auto source = pcgm::load_cloud(src_path);
    const auto target = pcgm::load_cloud(tgt_path);
    const auto result = pcgm::register_clouds(source, target, cfg);

    if (!out_path.empty()) {
        pcgm::save_transform(result.transform, out_path);
    } else {
        const Eigen::Matrix4d m = result.transform.matrix();
        std::cout.precision(16);
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) std::cout << m(r, c) << (c == 3 ? "" : " ");
            std::cout << "\n";
        }
    }
    std::printf("iterations=%zu converged=%s matches=%zu\n", result.iterations,
                result.converged ? "true" : "false", result.correspondence.matched_pairs().size());
    if (!gt_path.empty()) {
        const auto gt = pcgm::load_transform(gt_path);
        const auto err = pcgm::registration_errors(result.transform, gt);
        std::printf("rot_err=%.9f trans_err=%.9f\n", err.rotation_error_deg,
                    err.translation_error);
    }
}

void run_detect(const std::string& cloud_path, const std::string& config_path,
                const std::string& out_path) {
    const auto cfg = config_or_default(config_path);
    auto cloud = pcgm::load_cloud(cloud_path);
    if (cfg.downsample_leaf > 0) cloud = pcgm::voxel_downsample(cloud, cfg.downsample_leaf);
    const auto keypoints = pcgm::detect_iss(cloud, cfg.iss);
    std::ofstream file;
    auto& out = open_or_stdout(file, out_path);
    out.precision(16);
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        const auto& p = keypoints.positions[i];
        out << keypoints.indices[i] << " " << p.x() << " " << p.y() << " " << p.z() << " "
            << keypoints.saliency[i] << "\n";
    }
}

void run_describe(const std::string& cloud_path, const std::string& config_path,
                  const std::string& out_path) {
    const auto cfg = config_or_default(config_path);
    auto cloud = pcgm::load_cloud(cloud_path);
    if (cfg.downsample_leaf > 0) cloud = pcgm::voxel_downsample(cloud, cfg.downsample_leaf);
    const auto keypoints = pcgm::detect_iss(cloud, cfg.iss);
    if (keypoints.size() == 0) throw pcgm::TooFewKeypoints("no keypoints detected");
    auto dcfg = cfg.descriptor;
    if (dcfg.radius <= 0) {
        double salient = cfg.iss.salient_radius;
        if (salient <= 0) salient = 6.0 * pcgm::mean_point_spacing(cloud);
        dcfg.radius = 2.0 * salient;
    }
    const auto descriptors = pcgm::describe_keypoints(cloud, keypoints, dcfg);
    std::ofstream file;
    auto& out = open_or_stdout(file, out_path);
    out.precision(16);
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        out << keypoints.indices[i];
        for (Eigen::Index d = 0; d < descriptors.features[i].size(); ++d)
            out << " " << descriptors.features[i](d);
        out << "\n";
    }
}

void run_match(const std::string& src_path, const std::string& tgt_path,
               const std::string& config_path, const std::string& out_path,
               const std::string& trace_path) {
    const auto cfg = config_or_default(config_path);
    const auto source = pcgm::load_cloud(src_path);
    const auto target = pcgm::load_cloud(tgt_path);
    const auto f1 = pcgm::detail::detect_and_describe(source, cfg);
    const auto f2 = pcgm::detail::detect_and_describe(target, cfg);
    const auto d = pcgm::node_dissimilarity(f1.graph, f2.graph);
    auto gm = cfg.gm;
    if (gm.unmatched_cost < 0) gm.unmatched_cost = pcgm::default_unmatched_cost(d);

    std::vector<pcgm::FwIteration> trace;
    const auto relaxed = pcgm::frank_wolfe(
        f1.graph, f2.graph, d, gm,
        pcgm::CorrespondenceMatrix::uniform(f1.graph.size(), f2.graph.size()),
        trace_path.empty() ? nullptr : &trace);
    const auto discrete = pcgm::discretize(relaxed, cfg.discretize_min_value);

    std::ofstream file;
    auto& out = open_or_stdout(file, out_path);
    for (const auto& [i, j] : discrete.matched_pairs()) out << i << " " << j << "\n";

    if (!trace_path.empty()) {
        std::ofstream tf(trace_path);
        tf.precision(16);
        for (const auto& it : trace) tf << it.iter << " " << it.objective << " " << it.step << "\n";
    }
}

void run_synth(const std::string& kind_name, std::size_t n_points, double overlap,
               std::uint64_t seed, double max_angle, double max_translation, bool rigid,
               const std::string& out_prefix) {
    const auto kind = pcgm::scene_kind_from_string(kind_name);
    pcgm::RandomMotionSpec motion;
    motion.max_angle_deg = max_angle;
    motion.max_translation = max_translation;
    if (!rigid) {
        motion.min_scale = 0.5;
        motion.max_scale = 2.0;
    }
    const auto scene = pcgm::generate_scene(kind, n_points, motion, overlap, seed);
    pcgm::save_cloud(scene.source, out_prefix + "_source.ply", pcgm::CloudFormat::PlyAscii);
    pcgm::save_cloud(scene.target, out_prefix + "_target.ply", pcgm::CloudFormat::PlyAscii);
    pcgm::save_transform(scene.ground_truth, out_prefix + "_gt.txt");
    std::printf("wrote %s_{source,target}.ply and %s_gt.txt (%zu/%zu points)\n",
                out_prefix.c_str(), out_prefix.c_str(), scene.source.size(),
                scene.target.size());
}

void run_sweep(const std::string& kind_name, std::size_t n_points, std::uint64_t seed,
               const std::string& ratios_csv, const std::string& levels_csv,
               const std::string& config_path, const std::string& out_path) {
    const auto kind = pcgm::scene_kind_from_string(kind_name);
    const auto cfg = config_or_default(config_path);
    pcgm::RandomMotionSpec motion;
    motion.max_angle_deg = 60.0;
    motion.max_translation = 5.0;
    const auto scene = pcgm::generate_scene(kind, n_points, motion, 1.0, seed);
    const auto rows = pcgm::sensitivity_sweep(scene, parse_list(ratios_csv),
                                              parse_list(levels_csv), cfg);
    std::ofstream file;
    auto& out = open_or_stdout(file, out_path);
    pcgm::write_sweep_csv(rows, out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point cloud registration via graph matching"};
    app.require_subcommand(1);

    std::string src, tgt, cloud, config, out, gt, trace, kind = "cube-room";
    std::string ratios = "0.1,0.2,0.3", levels = "0.1,0.2,0.3", out_prefix = "scene";
    std::size_t n_points = 2000;
    std::uint64_t seed = 0;
    double overlap = 1.0, max_angle = 180.0, max_translation = 5.0;
    bool rigid = true;

    auto* reg = app.add_subcommand("register", "register two point clouds");
    reg->add_option("source", src)->required();
    reg->add_option("target", tgt)->required();
    reg->add_option("--config", config);
    reg->add_option("--out", out);
    reg->add_option("--gt", gt);

    auto* det = app.add_subcommand("detect", "detect ISS keypoints");
    det->add_option("cloud", cloud)->required();
    det->add_option("--config", config);
    det->add_option("--out", out);

    auto* desc = app.add_subcommand("describe", "compute keypoint descriptors");
    desc->add_option("cloud", cloud)->required();
    desc->add_option("--config", config);
    desc->add_option("--out", out);

    auto* match = app.add_subcommand("match", "graph-match keypoints of two clouds");
    match->add_option("source", src)->required();
    match->add_option("target", tgt)->required();
    match->add_option("--config", config);
    match->add_option("--out", out);
    match->add_option("--trace", trace);

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene with ground truth");
    synth->add_option("--kind", kind);
    synth->add_option("--n-points", n_points);
    synth->add_option("--overlap", overlap);
    synth->add_option("--seed", seed);
    synth->add_option("--max-angle", max_angle);
    synth->add_option("--max-translation", max_translation);
    synth->add_option("--rigid", rigid);
    synth->add_option("--out-prefix", out_prefix);

    auto* sweep = app.add_subcommand("sweep", "noise sensitivity sweep to CSV");
    sweep->add_option("--kind", kind);
    sweep->add_option("--n-points", n_points);
    sweep->add_option("--seed", seed);
    sweep->add_option("--ratios", ratios);
    sweep->add_option("--levels", levels);
    sweep->add_option("--config", config);
    sweep->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (reg->parsed()) run_register(src, tgt, config, out, gt);
        else if (det->parsed()) run_detect(cloud, config, out);
        else if (desc->parsed()) run_describe(cloud, config, out);
        else if (match->parsed()) run_match(src, tgt, config, out, trace);
        else if (synth->parsed()) run_synth(kind, n_points, overlap, seed, max_angle,
                                            max_translation, rigid, out_prefix);
        else if (sweep->parsed()) run_sweep(kind, n_points, seed, ratios, levels, config, out);
    } catch (const std::exception& e) {
        std::cerr << demangled(typeid(e)) << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}
