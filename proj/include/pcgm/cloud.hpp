#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcgm {

struct MalformedFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyCloud : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteCoordinate : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Point cloud in a metric frame. Normals, when present, are unit length
/// and parallel-indexed with points.
struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3d> normals;  // empty or same size as points
    std::string frame_id;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }

    Eigen::Vector3d centroid() const {
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto& p : points) c += p;
        return points.empty() ? c : Eigen::Vector3d(c / double(points.size()));
    }

    /// Largest axis-aligned bounding-box edge; 0 for empty clouds.
    double extent() const {
        if (points.empty()) return 0.0;
        Eigen::Vector3d lo = points.front(), hi = points.front();
        for (const auto& p : points) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        return (hi - lo).maxCoeff();
    }
};

enum class CloudFormat { PlyAscii, Xyz };

namespace detail {

inline void check_finite(const Eigen::Vector3d& v, std::size_t line_no) {
    if (!v.allFinite())
        throw NonFiniteCoordinate("non-finite coordinate at record " + std::to_string(line_no));
}

inline std::vector<double> split_fields(const std::string& line) {
    std::istringstream iss(line);
    std::vector<double> out;
    std::string tok;
    // strtod instead of stream extraction so "nan"/"inf" become values that
    // the finiteness check can reject with a precise error
    while (iss >> tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size()) break;
        out.push_back(v);
    }
    return out;
}

inline PointCloud load_xyz(std::istream& in) {
    PointCloud cloud;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // strip comments and blank lines
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        auto fields = split_fields(line);
        if (fields.size() != 3 && fields.size() != 6)
            throw MalformedFile("xyz line " + std::to_string(line_no) +
                                ": expected 3 or 6 fields, got " + std::to_string(fields.size()));
        Eigen::Vector3d p(fields[0], fields[1], fields[2]);
        check_finite(p, line_no);
        cloud.points.push_back(p);
        if (fields.size() == 6) {
            Eigen::Vector3d n(fields[3], fields[4], fields[5]);
            check_finite(n, line_no);
            cloud.normals.push_back(n);
        }
    }
    if (!cloud.normals.empty() && cloud.normals.size() != cloud.points.size())
        throw MalformedFile("mixed 3- and 6-field records");
    if (cloud.points.empty()) throw EmptyCloud("no points in file");
    return cloud;
}

inline PointCloud load_ply_ascii(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply")
        throw MalformedFile("missing ply magic");
    if (!std::getline(in, line) || line.find("format ascii 1.0") == std::string::npos)
        throw MalformedFile("only format ascii 1.0 is supported");

    std::size_t n_vertices = 0;
    std::vector<std::string> props;
    bool in_vertex_element = false;
    while (std::getline(in, line)) {
        std::istringstream iss(line);
        std::string tok;
        iss >> tok;
        if (tok == "comment") continue;
        if (tok == "element") {
            std::string name;
            iss >> name;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element && !(iss >> n_vertices))
                throw MalformedFile("element vertex without a count");
        } else if (tok == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            iss >> type >> name;
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        } else if (!tok.empty()) {
            throw MalformedFile("unexpected header token: " + tok);
        }
    }

    auto index_of = [&](const std::string& name) -> int {
        auto it = std::find(props.begin(), props.end(), name);
        return it == props.end() ? -1 : int(it - props.begin());
    };
    const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
    const int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
    if (ix < 0 || iy < 0 || iz < 0) throw MalformedFile("vertex element lacks x/y/z properties");
    const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

    PointCloud cloud;
    cloud.points.reserve(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        if (!std::getline(in, line))
            throw MalformedFile("header declares " + std::to_string(n_vertices) +
                                " vertices, body has " + std::to_string(i));
        auto fields = split_fields(line);
        if (fields.size() != props.size())
            throw MalformedFile("vertex record " + std::to_string(i) + " has " +
                                std::to_string(fields.size()) + " fields, header declares " +
                                std::to_string(props.size()));
        Eigen::Vector3d p(fields[ix], fields[iy], fields[iz]);
        check_finite(p, i);
        cloud.points.push_back(p);
        if (with_normals) {
            Eigen::Vector3d n(fields[inx], fields[iny], fields[inz]);
            check_finite(n, i);
            cloud.normals.push_back(n);
        }
    }
    if (cloud.points.empty()) throw EmptyCloud("no points in file");
    return cloud;
}

}  // namespace detail

inline PointCloud load_cloud(const std::string& path, CloudFormat format) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open " + path);
    PointCloud cloud =
        format == CloudFormat::Xyz ? detail::load_xyz(in) : detail::load_ply_ascii(in);
    cloud.frame_id = path;
    return cloud;
}

/// Infer format from the file extension (.ply vs anything else -> xyz).
inline PointCloud load_cloud(const std::string& path) {
    const bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
    return load_cloud(path, ply ? CloudFormat::PlyAscii : CloudFormat::Xyz);
}

inline void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(17);
    const bool with_normals = cloud.has_normals();
    if (format == CloudFormat::PlyAscii) {
        out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
            << "property double x\nproperty double y\nproperty double z\n";
        if (with_normals)
            out << "property double nx\nproperty double ny\nproperty double nz\n";
        out << "end_header\n";
    }
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        out << p.x() << " " << p.y() << " " << p.z();
        if (with_normals) {
            const auto& n = cloud.normals[i];
            out << " " << n.x() << " " << n.y() << " " << n.z();
        }
        out << "\n";
    }
}

/// One point per occupied voxel, at the member centroid. Boundary points go
/// to the lower voxel (floor rule).
inline PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
    if (leaf <= 0.0) throw std::invalid_argument("leaf size must be positive");
    struct Acc {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        std::size_t count = 0;
    };
    std::map<std::array<std::int64_t, 3>, Acc> cells;
    for (const auto& p : cloud.points) {
        std::array<std::int64_t, 3> key = {std::int64_t(std::floor(p.x() / leaf)),
                                           std::int64_t(std::floor(p.y() / leaf)),
                                           std::int64_t(std::floor(p.z() / leaf))};
        auto& acc = cells[key];
        acc.sum += p;
        acc.count += 1;
    }
    PointCloud out;
    out.frame_id = cloud.frame_id;
    out.points.reserve(cells.size());
    for (const auto& [key, acc] : cells) out.points.push_back(acc.sum / double(acc.count));
    return out;
}

/// Mean nearest-neighbor distance, estimated on a subsample for large clouds.
inline double mean_point_spacing(const PointCloud& cloud, std::size_t max_samples = 500) {
    const std::size_t n = cloud.size();
    if (n < 2) return 0.0;
    const std::size_t stride = std::max<std::size_t>(1, n / max_samples);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; i += stride) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            best = std::min(best, (cloud.points[i] - cloud.points[j]).squaredNorm());
        }
        total += std::sqrt(best);
        ++count;
    }
    return total / double(count);
}

}  // namespace pcgm
