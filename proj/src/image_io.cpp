#include "mvc/io.hpp"

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mvc/errors.hpp"

namespace mvc {

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    if (f.bad()) throw IoError("read failure on " + path);
    return ss.str();
}

double parse_double(const std::string& tok, const std::string& path) {
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw IoError("malformed number '" + tok + "' in " + path);
    }
    if (used != tok.size()) throw IoError("malformed number '" + tok + "' in " + path);
    return v;
}

std::vector<double> parse_doubles_line(const std::string& line, const std::string& path) {
    std::istringstream ss(line);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) out.push_back(parse_double(tok, path));
    return out;
}

} // namespace

std::string format_double(double v) {
    // Shortest representation that round-trips exactly: try increasing
    // precision until parsing recovers the same bits.
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_ppm(const std::string& path, const Image& img) {
    if (img.h <= 0 || img.w <= 0) throw DomainError("write_ppm: empty image");
    std::string out = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(img.h * img.w * 3));
    for (double v : img.rgb) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<int>(std::lround(c * 255.0))));
    }
    write_file(path, out);
}

Image read_ppm(const std::string& path) {
    const std::string bytes = read_file(path);
    std::istringstream ss(bytes);
    std::string magic;
    long w = 0, h = 0, maxval = 0;
    ss >> magic >> w >> h >> maxval;
    if (!ss || magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw IoError("not a P6/255 image: " + path);
    ss.get(); // single whitespace byte before the raster
    const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
    const size_t offset = static_cast<size_t>(ss.tellg());
    if (bytes.size() < offset + need) throw IoError("truncated image data in " + path);
    Image img;
    img.h = h;
    img.w = w;
    img.rgb.resize(need);
    for (size_t i = 0; i < need; ++i)
        img.rgb[i] = static_cast<double>(static_cast<unsigned char>(bytes[offset + i])) / 255.0;
    return img;
}

void write_depth(const std::string& path, const DepthMap& depth) {
    if (depth.h <= 0 || depth.w <= 0) throw DomainError("write_depth: empty depth map");
    std::string out = "MKDP";
    put_u32(out, static_cast<uint32_t>(depth.w));
    put_u32(out, static_cast<uint32_t>(depth.h));
    put_u32(out, 0);
    for (double v : depth.d) put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
    write_file(path, out);
}

DepthMap read_depth(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || bytes.compare(0, 4, "MKDP") != 0)
        throw IoError("not a depth container: " + path);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const uint32_t w = get_u32(p + 4);
    const uint32_t h = get_u32(p + 8);
    const size_t need = 16 + static_cast<size_t>(w) * static_cast<size_t>(h) * 4;
    if (w == 0 || h == 0 || bytes.size() != need)
        throw IoError("depth container size mismatch in " + path);
    DepthMap d;
    d.w = w;
    d.h = h;
    d.d.resize(static_cast<size_t>(w) * h);
    for (size_t i = 0; i < d.d.size(); ++i)
        d.d[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 16 + i * 4)));
    return d;
}

void write_cameras(const std::string& path, const std::vector<Camera>& cams) {
    std::string out;
    for (const Camera& c : cams) {
        std::string line;
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc) {
                if (!line.empty()) line += ' ';
                line += format_double(c.K(r, cc));
            }
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 4; ++cc) {
                line += ' ';
                line += format_double(c.cam_to_world(r, cc));
            }
        out += line;
        out += '\n';
    }
    write_file(path, out);
}

std::vector<Camera> read_cameras(const std::string& path) {
    std::istringstream ss(read_file(path));
    std::vector<Camera> cams;
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const std::vector<double> v = parse_doubles_line(line, path);
        if (v.size() != 21)
            throw IoError("expected 21 numbers per camera line in " + path + ", got " +
                          std::to_string(v.size()));
        Camera c;
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc) c.K(r, cc) = v[static_cast<size_t>(r * 3 + cc)];
        c.cam_to_world = Eigen::Matrix4d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 4; ++cc)
                c.cam_to_world(r, cc) = v[static_cast<size_t>(9 + r * 4 + cc)];
        cams.push_back(c);
    }
    return cams;
}

void write_tracks(const std::string& path,
                  const std::vector<std::vector<TrackPoint>>& tracks) {
    std::string out;
    for (size_t s = 0; s < tracks.size(); ++s)
        for (size_t v = 0; v < tracks[s].size(); ++v) {
            const TrackPoint& tp = tracks[s][v];
            out += std::to_string(s) + " " + std::to_string(v) + " " + format_double(tp.u) +
                   " " + format_double(tp.v) + " " + (tp.visible ? "1" : "0") + "\n";
        }
    write_file(path, out);
}

std::vector<std::vector<TrackPoint>> read_tracks(const std::string& path) {
    std::istringstream ss(read_file(path));
    std::vector<std::vector<TrackPoint>> tracks;
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const std::vector<double> v = parse_doubles_line(line, path);
        if (v.size() != 5) throw IoError("expected 5 columns per track row in " + path);
        const size_t seed = static_cast<size_t>(v[0]);
        const size_t view = static_cast<size_t>(v[1]);
        if (tracks.size() <= seed) tracks.resize(seed + 1);
        if (tracks[seed].size() <= view) tracks[seed].resize(view + 1);
        tracks[seed][view] = {v[2], v[3], v[4] != 0.0};
    }
    return tracks;
}

void write_pointcloud(const std::string& path, const std::vector<Eigen::Vector3d>& points,
                      const std::vector<uint8_t>* valid) {
    if (valid && valid->size() != points.size())
        throw DimensionError("write_pointcloud: validity size mismatch");
    std::string out;
    for (size_t i = 0; i < points.size(); ++i) {
        out += format_double(points[i].x()) + " " + format_double(points[i].y()) + " " +
               format_double(points[i].z());
        if (valid) {
            out += ' ';
            out += (*valid)[i] ? '1' : '0';
        }
        out += '\n';
    }
    write_file(path, out);
}

void read_pointcloud(const std::string& path, std::vector<Eigen::Vector3d>& points,
                     std::vector<uint8_t>& valid) {
    std::istringstream ss(read_file(path));
    points.clear();
    valid.clear();
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const std::vector<double> v = parse_doubles_line(line, path);
        if (v.size() != 3 && v.size() != 4)
            throw IoError("expected 'x y z [valid]' rows in " + path);
        points.emplace_back(v[0], v[1], v[2]);
        valid.push_back(v.size() == 4 ? (v[3] != 0.0 ? 1 : 0) : 1);
    }
}

void write_poses(const std::string& path, const std::vector<Eigen::Matrix4d>& poses) {
    std::string out;
    for (const Eigen::Matrix4d& p : poses) {
        std::string line;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) {
                if (!line.empty()) line += ' ';
                line += format_double(p(r, c));
            }
        out += line;
        out += '\n';
    }
    write_file(path, out);
}

std::vector<Eigen::Matrix4d> read_poses(const std::string& path) {
    std::istringstream ss(read_file(path));
    std::vector<Eigen::Matrix4d> poses;
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const std::vector<double> v = parse_doubles_line(line, path);
        if (v.size() != 12) throw IoError("expected 12 numbers per pose line in " + path);
        Eigen::Matrix4d p = Eigen::Matrix4d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) p(r, c) = v[static_cast<size_t>(r * 4 + c)];
        poses.push_back(p);
    }
    return poses;
}

namespace {

std::string view_stem(const std::string& dir, size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "view_%03zu", i);
    return dir + "/" + buf;
}

} // namespace

void export_scene_dir(const std::string& dir, const std::vector<Image>& images,
                      const std::vector<DepthMap>& depths, const std::vector<Camera>& cams,
                      const std::vector<std::vector<TrackPoint>>& tracks) {
    if (images.size() != depths.size() || images.size() != cams.size())
        throw DimensionError("export_scene_dir: view count mismatch between images, depths "
                             "and cameras");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
    for (size_t i = 0; i < images.size(); ++i) {
        write_ppm(view_stem(dir, i) + ".ppm", images[i]);
        write_depth(view_stem(dir, i) + ".depth", depths[i]);
    }
    write_cameras(dir + "/cameras.txt", cams);
    if (!tracks.empty()) write_tracks(dir + "/tracks.txt", tracks);
}

SceneFiles load_scene_dir(const std::string& dir) {
    SceneFiles sf;
    sf.cams = read_cameras(dir + "/cameras.txt");
    if (sf.cams.empty()) throw IoError("no cameras listed in " + dir + "/cameras.txt");
    for (size_t i = 0; i < sf.cams.size(); ++i) {
        sf.images.push_back(read_ppm(view_stem(dir, i) + ".ppm"));
        sf.depths.push_back(read_depth(view_stem(dir, i) + ".depth"));
    }
    if (std::filesystem::exists(dir + "/tracks.txt"))
        sf.tracks = read_tracks(dir + "/tracks.txt");
    return sf;
}

} // namespace mvc
