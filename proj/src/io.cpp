#include "lapfusion/io.hpp"

#include "lapfusion/error.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace lapfusion {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

std::string format_double(double x)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in)
{
    std::ifstream in(path, mode);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out)
{
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

int parse_obj_index(const std::string& token, int vertex_count, const std::filesystem::path& path, int line)
{
    const std::string head = token.substr(0, token.find('/'));
    int idx = 0;
    const auto res = std::from_chars(head.data(), head.data() + head.size(), idx);
    if (res.ec != std::errc() || res.ptr != head.data() + head.size() || idx == 0) {
        throw IoError(path.string() + ":" + std::to_string(line) + ": bad face index '" + token + "'");
    }
    return idx > 0 ? idx - 1 : vertex_count + idx;
}

} // namespace

TriangleMesh read_obj(const std::filesystem::path& path)
{
    std::ifstream in = open_in(path);
    Points verts;
    std::vector<Face> faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') {
            continue;
        }
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z())) {
                throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed vertex");
            }
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ls >> tok) {
                poly.push_back(parse_obj_index(tok, static_cast<int>(verts.size()), path, line_no));
            }
            if (poly.size() < 3) {
                throw IoError(path.string() + ":" + std::to_string(line_no) + ": face with fewer than 3 corners");
            }
            for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
                faces.push_back({poly[0], poly[i], poly[i + 1]});
            }
        }
    }
    return TriangleMesh::build(std::move(verts), std::move(faces));
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh)
{
    std::ofstream out = open_out(path);
    std::string buf;
    for (const Vec3& v : mesh.vertices()) {
        buf = "v " + format_double(v.x()) + ' ' + format_double(v.y()) + ' ' + format_double(v.z()) + '\n';
        out << buf;
    }
    for (const Face& f : mesh.faces()) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
    if (!out) {
        throw IoError("failed while writing " + path.string());
    }
}

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_ply_type(const std::string& name, const std::filesystem::path& path)
{
    if (name == "char" || name == "int8") return PlyType::Int8;
    if (name == "uchar" || name == "uint8") return PlyType::UInt8;
    if (name == "short" || name == "int16") return PlyType::Int16;
    if (name == "ushort" || name == "uint16") return PlyType::UInt16;
    if (name == "int" || name == "int32") return PlyType::Int32;
    if (name == "uint" || name == "uint32") return PlyType::UInt32;
    if (name == "float" || name == "float32") return PlyType::Float32;
    if (name == "double" || name == "float64") return PlyType::Float64;
    throw IoError(path.string() + ": unknown PLY property type '" + name + "'");
}

std::size_t ply_size(PlyType t)
{
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
    }
    return 0;
}

template <typename T>
T load(const char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double decode(PlyType t, const char* p)
{
    switch (t) {
    case PlyType::Int8: return load<std::int8_t>(p);
    case PlyType::UInt8: return load<std::uint8_t>(p);
    case PlyType::Int16: return load<std::int16_t>(p);
    case PlyType::UInt16: return load<std::uint16_t>(p);
    case PlyType::Int32: return load<std::int32_t>(p);
    case PlyType::UInt32: return load<std::uint32_t>(p);
    case PlyType::Float32: return load<float>(p);
    case PlyType::Float64: return load<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::Float32;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

} // namespace

PointCloudFrame read_ply(const std::filesystem::path& path)
{
    std::ifstream in = open_in(path, std::ios::in | std::ios::binary);
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
        throw IoError(path.string() + ": not a PLY file");
    }
    bool ascii = false;
    std::optional<Vec3> viewpoint;
    std::vector<PlyElement> elements;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") {
                ascii = true;
            } else if (fmt != "binary_little_endian") {
                throw IoError(path.string() + ": unsupported PLY format '" + fmt + "'");
            }
        } else if (tag == "comment") {
            std::string key;
            Vec3 v;
            if (ls >> key && key == "viewpoint") {
                if (!(ls >> v.x() >> v.y() >> v.z())) {
                    throw IoError(path.string() + ": malformed viewpoint comment");
                }
                viewpoint = v;
            }
        } else if (tag == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            elements.push_back(e);
        } else if (tag == "property") {
            if (elements.empty()) {
                throw IoError(path.string() + ": property before any element");
            }
            PlyProperty p;
            std::string type;
            ls >> type;
            if (type == "list") {
                std::string count_type, item_type;
                ls >> count_type >> item_type >> p.name;
                p.is_list = true;
                p.count_type = parse_ply_type(count_type, path);
                p.type = parse_ply_type(item_type, path);
            } else {
                p.type = parse_ply_type(type, path);
                ls >> p.name;
            }
            elements.back().props.push_back(p);
        } else if (tag == "end_header") {
            break;
        }
    }
    if (!in) {
        throw IoError(path.string() + ": truncated PLY header");
    }

    PointCloudFrame frame;
    frame.viewpoint = viewpoint;
    for (const PlyElement& e : elements) {
        const bool is_vertex = e.name == "vertex";
        int ix = -1, iy = -1, iz = -1, idepth = -1;
        for (std::size_t i = 0; i < e.props.size(); ++i) {
            const std::string& n = e.props[i].name;
            if (e.props[i].is_list) continue;
            if (n == "x") ix = static_cast<int>(i);
            if (n == "y") iy = static_cast<int>(i);
            if (n == "z") iz = static_cast<int>(i);
            if (n == "depth") idepth = static_cast<int>(i);
        }
        if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) {
            throw IoError(path.string() + ": vertex element lacks x, y or z");
        }
        if (is_vertex) {
            frame.points.resize(e.count);
            if (idepth >= 0) {
                frame.depth.resize(e.count);
            }
        }
        std::vector<double> values(e.props.size());
        for (std::size_t r = 0; r < e.count; ++r) {
            for (std::size_t i = 0; i < e.props.size(); ++i) {
                const PlyProperty& p = e.props[i];
                if (ascii) {
                    double v = 0.0;
                    if (!(in >> v)) {
                        throw IoError(path.string() + ": truncated PLY body in element " + e.name);
                    }
                    if (p.is_list) {
                        for (std::size_t k = 0; k < static_cast<std::size_t>(v); ++k) {
                            double skip;
                            in >> skip;
                        }
                        v = 0.0;
                    }
                    values[i] = v;
                } else {
                    char buf[8];
                    if (p.is_list) {
                        if (!in.read(buf, static_cast<std::streamsize>(ply_size(p.count_type)))) {
                            throw IoError(path.string() + ": truncated PLY body in element " + e.name);
                        }
                        const auto n = static_cast<std::streamoff>(decode(p.count_type, buf));
                        in.seekg(n * static_cast<std::streamoff>(ply_size(p.type)), std::ios::cur);
                        values[i] = 0.0;
                    } else {
                        if (!in.read(buf, static_cast<std::streamsize>(ply_size(p.type)))) {
                            throw IoError(path.string() + ": truncated PLY body in element " + e.name);
                        }
                        values[i] = decode(p.type, buf);
                    }
                }
            }
            if (is_vertex) {
                frame.points[r] = Vec3(values[ix], values[iy], values[iz]);
                if (idepth >= 0) {
                    frame.depth[r] = values[idepth];
                }
            }
        }
        if (!in) {
            throw IoError(path.string() + ": truncated PLY body in element " + e.name);
        }
    }
    return frame;
}

namespace {

void write_ply_table(const std::filesystem::path& path, std::span<const Vec3> points,
                     const std::vector<std::pair<std::string, std::vector<double>>>& extra, PlyFormat format,
                     const std::optional<Vec3>& viewpoint = std::nullopt)
{
    std::ofstream out = open_out(path, std::ios::out | std::ios::binary);
    out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
    if (viewpoint) {
        out << "comment viewpoint " << format_double(viewpoint->x()) << ' ' << format_double(viewpoint->y()) << ' '
            << format_double(viewpoint->z()) << '\n';
    }
    out << "element vertex " << points.size() << '\n';
    out << "property double x\nproperty double y\nproperty double z\n";
    for (const auto& [name, values] : extra) {
        out << "property double " << name << '\n';
    }
    out << "end_header\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::vector<double> row{points[i].x(), points[i].y(), points[i].z()};
        for (const auto& col : extra) {
            row.push_back(col.second[i]);
        }
        if (format == PlyFormat::Ascii) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                out << (c ? " " : "") << format_double(row[c]);
            }
            out << '\n';
        } else {
            out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 8));
        }
    }
    if (!out) {
        throw IoError("failed while writing " + path.string());
    }
}

} // namespace

void write_ply(const std::filesystem::path& path, const PointCloudFrame& frame, PlyFormat format)
{
    std::vector<std::pair<std::string, std::vector<double>>> extra;
    if (frame.has_depth()) {
        extra.emplace_back("depth", frame.depth);
    }
    write_ply_table(path, frame.points, extra, format, frame.viewpoint);
}

void write_ply_vectors(const std::filesystem::path& path, std::span<const Vec3> points,
                       std::span<const Vec3> vectors, PlyFormat format)
{
    if (points.size() != vectors.size()) {
        throw IoError("write_ply_vectors: " + std::to_string(points.size()) + " points but " +
                      std::to_string(vectors.size()) + " vectors");
    }
    std::vector<std::pair<std::string, std::vector<double>>> extra{{"nx", {}}, {"ny", {}}, {"nz", {}}};
    for (const Vec3& v : vectors) {
        for (int c = 0; c < 3; ++c) {
            extra[static_cast<std::size_t>(c)].second.push_back(v[c]);
        }
    }
    write_ply_table(path, points, extra, format);
}

} // namespace lapfusion
