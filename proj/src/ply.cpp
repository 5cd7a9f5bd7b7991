#include "gsvton/ply.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "gsvton/errors.hpp"

namespace gsvton {

namespace {

struct Property {
    std::string name;
    std::string type;
    size_t offset = 0;
};

size_t type_size(const std::string& t) {
    if (t == "float" || t == "float32" || t == "int" || t == "uint" || t == "int32" || t == "uint32") return 4;
    if (t == "double" || t == "float64") return 8;
    if (t == "uchar" || t == "char" || t == "uint8" || t == "int8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    throw IoError("unsupported PLY property type " + t);
}

double read_value(const char* p, const std::string& t) {
    if (t == "float" || t == "float32") { float f; std::memcpy(&f, p, 4); return f; }
    if (t == "double" || t == "float64") { double d; std::memcpy(&d, p, 8); return d; }
    if (t == "uchar" || t == "uint8") return static_cast<unsigned char>(*p);
    if (t == "char" || t == "int8") return static_cast<signed char>(*p);
    if (t == "short" || t == "int16") { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    if (t == "ushort" || t == "uint16") { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    if (t == "int" || t == "int32") { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
    const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
    return std::log(q / (1.0 - q));
}

} // namespace

GaussianCloud load_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path.string());

    std::string line;
    std::getline(in, line);
    if (line != "ply") throw IoError(path.string() + ": not a PLY file");

    size_t count = 0;
    bool in_vertex = false, binary_le = false;
    std::vector<Property> props;
    size_t stride = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ls >> name;
            in_vertex = name == "vertex";
            if (in_vertex) ls >> count;
        } else if (word == "property" && in_vertex) {
            Property p;
            ls >> p.type;
            if (p.type == "list") throw IoError("list properties are not supported on vertices");
            ls >> p.name;
            p.offset = stride;
            stride += type_size(p.type);
            props.push_back(p);
        } else if (word == "end_header") {
            break;
        }
    }
    if (!binary_le) throw IoError(path.string() + ": only binary_little_endian PLY is supported");

    std::map<std::string, const Property*> by_name;
    for (const auto& p : props) by_name[p.name] = &p;
    auto require = [&](const std::string& n) -> const Property& {
        auto it = by_name.find(n);
        if (it == by_name.end()) throw IoError(path.string() + ": missing property " + n);
        return *it->second;
    };

    size_t rest = 0;
    while (by_name.count(fmt::format("f_rest_{}", rest))) ++rest;
    if (rest % 3 != 0) throw IoError("f_rest count is not a multiple of 3");
    const int degree = sh_degree_for_count(rest / 3 + 1);
    if (degree < 0) throw IoError("f_rest count does not match an SH degree 0..3");
    const size_t k = static_cast<size_t>(sh_coeff_count(degree));

    GaussianCloud cloud;
    cloud.sh_degree = degree;
    cloud.gaussians.reserve(count);
    std::vector<char> row(stride);
    for (size_t i = 0; i < count; ++i) {
        if (!in.read(row.data(), static_cast<std::streamsize>(stride))) throw IoError(path.string() + ": truncated");
        auto get = [&](const std::string& n) {
            const auto& p = require(n);
            return read_value(row.data() + p.offset, p.type);
        };
        Gaussian g;
        g.position = {get("x"), get("y"), get("z")};
        g.sh.assign(k, Vec3::Zero());
        for (int c = 0; c < 3; ++c) g.sh[0][c] = get(fmt::format("f_dc_{}", c));
        for (size_t j = 1; j < k; ++j)
            for (int c = 0; c < 3; ++c) g.sh[j][c] = get(fmt::format("f_rest_{}", c * (k - 1) + (j - 1)));
        g.opacity = sigmoid(get("opacity"));
        g.scale = {std::exp(get("scale_0")), std::exp(get("scale_1")), std::exp(get("scale_2"))};
        g.set_rotation({get("rot_0"), get("rot_1"), get("rot_2"), get("rot_3")});
        cloud.gaussians.push_back(std::move(g));
    }
    return cloud;
}

void save_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
    const size_t k = static_cast<size_t>(sh_coeff_count(cloud.sh_degree));
    std::vector<std::string> names = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (size_t i = 0; i < 3 * (k - 1); ++i) names.push_back(fmt::format("f_rest_{}", i));
    for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
        names.emplace_back(n);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    for (const auto& n : names) out << "property float " << n << "\n";
    out << "end_header\n";

    std::vector<float> row(names.size());
    for (const auto& g : cloud.gaussians) {
        if (g.sh.size() != k) throw InvalidParameter("save_ply: SH length does not match cloud degree");
        size_t o = 0;
        for (int c = 0; c < 3; ++c) row[o++] = static_cast<float>(g.position[c]);
        for (int c = 0; c < 3; ++c) row[o++] = static_cast<float>(g.sh[0][c]);
        for (int c = 0; c < 3; ++c)
            for (size_t j = 1; j < k; ++j) row[o++] = static_cast<float>(g.sh[j][c]);
        row[o++] = static_cast<float>(logit(g.opacity));
        for (int c = 0; c < 3; ++c) row[o++] = static_cast<float>(std::log(g.scale[c]));
        for (int c = 0; c < 4; ++c) row[o++] = static_cast<float>(g.rotation[c]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

} // namespace gsvton
