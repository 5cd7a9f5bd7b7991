#include "gsvton/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

#include "gsvton/errors.hpp"

namespace gsvton {

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

std::uint8_t encode_srgb8(double linear) {
    const double s = linear_to_srgb(std::clamp(linear, 0.0, 1.0));
    return static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0));
}

namespace {

const std::array<double, 256>& srgb_table() {
    static const std::array<double, 256> table = [] {
        std::array<double, 256> t{};
        for (int i = 0; i < 256; ++i) t[i] = srgb_to_linear(i / 255.0);
        return t;
    }();
    return table;
}

std::vector<std::uint8_t> encode_raw(const std::uint8_t* pixels, int w, int h, png_uint_32 format) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> decode_raw(const std::vector<std::uint8_t>& bytes, png_uint_32 format, int& w, int& h) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("png decode failed: ") + image.message);
    image.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(std::string("png decode failed: ") + image.message);
    }
    w = static_cast<int>(image.width);
    h = static_cast<int>(image.height);
    return buf;
}

} // namespace

double decode_srgb8(std::uint8_t code) { return srgb_table()[code]; }

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> px(img.data.size());
    std::transform(img.data.begin(), img.data.end(), px.begin(), encode_srgb8);
    return encode_raw(px.data(), img.width, img.height, PNG_FORMAT_RGB);
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    int w = 0, h = 0;
    const auto px = decode_raw(bytes, PNG_FORMAT_RGB, w, h);
    Image img(w, h);
    std::transform(px.begin(), px.end(), img.data.begin(), decode_srgb8);
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }
Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_png_gray(const Plane<std::uint8_t>& plane) {
    return encode_raw(plane.data.data(), plane.width, plane.height, PNG_FORMAT_GRAY);
}

Plane<std::uint8_t> decode_png_gray(const std::vector<std::uint8_t>& bytes) {
    int w = 0, h = 0;
    auto px = decode_raw(bytes, PNG_FORMAT_GRAY, w, h);
    Plane<std::uint8_t> out;
    out.width = w;
    out.height = h;
    out.data = std::move(px);
    return out;
}

void write_png_gray(const std::filesystem::path& path, const Plane<std::uint8_t>& plane) {
    write_file_bytes(path, encode_png_gray(plane));
}

Plane<std::uint8_t> read_png_gray(const std::filesystem::path& path) {
    return decode_png_gray(read_file_bytes(path));
}

Mask mask_from_gray(const Plane<std::uint8_t>& plane) {
    Mask m(plane.width, plane.height);
    for (size_t i = 0; i < plane.data.size(); ++i) m.data[i] = plane.data[i] >= 128 ? 1 : 0;
    return m;
}

Plane<std::uint8_t> mask_to_gray(const Mask& m) {
    Plane<std::uint8_t> p(m.width, m.height);
    for (size_t i = 0; i < m.data.size(); ++i) p.data[i] = m.data[i] ? 255 : 0;
    return p;
}

void write_raw(const std::filesystem::path& path, const Image& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    out << img.width << ' ' << img.height << " 3\n";
    static_assert(std::endian::native == std::endian::little, "raw dump assumes a little-endian host");
    for (double v : img.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
}

Image read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path.string());
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    int w = 0, h = 0, c = 0;
    if (!(hs >> w >> h >> c) || c != 3 || w <= 0 || h <= 0) throw IoError("bad raw header in " + path.string());
    Image img(w, h);
    for (double& v : img.data) {
        float f = 0;
        if (!in.read(reinterpret_cast<char*>(&f), sizeof f)) throw IoError("truncated raw file " + path.string());
        v = f;
    }
    return img;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += kB64[n & 63];
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t n = bytes[i] << 16;
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=') break;
        if (c == '\n' || c == '\r' || c == ' ') continue;
        const int v = value(c);
        if (v < 0) throw IoError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace gsvton
