#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gsvton/image.hpp"

namespace gsvton {

double srgb_to_linear(double v);
double linear_to_srgb(double v);
/// Linear [0,1] value to an 8-bit sRGB code (clamped, rounded).
std::uint8_t encode_srgb8(double linear);
double decode_srgb8(std::uint8_t code);

// RGB images are stored as 8-bit sRGB PNG and held in memory as linear float.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Single-channel 8-bit PNG, values stored verbatim (labels, masks as 0/255).
std::vector<std::uint8_t> encode_png_gray(const Plane<std::uint8_t>& plane);
Plane<std::uint8_t> decode_png_gray(const std::vector<std::uint8_t>& bytes);
void write_png_gray(const std::filesystem::path& path, const Plane<std::uint8_t>& plane);
Plane<std::uint8_t> read_png_gray(const std::filesystem::path& path);

Mask mask_from_gray(const Plane<std::uint8_t>& plane);
Plane<std::uint8_t> mask_to_gray(const Mask& m);

/// Float dump: ASCII header line "W H 3\n" then W*H*3 little-endian float32.
void write_raw(const std::filesystem::path& path, const Image& img);
Image read_raw(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace gsvton
