#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/image.hpp"

namespace lmpet {

// List-mode file: "LMEV", u32 version (1), u32 n, u32 reserved (0), then n
// records of u32 c1, u32 c2, u32 tof. Image file: "IMG2", u32 W, u32 H,
// f64 pixel size (mm), then W*H f64 values in row-major order. All integers
// and floats little-endian.

inline constexpr std::uint32_t kListModeVersion = 1;

void write_listmode(std::ostream& out, const EventList& events);
EventList read_listmode(std::istream& in);
void save_listmode(const EventList& events, const std::filesystem::path& path);
EventList load_listmode(const std::filesystem::path& path);

void write_image(std::ostream& out, const Image2D& image);
Image2D read_image(std::istream& in);
void save_image(const Image2D& image, const std::filesystem::path& path);
Image2D load_image(const std::filesystem::path& path);

namespace le {

void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
double get_f64(std::istream& in);
void put_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace le

}  // namespace lmpet
