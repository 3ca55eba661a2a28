#include "lmpet/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace lmpet {

namespace le {

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("unexpected end of file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t get_u32(std::istream& in) { return get<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get<std::uint64_t>(in); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) throw std::runtime_error(std::string("bad magic, expected ") + magic);
}

}  // namespace le

void write_listmode(std::ostream& out, const EventList& events) {
  le::put_magic(out, "LMEV");
  le::put_u32(out, kListModeVersion);
  le::put_u32(out, static_cast<std::uint32_t>(events.size()));
  le::put_u32(out, 0);
  for (const auto& e : events) {
    le::put_u32(out, e.c1);
    le::put_u32(out, e.c2);
    le::put_u32(out, e.tof);
  }
}

EventList read_listmode(std::istream& in) {
  le::expect_magic(in, "LMEV");
  const auto version = le::get_u32(in);
  if (version != kListModeVersion) throw std::runtime_error("unsupported list-mode version " + std::to_string(version));
  const auto n = le::get_u32(in);
  le::get_u32(in);
  EventList events(n);
  for (auto& e : events) {
    e.c1 = le::get_u32(in);
    e.c2 = le::get_u32(in);
    e.tof = le::get_u32(in);
  }
  return events;
}

void write_image(std::ostream& out, const Image2D& image) {
  le::put_magic(out, "IMG2");
  le::put_u32(out, static_cast<std::uint32_t>(image.width()));
  le::put_u32(out, static_cast<std::uint32_t>(image.height()));
  le::put_f64(out, image.grid().pixel_size_mm);
  for (double v : image.values()) le::put_f64(out, v);
}

Image2D read_image(std::istream& in) {
  le::expect_magic(in, "IMG2");
  Grid grid;
  grid.width = static_cast<int>(le::get_u32(in));
  grid.height = static_cast<int>(le::get_u32(in));
  grid.pixel_size_mm = le::get_f64(in);
  grid.validate();
  std::vector<double> values(grid.size());
  for (auto& v : values) v = le::get_f64(in);
  return Image2D(grid, std::move(values));
}

namespace {

template <typename Fn>
void with_output(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  fn(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename Fn>
auto with_input(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return fn(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_listmode(const EventList& events, const std::filesystem::path& path) {
  with_output(path, [&](std::ostream& out) { write_listmode(out, events); });
}

EventList load_listmode(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_listmode(in); });
}

void save_image(const Image2D& image, const std::filesystem::path& path) {
  with_output(path, [&](std::ostream& out) { write_image(out, image); });
}

Image2D load_image(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_image(in); });
}

}  // namespace lmpet
