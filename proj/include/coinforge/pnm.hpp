#pragma once

// Binary PGM (P5) and PPM (P6) interchange, maxval 255 only.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "raster.hpp"

namespace coinforge {

class PnmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_pnm(std::ostream& os, const Raster& img) {
  os << (img.channels() == 1 ? "P5" : "P6") << '\n'
     << img.width() << ' ' << img.height() << '\n'
     << "255\n";
  const auto data = img.data();
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!os) throw PnmError("failed writing PNM data");
}

namespace detail {

inline int read_pnm_int(std::istream& is) {
  // Whitespace and '#' comments may separate header tokens.
  for (;;) {
    int ch = is.peek();
    if (ch == EOF) throw PnmError("truncated PNM header");
    if (ch == '#') {
      std::string ignored;
      std::getline(is, ignored);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(is.peek())) {
    value = value * 10 + (is.get() - '0');
    any = true;
    if (value > 1 << 20) throw PnmError("PNM header value out of range");
  }
  if (!any) throw PnmError("malformed PNM header");
  return value;
}

}  // namespace detail

inline Raster read_pnm(std::istream& is) {
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw PnmError("not a binary PGM/PPM file");
  }
  const int channels = magic[1] == '5' ? 1 : 3;
  const int width = detail::read_pnm_int(is);
  const int height = detail::read_pnm_int(is);
  const int maxval = detail::read_pnm_int(is);
  if (maxval != 255) throw PnmError("only maxval 255 is supported, got " + std::to_string(maxval));
  if (width < 1 || height < 1) throw PnmError("PNM dimensions must be positive");
  if (!std::isspace(is.get())) throw PnmError("missing whitespace after PNM header");
  std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * channels);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (is.gcount() != static_cast<std::streamsize>(data.size())) throw PnmError("truncated PNM pixel data");
  return Raster(width, height, channels, std::move(data));
}

inline void save_pnm(const std::filesystem::path& path, const Raster& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PnmError("cannot open " + path.string() + " for writing");
  write_pnm(os, img);
}

inline Raster load_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PnmError("cannot open " + path.string());
  try {
    return read_pnm(is);
  } catch (const PnmError& e) {
    throw PnmError(path.string() + ": " + e.what());
  }
}

}  // namespace coinforge
