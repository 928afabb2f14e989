#pragma once

// Moving bouncing discs, PGM (P5) frames and the FWSQ sequence container.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "fluidlab/field.hpp"
#include "fluidlab/io.hpp"
#include "fluidlab/rng.hpp"

namespace fluidlab {

struct SceneConfig {
  std::size_t width = 16;
  std::size_t height = 16;
  std::size_t n_objects = 2;
  double object_radius = 2.0;
  double speed = 1.0;
  std::size_t n_frames = 5;
  std::uint64_t seed = 0;
};

inline void validate(const SceneConfig& cfg) {
  require(cfg.width > 0 && cfg.height > 0, "scene: frame size must be positive");
  require(cfg.object_radius > 0.0 && 2.0 * cfg.object_radius <= static_cast<double>(std::min(cfg.width, cfg.height)),
          "scene: objects must fit within the frame");
  require(cfg.speed >= 0.0 && cfg.speed < static_cast<double>(std::min(cfg.width, cfg.height)) / 2.0,
          "scene: speed must be below half the frame size");
}

struct Disc {
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
};

inline std::vector<Disc> initial_discs(const SceneConfig& cfg, Rng& rng) {
  std::vector<Disc> discs(cfg.n_objects);
  const double r = cfg.object_radius;
  for (auto& d : discs) {
    d.x = rng.uniform(r, static_cast<double>(cfg.width) - r);
    d.y = rng.uniform(r, static_cast<double>(cfg.height) - r);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.vx = cfg.speed * std::cos(angle);
    d.vy = cfg.speed * std::sin(angle);
  }
  return discs;
}

namespace detail {

/// Moves one coordinate and mirrors it back inside [r, extent − r], flipping
/// the velocity when the disc edge crosses a wall.
inline void bounce(double& pos, double& vel, double r, double extent) {
  pos += vel;
  const double lo = r, hi = extent - r;
  if (pos < lo) {
    pos = 2.0 * lo - pos;
    vel = -vel;
  } else if (pos > hi) {
    pos = 2.0 * hi - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, lo, hi);
}

}  // namespace detail

inline void advance(Disc& d, const SceneConfig& cfg) {
  detail::bounce(d.x, d.vx, cfg.object_radius, static_cast<double>(cfg.width));
  detail::bounce(d.y, d.vy, cfg.object_radius, static_cast<double>(cfg.height));
}

/// Anti-aliased discs: coverage clamp(r − dist + 0.5, 0, 1) from pixel centers,
/// overlapping discs combined by max.
inline FieldGrid render(const std::vector<Disc>& discs, const SceneConfig& cfg) {
  FieldGrid f(1, cfg.height, cfg.width);
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      double v = 0.0;
      for (const auto& d : discs) {
        const double dist = std::hypot(static_cast<double>(x) + 0.5 - d.x, static_cast<double>(y) + 0.5 - d.y);
        v = std::max(v, std::clamp(cfg.object_radius - dist + 0.5, 0.0, 1.0));
      }
      f(0, y, x) = v;
    }
  return f;
}

inline std::vector<FieldGrid> generate_sequence(const SceneConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  auto discs = initial_discs(cfg, rng);
  std::vector<FieldGrid> frames;
  frames.reserve(cfg.n_frames);
  for (std::size_t t = 0; t < cfg.n_frames; ++t) {
    frames.push_back(render(discs, cfg));
    for (auto& d : discs) advance(d, cfg);
  }
  return frames;
}

// ---------------------------------------------------------------------------
// PGM

inline std::string encode_pgm(const FieldGrid& frame) {
  require(frame.channels() == 1, "write_pgm: frame must have one channel");
  std::string out = "P5\n" + std::to_string(frame.width()) + " " + std::to_string(frame.height()) + "\n255\n";
  for (double v : frame.values())
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
  return out;
}

/// Min-max normalized to [0, 1] first; a constant image maps to 0.
inline std::string encode_pgm_normalized(const FieldGrid& frame) {
  FieldGrid f = frame;
  const auto [lo, hi] = std::minmax_element(f.values().begin(), f.values().end());
  const double a = *lo, span = *hi - *lo;
  for (double& v : f.values()) v = span > 0.0 ? (v - a) / span : 0.0;
  return encode_pgm(f);
}

inline FieldGrid decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw io::IoError(std::string("pgm: malformed header, expected ") + what);
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw io::IoError("pgm: missing P5 magic");
  pos = 2;
  const auto w = number("width"), h = number("height"), maxval = number("maxval");
  if (w == 0 || h == 0) throw io::IoError("pgm: zero dimension");
  if (maxval != 255) throw io::IoError("pgm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw io::IoError("pgm: malformed header");
  ++pos;
  if (bytes.size() - pos < w * h) throw io::IoError("pgm: truncated payload");
  FieldGrid f(1, h, w);
  for (std::size_t i = 0; i < w * h; ++i) f[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return f;
}

inline void write_pgm(const std::string& path, const FieldGrid& frame) { io::write_file(path, encode_pgm(frame)); }
inline FieldGrid read_pgm(const std::string& path) { return decode_pgm(io::read_file(path)); }

// ---------------------------------------------------------------------------
// FWSQ: "FWSQ", u32 version, u32 C, H, W, T, then T·C·H·W little-endian f32.

inline constexpr std::uint32_t kSequenceVersion = 1;

inline std::string encode_sequence(const std::vector<FieldGrid>& frames) {
  std::uint32_t c = 0, h = 0, w = 0;
  if (!frames.empty()) {
    c = static_cast<std::uint32_t>(frames[0].channels());
    h = static_cast<std::uint32_t>(frames[0].height());
    w = static_cast<std::uint32_t>(frames[0].width());
  }
  std::string out = "FWSQ";
  io::put_u32(out, kSequenceVersion);
  io::put_u32(out, c);
  io::put_u32(out, h);
  io::put_u32(out, w);
  io::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    require(f.channels() == c && f.height() == h && f.width() == w, "write_sequence: frames differ in shape");
    for (double v : f.values()) io::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline std::vector<FieldGrid> decode_sequence(const std::string& bytes) {
  io::Reader r(bytes, "fwsq");
  if (r.bytes(4) != "FWSQ") throw io::IoError("fwsq: bad magic");
  if (const auto v = r.u32(); v != kSequenceVersion) throw io::IoError("fwsq: unsupported version " + std::to_string(v));
  const std::size_t c = r.u32(), h = r.u32(), w = r.u32(), t = r.u32();
  // Each factor is below 2^32, so the 128-bit product cannot wrap.
  const unsigned __int128 payload = static_cast<unsigned __int128>(t) * c * h * w * 4;
  if (payload != r.remaining()) throw io::IoError("fwsq: payload size does not match the header");
  std::vector<FieldGrid> frames;
  frames.reserve(t);
  for (std::size_t k = 0; k < t; ++k) {
    FieldGrid f(c, h, w);
    for (double& v : f.values()) v = r.f32();
    frames.push_back(std::move(f));
  }
  return frames;
}

inline void write_sequence(const std::string& path, const std::vector<FieldGrid>& frames) {
  io::write_file(path, encode_sequence(frames));
}

inline std::vector<FieldGrid> read_sequence(const std::string& path) { return decode_sequence(io::read_file(path)); }

}  // namespace fluidlab
