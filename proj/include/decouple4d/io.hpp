#ifndef DECOUPLE4D_IO_HPP
#define DECOUPLE4D_IO_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "decouple4d/dense_map.hpp"
#include "decouple4d/error.hpp"
#include "decouple4d/geometry.hpp"
#include "decouple4d/metrics.hpp"
#include "decouple4d/pose.hpp"

namespace decouple4d {

namespace fs = std::filesystem;

namespace io_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Quaternion components as a reader keeps them: snapped to a 2^-52 grid,
/// which gives the writer a finite neighbourhood to search.
inline Eigen::Quaterniond snap_quaternion(const Eigen::Quaterniond& q) {
  Eigen::Quaterniond out;
  for (int k = 0; k < 4; ++k) out.coeffs()[k] = std::round(std::ldexp(q.coeffs()[k], 52)) * 0x1p-52;
  return out;
}

inline Matrix3d read_rotation(const Eigen::Quaterniond& q) {
  return from_quaternion(0, Vector3d::Zero(), snap_quaternion(q)).rotation;
}

/// Quaternion for `p` that reads back as exactly p.rotation when p itself was
/// read from text, so write/read cycles are lossless after the first one.
inline Eigen::Quaterniond stable_quaternion(const CameraPose& p) {
  const Eigen::Quaterniond q0 = snap_quaternion(to_quaternion(p));
  constexpr int kOffsets[] = {0, -1, 1, -2, 2, -3, 3, -4, 4, -5, 5};
  for (int a : kOffsets) {
    for (int b : kOffsets) {
      for (int c : kOffsets) {
        for (int d : kOffsets) {
          Eigen::Quaterniond cand = q0;
          cand.coeffs() += Eigen::Vector4d(a, b, c, d) * 0x1p-52;
          if (read_rotation(cand) == p.rotation) return cand;
        }
      }
    }
  }
  return q0;
}

}  // namespace io_detail

inline constexpr std::size_t kDtmHeaderSize = 20;

/// Serializes maps of equal shape as one channel-interleaved DTM1 float32 file.
inline std::string encode_dtm(const std::vector<const DenseMap*>& channels) {
  if (channels.empty()) throw Error(ErrorCode::Format, "DTM needs at least one channel");
  const DenseMap& first = *channels.front();
  for (const DenseMap* c : channels) require_same_shape(first, *c, "DTM channels");
  std::string out = "DTM1";
  io_detail::put_u32(out, static_cast<std::uint32_t>(first.height));
  io_detail::put_u32(out, static_cast<std::uint32_t>(first.width));
  io_detail::put_u32(out, static_cast<std::uint32_t>(channels.size()));
  out.push_back('\0');
  out.append(3, '\0');
  out.reserve(out.size() + first.size() * channels.size() * 4);
  for (std::size_t i = 0; i < first.size(); ++i) {
    for (const DenseMap* c : channels) {
      const double v = c->values[i];
      if (std::isnan(v)) throw Error(ErrorCode::Format, "NaN values cannot be written to DTM");
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      io_detail::put_u32(out, bits);
    }
  }
  return out;
}

inline std::vector<DenseMap> decode_dtm(const std::string& bytes, const std::vector<MapRole>& roles,
                                        const std::string& what = "DTM") {
  if (bytes.size() < kDtmHeaderSize || bytes.compare(0, 4, "DTM1") != 0) {
    throw Error(ErrorCode::Format, what + ": missing DTM1 header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t h = io_detail::get_u32(p + 4);
  const std::uint32_t w = io_detail::get_u32(p + 8);
  const std::uint32_t c = io_detail::get_u32(p + 12);
  if (p[16] != 0) throw Error(ErrorCode::Format, what + ": unsupported dtype tag " + std::to_string(p[16]));
  if (c != roles.size()) {
    throw Error(ErrorCode::Format,
                what + ": expected " + std::to_string(roles.size()) + " channels, found " + std::to_string(c));
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != kDtmHeaderSize + n * c * 4) throw Error(ErrorCode::Format, what + ": payload size mismatch");
  std::vector<DenseMap> maps;
  for (MapRole r : roles) maps.emplace_back(static_cast<int>(h), static_cast<int>(w), r);
  const unsigned char* q = p + kDtmHeaderSize;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t ch = 0; ch < c; ++ch, q += 4) {
      const std::uint32_t bits = io_detail::get_u32(q);
      float f;
      std::memcpy(&f, &bits, 4);
      if (std::isnan(f)) throw Error(ErrorCode::Format, what + ": NaN in payload");
      maps[ch].values[i] = f;
    }
  }
  return maps;
}

inline void write_dtm(const fs::path& path, const std::vector<const DenseMap*>& channels) {
  io_detail::write_file(path, encode_dtm(channels));
}

inline void write_dtm(const fs::path& path, const DenseMap& map) { write_dtm(path, {&map}); }

inline std::vector<DenseMap> read_dtm(const fs::path& path, const std::vector<MapRole>& roles) {
  return decode_dtm(io_detail::read_file(path), roles, path.string());
}

inline DenseMap read_dtm(const fs::path& path, MapRole role) { return read_dtm(path, std::vector{role}).front(); }

/// `frame_id tx ty tz qx qy qz qw` per line.
inline std::string format_trajectory(const Trajectory& traj, const std::string& comment = "") {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "# frame_id tx ty tz qx qy qz qw\n";
  char buf[512];
  for (const CameraPose& p : traj) {
    const Eigen::Quaterniond q = io_detail::stable_quaternion(p);
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", p.frame_id, p.translation.x(),
                  p.translation.y(), p.translation.z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

inline Trajectory parse_trajectory(const std::string& text, const std::string& what = "trajectory") {
  Trajectory traj;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int id;
    double v[7];
    if (!(ls >> id >> v[0] >> v[1] >> v[2] >> v[3] >> v[4] >> v[5] >> v[6])) {
      throw Error(ErrorCode::Format, what + ":" + std::to_string(lineno) + ": expected 8 fields");
    }
    std::string extra;
    if (ls >> extra) throw Error(ErrorCode::Format, what + ":" + std::to_string(lineno) + ": trailing fields");
    const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
    if (!(q.norm() > 0.0)) throw Error(ErrorCode::Format, what + ":" + std::to_string(lineno) + ": zero quaternion");
    traj.push_back(from_quaternion(id, Vector3d(v[0], v[1], v[2]), io_detail::snap_quaternion(q)));
  }
  validate_trajectory(traj);
  return traj;
}

/// The trajectory exactly as a reader of its text form will see it.
inline Trajectory roundtrip_trajectory(const Trajectory& traj) { return parse_trajectory(format_trajectory(traj)); }

inline void write_trajectory(const fs::path& path, const Trajectory& traj, const std::string& comment = "") {
  io_detail::write_file(path, format_trajectory(traj, comment));
}

inline Trajectory read_trajectory(const fs::path& path) {
  return parse_trajectory(io_detail::read_file(path), path.string());
}

inline std::string format_ply(const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[128];
  for (const Vector3d& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", static_cast<float>(p.x()), static_cast<float>(p.y()),
                  static_cast<float>(p.z()));
    out += buf;
  }
  return out;
}

inline PointCloud parse_ply(const std::string& text, const std::string& what = "ply") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::Format, what + ": missing ply magic");
  std::size_t count = 0;
  bool ascii = false;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (key == "element") {
      std::string name;
      ls >> name >> count;
    }
  }
  if (!ascii) throw Error(ErrorCode::Format, what + ": only ascii PLY is supported");
  PointCloud cloud;
  cloud.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    float x, y, z;
    if (!(in >> x >> y >> z)) throw Error(ErrorCode::Format, what + ": truncated vertex list");
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

inline void write_ply(const fs::path& path, const PointCloud& cloud) { io_detail::write_file(path, format_ply(cloud)); }

inline PointCloud read_ply(const fs::path& path) { return parse_ply(io_detail::read_file(path), path.string()); }

inline void write_text(const fs::path& path, const std::string& text) { io_detail::write_file(path, text); }

inline std::string read_text(const fs::path& path) { return io_detail::read_file(path); }

/// Zero-padded per-frame file name, e.g. frame_name("depth", 3) == "depth_0003.dtm".
inline std::string frame_name(const std::string& stem, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.dtm", stem.c_str(), frame);
  return buf;
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_IO_HPP
