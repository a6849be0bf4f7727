#pragma once

// Frame, depth, flow and camera containers plus their on-disk formats:
// binary PPM (P6, maxval 255), grayscale PFM, Middlebury .flo and a raw
// little-endian camera file (3x3 intrinsics + 3x4 extrinsics, float64).

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snowattack/error.hpp"

namespace snow {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// RGB frame, row-major with interleaved channels, linear intensities in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  static constexpr int kChannels = 3;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

  std::size_t pixels() const { return std::size_t(width) * height; }
  double& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

/// Positive metric depth per pixel, row-major, top row first.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 1.0) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  double& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  double at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  bool operator==(const DepthMap&) const = default;
};

/// Dense displacement field in pixels, interleaved (u, v).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FlowField() = default;
  FlowField(int w, int h, double u = 0.0, double v = 0.0) : width(w), height(h), data(std::size_t(w) * h * 2) {
    for (std::size_t i = 0; i < data.size(); i += 2) {
      data[i] = u;
      data[i + 1] = v;
    }
  }

  std::size_t pixels() const { return std::size_t(width) * height; }
  double& u(int x, int y) { return data[(std::size_t(y) * width + x) * 2]; }
  double& v(int x, int y) { return data[(std::size_t(y) * width + x) * 2 + 1]; }
  double u(int x, int y) const { return data[(std::size_t(y) * width + x) * 2]; }
  double v(int x, int y) const { return data[(std::size_t(y) * width + x) * 2 + 1]; }
  bool operator==(const FlowField&) const = default;
};

/// Pinhole camera: K maps camera coordinates to homogeneous pixels, Rt maps
/// world coordinates to camera coordinates.
struct CameraPose {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> Rt = Eigen::Matrix<double, 3, 4>::Identity();

  Eigen::Matrix3d rotation() const { return Rt.leftCols<3>(); }
  Eigen::Vector3d translation() const { return Rt.col(3); }
  bool operator==(const CameraPose& o) const { return K == o.K && Rt == o.Rt; }
};

inline constexpr double kOrthonormalTolerance = 1e-6;

/// Frobenius norm of R^T R - I.
inline double orthonormality_defect(const Eigen::Matrix3d& R) {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
}

inline void validate(const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw FormatError("image: nonpositive dimensions");
  if (img.data.size() != img.pixels() * 3) throw FormatError("image: data length does not match dimensions");
  for (double x : img.data)
    if (!std::isfinite(x) || x < 0.0 || x > 1.0) throw FormatError("image: value outside [0,1]");
}

inline void validate(const DepthMap& depth) {
  if (depth.width <= 0 || depth.height <= 0) throw FormatError("depth: nonpositive dimensions");
  if (depth.data.size() != std::size_t(depth.width) * depth.height)
    throw FormatError("depth: data length does not match dimensions");
  for (double d : depth.data)
    if (!std::isfinite(d) || d <= 0.0) throw FormatError("depth: values must be finite and positive");
}

inline void validate(const FlowField& flow) {
  if (flow.width <= 0 || flow.height <= 0) throw FormatError("flow: nonpositive dimensions");
  if (flow.data.size() != flow.pixels() * 2) throw FormatError("flow: data length does not match dimensions");
  for (double x : flow.data)
    if (!std::isfinite(x)) throw FormatError("flow: non-finite value");
}

inline void validate(const CameraPose& pose) {
  const auto& K = pose.K;
  if (!K.allFinite() || !pose.Rt.allFinite()) throw FormatError("camera: non-finite entry");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) throw FormatError("camera: K is not upper-triangular");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || !(K(2, 2) > 0.0))
    throw FormatError("camera: K needs positive focal entries");
  if (orthonormality_defect(pose.rotation()) > kOrthonormalTolerance)
    throw FormatError("camera: rotation block is not orthonormal");
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file and renames it into place, so readers never
// observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
T load_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

template <typename T>
T load_be(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::little) std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

template <typename T>
void store_le(std::string& out, T value) {
  auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  out.append(reinterpret_cast<const char*>(b.data()), b.size());
}

// Netpbm-style header tokenizer: whitespace separated, '#' starts a comment
// running to end of line.
class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, bool allow_comments)
      : bytes_(bytes), comments_(allow_comments) {}

  std::string token() {
    skip_space();
    std::string tok;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) tok.push_back(char(bytes_[pos_++]));
    if (tok.empty()) throw FormatError("truncated header");
    return tok;
  }

  long integer() {
    auto tok = token();
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(tok, &used);
    } catch (const std::exception&) {
      throw FormatError("malformed header field '" + tok + "'");
    }
    if (used != tok.size()) throw FormatError("malformed header field '" + tok + "'");
    return value;
  }

  // The payload starts after exactly one whitespace byte.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("missing header terminator");
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (comments_ && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  bool comments_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// PPM

inline Image decode_ppm(const std::vector<unsigned char>& bytes) {
  detail::HeaderReader header(bytes, true);
  if (header.token() != "P6") throw FormatError("ppm: expected P6 magic");
  const long w = header.integer();
  const long h = header.integer();
  const long maxval = header.integer();
  if (w <= 0 || h <= 0) throw FormatError("ppm: nonpositive dimensions");
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  const std::size_t offset = header.payload_offset();
  const std::size_t need = std::size_t(w) * std::size_t(h) * 3;
  if (bytes.size() < offset + need) throw FormatError("ppm: truncated payload");
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < need; ++i) img.data[i] = bytes[offset + i] / 255.0;
  return img;
}

inline std::string encode_ppm(const Image& img) {
  validate(img);
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (double x : img.data) out.push_back(char(static_cast<unsigned char>(std::lround(x * 255.0))));
  return out;
}

inline Image read_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }
inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_ppm(img));
}

// ---------------------------------------------------------------------------
// PFM (grayscale "Pf"; a negative scale marks little-endian payload; rows are
// stored bottom-up)

inline DepthMap decode_pfm(const std::vector<unsigned char>& bytes) {
  detail::HeaderReader header(bytes, false);
  const auto magic = header.token();
  if (magic == "PF") throw FormatError("pfm: color PF variant is not a depth map");
  if (magic != "Pf") throw FormatError("pfm: expected Pf magic");
  const long w = header.integer();
  const long h = header.integer();
  const auto scale_tok = header.token();
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw FormatError("pfm: malformed scale field");
  }
  if (w <= 0 || h <= 0) throw FormatError("pfm: nonpositive dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("pfm: scale must be nonzero");
  const bool little = scale < 0.0;
  const std::size_t offset = header.payload_offset();
  const std::size_t count = std::size_t(w) * std::size_t(h);
  if (bytes.size() < offset + count * 4) throw FormatError("pfm: truncated payload");
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  for (long row = 0; row < h; ++row) {
    const long y = h - 1 - row;
    for (long x = 0; x < w; ++x) {
      const unsigned char* p = bytes.data() + offset + (std::size_t(row) * w + x) * 4;
      const float f = little ? detail::load_le<float>(p) : detail::load_be<float>(p);
      depth.at(int(x), int(y)) = f;
    }
  }
  validate(depth);
  return depth;
}

inline std::string encode_pfm(const DepthMap& depth) {
  validate(depth);
  std::string out = "Pf\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n-1.0\n";
  for (int row = 0; row < depth.height; ++row) {
    const int y = depth.height - 1 - row;
    for (int x = 0; x < depth.width; ++x) detail::store_le(out, static_cast<float>(depth.at(x, y)));
  }
  return out;
}

inline DepthMap read_pfm(const std::filesystem::path& path) { return decode_pfm(detail::read_file(path)); }
inline void write_pfm(const DepthMap& depth, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_pfm(depth));
}

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;

inline FlowField decode_flo(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12) throw FormatError("flo: truncated header");
  if (detail::load_le<float>(bytes.data()) != kFloMagic) throw FormatError("flo: magic mismatch");
  const auto w = detail::load_le<std::int32_t>(bytes.data() + 4);
  const auto h = detail::load_le<std::int32_t>(bytes.data() + 8);
  if (w <= 0 || h <= 0) throw FormatError("flo: nonpositive dimensions");
  const std::size_t count = std::size_t(w) * std::size_t(h) * 2;
  if (bytes.size() != 12 + count * 4) throw FormatError("flo: payload size does not match header");
  FlowField flow(w, h);
  for (std::size_t i = 0; i < count; ++i) flow.data[i] = detail::load_le<float>(bytes.data() + 12 + i * 4);
  return flow;
}

inline std::string encode_flo(const FlowField& flow) {
  validate(flow);
  std::string out;
  out.reserve(12 + flow.data.size() * 4);
  detail::store_le(out, kFloMagic);
  detail::store_le(out, std::int32_t(flow.width));
  detail::store_le(out, std::int32_t(flow.height));
  for (double x : flow.data) detail::store_le(out, static_cast<float>(x));
  return out;
}

inline FlowField read_flo(const std::filesystem::path& path) { return decode_flo(detail::read_file(path)); }
inline void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_flo(flow));
}

// ---------------------------------------------------------------------------
// Camera: 9 float64 (K, row-major) then 12 float64 (Rt, row-major). Files
// carrying the 4-byte Sintel "PIEH" tag in front are accepted as well.

inline constexpr std::size_t kCamBytes = 21 * 8;

inline CameraPose decode_cam(const std::vector<unsigned char>& bytes) {
  std::size_t offset = 0;
  if (bytes.size() == kCamBytes + 4 && detail::load_le<float>(bytes.data()) == kFloMagic) offset = 4;
  if (bytes.size() != kCamBytes + offset)
    throw FormatError("cam: expected " + std::to_string(kCamBytes) + " bytes, got " + std::to_string(bytes.size()));
  CameraPose pose;
  const unsigned char* p = bytes.data() + offset;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c, p += 8) pose.K(r, c) = detail::load_le<double>(p);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c, p += 8) pose.Rt(r, c) = detail::load_le<double>(p);
  validate(pose);
  return pose;
}

inline std::string encode_cam(const CameraPose& pose) {
  validate(pose);
  std::string out;
  out.reserve(kCamBytes);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) detail::store_le(out, pose.K(r, c));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) detail::store_le(out, pose.Rt(r, c));
  return out;
}

inline CameraPose read_cam(const std::filesystem::path& path) { return decode_cam(detail::read_file(path)); }
inline void write_cam(const CameraPose& pose, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_cam(pose));
}

// ---------------------------------------------------------------------------
// Flow visualization (Middlebury color wheel, zero motion renders white)

inline const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    // relative lengths of the hue transitions
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < RY; ++i) w.push_back({255, std::floor(255.0 * i / RY), 0});
    for (int i = 0; i < YG; ++i) w.push_back({255 - std::floor(255.0 * i / YG), 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, std::floor(255.0 * i / GC)});
    for (int i = 0; i < CB; ++i) w.push_back({0, 255 - std::floor(255.0 * i / CB), 255});
    for (int i = 0; i < BM; ++i) w.push_back({std::floor(255.0 * i / BM), 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, 255 - std::floor(255.0 * i / MR)});
    for (auto& c : w)
      for (auto& x : c) x /= 255.0;
    return w;
  }();
  return wheel;
}

/// Largest per-pixel flow magnitude.
inline double max_flow_magnitude(const FlowField& flow) {
  double m = 0.0;
  for (std::size_t i = 0; i < flow.pixels(); ++i) m = std::max(m, std::hypot(flow.data[2 * i], flow.data[2 * i + 1]));
  return m;
}

/// Color-codes a flow field. Without max_magnitude the field is normalized by
/// its own largest vector; magnitudes beyond the normalizer are darkened.
inline Image flow_to_color(const FlowField& flow, std::optional<double> max_magnitude = std::nullopt) {
  const auto& wheel = color_wheel();
  const int ncols = int(wheel.size());
  double norm = max_magnitude.value_or(max_flow_magnitude(flow));
  if (!(norm > 0.0)) norm = 1.0;
  Image img(flow.width, flow.height, 1.0);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const double fu = flow.u(x, y) / norm;
      const double fv = flow.v(x, y) / norm;
      const double rad = std::hypot(fu, fv);
      const double a = std::atan2(-fv, -fu) / M_PI;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      const int k0 = std::clamp(int(fk), 0, ncols - 1);
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int c = 0; c < 3; ++c) {
        double col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        if (rad <= 1.0)
          col = 1.0 - rad * (1.0 - col);
        else
          col *= 0.75;
        img.at(x, y, c) = std::clamp(col, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace snow
