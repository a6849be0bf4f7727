#pragma once

// Minimal reverse-mode differentiation over dense image arrays. Every op
// appends a node holding its value and a closure that pushes the node's
// gradient to its inputs; `backward` walks the nodes in reverse creation
// order. Arrays are row-major with interleaved channels and all spatial
// stencils use replicate padding.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "snowattack/error.hpp"

namespace snow::ad {

struct Shape {
  int width = 0;
  int height = 0;
  int channels = 1;

  std::size_t size() const { return std::size_t(width) * height * channels; }
  bool operator==(const Shape&) const = default;
};

using Id = int;

class Tape {
 public:
  using Backward = std::function<void(Tape&, Id)>;

  Id push(Shape shape, std::vector<double> value, Backward back = {}) {
    nodes_.push_back({shape, std::move(value), {}, std::move(back)});
    return Id(nodes_.size() - 1);
  }

  const std::vector<double>& value(Id id) const { return nodes_[std::size_t(id)].value; }
  const Shape& shape(Id id) const { return nodes_[std::size_t(id)].shape; }

  /// Gradient buffer of a node, zero-initialized on first access.
  std::vector<double>& grad(Id id) {
    auto& n = nodes_[std::size_t(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void backward(Id output, const std::vector<double>& seed) {
    if (seed.size() != value(output).size()) throw ShapeError("tape: seed gradient has the wrong size");
    for (auto& n : nodes_) n.grad.clear();
    grad(output) = seed;
    for (Id id = output; id >= 0; --id) {
      auto& n = nodes_[std::size_t(id)];
      if (n.back && !n.grad.empty()) n.back(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Backward back;
  };
  std::vector<Node> nodes_;
};

namespace detail {
inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

inline void require_same(const Tape& t, Id a, Id b, const char* op) {
  if (!(t.shape(a) == t.shape(b))) throw ShapeError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline Id input(Tape& t, Shape s, std::vector<double> v) {
  if (v.size() != s.size()) throw ShapeError("input: data length does not match shape");
  return t.push(s, std::move(v));
}

inline Id zeros(Tape& t, Shape s) { return t.push(s, std::vector<double>(s.size(), 0.0)); }

inline Id add(Tape& t, Id a, Id b) {
  detail::require_same(t, a, b, "add");
  std::vector<double> out(t.value(a));
  const auto& vb = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return t.push(t.shape(a), std::move(out), [a, b](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = tp.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

/// ca * a + cb * b
inline Id lincomb(Tape& t, double ca, Id a, double cb, Id b) {
  detail::require_same(t, a, b, "lincomb");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * va[i] + cb * vb[i];
  return t.push(t.shape(a), std::move(out), [a, b, ca, cb](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += ca * g[i];
    auto& gb = tp.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += cb * g[i];
  });
}

inline Id mul(Tape& t, Id a, Id b) {
  detail::require_same(t, a, b, "mul");
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return t.push(t.shape(a), std::move(out), [a, b](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    const auto& va = tp.value(a);
    const auto& vb = tp.value(b);
    {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    auto& gb = tp.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
  });
}

/// Rec. 601 luma of an interleaved RGB array.
inline Id luma(Tape& t, Id rgb) {
  const Shape s = t.shape(rgb);
  if (s.channels != 3) throw ShapeError("luma: expected 3 channels");
  static constexpr double kW[3] = {0.299, 0.587, 0.114};
  const auto& v = t.value(rgb);
  Shape o{s.width, s.height, 1};
  std::vector<double> out(o.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kW[0] * v[3 * i] + kW[1] * v[3 * i + 1] + kW[2] * v[3 * i + 2];
  return t.push(o, std::move(out), [rgb](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& gi = tp.grad(rgb);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (int c = 0; c < 3; ++c) gi[3 * i + std::size_t(c)] += kW[c] * g[i];
  });
}

/// 2x2 box average; odd sizes round up and replicate the last row/column.
inline Id downsample(Tape& t, Id x) {
  const Shape s = t.shape(x);
  if (s.channels != 1) throw ShapeError("downsample: expected 1 channel");
  Shape o{(s.width + 1) / 2, (s.height + 1) / 2, 1};
  const auto& v = t.value(x);
  std::vector<double> out(o.size());
  for (int y = 0; y < o.height; ++y)
    for (int xx = 0; xx < o.width; ++xx) {
      double acc = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = std::min(2 * xx + dx, s.width - 1), sy = std::min(2 * y + dy, s.height - 1);
          acc += v[std::size_t(sy) * s.width + sx];
        }
      out[std::size_t(y) * o.width + xx] = 0.25 * acc;
    }
  return t.push(o, std::move(out), [x, s, o](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& gx = tp.grad(x);
    for (int y = 0; y < o.height; ++y)
      for (int xx = 0; xx < o.width; ++xx) {
        const double gv = 0.25 * g[std::size_t(y) * o.width + xx];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = std::min(2 * xx + dx, s.width - 1), sy = std::min(2 * y + dy, s.height - 1);
            gx[std::size_t(sy) * s.width + sx] += gv;
          }
      }
  });
}

namespace detail {
struct Bilinear {
  int x0, x1, y0, y1;
  double fx, fy;
};

// Fixed resampling position (clamped into the grid).
inline Bilinear bilinear_at(double x, double y, int w, int h) {
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(int(x), w - 1), y0 = std::min(int(y), h - 1);
  return {x0, std::min(x0 + 1, w - 1), y0, std::min(y0 + 1, h - 1), x - x0, y - y0};
}
}  // namespace detail

/// Resizes a 2-channel flow field to (w, h) and rescales the vectors by the
/// size ratio.
inline Id upsample_flow(Tape& t, Id flow, int w, int h) {
  const Shape s = t.shape(flow);
  if (s.channels != 2) throw ShapeError("upsample_flow: expected 2 channels");
  Shape o{w, h, 2};
  const double su = double(w) / s.width, sv = double(h) / s.height;
  std::vector<detail::Bilinear> taps(std::size_t(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      taps[std::size_t(y) * w + x] = detail::bilinear_at((x + 0.5) / su - 0.5, (y + 0.5) / sv - 0.5, s.width, s.height);
  const auto& v = t.value(flow);
  std::vector<double> out(o.size());
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& b = taps[i];
    for (int c = 0; c < 2; ++c) {
      auto at = [&](int xx, int yy) { return v[(std::size_t(yy) * s.width + xx) * 2 + std::size_t(c)]; };
      const double val = (1 - b.fy) * ((1 - b.fx) * at(b.x0, b.y0) + b.fx * at(b.x1, b.y0)) +
                         b.fy * ((1 - b.fx) * at(b.x0, b.y1) + b.fx * at(b.x1, b.y1));
      out[2 * i + std::size_t(c)] = val * (c == 0 ? su : sv);
    }
  }
  return t.push(o, std::move(out), [flow, s, su, sv, taps = std::move(taps)](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& gf = tp.grad(flow);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const auto& b = taps[i];
      for (int c = 0; c < 2; ++c) {
        const double gv = g[2 * i + std::size_t(c)] * (c == 0 ? su : sv);
        auto acc = [&](int xx, int yy, double wgt) {
          gf[(std::size_t(yy) * s.width + xx) * 2 + std::size_t(c)] += wgt * gv;
        };
        acc(b.x0, b.y0, (1 - b.fy) * (1 - b.fx));
        acc(b.x1, b.y0, (1 - b.fy) * b.fx);
        acc(b.x0, b.y1, b.fy * (1 - b.fx));
        acc(b.x1, b.y1, b.fy * b.fx);
      }
    }
  });
}

namespace detail {
// Catmull-Rom weights and their derivatives for taps at floor(x) - 1 .. floor(x) + 2.
struct CubicTaps {
  int base;
  double w[4];
  double dw[4];
};

inline CubicTaps cubic_taps(double x) {
  const double fl = std::floor(x);
  const double t = x - fl, t2 = t * t, t3 = t2 * t;
  return {int(fl) - 1,
          {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (t3 - t2)},
          {0.5 * (-3 * t2 + 4 * t - 1), 0.5 * (9 * t2 - 10 * t), 0.5 * (-9 * t2 + 8 * t + 1), 0.5 * (3 * t2 - 2 * t)}};
}
}  // namespace detail

/// out(x, y) = img(x + u, y + v) with Catmull-Rom interpolation over the
/// replicate-padded image. The interpolant is continuously differentiable in
/// the sample position, including outside the image.
inline Id warp(Tape& t, Id img, Id flow) {
  const Shape s = t.shape(img);
  if (s.channels != 1 || t.shape(flow) != Shape{s.width, s.height, 2}) throw ShapeError("warp: shape mismatch");
  const auto& v = t.value(img);
  const auto& f = t.value(flow);
  auto at = [&v, s](int xx, int yy) {
    return v[std::size_t(detail::clampi(yy, 0, s.height - 1)) * s.width + std::size_t(detail::clampi(xx, 0, s.width - 1))];
  };
  std::vector<double> out(s.size());
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const std::size_t i = std::size_t(y) * s.width + x;
      const auto tx = detail::cubic_taps(x + f[2 * i]), ty = detail::cubic_taps(y + f[2 * i + 1]);
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        double row = 0.0;
        for (int k = 0; k < 4; ++k) row += tx.w[k] * at(tx.base + k, ty.base + j);
        acc += ty.w[j] * row;
      }
      out[i] = acc;
    }
  return t.push(s, std::move(out), [img, flow, s](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    const auto& v = tp.value(img);
    const auto& f = tp.value(flow);
    auto idx = [s](int xx, int yy) {
      return std::size_t(detail::clampi(yy, 0, s.height - 1)) * s.width + std::size_t(detail::clampi(xx, 0, s.width - 1));
    };
    std::vector<double>& gi = tp.grad(img);
    std::vector<double> gf_local(f.size(), 0.0);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const std::size_t i = std::size_t(y) * s.width + x;
        const double gv = g[i];
        if (gv == 0.0) continue;
        const auto tx = detail::cubic_taps(x + f[2 * i]), ty = detail::cubic_taps(y + f[2 * i + 1]);
        double du = 0.0, dv = 0.0;
        for (int j = 0; j < 4; ++j)
          for (int k = 0; k < 4; ++k) {
            const std::size_t q = idx(tx.base + k, ty.base + j);
            gi[q] += gv * tx.w[k] * ty.w[j];
            du += tx.dw[k] * ty.w[j] * v[q];
            dv += tx.w[k] * ty.dw[j] * v[q];
          }
        gf_local[2 * i] += gv * du;
        gf_local[2 * i + 1] += gv * dv;
      }
    auto& gf = tp.grad(flow);
    for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += gf_local[i];
  });
}

/// Central difference along x (axis 0) or y (axis 1).
inline Id central_diff(Tape& t, Id x, int axis) {
  const Shape s = t.shape(x);
  if (s.channels != 1) throw ShapeError("central_diff: expected 1 channel");
  const auto& v = t.value(x);
  std::vector<double> out(s.size());
  auto idx = [&](int xx, int yy) { return std::size_t(yy) * s.width + xx; };
  for (int y = 0; y < s.height; ++y)
    for (int xx = 0; xx < s.width; ++xx) {
      const std::size_t lo = axis == 0 ? idx(detail::clampi(xx - 1, 0, s.width - 1), y)
                                       : idx(xx, detail::clampi(y - 1, 0, s.height - 1));
      const std::size_t hi = axis == 0 ? idx(detail::clampi(xx + 1, 0, s.width - 1), y)
                                       : idx(xx, detail::clampi(y + 1, 0, s.height - 1));
      out[idx(xx, y)] = 0.5 * (v[hi] - v[lo]);
    }
  return t.push(s, std::move(out), [x, s, axis](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& gx = tp.grad(x);
    auto idx = [&](int xx, int yy) { return std::size_t(yy) * s.width + xx; };
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx) {
        const std::size_t lo = axis == 0 ? idx(detail::clampi(xx - 1, 0, s.width - 1), y)
                                         : idx(xx, detail::clampi(y - 1, 0, s.height - 1));
        const std::size_t hi = axis == 0 ? idx(detail::clampi(xx + 1, 0, s.width - 1), y)
                                         : idx(xx, detail::clampi(y + 1, 0, s.height - 1));
        const double gv = 0.5 * g[idx(xx, y)];
        gx[hi] += gv;
        gx[lo] -= gv;
      }
  });
}

/// Mean over a (2r+1)^2 window.
inline Id box_mean(Tape& t, Id x, int radius) {
  const Shape s = t.shape(x);
  if (s.channels != 1) throw ShapeError("box_mean: expected 1 channel");
  const auto& v = t.value(x);
  const double norm = 1.0 / double((2 * radius + 1) * (2 * radius + 1));
  std::vector<double> out(s.size());
  for (int y = 0; y < s.height; ++y)
    for (int xx = 0; xx < s.width; ++xx) {
      double acc = 0.0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          acc += v[std::size_t(detail::clampi(y + dy, 0, s.height - 1)) * s.width +
                   std::size_t(detail::clampi(xx + dx, 0, s.width - 1))];
      out[std::size_t(y) * s.width + xx] = acc * norm;
    }
  return t.push(s, std::move(out), [x, s, radius, norm](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    auto& gx = tp.grad(x);
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx) {
        const double gv = g[std::size_t(y) * s.width + xx] * norm;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx)
            gx[std::size_t(detail::clampi(y + dy, 0, s.height - 1)) * s.width +
               std::size_t(detail::clampi(xx + dx, 0, s.width - 1))] += gv;
      }
  });
}

namespace detail {
// Classical Horn-Schunck neighborhood: 1/6 for edge neighbors, 1/12 for
// diagonal neighbors.
inline constexpr int kHsTaps = 8;
inline constexpr int kHsDx[kHsTaps] = {-1, 1, 0, 0, -1, 1, -1, 1};
inline constexpr int kHsDy[kHsTaps] = {0, 0, -1, 1, -1, -1, 1, 1};
inline constexpr double kHsW[kHsTaps] = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 12, 1.0 / 12, 1.0 / 12, 1.0 / 12};

inline void neighbor_average(const std::vector<double>& f, const Shape& s, std::vector<double>& avg) {
  avg.assign(f.size(), 0.0);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const std::size_t i = std::size_t(y) * s.width + x;
      for (int k = 0; k < kHsTaps; ++k) {
        const std::size_t j = std::size_t(clampi(y + kHsDy[k], 0, s.height - 1)) * s.width +
                              std::size_t(clampi(x + kHsDx[k], 0, s.width - 1));
        avg[2 * i] += kHsW[k] * f[2 * j];
        avg[2 * i + 1] += kHsW[k] * f[2 * j + 1];
      }
    }
}
}  // namespace detail

/// One Jacobi sweep of linearized Horn-Schunck around flow0:
///   r = Ix (ubar - u0) + Iy (vbar - v0) + It
///   u = ubar - Ix r / (lambda + Ix^2 + Iy^2),  v = vbar - Iy r / (...)
inline Id hs_step(Tape& t, Id flow, Id flow0, Id ix, Id iy, Id it, double lambda) {
  const Shape fs = t.shape(flow);
  const Shape s{fs.width, fs.height, 1};
  if (fs.channels != 2 || t.shape(flow0) != fs || t.shape(ix) != s || t.shape(iy) != s || t.shape(it) != s)
    throw ShapeError("hs_step: shape mismatch");
  std::vector<double> avg;
  detail::neighbor_average(t.value(flow), s, avg);
  const auto& f0 = t.value(flow0);
  const auto& gx = t.value(ix);
  const auto& gy = t.value(iy);
  const auto& gt = t.value(it);
  std::vector<double> out(fs.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double den = lambda + gx[i] * gx[i] + gy[i] * gy[i];
    const double r = gx[i] * (avg[2 * i] - f0[2 * i]) + gy[i] * (avg[2 * i + 1] - f0[2 * i + 1]) + gt[i];
    const double q = r / den;
    out[2 * i] = avg[2 * i] - gx[i] * q;
    out[2 * i + 1] = avg[2 * i + 1] - gy[i] * q;
  }
  return t.push(fs, std::move(out), [=, avg = std::move(avg)](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    const auto& f0 = tp.value(flow0);
    const auto& gx = tp.value(ix);
    const auto& gy = tp.value(iy);
    const auto& gt = tp.value(it);
    std::vector<double> g_avg(fs.size()), g_f0(fs.size()), g_ix(s.size()), g_iy(s.size()), g_it(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double den = lambda + gx[i] * gx[i] + gy[i] * gy[i];
      const double du = avg[2 * i] - f0[2 * i], dv = avg[2 * i + 1] - f0[2 * i + 1];
      const double r = gx[i] * du + gy[i] * dv + gt[i];
      const double q = r / den;
      const double gu = g[2 * i], gv = g[2 * i + 1];
      const double g_q = -(gx[i] * gu + gy[i] * gv);
      const double g_r = g_q / den;
      const double g_den = -g_q * q / den;
      g_ix[i] = -q * gu + g_r * du + 2.0 * gx[i] * g_den;
      g_iy[i] = -q * gv + g_r * dv + 2.0 * gy[i] * g_den;
      g_it[i] = g_r;
      g_avg[2 * i] = gu + gx[i] * g_r;
      g_avg[2 * i + 1] = gv + gy[i] * g_r;
      g_f0[2 * i] = -gx[i] * g_r;
      g_f0[2 * i + 1] = -gy[i] * g_r;
    }
    {
      auto& gf = tp.grad(flow);
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const std::size_t i = std::size_t(y) * s.width + x;
          for (int k = 0; k < detail::kHsTaps; ++k) {
            const std::size_t j = std::size_t(detail::clampi(y + detail::kHsDy[k], 0, s.height - 1)) * s.width +
                                  std::size_t(detail::clampi(x + detail::kHsDx[k], 0, s.width - 1));
            gf[2 * j] += detail::kHsW[k] * g_avg[2 * i];
            gf[2 * j + 1] += detail::kHsW[k] * g_avg[2 * i + 1];
          }
        }
    }
    auto accumulate = [&](Id id, const std::vector<double>& src) {
      auto& dst = tp.grad(id);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    accumulate(flow0, g_f0);
    accumulate(ix, g_ix);
    accumulate(iy, g_iy);
    accumulate(it, g_it);
  });
}

/// Regularized 2x2 least-squares update of Lucas-Kanade:
///   [sxx+eps, sxy; sxy, syy+eps] d = -[sxt; syt],  out = flow0 + d
inline Id lk_update(Tape& t, Id flow0, Id sxx, Id sxy, Id syy, Id sxt, Id syt, double eps) {
  const Shape fs = t.shape(flow0);
  const Shape s{fs.width, fs.height, 1};
  for (Id id : {sxx, sxy, syy, sxt, syt})
    if (t.shape(id) != s) throw ShapeError("lk_update: shape mismatch");
  const auto& f0 = t.value(flow0);
  const auto &a = t.value(sxx), &b = t.value(sxy), &c = t.value(syy), &e = t.value(sxt), &f = t.value(syt);
  std::vector<double> out(fs.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double A = a[i] + eps, C = c[i] + eps, B = b[i];
    const double det = A * C - B * B;
    out[2 * i] = f0[2 * i] - (C * e[i] - B * f[i]) / det;
    out[2 * i + 1] = f0[2 * i + 1] - (A * f[i] - B * e[i]) / det;
  }
  return t.push(fs, std::move(out), [=](Tape& tp, Id self) {
    const auto g = tp.grad(self);
    const auto &a = tp.value(sxx), &b = tp.value(sxy), &c = tp.value(syy), &e = tp.value(sxt), &f = tp.value(syt);
    std::vector<double> ga(s.size()), gb(s.size()), gc(s.size()), ge(s.size()), gf(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double A = a[i] + eps, C = c[i] + eps, B = b[i];
      const double det = A * C - B * B;
      const double dx = -(C * e[i] - B * f[i]) / det;
      const double dy = -(A * f[i] - B * e[i]) / det;
      // lambda = M^{-1} g for symmetric M
      const double lx = (C * g[2 * i] - B * g[2 * i + 1]) / det;
      const double ly = (A * g[2 * i + 1] - B * g[2 * i]) / det;
      ge[i] = -lx;
      gf[i] = -ly;
      ga[i] = -lx * dx;
      gc[i] = -ly * dy;
      gb[i] = -(lx * dy + ly * dx);
    }
    {
      auto& g0 = tp.grad(flow0);
      for (std::size_t i = 0; i < g.size(); ++i) g0[i] += g[i];
    }
    auto accumulate = [&](Id id, const std::vector<double>& src) {
      auto& dst = tp.grad(id);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    accumulate(sxx, ga);
    accumulate(sxy, gb);
    accumulate(syy, gc);
    accumulate(sxt, ge);
    accumulate(syt, gf);
  });
}

}  // namespace snow::ad
