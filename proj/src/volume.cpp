/*
 * Copyright 2026 The tmrsr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "tmrsr/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace tmrsr {

namespace {

constexpr char kMagic[5] = {'T', 'M', 'R', 'V', '1'};

uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xFF),
      static_cast<unsigned char>((v >> 8) & 0xFF),
      static_cast<unsigned char>((v >> 16) & 0xFF),
      static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

int axis_index(Axis a) { return static_cast<int>(a); }

// Iteration helper: decomposes the volume into lines along `axis` and visits
// each line's voxels via (base + i * stride).
struct LineWalk {
  size_t stride;       // step between consecutive samples along the axis
  size_t line_count;   // number of independent lines
  int len;             // samples per line
};

LineWalk line_walk(const Volume& v, Axis axis) {
  const size_t sx = 1;
  const size_t sy = static_cast<size_t>(v.nx);
  const size_t sz = static_cast<size_t>(v.nx) * v.ny;
  switch (axis) {
    case Axis::kX:
      return {sx, static_cast<size_t>(v.ny) * v.nz, v.nx};
    case Axis::kY:
      return {sy, static_cast<size_t>(v.nx) * v.nz, v.ny};
    default:
      return {sz, static_cast<size_t>(v.nx) * v.ny, v.nz};
  }
}

// Base offset of the i-th line along `axis`.
size_t line_base(const Volume& v, Axis axis, size_t line) {
  switch (axis) {
    case Axis::kX: {
      // line indexes (y, z)
      return line * static_cast<size_t>(v.nx);
    }
    case Axis::kY: {
      const size_t x = line % static_cast<size_t>(v.nx);
      const size_t z = line / static_cast<size_t>(v.nx);
      return x + static_cast<size_t>(v.nx) * v.ny * z;
    }
    default: {
      // line indexes (x, y), contiguous in the x-y plane
      return line;
    }
  }
}

// Evaluates the cubic interpolant of a line at fractional position s.
// Interior: Catmull-Rom on the bracketing segment. Boundary segments (or
// short lines): Lagrange interpolation through the nearest min(4, len)
// samples. Both reproduce cubics exactly.
float interp_line(const float* base, size_t stride, int len, double s) {
  if (len == 1) return base[0];
  const auto sample = [&](int i) -> double {
    return static_cast<double>(base[static_cast<size_t>(i) * stride]);
  };
  const int i1 = static_cast<int>(std::floor(s));
  if (len >= 4 && i1 >= 1 && i1 <= len - 3) {
    const double t = s - i1;
    const double p0 = sample(i1 - 1), p1 = sample(i1), p2 = sample(i1 + 1),
                 p3 = sample(i1 + 2);
    return static_cast<float>(
        0.5 * (2.0 * p1 + t * (-p0 + p2) +
               t * t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) +
               t * t * t * (-p0 + 3.0 * p1 - 3.0 * p2 + p3)));
  }
  const int points = std::min(4, len);
  int start = std::clamp(i1 - 1, 0, len - points);
  double acc = 0.0;
  for (int a = 0; a < points; ++a) {
    double w = 1.0;
    for (int b = 0; b < points; ++b) {
      if (a == b) continue;
      w *= (s - (start + b)) / static_cast<double>(a - b);
    }
    acc += w * sample(start + a);
  }
  return static_cast<float>(acc);
}

}  // namespace

std::string to_string(Plane p) {
  switch (p) {
    case Plane::kXY: return "x-y";
    case Plane::kXZ: return "x-z";
    default: return "y-z";
  }
}

Plane plane_from_string(const std::string& s) {
  if (s == "x-y" || s == "xy") return Plane::kXY;
  if (s == "x-z" || s == "xz") return Plane::kXZ;
  if (s == "y-z" || s == "yz") return Plane::kYZ;
  throw ConfigError("unknown plane '" + s + "' (expected x-y, x-z, or y-z)");
}

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open volume file: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0)
    throw DataError("bad magic in volume file: " + path);
  const uint32_t nx = read_u32_le(in);
  const uint32_t ny = read_u32_le(in);
  const uint32_t nz = read_u32_le(in);
  if (!in) throw DataError("truncated payload in volume file: " + path);
  if (nx == 0 || ny == 0 || nz == 0 ||
      static_cast<uint64_t>(nx) * ny * nz > (1ULL << 31))
    throw DataError("dimension/payload mismatch in volume file: " + path +
                    " (implausible dims)");
  Volume v;
  v.nx = static_cast<int>(nx);
  v.ny = static_cast<int>(ny);
  v.nz = static_cast<int>(nz);
  v.data.resize(v.numel());
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(v.numel() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != v.numel() * sizeof(float))
    throw DataError("truncated payload in volume file: " + path);
  in.peek();
  if (!in.eof())
    throw DataError("dimension/payload mismatch in volume file: " + path +
                    " (trailing bytes)");
  for (float f : v.data)
    if (!std::isfinite(f))
      throw DataError("non-finite intensity in volume file: " + path);
  return v;
}

void write_volume(const Volume& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write volume file: " + path);
  out.write(kMagic, 5);
  write_u32_le(out, static_cast<uint32_t>(v.nx));
  write_u32_le(out, static_cast<uint32_t>(v.ny));
  write_u32_le(out, static_cast<uint32_t>(v.nz));
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.numel() * sizeof(float)));
  if (!out) throw DataError("failed writing volume file: " + path);
}

void write_pgm16(const Slice& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image file: " + path);
  out << "P5\n" << s.w << " " << s.h << "\n65535\n";
  std::vector<unsigned char> row(static_cast<size_t>(s.w) * 2);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const float c = std::clamp(s.at(y, x), 0.0f, 1.0f);
      const unsigned val =
          static_cast<unsigned>(std::lround(65535.0 * static_cast<double>(c)));
      row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(val >> 8);
      row[static_cast<size_t>(x) * 2 + 1] =
          static_cast<unsigned char>(val & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("failed writing image file: " + path);
}

Volume normalize(const Volume& v) {
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (float f : v.data) {
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  if (!(hi > lo))
    throw DataError("cannot normalize a constant volume (degenerate range)");
  Volume out = v;
  const float scale = 1.0f / (hi - lo);
  for (float& f : out.data) f = (f - lo) * scale;
  return out;
}

Volume degrade_volume(const Volume& v, int r, Axis axis, bool slab_average) {
  const int n = v.axis_len(axis);
  if (r < 1) throw ConfigError("degrade factor must be >= 1");
  if (r > n)
    throw DataError("degrade factor " + std::to_string(r) +
                    " exceeds axis length " + std::to_string(n));
  if (r == 1) return v;
  const int kept = (n + r - 1) / r;
  Volume out;
  out.nx = axis == Axis::kX ? kept : v.nx;
  out.ny = axis == Axis::kY ? kept : v.ny;
  out.nz = axis == Axis::kZ ? kept : v.nz;
  out.data.resize(out.numel());
  const LineWalk src = line_walk(v, axis);
  const LineWalk dst = line_walk(out, axis);
  for (size_t line = 0; line < src.line_count; ++line) {
    const float* in = v.data.data() + line_base(v, axis, line);
    float* o = out.data.data() + line_base(out, axis, line);
    for (int i = 0; i < kept; ++i) {
      if (slab_average) {
        const int begin = i * r;
        const int end = std::min(begin + r, n);
        double acc = 0.0;
        for (int j = begin; j < end; ++j)
          acc += in[static_cast<size_t>(j) * src.stride];
        o[static_cast<size_t>(i) * dst.stride] =
            static_cast<float>(acc / (end - begin));
      } else {
        o[static_cast<size_t>(i) * dst.stride] =
            in[static_cast<size_t>(i) * r * src.stride];
      }
    }
  }
  return out;
}

Volume upsample_to_hr(const Volume& v, int r, Axis axis, int target_len) {
  const int n = v.axis_len(axis);
  if (r < 1) throw ConfigError("upsample factor must be >= 1");
  if (std::abs(target_len - r * n) >= r)
    throw DataError("target length " + std::to_string(target_len) +
                    " inconsistent with factor " + std::to_string(r) +
                    " and degraded length " + std::to_string(n));
  if (r == 1) return v;
  Volume out;
  out.nx = axis == Axis::kX ? target_len : v.nx;
  out.ny = axis == Axis::kY ? target_len : v.ny;
  out.nz = axis == Axis::kZ ? target_len : v.nz;
  out.data.resize(out.numel());
  const LineWalk src = line_walk(v, axis);
  const LineWalk dst = line_walk(out, axis);
  for (size_t line = 0; line < src.line_count; ++line) {
    const float* in = v.data.data() + line_base(v, axis, line);
    float* o = out.data.data() + line_base(out, axis, line);
    for (int j = 0; j < target_len; ++j) {
      const double s = static_cast<double>(j) / r;
      const float val = interp_line(in, src.stride, n, s);
      o[static_cast<size_t>(j) * dst.stride] = std::clamp(val, 0.0f, 1.0f);
    }
  }
  return out;
}

Axis default_degrade_axis(Plane p) {
  return p == Plane::kXY ? Axis::kX : Axis::kZ;
}

int slice_count(const Volume& v, Plane p) {
  switch (p) {
    case Plane::kXY: return v.nz;
    case Plane::kXZ: return v.ny;
    default: return v.nx;
  }
}

Slice get_slice(const Volume& v, Plane p, int index) {
  Slice s;
  switch (p) {
    case Plane::kXY:
      s.h = v.ny;
      s.w = v.nx;
      s.data.resize(static_cast<size_t>(s.h) * s.w);
      for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) s.at(y, x) = v.at(x, y, index);
      break;
    case Plane::kXZ:
      s.h = v.nz;
      s.w = v.nx;
      s.data.resize(static_cast<size_t>(s.h) * s.w);
      for (int z = 0; z < v.nz; ++z)
        for (int x = 0; x < v.nx; ++x) s.at(z, x) = v.at(x, index, z);
      break;
    default:
      s.h = v.nz;
      s.w = v.ny;
      s.data.resize(static_cast<size_t>(s.h) * s.w);
      for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y) s.at(z, y) = v.at(index, y, z);
  }
  return s;
}

void set_slice(Volume& v, Plane p, int index, const Slice& s) {
  switch (p) {
    case Plane::kXY:
      if (s.h != v.ny || s.w != v.nx) throw DataError("slice shape mismatch");
      for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) v.at(x, y, index) = s.at(y, x);
      break;
    case Plane::kXZ:
      if (s.h != v.nz || s.w != v.nx) throw DataError("slice shape mismatch");
      for (int z = 0; z < v.nz; ++z)
        for (int x = 0; x < v.nx; ++x) v.at(x, index, z) = s.at(z, x);
      break;
    default:
      if (s.h != v.nz || s.w != v.ny) throw DataError("slice shape mismatch");
      for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y) v.at(index, y, z) = s.at(z, y);
  }
}

Slice pad_to(const Slice& s, int target, PadBox* box) {
  if (s.h > target || s.w > target)
    throw DataError("slice " + std::to_string(s.h) + "x" +
                    std::to_string(s.w) + " exceeds padded size " +
                    std::to_string(target));
  Slice out;
  out.h = target;
  out.w = target;
  out.data.assign(static_cast<size_t>(target) * target, 0.0f);
  const int y0 = (target - s.h) / 2;
  const int x0 = (target - s.w) / 2;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) out.at(y0 + y, x0 + x) = s.at(y, x);
  if (box) *box = PadBox{y0, x0, s.h, s.w};
  return out;
}

Slice crop(const Slice& s, const PadBox& box) {
  if (box.y0 < 0 || box.x0 < 0 || box.y0 + box.h > s.h || box.x0 + box.w > s.w)
    throw DataError("crop box outside slice");
  Slice out;
  out.h = box.h;
  out.w = box.w;
  out.data.resize(static_cast<size_t>(box.h) * box.w);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) out.at(y, x) = s.at(box.y0 + y, box.x0 + x);
  return out;
}

std::vector<SlicePair> extract_pairs(const Volume& hr, int r, Plane plane,
                                     int pad_size,
                                     const std::string& volume_id,
                                     int axis_override) {
  const Axis axis = axis_override >= 0 ? static_cast<Axis>(axis_override)
                                       : default_degrade_axis(plane);
  Volume lr_vol;
  if (r == 1) {
    lr_vol = hr;
  } else {
    const int orig = hr.axis_len(axis);
    lr_vol = upsample_to_hr(degrade_volume(hr, r, axis), r, axis, orig);
  }
  std::vector<SlicePair> pairs;
  const int count = slice_count(hr, plane);
  for (int i = 0; i < count; ++i) {
    Slice hs = get_slice(hr, plane, i);
    float mx = 0.0f;
    for (float f : hs.data) mx = std::max(mx, f);
    if (mx == 0.0f) continue;  // carries no information
    Slice ls = get_slice(lr_vol, plane, i);
    SlicePair p;
    p.plane = plane;
    p.index = i;
    p.scale_r = r;
    p.volume_id = volume_id;
    p.hr = pad_to(hs, pad_size, &p.pad_box);
    p.lr = pad_to(ls, pad_size, nullptr);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Slice hflip(const Slice& s) {
  Slice out = s;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) out.at(y, x) = s.at(y, s.w - 1 - x);
  return out;
}

Slice vflip(const Slice& s) {
  Slice out = s;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) out.at(y, x) = s.at(s.h - 1 - y, x);
  return out;
}

Slice transpose(const Slice& s) {
  Slice out;
  out.h = s.w;
  out.w = s.h;
  out.data.resize(s.data.size());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) out.at(x, y) = s.at(y, x);
  return out;
}

SlicePair augment(const SlicePair& p, Rng& rng) {
  SlicePair out = p;
  if (rng.bernoulli(0.5)) {
    out.lr = hflip(out.lr);
    out.hr = hflip(out.hr);
  }
  if (rng.bernoulli(0.5)) {
    out.lr = vflip(out.lr);
    out.hr = vflip(out.hr);
  }
  if (rng.bernoulli(0.5)) {
    out.lr = transpose(out.lr);
    out.hr = transpose(out.hr);
  }
  return out;
}

}  // namespace tmrsr
