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

#pragma once

#include <string>
#include <vector>

#include "tmrsr/common.hpp"
#include "tmrsr/rng.hpp"

// Volume ingestion, thick-slice degradation simulation, cubic restoration to
// the original grid, plane-wise pair extraction, padding, and augmentation.
// All functions are pure (randomness enters only through an explicit Rng), so
// they are safe to call from concurrent pipeline workers.

namespace tmrsr {

enum class Axis { kX = 0, kY = 1, kZ = 2 };

// Anatomical planes; the second named axis is the slice row direction.
enum class Plane { kXY = 0, kXZ = 1, kYZ = 2 };

std::string to_string(Plane p);
Plane plane_from_string(const std::string& s);

/// 3-D intensity volume, x-fastest memory order: data[x + nx*(y + ny*z)].
/// Axis convention: x = sagittal, y = coronal, z = axial.
struct Volume {
  std::vector<float> data;
  int nx = 0, ny = 0, nz = 0;

  size_t numel() const {
    return static_cast<size_t>(nx) * static_cast<size_t>(ny) *
           static_cast<size_t>(nz);
  }
  float& at(int x, int y, int z) {
    return data[static_cast<size_t>(x) +
                static_cast<size_t>(nx) *
                    (static_cast<size_t>(y) +
                     static_cast<size_t>(ny) * static_cast<size_t>(z))];
  }
  float at(int x, int y, int z) const {
    return data[static_cast<size_t>(x) +
                static_cast<size_t>(nx) *
                    (static_cast<size_t>(y) +
                     static_cast<size_t>(ny) * static_cast<size_t>(z))];
  }
  int axis_len(Axis a) const {
    switch (a) {
      case Axis::kX: return nx;
      case Axis::kY: return ny;
      default: return nz;
    }
  }
};

/// Single 2-D slice, row-major.
struct Slice {
  std::vector<float> data;
  int h = 0, w = 0;
  float& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

/// Placement of the original slice inside a padded canvas.
struct PadBox {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

/// One aligned LR/HR training or evaluation pair in HR space.
struct SlicePair {
  Slice lr;
  Slice hr;
  Plane plane = Plane::kXZ;
  int index = 0;
  int scale_r = 1;
  PadBox pad_box;
  std::string volume_id;
};

// --- file formats -----------------------------------------------------------

/// Reads the owned binary volume format: magic "TMRV1", three u32 (x, y, z)
/// little-endian dims, then x*y*z little-endian 32-bit floats, x-fastest.
/// Distinguishes bad magic, truncated payload, and dimension/payload
/// mismatch in the error message.
Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);

/// 16-bit binary PGM (maxval 65535, big-endian samples);
/// sample = round(65535 * clamp(value, 0, 1)).
void write_pgm16(const Slice& s, const std::string& path);

// --- intensity & degradation -------------------------------------------------

/// Linear map of intensities onto [0, 1]. Constant volumes are an error.
Volume normalize(const Volume& v);

/// Thick-slice simulation: keep every r-th sample along `axis` starting at
/// index 0 (decimation; optional slab averaging groups r consecutive samples
/// instead). Output axis length is ceil(n / r). r larger than the axis is an
/// error; r equal to it leaves a single sample.
Volume degrade_volume(const Volume& v, int r, Axis axis,
                      bool slab_average = false);

/// 1-D cubic interpolation along `axis` back to target_len samples: interior
/// segments use the Catmull-Rom spline; boundary segments use the one-sided
/// four-point cubic Lagrange stencil (shifted inward) so polynomials up to
/// cubic — linear ramps in particular — are reproduced exactly everywhere.
/// Results are clamped to [0, 1]. Requires |target_len - r*len| < r.
Volume upsample_to_hr(const Volume& v, int r, Axis axis, int target_len);

// --- slicing ------------------------------------------------------------------

/// In-plane degradation axis used for a plane's pairs unless overridden: the
/// through-plane acquisition direction is z for planes containing z, x for
/// the x-y plane.
Axis default_degrade_axis(Plane p);

Slice get_slice(const Volume& v, Plane p, int index);
void set_slice(Volume& v, Plane p, int index, const Slice& s);
int slice_count(const Volume& v, Plane p);

/// Centered zero-padding to target x target; records the placement box.
Slice pad_to(const Slice& s, int target, PadBox* box);
Slice crop(const Slice& s, const PadBox& box);

/// Full pair-extraction pipeline: degrade along `axis` (default: the plane's
/// acquisition axis), cubically restore to the HR grid, slice the chosen
/// plane, drop slices whose HR content is identically zero, and pad both
/// images of each pair to pad_size x pad_size.
std::vector<SlicePair> extract_pairs(const Volume& hr, int r, Plane plane,
                                     int pad_size = 256,
                                     const std::string& volume_id = "",
                                     int axis_override = -1);

// --- augmentation -------------------------------------------------------------

Slice hflip(const Slice& s);
Slice vflip(const Slice& s);
Slice transpose(const Slice& s);

/// Applies, in order, horizontal flip, vertical flip, and transpose, each
/// independently with probability 1/2 — the same draws to both images.
SlicePair augment(const SlicePair& p, Rng& rng);

}  // namespace tmrsr
