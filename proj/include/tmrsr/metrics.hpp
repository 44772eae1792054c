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

#include <array>
#include <cstdint>
#include <vector>

#include "tmrsr/common.hpp"
#include "tmrsr/volume.hpp"

// Evaluation metrics. Pure functions; all arithmetic in double regardless of
// the float storage of slices and volumes.

namespace tmrsr {

/// 10*log10(1/MSE) with data range 1, capped at 100 dB (the cap is also the
/// sentinel for MSE == 0, keeping the metric monotone in MSE).
Scalar psnr(const Slice& a, const Slice& b);

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// data range 1, valid-window sweep (no padding). Throws DataError when the
/// image is smaller than the window.
Scalar ssim(const Slice& a, const Slice& b);

/// Dice overlap 2|X∩Y| / (|X|+|Y|); two empty masks count as full agreement
/// (1.0). Nonzero bytes are foreground.
Scalar dice(const std::vector<uint8_t>& x, const std::vector<uint8_t>& y);

/// Threshold segmentation into CSF / grey / white masks by nearest class
/// center; voxels darker than half the CSF center count as background.
/// Returned in that order, one byte per voxel in volume layout.
std::array<std::vector<uint8_t>, 3> classify_tissues(const Volume& v,
                                                     Scalar csf = 0.08,
                                                     Scalar grey = 0.45,
                                                     Scalar white = 0.72);

/// Volume-level PSNR/SSIM: mean of the per-slice metric over a plane.
Scalar volume_psnr(const Volume& a, const Volume& b, Plane plane);
Scalar volume_ssim(const Volume& a, const Volume& b, Plane plane);

}  // namespace tmrsr
