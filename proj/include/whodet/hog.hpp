#pragma once

#include "whodet/feature_map.hpp"
#include "whodet/image.hpp"

namespace whodet {

/// Felzenszwalb-style HOG with the FFLD 32-channel layout:
///
///   0..17  contrast-sensitive orientations (20 degree bins over 0..360)
///   18..26 contrast-insensitive orientations (bins o and o+9 folded)
///   27..30 gradient energy under each of the four 2x2 block normalizations
///   31     truncation feature (always 0 inside the image; marks padding)
///
/// Each image pixel votes into its four nearest cells with bilinear weights.
/// Every cell of the floor(W/8) x floor(H/8) grid is kept; block
/// normalizations at the grid boundary reuse the nearest in-grid cells.
namespace hog {
inline constexpr int kCellSize = 8;
inline constexpr int kChannels = 32;
inline constexpr int kSensitiveBins = 18;
inline constexpr int kInsensitiveBins = 9;
inline constexpr int kTextureOffset = 27;
inline constexpr int kTruncationChannel = 31;
}  // namespace hog

/// Throws ValidationError when the image is smaller than one cell.
FeatureMap extract_hog(const Image& image);

}  // namespace whodet
