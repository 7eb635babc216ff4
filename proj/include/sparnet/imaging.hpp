#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sparnet/image.hpp"

namespace sparnet::imaging {

enum class Interp { nearest, bilinear, bicubic };

// BT.601 studio-swing luma: Y = 65.481 R + 128.553 G + 24.966 B + 16.
// Output is single channel in [16, 235].
Image rgb_to_luminance(const Image& rgb);

// Separable resampling with half-pixel centers and edge clamping. Bicubic
// uses the Keys kernel with a = -0.5. When shrinking, bilinear and bicubic
// stretch the kernel by the inverse scale (antialiased). Output is clamped
// to [0, 1]; equal source and target sizes return the input unchanged.
Image resize(const Image& img, int target_h, int target_w, Interp mode);

// Keys cubic convolution kernel, a = -0.5.
real cubic_kernel(real x);

Image clamp01(Image img);
Image flip_horizontal(const Image& img);
// Counter-clockwise rotation by quarter_turns * 90 degrees.
Image rotate90(const Image& img, int quarter_turns);
Image crop(const Image& img, int top, int left, int height, int width);
Image center_crop_square(const Image& img);

// 8-bit quantization used at every file boundary.
std::vector<std::uint8_t> quantize_u8(const Image& img);
Image from_u8(std::span<const std::uint8_t> interleaved, int channels, int height,
              int width);

// PNG/JPEG/BMP by extension. Reading always yields 3-channel RGB.
Image read_image(const std::filesystem::path& path);
// 8-bit PNG (1 or 3 channels). Throws IoError on failure.
void write_image(const Image& img, const std::filesystem::path& path);

// Encodes to baseline JPEG at the given quality factor and decodes again.
Image jpeg_roundtrip(const Image& img, int quality);

// Images in a directory with a supported extension, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace sparnet::imaging
