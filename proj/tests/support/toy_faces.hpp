#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sparnet/image.hpp"

namespace sparnet::testing {

// Procedural face-like RGB image: skin ellipse, hair, eyes, brows, nose and
// mouth with seed-dependent placement, palette and fine texture.
Image toy_face(int side, std::uint64_t seed);

std::vector<Image> toy_faces(int count, int side, std::uint64_t seed);

// Writes toy faces as face_NN.png into dir and returns the paths.
std::vector<std::filesystem::path> write_toy_faces(const std::filesystem::path& dir, int count,
                                                   int side, std::uint64_t seed);

// Image with entries drawn uniformly from [lo, hi).
Image random_image(int channels, int height, int width, std::uint64_t seed, double lo = 0,
                   double hi = 1);

// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace sparnet::testing
