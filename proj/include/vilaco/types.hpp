#pragma once

#include "vilaco/autograd.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vilaco {

using ag::Matrix;
using ag::Var;

inline constexpr int kImageSize = 256;
inline constexpr int kChannels = 3;

// Planar RGB image, values in [0, 1].
struct ImageTensor {
  int height = kImageSize;
  int width = kImageSize;
  std::vector<float> data;  // (channel, y, x)

  ImageTensor() = default;
  ImageTensor(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(kChannels) * h * w, 0.0f) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

// Throws InputError unless the image is 3x256x256 with finite values in [0,1].
void validate_image(const ImageTensor& img);

// Grid-aligned patch features: row i is patch (i / cols, i % cols).
struct PatchFeatures {
  Var data;  // (n, d)
  int rows = 0;
  int cols = 0;

  int n() const { return rows * cols; }
  int dim() const { return static_cast<int>(data.cols()); }
};

// Per-class text embeddings, row 0 = real, row 1 = fake.
struct TextEmbedding {
  Var per_class;  // (2, d)
  bool normalized = false;
};

using TokenId = int;
inline constexpr TokenId kRealToken = 0;
inline constexpr TokenId kFakeToken = 1;

// Embedded prompt ready for the text encoder.
struct TokenSequence {
  Var tokens;           // (length, d)
  int class_index = 0;  // slot that carries the class token
};

}  // namespace vilaco
