#pragma once

// Frozen image and text encoders. The stub backend builds seeded random
// weights (linear patch projection + two self-attention blocks for images,
// one block for text); the pretrained backend loads the same architecture
// from a weight file and resamples its native patch grid to the requested one.

#include "vilaco/checkpoint.hpp"
#include "vilaco/params.hpp"
#include "vilaco/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vilaco {

enum class Backend { Stub, Pretrained };

Backend parse_backend(std::string_view name);
std::string_view backend_name(Backend b);

struct EncoderConfig {
  int patch_size = 8;
  int dim = 64;  // ignored by the pretrained backend
  Backend backend = Backend::Stub;
  std::uint64_t seed = 0;
  std::string weights_path;  // pretrained backend only
  int heads = 4;
};

// Throws ConfigError on a patch size that does not tile the image or a bad width.
void validate(const EncoderConfig& cfg);

// Fixed [real, fake] table; anything else is an InputError.
TokenId tokenize_label(std::string_view label);

// Pre-norm transformer block with frozen weights.
struct FrozenBlock {
  ag::Var wq, wk, wv, wo, w1, b1, w2, b2;
};

class ImageEncoder {
 public:
  explicit ImageEncoder(const EncoderConfig& cfg);

  // (n, d) patch tokens; n = (256 / patch_size)^2.
  PatchFeatures encode(const ImageTensor& img) const;

  int dim() const { return dim_; }
  int patch_size() const { return patch_size_; }
  int grid() const { return kImageSize / patch_size_; }

  void register_params(ParamStore& store) const;
  void export_weights(BlobFile& file) const;

 private:
  PatchFeatures encode_native(const ImageTensor& img) const;

  int patch_size_;       // requested
  int native_patch_;     // patch size the weights were built for
  int dim_;
  int heads_;
  int attn_radius_ = 1;  // 0: global attention; stub attends to its 3x3 grid neighbourhood
  ag::Var patch_proj_;   // (3 p^2, d)
  ag::Var position_;     // (n_native, d)
  std::vector<FrozenBlock> blocks_;
};

class TextEncoder {
 public:
  static constexpr int kMaxTokens = 77;

  explicit TextEncoder(const EncoderConfig& cfg);

  // One d-vector per token sequence, read at the class slot. Gradients flow
  // back into `tokens.tokens`; the encoder weights are constants.
  ag::Var encode(const TokenSequence& tokens) const;

  const ag::Var& class_embedding(TokenId id) const;
  // First `length` rows of the frozen positional table.
  ag::Var positional(int length) const;
  int dim() const { return dim_; }

  void register_params(ParamStore& store) const;
  void export_weights(BlobFile& file) const;

 private:
  int dim_;
  int heads_;
  std::vector<ag::Var> class_table_;  // one (1, d) row per label
  ag::Var position_;                  // (kMaxTokens, d)
  FrozenBlock block_;
  ag::Var projection_;                // (d, d)
};

// Writes a weight file the pretrained backend can load.
void export_encoder_weights(const std::filesystem::path& path, const ImageEncoder& image,
                            const TextEncoder& text);

// Bilinear resampling of a (rows*cols, d) grid to (out_rows*out_cols, d).
Matrix resample_grid(const Matrix& features, int rows, int cols, int out_rows, int out_cols);

}  // namespace vilaco
