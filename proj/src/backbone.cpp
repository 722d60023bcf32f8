#include "vilaco/backbone.hpp"

#include "vilaco/errors.hpp"

#include <algorithm>
#include <cmath>

namespace vilaco {

namespace {

constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.25;

// Random projection of the raw patch for the first half of the width and of
// its 3x3 high-pass residual (x - box3(x), per channel, clipped at the patch
// border) for the rest. Still one fixed linear map of the patch pixels.
Matrix stub_projection(std::mt19937_64& rng, int p, int dim) {
  const int in = kChannels * p * p;
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  const int raw_cols = (dim + 1) / 2;
  Matrix w(in, dim);
  w.leftCols(raw_cols) = random_normal(rng, in, raw_cols, s);
  const Matrix b = random_normal(rng, in, dim - raw_cols, 4.0 * s);
  auto hp = w.rightCols(dim - raw_cols);
  hp = b;
  for (int c = 0; c < kChannels; ++c) {
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        const int i = (c * p + y) * p + x;
        const int y0 = std::max(0, y - 1), y1 = std::min(p - 1, y + 1);
        const int x0 = std::max(0, x - 1), x1 = std::min(p - 1, x + 1);
        const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
        for (int yy = y0; yy <= y1; ++yy) {
          for (int xx = x0; xx <= x1; ++xx) hp.row((c * p + yy) * p + xx) -= inv * b.row(i);
        }
      }
    }
  }
  return w;
}

FrozenBlock make_block(std::mt19937_64& rng, int d) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  FrozenBlock b;
  b.wq = ag::constant(random_normal(rng, d, d, s));
  b.wk = ag::constant(random_normal(rng, d, d, s));
  b.wv = ag::constant(random_normal(rng, d, d, s));
  b.wo = ag::constant(random_normal(rng, d, d, 0.5 * s));
  b.w1 = ag::constant(random_normal(rng, d, 2 * d, s));
  b.b1 = ag::constant(Matrix::Zero(1, 2 * d));
  b.w2 = ag::constant(random_normal(rng, 2 * d, d, 0.5 / std::sqrt(2.0 * d)));
  b.b2 = ag::constant(Matrix::Zero(1, d));
  return b;
}

std::vector<ag::AttentionGroup> global_group(int n) {
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  return {ag::AttentionGroup{all, all}};
}

// One group per token: keys are the grid cells within Chebyshev distance `radius`.
std::vector<ag::AttentionGroup> neighbourhood_groups(int grid, int radius) {
  std::vector<ag::AttentionGroup> groups;
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      ag::AttentionGroup g;
      g.queries.push_back(y * grid + x);
      for (int yy = std::max(0, y - radius); yy <= std::min(grid - 1, y + radius); ++yy) {
        for (int xx = std::max(0, x - radius); xx <= std::min(grid - 1, x + radius); ++xx) g.keys.push_back(yy * grid + xx);
      }
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

ag::Var block_forward(const FrozenBlock& b, const ag::Var& x, int heads, std::span<const ag::AttentionGroup> groups) {
  const auto n = x.rows();
  auto h = ag::layer_norm_rows(x);
  auto a = ag::attention(ag::matmul(h, b.wq), ag::matmul(h, b.wk), ag::matmul(h, b.wv), heads, groups);
  auto y = ag::add(x, ag::matmul(a, b.wo));
  h = ag::layer_norm_rows(y);
  auto m = ag::add(ag::matmul(h, b.w1), ag::broadcast(b.b1, n, b.w1.cols()));
  m = ag::add(ag::matmul(ag::gelu(m), b.w2), ag::broadcast(b.b2, n, b.w2.cols()));
  return ag::add(y, m);
}

void put_block(BlobFile& f, const std::string& prefix, const FrozenBlock& b) {
  f.tensors.emplace_back(prefix + ".wq", b.wq.value());
  f.tensors.emplace_back(prefix + ".wk", b.wk.value());
  f.tensors.emplace_back(prefix + ".wv", b.wv.value());
  f.tensors.emplace_back(prefix + ".wo", b.wo.value());
  f.tensors.emplace_back(prefix + ".w1", b.w1.value());
  f.tensors.emplace_back(prefix + ".b1", b.b1.value());
  f.tensors.emplace_back(prefix + ".w2", b.w2.value());
  f.tensors.emplace_back(prefix + ".b2", b.b2.value());
}

ag::Var take(const BlobFile& f, const std::string& name) {
  const Matrix* m = f.tensor(name);
  if (!m) throw CheckpointError("encoder weights missing tensor: " + name);
  return ag::constant(*m);
}

FrozenBlock get_block(const BlobFile& f, const std::string& prefix) {
  return {take(f, prefix + ".wq"), take(f, prefix + ".wk"), take(f, prefix + ".wv"),
          take(f, prefix + ".wo"), take(f, prefix + ".w1"), take(f, prefix + ".b1"),
          take(f, prefix + ".w2"), take(f, prefix + ".b2")};
}

void register_block(ParamStore& store, const std::string& prefix, const FrozenBlock& b) {
  store.add_existing(prefix + ".wq", "backbone", b.wq);
  store.add_existing(prefix + ".wk", "backbone", b.wk);
  store.add_existing(prefix + ".wv", "backbone", b.wv);
  store.add_existing(prefix + ".wo", "backbone", b.wo);
  store.add_existing(prefix + ".w1", "backbone", b.w1);
  store.add_existing(prefix + ".b1", "backbone", b.b1);
  store.add_existing(prefix + ".w2", "backbone", b.w2);
  store.add_existing(prefix + ".b2", "backbone", b.b2);
}

BlobFile load_encoder_file(const EncoderConfig& cfg) {
  if (cfg.weights_path.empty()) throw ConfigError("pretrained backend requires a weights path");
  BlobFile f = read_blob_file(cfg.weights_path);
  if (f.meta.count("kind") == 0 || f.meta.at("kind") != "encoder") {
    throw CheckpointError("not an encoder weight file: " + cfg.weights_path);
  }
  return f;
}

}  // namespace

Backend parse_backend(std::string_view name) {
  if (name == "stub") return Backend::Stub;
  if (name == "pretrained") return Backend::Pretrained;
  throw ConfigError("unknown encoder backend: " + std::string(name));
}

std::string_view backend_name(Backend b) { return b == Backend::Stub ? "stub" : "pretrained"; }

void validate(const EncoderConfig& cfg) {
  if (cfg.patch_size <= 0 || kImageSize % cfg.patch_size != 0) {
    throw ConfigError("patch_size " + std::to_string(cfg.patch_size) + " does not divide " +
                      std::to_string(kImageSize));
  }
  if (cfg.backend == Backend::Stub) {
    if (cfg.dim <= 0) throw ConfigError("encoder dim must be positive");
    if (cfg.heads <= 0 || cfg.dim % cfg.heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  }
}

TokenId tokenize_label(std::string_view label) {
  if (label == "real") return kRealToken;
  if (label == "fake") return kFakeToken;
  throw InputError("unknown class label: '" + std::string(label) + "'");
}

ImageEncoder::ImageEncoder(const EncoderConfig& cfg) : patch_size_(cfg.patch_size), heads_(cfg.heads) {
  validate(cfg);
  if (cfg.backend == Backend::Stub) {
    native_patch_ = cfg.patch_size;
    dim_ = cfg.dim;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x1001);
    const int n = (kImageSize / native_patch_) * (kImageSize / native_patch_);
    patch_proj_ = ag::constant(stub_projection(rng, native_patch_, dim_));
    position_ = ag::constant(random_normal(rng, n, dim_, 0.02));
    for (int i = 0; i < 2; ++i) blocks_.push_back(make_block(rng, dim_));
    return;
  }
  const BlobFile f = load_encoder_file(cfg);
  native_patch_ = std::stoi(f.meta_value("native_patch"));
  dim_ = std::stoi(f.meta_value("dim"));
  heads_ = std::stoi(f.meta_value("heads"));
  if (native_patch_ <= 0 || kImageSize % native_patch_ != 0) throw CheckpointError("bad native patch size");
  patch_proj_ = take(f, "image.patch_proj");
  position_ = take(f, "image.position");
  const int blocks = std::stoi(f.meta_value("image_blocks"));
  attn_radius_ = f.meta.count("attention_radius") ? std::stoi(f.meta_value("attention_radius")) : 0;
  for (int i = 0; i < blocks; ++i) blocks_.push_back(get_block(f, "image.block" + std::to_string(i)));
  const int in = kChannels * native_patch_ * native_patch_;
  const int n = (kImageSize / native_patch_) * (kImageSize / native_patch_);
  if (patch_proj_.rows() != in || patch_proj_.cols() != dim_ || position_.rows() != n) {
    throw CheckpointError("encoder weight shapes disagree with metadata");
  }
}

PatchFeatures ImageEncoder::encode_native(const ImageTensor& img) const {
  const int p = native_patch_;
  const int g = kImageSize / p;
  Matrix patches(g * g, kChannels * p * p);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      auto row = patches.row(gy * g + gx);
      int k = 0;
      for (int c = 0; c < kChannels; ++c) {
        for (int py = 0; py < p; ++py) {
          for (int px = 0; px < p; ++px) {
            row(k++) = (img.at(c, gy * p + py, gx * p + px) - kPixelMean) / kPixelStd;
          }
        }
      }
    }
  }
  auto x = ag::add(ag::matmul(ag::constant(std::move(patches)), patch_proj_), position_);
  const auto groups = attn_radius_ > 0 ? neighbourhood_groups(g, attn_radius_) : global_group(g * g);
  for (const auto& b : blocks_) x = block_forward(b, x, heads_, groups);
  return {x, g, g};
}

PatchFeatures ImageEncoder::encode(const ImageTensor& img) const {
  validate_image(img);
  PatchFeatures native = encode_native(img);
  const int g = grid();
  if (native.rows == g) return native;
  return {ag::constant(resample_grid(native.data.value(), native.rows, native.cols, g, g)), g, g};
}

void ImageEncoder::register_params(ParamStore& store) const {
  store.add_existing("backbone.image.patch_proj", "backbone", patch_proj_);
  store.add_existing("backbone.image.position", "backbone", position_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    register_block(store, "backbone.image.block" + std::to_string(i), blocks_[i]);
  }
}

void ImageEncoder::export_weights(BlobFile& file) const {
  file.meta["native_patch"] = std::to_string(native_patch_);
  file.meta["dim"] = std::to_string(dim_);
  file.meta["heads"] = std::to_string(heads_);
  file.meta["image_blocks"] = std::to_string(blocks_.size());
  file.meta["attention_radius"] = std::to_string(attn_radius_);
  file.tensors.emplace_back("image.patch_proj", patch_proj_.value());
  file.tensors.emplace_back("image.position", position_.value());
  for (std::size_t i = 0; i < blocks_.size(); ++i) put_block(file, "image.block" + std::to_string(i), blocks_[i]);
}

TextEncoder::TextEncoder(const EncoderConfig& cfg) : heads_(cfg.heads) {
  validate(cfg);
  if (cfg.backend == Backend::Stub) {
    dim_ = cfg.dim;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x2002);
    const Matrix table = random_normal(rng, 2, dim_, 1.0);
    for (int i = 0; i < 2; ++i) class_table_.push_back(ag::constant(table.row(i)));
    position_ = ag::constant(random_normal(rng, kMaxTokens, dim_, 0.1));
    block_ = make_block(rng, dim_);
    projection_ = ag::constant(random_normal(rng, dim_, dim_, 1.0 / std::sqrt(static_cast<double>(dim_))));
    return;
  }
  const BlobFile f = load_encoder_file(cfg);
  dim_ = std::stoi(f.meta_value("dim"));
  heads_ = std::stoi(f.meta_value("heads"));
  const Matrix table = take(f, "text.class_table").value();
  if (table.rows() != 2 || table.cols() != dim_) throw CheckpointError("class token table has wrong shape");
  for (int i = 0; i < 2; ++i) class_table_.push_back(ag::constant(table.row(i)));
  position_ = take(f, "text.position");
  block_ = get_block(f, "text.block");
  projection_ = take(f, "text.projection");
}

ag::Var TextEncoder::encode(const TokenSequence& seq) const {
  if (!seq.tokens.defined() || seq.tokens.rows() == 0) throw InputError("empty token sequence");
  if (seq.tokens.rows() > kMaxTokens) throw InputError("token sequence longer than 77");
  if (seq.tokens.cols() != dim_) {
    throw ShapeError("token width " + std::to_string(seq.tokens.cols()) + " != encoder width " +
                     std::to_string(dim_));
  }
  if (seq.class_index < 0 || seq.class_index >= seq.tokens.rows()) throw InputError("class slot out of range");
  auto x = block_forward(block_, seq.tokens, heads_, global_group(static_cast<int>(seq.tokens.rows())));
  x = ag::layer_norm_rows(x);
  const int slot = seq.class_index;
  return ag::matmul(ag::gather_rows(x, std::span(&slot, 1)), projection_);
}

const ag::Var& TextEncoder::class_embedding(TokenId id) const {
  if (id < 0 || id >= static_cast<TokenId>(class_table_.size())) throw InputError("unknown token id");
  return class_table_[static_cast<std::size_t>(id)];
}

ag::Var TextEncoder::positional(int length) const {
  if (length < 0 || length > kMaxTokens) throw InputError("prompt longer than the positional table");
  return ag::constant(position_.value().topRows(length));
}

void TextEncoder::register_params(ParamStore& store) const {
  for (std::size_t i = 0; i < class_table_.size(); ++i) {
    store.add_existing("class_tokens." + std::to_string(i), "class_tokens", class_table_[i]);
  }
  store.add_existing("backbone.text.position", "backbone", position_);
  register_block(store, "backbone.text.block", block_);
  store.add_existing("backbone.text.projection", "backbone", projection_);
}

void TextEncoder::export_weights(BlobFile& file) const {
  Matrix table(2, dim_);
  for (int i = 0; i < 2; ++i) table.row(i) = class_table_[static_cast<std::size_t>(i)].value();
  file.tensors.emplace_back("text.class_table", table);
  file.tensors.emplace_back("text.position", position_.value());
  put_block(file, "text.block", block_);
  file.tensors.emplace_back("text.projection", projection_.value());
}

void export_encoder_weights(const std::filesystem::path& path, const ImageEncoder& image,
                            const TextEncoder& text) {
  if (image.dim() != text.dim()) throw ConfigError("image/text encoder widths differ");
  BlobFile f;
  f.meta["kind"] = "encoder";
  image.export_weights(f);
  text.export_weights(f);
  write_blob_file(path, f);
}

Matrix resample_grid(const Matrix& features, int rows, int cols, int out_rows, int out_cols) {
  if (features.rows() != static_cast<Eigen::Index>(rows) * cols) throw ShapeError("resample_grid: bad grid");
  Matrix out(static_cast<Eigen::Index>(out_rows) * out_cols, features.cols());
  auto coord = [](int o, int n_in, int n_out) {
    double s = (o + 0.5) * n_in / static_cast<double>(n_out) - 0.5;
    if (s < 0.0) s = 0.0;
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > n_in - 1) i0 = n_in - 1;
    const int i1 = std::min(i0 + 1, n_in - 1);
    return std::tuple<int, int, double>(i0, i1, s - i0);
  };
  for (int y = 0; y < out_rows; ++y) {
    const auto [y0, y1, fy] = coord(y, rows, out_rows);
    for (int x = 0; x < out_cols; ++x) {
      const auto [x0, x1, fx] = coord(x, cols, out_cols);
      out.row(y * out_cols + x) = (1 - fy) * ((1 - fx) * features.row(y0 * cols + x0) + fx * features.row(y0 * cols + x1)) +
                                  fy * ((1 - fx) * features.row(y1 * cols + x0) + fx * features.row(y1 * cols + x1));
    }
  }
  return out;
}

}  // namespace vilaco
