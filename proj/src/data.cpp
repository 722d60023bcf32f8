#include "vilaco/data.hpp"

#include "vilaco/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vilaco {

namespace fs = std::filesystem;

namespace {

using Rng = std::mt19937_64;

// Authentic captures carry a weak checkerboard demosaicing residue with this
// per-channel sign; edits either remove it or shift its phase.
constexpr double kTraceAmplitude = 0.04;
constexpr double kSensorNoise = 0.01;
constexpr float kTraceSign[3] = {1.0f, -1.0f, 1.0f};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::vector<cv::Point> star_polygon(Rng& rng, double cx, double cy, double radius, int vertices,
                                    const std::vector<double>& radii, const std::vector<double>& angles) {
  std::vector<cv::Point> pts;
  for (int i = 0; i < vertices; ++i) {
    const double r = radius * radii[static_cast<std::size_t>(i)];
    pts.emplace_back(static_cast<int>(std::lround(cx + r * std::cos(angles[static_cast<std::size_t>(i)]))),
                     static_cast<int>(std::lround(cy + r * std::sin(angles[static_cast<std::size_t>(i)]))));
  }
  (void)rng;
  return pts;
}

void random_star(Rng& rng, int vertices, std::vector<double>& radii, std::vector<double>& angles) {
  radii.resize(static_cast<std::size_t>(vertices));
  angles.resize(static_cast<std::size_t>(vertices));
  for (int i = 0; i < vertices; ++i) {
    radii[static_cast<std::size_t>(i)] = uniform(rng, 0.6, 1.0);
    angles[static_cast<std::size_t>(i)] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  std::sort(angles.begin(), angles.end());
}

double unit_area(const std::vector<double>& radii, const std::vector<double>& angles) {
  double area = 0.0;
  const std::size_t n = radii.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    const double xi = radii[i] * std::cos(angles[i]);
    const double yi = radii[i] * std::sin(angles[i]);
    const double xj = radii[j] * std::cos(angles[j]);
    const double yj = radii[j] * std::sin(angles[j]);
    area += xi * yj - xj * yi;
  }
  return std::abs(area) / 2.0;
}

// Smooth gradient + low-frequency shading + overlapping polygons.
cv::Mat base_scene(Rng& rng) {
  cv::Mat img(kImageSize, kImageSize, CV_32FC3);
  cv::Vec3f c0, c1;
  for (int c = 0; c < 3; ++c) {
    c0[c] = static_cast<float>(uniform(rng, 0.2, 0.8));
    c1[c] = static_cast<float>(uniform(rng, 0.2, 0.8));
  }
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  double fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = uniform(rng, 0.005, 0.03);
    fy[c] = uniform(rng, 0.005, 0.03);
    ph[c] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      double t = ((x - 128) * std::cos(angle) + (y - 128) * std::sin(angle)) / kImageSize + 0.5;
      t = std::clamp(t, 0.0, 1.0);
      auto& px = img.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<float>((1 - t) * c0[c] + t * c1[c] + 0.04 * std::sin(fx[c] * x + fy[c] * y + ph[c]));
      }
    }
  }
  const int shapes = uniform_int(rng, 3, 6);
  std::vector<double> radii, angles;
  for (int s = 0; s < shapes; ++s) {
    const int vertices = uniform_int(rng, 3, 7);
    random_star(rng, vertices, radii, angles);
    const auto pts = star_polygon(rng, uniform(rng, 0, kImageSize), uniform(rng, 0, kImageSize),
                                  uniform(rng, 15, 70), vertices, radii, angles);
    cv::Scalar color(uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85));
    const double alpha = uniform(rng, 0.5, 1.0);
    cv::Mat overlay = img.clone();
    cv::fillPoly(overlay, std::vector<std::vector<cv::Point>>{pts}, color, cv::LINE_8);
    cv::addWeighted(overlay, alpha, img, 1.0 - alpha, 0.0, img);
  }
  cv::GaussianBlur(img, img, cv::Size(0, 0), 0.7);
  return img;
}

void add_camera_trace(cv::Mat& img, int phase, Rng& rng) {
  std::normal_distribution<double> noise(0.0, kSensorNoise);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      const float s = ((x + y + phase) % 2 == 0) ? 1.0f : -1.0f;
      auto& px = img.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = px[c] + kTraceAmplitude * s * kTraceSign[c] + noise(rng);
        px[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

cv::Mat authentic_image(Rng& rng, int phase) {
  cv::Mat img = base_scene(rng);
  add_camera_trace(img, phase, rng);
  return img;
}

cv::Mat region_mask(Rng& rng, double area_min, double area_max) {
  const double total = static_cast<double>(kImageSize) * kImageSize;
  std::vector<double> radii, angles;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double target = uniform(rng, area_min, area_max) * total;
    const int vertices = uniform_int(rng, 5, 9);
    random_star(rng, vertices, radii, angles);
    const double a1 = unit_area(radii, angles);
    if (a1 < 0.2) continue;
    const double radius = std::sqrt(target / a1);
    const double reach = radius * *std::max_element(radii.begin(), radii.end());
    if (reach > kImageSize / 2.0 - 2) continue;
    const double cx = uniform(rng, reach + 1, kImageSize - reach - 1);
    const double cy = uniform(rng, reach + 1, kImageSize - reach - 1);
    cv::Mat mask = cv::Mat::zeros(kImageSize, kImageSize, CV_8UC1);
    cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{star_polygon(rng, cx, cy, radius, vertices, radii, angles)},
                 cv::Scalar(1), cv::LINE_8);
    const double frac = cv::countNonZero(mask) / total;
    if (frac >= area_min && frac <= area_max) return mask;
  }
  throw ConfigError("could not draw a tamper region inside the requested area range");
}

void paste(cv::Mat& host, const cv::Mat& source, const cv::Mat& mask) { source.copyTo(host, mask); }

void copy_move(cv::Mat& host, const cv::Mat& mask, Rng& rng) {
  const cv::Rect box = cv::boundingRect(mask);
  // Source pixel for target p is p - (dx, dy); keep the source inside the frame.
  const int dx_lo = box.x + box.width - kImageSize;
  const int dx_hi = box.x;
  const int dy_lo = box.y + box.height - kImageSize;
  const int dy_hi = box.y;
  int dx = 0, dy = 0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    dx = uniform_int(rng, dx_lo, dx_hi);
    dy = uniform_int(rng, dy_lo, dy_hi);
    if ((dx + dy) % 2 != 0 && std::abs(dx) + std::abs(dy) >= 16) break;
  }
  if ((dx + dy) % 2 == 0) dy += (dy < dy_hi) ? 1 : -1;
  const cv::Mat src = host.clone();
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      if (mask.at<unsigned char>(y, x)) host.at<cv::Vec3f>(y, x) = src.at<cv::Vec3f>(y - dy, x - dx);
    }
  }
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr, out;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(out, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image: " + path.string());
}

ImageTensor from_mat(const cv::Mat& rgb) {
  ImageTensor t(rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    for (int x = 0; x < rgb.cols; ++x) {
      const auto& px = rgb.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = std::clamp(px[c], 0.0f, 1.0f);
    }
  }
  return t;
}

cv::Mat to_mat(const ImageTensor& t) {
  cv::Mat rgb(t.height, t.width, CV_32FC3);
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      auto& px = rgb.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = t.at(c, y, x);
    }
  }
  return rgb;
}


std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TamperKind parse_tamper_kind(std::string_view name) {
  if (name == "splice") return TamperKind::Splice;
  if (name == "copy_move") return TamperKind::CopyMove;
  if (name == "inpaint_blur") return TamperKind::InpaintBlur;
  throw ConfigError("unknown tamper kind: " + std::string(name));
}

std::string_view tamper_kind_name(TamperKind k) {
  switch (k) {
    case TamperKind::Splice:
      return "splice";
    case TamperKind::CopyMove:
      return "copy_move";
    case TamperKind::InpaintBlur:
      return "inpaint_blur";
  }
  return "splice";
}

void validate(const GenSpec& spec) {
  if (spec.count < 2) throw ConfigError("count must be at least 2");
  if (!(spec.fake_ratio >= 0.0 && spec.fake_ratio <= 1.0)) throw ConfigError("fake_ratio must lie in [0, 1]");
  if (!(spec.area_min > 0.0 && spec.area_min <= spec.area_max && spec.area_max < 1.0)) {
    throw ConfigError("area range must satisfy 0 < min <= max < 1");
  }
  if (spec.kinds.empty()) throw ConfigError("at least one tamper kind is required");
}

std::size_t BinaryMask::positives() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

fs::path generate_corpus(const GenSpec& spec, const fs::path& out_dir) {
  validate(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create corpus directory " + out_dir.string() + ": " + ec.message());

  Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5005);
  const int fakes = static_cast<int>(std::lround(spec.fake_ratio * spec.count));
  std::vector<int> order(static_cast<std::size_t>(spec.count));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> is_fake(static_cast<std::size_t>(spec.count), 0);
  for (int i = 0; i < fakes; ++i) is_fake[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  std::vector<ManifestRecord> records;
  int fake_index = 0;
  for (int i = 0; i < spec.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d", i);
    ManifestRecord rec;
    rec.path = std::string("images/") + name + ".png";
    cv::Mat img = authentic_image(rng, 0);
    if (is_fake[static_cast<std::size_t>(i)]) {
      rec.label = 1;
      rec.mask_path = std::string("masks/") + name + "_mask.png";
      const cv::Mat mask = region_mask(rng, spec.area_min, spec.area_max);
      const TamperKind kind = spec.kinds[static_cast<std::size_t>(fake_index++) % spec.kinds.size()];
      switch (kind) {
        case TamperKind::Splice:
          paste(img, authentic_image(rng, 1), mask);
          break;
        case TamperKind::CopyMove:
          copy_move(img, mask, rng);
          break;
        case TamperKind::InpaintBlur: {
          cv::Mat blurred;
          cv::GaussianBlur(img, blurred, cv::Size(0, 0), 2.5);
          paste(img, blurred, mask);
          break;
        }
      }
      cv::Mat mask8 = mask * 255;
      if (!cv::imwrite((out_dir / rec.mask_path).string(), mask8)) {
        throw IoError("cannot write mask: " + (out_dir / rec.mask_path).string());
      }
    }
    write_rgb(out_dir / rec.path, img);
    records.push_back(std::move(rec));
  }
  const fs::path manifest = out_dir / kManifestName;
  write_manifest(manifest, records);
  return manifest;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestRecord>& records) {
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + manifest.string());
  out << "path\tlabel\tmask_path\n";
  for (const auto& r : records) out << r.path << '\t' << r.label << '\t' << r.mask_path << '\n';
  if (!out) throw IoError("failed writing manifest: " + manifest.string());
}

std::vector<ManifestRecord> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest: " + manifest.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (line.back() == '\t') fields.emplace_back();
    if (line_no == 1 && !fields.empty() && fields[0] == "path") continue;
    if (fields.size() < 2 || fields.size() > 3 || (fields[1] != "0" && fields[1] != "1")) {
      throw DatasetError(manifest.string() + ":" + std::to_string(line_no) + ": malformed manifest row");
    }
    records.push_back({fields[0], fields[1] == "1" ? 1 : 0, fields.size() == 3 ? fields[2] : ""});
  }
  return records;
}

std::vector<ManifestRecord> discover_dataset(const fs::path& root) {
  if (fs::exists(root / kManifestName)) return read_manifest(root / kManifestName);
  if (fs::is_directory(root / "Au") && fs::is_directory(root / "Tp")) {
    std::vector<ManifestRecord> records;
    for (const auto& p : sorted_files(root / "Au")) records.push_back({fs::relative(p, root).string(), 0, ""});
    for (const auto& p : sorted_files(root / "Tp")) {
      ManifestRecord rec{fs::relative(p, root).string(), 1, ""};
      const std::string stem = p.stem().string();
      for (const char* suffix : {"_gt.png", ".png", "_gt.tif", ".tif", "_gt.jpg"}) {
        const fs::path cand = root / "Gt" / (stem + suffix);
        if (fs::exists(cand)) {
          rec.mask_path = fs::relative(cand, root).string();
          break;
        }
      }
      records.push_back(std::move(rec));
    }
    return records;
  }
  if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root.string());
  throw DatasetError("no manifest.tsv or Au/Tp layout under " + root.string());
}

ImageTensor load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
  if (bgr.rows != kImageSize || bgr.cols != kImageSize) {
    cv::resize(bgr, bgr, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);
  }
  cv::Mat rgb, f;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return from_mat(f);
}

BinaryMask load_mask(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("mask not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot decode mask: " + path.string());
  if (m.rows != kImageSize || m.cols != kImageSize) {
    cv::resize(m, m, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_NEAREST);
  }
  BinaryMask mask;
  mask.data.resize(static_cast<std::size_t>(kImageSize) * kImageSize);
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      mask.data[static_cast<std::size_t>(y) * kImageSize + x] = m.at<unsigned char>(y, x) / 255.0 > 0.5 ? 1 : 0;
    }
  }
  return mask;
}

std::vector<TrainSample> load_train_split(const fs::path& root) {
  std::vector<TrainSample> out;
  for (const auto& rec : discover_dataset(root)) {
    out.push_back({rec.path, load_image(root / rec.path), rec.label});
  }
  return out;
}

std::vector<EvalSample> load_eval_split(const fs::path& root) {
  std::vector<EvalSample> out;
  for (const auto& rec : discover_dataset(root)) {
    EvalSample s{rec.path, load_image(root / rec.path), rec.label, {}};
    if (rec.label == 1) {
      if (rec.mask_path.empty()) throw DatasetError("fake sample has no mask: " + rec.path);
      s.mask = load_mask(root / rec.mask_path);
      if (s.mask.positives() == 0) throw DatasetError("fake sample has an empty mask: " + rec.path);
    } else if (rec.mask_path.empty()) {
      s.mask.data.assign(static_cast<std::size_t>(kImageSize) * kImageSize, 0);
    } else {
      s.mask = load_mask(root / rec.mask_path);
      if (s.mask.positives() != 0) throw DatasetError("authentic sample has a non-empty mask: " + rec.path);
    }
    out.push_back(std::move(s));
  }
  return out;
}

AugmentDecision draw_augment(Rng& rng) {
  AugmentDecision d;
  d.flip = std::bernoulli_distribution(0.5)(rng);
  d.scale = uniform(rng, 0.8, 1.0);
  d.crop_side = std::clamp(static_cast<int>(std::lround(kImageSize * std::sqrt(d.scale))), 1, kImageSize);
  d.crop_x = uniform_int(rng, 0, kImageSize - d.crop_side);
  d.crop_y = uniform_int(rng, 0, kImageSize - d.crop_side);
  return d;
}

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out(img.height, img.width);
  for (int c = 0; c < kChannels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

ImageTensor apply_augment(const ImageTensor& img, const AugmentDecision& d) {
  ImageTensor out = img;
  if (d.crop_side != img.width || d.crop_x != 0 || d.crop_y != 0) {
    cv::Mat m = to_mat(img);
    cv::Mat crop = m(cv::Rect(d.crop_x, d.crop_y, d.crop_side, d.crop_side)).clone();
    cv::resize(crop, crop, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);
    out = from_mat(crop);
  }
  return d.flip ? hflip(out) : out;
}

TrainSample augment(const TrainSample& sample, Rng& rng) {
  return {sample.id, apply_augment(sample.image, draw_augment(rng)), sample.label};
}

TrainLoader::TrainLoader(const std::vector<TrainSample>& samples, int batch_size, bool shuffle)
    : samples_(samples), batch_size_(batch_size), shuffle_(shuffle) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
}

std::vector<std::vector<const TrainSample*>> TrainLoader::epoch_batches(Rng& rng) const {
  std::vector<std::size_t> order(samples_.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<const TrainSample*>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size_)) {
    std::vector<const TrainSample*> b;
    for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(batch_size_)); ++j) {
      b.push_back(&samples_[order[j]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace vilaco
