#pragma once

// Pixel, image and combined F1 at a fixed 0.5 threshold, plus pixel IoU.

#include "vilaco/data.hpp"
#include "vilaco/heads.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vilaco {

inline constexpr double kThreshold = 0.5;

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

// Binarises prob (> 0.5) against a {0,1} target. Throws InputError on size mismatch.
Confusion pixel_confusion(std::span<const double> prob, std::span<const std::uint8_t> target);

// 2TP / (2TP + FP + FN); nullopt when prediction and target are both empty.
std::optional<double> f1_score(const Confusion& c);

std::optional<double> pixel_f1(std::span<const double> prob, std::span<const std::uint8_t> target);
std::optional<double> pixel_f1(const MaskPrediction& pred, const BinaryMask& target);

// IoU of the binarised prediction; 1 when both are empty.
double pixel_iou(std::span<const double> prob, std::span<const std::uint8_t> target);
double pixel_iou(const MaskPrediction& pred, const BinaryMask& target);

// (score, label) pairs; F1 over the fake class. Throws InputError when empty.
double image_f1(std::span<const std::pair<double, int>> pairs);

// Harmonic mean, 0 if either input is 0. Throws InputError outside [0, 1].
double combined_f1(double p_f1, double i_f1);

struct ImageResult {
  std::string id;
  int label = 0;
  double coarse = 0.0;
  double fine = 0.0;
  std::optional<double> p_f1;  // fake images only
  std::optional<double> iou;   // fake images only
};

struct EvalReport {
  double p_f1 = 0.0;  // mean per-image pixel F1 over fake images
  double i_f1 = 0.0;  // from the coarse image score
  double c_f1 = 0.0;
  double iou = 0.0;   // mean pixel IoU over fake images
  std::vector<ImageResult> per_image;
};

EvalReport summarize(std::vector<ImageResult> results);

class Model;
// Forward pass over an eval split; I-F1 uses the coarse score.
EvalReport evaluate(const Model& model, const std::vector<EvalSample>& samples);

std::string report_json(const EvalReport& r, const std::string& dataset);
std::string report_table(const EvalReport& r, const std::string& dataset);
// Several datasets side by side, one row each.
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace vilaco
