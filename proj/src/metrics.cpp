#include "vilaco/metrics.hpp"

#include "vilaco/errors.hpp"
#include "vilaco/model.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

namespace vilaco {

namespace {

std::span<const double> mask_values(const MaskPrediction& pred) {
  const auto& m = pred.mask.value();
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

Confusion pixel_confusion(std::span<const double> prob, std::span<const std::uint8_t> target) {
  if (prob.size() != target.size()) throw InputError("pixel metric: prediction and mask sizes differ");
  Confusion c;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool p = prob[i] > kThreshold;
    const bool t = target[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

std::optional<double> f1_score(const Confusion& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

std::optional<double> pixel_f1(std::span<const double> prob, std::span<const std::uint8_t> target) {
  return f1_score(pixel_confusion(prob, target));
}

std::optional<double> pixel_f1(const MaskPrediction& pred, const BinaryMask& target) {
  if (pred.height != target.height || pred.width != target.width) {
    throw InputError("pixel_f1: prediction and mask shapes differ");
  }
  return pixel_f1(mask_values(pred), target.data);
}

double pixel_iou(std::span<const double> prob, std::span<const std::uint8_t> target) {
  const Confusion c = pixel_confusion(prob, target);
  const std::int64_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

double pixel_iou(const MaskPrediction& pred, const BinaryMask& target) {
  if (pred.height != target.height || pred.width != target.width) {
    throw InputError("pixel_iou: prediction and mask shapes differ");
  }
  return pixel_iou(mask_values(pred), target.data);
}

double image_f1(std::span<const std::pair<double, int>> pairs) {
  if (pairs.empty()) throw InputError("image_f1: no predictions");
  Confusion c;
  for (const auto& [score, label] : pairs) {
    const bool p = score > kThreshold;
    if (p && label) ++c.tp;
    else if (p) ++c.fp;
    else if (label) ++c.fn;
    else ++c.tn;
  }
  return f1_score(c).value_or(0.0);
}

double combined_f1(double p_f1, double i_f1) {
  if (!(p_f1 >= 0.0 && p_f1 <= 1.0 && i_f1 >= 0.0 && i_f1 <= 1.0)) {
    throw InputError("combined_f1: inputs must lie in [0, 1]");
  }
  if (p_f1 == 0.0 || i_f1 == 0.0) return 0.0;
  return 2.0 * p_f1 * i_f1 / (p_f1 + i_f1);
}

EvalReport summarize(std::vector<ImageResult> results) {
  EvalReport r;
  std::vector<std::pair<double, int>> pairs;
  double f1_sum = 0.0, iou_sum = 0.0;
  int fakes = 0;
  for (const auto& res : results) {
    pairs.emplace_back(res.coarse, res.label);
    if (res.label == 1 && res.p_f1) {
      f1_sum += *res.p_f1;
      iou_sum += res.iou.value_or(0.0);
      ++fakes;
    }
  }
  if (!pairs.empty()) r.i_f1 = image_f1(pairs);
  if (fakes > 0) {
    r.p_f1 = f1_sum / fakes;
    r.iou = iou_sum / fakes;
  }
  r.c_f1 = combined_f1(r.p_f1, r.i_f1);
  r.per_image = std::move(results);
  return r;
}

std::string report_json(const EvalReport& r, const std::string& dataset) {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["p_f1"] = r.p_f1;
  j["i_f1"] = r.i_f1;
  j["c_f1"] = r.c_f1;
  j["pixel_iou"] = r.iou;
  j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& im : r.per_image) {
    nlohmann::ordered_json e;
    e["id"] = im.id;
    e["label"] = im.label;
    e["y_coarse"] = im.coarse;
    e["y_fine"] = im.fine;
    e["p_f1"] = im.p_f1 ? nlohmann::ordered_json(*im.p_f1) : nlohmann::ordered_json(nullptr);
    e["iou"] = im.iou ? nlohmann::ordered_json(*im.iou) : nlohmann::ordered_json(nullptr);
    j["per_image"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 7;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  auto cell = [&](const std::string& s, std::size_t w) {
    out << s << std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  cell("Dataset", width);
  out << "  P-F1   I-F1   C-F1   IoU\n";
  out << std::string(width + 28, '-') << "\n";
  for (const auto& [name, r] : rows) {
    cell(name, width);
    out << "  " << fmt3(r.p_f1) << "  " << fmt3(r.i_f1) << "  " << fmt3(r.c_f1) << "  " << fmt3(r.iou) << "\n";
  }
  return out.str();
}

std::string report_table(const EvalReport& r, const std::string& dataset) {
  return report_table(std::vector<std::pair<std::string, EvalReport>>{{dataset, r}});
}

EvalReport evaluate(const Model& model, const std::vector<EvalSample>& samples) {
  std::vector<ImageResult> results;
  for (const auto& s : samples) {
    const auto outp = model.forward(s.image);
    ImageResult r;
    r.id = s.id;
    r.label = s.label;
    r.coarse = outp.coarse.prob.scalar();
    r.fine = outp.fine_prob.scalar();
    if (s.label == 1) {
      r.p_f1 = pixel_f1(outp.mask, s.mask);
      r.iou = pixel_iou(outp.mask, s.mask);
    }
    results.push_back(std::move(r));
  }
  return summarize(std::move(results));
}

}  // namespace vilaco
