// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#include "seglora/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "seglora/errors.hpp"

namespace seglora {

namespace {

void check_binary(const Tensor& t, const std::string& what) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw UsageError(what + " must be binary, found value " + std::to_string(t[i]));
}

void check_mask_pair(const Tensor& annotation, const Tensor& prediction) {
  if (!annotation.same_shape(prediction))
    throw UsageError("annotation/prediction shape mismatch: " + shape_str(annotation.shape()) + " vs " +
                     shape_str(prediction.shape()));
  check_binary(annotation, "annotation mask");
  if (!prediction.all_finite()) throw NumericalError("prediction contains non-finite values");
  for (std::int64_t i = 0; i < prediction.size(); ++i)
    if (prediction[i] < 0.0 || prediction[i] > 1.0)
      throw UsageError("prediction values must lie in [0,1], found " + std::to_string(prediction[i]));
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace

void VoxelGeometry::validate() const {
  if (!(slice_thickness_mm > 0.0) || !(pixel_height_mm > 0.0) || !(pixel_width_mm > 0.0))
    throw UsageError("voxel geometry must be strictly positive");
}

double image_loss(const Tensor& annotation, const Tensor& prediction) {
  check_mask_pair(annotation, prediction);
  double loss = 0.0;
  for (std::int64_t i = 0; i < annotation.size(); ++i) {
    const double d = annotation[i] + prediction[i];
    if (d > 0.0) loss -= annotation[i] * prediction[i] / d;
  }
  return loss;
}

Tensor image_loss_grad(const Tensor& annotation, const Tensor& prediction) {
  check_mask_pair(annotation, prediction);
  Tensor g(prediction.shape());
  for (std::int64_t i = 0; i < annotation.size(); ++i) {
    const double l = annotation[i];
    const double d = l + prediction[i];
    g[i] = d > 0.0 ? -l * l / (d * d) : 0.0;
  }
  return g;
}

double mixed_loss(const ContrastViewSet& views, const Tensor& annotation,
                  const std::function<Tensor(const Tensor&)>& forward_foreground) {
  if (views.views.size() != views.weights.size())
    throw UsageError("view/weight count mismatch: " + std::to_string(views.views.size()) + " vs " +
                     std::to_string(views.weights.size()));
  if (views.views.empty()) throw UsageError("mixed_loss requires at least one view");
  double loss = 0.0;
  for (std::size_t i = 0; i < views.views.size(); ++i)
    loss += views.weights[i] * image_loss(annotation, forward_foreground(views.views[i]));
  return loss;
}

double dice(const Tensor& annotation, const Tensor& prediction) {
  if (!annotation.same_shape(prediction))
    throw UsageError("dice: shape mismatch " + shape_str(annotation.shape()) + " vs " +
                     shape_str(prediction.shape()));
  check_binary(annotation, "annotation mask");
  check_binary(prediction, "prediction mask");
  long long tp = 0, fp = 0, fn = 0;
  for (std::int64_t i = 0; i < annotation.size(); ++i) {
    if (annotation[i] == 1.0 && prediction[i] == 1.0) ++tp;
    else if (prediction[i] == 1.0) ++fp;
    else if (annotation[i] == 1.0) ++fn;
  }
  if (tp + fp + fn == 0) return 1.0;  // both empty: perfect agreement
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fn + fp);
}

double blood_volume_ml(const Tensor& mask_stack, const VoxelGeometry& geom) {
  geom.validate();
  check_binary(mask_stack, "mask");
  long long n = 0;
  for (std::int64_t i = 0; i < mask_stack.size(); ++i) n += mask_stack[i] == 1.0 ? 1 : 0;
  return static_cast<double>(n) * geom.slice_thickness_mm * geom.pixel_width_mm * geom.pixel_height_mm / 1000.0;
}

const std::vector<std::string>& standard_bins() {
  static const std::vector<std::string> bins = {"(0,25]", "(25,50]", "(50,100]", "(100,300]"};
  return bins;
}

std::string volume_bin(double annotated_ml) {
  if (annotated_ml > 0.0 && annotated_ml <= 25.0) return "(0,25]";
  if (annotated_ml > 25.0 && annotated_ml <= 50.0) return "(25,50]";
  if (annotated_ml > 50.0 && annotated_ml <= 100.0) return "(50,100]";
  if (annotated_ml > 100.0 && annotated_ml <= 300.0) return "(100,300]";
  return "other";
}

namespace {

BinStats aggregate(const std::string& bin, const std::vector<double>& dices) {
  BinStats s;
  s.bin = bin;
  s.count = static_cast<int>(dices.size());
  if (dices.empty()) return s;
  double sum = 0.0;
  for (double d : dices) sum += d;
  s.dice_mean = sum / static_cast<double>(dices.size());
  if (dices.size() > 1) {
    double sq = 0.0;
    for (double d : dices) sq += (d - s.dice_mean) * (d - s.dice_mean);
    s.dice_std = std::sqrt(sq / static_cast<double>(dices.size() - 1));
  }
  return s;
}

}  // namespace

EvalReport stratify_report(const std::vector<PatientResult>& per_patient) {
  EvalReport rep;
  rep.patients = per_patient;
  std::vector<double> all;
  std::vector<double> other;
  std::vector<std::vector<double>> grouped(standard_bins().size());
  for (PatientResult& p : rep.patients) {
    p.bin = volume_bin(p.annotated_ml);
    all.push_back(p.dice);
    if (p.bin == "other") {
      rep.out_of_range++;
      other.push_back(p.dice);
      continue;
    }
    for (std::size_t b = 0; b < standard_bins().size(); ++b)
      if (standard_bins()[b] == p.bin) grouped[b].push_back(p.dice);
  }
  for (std::size_t b = 0; b < standard_bins().size(); ++b) rep.bins.push_back(aggregate(standard_bins()[b], grouped[b]));
  if (!other.empty()) rep.bins.push_back(aggregate("other", other));
  rep.bins.push_back(aggregate("All", all));
  return rep;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "patient_id,dice,annotated_ml,predicted_ml,bin\n";
  for (const PatientResult& p : report.patients)
    out << p.patient_id << "," << format_double(p.dice) << "," << format_double(p.annotated_ml) << ","
        << format_double(p.predicted_ml) << "," << p.bin << "\n";
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["bins"] = nlohmann::json::array();
  for (const BinStats& b : report.bins)
    j["bins"].push_back({{"bin", b.bin}, {"count", b.count}, {"dice_mean", b.dice_mean}, {"dice_std", b.dice_std}});
  j["out_of_range"] = report.out_of_range;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

void write_volume_pairs_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "patient_id,annotated_ml,predicted_ml\n";
  for (const PatientResult& p : report.patients)
    out << p.patient_id << "," << format_double(p.annotated_ml) << "," << format_double(p.predicted_ml) << "\n";
}

}  // namespace seglora
