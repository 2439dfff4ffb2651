// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seglora/tensor.hpp"

namespace seglora {

struct VoxelGeometry {
  double slice_thickness_mm = 5.0;
  double pixel_height_mm = 0.5;
  double pixel_width_mm = 0.5;

  void validate() const;
};

/// Contrast-perturbed copies of one image. views[0] is the reference and
/// weights[0] == 1; weights decrease with distortion magnitude.
struct ContrastViewSet {
  std::vector<Tensor> views;
  std::vector<double> weights;
};

/// -sum_x L(x)*O(x)/(L(x)+O(x)), 0/0 treated as 0. L binary, O in [0,1].
double image_loss(const Tensor& annotation, const Tensor& prediction);

/// dLoss/dO, defined as 0 where L + O == 0.
Tensor image_loss_grad(const Tensor& annotation, const Tensor& prediction);

/// sum_i w_i * image_loss(L, forward_foreground(I_i)).
double mixed_loss(const ContrastViewSet& views, const Tensor& annotation,
                  const std::function<Tensor(const Tensor&)>& forward_foreground);

/// 2TP / (2TP + FN + FP) over two binary masks; 1.0 when both are empty.
double dice(const Tensor& annotation, const Tensor& prediction);

/// Milliliters: pixel count x thickness x pixel height x pixel width / 1000.
double blood_volume_ml(const Tensor& mask_stack, const VoxelGeometry& geom);

struct PatientResult {
  std::string patient_id;
  double dice = 0.0;
  double annotated_ml = 0.0;
  double predicted_ml = 0.0;
  std::string bin;  // filled by stratify_report
};

struct BinStats {
  std::string bin;
  int count = 0;
  double dice_mean = 0.0;
  double dice_std = 0.0;  // sample standard deviation between patients
};

struct EvalReport {
  std::vector<PatientResult> patients;
  std::vector<BinStats> bins;  // fixed volume bins, then "other" if hit, then "All"
  int out_of_range = 0;
};

/// Annotated-volume bin label; "other" outside (0, 300].
std::string volume_bin(double annotated_ml);

const std::vector<std::string>& standard_bins();

/// Groups patients by annotated volume and aggregates Dice per bin.
EvalReport stratify_report(const std::vector<PatientResult>& per_patient);

void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);
void write_volume_pairs_csv(const EvalReport& report, const std::string& path);

}  // namespace seglora
