#pragma once

#include <string>
#include <vector>

#include "core/feature_io.hpp"
#include "core/params.hpp"

namespace mmvd::eval {

/// Mean of precision-at-each-positive over the descending-score ranking.
/// Ties keep their original order. Errors without at least one positive.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct BagScores {
  std::string id;
  int y = 0;
  std::vector<double> s_rgb, s_audio, s_flow, s_fused;
  std::vector<uint8_t> frame_labels;
};

struct Report {
  double ap_fused = 0, ap_rgb = 0, ap_audio = 0, ap_flow = 0;
  int frames = 0;
  std::vector<BagScores> bags;
};

/// Scores one bag at full length: per-modality encoders and regressors,
/// then projections, fusion and the fused regressor. No subspace search, no
/// losses, no cropping.
BagScores infer(const model::ModelParams& mp, const data::Bag& bag);

/// Runs infer over the listed bags and computes frame-level average
/// precision per score stream across their concatenated frames.
Report evaluate(const model::ModelParams& mp, const data::Dataset& ds,
                const std::vector<int>& bag_indices);

/// Writes one trace file per bag (time, s_A, s_F, s_R, s_RAF, label) and a
/// summary file with the AP values. Refuses an empty report before touching
/// the filesystem.
void export_traces(const Report& rep, const std::string& out_dir);

}  // namespace mmvd::eval
