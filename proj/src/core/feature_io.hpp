#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace mmvd::data {

/// Binary feature sequence container. Layout, all little endian:
///   bytes 0..3   magic "MVD1"
///   bytes 4..7   u32 rows (timesteps)
///   bytes 8..11  u32 cols (feature dim)
///   then rows*cols f32, row major
/// Values are rounded to f32 at generation time, so what a reader gets back
/// is bitwise what the writer held in memory.
void write_feature_file(const std::string& path, const Tensor& x);
Tensor read_feature_file(const std::string& path);

/// Rounds every element through f32. Generated features pass through this
/// before use so the on-disk and in-memory values agree exactly.
void round_to_f32(Tensor& x);

struct Bag {
  std::string id;
  int y = 0;  // bag label
  Tensor rgb, audio, flow;            // each T x D_modality
  std::vector<uint8_t> frame_labels;  // length T, RGB aligned
  int t() const { return rgb.ndim() == 2 ? rgb.rows() : 0; }
};

struct Dataset {
  int dim_rgb = 0, dim_audio = 0, dim_flow = 0;
  std::vector<Bag> bags;
  std::string gen_config_json;  // resolved generator config snapshot
};

/// Writes manifest.jsonl, per bag feature files and frame labels under dir.
/// Refuses to touch an existing dataset dir unless force is set.
void save_dataset(const Dataset& ds, const std::string& dir, bool force);

/// Reads a dataset written by save_dataset. Validates the declared dims
/// against every feature file, timestep agreement across modalities, label
/// length, and that y matches the frame labels.
Dataset load_dataset(const std::string& dir);

}  // namespace mmvd::data
