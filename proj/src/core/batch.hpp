#pragma once

#include <vector>

#include "core/feature_io.hpp"
#include "core/rng.hpp"

namespace mmvd::data {

/// One bag prepared for the model: cropped or zero padded at the end to a
/// fixed number of rows. valid_len marks the prefix that is real data;
/// everything the model does downstream (attention, scoring, losses,
/// flattening) restricts itself to that prefix.
struct BatchItem {
  int bag_index = -1;
  int crop_start = 0;
  int valid_len = 0;
  real y = 0;
  Tensor rgb, audio, flow;  // t_train rows each
};

struct Batch {
  int t_train = 0;
  std::vector<BatchItem> items;
};

/// Samples batch_size bags from pool (indices into ds.bags) uniformly with
/// replacement, then forces at least one bag of each class whenever the pool
/// holds both and batch_size >= 2. Long bags get a uniform random crop,
/// short ones zero padding at the end. frame_drop_rate optionally zeroes
/// random valid rows per modality, a robustness knob, off by default.
Batch make_batch(const Dataset& ds, const std::vector<int>& pool, int batch_size,
                 int t_train, double frame_drop_rate, Rng& rng);

}  // namespace mmvd::data
