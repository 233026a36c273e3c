#include "core/batch.hpp"

#include <algorithm>

#include "core/error.hpp"

namespace mmvd::data {

namespace {
Tensor crop_pad(const Tensor& x, int start, int valid, int t_train) {
  Tensor out({t_train, x.cols()});
  for (int r = 0; r < valid; ++r)
    std::copy(x.data() + static_cast<size_t>(start + r) * x.cols(),
              x.data() + static_cast<size_t>(start + r + 1) * x.cols(),
              out.data() + static_cast<size_t>(r) * x.cols());
  return out;  // rows >= valid stay zero
}

void drop_frames(Tensor& x, int valid, double rate, Rng& rng) {
  for (int r = 0; r < valid; ++r)
    if (rng.uniform() < rate)
      std::fill(x.data() + static_cast<size_t>(r) * x.cols(),
                x.data() + static_cast<size_t>(r + 1) * x.cols(), real(0));
}
}  // namespace

Batch make_batch(const Dataset& ds, const std::vector<int>& pool, int batch_size,
                 int t_train, double frame_drop_rate, Rng& rng) {
  MMVD_CHECK(!pool.empty(), ErrorCode::InvalidArgument, "make_batch: empty bag pool");
  MMVD_CHECK(batch_size >= 1, ErrorCode::InvalidArgument,
             "make_batch: batch_size ", batch_size);
  MMVD_CHECK(t_train >= 16, ErrorCode::InvalidArgument,
             "make_batch: t_train must be >= 16, got ", t_train);
  MMVD_CHECK(frame_drop_rate >= 0 && frame_drop_rate < 1, ErrorCode::InvalidArgument,
             "make_batch: frame_drop_rate ", frame_drop_rate);
  for (int p : pool)
    MMVD_CHECK(p >= 0 && p < static_cast<int>(ds.bags.size()), ErrorCode::InvalidArgument,
               "make_batch: pool index ", p, " out of range");

  std::vector<int> pos, neg;
  for (int p : pool) (ds.bags[static_cast<size_t>(p)].y ? pos : neg).push_back(p);

  std::vector<int> chosen(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    chosen[static_cast<size_t>(i)] =
        pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
  // stratified floor: one of each class when both exist
  if (batch_size >= 2 && !pos.empty() && !neg.empty()) {
    chosen[0] = pos[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pos.size()) - 1))];
    chosen[1] = neg[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(neg.size()) - 1))];
  }

  Batch batch;
  batch.t_train = t_train;
  for (int idx : chosen) {
    const Bag& bag = ds.bags[static_cast<size_t>(idx)];
    const int T = bag.t();
    BatchItem item;
    item.bag_index = idx;
    item.y = static_cast<real>(bag.y);
    if (T > t_train) {
      item.crop_start = rng.uniform_int(0, T - t_train);
      item.valid_len = t_train;
    } else {
      item.crop_start = 0;
      item.valid_len = T;
    }
    item.rgb = crop_pad(bag.rgb, item.crop_start, item.valid_len, t_train);
    item.audio = crop_pad(bag.audio, item.crop_start, item.valid_len, t_train);
    item.flow = crop_pad(bag.flow, item.crop_start, item.valid_len, t_train);
    if (frame_drop_rate > 0) {
      drop_frames(item.rgb, item.valid_len, frame_drop_rate, rng);
      drop_frames(item.audio, item.valid_len, frame_drop_rate, rng);
      drop_frames(item.flow, item.valid_len, frame_drop_rate, rng);
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

}  // namespace mmvd::data
