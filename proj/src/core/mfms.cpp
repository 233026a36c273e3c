#include "core/mfms.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "core/error.hpp"

namespace mmvd::model {

namespace {
std::atomic<std::uint64_t> g_search_calls{0};
constexpr real kTiny = 1e-12;
}  // namespace

ad::Var project_secondary(ad::Tape& tape, ad::Var z, const Binding& bind,
                          const Mlp3Ids& ids) {
  ad::Var h1 = tape.gelu(tape.linear(z, bind[ids.w1], bind[ids.b1]));
  ad::Var h2 = tape.gelu(tape.linear(h1, bind[ids.w2], bind[ids.b2]));
  ad::Var delta = tape.linear(h2, bind[ids.w3], bind[ids.b3]);
  return tape.add(z, delta);
}

std::vector<int> MfmsAssignment::theta_pad() const {
  std::vector<int> out = theta;
  out.insert(out.end(), theta_hat.begin(), theta_hat.end());
  return out;
}

Tensor flatten_valid(const std::vector<const Tensor*>& seqs,
                     const std::vector<int>& valid_lens) {
  MMVD_CHECK(!seqs.empty() && seqs.size() == valid_lens.size(), ErrorCode::InvalidArgument,
             "flatten_valid: ", seqs.size(), " sequences vs ", valid_lens.size(), " lengths");
  const int d = seqs[0]->dim(1);
  int n = 0;
  for (size_t i = 0; i < seqs.size(); ++i) {
    const Tensor& s = *seqs[i];
    MMVD_CHECK(s.ndim() == 2 && s.dim(1) == d, ErrorCode::ShapeMismatch,
               "flatten_valid: item ", i, " is ", s.shape_str());
    MMVD_CHECK(valid_lens[i] >= 1 && valid_lens[i] <= s.dim(0), ErrorCode::InvalidArgument,
               "flatten_valid: item ", i, " valid_len ", valid_lens[i]);
    n += valid_lens[i];
  }
  Tensor out = Tensor::zeros({n, d});
  real* dst = out.data();
  for (size_t i = 0; i < seqs.size(); ++i) {
    const size_t count = static_cast<size_t>(valid_lens[i]) * d;
    const real* src = seqs[i]->data();
    std::copy(src, src + count, dst);
    dst += count;
  }
  return out;
}

Tensor similarity_matrix(const Tensor& zs, const Tensor& zp) {
  MMVD_CHECK(zs.ndim() == 2 && zp.ndim() == 2 && zs.dim(0) == zp.dim(0),
             ErrorCode::ShapeMismatch, "similarity_matrix: ", zs.shape_str(), " vs ",
             zp.shape_str());
  const int n = zs.dim(0);
  auto normalize_cols = [n](const Tensor& src) {
    const int d = src.dim(1);
    Tensor out = src;
    for (int c = 0; c < d; ++c) {
      real ss = 0;
      for (int r = 0; r < n; ++r) ss += src.at(r, c) * src.at(r, c);
      const real norm = std::sqrt(ss);
      if (norm < kTiny) continue;
      for (int r = 0; r < n; ++r) out.at(r, c) /= norm;
    }
    return out;
  };
  Tensor a = normalize_cols(zs);
  Tensor b = normalize_cols(zp);
  Tensor s = Tensor::zeros({zs.dim(1), zp.dim(1)});
  gemm_tn(zs.dim(1), n, zp.dim(1), a.data(), b.data(), s.data());
  return s;
}

MfmsAssignment search_mfms(const Tensor& S, int k) {
  g_search_calls.fetch_add(1, std::memory_order_relaxed);
  MMVD_CHECK(S.ndim() == 2, ErrorCode::ShapeMismatch, "search_mfms: S is ", S.shape_str());
  const int d_s = S.dim(0), d_p = S.dim(1);
  MMVD_CHECK(d_s >= 1 && d_s < d_p, ErrorCode::InvalidArgument,
             "search_mfms: needs d_s < d_p, got ", d_s, " x ", d_p);
  MMVD_CHECK(k >= d_s, ErrorCode::InvalidArgument, "search_mfms: k ", k,
             " below secondary width ", d_s);
  MMVD_CHECK(k <= d_p, ErrorCode::InvalidArgument, "search_mfms: k ", k,
             " above primary width ", d_p);

  MfmsAssignment a;
  a.d_s = d_s;
  a.d_p = d_p;
  a.theta.reserve(static_cast<size_t>(d_s));
  std::vector<char> used(static_cast<size_t>(d_p), 0);
  std::vector<int> order(static_cast<size_t>(d_p));
  for (int i = 0; i < d_s; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      const real sx = S.at(i, x), sy = S.at(i, y);
      if (sx != sy) return sx > sy;
      return x < y;
    });
    int pick = -1;
    for (int j = 0; j < k; ++j)
      if (!used[static_cast<size_t>(order[static_cast<size_t>(j)])]) {
        pick = order[static_cast<size_t>(j)];
        break;
      }
    // k >= d_s and only i < k columns are taken so far, so a free candidate
    // always exists
    MMVD_CHECK(pick >= 0, ErrorCode::State, "search_mfms: no free candidate at row ", i);
    used[static_cast<size_t>(pick)] = 1;
    a.theta.push_back(pick);
  }
  for (int c = 0; c < d_p; ++c)
    if (!used[static_cast<size_t>(c)]) a.theta_hat.push_back(c);
  return a;
}

std::uint64_t mfms_search_count() { return g_search_calls.load(std::memory_order_relaxed); }

ad::Var sparsify(ad::Tape& tape, ad::Var zs, const MfmsAssignment& a, bool literal_gather) {
  const Tensor& Z = tape.value(zs);
  MMVD_CHECK(Z.ndim() == 2 && Z.dim(1) == a.d_s, ErrorCode::ShapeMismatch,
             "sparsify: features ", Z.shape_str(), " vs assignment d_s ", a.d_s);
  if (!literal_gather) return tape.scatter_cols(zs, a.theta, a.d_p);
  ad::Var pad = tape.leaf(Tensor::zeros({Z.dim(0), a.d_p - a.d_s}));
  return tape.gather_cols(tape.concat_cols({zs, pad}), a.theta_pad());
}

ConvergenceWindow::ConvergenceWindow(int w, int d_s, int d_p) : w_(w), d_s_(d_s), d_p_(d_p) {
  MMVD_CHECK(w >= 1, ErrorCode::InvalidArgument, "ConvergenceWindow: w ", w);
  MMVD_CHECK(d_s >= 1 && d_s < d_p, ErrorCode::InvalidArgument,
             "ConvergenceWindow: dims ", d_s, " x ", d_p);
}

double ConvergenceWindow::update(const MfmsAssignment& a) {
  MMVD_CHECK(a.d_s == d_s_ && a.d_p == d_p_, ErrorCode::InvalidArgument,
             "ConvergenceWindow: assignment is ", a.d_s, " x ", a.d_p, ", window wants ",
             d_s_, " x ", d_p_);
  buf_.push_back(a.theta);
  while (static_cast<int>(buf_.size()) > w_) buf_.pop_front();

  std::vector<int> freq(static_cast<size_t>(d_p_), 0);
  for (const auto& set : buf_)
    for (int c : set) ++freq[static_cast<size_t>(c)];
  int f_max = 0;
  for (int f : freq) f_max = std::max(f_max, f);
  int n = 0;
  for (int f : freq)
    if (f == f_max) ++n;
  const double w_eff = static_cast<double>(buf_.size());
  return w_eff * d_s_ / (static_cast<double>(f_max) * n);
}

}  // namespace mmvd::model
