#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmvd {

GradCheckResult grad_check(ad::Tape& tape, ad::Var loss, ad::Var leaf, real eps,
                           int max_components, Rng* rng) {
  MMVD_CHECK(tape.backward_done(), ErrorCode::State, "grad_check: backward has not run");
  MMVD_CHECK(eps > 0, ErrorCode::InvalidArgument, "grad_check: eps ", eps);
  const Tensor analytic = tape.grad(leaf);
  Tensor& v = tape.leaf_value(leaf);
  const size_t n = v.size();
  MMVD_CHECK(n > 0, ErrorCode::InvalidArgument, "grad_check: empty leaf");

  std::vector<size_t> picks(n);
  std::iota(picks.begin(), picks.end(), size_t(0));
  if (max_components > 0 && static_cast<size_t>(max_components) < n) {
    MMVD_CHECK(rng != nullptr, ErrorCode::InvalidArgument,
               "grad_check: rng required for subsampling");
    for (int i = 0; i < max_components; ++i) {
      size_t j = static_cast<size_t>(i) +
                 static_cast<size_t>(rng->next_u64() % (n - static_cast<size_t>(i)));
      std::swap(picks[static_cast<size_t>(i)], picks[j]);
    }
    picks.resize(static_cast<size_t>(max_components));
  }

  GradCheckResult res;
  for (size_t c : picks) {
    const real save = v[c];
    v[c] = save + eps;
    tape.recompute_all();
    const double fp = tape.value(loss).item();
    v[c] = save - eps;
    tape.recompute_all();
    const double fm = tape.value(loss).item();
    v[c] = save;
    MMVD_CHECK(std::isfinite(fp) && std::isfinite(fm), ErrorCode::Numeric,
               "grad_check: non-finite loss while probing component ", c);
    const double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[c]);
    const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = c;
      res.worst_analytic = a;
      res.worst_fd = fd;
    }
    ++res.checked;
  }
  tape.recompute_all();  // restore downstream values
  return res;
}

}  // namespace mmvd
