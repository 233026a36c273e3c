#pragma once

#include <string>

#include "core/rng.hpp"
#include "core/tape.hpp"

namespace mmvd {

struct GradCheckResult {
  double max_rel_err = 0;
  size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_fd = 0;
  int checked = 0;
};

/// Central-difference check of d(loss)/d(leaf) against the recorded
/// gradient. backward(loss) must already have run on the tape. Replays
/// keep recorded selection indices frozen, so the comparison stays on the
/// smooth piece of the loss. Relative error is |analytic - fd| / max(1, |analytic|).
/// Components are subsampled without replacement when max_components is
/// positive and smaller than the leaf; rng may be null only when checking all.
/// Non-finite loss values during probing raise a numeric error.
GradCheckResult grad_check(ad::Tape& tape, ad::Var loss, ad::Var leaf, real eps,
                           int max_components = 0, Rng* rng = nullptr);

}  // namespace mmvd
