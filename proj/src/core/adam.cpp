#include "core/adam.hpp"

#include <cmath>

#include "core/error.hpp"

namespace mmvd {

void Adam::step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
  MMVD_CHECK(params.size() == grads.size(), ErrorCode::InvalidArgument,
             "adam: ", params.size(), " params vs ", grads.size(), " grads");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = Tensor(params[i]->shape());
      v_[i] = Tensor(params[i]->shape());
    }
  }
  MMVD_CHECK(m_.size() == params.size(), ErrorCode::State,
             "adam: parameter count changed between steps");
  ++step_;
  const real b1 = cfg_.beta1, b2 = cfg_.beta2;
  const real bc1 = 1 - std::pow(b1, static_cast<real>(step_));
  const real bc2 = 1 - std::pow(b2, static_cast<real>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    MMVD_CHECK(p.same_shape(m_[i]), ErrorCode::ShapeMismatch,
               "adam: param ", i, " shape changed");
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    if (grads[i]) {
      const Tensor& g = *grads[i];
      MMVD_CHECK(g.same_shape(p), ErrorCode::ShapeMismatch,
                 "adam: grad ", i, " shape ", g.shape_str(), " vs param ", p.shape_str());
      for (size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (1 - b1) * g[j];
        v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
        real mhat = m[j] / bc1;
        real vhat = v[j] / bc2;
        p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
      }
    } else {
      // no gradient this step: moments decay, decay still applies
      for (size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j];
        v[j] = b2 * v[j];
        real mhat = m[j] / bc1;
        real vhat = v[j] / bc2;
        p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
      }
    }
  }
}

}  // namespace mmvd
