#include "core/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmvd::ad {

namespace {
constexpr real kTiny = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

void Tape::check(Var v, const char* who) const {
  MMVD_CHECK(v.ok() && static_cast<size_t>(v.id) < nodes_.size(),
             ErrorCode::InvalidArgument, who, ": invalid tape handle");
}

int Tape::new_node(const std::string& op, std::vector<int> inputs, bool requires_grad) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value, bool requires_grad, const std::string& name) {
  int id = new_node(name, {}, requires_grad);
  nodes_[static_cast<size_t>(id)].value = std::move(value);
  return Var{id};
}

const Tensor& Tape::value(Var v) const {
  check(v, "value");
  return nodes_[static_cast<size_t>(v.id)].value;
}

const Node& Tape::node(Var v) const {
  check(v, "node");
  return nodes_[static_cast<size_t>(v.id)];
}

Tensor& Tape::leaf_value(Var v) {
  check(v, "leaf_value");
  Node& n = nodes_[static_cast<size_t>(v.id)];
  MMVD_CHECK(!n.recompute, ErrorCode::State, "leaf_value: node '", n.op, "' is not a leaf");
  return n.value;
}

void Tape::recompute_all() {
  for (Node& n : nodes_)
    if (n.recompute) n.recompute(*this, n);
}

Tensor* Tape::grad_accum(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return nullptr;
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  check(loss, "backward");
  MMVD_CHECK(!backward_done_, ErrorCode::State, "backward: already run on this tape");
  Node& ln = nodes_[static_cast<size_t>(loss.id)];
  MMVD_CHECK(ln.value.size() == 1, ErrorCode::ShapeMismatch,
             "backward: loss must be scalar, got shape ", ln.value.shape_str());
  backward_done_ = true;
  if (!ln.requires_grad) return;
  ln.grad = Tensor::scalar(1);
  ln.grad_live = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad_live && n.backprop) n.backprop(*this, n);
  }
}

bool Tape::grad_defined(Var v) const {
  check(v, "grad_defined");
  return backward_done_ && nodes_[static_cast<size_t>(v.id)].requires_grad;
}

Tensor Tape::grad(Var v) const {
  check(v, "grad");
  MMVD_CHECK(backward_done_, ErrorCode::State, "grad: backward has not run");
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  MMVD_CHECK(n.requires_grad, ErrorCode::State,
             "grad: node '", n.op, "' does not require grad");
  if (n.grad_live) return n.grad;
  return Tensor(n.value.shape());
}

// ---- elementwise ----

Var Tape::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  MMVD_CHECK(A.same_shape(B), ErrorCode::ShapeMismatch,
             "add: shape ", A.shape_str(), " vs ", B.shape_str());
  int id = new_node("add", {a.id, b.id},
                    node(a).requires_grad || node(b).requires_grad);
  auto fwd = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) self.value[i] = A[i] + B[i];
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = t.grad_accum(bi))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  };
  return Var{id};
}

Var Tape::sub(Var a, Var b) {
  check(a, "sub");
  check(b, "sub");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  MMVD_CHECK(A.same_shape(B), ErrorCode::ShapeMismatch,
             "sub: shape ", A.shape_str(), " vs ", B.shape_str());
  int id = new_node("sub", {a.id, b.id},
                    node(a).requires_grad || node(b).requires_grad);
  auto fwd = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) self.value[i] = A[i] - B[i];
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = t.grad_accum(bi))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  };
  return Var{id};
}

Var Tape::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  MMVD_CHECK(A.same_shape(B), ErrorCode::ShapeMismatch,
             "mul: shape ", A.shape_str(), " vs ", B.shape_str());
  int id = new_node("mul", {a.id, b.id},
                    node(a).requires_grad || node(b).requires_grad);
  auto fwd = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) self.value[i] = A[i] * B[i];
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * B[i];
    if (Tensor* g = t.grad_accum(bi))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * A[i];
  };
  return Var{id};
}

Var Tape::affine(Var a, real scale, real shift) {
  check(a, "affine");
  int id = new_node("affine", {a.id}, node(a).requires_grad);
  auto fwd = [ai = a.id, scale, shift](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) self.value[i] = scale * A[i] + shift;
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, scale](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += scale * self.grad[i];
  };
  return Var{id};
}

Var Tape::relu(Var a) {
  check(a, "relu");
  int id = new_node("relu", {a.id}, node(a).requires_grad);
  auto fwd = [ai = a.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) self.value[i] = A[i] > 0 ? A[i] : real(0);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (A[i] > 0) (*g)[i] += self.grad[i];
  };
  return Var{id};
}

Var Tape::gelu(Var a) {
  check(a, "gelu");
  int id = new_node("gelu", {a.id}, node(a).requires_grad);
  auto fwd = [ai = a.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) {
      double x = A[i];
      self.value[i] = static_cast<real>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double x = A[i];
        double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                   x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        (*g)[i] += self.grad[i] * static_cast<real>(d);
      }
  };
  return Var{id};
}

Var Tape::sigmoid(Var a) {
  check(a, "sigmoid");
  int id = new_node("sigmoid", {a.id}, node(a).requires_grad);
  auto fwd = [ai = a.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    if (!self.value.same_shape(A)) self.value = Tensor(A.shape());
    for (size_t i = 0; i < A.size(); ++i) {
      double x = A[i];
      // branch keeps exp() off the overflow path
      double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      self.value[i] = static_cast<real>(s);
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        real s = self.value[i];
        (*g)[i] += self.grad[i] * s * (1 - s);
      }
  };
  return Var{id};
}

Var Tape::stop_grad(Var a) {
  check(a, "stop_grad");
  int id = new_node("stop_grad", {a.id}, false);
  // value snapshot with no recompute closure: replay holds the stopped branch
  // constant, consistent with the zero gradient it reports
  nodes_[static_cast<size_t>(id)].value = value(a);
  return Var{id};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  check(a, "reshape");
  const Tensor& A = value(a);
  MMVD_CHECK(shape_numel(shape) == A.size(), ErrorCode::ShapeMismatch,
             "reshape: ", A.shape_str(), " has ", A.size(), " elements, target wants ",
             shape_numel(shape));
  int id = new_node("reshape", {a.id}, node(a).requires_grad);
  auto fwd = [ai = a.id, shape](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    self.value = Tensor::from(shape, std::vector<real>(A.data(), A.data() + A.size()));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(ai))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  };
  return Var{id};
}

// ---- linear algebra ----

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  MMVD_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.cols() == B.rows(),
             ErrorCode::ShapeMismatch, "matmul: ", A.shape_str(), " x ", B.shape_str());
  int id = new_node("matmul", {a.id, b.id},
                    node(a).requires_grad || node(b).requires_grad);
  auto fwd = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    self.value = Tensor({A.rows(), B.cols()});
    gemm_nn(A.rows(), A.cols(), B.cols(), A.data(), B.data(), self.value.data());
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    const Tensor& G = self.grad;
    if (Tensor* g = t.grad_accum(ai))
      gemm_nt(G.rows(), G.cols(), B.rows(), G.data(), B.data(), g->data());
    if (Tensor* g = t.grad_accum(bi))
      gemm_tn(A.cols(), A.rows(), G.cols(), A.data(), G.data(), g->data());
  };
  return Var{id};
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a, "matmul_nt");
  check(b, "matmul_nt");
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  MMVD_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.cols() == B.cols(),
             ErrorCode::ShapeMismatch, "matmul_nt: ", A.shape_str(), " x ",
             B.shape_str(), "^T");
  int id = new_node("matmul_nt", {a.id, b.id},
                    node(a).requires_grad || node(b).requires_grad);
  auto fwd = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    self.value = Tensor({A.rows(), B.rows()});
    gemm_nt(A.rows(), A.cols(), B.rows(), A.data(), B.data(), self.value.data());
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [ai = a.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& A = t.node_mut(ai).value;
    const Tensor& B = t.node_mut(bi).value;
    const Tensor& G = self.grad;
    if (Tensor* g = t.grad_accum(ai))
      gemm_nn(G.rows(), G.cols(), B.cols(), G.data(), B.data(), g->data());
    if (Tensor* g = t.grad_accum(bi))
      gemm_tn(G.cols(), G.rows(), A.cols(), G.data(), A.data(), g->data());
  };
  return Var{id};
}

Var Tape::linear(Var x, Var w, Var b) {
  check(x, "linear");
  check(w, "linear");
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  MMVD_CHECK(X.ndim() == 2 && W.ndim() == 2 && X.cols() == W.rows(),
             ErrorCode::ShapeMismatch, "linear: x ", X.shape_str(), " w ", W.shape_str());
  bool rg = node(x).requires_grad || node(w).requires_grad;
  if (b.ok()) {
    check(b, "linear");
    const Tensor& B = value(b);
    MMVD_CHECK(B.ndim() == 1 && B.dim(0) == W.cols(), ErrorCode::ShapeMismatch,
               "linear: bias ", B.shape_str(), " vs out dim ", W.cols());
    rg = rg || node(b).requires_grad;
  }
  std::vector<int> inputs = {x.id, w.id};
  if (b.ok()) inputs.push_back(b.id);
  int id = new_node("linear", std::move(inputs), rg);
  auto fwd = [xi = x.id, wi = w.id, bi = b.id](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& W = t.node_mut(wi).value;
    self.value = Tensor({X.rows(), W.cols()});
    gemm_nn(X.rows(), X.cols(), W.cols(), X.data(), W.data(), self.value.data());
    if (bi >= 0) {
      const Tensor& B = t.node_mut(bi).value;
      for (int r = 0; r < X.rows(); ++r)
        for (int c = 0; c < W.cols(); ++c) self.value.at(r, c) += B[static_cast<size_t>(c)];
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, wi = w.id, bi = b.id](Tape& t,
                                                                               Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& W = t.node_mut(wi).value;
    const Tensor& G = self.grad;
    if (Tensor* g = t.grad_accum(xi))
      gemm_nt(G.rows(), G.cols(), W.rows(), G.data(), W.data(), g->data());
    if (Tensor* g = t.grad_accum(wi))
      gemm_tn(X.cols(), X.rows(), G.cols(), X.data(), G.data(), g->data());
    if (bi >= 0)
      if (Tensor* g = t.grad_accum(bi))
        for (int r = 0; r < G.rows(); ++r)
          for (int c = 0; c < G.cols(); ++c) (*g)[static_cast<size_t>(c)] += G.at(r, c);
  };
  return Var{id};
}

namespace {
// X:(T,Din) -> Xc:(T, k*Din) with zero pad outside [0,T); taps spaced by dil
void im2col(const Tensor& X, int k, int dil, Tensor& Xc) {
  const int T = X.rows(), Din = X.cols(), half = (k - 1) / 2;
  if (Xc.ndim() != 2 || Xc.rows() != T || Xc.cols() != k * Din) Xc = Tensor({T, k * Din});
  else Xc.fill(0);
  for (int t = 0; t < T; ++t) {
    real* out = Xc.data() + static_cast<size_t>(t) * k * Din;
    for (int kk = 0; kk < k; ++kk) {
      int src = t + (kk - half) * dil;
      if (src < 0 || src >= T) continue;
      const real* in = X.data() + static_cast<size_t>(src) * Din;
      std::copy(in, in + Din, out + static_cast<size_t>(kk) * Din);
    }
  }
}
}  // namespace

Var Tape::conv1d(Var x, Var w, Var b, int dilation) {
  check(x, "conv1d");
  check(w, "conv1d");
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "conv1d: x ", X.shape_str());
  MMVD_CHECK(W.ndim() == 3, ErrorCode::ShapeMismatch, "conv1d: w ", W.shape_str());
  const int k = W.dim(1);
  MMVD_CHECK(k % 2 == 1 && k >= 1, ErrorCode::InvalidArgument,
             "conv1d: kernel must be odd, got ", k);
  MMVD_CHECK(dilation >= 1, ErrorCode::InvalidArgument, "conv1d: dilation ", dilation);
  MMVD_CHECK(W.dim(2) == X.cols(), ErrorCode::ShapeMismatch,
             "conv1d: w in-dim ", W.dim(2), " vs x cols ", X.cols());
  bool rg = node(x).requires_grad || node(w).requires_grad;
  if (b.ok()) {
    check(b, "conv1d");
    const Tensor& B = value(b);
    MMVD_CHECK(B.ndim() == 1 && B.dim(0) == W.dim(0), ErrorCode::ShapeMismatch,
               "conv1d: bias ", B.shape_str(), " vs out channels ", W.dim(0));
    rg = rg || node(b).requires_grad;
  }
  std::vector<int> inputs = {x.id, w.id};
  if (b.ok()) inputs.push_back(b.id);
  int id = new_node("conv1d", std::move(inputs), rg);
  auto fwd = [xi = x.id, wi = w.id, bi = b.id, k, dilation](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& W = t.node_mut(wi).value;
    const int T = X.rows(), Dout = W.dim(0);
    Tensor Xc;
    im2col(X, k, dilation, Xc);
    self.value = Tensor({T, Dout});
    gemm_nt(T, Xc.cols(), Dout, Xc.data(), W.data(), self.value.data());
    if (bi >= 0) {
      const Tensor& B = t.node_mut(bi).value;
      for (int r = 0; r < T; ++r)
        for (int c = 0; c < Dout; ++c) self.value.at(r, c) += B[static_cast<size_t>(c)];
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, wi = w.id, bi = b.id, k,
                                              dilation](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& W = t.node_mut(wi).value;
    const Tensor& G = self.grad;
    const int T = X.rows(), Din = X.cols(), Dout = W.dim(0), half = (k - 1) / 2;
    if (Tensor* g = t.grad_accum(wi)) {
      Tensor Xc;
      im2col(X, k, dilation, Xc);
      gemm_tn(Dout, T, k * Din, G.data(), Xc.data(), g->data());
    }
    if (Tensor* g = t.grad_accum(xi)) {
      Tensor Gc({T, k * Din});
      gemm_nn(T, Dout, k * Din, G.data(), W.data(), Gc.data());
      for (int tt = 0; tt < T; ++tt)
        for (int kk = 0; kk < k; ++kk) {
          int dst = tt + (kk - half) * dilation;
          if (dst < 0 || dst >= T) continue;
          const real* src = Gc.data() + static_cast<size_t>(tt) * k * Din +
                            static_cast<size_t>(kk) * Din;
          real* out = g->data() + static_cast<size_t>(dst) * Din;
          for (int c = 0; c < Din; ++c) out[c] += src[c];
        }
    }
    if (bi >= 0)
      if (Tensor* g = t.grad_accum(bi))
        for (int r = 0; r < T; ++r)
          for (int c = 0; c < Dout; ++c) (*g)[static_cast<size_t>(c)] += G.at(r, c);
  };
  return Var{id};
}

Var Tape::slice_rows(Var x, int r0, int r1) {
  check(x, "slice_rows");
  const Tensor& X = value(x);
  MMVD_CHECK(X.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= X.rows(),
             ErrorCode::ShapeMismatch, "slice_rows: [", r0, ",", r1, ") of ",
             X.shape_str());
  int id = new_node("slice_rows", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id, r0, r1](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const int C = X.cols(), H = r1 - r0;
    if (self.value.ndim() != 2 || self.value.rows() != H || self.value.cols() != C)
      self.value = Tensor({H, C});
    std::copy(X.data() + static_cast<size_t>(r0) * C,
              X.data() + static_cast<size_t>(r1) * C, self.value.data());
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, r0](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      const int H = self.grad.rows(), C = self.grad.cols();
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < C; ++c) g->at(r0 + r, c) += self.grad.at(r, c);
    }
  };
  return Var{id};
}

Var Tape::layer_norm(Var x, Var gain, Var bias, real eps) {
  check(x, "layer_norm");
  check(gain, "layer_norm");
  check(bias, "layer_norm");
  const Tensor& X = value(x);
  const Tensor& Gn = value(gain);
  const Tensor& Bs = value(bias);
  MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "layer_norm: x ", X.shape_str());
  MMVD_CHECK(Gn.ndim() == 1 && Gn.dim(0) == X.cols() && Bs.ndim() == 1 &&
                 Bs.dim(0) == X.cols(),
             ErrorCode::ShapeMismatch, "layer_norm: gain/bias vs cols ", X.cols());
  int id = new_node("layer_norm", {x.id, gain.id, bias.id},
                    node(x).requires_grad || node(gain).requires_grad ||
                        node(bias).requires_grad);
  auto fwd = [xi = x.id, gi = gain.id, bi = bias.id, eps](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& Gn = t.node_mut(gi).value;
    const Tensor& Bs = t.node_mut(bi).value;
    const int T = X.rows(), D = X.cols();
    if (!self.value.same_shape(X)) self.value = Tensor(X.shape());
    for (int r = 0; r < T; ++r) {
      const real* xr = X.data() + static_cast<size_t>(r) * D;
      real* yr = self.value.data() + static_cast<size_t>(r) * D;
      real mu = 0;
      for (int c = 0; c < D; ++c) mu += xr[c];
      mu /= D;
      real var = 0;
      for (int c = 0; c < D; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= D;
      real inv = real(1) / std::sqrt(var + eps);
      for (int c = 0; c < D; ++c) yr[c] = Gn[static_cast<size_t>(c)] * (xr[c] - mu) * inv +
                                          Bs[static_cast<size_t>(c)];
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, gi = gain.id, bi = bias.id, eps](
                                                 Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& Gn = t.node_mut(gi).value;
    const Tensor& G = self.grad;
    const int T = X.rows(), D = X.cols();
    Tensor* gx = t.grad_accum(xi);
    Tensor* gg = t.grad_accum(gi);
    Tensor* gb = t.grad_accum(bi);
    for (int r = 0; r < T; ++r) {
      const real* xr = X.data() + static_cast<size_t>(r) * D;
      const real* gr = G.data() + static_cast<size_t>(r) * D;
      real mu = 0;
      for (int c = 0; c < D; ++c) mu += xr[c];
      mu /= D;
      real var = 0;
      for (int c = 0; c < D; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= D;
      real inv = real(1) / std::sqrt(var + eps);
      if (gb)
        for (int c = 0; c < D; ++c) (*gb)[static_cast<size_t>(c)] += gr[c];
      if (gg)
        for (int c = 0; c < D; ++c)
          (*gg)[static_cast<size_t>(c)] += gr[c] * (xr[c] - mu) * inv;
      if (gx) {
        // dxhat = g * gain; fold the mean and variance paths per row
        real sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < D; ++c) {
          real dxh = gr[c] * Gn[static_cast<size_t>(c)];
          real xh = (xr[c] - mu) * inv;
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xh;
        }
        real* gxr = gx->data() + static_cast<size_t>(r) * D;
        for (int c = 0; c < D; ++c) {
          real dxh = gr[c] * Gn[static_cast<size_t>(c)];
          real xh = (xr[c] - mu) * inv;
          gxr[c] += inv * (dxh - sum_dxhat / D - xh * sum_dxhat_xhat / D);
        }
      }
    }
  };
  return Var{id};
}

Var Tape::masked_softmax(Var scores, std::shared_ptr<const std::vector<uint8_t>> mask) {
  check(scores, "masked_softmax");
  const Tensor& S = value(scores);
  MMVD_CHECK(S.ndim() == 2, ErrorCode::ShapeMismatch, "masked_softmax: ", S.shape_str());
  MMVD_CHECK(mask && mask->size() == S.size(), ErrorCode::ShapeMismatch,
             "masked_softmax: mask size ", mask ? mask->size() : 0, " vs ", S.size());
  int id = new_node("masked_softmax", {scores.id}, node(scores).requires_grad);
  auto fwd = [si = scores.id, mask](Tape& t, Node& self) {
    const Tensor& S = t.node_mut(si).value;
    const int R = S.rows(), C = S.cols();
    if (!self.value.same_shape(S)) self.value = Tensor(S.shape());
    for (int r = 0; r < R; ++r) {
      const real* sr = S.data() + static_cast<size_t>(r) * C;
      const uint8_t* mr = mask->data() + static_cast<size_t>(r) * C;
      real* pr = self.value.data() + static_cast<size_t>(r) * C;
      real mx = -std::numeric_limits<real>::infinity();
      for (int c = 0; c < C; ++c)
        if (mr[c] && sr[c] > mx) mx = sr[c];
      if (!std::isfinite(mx)) {  // fully masked row
        for (int c = 0; c < C; ++c) pr[c] = 0;
        continue;
      }
      real z = 0;
      for (int c = 0; c < C; ++c) {
        pr[c] = mr[c] ? std::exp(sr[c] - mx) : real(0);
        z += pr[c];
      }
      for (int c = 0; c < C; ++c) pr[c] /= z;
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [si = scores.id, mask](Tape& t, Node& self) {
    Tensor* g = t.grad_accum(si);
    if (!g) return;
    const Tensor& P = self.value;
    const Tensor& G = self.grad;
    const int R = P.rows(), C = P.cols();
    for (int r = 0; r < R; ++r) {
      const real* pr = P.data() + static_cast<size_t>(r) * C;
      const real* gr = G.data() + static_cast<size_t>(r) * C;
      const uint8_t* mr = mask->data() + static_cast<size_t>(r) * C;
      real dot = 0;
      for (int c = 0; c < C; ++c)
        if (mr[c]) dot += pr[c] * gr[c];
      real* out = g->data() + static_cast<size_t>(r) * C;
      for (int c = 0; c < C; ++c)
        if (mr[c]) out[c] += pr[c] * (gr[c] - dot);
    }
  };
  return Var{id};
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  MMVD_CHECK(!xs.empty(), ErrorCode::InvalidArgument, "concat_cols: empty input list");
  int rows = -1, total = 0;
  bool rg = false;
  std::vector<int> inputs;
  for (Var v : xs) {
    check(v, "concat_cols");
    const Tensor& X = value(v);
    MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "concat_cols: ", X.shape_str());
    if (rows < 0) rows = X.rows();
    MMVD_CHECK(X.rows() == rows, ErrorCode::ShapeMismatch,
               "concat_cols: row mismatch ", X.rows(), " vs ", rows);
    total += X.cols();
    rg = rg || node(v).requires_grad;
    inputs.push_back(v.id);
  }
  int id = new_node("concat_cols", inputs, rg);
  auto fwd = [inputs, rows, total](Tape& t, Node& self) {
    if (self.value.ndim() != 2 || self.value.rows() != rows || self.value.cols() != total)
      self.value = Tensor({rows, total});
    int off = 0;
    for (int xi : inputs) {
      const Tensor& X = t.node_mut(xi).value;
      for (int r = 0; r < rows; ++r)
        std::copy(X.data() + static_cast<size_t>(r) * X.cols(),
                  X.data() + static_cast<size_t>(r + 1) * X.cols(),
                  self.value.data() + static_cast<size_t>(r) * total + off);
      off += X.cols();
    }
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [inputs, rows, total](Tape& t, Node& self) {
    int off = 0;
    for (int xi : inputs) {
      const int c = t.node_mut(xi).value.cols();
      if (Tensor* g = t.grad_accum(xi))
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j)
            g->at(r, j) += self.grad[static_cast<size_t>(r) * total + off + j];
      off += c;
    }
  };
  return Var{id};
}

Var Tape::slice_cols(Var x, int c0, int c1) {
  check(x, "slice_cols");
  const Tensor& X = value(x);
  MMVD_CHECK(X.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= X.cols(),
             ErrorCode::ShapeMismatch, "slice_cols: [", c0, ",", c1, ") of ",
             X.shape_str());
  int id = new_node("slice_cols", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id, c0, c1](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const int R = X.rows(), W = c1 - c0;
    if (self.value.ndim() != 2 || self.value.rows() != R || self.value.cols() != W)
      self.value = Tensor({R, W});
    for (int r = 0; r < R; ++r)
      std::copy(X.data() + static_cast<size_t>(r) * X.cols() + c0,
                X.data() + static_cast<size_t>(r) * X.cols() + c1,
                self.value.data() + static_cast<size_t>(r) * W);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, c0](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      const int R = self.grad.rows(), W = self.grad.cols();
      for (int r = 0; r < R; ++r)
        for (int j = 0; j < W; ++j) g->at(r, c0 + j) += self.grad.at(r, j);
    }
  };
  return Var{id};
}

Var Tape::gather_cols(Var x, std::vector<int> idx) {
  check(x, "gather_cols");
  const Tensor& X = value(x);
  MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "gather_cols: ", X.shape_str());
  MMVD_CHECK(!idx.empty(), ErrorCode::InvalidArgument, "gather_cols: empty index list");
  for (int j : idx)
    MMVD_CHECK(0 <= j && j < X.cols(), ErrorCode::InvalidArgument,
               "gather_cols: index ", j, " out of range [0,", X.cols(), ")");
  int id = new_node("gather_cols", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id, idx](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const int R = X.rows(), W = static_cast<int>(idx.size());
    if (self.value.ndim() != 2 || self.value.rows() != R || self.value.cols() != W)
      self.value = Tensor({R, W});
    for (int r = 0; r < R; ++r)
      for (int j = 0; j < W; ++j)
        self.value.at(r, j) = X.at(r, idx[static_cast<size_t>(j)]);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, idx](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      const int R = self.grad.rows(), W = self.grad.cols();
      for (int r = 0; r < R; ++r)
        for (int j = 0; j < W; ++j)
          g->at(r, idx[static_cast<size_t>(j)]) += self.grad.at(r, j);
    }
  };
  return Var{id};
}

Var Tape::scatter_cols(Var x, std::vector<int> dst, int out_cols) {
  check(x, "scatter_cols");
  const Tensor& X = value(x);
  MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "scatter_cols: ", X.shape_str());
  MMVD_CHECK(static_cast<int>(dst.size()) == X.cols(), ErrorCode::ShapeMismatch,
             "scatter_cols: ", dst.size(), " targets vs ", X.cols(), " columns");
  MMVD_CHECK(out_cols >= X.cols(), ErrorCode::InvalidArgument,
             "scatter_cols: out_cols ", out_cols, " < in cols ", X.cols());
  std::vector<uint8_t> seen(static_cast<size_t>(out_cols), 0);
  for (int j : dst) {
    MMVD_CHECK(0 <= j && j < out_cols, ErrorCode::InvalidArgument,
               "scatter_cols: target ", j, " out of range [0,", out_cols, ")");
    MMVD_CHECK(!seen[static_cast<size_t>(j)], ErrorCode::InvalidArgument,
               "scatter_cols: duplicate target column ", j);
    seen[static_cast<size_t>(j)] = 1;
  }
  int id = new_node("scatter_cols", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id, dst, out_cols](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const int R = X.rows();
    if (self.value.ndim() != 2 || self.value.rows() != R || self.value.cols() != out_cols)
      self.value = Tensor({R, out_cols});
    else
      self.value.fill(0);
    for (int r = 0; r < R; ++r)
      for (int j = 0; j < X.cols(); ++j)
        self.value.at(r, dst[static_cast<size_t>(j)]) = X.at(r, j);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, dst](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      const int R = self.grad.rows();
      for (int r = 0; r < R; ++r)
        for (int j = 0; j < g->cols(); ++j)
          g->at(r, j) += self.grad.at(r, dst[static_cast<size_t>(j)]);
    }
  };
  return Var{id};
}

// ---- reductions and losses ----

Var Tape::sum_all(Var x) {
  check(x, "sum_all");
  int id = new_node("sum_all", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    real s = 0;
    for (size_t i = 0; i < X.size(); ++i) s += X[i];
    self.value = Tensor::scalar(s);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      real gs = self.grad[0];
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += gs;
    }
  };
  return Var{id};
}

Var Tape::mean_of(const std::vector<Var>& xs) {
  MMVD_CHECK(!xs.empty(), ErrorCode::InvalidArgument, "mean_of: empty input list");
  const Tensor& first = value(xs[0]);
  bool rg = false;
  std::vector<int> inputs;
  for (Var v : xs) {
    check(v, "mean_of");
    MMVD_CHECK(value(v).same_shape(first), ErrorCode::ShapeMismatch,
               "mean_of: shape ", value(v).shape_str(), " vs ", first.shape_str());
    rg = rg || node(v).requires_grad;
    inputs.push_back(v.id);
  }
  int id = new_node("mean_of", inputs, rg);
  auto fwd = [inputs](Tape& t, Node& self) {
    const Tensor& F = t.node_mut(inputs[0]).value;
    if (!self.value.same_shape(F)) self.value = Tensor(F.shape());
    else self.value.fill(0);
    for (int xi : inputs) {
      const Tensor& X = t.node_mut(xi).value;
      for (size_t i = 0; i < X.size(); ++i) self.value[i] += X[i];
    }
    const real inv = real(1) / static_cast<real>(inputs.size());
    for (size_t i = 0; i < self.value.size(); ++i) self.value[i] *= inv;
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [inputs](Tape& t, Node& self) {
    const real inv = real(1) / static_cast<real>(inputs.size());
    for (int xi : inputs)
      if (Tensor* g = t.grad_accum(xi))
        for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += inv * self.grad[i];
  };
  return Var{id};
}

Var Tape::weighted_sum(const std::vector<Var>& xs, const std::vector<real>& w) {
  MMVD_CHECK(xs.size() == w.size(), ErrorCode::InvalidArgument,
             "weighted_sum: ", xs.size(), " terms vs ", w.size(), " weights");
  bool rg = false;
  std::vector<int> inputs;
  for (Var v : xs) {
    check(v, "weighted_sum");
    MMVD_CHECK(value(v).size() == 1, ErrorCode::ShapeMismatch,
               "weighted_sum: term must be scalar, got ", value(v).shape_str());
    rg = rg || node(v).requires_grad;
    inputs.push_back(v.id);
  }
  int id = new_node("weighted_sum", inputs, rg);
  auto fwd = [inputs, w](Tape& t, Node& self) {
    real s = 0;
    for (size_t i = 0; i < inputs.size(); ++i) s += w[i] * t.node_mut(inputs[i]).value[0];
    self.value = Tensor::scalar(s);
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  // zero-weight terms are skipped outright so they are absent from the
  // gradient, not merely multiplied by zero
  nodes_[static_cast<size_t>(id)].backprop = [inputs, w](Tape& t, Node& self) {
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (w[i] == real(0)) continue;
      if (Tensor* g = t.grad_accum(inputs[i])) (*g)[0] += w[i] * self.grad[0];
    }
  };
  return Var{id};
}

Var Tape::topk_mean(Var s, int k, int valid_len) {
  check(s, "topk_mean");
  const Tensor& S = value(s);
  MMVD_CHECK(S.ndim() == 1, ErrorCode::ShapeMismatch, "topk_mean: scores ", S.shape_str());
  MMVD_CHECK(valid_len >= 1 && valid_len <= S.dim(0), ErrorCode::InvalidArgument,
             "topk_mean: valid_len ", valid_len, " vs length ", S.dim(0));
  MMVD_CHECK(k >= 1 && k <= valid_len, ErrorCode::InvalidArgument,
             "topk_mean: k ", k, " vs valid_len ", valid_len);
  // selection happens once, here; replay keeps it frozen
  std::vector<int> order(static_cast<size_t>(valid_len));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (S[static_cast<size_t>(a)] != S[static_cast<size_t>(b)])
      return S[static_cast<size_t>(a)] > S[static_cast<size_t>(b)];
    return a < b;  // ties to the lower index
  });
  auto idx = std::make_shared<std::vector<int>>(order.begin(), order.begin() + k);
  int id = new_node("topk_mean", {s.id}, node(s).requires_grad);
  auto fwd = [si = s.id, idx, k](Tape& t, Node& self) {
    const Tensor& S = t.node_mut(si).value;
    real m = 0;
    for (int j : *idx) m += S[static_cast<size_t>(j)];
    self.value = Tensor::scalar(m / static_cast<real>(k));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [si = s.id, idx, k](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(si)) {
      const real gs = self.grad[0] / static_cast<real>(k);
      for (int j : *idx) (*g)[static_cast<size_t>(j)] += gs;
    }
  };
  return Var{id};
}

Var Tape::select_rows_mean(Var x, std::vector<int> rows) {
  check(x, "select_rows_mean");
  const Tensor& X = value(x);
  MMVD_CHECK(X.ndim() == 2, ErrorCode::ShapeMismatch, "select_rows_mean: ", X.shape_str());
  MMVD_CHECK(!rows.empty(), ErrorCode::InvalidArgument, "select_rows_mean: empty row list");
  for (int r : rows)
    MMVD_CHECK(0 <= r && r < X.rows(), ErrorCode::InvalidArgument,
               "select_rows_mean: row ", r, " out of range [0,", X.rows(), ")");
  int id = new_node("select_rows_mean", {x.id}, node(x).requires_grad);
  auto fwd = [xi = x.id, rows](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const int D = X.cols();
    if (self.value.ndim() != 1 || self.value.dim(0) != D) self.value = Tensor({D});
    else self.value.fill(0);
    for (int r : rows)
      for (int c = 0; c < D; ++c)
        self.value[static_cast<size_t>(c)] += X.at(r, c);
    const real inv = real(1) / static_cast<real>(rows.size());
    for (int c = 0; c < D; ++c) self.value[static_cast<size_t>(c)] *= inv;
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, rows](Tape& t, Node& self) {
    if (Tensor* g = t.grad_accum(xi)) {
      const real inv = real(1) / static_cast<real>(rows.size());
      for (int r : rows)
        for (int c = 0; c < g->cols(); ++c)
          g->at(r, c) += inv * self.grad[static_cast<size_t>(c)];
    }
  };
  return Var{id};
}

Var Tape::l2_normalize(Var v) {
  check(v, "l2_normalize");
  const Tensor& V = value(v);
  MMVD_CHECK(V.ndim() == 1, ErrorCode::ShapeMismatch, "l2_normalize: ", V.shape_str());
  int id = new_node("l2_normalize", {v.id}, node(v).requires_grad);
  auto fwd = [vi = v.id](Tape& t, Node& self) {
    const Tensor& V = t.node_mut(vi).value;
    if (!self.value.same_shape(V)) self.value = Tensor(V.shape());
    real n2 = 0;
    for (size_t i = 0; i < V.size(); ++i) n2 += V[i] * V[i];
    real n = std::sqrt(n2);
    if (n < kTiny) {
      self.value.fill(0);
      return;
    }
    for (size_t i = 0; i < V.size(); ++i) self.value[i] = V[i] / n;
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [vi = v.id](Tape& t, Node& self) {
    Tensor* g = t.grad_accum(vi);
    if (!g) return;
    const Tensor& V = t.node_mut(vi).value;
    real n2 = 0;
    for (size_t i = 0; i < V.size(); ++i) n2 += V[i] * V[i];
    real n = std::sqrt(n2);
    if (n < kTiny) return;
    real dot = 0;
    for (size_t i = 0; i < V.size(); ++i) dot += self.value[i] * self.grad[i];
    for (size_t i = 0; i < V.size(); ++i)
      (*g)[i] += (self.grad[i] - self.value[i] * dot) / n;
  };
  return Var{id};
}

Var Tape::l2_norm(Var v) {
  check(v, "l2_norm");
  const Tensor& V = value(v);
  MMVD_CHECK(V.ndim() == 1, ErrorCode::ShapeMismatch, "l2_norm: ", V.shape_str());
  int id = new_node("l2_norm", {v.id}, node(v).requires_grad);
  auto fwd = [vi = v.id](Tape& t, Node& self) {
    const Tensor& V = t.node_mut(vi).value;
    real n2 = 0;
    for (size_t i = 0; i < V.size(); ++i) n2 += V[i] * V[i];
    self.value = Tensor::scalar(std::sqrt(n2));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [vi = v.id](Tape& t, Node& self) {
    Tensor* g = t.grad_accum(vi);
    if (!g) return;
    const Tensor& V = t.node_mut(vi).value;
    real n = self.value[0];
    if (n < kTiny) return;
    for (size_t i = 0; i < V.size(); ++i) (*g)[i] += self.grad[0] * V[i] / n;
  };
  return Var{id};
}

Var Tape::cosine_row_mean(Var x, Var y, int valid_len) {
  check(x, "cosine_row_mean");
  check(y, "cosine_row_mean");
  const Tensor& X = value(x);
  const Tensor& Y = value(y);
  MMVD_CHECK(X.ndim() == 2 && X.same_shape(Y), ErrorCode::ShapeMismatch,
             "cosine_row_mean: ", X.shape_str(), " vs ", Y.shape_str());
  MMVD_CHECK(valid_len >= 1 && valid_len <= X.rows(), ErrorCode::InvalidArgument,
             "cosine_row_mean: valid_len ", valid_len, " vs rows ", X.rows());
  int id = new_node("cosine_row_mean", {x.id, y.id},
                    node(x).requires_grad || node(y).requires_grad);
  auto fwd = [xi = x.id, yi = y.id, valid_len](Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& Y = t.node_mut(yi).value;
    const int D = X.cols();
    real acc = 0;
    for (int r = 0; r < valid_len; ++r) {
      const real* xr = X.data() + static_cast<size_t>(r) * D;
      const real* yr = Y.data() + static_cast<size_t>(r) * D;
      real nx = 0, ny = 0, dot = 0;
      for (int c = 0; c < D; ++c) {
        nx += xr[c] * xr[c];
        ny += yr[c] * yr[c];
        dot += xr[c] * yr[c];
      }
      real denom = std::sqrt(nx) * std::sqrt(ny);
      if (denom >= kTiny) acc += dot / denom;  // zero rows contribute 0
    }
    self.value = Tensor::scalar(acc / static_cast<real>(valid_len));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [xi = x.id, yi = y.id, valid_len](
                                                 Tape& t, Node& self) {
    const Tensor& X = t.node_mut(xi).value;
    const Tensor& Y = t.node_mut(yi).value;
    Tensor* gx = t.grad_accum(xi);
    Tensor* gy = t.grad_accum(yi);
    if (!gx && !gy) return;
    const int D = X.cols();
    const real gs = self.grad[0] / static_cast<real>(valid_len);
    for (int r = 0; r < valid_len; ++r) {
      const real* xr = X.data() + static_cast<size_t>(r) * D;
      const real* yr = Y.data() + static_cast<size_t>(r) * D;
      real nx2 = 0, ny2 = 0, dot = 0;
      for (int c = 0; c < D; ++c) {
        nx2 += xr[c] * xr[c];
        ny2 += yr[c] * yr[c];
        dot += xr[c] * yr[c];
      }
      real nx = std::sqrt(nx2), ny = std::sqrt(ny2);
      if (nx * ny < kTiny) continue;
      real cosr = dot / (nx * ny);
      if (gx) {
        real* o = gx->data() + static_cast<size_t>(r) * D;
        for (int c = 0; c < D; ++c)
          o[c] += gs * (yr[c] / (nx * ny) - cosr * xr[c] / nx2);
      }
      if (gy) {
        real* o = gy->data() + static_cast<size_t>(r) * D;
        for (int c = 0; c < D; ++c)
          o[c] += gs * (xr[c] / (nx * ny) - cosr * yr[c] / ny2);
      }
    }
  };
  return Var{id};
}

Var Tape::score_cross_entropy(Var p, Var q, int valid_len, real eps) {
  check(p, "score_cross_entropy");
  check(q, "score_cross_entropy");
  const Tensor& P = value(p);
  const Tensor& Q = value(q);
  MMVD_CHECK(P.ndim() == 1 && P.same_shape(Q), ErrorCode::ShapeMismatch,
             "score_cross_entropy: ", P.shape_str(), " vs ", Q.shape_str());
  MMVD_CHECK(valid_len >= 1 && valid_len <= P.dim(0), ErrorCode::InvalidArgument,
             "score_cross_entropy: valid_len ", valid_len, " vs length ", P.dim(0));
  MMVD_CHECK(eps > 0 && eps < real(0.5), ErrorCode::InvalidArgument,
             "score_cross_entropy: eps ", eps);
  int id = new_node("score_cross_entropy", {p.id, q.id},
                    node(p).requires_grad || node(q).requires_grad);
  auto clampit = [](real v, real e) { return v < e ? e : (v > 1 - e ? 1 - e : v); };
  auto fwd = [pi = p.id, qi = q.id, valid_len, eps, clampit](Tape& t, Node& self) {
    const Tensor& P = t.node_mut(pi).value;
    const Tensor& Q = t.node_mut(qi).value;
    real acc = 0;
    for (int r = 0; r < valid_len; ++r) {
      real pc = clampit(P[static_cast<size_t>(r)], eps);
      real qc = clampit(Q[static_cast<size_t>(r)], eps);
      acc -= pc * std::log(qc) + (1 - pc) * std::log(1 - qc);
    }
    self.value = Tensor::scalar(acc / static_cast<real>(valid_len));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [pi = p.id, qi = q.id, valid_len, eps,
                                              clampit](Tape& t, Node& self) {
    const Tensor& P = t.node_mut(pi).value;
    const Tensor& Q = t.node_mut(qi).value;
    Tensor* gp = t.grad_accum(pi);
    Tensor* gq = t.grad_accum(qi);
    if (!gp && !gq) return;
    const real gs = self.grad[0] / static_cast<real>(valid_len);
    for (int r = 0; r < valid_len; ++r) {
      real pv = P[static_cast<size_t>(r)];
      real qv = Q[static_cast<size_t>(r)];
      real pc = clampit(pv, eps);
      real qc = clampit(qv, eps);
      // clamp has zero slope outside the active range
      if (gp && pv > eps && pv < 1 - eps)
        (*gp)[static_cast<size_t>(r)] += gs * (std::log(1 - qc) - std::log(qc));
      if (gq && qv > eps && qv < 1 - eps)
        (*gq)[static_cast<size_t>(r)] += gs * (-pc / qc + (1 - pc) / (1 - qc));
    }
  };
  return Var{id};
}

Var Tape::bce(Var s, real y, real eps) {
  check(s, "bce");
  const Tensor& S = value(s);
  MMVD_CHECK(S.size() == 1, ErrorCode::ShapeMismatch, "bce: score must be scalar, got ",
             S.shape_str());
  MMVD_CHECK(y == real(0) || y == real(1), ErrorCode::InvalidArgument,
             "bce: label must be 0 or 1, got ", y);
  MMVD_CHECK(eps > 0 && eps < real(0.5), ErrorCode::InvalidArgument, "bce: eps ", eps);
  int id = new_node("bce", {s.id}, node(s).requires_grad);
  auto clampit = [](real v, real e) { return v < e ? e : (v > 1 - e ? 1 - e : v); };
  auto fwd = [si = s.id, y, eps, clampit](Tape& t, Node& self) {
    real sc = clampit(t.node_mut(si).value[0], eps);
    self.value = Tensor::scalar(-(y * std::log(sc) + (1 - y) * std::log(1 - sc)));
  };
  fwd(*this, nodes_[static_cast<size_t>(id)]);
  nodes_[static_cast<size_t>(id)].recompute = fwd;
  nodes_[static_cast<size_t>(id)].backprop = [si = s.id, y, eps, clampit](Tape& t,
                                                                          Node& self) {
    if (Tensor* g = t.grad_accum(si)) {
      real sv = t.node_mut(si).value[0];
      if (sv > eps && sv < 1 - eps) {
        real sc = clampit(sv, eps);
        (*g)[0] += self.grad[0] * (-y / sc + (1 - y) / (1 - sc));
      }
    }
  };
  return Var{id};
}

}  // namespace mmvd::ad
