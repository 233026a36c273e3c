// Acceptance gate for the pipeline: one line per criterion, nonzero exit if
// any fails. Each check carries its own independent oracle; nothing here
// trusts the library's arithmetic beyond what it is currently verifying.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "core/align.hpp"
#include "core/batch.hpp"
#include "core/config.hpp"
#include "core/datagen.hpp"
#include "core/encoder.hpp"
#include "core/eval.hpp"
#include "core/fusion.hpp"
#include "core/gradcheck.hpp"
#include "core/mfms.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"
#include "core/train.hpp"

namespace fs = std::filesystem;
using namespace mmvd;

namespace {

using Clock = std::chrono::steady_clock;

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int g_failures = 0;

void report(int num, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", num, name,
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

// coarse value grid so ties actually happen in ranking logic
Tensor coarse_tensor(std::vector<int> shape, Rng& rng, int levels) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<real>(static_cast<int>(rng.next_u64() % levels)) /
           static_cast<real>(levels);
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- criterion 1

bool crit1_search_invariants(std::string& detail) {
  const auto t0 = Clock::now();
  Rng rng(0x5EEDA11);
  const int trials = 1200;
  for (int tr = 0; tr < trials; ++tr) {
    const int d_s = 1 + static_cast<int>(rng.next_u64() % 12);
    const int d_p = d_s + 1 + static_cast<int>(rng.next_u64() % 12);
    const int k = d_s + static_cast<int>(rng.next_u64() % (d_p - d_s + 1));
    const Tensor S = rand_tensor({d_s, d_p}, rng, -1.0, 1.0);
    const model::MfmsAssignment a = model::search_mfms(S, k);

    if (static_cast<int>(a.theta.size()) != d_s) {
      detail = fmt("trial %d: theta not total", tr);
      return false;
    }
    std::vector<char> used(static_cast<size_t>(d_p), 0);
    for (int c : a.theta) {
      if (c < 0 || c >= d_p || used[static_cast<size_t>(c)]) {
        detail = fmt("trial %d: theta not injective", tr);
        return false;
      }
      used[static_cast<size_t>(c)] = 1;
    }
    const std::vector<int> pad = a.theta_pad();
    std::vector<char> seen(static_cast<size_t>(d_p), 0);
    if (static_cast<int>(pad.size()) != d_p) {
      detail = fmt("trial %d: theta_pad wrong size", tr);
      return false;
    }
    for (int c : pad) {
      if (c < 0 || c >= d_p || seen[static_cast<size_t>(c)]) {
        detail = fmt("trial %d: theta_pad not a permutation", tr);
        return false;
      }
      seen[static_cast<size_t>(c)] = 1;
    }

    // widen a small feature block and read it back; values bounded away
    // from zero so a zero column can only come from the padding
    ad::Tape tape;
    Tensor X({3, d_s});
    for (size_t i = 0; i < X.size(); ++i) {
      const double v = rng.uniform(0.1, 1.0);
      X[i] = static_cast<real>(rng.next_u64() % 2 ? v : -v);
    }
    const ad::Var wide = model::sparsify(tape, tape.leaf(X, true), a);
    const Tensor& W = tape.value(wide);
    if (W.dim(0) != 3 || W.dim(1) != d_p) {
      detail = fmt("trial %d: sparsify shape", tr);
      return false;
    }
    int zero_cols = 0;
    for (int c = 0; c < d_p; ++c) {
      bool all0 = true;
      for (int r = 0; r < 3; ++r)
        if (W[static_cast<size_t>(r * d_p + c)] != 0.0) all0 = false;
      zero_cols += all0;
    }
    if (zero_cols != d_p - d_s) {
      detail = fmt("trial %d: %d zero columns, want %d", tr, zero_cols, d_p - d_s);
      return false;
    }
    for (int i = 0; i < d_s; ++i)
      for (int r = 0; r < 3; ++r)
        if (W[static_cast<size_t>(r * d_p + a.theta[static_cast<size_t>(i)])] !=
            X[static_cast<size_t>(r * d_s + i)]) {
          detail = fmt("trial %d: reconstruction mismatch", tr);
          return false;
        }
  }
  const double el = secs_since(t0);
  detail = fmt("%d instances in %.2fs", trials, el);
  return el < 10.0;
}

// ---------------------------------------------------------------- criterion 2

bool crit2_full_loss_gradients(std::string& detail) {
  const auto t0 = Clock::now();
  cfg::Config c;
  c.gen.seed = 11;
  c.gen.n_bags = 4;
  c.gen.t_min = 32;
  c.gen.t_max = 40;
  c.gen.dim_rgb = 24;
  c.gen.dim_audio = 8;
  c.gen.dim_flow = 16;
  c.gen.latent_dim = 4;
  c.gen.seg_min = 6;
  c.gen.seg_max = 10;
  c.encoder.dim_rgb = 16;
  c.encoder.dim_flow = 8;
  c.encoder.dim_audio = 4;
  c.encoder.heads = 2;
  c.encoder.layers = 1;
  c.encoder.local_window = 5;
  c.encoder.ffn_multiplier = 2;
  c.train.seed = 11;
  c.train.batch_size = 2;
  c.train.t_train = 32;
  c.train.holdout_fraction = 0;
  c.train.eval_every = 0;

  const data::Dataset ds = data::generate_dataset(c.gen);
  train::TrainState st = train::train_init(c, ds);
  ad::Tape tape;
  const model::Binding bind = model::bind_params(tape, st.mp.store);
  const data::Batch batch = data::make_batch(ds, st.train_pool, 2, c.train.t_train, 0.0,
                                             st.batch_rng);
  if (batch.items[0].y == batch.items[1].y) {
    detail = "micro batch is single-class, triplet would be inert";
    return false;
  }
  const train::ForwardOut fo = train::build_total_loss(tape, st.mp, bind, batch, c.train);
  if (!fo.umil.ok() || !fo.ma.ok() || !fo.mmil.ok() || !fo.triplet.ok()) {
    detail = "a loss component is missing from the graph";
    return false;
  }
  tape.backward(fo.total);

  Rng srng(0xFDFD);
  double worst = 0;
  std::string worst_name;
  int probed = 0;
  for (int i = 0; i < st.mp.store.count(); ++i) {
    const GradCheckResult r = grad_check(tape, fo.total, bind[i], 1e-5, 12, &srng);
    probed += r.checked;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = st.mp.store.name(i);
    }
  }
  const double el = secs_since(t0);
  detail = fmt("max rel err %.3e (%s), %d probes, %.1fs", worst, worst_name.c_str(),
               probed, el);
  return worst < 1e-4 && el < 60.0;
}

// ---------------------------------------------------------------- criterion 3

// straight re-derivations: stable ranking, plain loops, no library calls
std::vector<int> ref_rank(const Tensor& s, int k, bool highest) {
  std::vector<int> ord(s.size());
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
    const real va = s[static_cast<size_t>(a)], vb = s[static_cast<size_t>(b)];
    if (va != vb) return highest ? va > vb : va < vb;
    return a < b;
  });
  ord.resize(static_cast<size_t>(k));
  return ord;
}

double ref_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<int> ord(s.size());
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(),
                   [&](int a, int b) { return s[static_cast<size_t>(a)] > s[static_cast<size_t>(b)]; });
  double hits = 0, sum = 0;
  int pos = 0;
  for (size_t r = 0; r < ord.size(); ++r) {
    if (y[static_cast<size_t>(ord[r])] == 1) {
      hits += 1;
      sum += hits / static_cast<double>(r + 1);
      ++pos;
    }
  }
  return sum / pos;
}

double ref_bce(double s, int y, double eps) {
  const double p = std::min(1.0 - eps, std::max(eps, s));
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

bool crit3_oracles(std::string& detail) {
  Rng rng(0x03AC1E);
  const real eps = 0.05;

  // top-k pooling: value against a plain selection oracle, index logic
  // against the gradient support
  for (int tr = 0; tr < 500; ++tr) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 80);
    const Tensor s = coarse_tensor({n}, rng, 7);
    const int k = model::top_k_of(n);
    ad::Tape tape;
    const ad::Var sv = tape.leaf(s, true);
    const ad::Var m = tape.topk_mean(sv, k, n);
    const std::vector<int> sel = ref_rank(s, k, true);
    double want = 0;
    for (int i : sel) want += s[static_cast<size_t>(i)];
    want /= k;
    if (std::abs(tape.value(m).item() - want) > 1e-10) {
      detail = fmt("topk_mean value off at trial %d", tr);
      return false;
    }
    tape.backward(m);
    const Tensor g = tape.grad(sv);
    std::vector<char> insel(static_cast<size_t>(n), 0);
    for (int i : sel) insel[static_cast<size_t>(i)] = 1;
    for (int i = 0; i < n; ++i) {
      const bool nz = g[static_cast<size_t>(i)] != 0.0;
      if (nz != static_cast<bool>(insel[static_cast<size_t>(i)])) {
        detail = fmt("topk_mean picked different instances at trial %d", tr);
        return false;
      }
    }
  }

  // average precision vs the rank-walk definition, ties everywhere
  for (int tr = 0; tr < 500; ++tr) {
    const int n = 2 + static_cast<int>(rng.next_u64() % 60);
    std::vector<double> s(static_cast<size_t>(n));
    std::vector<int> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<size_t>(i)] = static_cast<double>(rng.next_u64() % 9) / 8.0;
      y[static_cast<size_t>(i)] = rng.next_u64() % 2 ? 1 : 0;
    }
    y[static_cast<size_t>(rng.next_u64() % n)] = 1;  // at least one positive
    const double got = eval::average_precision(s, y);
    if (std::abs(got - ref_ap(s, y)) > 1e-10) {
      detail = fmt("average_precision off at trial %d", tr);
      return false;
    }
  }

  // triplet vs a from-scratch replay of its selection and geometry
  for (int tr = 0; tr < 500; ++tr) {
    const int nb = 2 + static_cast<int>(rng.next_u64() % 4);
    const int d = 6;
    ad::Tape tape;
    model::VarBatch feats, scores;
    std::vector<int> labels;
    std::vector<Tensor> fraw, sraw;
    for (int b = 0; b < nb; ++b) {
      const int len = 4 + static_cast<int>(rng.next_u64() % 9);
      fraw.push_back(rand_tensor({len, d}, rng, -1.0, 1.0));
      sraw.push_back(coarse_tensor({len}, rng, 5));
      feats.items.push_back(tape.leaf(fraw.back(), true));
      feats.valid_lens.push_back(len);
      scores.items.push_back(tape.leaf(sraw.back(), true));
      scores.valid_lens.push_back(len);
      labels.push_back(static_cast<int>(rng.next_u64() % 2));
    }
    const real margin = 1.0;
    const ad::Var tl = model::triplet_loss(tape, feats, scores, labels, margin);
    const double got = tape.value(tl).item();

    std::vector<std::vector<double>> anchors, poss, negs;
    for (int b = 0; b < nb; ++b) {
      const int len = feats.valid_lens[static_cast<size_t>(b)];
      const int k = model::top_k_of(len);
      auto mean_rows = [&](const std::vector<int>& rows) {
        std::vector<double> v(static_cast<size_t>(d), 0.0);
        for (int r : rows)
          for (int cc = 0; cc < d; ++cc)
            v[static_cast<size_t>(cc)] +=
                fraw[static_cast<size_t>(b)][static_cast<size_t>(r * d + cc)];
        for (double& x : v) x /= rows.size();
        return v;
      };
      if (labels[static_cast<size_t>(b)] == 0)
        anchors.push_back(mean_rows(ref_rank(sraw[static_cast<size_t>(b)], k, true)));
      else {
        poss.push_back(mean_rows(ref_rank(sraw[static_cast<size_t>(b)], k, false)));
        negs.push_back(mean_rows(ref_rank(sraw[static_cast<size_t>(b)], k, true)));
      }
    }
    double want = 0;
    if (!anchors.empty() && !poss.empty()) {
      auto avg = [&](const std::vector<std::vector<double>>& vs) {
        std::vector<double> v(static_cast<size_t>(d), 0.0);
        for (const auto& one : vs)
          for (int cc = 0; cc < d; ++cc) v[static_cast<size_t>(cc)] += one[static_cast<size_t>(cc)];
        for (double& x : v) x /= vs.size();
        double n2 = 0;
        for (double x : v) n2 += x * x;
        if (n2 > 0)
          for (double& x : v) x /= std::sqrt(n2);
        return v;
      };
      const auto a = avg(anchors), p = avg(poss), ng = avg(negs);
      double dap = 0, dan = 0;
      for (int cc = 0; cc < d; ++cc) {
        dap += (a[static_cast<size_t>(cc)] - p[static_cast<size_t>(cc)]) *
               (a[static_cast<size_t>(cc)] - p[static_cast<size_t>(cc)]);
        dan += (a[static_cast<size_t>(cc)] - ng[static_cast<size_t>(cc)]) *
               (a[static_cast<size_t>(cc)] - ng[static_cast<size_t>(cc)]);
      }
      want = std::max(0.0, std::sqrt(dap) - std::sqrt(dan) + margin);
    }
    const bool single_class = anchors.empty() || poss.empty();
    if (single_class && got != 0.0) {
      detail = fmt("triplet not exactly zero on single-class trial %d", tr);
      return false;
    }
    if (std::abs(got - want) > 1e-10) {
      detail = fmt("triplet off at trial %d: %.12f vs %.12f", tr, got, want);
      return false;
    }
  }

  // the alignment composite against per-term recomputation
  for (int tr = 0; tr < 500; ++tr) {
    const int nb = 2 + static_cast<int>(rng.next_u64() % 2);
    const int d = 6;
    const real lam_aux = 0.01;
    ad::Tape tape;
    model::VarBatch zr, za, zf, sr, sa, sf;
    std::vector<int> labels;
    std::vector<Tensor> Zr, Za, Zf, Sr, Sa, Sf;
    std::vector<int> lens;
    for (int b = 0; b < nb; ++b) {
      const int len = 3 + static_cast<int>(rng.next_u64() % 6);
      lens.push_back(len);
      Zr.push_back(rand_tensor({len, d}, rng, -1.0, 1.0));
      Za.push_back(rand_tensor({len, d}, rng, -1.0, 1.0));
      Zf.push_back(rand_tensor({len, d}, rng, -1.0, 1.0));
      Sr.push_back(coarse_tensor({len}, rng, 6));
      Sa.push_back(coarse_tensor({len}, rng, 6));
      Sf.push_back(coarse_tensor({len}, rng, 6));
      auto put = [&](model::VarBatch& vb, const Tensor& t) {
        vb.items.push_back(tape.leaf(t, true));
        vb.valid_lens.push_back(len);
      };
      put(zr, Zr.back());
      put(za, Za.back());
      put(zf, Zf.back());
      put(sr, Sr.back());
      put(sa, Sa.back());
      put(sf, Sf.back());
      labels.push_back(static_cast<int>(rng.next_u64() % 2));
    }
    const model::AlignmentParts parts =
        model::alignment_loss(tape, zr, za, zf, sr, sa, sf, labels, lam_aux, eps);

    auto cos_ref = [&](const std::vector<Tensor>& X, const std::vector<Tensor>& Y) {
      double acc = 0;
      int count = 0;
      for (int b = 0; b < nb; ++b)
        for (int r = 0; r < lens[static_cast<size_t>(b)]; ++r) {
          double dot = 0, nx = 0, ny = 0;
          for (int cc = 0; cc < d; ++cc) {
            const double xv = X[static_cast<size_t>(b)][static_cast<size_t>(r * d + cc)];
            const double yv = Y[static_cast<size_t>(b)][static_cast<size_t>(r * d + cc)];
            dot += xv * yv;
            nx += xv * xv;
            ny += yv * yv;
          }
          acc += (nx > 0 && ny > 0) ? dot / (std::sqrt(nx) * std::sqrt(ny)) : 0.0;
          ++count;
        }
      return 1.0 - acc / count;
    };
    auto sce_ref = [&](const std::vector<Tensor>& P, const std::vector<Tensor>& Q) {
      double acc = 0;
      int count = 0;
      for (int b = 0; b < nb; ++b)
        for (int r = 0; r < lens[static_cast<size_t>(b)]; ++r) {
          const double p = std::min(1.0 - static_cast<double>(eps),
                                    std::max(static_cast<double>(eps),
                                             static_cast<double>(P[static_cast<size_t>(b)][static_cast<size_t>(r)])));
          const double q = std::min(1.0 - static_cast<double>(eps),
                                    std::max(static_cast<double>(eps),
                                             static_cast<double>(Q[static_cast<size_t>(b)][static_cast<size_t>(r)])));
          acc += -(p * std::log(q) + (1.0 - p) * std::log(1.0 - q));
          ++count;
        }
      return acc / count;
    };
    auto mil_ref = [&](const std::vector<Tensor>& S) {
      double acc = 0;
      for (int b = 0; b < nb; ++b) {
        const int len = lens[static_cast<size_t>(b)];
        const int k = model::top_k_of(len);
        const std::vector<int> sel = ref_rank(S[static_cast<size_t>(b)], k, true);
        double m = 0;
        for (int i : sel) m += S[static_cast<size_t>(b)][static_cast<size_t>(i)];
        m /= k;
        acc += ref_bce(m, labels[static_cast<size_t>(b)], eps);
      }
      return acc / nb;
    };

    const double want = cos_ref(Zr, Za) + sce_ref(Sr, Sa) + cos_ref(Zr, Zf) +
                        sce_ref(Sr, Sf) + cos_ref(Za, Zf) + sce_ref(Sa, Sf) +
                        lam_aux * (mil_ref(Sa) + mil_ref(Sf));
    if (std::abs(tape.value(parts.total).item() - want) > 1e-10) {
      detail = fmt("alignment composite off at trial %d", tr);
      return false;
    }
  }

  detail = "topk_mean, average_precision, triplet, alignment composite: 500 each";
  return true;
}

// ---------------------------------------------------------------- criterion 4

model::MfmsAssignment fake_assignment(std::vector<int> theta, int d_s, int d_p) {
  model::MfmsAssignment a;
  a.d_s = d_s;
  a.d_p = d_p;
  a.theta = std::move(theta);
  return a;
}

bool crit4_convergence(std::string& detail) {
  Rng rng(0xC0417);
  // never below one, any window content
  for (int tr = 0; tr < 400; ++tr) {
    const int d_s = 1 + static_cast<int>(rng.next_u64() % 6);
    const int d_p = d_s + 1 + static_cast<int>(rng.next_u64() % 8);
    const int w = 1 + static_cast<int>(rng.next_u64() % 5);
    model::ConvergenceWindow win(w, d_s, d_p);
    const int pushes = 1 + static_cast<int>(rng.next_u64() % (2 * w));
    for (int p = 0; p < pushes; ++p) {
      std::vector<int> dims(static_cast<size_t>(d_p));
      std::iota(dims.begin(), dims.end(), 0);
      rng.shuffle(dims);
      dims.resize(static_cast<size_t>(d_s));
      const double m = win.update(fake_assignment(dims, d_s, d_p));
      if (m < 1.0 - 1e-12) {
        detail = fmt("m = %.12f below one at trial %d", m, tr);
        return false;
      }
    }
  }
  // a repeated assignment pins m at exactly one
  for (int tr = 0; tr < 100; ++tr) {
    const int d_s = 1 + static_cast<int>(rng.next_u64() % 6);
    const int d_p = d_s + 1 + static_cast<int>(rng.next_u64() % 8);
    const int w = 2 + static_cast<int>(rng.next_u64() % 4);
    std::vector<int> dims(static_cast<size_t>(d_p));
    std::iota(dims.begin(), dims.end(), 0);
    rng.shuffle(dims);
    dims.resize(static_cast<size_t>(d_s));
    model::ConvergenceWindow win(w, d_s, d_p);
    for (int p = 0; p < w + 3; ++p) {
      const double m = win.update(fake_assignment(dims, d_s, d_p));
      if (m != 1.0) {
        detail = fmt("repeated assignment gave m = %.12f", m);
        return false;
      }
    }
  }
  // the two-step hand example: {0,1} then {0,2} over d_s=2 gives exactly 2
  model::ConvergenceWindow win(2, 2, 3);
  win.update(fake_assignment({0, 1}, 2, 3));
  const double m = win.update(fake_assignment({0, 2}, 2, 3));
  if (m != 2.0) {
    detail = fmt("hand example gave %.12f, want 2.0", m);
    return false;
  }
  detail = "m >= 1 on 400 random states, repeats pin 1.0, hand example 2.0";
  return true;
}

// ---------------------------------------------------------------- criterion 8

bool crit8_degenerate_batches(std::string& detail) {
  cfg::Config c;
  c.gen.seed = 5;
  c.gen.n_bags = 6;
  c.gen.t_min = 32;
  c.gen.t_max = 40;
  c.gen.dim_rgb = 24;
  c.gen.dim_audio = 8;
  c.gen.dim_flow = 16;
  c.gen.latent_dim = 4;
  c.gen.seg_min = 6;
  c.gen.seg_max = 10;
  c.encoder.dim_rgb = 16;
  c.encoder.dim_flow = 8;
  c.encoder.dim_audio = 4;
  c.encoder.heads = 2;
  c.encoder.layers = 1;
  c.encoder.local_window = 5;
  c.encoder.ffn_multiplier = 2;
  c.train.seed = 5;
  c.train.batch_size = 2;
  c.train.t_train = 32;
  c.train.holdout_fraction = 0;
  c.train.eval_every = 0;

  const data::Dataset ds = data::generate_dataset(c.gen);
  train::TrainState st = train::train_init(c, ds);

  // single-bag pools force single-class batches through the real sampler
  for (int want_y : {1, 0}) {
    int pick = -1;
    for (size_t i = 0; i < ds.bags.size(); ++i)
      if (ds.bags[i].y == want_y) pick = static_cast<int>(i);
    const std::vector<int> pool{pick};
    ad::Tape tape;
    const model::Binding bind = model::bind_params(tape, st.mp.store);
    const data::Batch batch =
        data::make_batch(ds, pool, 2, c.train.t_train, 0.0, st.batch_rng);
    if (batch.items[0].y != want_y || batch.items[1].y != want_y) {
      detail = "could not arrange a single-class batch";
      return false;
    }
    const train::ForwardOut fo =
        train::build_total_loss(tape, st.mp, bind, batch, c.train);
    if (!fo.triplet.ok() || tape.value(fo.triplet).item() != 0.0) {
      detail = fmt("triplet on all-%d batch is %.12f, want exactly 0", want_y,
                   fo.triplet.ok() ? tape.value(fo.triplet).item() : -1.0);
      return false;
    }
    if (!std::isfinite(tape.value(fo.total).item())) {
      detail = "total loss not finite on a single-class batch";
      return false;
    }
    // the full step machinery must survive it too
    tape.backward(fo.total);
    const int n = st.mp.store.count();
    std::vector<Tensor> grads(static_cast<size_t>(n));
    std::vector<Tensor*> params(static_cast<size_t>(n));
    std::vector<const Tensor*> gptr(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      grads[static_cast<size_t>(i)] = tape.grad(bind[i]);
      params[static_cast<size_t>(i)] = &st.mp.store.value(i);
      gptr[static_cast<size_t>(i)] = &grads[static_cast<size_t>(i)];
    }
    st.adam.step(params, gptr);
  }
  // and ordinary sampled steps keep running afterwards
  for (int i = 0; i < 2; ++i) train::train_step(st, ds);
  detail = "triplet exactly 0 for both single-class polarities, steps keep running";
  return true;
}

// ----------------------------------------------------- criteria 5 and 7 (one run)

struct DefaultRunOutcome {
  bool ran = false;
  double secs = 0;
  double ap_fused = 0, ap_rgb = 0, ap_audio = 0, ap_flow = 0;
  std::vector<train::IterRecord> log;
};

DefaultRunOutcome run_default(const fs::path& dir) {
  DefaultRunOutcome out;
  const auto t0 = Clock::now();
  cfg::Config c;  // stock settings end to end
  const data::Dataset ds = data::generate_dataset(c.gen);
  train::TrainState st = train::train_init(c, ds);
  const train::RunResult rr = train::train_run(st, ds, dir.string());
  out.secs = secs_since(t0);
  out.ran = rr.evaluated;
  if (rr.evaluated) {
    out.ap_fused = rr.final_report.ap_fused;
    out.ap_rgb = rr.final_report.ap_rgb;
    out.ap_audio = rr.final_report.ap_audio;
    out.ap_flow = rr.final_report.ap_flow;
  }
  out.log = rr.log;
  return out;
}

bool crit5_end_to_end(const DefaultRunOutcome& out, std::string& detail) {
  if (!out.ran) {
    detail = "run produced no held-out evaluation";
    return false;
  }
  const double best_single = std::max({out.ap_rgb, out.ap_audio, out.ap_flow});
  detail = fmt("fused AP %.4f vs best single %.4f (rgb %.4f audio %.4f flow %.4f), %.0fs",
               out.ap_fused, best_single, out.ap_rgb, out.ap_audio, out.ap_flow, out.secs);
  return out.ap_fused >= 0.90 && out.ap_fused > best_single && out.secs < 600.0;
}

bool crit7_convergence_trend(const DefaultRunOutcome& out, std::string& detail) {
  const auto& log = out.log;
  if (log.size() < 300) {
    detail = "run too short";
    return false;
  }
  // a partially filled window reports m = 1 trivially at the first step, so
  // "reaches 1" only counts once the window is full
  const size_t full = static_cast<size_t>(cfg::TrainConfig{}.convergence_window) - 1;
  auto first_near_one = [&](auto pick) {
    for (size_t i = full; i < log.size(); ++i)
      if (std::abs(pick(log[i]) - 1.0) <= 0.1) return static_cast<int>(i);
    return -1;
  };
  const int i_rf = first_near_one([](const train::IterRecord& r) { return r.m_rf; });
  const int i_ra = first_near_one([](const train::IterRecord& r) { return r.m_ra; });
  auto trail50 = [&](size_t end, auto pick) {
    double acc = 0;
    for (size_t i = end - 50; i < end; ++i) acc += pick(log[i]);
    return acc / 50.0;
  };
  const double ra_early = trail50(100, [](const train::IterRecord& r) { return r.m_ra; });
  const double ra_late = trail50(300, [](const train::IterRecord& r) { return r.m_ra; });
  const double rf_early = trail50(100, [](const train::IterRecord& r) { return r.m_rf; });
  const double rf_late = trail50(300, [](const train::IterRecord& r) { return r.m_rf; });
  detail = fmt("RF near 1 at iter %d, RA at %d; trailing means RA %.3f->%.3f RF %.3f->%.3f",
               i_rf, i_ra, ra_early, ra_late, rf_early, rf_late);
  const bool rf_first = i_rf >= 0 && (i_ra < 0 || i_rf <= i_ra);
  return rf_first && ra_late < ra_early && rf_late < rf_early;
}

// ---------------------------------------------------------------- criterion 6

double ablation_ap(uint64_t seed, int drop_ma, int drop_umil) {
  cfg::Config c;
  c.gen.seed = seed;
  c.gen.n_bags = 96;
  c.gen.dim_rgb = 256;
  c.gen.dim_audio = 64;
  c.gen.dim_flow = 256;
  c.encoder.dim_rgb = 64;
  c.encoder.dim_flow = 32;
  c.encoder.dim_audio = 16;
  c.encoder.ffn_multiplier = 2;
  c.train.seed = seed;
  c.train.iterations = 150;
  c.train.holdout_fraction = 0.25;
  c.train.eval_every = 0;
  c.train.ablate_ma = drop_ma != 0;
  c.train.ablate_umil = drop_umil != 0;
  const data::Dataset ds = data::generate_dataset(c.gen);
  train::TrainState st = train::train_init(c, ds);
  for (int i = 0; i < c.train.iterations; ++i) train::train_step(st, ds);
  return eval::evaluate(st.mp, ds, st.holdout).ap_fused;
}

bool crit6_ablation_direction(std::string& detail) {
  const auto t0 = Clock::now();
  std::vector<double> full, noma, noumil;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    full.push_back(ablation_ap(seed, 0, 0));
    noma.push_back(ablation_ap(seed, 1, 0));
    noumil.push_back(ablation_ap(seed, 0, 1));
  }
  const double mf = median(full), mm = median(noma), mu = median(noumil);
  detail = fmt("medians over 5 seeds: full %.4f, no-alignment %.4f, no-unimodal %.4f, %.0fs",
               mf, mm, mu, secs_since(t0));
  return mf > mm && mf > mu;
}

}  // namespace

int main(int argc, char** argv) {
  // optional args restrict which criteria run, e.g. `acceptance 1 4 8`
  bool wanted[9];
  std::fill(wanted, wanted + 9, argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n >= 1 && n <= 8) wanted[n] = true;
  }
  std::string d;

  if (wanted[1]) report(1, "subspace search and sparsify invariants", crit1_search_invariants(d), d);
  if (wanted[2])
    report(2, "full-objective gradients match finite differences", crit2_full_loss_gradients(d), d);
  if (wanted[3])
    report(3, "pooling, precision, triplet and alignment match oracles", crit3_oracles(d), d);
  if (wanted[4]) report(4, "convergence indicator math", crit4_convergence(d), d);

  if (wanted[5] || wanted[7]) {
    const fs::path run_dir =
        fs::temp_directory_path() / ("mmvd_accept_run_" + std::to_string(::getpid()));
    const DefaultRunOutcome out = run_default(run_dir);
    std::error_code ec;
    fs::remove_all(run_dir, ec);
    if (wanted[5])
      report(5, "stock run beats 0.90 fused AP and every single modality",
             crit5_end_to_end(out, d), d);
    if (wanted[6]) report(6, "ablations degrade the median fused AP", crit6_ablation_direction(d), d);
    if (wanted[7])
      report(7, "subspace convergence order and downward trend", crit7_convergence_trend(out, d), d);
  } else if (wanted[6]) {
    report(6, "ablations degrade the median fused AP", crit6_ablation_direction(d), d);
  }

  if (wanted[8])
    report(8, "single-class batches are safe and triplet-silent", crit8_degenerate_batches(d), d);

  if (g_failures) std::printf("%d criterion(s) failing\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
