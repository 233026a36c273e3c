#include "core/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "core/align.hpp"
#include "core/encoder.hpp"
#include "core/error.hpp"
#include "core/fusion.hpp"

namespace mmvd::train {

namespace fs = std::filesystem;
using model::VarBatch;

ForwardOut build_total_loss(ad::Tape& tape, const model::ModelParams& mp,
                            const model::Binding& bind, const data::Batch& batch,
                            const cfg::TrainConfig& tc) {
  MMVD_CHECK(!batch.items.empty(), ErrorCode::InvalidArgument, "build_total_loss: empty batch");
  const auto& ec = mp.enc_cfg;
  const bool umil_on = !tc.ablate_umil;
  const bool ma_on = !tc.ablate_ma;
  const bool fusion_on = !tc.ablate_mmil || !tc.ablate_triplet;
  const bool need_proj = ma_on || fusion_on;
  const bool need_sr = umil_on || ma_on;
  const int b = static_cast<int>(batch.items.size());

  std::vector<int> labels(static_cast<size_t>(b));
  VarBatch zr, za, zf, pa, pf, sr, sa, sf;
  for (int i = 0; i < b; ++i) {
    const data::BatchItem& it = batch.items[static_cast<size_t>(i)];
    labels[static_cast<size_t>(i)] = static_cast<int>(it.y);
    const int len = it.valid_len;
    auto push = [len](VarBatch& vb, ad::Var v) {
      vb.items.push_back(v);
      vb.valid_lens.push_back(len);
    };
    ad::Var r = model::encode(tape, tape.leaf(it.rgb), bind, mp.enc_rgb, ec, ec.dim_rgb, len);
    ad::Var a =
        model::encode(tape, tape.leaf(it.audio), bind, mp.enc_audio, ec, ec.dim_audio, len);
    ad::Var f =
        model::encode(tape, tape.leaf(it.flow), bind, mp.enc_flow, ec, ec.dim_flow, len);
    push(zr, r);
    push(za, a);
    push(zf, f);
    if (need_proj) {
      push(pa, model::project_secondary(tape, a, bind, mp.proj_audio));
      push(pf, model::project_secondary(tape, f, bind, mp.proj_flow));
    }
    if (need_sr) push(sr, model::regress(tape, r, bind, mp.reg_rgb));
    if (umil_on) {
      push(sa, model::regress(tape, a, bind, mp.reg_audio));
      push(sf, model::regress(tape, f, bind, mp.reg_flow));
    }
  }

  ForwardOut out;
  std::vector<ad::Var> terms;
  std::vector<real> weights;

  if (umil_on) {
    ad::Var mr = model::batch_mil(tape, sr, labels, tc.clamp_eps);
    ad::Var ma_ = model::batch_mil(tape, sa, labels, tc.clamp_eps);
    ad::Var mf = model::batch_mil(tape, sf, labels, tc.clamp_eps);
    out.umil = tape.weighted_sum({mr, ma_, mf}, {1, 1, 1});
    terms.push_back(out.umil);
    weights.push_back(1);
  }

  if (ma_on) {
    // alignment-side views; optionally cut off from the encoders
    VarBatch al_pa = pa, al_pf = pf;
    if (!tc.align_into_encoders) {
      al_pa.items.clear();
      al_pf.items.clear();
      for (int i = 0; i < b; ++i) {
        al_pa.items.push_back(model::project_secondary(
            tape, tape.stop_grad(za.items[static_cast<size_t>(i)]), bind, mp.proj_audio));
        al_pf.items.push_back(model::project_secondary(
            tape, tape.stop_grad(zf.items[static_cast<size_t>(i)]), bind, mp.proj_flow));
      }
    }
    // the subspace search runs on current values, outside the graph
    Tensor flat_a, flat_f, flat_r;
    {
      std::vector<const Tensor*> va, vf, vr;
      for (int i = 0; i < b; ++i) {
        va.push_back(&tape.value(al_pa.items[static_cast<size_t>(i)]));
        vf.push_back(&tape.value(al_pf.items[static_cast<size_t>(i)]));
        vr.push_back(&tape.value(zr.items[static_cast<size_t>(i)]));
      }
      flat_a = model::flatten_valid(va, za.valid_lens);
      flat_f = model::flatten_valid(vf, zf.valid_lens);
      flat_r = model::flatten_valid(vr, zr.valid_lens);
    }
    const int k = tc.k_search == 0 ? ec.dim_rgb : tc.k_search;
    out.asn_ra = model::search_mfms(model::similarity_matrix(flat_a, flat_r), k);
    out.asn_rf = model::search_mfms(model::similarity_matrix(flat_f, flat_r), k);
    out.aligned = true;

    VarBatch zta, ztf, zr_al, sr_al, sha, shf;
    zta.valid_lens = ztf.valid_lens = zr_al.valid_lens = za.valid_lens;
    sr_al.valid_lens = sha.valid_lens = shf.valid_lens = za.valid_lens;
    for (int i = 0; i < b; ++i) {
      const size_t ii = static_cast<size_t>(i);
      zta.items.push_back(
          model::sparsify(tape, al_pa.items[ii], out.asn_ra, tc.mfms_literal_gather));
      ztf.items.push_back(
          model::sparsify(tape, al_pf.items[ii], out.asn_rf, tc.mfms_literal_gather));
      zr_al.items.push_back(tc.fixed_rgb ? tape.stop_grad(zr.items[ii]) : zr.items[ii]);
      sr_al.items.push_back(tc.fixed_rgb ? tape.stop_grad(sr.items[ii]) : sr.items[ii]);
      sha.items.push_back(model::regress(tape, al_pa.items[ii], bind, mp.reg_audio));
      shf.items.push_back(model::regress(tape, al_pf.items[ii], bind, mp.reg_flow));
    }
    model::AlignmentParts parts = model::alignment_loss(tape, zr_al, zta, ztf, sr_al, sha,
                                                        shf, labels, tc.lambda_aux,
                                                        tc.clamp_eps);
    out.ma = parts.total;
    terms.push_back(out.ma);
    weights.push_back(tc.lambda_ma);
  }

  if (fusion_on) {
    VarBatch feats, scores;
    feats.valid_lens = scores.valid_lens = zr.valid_lens;
    for (int i = 0; i < b; ++i) {
      const size_t ii = static_cast<size_t>(i);
      ad::Var fused = model::fuse(tape, pa.items[ii], zr.items[ii], pf.items[ii],
                                  zr.valid_lens[ii]);
      ad::Var enc = model::multimodal_encode(tape, fused, bind, mp.fusion);
      feats.items.push_back(enc);
      scores.items.push_back(model::regress(tape, enc, bind, mp.reg_fused));
    }
    if (!tc.ablate_mmil) {
      out.mmil = model::batch_mil(tape, scores, labels, tc.clamp_eps);
      terms.push_back(out.mmil);
      weights.push_back(tc.lambda_mmil);
    }
    if (!tc.ablate_triplet) {
      out.triplet = model::triplet_loss(tape, feats, scores, labels, tc.triplet_margin);
      terms.push_back(out.triplet);
      weights.push_back(tc.lambda_triplet);
    }
  }

  out.total = terms.empty() ? tape.leaf(Tensor::scalar(0))
                            : tape.weighted_sum(terms, weights);
  return out;
}

TrainState train_init(const cfg::Config& cfg, const data::Dataset& ds) {
  cfg.encoder.validate();
  cfg.train.validate();
  MMVD_CHECK(!ds.bags.empty(), ErrorCode::InvalidArgument, "train_init: empty dataset");

  Rng master(cfg.train.seed);
  std::vector<int> pos, neg;
  for (size_t i = 0; i < ds.bags.size(); ++i)
    (ds.bags[i].y == 1 ? pos : neg).push_back(static_cast<int>(i));
  Rng split_rng = master.child(0x401D);
  split_rng.shuffle(pos);
  split_rng.shuffle(neg);
  std::vector<int> train_pool, holdout;
  auto carve = [&](std::vector<int>& cls) {
    int nh = static_cast<int>(std::floor(cfg.train.holdout_fraction * cls.size()));
    nh = std::min(nh, static_cast<int>(cls.size()) - 1);
    nh = std::max(nh, 0);
    for (size_t i = 0; i < cls.size(); ++i)
      (static_cast<int>(i) < nh ? holdout : train_pool).push_back(cls[i]);
  };
  carve(pos);
  carve(neg);
  std::sort(train_pool.begin(), train_pool.end());
  std::sort(holdout.begin(), holdout.end());
  MMVD_CHECK(!train_pool.empty(), ErrorCode::InvalidArgument,
             "train_init: nothing left to train on");

  model::ModelDims dims{ds.dim_rgb, ds.dim_audio, ds.dim_flow};
  model::ModelParams mp = model::ModelParams::build(dims, cfg.encoder, master.child(0x9A7A));
  AdamConfig ac;
  ac.lr = cfg.train.lr;
  ac.beta1 = cfg.train.beta1;
  ac.beta2 = cfg.train.beta2;
  ac.weight_decay = cfg.train.weight_decay;
  const int w = cfg.train.convergence_window;
  return TrainState{cfg,
                    std::move(mp),
                    Adam(ac),
                    model::ConvergenceWindow(w, cfg.encoder.dim_audio, cfg.encoder.dim_rgb),
                    model::ConvergenceWindow(w, cfg.encoder.dim_flow, cfg.encoder.dim_rgb),
                    master.child(0xBA7C4),
                    std::move(train_pool),
                    std::move(holdout),
                    0};
}

IterRecord train_step(TrainState& st, const data::Dataset& ds) {
  const cfg::TrainConfig& tc = st.cfg.train;
  data::Batch batch = data::make_batch(ds, st.train_pool, tc.batch_size, tc.t_train,
                                       tc.frame_drop_rate, st.batch_rng);
  ad::Tape tape;
  model::Binding bind = model::bind_params(tape, st.mp.store);
  ForwardOut fo = build_total_loss(tape, st.mp, bind, batch, tc);

  IterRecord rec;
  rec.iter = st.iter;
  auto component = [&tape](ad::Var v) { return v.ok() ? tape.value(v).item() : real(0); };
  rec.umil = component(fo.umil);
  rec.ma = component(fo.ma);
  rec.mmil = component(fo.mmil);
  rec.triplet = component(fo.triplet);
  rec.total = tape.value(fo.total).item();
  const std::pair<const char*, double> named[] = {{"unimodal mil", rec.umil},
                                                  {"alignment", rec.ma},
                                                  {"multimodal mil", rec.mmil},
                                                  {"triplet", rec.triplet},
                                                  {"total", rec.total}};
  for (const auto& [name, v] : named)
    MMVD_CHECK(std::isfinite(v), ErrorCode::Numeric, "iteration ", st.iter,
               ": non-finite ", name, " loss");
  if (fo.aligned) {
    rec.m_ra = st.win_ra.update(fo.asn_ra);
    rec.m_rf = st.win_rf.update(fo.asn_rf);
    rec.theta_ra = fo.asn_ra.theta;
    rec.theta_rf = fo.asn_rf.theta;
  }

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
  ++st.iter;
  return rec;
}

namespace {

nlohmann::json record_json(const IterRecord& r) {
  nlohmann::json j{{"iter", r.iter},       {"umil", r.umil},   {"ma", r.ma},
                   {"mmil", r.mmil},       {"triplet", r.triplet}, {"total", r.total},
                   {"m_ra", r.m_ra},       {"m_rf", r.m_rf},
                   {"theta_ra", r.theta_ra}, {"theta_rf", r.theta_rf}};
  if (r.eval_ap >= 0) j["eval_ap"] = r.eval_ap;
  return j;
}

}  // namespace

RunResult train_run(TrainState& st, const data::Dataset& ds, const std::string& run_dir) {
  fs::create_directories(run_dir);
  {
    const fs::path cpath = fs::path(run_dir) / "config.json";
    std::ofstream c(cpath);
    MMVD_CHECK(c.good(), ErrorCode::Io, "train_run: cannot open ", cpath.string());
    c << cfg::config_to_json(st.cfg).dump(2) << '\n';
    MMVD_CHECK(c.good(), ErrorCode::Io, "train_run: short write on ", cpath.string());
  }
  bool holdout_pos = false;
  for (int i : st.holdout)
    if (ds.bags[static_cast<size_t>(i)].y == 1) holdout_pos = true;

  RunResult rr;
  const int iters = st.cfg.train.iterations;
  const int ee = st.cfg.train.eval_every;
  for (int i = 0; i < iters; ++i) {
    IterRecord rec = train_step(st, ds);
    const bool last = i + 1 == iters;
    if (!st.holdout.empty() && holdout_pos && ee > 0 && ((i + 1) % ee == 0 || last)) {
      eval::Report rep = eval::evaluate(st.mp, ds, st.holdout);
      rec.eval_ap = rep.ap_fused;
      rr.final_report = std::move(rep);
      rr.evaluated = true;
    }
    rr.log.push_back(std::move(rec));
  }

  model::save_params(st.mp.store, (fs::path(run_dir) / "params.mvdp").string());
  const fs::path lpath = fs::path(run_dir) / "runlog.jsonl";
  std::ofstream lf(lpath);
  MMVD_CHECK(lf.good(), ErrorCode::Io, "train_run: cannot open ", lpath.string());
  for (const IterRecord& r : rr.log) lf << record_json(r).dump() << '\n';
  MMVD_CHECK(lf.good(), ErrorCode::Io, "train_run: short write on ", lpath.string());
  return rr;
}

}  // namespace mmvd::train
