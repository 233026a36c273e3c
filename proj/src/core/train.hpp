#pragma once

#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/batch.hpp"
#include "core/config.hpp"
#include "core/eval.hpp"
#include "core/mfms.hpp"
#include "core/params.hpp"

namespace mmvd::train {

struct IterRecord {
  int iter = 0;
  double umil = 0, ma = 0, mmil = 0, triplet = 0, total = 0;
  double m_ra = 0, m_rf = 0;
  std::vector<int> theta_ra, theta_rf;
  double eval_ap = -1;  // fused held-out AP when this iteration evaluated, else -1
};

struct ForwardOut {
  ad::Var total;
  ad::Var umil, ma, mmil, triplet;  // invalid handles for terms left out of the graph
  model::MfmsAssignment asn_ra, asn_rf;
  bool aligned = false;  // subspace search ran this pass
};

/// Full three-stage forward over one batch composing the weighted training
/// objective. Terms switched off by their ablation flag never enter the
/// graph; terms with zero weight keep their value but contribute no
/// gradient.
ForwardOut build_total_loss(ad::Tape& tape, const model::ModelParams& mp,
                            const model::Binding& bind, const data::Batch& batch,
                            const cfg::TrainConfig& tc);

struct TrainState {
  cfg::Config cfg;
  model::ModelParams mp;
  Adam adam;
  model::ConvergenceWindow win_ra, win_rf;
  Rng batch_rng;
  std::vector<int> train_pool, holdout;
  int iter = 0;
};

/// Seeds parameters from the dataset dims, carves out the class-stratified
/// held-out bags, and prepares optimizer state. Everything downstream is
/// deterministic in cfg.train.seed.
TrainState train_init(const cfg::Config& cfg, const data::Dataset& ds);

/// One batch, one backward pass, one optimizer step. Aborts with a
/// diagnostic naming the first non-finite loss component.
IterRecord train_step(TrainState& st, const data::Dataset& ds);

struct RunResult {
  std::vector<IterRecord> log;
  eval::Report final_report;
  bool evaluated = false;
};

/// Runs the configured number of steps with periodic held-out evaluation,
/// then writes the resolved config, the parameter checkpoint and the
/// per-iteration log into run_dir.
RunResult train_run(TrainState& st, const data::Dataset& ds, const std::string& run_dir);

}  // namespace mmvd::train
