#include "core/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "core/encoder.hpp"
#include "core/error.hpp"
#include "core/fusion.hpp"
#include "core/mfms.hpp"

namespace mmvd::eval {

namespace fs = std::filesystem;

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  MMVD_CHECK(scores.size() == labels.size(), ErrorCode::ShapeMismatch,
             "average_precision: ", scores.size(), " scores vs ", labels.size(), " labels");
  MMVD_CHECK(!scores.empty(), ErrorCode::InvalidArgument, "average_precision: empty input");
  int npos = 0;
  for (int l : labels) {
    MMVD_CHECK(l == 0 || l == 1, ErrorCode::InvalidArgument,
               "average_precision: label ", l);
    npos += l;
  }
  MMVD_CHECK(npos >= 1, ErrorCode::InvalidArgument, "average_precision: no positive labels");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });
  double sum = 0;
  int seen = 0;
  for (size_t r = 0; r < order.size(); ++r)
    if (labels[static_cast<size_t>(order[r])] == 1) {
      ++seen;
      sum += static_cast<double>(seen) / static_cast<double>(r + 1);
    }
  return sum / npos;
}

BagScores infer(const model::ModelParams& mp, const data::Bag& bag) {
  const int t = bag.t();
  MMVD_CHECK(t >= 1, ErrorCode::InvalidArgument, "infer: bag ", bag.id, " has no frames");
  ad::Tape tape;
  model::Binding bind = model::bind_params(tape, mp.store, false);
  const auto& ec = mp.enc_cfg;

  ad::Var zr = model::encode(tape, tape.leaf(bag.rgb), bind, mp.enc_rgb, ec, ec.dim_rgb, t);
  ad::Var za =
      model::encode(tape, tape.leaf(bag.audio), bind, mp.enc_audio, ec, ec.dim_audio, t);
  ad::Var zf = model::encode(tape, tape.leaf(bag.flow), bind, mp.enc_flow, ec, ec.dim_flow, t);
  ad::Var sr = model::regress(tape, zr, bind, mp.reg_rgb);
  ad::Var sa = model::regress(tape, za, bind, mp.reg_audio);
  ad::Var sf = model::regress(tape, zf, bind, mp.reg_flow);
  ad::Var pa = model::project_secondary(tape, za, bind, mp.proj_audio);
  ad::Var pf = model::project_secondary(tape, zf, bind, mp.proj_flow);
  ad::Var fused = model::fuse(tape, pa, zr, pf, t);
  ad::Var enc = model::multimodal_encode(tape, fused, bind, mp.fusion);
  ad::Var sraf = model::regress(tape, enc, bind, mp.reg_fused);

  auto to_vec = [&tape](ad::Var v) {
    const Tensor& s = tape.value(v);
    return std::vector<double>(s.data(), s.data() + s.size());
  };
  BagScores out;
  out.id = bag.id;
  out.y = bag.y;
  out.frame_labels = bag.frame_labels;
  out.s_rgb = to_vec(sr);
  out.s_audio = to_vec(sa);
  out.s_flow = to_vec(sf);
  out.s_fused = to_vec(sraf);
  return out;
}

Report evaluate(const model::ModelParams& mp, const data::Dataset& ds,
                const std::vector<int>& bag_indices) {
  MMVD_CHECK(!bag_indices.empty(), ErrorCode::InvalidArgument, "evaluate: no bags selected");
  Report rep;
  std::vector<double> cr, ca, cf, cm;
  std::vector<int> lab;
  for (int i : bag_indices) {
    MMVD_CHECK(i >= 0 && i < static_cast<int>(ds.bags.size()), ErrorCode::InvalidArgument,
               "evaluate: bag index ", i, " out of range");
    BagScores bs = infer(mp, ds.bags[static_cast<size_t>(i)]);
    cr.insert(cr.end(), bs.s_rgb.begin(), bs.s_rgb.end());
    ca.insert(ca.end(), bs.s_audio.begin(), bs.s_audio.end());
    cf.insert(cf.end(), bs.s_flow.begin(), bs.s_flow.end());
    cm.insert(cm.end(), bs.s_fused.begin(), bs.s_fused.end());
    for (uint8_t l : bs.frame_labels) lab.push_back(l);
    rep.bags.push_back(std::move(bs));
  }
  rep.frames = static_cast<int>(lab.size());
  rep.ap_fused = average_precision(cm, lab);
  rep.ap_rgb = average_precision(cr, lab);
  rep.ap_audio = average_precision(ca, lab);
  rep.ap_flow = average_precision(cf, lab);
  return rep;
}

void export_traces(const Report& rep, const std::string& out_dir) {
  MMVD_CHECK(!rep.bags.empty(), ErrorCode::InvalidArgument, "export_traces: empty report");
  fs::create_directories(out_dir);
  char buf[64];
  for (const BagScores& b : rep.bags) {
    const fs::path path = fs::path(out_dir) / (b.id + ".csv");
    std::ofstream f(path);
    MMVD_CHECK(f.good(), ErrorCode::Io, "export_traces: cannot open ", path.string());
    f << "time,s_A,s_F,s_R,s_RAF,label\n";
    for (size_t i = 0; i < b.s_fused.size(); ++i) {
      f << i;
      for (double v : {b.s_audio[i], b.s_flow[i], b.s_rgb[i], b.s_fused[i]}) {
        std::snprintf(buf, sizeof buf, ",%.9f", v);
        f << buf;
      }
      f << ',' << static_cast<int>(b.frame_labels[i]) << '\n';
    }
    MMVD_CHECK(f.good(), ErrorCode::Io, "export_traces: short write on ", path.string());
  }
  nlohmann::json j{{"ap_fused", rep.ap_fused}, {"ap_rgb", rep.ap_rgb},
                   {"ap_audio", rep.ap_audio}, {"ap_flow", rep.ap_flow},
                   {"frames", rep.frames},     {"bags", rep.bags.size()}};
  const fs::path spath = fs::path(out_dir) / "summary.json";
  std::ofstream s(spath);
  MMVD_CHECK(s.good(), ErrorCode::Io, "export_traces: cannot open ", spath.string());
  s << j.dump(2) << '\n';
  MMVD_CHECK(s.good(), ErrorCode::Io, "export_traces: short write on ", spath.string());
}

}  // namespace mmvd::eval
