#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <mmvd/mmvd.h>

using nlohmann::json;

namespace {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* v = std::getenv("MMVD_LOG");
  if (!v) return LogLevel::Info;
  if (std::strcmp(v, "quiet") == 0 || std::strcmp(v, "0") == 0) return LogLevel::Quiet;
  if (std::strcmp(v, "debug") == 0 || std::strcmp(v, "2") == 0) return LogLevel::Debug;
  return LogLevel::Info;
}

void info(const std::string& line) {
  if (log_level() >= LogLevel::Info) std::fprintf(stdout, "%s\n", line.c_str());
}

void debug(const std::string& line) {
  if (log_level() >= LogLevel::Debug) std::fprintf(stdout, "%s\n", line.c_str());
}

int fail(mmvd_status s) {
  std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(s), mmvd_last_error());
  return 1;
}

struct ConfigHandle {
  mmvd_config* c = nullptr;
  ~ConfigHandle() { mmvd_config_free(c); }
};

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { mmvd_string_free(s); }
  std::string str() const { return s ? std::string(s) : std::string(); }
};

/// Defaults or file, then --set overrides in order, then convenience flags.
mmvd_status build_config(ConfigHandle& h, const std::string& config_file,
                         const std::vector<std::string>& sets) {
  mmvd_status s = config_file.empty() ? mmvd_config_create(&h.c)
                                      : mmvd_config_load(config_file.c_str(), &h.c);
  if (s != MMVD_OK) return s;
  for (const std::string& kv : sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return MMVD_ERR_INVALID_ARGUMENT;
    }
    s = mmvd_config_set(h.c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != MMVD_OK) return s;
  }
  return MMVD_OK;
}

mmvd_status apply_set(ConfigHandle& h, const std::string& key, const std::string& value) {
  return mmvd_config_set(h.c, key.c_str(), value.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal violence detection pipeline"};
  app.require_subcommand(1);

  std::string config_file, out_dir, data_dir, run_dir;
  std::vector<std::string> sets, ablate;
  std::string seed_str;
  int iterations = -1;
  bool force = false, eval_all = false;
  std::uint64_t gc_seed = 1;
  int gc_components = 4;
  double gc_tol = 1e-4;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file");
    cmd->add_option("--set", sets, "dotted-key override, key=value, repeatable");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_config_opts(gen);
  gen->add_option("--out", out_dir, "dataset directory")->required();
  gen->add_option("--seed", seed_str, "shorthand for --set gen.seed=<v>");
  gen->add_flag("--force", force, "overwrite an existing dataset");

  CLI::App* train = app.add_subcommand("train", "train on a generated dataset");
  add_config_opts(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", run_dir, "run directory")->required();
  train->add_option("--seed", seed_str, "shorthand for --set train.seed=<v>");
  train->add_option("--iterations", iterations, "shorthand for --set train.iterations=<v>");
  train->add_option("--ablate", ablate, "drop a loss term: umil, ma, mmil or triplet")
      ->check(CLI::IsMember({"umil", "ma", "mmil", "triplet"}));
  train->add_flag("--force", force, "overwrite an existing run directory");

  CLI::App* eval = app.add_subcommand("eval", "score a dataset with a trained run");
  eval->add_option("--run", run_dir, "run directory from train")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "directory for traces and summary")->required();
  eval->add_flag("--all", eval_all, "score every bag, not just the run's held-out split");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of recorded gradients");
  gradcheck->add_option("--seed", gc_seed, "seed for the micro model and batch");
  gradcheck->add_option("--components", gc_components,
                        "sampled entries per parameter (0 = all)");
  gradcheck->add_option("--tol", gc_tol, "max relative error allowed");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    ConfigHandle h;
    mmvd_status s = build_config(h, config_file, sets);
    if (s == MMVD_OK && !seed_str.empty()) s = apply_set(h, "gen.seed", seed_str);
    if (s != MMVD_OK) return fail(s);
    OwnedString summary;
    s = mmvd_generate(h.c, out_dir.c_str(), force ? 1 : 0, &summary.s);
    if (s != MMVD_OK) return fail(s);
    const json j = json::parse(summary.str());
    info("wrote " + std::to_string(j["n_bags"].get<int>()) + " bags (" +
         std::to_string(j["n_anomalous"].get<int>()) + " anomalous, " +
         std::to_string(j["n_normal"].get<int>()) + " normal) to " + out_dir);
    debug(summary.str());
    return 0;
  }

  if (train->parsed()) {
    ConfigHandle h;
    mmvd_status s = build_config(h, config_file, sets);
    if (s == MMVD_OK && !seed_str.empty()) s = apply_set(h, "train.seed", seed_str);
    if (s == MMVD_OK && iterations >= 0)
      s = apply_set(h, "train.iterations", std::to_string(iterations));
    for (const std::string& a : ablate)
      if (s == MMVD_OK) s = apply_set(h, "train.ablate_" + a, "true");
    if (s != MMVD_OK) return fail(s);
    OwnedString summary;
    s = mmvd_train(h.c, data_dir.c_str(), run_dir.c_str(), force ? 1 : 0, &summary.s);
    if (s != MMVD_OK) return fail(s);
    const json j = json::parse(summary.str());
    std::string line = "trained " + std::to_string(j["iterations"].get<int>()) +
                       " iterations into " + run_dir;
    if (j["eval_ap"].get<double>() >= 0)
      line += ", held-out fused AP " + std::to_string(j["eval_ap"].get<double>());
    info(line);
    debug(summary.str());
    return 0;
  }

  if (eval->parsed()) {
    OwnedString summary;
    mmvd_status s = mmvd_evaluate(run_dir.c_str(), data_dir.c_str(), out_dir.c_str(),
                                  eval_all ? 0 : 1, &summary.s);
    if (s != MMVD_OK) return fail(s);
    const json j = json::parse(summary.str());
    info("scored " + std::to_string(j["bags"].get<size_t>()) + " bags (" +
         std::to_string(j["frames"].get<int>()) + " frames): fused AP " +
         std::to_string(j["ap_fused"].get<double>()) + ", rgb " +
         std::to_string(j["ap_rgb"].get<double>()) + ", audio " +
         std::to_string(j["ap_audio"].get<double>()) + ", flow " +
         std::to_string(j["ap_flow"].get<double>()));
    debug(summary.str());
    return 0;
  }

  if (gradcheck->parsed()) {
    double max_err = 0;
    OwnedString report;
    mmvd_status s = mmvd_grad_check(gc_seed, gc_components, &max_err, &report.s);
    if (s != MMVD_OK) return fail(s);
    const json j = json::parse(report.str());
    for (const auto& p : j["params"])
      debug(p["name"].get<std::string>() + ": max rel err " +
            std::to_string(p["max_rel_err"].get<double>()) + " over " +
            std::to_string(p["checked"].get<int>()) + " entries");
    const bool ok = max_err < gc_tol;
    info("gradient check over " + std::to_string(j["params"].size()) +
         " parameter groups: max relative error " + std::to_string(max_err) +
         (ok ? " (pass)" : " (FAIL)"));
    return ok ? 0 : 1;
  }

  return 1;
}
