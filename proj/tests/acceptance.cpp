// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code = number of failed criteria.
// argv[1] (optional) is the CLI binary used for the byte-determinism checks.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mrla/counts.hpp"
#include "mrla/io.hpp"
#include "mrla/models.hpp"
#include "mrla/verify.hpp"

namespace fs = std::filesystem;
using namespace mrla;

namespace {

int g_failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int run_cmd(const std::string& cmd) { return std::system(cmd.c_str()); }

// ---------------------------------------------------------------------------

void criterion_1_base_vs_direct() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = verify::base_vs_direct_suite(20001, 500);
  const double secs = seconds_since(t0);
  const bool pass = rep.pass() && rep.cases >= 500 && secs < 30.0;
  report("1 base-vs-direct", pass,
         std::to_string(rep.cases) + " cases, worst max-abs " + fmt(rep.worst_err) +
             " (< 1e-6), " + fmt(secs) + " s");
}

void criterion_2_light_exactness() {
  auto prop = verify::light_vs_base_proportional_suite(20002, 200);
  auto hpc = verify::light_vs_base_head_per_channel_suite(20003, 200);
  const bool pass = prop.pass() && hpc.pass();
  report("2 light-equals-base constructions", pass,
         "proportional worst " + fmt(prop.worst_err) + ", per-channel-head worst " +
             fmt(hpc.worst_err) + " over " + std::to_string(prop.cases + hpc.cases) +
             " cases (< 1e-6)");
}

void criterion_3_unroll() {
  auto rep = verify::unroll_vs_recur_suite(20004, 200);
  report("3 unrolled-vs-recurrent light form", rep.pass() && rep.cases >= 200,
         std::to_string(rep.cases) + " cases, worst max-abs " + fmt(rep.worst_err) +
             " (< 1e-6)");
}

void criterion_4_kernel() {
  auto eq = verify::kernel_step_vs_direct_suite(20005, 200);
  auto norm = verify::kernel_weight_normalization_suite(20006, 200);
  report("4 kernel linearization", eq.pass() && norm.pass(),
         "step-vs-direct worst " + fmt(eq.worst_err) + " (< 1e-6), weight-sum worst " +
             fmt(norm.worst_err) + " (< 1e-12)");
}

void criterion_5_gradients() {
  auto reps = verify::gradient_suite(20007, 3);
  bool pass = true;
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto& r : reps) {
    pass = pass && r.pass();
    worst = std::max(worst, r.worst_err);
    cases += r.cases;
  }
  report("5 finite-difference gradient checks", pass,
         std::to_string(cases) + " checks over primitives, attention ops and both block "
         "variants, worst rel-err " + fmt(worst) + " (< 1e-4)");
}

void criterion_6_complexity() {
  auto reps = verify::complexity_suite();
  bool counts_pass = verify::all_pass(reps);

  const double light_ratio = verify::attention_wall_ratio(verify::BenchMode::Light, 64, 128);
  const double base_ratio = verify::attention_wall_ratio(verify::BenchMode::Base, 64, 128);
  const bool wall_pass = light_ratio >= 1.8 && light_ratio <= 2.4 && base_ratio > 3.0;

  report("6 complexity counts and wall-time scaling", counts_pass && wall_pass,
         "exact counts " + std::string(counts_pass ? "ok" : "FAILED") +
             "; T=64->128 wall ratio light " + fmt(light_ratio) + " (in [1.8, 2.4]), base " +
             fmt(base_ratio) + " (> 3.0)");
}

void criterion_7_params_macs() {
  const auto arch = resnet50_shape();
  const auto acct = arch_account(arch, MrlaMode::Light);
  const double params_m = static_cast<double>(acct.params) / 1e6;
  const double macs_b = static_cast<double>(acct.macs) / 1e9;
  const bool params_ok = params_m >= 0.14 && params_m <= 0.18;
  // 1 MAC counted as 1 FLOP; target figure for this shape is 0.07B at 224x224.
  const bool macs_ok = macs_b >= 0.07 / 2.0 && macs_b <= 0.07 * 2.0;
  report("7 parameter and MAC deltas (ResNet-50 shape)", params_ok && macs_ok,
         fmt(params_m) + "M params (in [0.14, 0.18]); " + fmt(macs_b) +
             "B MACs at 224x224 (within 2x of 0.07B, 1 MAC = 1 FLOP)");
}

struct TrainOutcome {
  double final_acc = 0.0;
  double best_acc = 0.0;
  std::vector<double> epoch_losses;
};

TrainOutcome train_mini(ModelMode mode) {
  ArchSpec arch{BlockVariant::Cnn, {{3, 8, 8, 8}, {3, 16, 4, 4}}, 8};
  auto model = build_model<float>(arch, mode, 7, 3, 3);
  auto ds = synth_dataset<float>(3, 20, {8, 8, 3}, 8, 1.0f, 0.25f);
  TrainOutcome out;
  for (std::size_t epoch = 0; epoch < 20; ++epoch) {
    auto stats = train_epoch(model, ds, 0.35f, 107 + epoch, 20);
    out.epoch_losses.push_back(stats.mean_loss);
    out.final_acc = stats.accuracy;
    out.best_acc = std::max(out.best_acc, stats.accuracy);
  }
  return out;
}

void criterion_8_training() {
  const auto t0 = std::chrono::steady_clock::now();
  auto light = train_mini(ModelMode::Light);
  auto base = train_mini(ModelMode::Base);
  const double secs = seconds_since(t0);

  bool decreasing = true;
  for (std::size_t e = 1; e < 5; ++e) {
    decreasing = decreasing && light.epoch_losses[e] < light.epoch_losses[e - 1];
  }
  const bool acc_ok = light.best_acc >= 0.90;
  const bool gap_ok = std::abs(light.final_acc - base.final_acc) <= 0.02;
  const bool time_ok = secs < 120.0;
  report("8 toy training sanity", acc_ok && decreasing && gap_ok && time_ok,
         "light best acc " + fmt(light.best_acc) + " (>= 0.9), first-5-epoch losses " +
             std::string(decreasing ? "strictly decreasing" : "NOT decreasing") +
             ", |light - base| final gap " + fmt(std::abs(light.final_acc - base.final_acc)) +
             " (<= 0.02), " + fmt(secs) + " s (< 120)");
}

void criterion_9_determinism(const std::string& cli) {
  if (cli.empty()) {
    report("9 byte determinism", false, "no CLI binary path supplied");
    return;
  }
  const fs::path dir = fs::temp_directory_path() / "mrla_acceptance";
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir);
  const std::string d = dir.string();

  bool ok = true;
  std::string note;

  // verify: identical stdout across runs
  run_cmd(cli + " verify --suite complexity --seeds 3 > " + d + "/v1.json 2>/dev/null");
  run_cmd(cli + " verify --suite complexity --seeds 3 > " + d + "/v2.json 2>/dev/null");
  if (read_file(d + "/v1.json") != read_file(d + "/v2.json") ||
      read_file(d + "/v1.json").empty()) {
    ok = false;
    note += "verify stdout differs; ";
  }

  // train: identical checkpoint and loss CSV across runs with one seed
  {
    std::ofstream cfg(dir / "train.cfg");
    cfg << "arch.stages = 2\narch.channels = 8\narch.spatial = 4\nmode = light\n"
           "d_k = 8\nlr = 0.1\nepochs = 2\nsteps_per_epoch = 2\nseed = 5\n"
           "classes = 2\nper_class = 3\nin_channels = 2\n";
  }
  run_cmd(cli + " train --config " + d + "/train.cfg --out_dir=" + d +
          "/runA > " + d + "/t1.json 2>/dev/null");
  run_cmd(cli + " train --config " + d + "/train.cfg --out_dir=" + d +
          "/runB > " + d + "/t2.json 2>/dev/null");
  if (read_file(d + "/runA/model.ckpt") != read_file(d + "/runB/model.ckpt") ||
      read_file(d + "/runA/model.ckpt").empty()) {
    ok = false;
    note += "checkpoints differ; ";
  }
  if (read_file(d + "/runA/train_loss.csv") != read_file(d + "/runB/train_loss.csv")) {
    ok = false;
    note += "loss CSVs differ; ";
  }

  // dump: identical CSV and JSON outputs across runs
  run_cmd(cli + " dump --what attn --checkpoint " + d + "/runA/model.ckpt --out " + d +
          "/a1.csv > /dev/null 2>&1");
  run_cmd(cli + " dump --what attn --checkpoint " + d + "/runB/model.ckpt --out " + d +
          "/a2.csv > /dev/null 2>&1");
  if (read_file(d + "/a1.csv") != read_file(d + "/a2.csv") ||
      read_file(d + "/a1.csv").empty()) {
    ok = false;
    note += "attn dumps differ; ";
  }
  run_cmd(cli + " dump --what params --out " + d + "/p1.json > /dev/null 2>&1");
  run_cmd(cli + " dump --what params --out " + d + "/p2.json > /dev/null 2>&1");
  if (read_file(d + "/p1.json") != read_file(d + "/p2.json") ||
      read_file(d + "/p1.json").empty()) {
    ok = false;
    note += "params dumps differ; ";
  }
  run_cmd(cli + " dump --what cosine --checkpoint " + d + "/runA/model.ckpt --out " + d +
          "/c1.csv > /dev/null 2>&1");
  run_cmd(cli + " dump --what cosine --checkpoint " + d + "/runB/model.ckpt --out " + d +
          "/c2.csv > /dev/null 2>&1");
  if (read_file(d + "/c1.csv") != read_file(d + "/c2.csv") ||
      read_file(d + "/c1.csv").empty()) {
    ok = false;
    note += "cosine dumps differ; ";
  }

  report("9 byte determinism of verify/train/dump", ok,
         ok ? "all outputs byte-identical across repeated runs" : note);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  criterion_1_base_vs_direct();
  criterion_2_light_exactness();
  criterion_3_unroll();
  criterion_4_kernel();
  criterion_5_gradients();
  criterion_6_complexity();
  criterion_7_params_macs();
  criterion_8_training();
  criterion_9_determinism(cli);
  if (g_failures == 0) {
    std::printf("acceptance: all criteria passed\n");
  } else {
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
  }
  return g_failures;
}
