// Exercises the command-line contract: exit codes (0 success, 1 runtime/IO,
// 2 usage), report schemas, and the CSV surfaces. argv[1] is the CLI binary.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::string g_cli;
fs::path g_dir;

void check(bool ok, const std::string& what) {
  std::printf("[%s] %s\n", ok ? "ok" : "FAILED", what.c_str());
  if (!ok) ++g_failures;
}

int run(const std::string& args, const std::string& out_file = "") {
  std::string cmd = g_cli + " " + args;
  if (!out_file.empty()) {
    cmd += " > " + out_file + " 2>&1";
  } else {
    cmd += " > /dev/null 2>&1";
  }
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::size_t count_lines_with(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find(needle) != std::string::npos) ++n;
  }
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_contract <path-to-cli>\n");
    return 1;
  }
  g_cli = argv[1];
  g_dir = fs::temp_directory_path() / "mrla_cli_contract";
  std::error_code ec;
  fs::remove_all(g_dir, ec);
  fs::create_directories(g_dir);
  const std::string d = g_dir.string();

  // verify: pass -> 0, unknown suite -> usage (2), --seeds 1 runs one seed
  check(run("verify --suite complexity --seeds 2", d + "/v.json") == 0,
        "verify complexity exits 0");
  check(run("verify --suite nonsense") == 2, "unknown suite exits 2");
  {
    const int rc = run("verify --suite equivalence --seeds 1", d + "/v1.json");
    const std::string body = slurp(d + "/v1.json");
    check(rc == 0 && count_lines_with(body, "\"cases\": 1,") >= 7,
          "verify --seeds 1 runs exactly one case per family");
  }

  // bench: CSV with expected exact counts and the ratio column
  {
    const int rc = run("bench --mode base --depths 4,8 --out " + d + "/base.csv");
    const std::string csv = slurp(d + "/base.csv");
    check(rc == 0 && csv.find("4,10,") != std::string::npos &&
              csv.find("8,36,") != std::string::npos,
          "bench base depths 4,8 reports score_evals 10 and 36");
  }
  {
    const int rc = run("bench --mode light --depths 4,8,16 --out " + d + "/light.csv");
    const std::string csv = slurp(d + "/light.csv");
    std::size_t ratio2 = 0;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    check(line == "depth,score_evals,state_values,wall_ms,ratio", "bench CSV header row");
    while (std::getline(is, line)) {
      if (line.size() >= 2 && line.compare(line.size() - 2, 2, ",2") == 0) ++ratio2;
    }
    check(rc == 0 && ratio2 == 2, "bench light doubling depths report ratio 2");
  }
  check(run("bench --mode light --depths \"\" --out " + d + "/e.csv") == 2,
        "empty depth list exits 2");
  check(run("bench --mode light --depths 8,4 --out " + d + "/e.csv") == 2,
        "non-ascending depths exit 2");
  check(run("bench --mode light --depths 2,4 --out /nonexistent_dir_mrla/x.csv") == 1,
        "unwritable output path exits 1");
  check(run("bench --mode warp --depths 2,4 --out " + d + "/e.csv") == 2,
        "unknown bench mode exits 2");

  // train: config handling
  {
    std::ofstream cfg(g_dir / "good.cfg");
    cfg << "arch.stages = 2\narch.channels = 8\narch.spatial = 4\nmode = base\n"
           "d_k = 4\nlr = 0.2\nepochs = 2\nsteps_per_epoch = 2\nseed = 3\n"
           "classes = 2\nper_class = 2\nin_channels = 2\n";
  }
  check(run("train --config " + d + "/good.cfg --out_dir=" + d + "/run") == 0,
        "train with a valid config exits 0");
  check(fs::exists(g_dir / "run/model.ckpt") && fs::exists(g_dir / "run/train_loss.csv"),
        "train writes checkpoint and loss CSV");
  {
    const std::string csv = slurp(g_dir / "run/train_loss.csv");
    check(csv.rfind("epoch,step,mean_ce,accuracy\n", 0) == 0 &&
              count_lines_with(csv, ",") == 5,
          "loss CSV has a header and one row per step");
  }
  {
    std::ofstream cfg(g_dir / "bad.cfg");
    cfg << "arch.stages = 2\nwhat_is_this = 1\n";
  }
  {
    const int rc = run("train --config " + d + "/bad.cfg", d + "/bad.txt");
    const std::string msg = slurp(d + "/bad.txt");
    check(rc == 1 && msg.find(":2:") != std::string::npos,
          "malformed config exits 1 naming the offending line");
  }
  check(run("train --config " + d + "/missing.cfg") == 1, "missing config exits 1");
  check(run("train --config " + d + "/good.cfg --no_such_key=1") == 2,
        "unknown override key exits 2");
  {
    const int rc = std::system(("MRLA_OUT_DIR=" + d + "/envrun " + g_cli + " train --config " +
                                d + "/good.cfg > /dev/null 2>&1")
                                   .c_str());
    check(WEXITSTATUS(rc) == 0 && fs::exists(g_dir / "envrun/model.ckpt"),
          "MRLA_OUT_DIR overrides the output directory");
  }

  // vit variant end to end: train, then dump its attention diagonal
  {
    std::ofstream cfg(g_dir / "vit.cfg");
    cfg << "arch.stages = 3\narch.channels = 8\narch.spatial = 2\narch.variant = vit\n"
           "mode = light\nd_k = 4\nlr = 0.2\nepochs = 2\nsteps_per_epoch = 2\nseed = 4\n"
           "classes = 2\nper_class = 2\nin_channels = 2\n";
  }
  check(run("train --config " + d + "/vit.cfg --out_dir=" + d + "/vit") == 0,
        "train runs the vit variant");
  {
    const int rc = run("dump --what attn --checkpoint " + d + "/vit/model.ckpt --out " + d +
                       "/vit_attn.csv");
    const std::string csv = slurp(d + "/vit_attn.csv");
    // light mode: 3 diagonal scores x 2 heads, plus carry-weight rows
    check(rc == 0 && count_lines_with(csv, "score,") == 6 &&
              count_lines_with(csv, "carry,") == 6,
          "vit light dump emits diagonal scores and carry weights");
  }

  // dump: attention matrix has T(T+1)/2 score cells per head in base mode
  {
    const int rc = run("dump --what attn --checkpoint " + d + "/run/model.ckpt --out " + d +
                       "/attn.csv");
    const std::string csv = slurp(d + "/attn.csv");
    // depth 2, one head (C=8, d_k=4 -> 2 heads): 2 heads x 3 cells
    check(rc == 0 && count_lines_with(csv, "score,") == 6,
          "dump attn emits T(T+1)/2 populated cells per head");
  }
  {
    const int rc = run("dump --what cosine --checkpoint " + d + "/run/model.ckpt --out " + d +
                       "/cos.csv");
    const std::string csv = slurp(d + "/cos.csv");
    check(rc == 0 && csv.rfind("bin_lo,bin_hi,count\n", 0) == 0 &&
              count_lines_with(csv, ",") == 21,
          "dump cosine emits the 20-bin histogram");
  }
  {
    const int rc = run("dump --what params --out " + d + "/params.json", d + "/pstdout.json");
    const std::string body = slurp(d + "/params.json");
    check(rc == 0 && body.find("\"params\": 151200") != std::string::npos,
          "dump params reports the analytic ResNet-50-shape total");
  }
  {
    std::ofstream bad(g_dir / "corrupt.ckpt", std::ios::binary);
    bad << "XXXX not a checkpoint";
  }
  check(run("dump --what attn --checkpoint " + d + "/corrupt.ckpt --out " + d + "/x.csv") == 1,
        "corrupt checkpoint magic exits 1");
  check(run("dump --what cosine --out " + d + "/x.csv") == 2,
        "dump without a required checkpoint exits 2");

  if (g_failures == 0) std::printf("cli contract: all checks passed\n");
  return g_failures;
}
