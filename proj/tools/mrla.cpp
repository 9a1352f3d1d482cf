#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrla/config.hpp"
#include "mrla/counts.hpp"
#include "mrla/io.hpp"
#include "mrla/models.hpp"
#include "mrla/verify.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

ordered_json report_json(const mrla::verify::SuiteReport& rep) {
  ordered_json j;
  j["suite"] = rep.suite;
  j["cases"] = rep.cases;
  j["worst_err"] = rep.worst_err;
  j["pass"] = rep.pass();
  auto failures = ordered_json::array();
  for (const auto& f : rep.failures) {
    failures.push_back({{"seed", f.seed}, {"dims", f.dims}, {"max_abs_err", f.max_abs_err}});
  }
  j["failures"] = std::move(failures);
  return j;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw mrla::io_error("cannot open for writing: " + path);
  return os;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& suite, std::size_t seeds) {
  std::vector<mrla::verify::SuiteReport> reports;
  const std::uint64_t seed0 = 1000;
  if (suite == "all" || suite == "equivalence") {
    auto r = mrla::verify::equivalence_suite(seed0, seeds);
    reports.insert(reports.end(), r.begin(), r.end());
  }
  if (suite == "all" || suite == "gradients") {
    auto r = mrla::verify::gradient_suite(seed0, std::min<std::size_t>(seeds, 5));
    reports.insert(reports.end(), r.begin(), r.end());
  }
  if (suite == "all" || suite == "complexity") {
    auto r = mrla::verify::complexity_suite();
    reports.insert(reports.end(), r.begin(), r.end());
  }
  ordered_json out;
  out["command"] = "verify";
  out["suite"] = suite;
  out["seeds"] = seeds;
  auto arr = ordered_json::array();
  for (const auto& rep : reports) arr.push_back(report_json(rep));
  out["reports"] = std::move(arr);
  const bool pass = mrla::verify::all_pass(reports);
  out["pass"] = pass;
  std::cout << out.dump(2) << "\n";
  return pass ? kExitOk : kExitRuntime;
}

int cmd_bench(const std::string& mode_name, const std::string& depths_csv,
              const std::string& out_path) {
  std::vector<std::size_t> depths;
  {
    std::stringstream ss(depths_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      std::size_t v = 0;
      const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size() || v == 0) {
        std::cerr << "bench: bad depth '" << item << "'\n";
        return kExitUsage;
      }
      depths.push_back(v);
    }
  }
  if (depths.empty()) {
    std::cerr << "bench: --depths needs at least one depth\n";
    return kExitUsage;
  }
  for (std::size_t i = 1; i < depths.size(); ++i) {
    if (depths[i] <= depths[i - 1]) {
      std::cerr << "bench: depths must be strictly ascending\n";
      return kExitUsage;
    }
  }
  const auto mode = mrla::verify::parse_bench_mode(mode_name);
  const auto rows = mrla::verify::complexity_probe(mode, depths);
  auto os = open_out(out_path);
  os << "depth,score_evals,state_values,wall_ms,ratio\n";
  for (const auto& r : rows) {
    os << r.depth << "," << r.score_evals << "," << r.state_values << ","
       << fmt_double(r.wall_ms) << "," << fmt_double(r.ratio) << "\n";
  }
  os.flush();
  if (!os) throw mrla::io_error("failed writing " + out_path);

  ordered_json out;
  out["command"] = "bench";
  out["mode"] = mode_name;
  out["out"] = out_path;
  auto ratios = ordered_json::array();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ratios.push_back({{"from", rows[i - 1].depth},
                      {"to", rows[i].depth},
                      {"score_evals", rows[i].ratio},
                      {"wall", rows[i - 1].wall_ms > 0
                                   ? rows[i].wall_ms / rows[i - 1].wall_ms
                                   : 0.0}});
  }
  out["growth"] = std::move(ratios);
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  mrla::Config cfg = mrla::Config::from_file(config_path);
  // The only environment knob: output-directory override, below explicit
  // --out_dir= flags in precedence.
  if (const char* env_dir = std::getenv("MRLA_OUT_DIR")) cfg.out_dir = env_dir;
  for (const auto& ov : overrides) cfg.apply_override(ov);
  cfg.validate();

  const auto arch = cfg.arch();
  auto model = mrla::build_model<float>(arch, cfg.model_mode(), cfg.seed, cfg.in_channels,
                                        cfg.classes, static_cast<float>(cfg.survival_prob));
  mrla::Shape sample_shape;
  if (arch.variant == mrla::BlockVariant::Cnn) {
    sample_shape = {arch.stages[0].height, arch.stages[0].width, cfg.in_channels};
  } else {
    sample_shape = {arch.stages[0].height * arch.stages[0].width, cfg.in_channels};
  }
  auto dataset = mrla::synth_dataset<float>(cfg.classes, cfg.per_class, sample_shape,
                                            cfg.seed + 1, 1.0f,
                                            static_cast<float>(cfg.noise_std));

  std::filesystem::create_directories(cfg.out_dir);
  const std::string loss_path = cfg.out_dir + "/train_loss.csv";
  const std::string ckpt_path = cfg.out_dir + "/model.ckpt";

  auto loss_csv = open_out(loss_path);
  loss_csv << "epoch,step,mean_ce,accuracy\n";
  double final_loss = 0.0, final_acc = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto stats = mrla::train_epoch(model, dataset, static_cast<float>(cfg.lr),
                                   cfg.seed + 100 + epoch, cfg.steps_per_epoch);
    for (std::size_t s = 0; s < stats.step_losses.size(); ++s) {
      loss_csv << epoch << "," << s << "," << fmt_double(stats.step_losses[s]) << ","
               << fmt_double(stats.accuracy) << "\n";
    }
    final_loss = stats.step_losses.back();
    final_acc = stats.accuracy;
  }
  loss_csv.flush();
  if (!loss_csv) throw mrla::io_error("failed writing " + loss_path);

  mrla::io::write_checkpoint_file(ckpt_path, mrla::checkpoint_entries(model));

  ordered_json out;
  out["command"] = "train";
  out["config"] = config_path;
  out["epochs"] = cfg.epochs;
  out["final_loss"] = final_loss;
  out["final_accuracy"] = final_acc;
  out["checkpoint"] = ckpt_path;
  out["loss_csv"] = loss_path;
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_dump(const std::string& what, const std::string& ckpt_path,
             const std::string& out_path, std::size_t stage) {
  ordered_json out;
  out["command"] = "dump";
  out["what"] = what;

  if (what == "params") {
    const auto arch = mrla::resnet50_shape();
    const auto light = mrla::arch_account(arch, mrla::MrlaMode::Light);
    const auto base = mrla::arch_account(arch, mrla::MrlaMode::Base);
    ordered_json j;
    j["arch"] = "resnet50-shape";
    j["convention"] = "1 MAC counted as 1 FLOP; input 224x224";
    j["light"] = {{"params", light.params},
                  {"params_million", static_cast<double>(light.params) / 1e6},
                  {"macs", light.macs},
                  {"macs_billion", static_cast<double>(light.macs) / 1e9}};
    j["base"] = {{"params", base.params},
                 {"params_million", static_cast<double>(base.params) / 1e6},
                 {"macs", base.macs},
                 {"macs_billion", static_cast<double>(base.macs) / 1e9}};
    auto stages = ordered_json::array();
    for (const auto& st : light.stages) {
      ordered_json sj{{"stage", st.stage},
                      {"params", st.params},
                      {"macs", st.macs},
                      {"score_evals", st.score_evals},
                      {"peak_state_values", st.peak_state_values}};
      auto blocks = ordered_json::array();
      const auto& as = arch.stages[st.stage];
      const mrla::BlockShape shape{as.channels, as.height, as.width, arch.dk};
      for (std::size_t t = 1; t <= as.num_blocks; ++t) {
        const auto bc = mrla::block_cost_count(shape, mrla::MrlaMode::Light, t);
        blocks.push_back({{"t", t},
                          {"macs", bc.macs},
                          {"score_evals", bc.score_evals},
                          {"state_values", bc.state_values}});
      }
      sj["blocks"] = std::move(blocks);
      stages.push_back(std::move(sj));
    }
    j["light_stages"] = std::move(stages);
    if (!ckpt_path.empty()) {
      auto model = mrla::model_from_checkpoint<float>(
          mrla::io::read_checkpoint_file<float>(ckpt_path));
      const auto analytic = mrla::arch_param_count(
          model.arch,
          model.mode == mrla::ModelMode::Base ? mrla::MrlaMode::Base : mrla::MrlaMode::Light);
      j["checkpoint"] = {{"attn_params_enumerated", model.attn_param_count()},
                         {"attn_params_analytic", analytic},
                         {"match", model.attn_param_count() == analytic}};
    }
    out["report"] = std::move(j);
    auto os = open_out(out_path);
    os << out.dump(2) << "\n";
    os.flush();
    if (!os) throw mrla::io_error("failed writing " + out_path);
    std::cout << out.dump(2) << "\n";
    return kExitOk;
  }

  if (ckpt_path.empty()) {
    std::cerr << "dump: --checkpoint is required for --what " << what << "\n";
    return kExitUsage;
  }
  auto model =
      mrla::model_from_checkpoint<float>(mrla::io::read_checkpoint_file<float>(ckpt_path));

  if (what == "attn") {
    mrla::Shape in_shape;
    const auto& s0 = model.arch.stages[0];
    if (model.arch.variant == mrla::BlockVariant::Cnn) {
      in_shape = {s0.height, s0.width, model.in_channels};
    } else {
      in_shape = {s0.height * s0.width, model.in_channels};
    }
    mrla::Rng rng(model.seed + 2);
    const auto input = mrla::Tensor<float>::uniform(in_shape, rng);
    const auto result = mrla::verify::attn_score_matrix(model, stage, input);
    auto os = open_out(out_path);
    os << "kind,head,t,s,value\n";
    for (const auto& e : result.entries) {
      os << "score," << e.head << "," << e.t << "," << e.s << "," << fmt_double(e.value)
         << "\n";
    }
    for (const auto& e : result.carry_weights) {
      os << "carry," << e.head << "," << e.t << "," << e.s << "," << fmt_double(e.value)
         << "\n";
    }
    os.flush();
    if (!os) throw mrla::io_error("failed writing " + out_path);
    out["stage"] = stage;
    out["depth"] = result.depth;
    out["heads"] = result.heads;
    out["score_entries"] = result.entries.size();
    out["carry_entries"] = result.carry_weights.size();
  } else {  // cosine
    mrla::Shape sample_shape;
    const auto& s0 = model.arch.stages[0];
    if (model.arch.variant == mrla::BlockVariant::Cnn) {
      sample_shape = {s0.height, s0.width, model.in_channels};
    } else {
      sample_shape = {s0.height * s0.width, model.in_channels};
    }
    const auto dataset = mrla::synth_dataset<float>(model.classes, 4, sample_shape,
                                                    model.seed + 1);
    const auto stats = mrla::verify::query_cosine_stats(model, dataset);
    auto os = open_out(out_path);
    os << "bin_lo,bin_hi,count\n";
    const double width = 1.0 / static_cast<double>(mrla::verify::kCosineBins);
    for (std::size_t b = 0; b < stats.bin_counts.size(); ++b) {
      os << fmt_double(width * static_cast<double>(b)) << ","
         << fmt_double(width * static_cast<double>(b + 1)) << "," << stats.bin_counts[b]
         << "\n";
    }
    os.flush();
    if (!os) throw mrla::io_error("failed writing " + out_path);
    out["cases"] = stats.cases;
    out["skipped"] = stats.skipped;
  }
  out["out"] = out_path;
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-head recurrent layer attention toolkit"};
  app.require_subcommand(1);

  std::string suite = "all";
  std::size_t seeds = 50;
  auto* verify = app.add_subcommand("verify", "run oracle suites and print a JSON report");
  verify->add_option("--suite", suite, "all|equivalence|gradients|complexity")
      ->check(CLI::IsMember({"all", "equivalence", "gradients", "complexity"}));
  verify->add_option("--seeds", seeds, "seeded cases per suite family");

  std::string bench_mode = "light", depths = "", bench_out = "bench.csv";
  auto* bench = app.add_subcommand("bench", "complexity probe: counts and wall times");
  bench->add_option("--mode", bench_mode, "base|light|kernel")
      ->check(CLI::IsMember({"base", "light", "kernel"}));
  bench->add_option("--depths", depths, "ascending stage depths, e.g. 4,8,16")->required();
  bench->add_option("--out", bench_out, "CSV output path")->required();

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a toy model from a config file");
  train->add_option("--config", config_path, "key = value config file")->required();
  train->allow_extras();  // --key=value overrides

  std::string what, ckpt_path, dump_out;
  std::size_t stage = 0;
  auto* dump = app.add_subcommand("dump", "write attention statistics or parameter counts");
  dump->add_option("--what", what, "attn|cosine|params")
      ->check(CLI::IsMember({"attn", "cosine", "params"}))
      ->required();
  dump->add_option("--checkpoint", ckpt_path, "checkpoint path");
  dump->add_option("--out", dump_out, "output path")->required();
  dump->add_option("--stage", stage, "stage index for --what attn");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (verify->parsed()) return cmd_verify(suite, seeds);
    if (bench->parsed()) return cmd_bench(bench_mode, depths, bench_out);
    if (train->parsed()) {
      std::vector<std::string> overrides;
      for (auto arg : train->remaining()) {
        if (arg.rfind("--", 0) == 0) arg = arg.substr(2);
        overrides.push_back(arg);
      }
      try {
        return cmd_train(config_path, overrides);
      } catch (const mrla::config_error& e) {
        // Bad override keys/values are usage errors; file-level problems are
        // reported by from_file with the offending line and exit 1 below.
        std::cerr << "error: " << e.what() << "\n";
        const std::string msg = e.what();
        return msg.rfind("override", 0) == 0 ? kExitUsage : kExitRuntime;
      }
    }
    if (dump->parsed()) return cmd_dump(what, ckpt_path, dump_out, stage);
  } catch (const mrla::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
