// Command-line front end: train, eval, predict, synth, bench, gradcheck.
//
// Exit codes: 0 ok, 1 failed gradient check or unexpected error, 2 config error,
// 3 data error, 4 numerical abort.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <json.hpp>

#include "mugen/gradcheck.hpp"
#include "mugen/trainer.hpp"

namespace {

using namespace mugen;

std::string log_path(const std::string& checkpoint) { return checkpoint + ".log.json"; }

int cmd_train(const std::string& config_file, const std::vector<std::string>& ablations, bool quiet) {
  auto cfg = load_run_config(config_file);
  for (const auto& a : ablations) cfg.ablate(a);
  cfg.validate();
  const auto data = prepare_data(cfg);
  std::cout << model_label(cfg) << ": " << data.train.size() << " train / " << data.val.size() << " val / "
            << data.test.size() << " test samples at " << cfg.resolution.str() << "\n";
  const auto result = train(cfg, data, {quiet ? nullptr : &std::cout, true});
  std::ofstream(log_path(cfg.checkpoint)) << result.log.to_json().dump(2) << "\n";
  std::cout << "best val mDice " << result.log.best_mdice << " at epoch " << result.log.best_epoch << ", checkpoint "
            << cfg.checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dir, const std::string& out, const std::string& which) {
  auto loaded = load_model(ckpt);
  const Resolution res{loaded.model.config().width, loaded.model.config().height};
  const auto manifest = read_manifest(dir);
  auto entries = which == "all" ? manifest.entries : manifest.subset(which);
  // an untagged dataset is evaluated whole
  if (entries.empty() && which != "all") entries = manifest.entries;
  const auto samples = load_samples(manifest, entries, res);
  const auto report = evaluate(loaded.model, samples);
  const auto name = fs::path(dir).filename().empty() ? fs::path(dir).parent_path().filename().string()
                                                      : fs::path(dir).filename().string();
  const auto row = metrics::csv_row(name, model_label(loaded.config), report);
  std::ofstream f(out);
  if (!f) throw DataError("cannot write '" + out + "'");
  f << metrics::csv_header() << "\n" << row << "\n";
  std::cout << metrics::csv_header() << "\n" << row << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image, const std::string& out, const std::string& binary) {
  auto loaded = load_model(ckpt);
  const auto& mc = loaded.model.config();
  const auto r = predict(loaded.model, image, out, binary);
  if (r.resized) {
    std::cerr << "warning: " << r.width << "x" << r.height << " input resized to " << mc.width << "x" << mc.height
              << " for inference; output is resized back\n";
  }
  std::cout << "wrote " << out << (binary.empty() ? "" : " and " + binary) << "\n";
  return 0;
}

int cmd_synth(std::size_t n, const std::string& res, std::uint64_t seed, const std::string& out) {
  if (n == 0) throw ConfigError("--n must be positive");
  const auto m = synth_generate(n, Resolution::parse(res), seed, out);
  std::cout << "wrote " << m.entries.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt, std::size_t frames, std::size_t warmup) {
  auto loaded = load_model(ckpt);
  const auto r = bench_fps(loaded.model, frames, loaded.config.preset, warmup);
  std::cout << r.summary() << "\n";
  std::ifstream logf(log_path(ckpt));
  if (logf) {
    const auto log = nlohmann::json::parse(logf);
    double seconds = 0;
    for (const auto& e : log.at("epochs")) seconds += e.at("seconds").get<double>();
    std::cout << table_header() << "\n"
              << table_row(model_label(loaded.config), log.at("epochs").size(), loaded.config.lr, seconds, r.mean_fps,
                           log.at("best_mdice").get<double>())
              << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  std::vector<std::string> modules = module.empty() ? gradcheck::module_names() : std::vector<std::string>{module};
  bool ok = true;
  for (const auto& m : modules) {
    const auto r = gradcheck::run(m);
    std::printf("%-18s rel_err %.3e  tol %.0e  coords %4zu  %s\n", m.c_str(), r.rel_error, r.tolerance,
                r.coordinates, r.pass() ? "ok" : "FAIL");
    ok = ok && r.pass();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MugenNet hybrid transformer + CNN segmentation"};
  app.require_subcommand(1);

  std::string config, ckpt, data, out, image, binary, res = "64x48", module, split = "test";
  std::vector<std::string> ablations;
  std::size_t n = 200, frames = 100, warmup = 5;
  std::uint64_t seed = 1;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train from a JSON config");
  train->add_option("--config", config, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  train->add_option("--ablate", ablations, "disable a component: tb, cb or mm")
      ->check(CLI::IsMember({"tb", "cb", "mm"}));
  train->add_flag("--quiet", quiet, "no per-epoch output");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--data", data, "directory with images/ and masks/ (and optionally manifest.json)")->required();
  eval->add_option("--out", out, "CSV report")->required();
  eval->add_option("--split", split, "test, val, train or all")->check(CLI::IsMember({"test", "val", "train", "all"}));

  auto* pred = app.add_subcommand("predict", "write the fused probability map for one image");
  pred->add_option("--checkpoint", ckpt)->required();
  pred->add_option("--image", image)->required();
  pred->add_option("--out", out, "gray PNG of S_z * 255")->required();
  pred->add_option("--binary", binary, "optional mask thresholded at 0.5");

  auto* synth = app.add_subcommand("synth", "generate a synthetic ellipse dataset");
  synth->add_option("--n", n)->required();
  synth->add_option("--res", res, "WxH");
  synth->add_option("--seed", seed);
  synth->add_option("--out", out)->required();

  auto* bench = app.add_subcommand("bench", "eval-mode frames per second");
  bench->add_option("--checkpoint", ckpt)->required();
  bench->add_option("--frames", frames);
  bench->add_option("--warmup", warmup);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of the building blocks");
  grad->add_option("--module", module)->check(CLI::IsMember(gradcheck::module_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(config, ablations, quiet);
    if (*eval) return cmd_eval(ckpt, data, out, split);
    if (*pred) return cmd_predict(ckpt, image, out, binary);
    if (*synth) return cmd_synth(n, res, seed, out);
    if (*bench) return cmd_bench(ckpt, frames, warmup);
    if (*grad) return cmd_gradcheck(module);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort in op '" << e.op() << "': " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
