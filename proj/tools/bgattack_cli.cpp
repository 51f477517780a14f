// bgattack: command-line front end.
//   attack | eval | gradcheck | convergence | gen-scenes | masks
// Exit status: 0 success, 1 usage or validation error, 2 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "bgattack/attack.hpp"
#include "bgattack/gradcheck.hpp"
#include "bgattack/io/config.hpp"
#include "bgattack/io/csv.hpp"
#include "bgattack/io/file.hpp"
#include "bgattack/io/png_io.hpp"
#include "bgattack/io/tensor_io.hpp"
#include "bgattack/masking.hpp"
#include "bgattack/metrics.hpp"

namespace fs = std::filesystem;
using namespace bgattack;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

io::RunConfig load_config(const std::string& path) {
  if (path.empty()) return io::parse_config("");
  return io::parse_config(io::read_file(path));
}

fs::path output_dir(const io::RunConfig& rc, const std::string& flag) {
  return flag.empty() ? fs::path(rc.output_dir) : fs::path(flag);
}

char* numbered(char* buf, std::size_t n, const char* stem, std::size_t i) {
  std::snprintf(buf, n, "%s_%03zu", stem, i);
  return buf;
}

int cmd_attack(const std::string& config_path, const std::string& out_flag) {
  const auto rc = load_config(config_path);
  const fs::path out = output_dir(rc, out_flag);
  const auto scenes = io::build_dataset(rc);
  const AnyDetector det(io::build_detector(rc, rc.detector.seed));
  const auto cfg = io::build_attack_config(rc);
  const Tensor p0 = random_init(io::perturbation_shape(rc), rc.attack.init_seed);

  fs::create_directories(out);
  io::write_file_atomic(out / "config.ini", io::serialize_config(rc));
  io::write_f32t(out / "P0.f32t", p0);

  EpochHook hook;
  if (rc.attack.checkpoint_every > 0) {
    hook = [&](const EpochSnapshot& snap) {
      if (snap.epoch % rc.attack.checkpoint_every != 0) return;
      char name[64];
      const fs::path dir = out / numbered(name, sizeof name, "checkpoint_epoch", snap.epoch);
      io::write_f32t(dir / "P.f32t", snap.perturbation);
      io::write_f32t(dir / "m.f32t", snap.state.m);
      io::write_f32t(dir / "v.f32t", snap.state.v);
      io::write_f32t(dir / "v_hat.f32t", snap.state.v_hat);
      io::write_f32t(dir / "t.f32t", Tensor::vector({static_cast<double>(snap.state.t)}));
    };
  }
  const auto result = run_attack(cfg, scenes, det, p0, hook);

  io::write_f32t(out / "P.f32t", result.perturbation);
  io::write_png(out / "P.png", result.perturbation);
  io::write_file_atomic(out / "trace.csv", io::trace_to_csv(result.trace));

  const auto& last = result.trace.records.back();
  std::cout << "iterations " << last.t << "  final total " << io::format_number(last.total)
            << "  e_of_t " << io::format_number(last.e_of_t) << "\n"
            << "wrote " << (out / "P.f32t").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& perturbation,
             const std::string& out_flag) {
  const auto rc = load_config(config_path);
  const fs::path out = output_dir(rc, out_flag);
  const auto scenes = io::build_dataset(rc);
  const AnyDetector det(io::build_detector(rc, rc.detector.seed));
  const Tensor P = io::read_f32t(perturbation);
  require_same_shape(P, scenes.front().image, "eval perturbation");

  const auto clean = evaluate(scenes, det, std::nullopt, rc.eval);
  const auto attacked = evaluate(scenes, det, P, rc.eval);
  std::vector<io::MetricRow> rows{{"mAP", clean.map, attacked.map},
                                  {"DR", clean.detection_rate, attacked.detection_rate}};
  for (const auto& [cls, ap] : clean.ap) {
    const auto it = attacked.ap.find(cls);
    rows.push_back({"AP_class_" + std::to_string(cls), ap, it == attacked.ap.end() ? 0.0 : it->second});
  }
  const std::string csv = io::metrics_to_csv(rows);
  io::write_file_atomic(out / "metrics.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_gradcheck(std::size_t size, std::uint64_t seed) {
  constexpr double kTolerance = 1e-5;
  bool ok = true;
  for (const auto& [name, r] : run_gradcheck_suite(size, seed)) {
    std::printf("%-22s max_rel_err %.3e  max_abs_err %.3e\n", name.c_str(), r.max_rel_err,
                r.max_abs_err);
    ok = ok && r.max_rel_err <= kTolerance;
  }
  if (!ok) {
    std::cerr << "gradient check exceeded " << kTolerance << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_convergence(const std::string& trace_path, std::size_t burn_in) {
  const auto trace = io::trace_from_csv(io::read_file(trace_path));
  std::cout << "slope " << io::format_number(fit_convergence_slope(trace, burn_in)) << "\n";
  return 0;
}

int cmd_gen_scenes(const std::string& config_path, const std::string& out_flag) {
  const auto rc = load_config(config_path);
  const fs::path out = output_dir(rc, out_flag);
  const auto scenes = io::build_dataset(rc);
  nlohmann::json gt = nlohmann::json::array();
  char name[64];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string stem = numbered(name, sizeof name, "scene", i);
    io::write_f32t(out / (stem + ".f32t"), scenes[i].image);
    io::write_f32t(out / (stem + "_mask.f32t"), scenes[i].object_mask);
    if (scenes[i].image.channels() == 3) io::write_png(out / (stem + ".png"), scenes[i].image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : scenes[i].ground_truth) {
      boxes.push_back({{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"class_id", b.class_id}});
    }
    gt.push_back({{"scene", stem}, {"boxes", boxes}});
  }
  io::write_file_atomic(out / "ground_truth.json", gt.dump(2) + "\n");
  std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << "\n";
  return 0;
}

int cmd_masks(std::size_t n, std::size_t hw, const std::string& config_path,
              const std::string& out_flag) {
  const fs::path out = out_flag.empty() ? fs::path(".") : fs::path(out_flag);
  const auto pair = build_grid_masks(hw, hw, n);
  io::write_png(out / "M_g.png", io::mask_to_rgb(pair.grid));
  io::write_png(out / "M_rg.png", io::mask_to_rgb(pair.reversed));
  if (!config_path.empty()) {
    const auto rc = load_config(config_path);
    io::write_png(out / "M_objs.png", io::mask_to_rgb(io::build_dataset(rc).front().object_mask));
  }
  std::cout << "wrote masks to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal background perturbation attack on a toy grid detector"};
  app.require_subcommand(1);

  std::string config, out, perturbation, trace;
  std::size_t size = 16, burn_in = 0, n = 4, hw = 64;
  std::uint64_t seed = 7;

  auto* attack = app.add_subcommand("attack", "optimize a universal perturbation");
  attack->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
  attack->add_option("--out", out, "output directory (overrides [output] dir)");

  auto* eval = app.add_subcommand("eval", "clean vs attacked mAP / DR / ASR");
  eval->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
  eval->add_option("--perturbation", perturbation, "F32T perturbation")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "directory for metrics.csv");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--size", size, "instance height and width")->check(CLI::Range(8, 256));
  gradcheck->add_option("--seed", seed, "instance seed");

  auto* convergence = app.add_subcommand("convergence", "fit log e_of_t against log t");
  convergence->add_option("--trace", trace, "trace CSV")->required()->check(CLI::ExistingFile);
  convergence->add_option("--burn-in", burn_in, "iterations to skip");

  auto* gen = app.add_subcommand("gen-scenes", "write the configured dataset");
  gen->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory (overrides [output] dir)");

  auto* masks = app.add_subcommand("masks", "write grid mask PNGs");
  masks->add_option("--n", n, "patches per side");
  masks->add_option("--hw", hw, "mask height and width");
  masks->add_option("--config", config, "also write M_objs for the first scene")->check(CLI::ExistingFile);
  masks->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*attack) return cmd_attack(config, out);
    if (*eval) return cmd_eval(config, perturbation, out);
    if (*gradcheck) return cmd_gradcheck(size, seed);
    if (*convergence) return cmd_convergence(trace, burn_in);
    if (*gen) return cmd_gen_scenes(config, out);
    if (*masks) return cmd_masks(n, hw, config, out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
