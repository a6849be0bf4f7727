// snowattack: experiment harness CLI.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "snowattack/snowattack.hpp"

namespace {

using namespace snow;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string scene;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> flakes;
  std::string victim;
  int threads = 0;
};

ExperimentConfig build_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.flakes) apply_setting(cfg, "flakes", std::to_string(*o.flakes));
  if (!o.victim.empty()) apply_setting(cfg, "victim", o.victim);
  if (o.threads > 0) cfg.attack.render.threads = o.threads;
  return cfg;
}

fs::path record_dir_for(const fs::path& csv) {
  return csv.parent_path() / (csv.stem().string() + "_records");
}

int cmd_render(const CommonOptions& o) {
  const auto set = load_scene_set(o.scene);
  const ExperimentConfig base = build_config(o);
  for (const auto& ns : set) {
    const fs::path out = ns.name.empty() ? fs::path(o.out) : fs::path(o.out) / ns.name;
    fs::create_directories(out);
    const ExperimentConfig cfg = resolve(base, ns.scene);
    const SnowField field = make_snowfield(ns.scene, cfg);
    const RenderResult r = render_pair(ns.scene, field, cfg.attack.render);
    write_ppm(r.frame_t, out / "snowy_t.ppm");
    write_ppm(r.frame_t1, out / "snowy_t1.ppm");
    json art = {{"snowy_t", "snowy_t.ppm"}, {"snowy_t1", "snowy_t1.ppm"}};
    if (ns.scene.background_flow) {
      write_flo(snow_ground_truth_flow(ns.scene, field, cfg.attack.render), out / "snow_gt_flow.flo");
      art["snow_gt_flow"] = "snow_gt_flow.flo";
    } else {
      std::cerr << "note: no gt_flow.flo in scene, snow ground-truth flow skipped\n";
    }
    // cumulative stage breakdown of frame t
    const char* names[5] = {"stage_1_init.ppm", "stage_2_scaling.ppm", "stage_3_transparency.ppm", "stage_4_blur.ppm",
                            "stage_5_occlusion.ppm"};
    for (int k = 0; k < 5; ++k) {
      RenderParams p = cfg.attack.render;
      p.stages = RenderStages{k >= 1, k >= 2, k >= 3, k >= 4};
      FrameTape tape;
      write_ppm(render_frame(ns.scene, field, 0, p, tape), out / names[k]);
      art[std::string(names[k]).substr(0, std::string(names[k]).size() - 4)] = names[k];
    }
    json rec = {{"format", kRecordFormat}, {"command", "render"}, {"scene", o.scene}, {"pair", ns.name},
                {"seed", cfg.seed},        {"config", snapshot(cfg)}, {"sampling", kSamplingNote},
                {"artifacts", art}};
    write_json(out / "record.json", rec);
    std::cout << out.string() << ": " << field.flakes.size() << " flakes rendered\n";
  }
  return 0;
}

int cmd_attack(const CommonOptions& o) {
  const auto set = load_scene_set(o.scene);
  const ExperimentConfig cfg = build_config(o);
  for (const auto& ns : set) {
    const fs::path out = ns.name.empty() ? fs::path(o.out) : fs::path(o.out) / ns.name;
    const PairRun run = run_pair(ns, cfg);
    write_attack_outputs(out, o.scene, ns, run);
    const auto& tr = run.result.trace;
    std::cout << (ns.name.empty() ? std::string("scene") : ns.name) << ": AEE to target "
              << format_double(tr.front().aee_target) << " -> " << format_double(tr.back().aee_target) << "\n";
  }
  return 0;
}

std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    try {
      out.push_back(int(detail::parse_int(item)));
    } catch (const Error&) {
      throw ConfigError("--counts: expected comma-separated integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("--counts: empty list");
  return out;
}

int cmd_density_sweep(const CommonOptions& o, const std::string& counts) {
  const auto set = load_scene_set(o.scene);
  const ExperimentConfig cfg = build_config(o);
  const fs::path csv = o.out;
  const std::string table = density_sweep(set, o.scene, cfg, parse_counts(counts), record_dir_for(csv));
  write_text(csv, table);
  std::cout << table;
  return 0;
}

int cmd_ablation(const CommonOptions& o) {
  const auto set = load_scene_set(o.scene);
  const fs::path csv = o.out;
  const std::string table = ablation(set, o.scene, build_config(o), record_dir_for(csv));
  write_text(csv, table);
  std::cout << table;
  return 0;
}

int cmd_transfer(const CommonOptions& o) {
  const auto set = load_scene_set(o.scene);
  const fs::path csv = o.out;
  const TransferTable t = transfer(set, o.scene, build_config(o), record_dir_for(csv));
  write_text(csv, t.csv);
  std::cout << t.csv;
  for (const auto& n : t.notes) std::cerr << "transfer: " << n << "\n";
  return 0;
}

struct GradcheckFlags {
  GradCheckSuite suite;
  std::string out;
};

int cmd_gradcheck(const GradcheckFlags& g) {
  const GradCheckReport all = run_gradcheck_suite(g.suite);
  bool ok = true;
  json rep = json::object();
  rep["seed"] = g.suite.seed;
  rep["sizes"] = g.suite.sizes;
  rep["scenes_per_size"] = g.suite.scenes;
  rep["flakes"] = g.suite.flakes;
  rep["groups"] = json::array();
  for (const auto& gr : all.groups) {
    const double tol = gradcheck_tolerance(gr.name);
    const bool pass = gr.max_rel < tol;
    ok = ok && pass;
    rep["groups"].push_back({{"group", gr.name},
                             {"entries", gr.entries},
                             {"max_relative_error", gr.max_rel},
                             {"worst_analytic", gr.worst_analytic},
                             {"worst_numeric", gr.worst_numeric},
                             {"tolerance", tol},
                             {"pass", pass}});
    std::printf("%-28s entries %6d  max rel %.3e  (tol %.0e)  %s\n", gr.name.c_str(), gr.entries, gr.max_rel, tol,
                pass ? "ok" : "FAIL");
  }
  rep["pass"] = ok;
  if (!g.out.empty()) write_json(g.out, rep);
  if (!ok) throw CheckFailure("gradcheck: relative error above tolerance");
  return 0;
}

int cmd_viz(const std::string& flow, const std::string& out, double max_mag) {
  const FlowField f = read_flo(flow);
  write_ppm(flow_to_color(f, max_mag > 0.0 ? std::optional<double>(max_mag) : std::nullopt), out);
  return 0;
}

int cmd_fixture(const std::string& out, const TranslatingFixture& fx) {
  save_scene(translating_texture_scene(fx), out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_replay(const std::string& record_path, std::string scene) {
  const json rec = read_json(record_path);
  if (rec.value("format", "") != kRecordFormat) throw FormatError("replay: not a run record: " + record_path);
  if (!rec.contains("trace")) throw FormatError("replay: record has no trace");
  if (scene.empty()) scene = rec.at("scene").get<std::string>();
  const std::string pair = rec.value("pair", "");
  const fs::path dir = pair.empty() ? fs::path(scene) : fs::path(scene) / pair;
  const NamedScene ns{pair, load_scene(dir)};
  const PairRun run = run_pair(ns, config_from_snapshot(rec.at("config")));
  const double expected = rec.at("final").at("aee_target_final").get<double>();
  const double got = run.result.trace.back().aee_target;
  std::cout << "recorded " << format_double(expected) << ", replayed " << format_double(got) << "\n";
  if (got != expected) throw CheckFailure("replay: final AEE differs from the record");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial snow against optical flow: rendering, attacks and experiment tables"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool needs_config, bool needs_out = true) {
    sub->add_option("--scene", common.scene, "scene directory (or directory of scene directories)")->required();
    auto* c = sub->add_option("--config", common.config, "flat key = value config file");
    if (needs_config) c->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", common.out, "output directory or CSV path");
    if (needs_out) out->required();
    sub->add_option("--seed", common.seed, "overrides the config seed");
    sub->add_option("--flakes", common.flakes, "overrides the config flake count");
    sub->add_option("--victim", common.victim, "overrides the config victim (horn_schunck | lucas_kanade)");
    sub->add_option("--threads", common.threads, "renderer threads (does not change results)");
  };

  auto* render = app.add_subcommand("render", "render random snow and the stage breakdown");
  add_common(render, true);
  auto* attack_cmd = app.add_subcommand("attack", "optimize snow against a victim");
  add_common(attack_cmd, true);
  auto* sweep = app.add_subcommand("density-sweep", "attack strength per flake count");
  add_common(sweep, true);
  std::string counts = "50,100,200";
  sweep->add_option("--counts", counts, "comma-separated flake counts");
  auto* abl = app.add_subcommand("ablation", "attack strength per optimized parameter subset");
  add_common(abl, true);
  auto* tr = app.add_subcommand("transfer", "2x2 transfer matrix between the two victims");
  add_common(tr, true);

  GradcheckFlags gflags;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all analytic gradients");
  gc->add_option("--seed", gflags.suite.seed, "first scene seed");
  gc->add_option("--sizes", gflags.suite.sizes, "scene side lengths")->delimiter(',');
  gc->add_option("--scenes", gflags.suite.scenes, "scenes per size")->check(CLI::PositiveNumber);
  gc->add_option("--flakes", gflags.suite.flakes, "flakes per scene")->check(CLI::NonNegativeNumber);
  gc->add_option("--out", gflags.out, "JSON report path");
  gc->add_option("--corrupt-gradient", gflags.suite.corrupt_scale, "scale analytic gradients (fault injection)");

  std::string viz_flow, viz_out;
  double viz_max = 0.0;
  auto* viz = app.add_subcommand("viz", "color-code a .flo file");
  viz->add_option("--flow", viz_flow, "input .flo")->required();
  viz->add_option("--out", viz_out, "output .ppm")->required();
  viz->add_option("--max-magnitude", viz_max, "magnitude mapped to full saturation (default: data max)");

  std::string fx_out;
  TranslatingFixture fx;
  auto* fixture = app.add_subcommand("fixture", "write the translating-texture fixture scene");
  fixture->add_option("--out", fx_out, "scene directory")->required();
  fixture->add_option("--size", fx.size, "side length in px")->check(CLI::Range(8, 4096));
  fixture->add_option("--shift", fx.shift, "horizontal shift per frame in px");
  fixture->add_option("--seed", fx.seed, "texture seed");

  std::string replay_record, replay_scene;
  auto* replay = app.add_subcommand("replay", "rerun a record and compare its final AEE");
  replay->add_option("--record", replay_record, "record.json")->required()->check(CLI::ExistingFile);
  replay->add_option("--scene", replay_scene, "scene directory (default: the one in the record)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*render) return cmd_render(common);
    if (*attack_cmd) return cmd_attack(common);
    if (*sweep) return cmd_density_sweep(common, counts);
    if (*abl) return cmd_ablation(common);
    if (*tr) return cmd_transfer(common);
    if (*gc) return cmd_gradcheck(gflags);
    if (*viz) return cmd_viz(viz_flow, viz_out, viz_max);
    if (*fixture) return cmd_fixture(fx_out, fx);
    if (*replay) return cmd_replay(replay_record, replay_scene);
  } catch (const CheckFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheck;
  } catch (const snow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
