#pragma once

// Experiment harness: flat key = value configs, run records, and the
// attack / sweep / ablation / transfer drivers used by the CLI.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "snowattack/attack.hpp"
#include "snowattack/error.hpp"
#include "snowattack/flowvictim.hpp"
#include "snowattack/render.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/snowsim.hpp"

namespace snow {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kRecordFormat = "snowattack-run/1";
inline constexpr const char* kSamplingNote =
    "flake positions: uniform pixel and uniform depth in [depth_near, depth_far], unprojected; "
    "draws alternate between the frame-t and frame-t+1 frustums";

/// Everything an attack run depends on besides the scene.
struct ExperimentConfig {
  AttackConfig attack;
  std::string target = "zero";  // "zero" or a .flo path
  int flakes = 200;
  std::uint64_t seed = 1;
  std::optional<double> fall_speed;  // empty: default_fall_speed
  std::optional<double> flake_size;  // empty: default_flake_size
  double size_spread = 0.4;
  SnowDirection direction;
  double margin = 0.0;
  std::optional<double> depth_near, depth_far;  // empty: from the depth maps
  int templates = 12;
  int template_resolution = 32;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw Error("expected a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(out)) throw Error("expected a finite number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw Error("expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw Error("expected an integer, got '" + v + "'");
  return out;
}

inline std::optional<double> parse_auto(const std::string& v) {
  if (v == "auto") return std::nullopt;
  return parse_double(v);
}

struct ConfigKey {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<json(const ExperimentConfig&)> get;  // resolved value for the snapshot
};

inline json auto_or(const std::optional<double>& v) { return v ? json(*v) : json("auto"); }

inline const std::vector<ConfigKey>& config_keys() {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw Error(std::string(what) + " must be positive");
    return v;
  };
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0)) throw Error(std::string(what) + " must be nonnegative");
    return v;
  };
  auto at_least = [](long long v, long long lo, const char* what) {
    if (v < lo) throw Error(std::string(what) + " must be at least " + std::to_string(lo));
    return int(v);
  };
  static const std::vector<ConfigKey> keys = {
      {"victim", [](ExperimentConfig& c, const std::string& v) { c.attack.victim.kind = parse_estimator_kind(v); },
       [](const ExperimentConfig& c) { return json(to_string(c.attack.victim.kind)); }},
      {"hs_lambda", [=](ExperimentConfig& c, const std::string& v) { c.attack.victim.hs_lambda = positive(parse_double(v), "hs_lambda"); },
       [](const ExperimentConfig& c) { return json(c.attack.victim.hs_lambda); }},
      {"hs_iterations", [=](ExperimentConfig& c, const std::string& v) { c.attack.victim.hs_iterations = at_least(parse_int(v), 1, "hs_iterations"); },
       [](const ExperimentConfig& c) { return json(c.attack.victim.hs_iterations); }},
      {"lk_window",
       [=](ExperimentConfig& c, const std::string& v) {
         const int w = at_least(parse_int(v), 3, "lk_window");
         if (w % 2 == 0) throw Error("lk_window must be odd");
         c.attack.victim.lk_window = w;
       },
       [](const ExperimentConfig& c) { return json(c.attack.victim.lk_window); }},
      {"lk_iterations", [=](ExperimentConfig& c, const std::string& v) { c.attack.victim.lk_iterations = at_least(parse_int(v), 1, "lk_iterations"); },
       [](const ExperimentConfig& c) { return json(c.attack.victim.lk_iterations); }},
      {"lk_regularization", [=](ExperimentConfig& c, const std::string& v) { c.attack.victim.lk_regularization = positive(parse_double(v), "lk_regularization"); },
       [](const ExperimentConfig& c) { return json(c.attack.victim.lk_regularization); }},
      {"pyramid_levels", [=](ExperimentConfig& c, const std::string& v) { c.attack.victim.pyramid_levels = at_least(parse_int(v), 1, "pyramid_levels"); },
       [](const ExperimentConfig& c) { return json(c.attack.victim.pyramid_levels); }},
      {"target", [](ExperimentConfig& c, const std::string& v) { c.target = v; },
       [](const ExperimentConfig& c) { return json(c.target); }},
      {"alpha_t", [=](ExperimentConfig& c, const std::string& v) { c.attack.alpha_t = nonneg(parse_double(v), "alpha_t"); },
       [](const ExperimentConfig& c) { return json(c.attack.alpha_t); }},
      {"alpha_t1", [=](ExperimentConfig& c, const std::string& v) { c.attack.alpha_t1 = nonneg(parse_double(v), "alpha_t1"); },
       [](const ExperimentConfig& c) { return json(c.attack.alpha_t1); }},
      {"steps", [=](ExperimentConfig& c, const std::string& v) { c.attack.steps = at_least(parse_int(v), 1, "steps"); },
       [](const ExperimentConfig& c) { return json(c.attack.steps); }},
      {"lr_delta", [=](ExperimentConfig& c, const std::string& v) { c.attack.lr_delta = nonneg(parse_double(v), "lr_delta"); },
       [](const ExperimentConfig& c) { return json(c.attack.lr_delta); }},
      {"lr_w", [=](ExperimentConfig& c, const std::string& v) { c.attack.lr_w = nonneg(parse_double(v), "lr_w"); },
       [](const ExperimentConfig& c) { return json(c.attack.lr_w); }},
      {"momentum",
       [](ExperimentConfig& c, const std::string& v) {
         const double m = parse_double(v);
         if (!(m >= 0.0 && m < 1.0)) throw Error("momentum must lie in [0, 1)");
         c.attack.momentum = m;
       },
       [](const ExperimentConfig& c) { return json(c.attack.momentum); }},
      {"optimize",
       [](ExperimentConfig& c, const std::string& v) {
         c.attack.optimize = parse_param_groups(v);
         if (!c.attack.optimize.any()) throw Error("optimize must name at least one parameter group");
       },
       [](const ExperimentConfig& c) { return json(to_string(c.attack.optimize)); }},
      {"flakes", [=](ExperimentConfig& c, const std::string& v) { c.flakes = at_least(parse_int(v), 0, "flakes"); },
       [](const ExperimentConfig& c) { return json(c.flakes); }},
      {"seed",
       [](ExperimentConfig& c, const std::string& v) {
         const long long s = parse_int(v);
         if (s < 0) throw Error("seed must be nonnegative");
         c.seed = std::uint64_t(s);
       },
       [](const ExperimentConfig& c) { return json(c.seed); }},
      {"fall_speed",
       [=](ExperimentConfig& c, const std::string& v) {
         c.fall_speed = parse_auto(v);
         if (c.fall_speed) nonneg(*c.fall_speed, "fall_speed");
       },
       [](const ExperimentConfig& c) { return auto_or(c.fall_speed); }},
      {"flake_size",
       [=](ExperimentConfig& c, const std::string& v) {
         c.flake_size = parse_auto(v);
         if (c.flake_size) positive(*c.flake_size, "flake_size");
       },
       [](const ExperimentConfig& c) { return auto_or(c.flake_size); }},
      {"size_spread",
       [](ExperimentConfig& c, const std::string& v) {
         const double s = parse_double(v);
         if (!(s >= 0.0 && s < 1.0)) throw Error("size_spread must lie in [0, 1)");
         c.size_spread = s;
       },
       [](const ExperimentConfig& c) { return json(c.size_spread); }},
      {"direction_down", [=](ExperimentConfig& c, const std::string& v) { c.direction.down = positive(parse_double(v), "direction_down"); },
       [](const ExperimentConfig& c) { return json(c.direction.down); }},
      {"direction_right", [](ExperimentConfig& c, const std::string& v) { c.direction.right = parse_double(v); },
       [](const ExperimentConfig& c) { return json(c.direction.right); }},
      {"direction_jitter", [=](ExperimentConfig& c, const std::string& v) { c.direction.jitter = nonneg(parse_double(v), "direction_jitter"); },
       [](const ExperimentConfig& c) { return json(c.direction.jitter); }},
      {"margin", [=](ExperimentConfig& c, const std::string& v) { c.margin = nonneg(parse_double(v), "margin"); },
       [](const ExperimentConfig& c) { return json(c.margin); }},
      {"depth_near",
       [=](ExperimentConfig& c, const std::string& v) {
         c.depth_near = parse_auto(v);
         if (c.depth_near) positive(*c.depth_near, "depth_near");
       },
       [](const ExperimentConfig& c) { return auto_or(c.depth_near); }},
      {"depth_far",
       [=](ExperimentConfig& c, const std::string& v) {
         c.depth_far = parse_auto(v);
         if (c.depth_far) positive(*c.depth_far, "depth_far");
       },
       [](const ExperimentConfig& c) { return auto_or(c.depth_far); }},
      {"templates", [=](ExperimentConfig& c, const std::string& v) { c.templates = at_least(parse_int(v), 1, "templates"); },
       [](const ExperimentConfig& c) { return json(c.templates); }},
      {"template_resolution", [=](ExperimentConfig& c, const std::string& v) { c.template_resolution = at_least(parse_int(v), 8, "template_resolution"); },
       [](const ExperimentConfig& c) { return json(c.template_resolution); }},
      {"focus_depth", [=](ExperimentConfig& c, const std::string& v) { c.attack.render.focus_depth = positive(parse_double(v), "focus_depth"); },
       [](const ExperimentConfig& c) { return json(c.attack.render.focus_depth); }},
      {"aperture", [=](ExperimentConfig& c, const std::string& v) { c.attack.render.aperture = nonneg(parse_double(v), "aperture"); },
       [](const ExperimentConfig& c) { return json(c.attack.render.aperture); }},
      {"visibility_softness", [=](ExperimentConfig& c, const std::string& v) { c.attack.render.visibility_softness = positive(parse_double(v), "visibility_softness"); },
       [](const ExperimentConfig& c) { return json(c.attack.render.visibility_softness); }},
      {"transparency_near",
       [](ExperimentConfig& c, const std::string& v) {
         const double t = parse_double(v);
         if (!(t > 0.0 && t <= 1.0)) throw Error("transparency_near must lie in (0, 1]");
         c.attack.render.transparency_near = t;
       },
       [](const ExperimentConfig& c) { return json(c.attack.render.transparency_near); }},
      {"transparency_falloff", [=](ExperimentConfig& c, const std::string& v) { c.attack.render.transparency_falloff = positive(parse_double(v), "transparency_falloff"); },
       [](const ExperimentConfig& c) { return json(c.attack.render.transparency_falloff); }},
      {"flake_color",
       [](ExperimentConfig& c, const std::string& v) {
         std::array<double, 3> rgb{};
         std::istringstream in(v);
         std::string part;
         int k = 0;
         while (std::getline(in, part, ',')) {
           if (k == 3) throw Error("flake_color takes three comma-separated values");
           rgb[std::size_t(k)] = parse_double(trim(part));
           if (!(rgb[std::size_t(k)] >= 0.0 && rgb[std::size_t(k)] <= 1.0)) throw Error("flake_color values must lie in [0, 1]");
           ++k;
         }
         if (k != 3) throw Error("flake_color takes three comma-separated values");
         c.attack.render.flake_color = rgb;
       },
       [](const ExperimentConfig& c) { return json(c.attack.render.flake_color); }},
      {"threads", [=](ExperimentConfig& c, const std::string& v) { c.attack.render.threads = at_least(parse_int(v), 1, "threads"); },
       nullptr},  // execution setting, kept out of the snapshot
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace detail

/// Applies one `key = value` setting; errors carry `line` when nonzero.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value, int line = 0) {
  const auto* k = detail::find_key(key);
  if (!k) throw ConfigError("unknown key '" + key + "'", line);
  try {
    k->set(cfg, value);
  } catch (const ConfigError& e) {
    if (e.line() > 0 || line == 0) throw;
    throw ConfigError(e.what(), line);
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what(), line);
  }
}

/// Parses flat `key = value` text. `#` starts a comment; blank lines are ignored.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg = {}) {
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string content = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = detail::trim(content.substr(0, eq));
    const std::string value = detail::trim(content.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line);
    if (value.empty()) throw ConfigError("missing value for '" + key + "'", line);
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError("duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")", line);
    seen[key] = line;
    apply_setting(cfg, key, value, line);
  }
  if (cfg.depth_near && cfg.depth_far && *cfg.depth_far < *cfg.depth_near)
    throw ConfigError("depth_far must not be smaller than depth_near", seen.count("depth_far") ? seen["depth_far"] : 0);
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str());
  // relative target paths are taken relative to the config file
  if (cfg.target != "zero" && fs::path(cfg.target).is_relative())
    cfg.target = (path.parent_path() / cfg.target).lexically_normal().string();
  return cfg;
}

/// Replaces every "auto" value by the number it stands for on `scene`.
inline ExperimentConfig resolve(ExperimentConfig cfg, const ScenePair& scene) {
  if (!cfg.fall_speed) cfg.fall_speed = default_fall_speed(scene);
  if (!cfg.flake_size) cfg.flake_size = default_flake_size(scene);
  const DepthRange dr = scene_depth_range(scene);
  if (!cfg.depth_near) cfg.depth_near = dr.near;
  if (!cfg.depth_far) cfg.depth_far = dr.far;
  if (*cfg.depth_far < *cfg.depth_near) throw ConfigError("depth_far must not be smaller than depth_near");
  cfg.attack.seed = cfg.seed;
  return cfg;
}

/// All settings with resolved values; execution-only settings are omitted.
inline json snapshot(const ExperimentConfig& cfg) {
  json out = json::object();
  for (const auto& k : detail::config_keys())
    if (k.get) out[k.name] = k.get(cfg);
  return out;
}

/// Inverse of `snapshot`.
inline ExperimentConfig config_from_snapshot(const json& snap) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : snap.items()) {
    std::string text;
    if (value.is_string()) text = value.get<std::string>();
    else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) text += (i ? "," : "") + value[i].dump();
    } else text = value.dump();
    apply_setting(cfg, key, text);
  }
  return cfg;
}

inline SnowInitOptions snow_options(const ExperimentConfig& cfg) {
  SnowInitOptions o;
  o.flake_size = cfg.flake_size.value_or(0.0);
  o.size_spread = cfg.size_spread;
  o.margin = cfg.margin;
  if (cfg.depth_near && cfg.depth_far) o.depth_range = DepthRange{*cfg.depth_near, *cfg.depth_far};
  o.template_count = cfg.templates;
  o.template_resolution = cfg.template_resolution;
  o.render = cfg.attack.render;
  return o;
}

/// Random snow for a resolved config.
inline SnowField make_snowfield(const ScenePair& scene, const ExperimentConfig& cfg) {
  return init_snowfield(scene, std::size_t(cfg.flakes), cfg.direction,
                        cfg.fall_speed.value_or(default_fall_speed(scene)), cfg.seed, snow_options(cfg));
}

inline std::optional<FlowField> load_target(const ExperimentConfig& cfg) {
  if (cfg.target == "zero") return std::nullopt;
  return read_flo(cfg.target);
}

/// One or more frame pairs: `dir` itself if it holds a scene, otherwise every
/// immediate subdirectory that does (sorted by name).
struct NamedScene {
  std::string name;
  ScenePair scene;
};

inline std::vector<NamedScene> load_scene_set(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("scene directory not found: " + dir.string());
  if (fs::exists(dir / scene_files::kFrameT)) return {{"", load_scene(dir)}};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / scene_files::kFrameT)) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw FormatError("no frame pair found in " + dir.string());
  std::vector<NamedScene> out;
  for (const auto& p : subdirs) out.push_back({p.filename().string(), load_scene(p)});
  return out;
}

inline json trace_json(const std::vector<StepRecord>& trace) {
  json out = json::array();
  for (const auto& r : trace) {
    json j = {{"step", r.step}, {"loss", r.loss}, {"aee_target", r.aee_target}, {"penalty_t", r.penalty_t},
              {"penalty_t1", r.penalty_t1}};
    j["aee_ground_truth"] = std::isnan(r.aee_ground_truth) ? json(nullptr) : json(r.aee_ground_truth);
    out.push_back(j);
  }
  return out;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trace_csv(const std::vector<StepRecord>& trace) {
  std::string out = "step,loss,aee_target,penalty_t,penalty_t1,aee_ground_truth\n";
  for (const auto& r : trace)
    out += std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.aee_target) + "," +
           format_double(r.penalty_t) + "," + format_double(r.penalty_t1) + "," + format_double(r.aee_ground_truth) + "\n";
  return out;
}

/// Result of attacking one frame pair with a resolved config.
struct PairRun {
  std::string name;
  ExperimentConfig config;  // resolved
  AttackResult result;
};

inline PairRun run_pair(const NamedScene& ns, const ExperimentConfig& cfg) {
  PairRun run{ns.name, resolve(cfg, ns.scene), {}};
  validate(run.config.attack);
  AttackConfig ac = run.config.attack;
  ac.target = load_target(run.config);
  if (run.config.flakes == 0) {
    // no snow: the clean flow is both the initial and the final flow
    const FlowField target = resolve_target(ac.target, ns.scene.width(), ns.scene.height());
    AttackResult& r = run.result;
    r.target = target;
    r.initial_frame_t = r.final_frame_t = ns.scene.frame_t;
    r.initial_frame_t1 = r.final_frame_t1 = ns.scene.frame_t1;
    r.initial_flow = r.final_flow = estimate_flow(ns.scene.frame_t, ns.scene.frame_t1, ac.victim);
    StepRecord rec{0, aee(r.final_flow, target), aee(r.final_flow, target), 0.0, 0.0};
    if (ns.scene.background_flow) rec.aee_ground_truth = aee(r.final_flow, *ns.scene.background_flow);
    for (int s = 0; s <= ac.steps; ++s) {
      rec.step = s;
      r.trace.push_back(rec);
    }
    r.final_field.seed = run.config.seed;
    return run;
  }
  const SnowField field = make_snowfield(ns.scene, run.config);
  run.result = attack(ns.scene, field, ac);
  return run;
}

inline json run_record(const std::string& command, const std::string& scene_dir, const PairRun& run,
                       const json& artifacts = json::object()) {
  const auto& tr = run.result.trace;
  json rec;
  rec["format"] = kRecordFormat;
  rec["command"] = command;
  rec["scene"] = scene_dir;
  rec["pair"] = run.name;
  rec["seed"] = run.config.seed;
  rec["config"] = snapshot(run.config);
  rec["sampling"] = kSamplingNote;
  rec["optimizer"] = "gradient descent with momentum: buf = momentum * buf + grad; param -= lr * buf";
  rec["trace"] = trace_json(tr);
  rec["final"] = {{"aee_target_initial", tr.front().aee_target},
                  {"aee_target_final", tr.back().aee_target},
                  {"loss_final", tr.back().loss},
                  {"penalty_t_final", tr.back().penalty_t},
                  {"penalty_t1_final", tr.back().penalty_t1}};
  rec["final"]["aee_ground_truth_final"] =
      std::isnan(tr.back().aee_ground_truth) ? json(nullptr) : json(tr.back().aee_ground_truth);
  json params = {{"delta_t", json::array()}, {"delta_t1", json::array()}, {"logit", json::array()}};
  for (const auto& f : run.result.final_field.flakes) {
    params["delta_t"].push_back({f.delta_t.x(), f.delta_t.y(), f.delta_t.z()});
    params["delta_t1"].push_back({f.delta_t1.x(), f.delta_t1.y(), f.delta_t1.z()});
    params["logit"].push_back(f.logit);
  }
  rec["final_parameters"] = params;
  rec["artifacts"] = artifacts;
  return rec;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file_atomic(path, text);
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// Writes frames, flows, color images, loss curve and record for one pair.
inline json write_attack_outputs(const fs::path& out, const std::string& scene_dir, const NamedScene& ns,
                                 const PairRun& run) {
  fs::create_directories(out);
  const auto& r = run.result;
  const FlowField clean = estimate_flow(ns.scene.frame_t, ns.scene.frame_t1, run.config.attack.victim);
  const double vmax = std::max({max_flow_magnitude(clean), max_flow_magnitude(r.initial_flow),
                                max_flow_magnitude(r.final_flow), max_flow_magnitude(r.target)});
  json art = {{"random_t", "random_t.ppm"},           {"random_t1", "random_t1.ppm"},
              {"attacked_t", "attacked_t.ppm"},       {"attacked_t1", "attacked_t1.ppm"},
              {"flow_clean", "flow_clean.flo"},       {"flow_initial", "flow_initial.flo"},
              {"flow_attacked", "flow_attacked.flo"}, {"flow_target", "flow_target.flo"},
              {"color_clean", "flow_clean.ppm"},      {"color_initial", "flow_initial.ppm"},
              {"color_attacked", "flow_attacked.ppm"}, {"color_target", "flow_target.ppm"},
              {"loss_curve", "loss.csv"}};
  write_ppm(r.initial_frame_t, out / "random_t.ppm");
  write_ppm(r.initial_frame_t1, out / "random_t1.ppm");
  write_ppm(r.final_frame_t, out / "attacked_t.ppm");
  write_ppm(r.final_frame_t1, out / "attacked_t1.ppm");
  write_flo(clean, out / "flow_clean.flo");
  write_flo(r.initial_flow, out / "flow_initial.flo");
  write_flo(r.final_flow, out / "flow_attacked.flo");
  write_flo(r.target, out / "flow_target.flo");
  write_ppm(flow_to_color(clean, vmax), out / "flow_clean.ppm");
  write_ppm(flow_to_color(r.initial_flow, vmax), out / "flow_initial.ppm");
  write_ppm(flow_to_color(r.final_flow, vmax), out / "flow_attacked.ppm");
  write_ppm(flow_to_color(r.target, vmax), out / "flow_target.ppm");
  write_text(out / "loss.csv", trace_csv(r.trace));
  art["record"] = "record.json";
  json rec = run_record("attack", scene_dir, run, art);
  write_json(out / "record.json", rec);
  return rec;
}

/// Mean of f over the pairs of a scene set.
template <class Fn>
double mean_over_pairs(const std::vector<NamedScene>& set, Fn&& f) {
  double s = 0.0;
  for (const auto& ns : set) s += f(ns);
  return s / double(set.size());
}

inline std::string record_name(const std::string& cell, const std::string& pair) {
  return pair.empty() ? cell + ".json" : cell + "__" + pair + ".json";
}

/// Density sweep: one attack per flake count. Returns the CSV text; records
/// go to `record_dir`.
inline std::string density_sweep(const std::vector<NamedScene>& set, const std::string& scene_dir,
                                 const ExperimentConfig& cfg, const std::vector<int>& counts,
                                 const fs::path& record_dir) {
  std::string csv = "count,AEE_to_target_initial,AEE_to_target_final,frame_pairs\n";
  for (int n : counts) {
    if (n < 0) throw ConfigError("flake counts must be nonnegative");
    ExperimentConfig c = cfg;
    c.flakes = n;
    double init = 0.0, fin = 0.0;
    for (const auto& ns : set) {
      const PairRun run = run_pair(ns, c);
      init += run.result.trace.front().aee_target;
      fin += run.result.trace.back().aee_target;
      write_json(record_dir / record_name("count_" + std::to_string(n), ns.name), run_record("density-sweep", scene_dir, run));
    }
    const double k = double(set.size());
    csv += std::to_string(n) + "," + format_double(init / k) + "," + format_double(fin / k) + "," +
           std::to_string(set.size()) + "\n";
  }
  return csv;
}

/// Parameter ablation: the shared random-snow row plus all seven subsets.
inline std::string ablation(const std::vector<NamedScene>& set, const std::string& scene_dir,
                            const ExperimentConfig& cfg, const fs::path& record_dir) {
  std::string csv = "parameters,AEE_to_target,frame_pairs\n";
  std::vector<std::pair<std::string, double>> rows;
  double initial = 0.0;
  bool have_initial = false;
  for (const auto& groups : all_param_subsets()) {
    ExperimentConfig c = cfg;
    c.attack.optimize = groups;
    double fin = 0.0, init = 0.0;
    for (const auto& ns : set) {
      const PairRun run = run_pair(ns, c);
      init += run.result.trace.front().aee_target;
      fin += run.result.trace.back().aee_target;
      write_json(record_dir / record_name(to_string(groups), ns.name), run_record("ablation", scene_dir, run));
    }
    if (!have_initial) {
      initial = init / double(set.size());
      have_initial = true;
    }
    rows.emplace_back(to_string(groups), fin / double(set.size()));
  }
  csv += "Initial snow," + format_double(initial) + "," + std::to_string(set.size()) + "\n";
  for (const auto& [name, v] : rows) csv += name + "," + format_double(v) + "," + std::to_string(set.size()) + "\n";
  return csv;
}

struct TransferTable {
  std::string csv;
  std::vector<std::string> notes;  // soft-property observations
};

/// 2x2 transfer matrix over the two victims plus a no-snow baseline row.
inline TransferTable transfer(const std::vector<NamedScene>& set, const std::string& scene_dir,
                              const ExperimentConfig& cfg, const fs::path& record_dir) {
  const EstimatorKind kinds[2] = {EstimatorKind::horn_schunck, EstimatorKind::lucas_kanade};
  auto victim_of = [&](EstimatorKind k) {
    EstimatorConfig v = cfg.attack.victim;
    v.kind = k;
    return v;
  };
  double cell[2][2] = {};
  double clean[2] = {};
  for (int row = 0; row < 2; ++row) {
    ExperimentConfig c = cfg;
    c.attack.victim = victim_of(kinds[row]);
    for (const auto& ns : set) {
      const PairRun run = run_pair(ns, c);
      write_json(record_dir / record_name("optimized_on_" + to_string(kinds[row]), ns.name),
                 run_record("transfer", scene_dir, run));
      for (int col = 0; col < 2; ++col)
        cell[row][col] += col == row ? run.result.trace.back().aee_target
                                     : evaluate_transfer(ns.scene, run.result.final_field, victim_of(kinds[col]),
                                                         run.result.target, run.config.attack.render);
    }
  }
  for (int col = 0; col < 2; ++col)
    for (const auto& ns : set) {
      const ExperimentConfig r = resolve(cfg, ns.scene);
      clean[col] += aee(estimate_flow(ns.scene.frame_t, ns.scene.frame_t1, victim_of(kinds[col])),
                        resolve_target(load_target(r), ns.scene.width(), ns.scene.height()));
    }
  const double k = double(set.size());
  TransferTable t;
  t.csv = "optimized_on,AEE_on_horn_schunck,AEE_on_lucas_kanade,frame_pairs\n";
  for (int row = 0; row < 2; ++row)
    t.csv += to_string(kinds[row]) + "," + format_double(cell[row][0] / k) + "," + format_double(cell[row][1] / k) +
             "," + std::to_string(set.size()) + "\n";
  t.csv += "no_snow," + format_double(clean[0] / k) + "," + format_double(clean[1] / k) + "," +
           std::to_string(set.size()) + "\n";
  for (int col = 0; col < 2; ++col) {
    const int other = 1 - col;
    const bool holds = cell[other][col] >= cell[col][col];
    t.notes.push_back("eval " + to_string(kinds[col]) + ": optimized on " + to_string(kinds[other]) + " gives " +
                      format_double(cell[other][col] / k) + (holds ? " >= " : " < ") + "self-attack " +
                      format_double(cell[col][col] / k) + (holds ? "" : " (transfer stronger than self-attack)"));
  }
  return t;
}

}  // namespace snow
