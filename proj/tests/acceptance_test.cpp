// Acceptance criteria A1-A9. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <Eigen/Geometry>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snowattack/snowattack.hpp"

using namespace snow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// A1

Outcome a1_gradients() {
  const auto t0 = Clock::now();
  GradCheckSuite suite;  // 10 scenes, 16x16, 5 flakes
  const GradCheckReport rep = run_gradcheck_suite(suite);
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0;
  double loss_max = 0.0, render_max = 0.0, victim_max = 0.0;
  for (const auto& g : rep.groups) {
    ok = ok && g.max_rel < gradcheck_tolerance(g.name);
    double& slot = g.name.rfind("render.", 0) == 0 ? render_max : g.name.rfind("loss.", 0) == 0 ? loss_max : victim_max;
    slot = std::max(slot, g.max_rel);
  }
  return {ok, "loss max rel " + fmt("%.2e", loss_max) + " (<1e-3), renderer " + fmt("%.2e", render_max) +
                  " (<1e-4), victims " + fmt("%.2e", victim_max) + " (<1e-3), " + fmt("%.1f", secs) + " s (<120 s)"};
}

// ---------------------------------------------------------------------------
// A2-A4 share runs on the bundled fixture

struct FixtureRuns {
  ScenePair scene;
  std::map<std::string, double> final_aee;  // key: "<seed>/<flakes>/<groups>"
  std::map<std::string, double> initial_aee;
  double a2_seconds = 0.0;

  static std::string key(int seed, int n, const ParamGroups& g) {
    return std::to_string(seed) + "/" + std::to_string(n) + "/" + to_string(g);
  }
  void run(int seed, int n, const ParamGroups& g) {
    AttackConfig cfg;  // HS victim, zero target, alpha 1000, 250 steps
    cfg.optimize = g;
    cfg.seed = std::uint64_t(seed);
    SnowInitOptions opts;
    opts.render = cfg.render;
    const SnowField field =
        init_snowfield(scene, std::size_t(n), SnowDirection{}, default_fall_speed(scene), std::uint64_t(seed), opts);
    const AttackResult r = attack(scene, field, cfg);
    initial_aee[key(seed, n, g)] = r.trace.front().aee_target;
    final_aee[key(seed, n, g)] = r.trace.back().aee_target;
  }
};

const int kSeeds[] = {1, 2, 3};
const ParamGroups kAll{true, true, true};
const ParamGroups kTheta{false, false, true};
const ParamGroups kDeltaT{true, false, false};

Outcome a2_efficacy(FixtureRuns& fr) {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string detail;
  for (int s : kSeeds) {
    fr.run(s, 200, kAll);
    const double init = fr.initial_aee[FixtureRuns::key(s, 200, kAll)];
    const double fin = fr.final_aee[FixtureRuns::key(s, 200, kAll)];
    const bool ok = fin <= 0.7 * init;
    wins += ok;
    detail += "seed " + std::to_string(s) + ": " + fmt("%.3f", init) + " -> " + fmt("%.3f", fin) + " (ratio " +
              fmt("%.3f", fin / init) + ")" + (ok ? "" : " miss") + "; ";
  }
  fr.a2_seconds = seconds_since(t0);
  const bool pass = wins >= 2 && fr.a2_seconds < 600.0;
  return {pass, detail + std::to_string(wins) + "/3 seeds at ratio <= 0.7, " + fmt("%.0f", fr.a2_seconds) + " s (<600 s)"};
}

Outcome a3_density(FixtureRuns& fr) {
  int wins = 0;
  std::string detail;
  for (int s : kSeeds) {
    fr.run(s, 50, kAll);
    fr.run(s, 100, kAll);
    const double f50 = fr.final_aee[FixtureRuns::key(s, 50, kAll)];
    const double f100 = fr.final_aee[FixtureRuns::key(s, 100, kAll)];
    const double f200 = fr.final_aee[FixtureRuns::key(s, 200, kAll)];
    const bool ok = f50 >= f100 && f100 >= f200;
    wins += ok;
    detail += "seed " + std::to_string(s) + ": " + fmt("%.3f", f50) + " / " + fmt("%.3f", f100) + " / " +
              fmt("%.3f", f200) + (ok ? "" : " miss") + "; ";
  }
  return {wins >= 2, detail + std::to_string(wins) + "/3 seeds non-increasing over 50/100/200 flakes"};
}

Outcome a4_ablation(FixtureRuns& fr) {
  int wins = 0;
  std::string detail;
  for (int s : kSeeds) {
    fr.run(s, 200, kTheta);
    fr.run(s, 200, kDeltaT);
    const double full = fr.final_aee[FixtureRuns::key(s, 200, kAll)];
    const double theta = fr.final_aee[FixtureRuns::key(s, 200, kTheta)];
    const double dt = fr.final_aee[FixtureRuns::key(s, 200, kDeltaT)];
    const bool ok = full <= theta && dt <= theta;
    wins += ok;
    detail += "seed " + std::to_string(s) + ": all " + fmt("%.3f", full) + ", delta_t " + fmt("%.3f", dt) +
              ", theta " + fmt("%.3f", theta) + (ok ? "" : " miss") + "; ";
  }
  return {wins >= 2, detail + std::to_string(wins) + "/3 seeds with all <= theta and delta_t <= theta"};
}

// ---------------------------------------------------------------------------
// A5

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Outcome a5_identities(const ScenePair& fixture) {
  std::vector<ScenePair> scenes{fixture};
  for (std::uint64_t s = 0; s < 5; ++s) scenes.push_back(random_small_scene(s, 32));
  bool exact = true, in_range = true;
  double transparent = 0.0, occluded = 0.0;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const ScenePair& sc = scenes[k];
    SnowField field = init_snowfield(sc, 80, SnowDirection{}, default_fall_speed(sc), k + 1);
    SnowField empty = field;
    empty.flakes.clear();
    const RenderResult e = render_pair(sc, empty, RenderParams{});
    exact = exact && e.frame_t == sc.frame_t && e.frame_t1 == sc.frame_t1;

    SnowField clear = field;
    for (auto& f : clear.flakes) f.logit = -40.0;
    const RenderResult c = render_pair(sc, clear, RenderParams{});
    transparent = std::max({transparent, max_abs_diff(c.frame_t, sc.frame_t), max_abs_diff(c.frame_t1, sc.frame_t1)});

    // flakes pushed far behind the scene surface, opaque
    SnowField hidden = field;
    for (auto& f : hidden.flakes) {
      const PixelDepth p = project(sc.cam_t, f.position);
      const double d = 4.0 * *std::max_element(sc.depth_t.data.begin(), sc.depth_t.data.end()) + 10.0;
      f.position = unproject(sc.cam_t, p.u, p.v, d);
      f.motion.setZero();
      f.depth_t = f.depth_t1 = d;
      f.logit = 10.0;
    }
    const RenderResult h = render_pair(sc, hidden, RenderParams{});
    occluded = std::max({occluded, max_abs_diff(h.frame_t, sc.frame_t), max_abs_diff(h.frame_t1, sc.frame_t1)});

    // extreme parameters
    SnowField wild = field;
    std::mt19937_64 rng(k);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& f : wild.flakes) {
      f.delta_t = Eigen::Vector3d(u(rng), u(rng), u(rng));
      f.logit = 30.0 * u(rng);
    }
    const RenderResult w = render_pair(sc, wild, RenderParams{});
    for (const Image* img : {&w.frame_t, &w.frame_t1})
      for (double v : img->data) in_range = in_range && v >= 0.0 && v <= 1.0;
  }
  const bool pass = exact && transparent <= 1e-6 && occluded <= 1e-6 && in_range;
  return {pass, std::string("empty field ") + (exact ? "bit-exact" : "NOT exact") + ", theta->0 max diff " +
                    fmt("%.1e", transparent) + ", occluded max diff " + fmt("%.1e", occluded) + ", outputs " +
                    (in_range ? "in [0,1]" : "OUT of [0,1]") + " (6 scenes)"};
}

// ---------------------------------------------------------------------------
// A6

// written out here rather than calling the library projection
Eigen::Vector2d pinhole(const CameraPose& c, const Eigen::Vector3d& x) {
  const Eigen::Vector3d cam = c.Rt.leftCols<3>() * x + c.Rt.col(3);
  const Eigen::Vector3d pix = c.K * cam;
  return {pix.x() / pix.z(), pix.y() / pix.z()};
}

Outcome a6_ground_truth(const ScenePair& fixture) {
  std::vector<ScenePair> scenes{fixture};
  for (std::uint64_t s = 0; s < 3; ++s) {
    ScenePair sc = random_small_scene(s + 40, 48);
    sc.background_flow = FlowField(48, 48);
    scenes.push_back(sc);
  }
  int checked = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const ScenePair& sc = scenes[k];
    SnowField field = init_snowfield(sc, 150, SnowDirection{}, default_fall_speed(sc), 100 + k);
    std::mt19937_64 rng(k);
    std::normal_distribution<double> n(0.0, 0.03);
    for (auto& f : field.flakes) {
      f.delta_t = Eigen::Vector3d(n(rng), n(rng), n(rng));
      f.delta_t1 = Eigen::Vector3d(n(rng), n(rng), n(rng));
      f.logit += 2.0;
    }
    const FlowField gt = snow_ground_truth_flow(sc, field, RenderParams{});
    FrameTape tape;
    render_frame(sc, field, 0, RenderParams{}, tape);
    const int w = sc.width(), h = sc.height();
    // nearest depth of any flake with alpha > 0.5 per pixel
    std::vector<double> front(std::size_t(w) * h, INFINITY);
    for (int i : tape.order)
      for (const auto& p : tape.footprints[std::size_t(i)].pixels)
        if (p.alpha > 0.5) front[std::size_t(p.index)] = std::min(front[std::size_t(p.index)], tape.footprints[std::size_t(i)].depth);
    for (int i : tape.order) {
      const auto& fp = tape.footprints[std::size_t(i)];
      const int cx = int(std::lround(fp.u)), cy = int(std::lround(fp.v));
      if (cx < 0 || cy < 0 || cx >= w || cy >= h) continue;
      const int idx = cy * w + cx;
      double alpha = 0.0;
      for (const auto& p : fp.pixels)
        if (p.index == idx) alpha = p.alpha;
      if (alpha <= 0.5 || front[std::size_t(idx)] < fp.depth) continue;
      const Snowflake& f = field.flakes[std::size_t(i)];
      const Eigen::Vector2d p0 = pinhole(sc.cam_t, f.position + f.delta_t);
      const Eigen::Vector2d p1 = pinhole(sc.cam_t1, f.position + f.motion + f.delta_t1);
      const double err = std::hypot(gt.u(cx, cy) - (p1.x() - p0.x()), gt.v(cx, cy) - (p1.y() - p0.y()));
      worst = std::max(worst, err);
      ++checked;
    }
  }
  return {checked > 20 && worst <= 0.5,
          std::to_string(checked) + " unoccluded flake centers, worst deviation " + fmt("%.2e", worst) + " px (<=0.5)"};
}

// ---------------------------------------------------------------------------
// A7

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Outcome a7_round_trips() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 40);
  std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
  int flo_ok = 0, cam_ok = 0, pfm_ok = 0, ppm_ok = 0;
  for (int k = 0; k < 100; ++k) {
    const int w = dim(rng), h = dim(rng);
    FlowField f(w, h);
    for (double& v : f.data) v = float(100.0 * sym(rng));
    const std::string fe = encode_flo(f);
    const FlowField fd = decode_flo(bytes_of(fe));
    flo_ok += fd == f && encode_flo(fd) == fe;

    CameraPose c;
    c.K << 50 + 500 * unit(rng), sym(rng), w * unit(rng), 0, 50 + 500 * unit(rng), h * unit(rng), 0, 0, 1;
    c.Rt.leftCols<3>() =
        Eigen::AngleAxisd(M_PI * sym(rng), Eigen::Vector3d(sym(rng), sym(rng), sym(rng)).normalized()).toRotationMatrix();
    c.Rt.col(3) = 20.0 * Eigen::Vector3d(sym(rng), sym(rng), sym(rng));
    const std::string ce = encode_cam(c);
    const CameraPose cd = decode_cam(bytes_of(ce));
    cam_ok += cd == c && encode_cam(cd) == ce;

    DepthMap d(w, h);
    for (double& v : d.data) v = float(0.1 + 100.0 * unit(rng));
    pfm_ok += decode_pfm(bytes_of(encode_pfm(d))) == d;

    Image img(w, h);
    for (double& v : img.data) v = unit(rng);
    const std::string pe = encode_ppm(img);
    const Image pd = decode_ppm(bytes_of(pe));
    bool q = encode_ppm(pd) == pe;
    for (std::size_t i = 0; i < img.data.size(); ++i) q = q && pd.data[i] == std::lround(img.data[i] * 255.0) / 255.0;
    ppm_ok += q;
  }
  return {flo_ok == 100 && cam_ok == 100 && pfm_ok == 100 && ppm_ok == 100,
          ".flo " + std::to_string(flo_ok) + "/100 byte-exact, .cam " + std::to_string(cam_ok) +
              "/100 byte-exact, PFM " + std::to_string(pfm_ok) + "/100 value-exact, PPM " + std::to_string(ppm_ok) +
              "/100 quantization-exact"};
}

// ---------------------------------------------------------------------------
// A8

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  return out;
}

Outcome a8_determinism(const fs::path& fixture_dir) {
  const fs::path work = fs::temp_directory_path() / ("snowattack_a8_" + std::to_string(std::random_device{}()));
  fs::create_directories(work);
  {
    std::ofstream cfg(work / "run.cfg");
    cfg << "steps = 25\nflakes = 60\nseed = 9\n";
  }
  std::vector<std::map<std::string, std::string>> trees;
  bool ran = true;
  for (int threads : {1, 3, 4}) {
    const fs::path out = work / ("t" + std::to_string(threads));
    const std::string cmd = std::string("\"") + SNOWATTACK_CLI + "\" attack --scene \"" + fixture_dir.string() +
                            "\" --config \"" + (work / "run.cfg").string() + "\" --out \"" + out.string() +
                            "\" --threads " + std::to_string(threads) + " > /dev/null";
    ran = ran && std::system(cmd.c_str()) == 0;
    if (ran) trees.push_back(read_tree(out));
  }
  bool same = ran && trees.size() == 3;
  std::size_t files = 0;
  if (same) {
    files = trees[0].size();
    same = trees[0] == trees[1] && trees[0] == trees[2] && trees[0].count("record.json") == 1;
  }
  fs::remove_all(work);
  return {same, std::string(ran ? "" : "cli run failed; ") + "3 runs (threads 1/3/4), " + std::to_string(files) +
                    " files each incl. record.json: " + (same ? "byte-identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// A9

Outcome a9_loss_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 30), count(0, 40);
  std::normal_distribution<double> n(0.0, 3.0), small(0.0, 0.2);
  std::uniform_real_distribution<double> depth(0.2, 50.0), alpha(0.0, 2000.0);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int w = dim(rng), h = dim(rng);
    FlowField f(w, h), g(w, h);
    for (double& v : f.data) v = n(rng);
    for (double& v : g.data) v = n(rng);
    SnowField field;
    for (int i = count(rng); i > 0; --i) {
      Snowflake s;
      s.delta_t = Eigen::Vector3d(small(rng), small(rng), small(rng));
      s.delta_t1 = Eigen::Vector3d(small(rng), small(rng), small(rng));
      s.depth_t = depth(rng);
      s.depth_t1 = depth(rng);
      field.flakes.push_back(s);
    }
    const double at = alpha(rng), at1 = alpha(rng);

    double sum_epe = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double du = f.u(x, y) - g.u(x, y), dv = f.v(x, y) - g.v(x, y);
        sum_epe += std::sqrt(du * du + dv * dv);
      }
    double pen_t = 0.0, pen_t1 = 0.0;
    for (const auto& s : field.flakes) {
      pen_t += (s.delta_t[0] * s.delta_t[0] + s.delta_t[1] * s.delta_t[1] + s.delta_t[2] * s.delta_t[2]) / s.depth_t;
      pen_t1 +=
          (s.delta_t1[0] * s.delta_t1[0] + s.delta_t1[1] * s.delta_t1[1] + s.delta_t1[2] * s.delta_t1[2]) / s.depth_t1;
    }
    const double nflakes = double(field.flakes.size());
    const double oracle =
        sum_epe / double(w * h) + (field.flakes.empty() ? 0.0 : at / nflakes * pen_t + at1 / nflakes * pen_t1);
    worst = std::max(worst, std::abs(loss(f, g, field, at, at1) - oracle));
  }
  return {worst <= 1e-9, "50 instances, worst |loss - brute force| " + fmt("%.1e", worst) + " (<=1e-9)"};
}

}  // namespace

int main() {
  const fs::path fixture_dir = SNOWATTACK_FIXTURE_DIR;
  int failures = 0;
  auto report = [&](const char* id, const char* title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
    std::fflush(stdout);
  };

  FixtureRuns fr;
  bool fixture_loaded = true;
  try {
    fr.scene = load_scene(fixture_dir);
  } catch (const std::exception& e) {
    std::printf("cannot load fixture %s: %s\n", fixture_dir.string().c_str(), e.what());
    fixture_loaded = false;
  }

  report("A1", "gradient correctness", a1_gradients);
  report("A2", "attack efficacy", [&] { return fixture_loaded ? a2_efficacy(fr) : Outcome{false, "no fixture"}; });
  report("A3", "density trend", [&] { return fixture_loaded ? a3_density(fr) : Outcome{false, "no fixture"}; });
  report("A4", "ablation ordering", [&] { return fixture_loaded ? a4_ablation(fr) : Outcome{false, "no fixture"}; });
  report("A5", "rendering identities", [&] { return a5_identities(fixture_loaded ? fr.scene : translating_texture_scene()); });
  report("A6", "ground-truth flow consistency",
         [&] { return a6_ground_truth(fixture_loaded ? fr.scene : translating_texture_scene()); });
  report("A7", "format round-trips", a7_round_trips);
  report("A8", "determinism", [&] { return a8_determinism(fixture_dir); });
  report("A9", "loss oracle", a9_loss_oracle);

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
