// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance <path-to-spinesim-cli> [criterion ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/core.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "spinesim/deformable.hpp"
#include "spinesim/mesh.hpp"
#include "spinesim/metrics.hpp"
#include "spinesim/nifti_io.hpp"
#include "spinesim/phantom.hpp"
#include "spinesim/resect.hpp"
#include "spinesim/seg_fusion.hpp"
#include "spinesim/service/server.hpp"
#include "spinesim/service/store.hpp"
#include "spinesim/similarity.hpp"

using namespace spinesim;
namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;
using nlohmann::json;

namespace {

fs::path g_cli;
fs::path g_work;

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed condition; keeps the first few messages.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : "; ") + s;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::string& args, const fs::path& stdout_file) {
  const std::string cmd = "\"" + g_cli.string() + "\" -q " + args + " > \"" + stdout_file.string() + "\"";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Volume random_smooth(const Geometry& g, std::mt19937& rng, double sigma) {
  std::uniform_real_distribution<float> u(0.0f, 100.0f);
  Volume v(g);
  for (auto& x : v.data()) x = u(rng);
  return gaussian_smooth(v, sigma);
}

// ---------------------------------------------------------------------------

Outcome pwd_schedule() {
  Outcome o;
  o.require(pwd_learning_rate(0) == 15.0, "eta(0)");
  o.require(pwd_learning_rate(70) == 15.0, "eta(70)");
  o.require(pwd_learning_rate(180) == 1.343, "eta(180)");
  o.require(std::abs(pwd_learning_rate(250) - 0.134) < 1e-12, "eta(250)");
  // Left limit of the cosine section at s = 180.
  const double left = 7.0 * std::cos(2.0 * std::numbers::pi * (180 - 70) / 200.0) + 8.0;
  o.require(std::abs(left - 1.343) < 5e-4, fmt::format("continuity {:.6f}", left));
  o.require(std::abs(pwd_learning_rate(179) - (7.0 * std::cos(2.0 * std::numbers::pi * 109 / 200.0) + 8.0)) < 1e-12,
            "cosine branch");
  // The cosine section overshoots half a period: minimum 1.0 at s = 170, back up to 1.343 at 180.
  o.require(std::abs(pwd_learning_rate(170) - 1.0) < 1e-12, "eta(170)");
  for (int s = 0; s <= 250; ++s)
    o.require(pwd_learning_rate(s) >= 0.134 - 1e-12 && pwd_learning_rate(s) <= 15.0, fmt::format("eta({})", s));
  o.note(fmt::format("eta(180-) = {:.6f}", left));
  return o;
}

double fit_cost(const Mat3& r, const std::vector<LandmarkPair>& pairs) {
  // Optimal scale and translation for a fixed rotation, then the squared residual.
  Vec3 cm = Vec3::Zero(), cf = Vec3::Zero();
  for (const auto& p : pairs) {
    cm += p.moving;
    cf += p.fixed;
  }
  cm /= pairs.size();
  cf /= pairs.size();
  double num = 0, den = 0;
  for (const auto& p : pairs) {
    num += (p.fixed - cf).dot(r * (p.moving - cm));
    den += (p.moving - cm).squaredNorm();
  }
  const double s = std::max(num / den, 0.0);
  double cost = 0;
  for (const auto& p : pairs) cost += (s * r * (p.moving - cm) + cf - p.fixed).squaredNorm();
  return cost;
}

Outcome similarity_recovery() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(1234);
  std::uniform_real_distribution<double> u(-1, 1), pos(-60, 60);
  std::uniform_int_distribution<int> count(4, 12);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Mat3 r = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized().toRotationMatrix();
    const double s = std::exp(u(rng));
    const Vec3 t(pos(rng), pos(rng), pos(rng));
    std::vector<LandmarkPair> pairs;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const Vec3 m(pos(rng), pos(rng), pos(rng));
      pairs.push_back({static_cast<Label>(i + 1), m, s * r * m + t});
    }
    const SimilarityTransform est = estimate_similarity(pairs);
    for (const auto& p : pairs) worst = std::max(worst, (est.apply(p.moving) - p.fixed).norm());
  }
  o.require(worst < 1e-9, fmt::format("max residual {:.3e} mm", worst));

  // Mirrored inputs: the fit must stay a proper rotation and be locally optimal among rotations.
  const Mat3 mirror = Eigen::Vector3d(-1, 1, 1).asDiagonal();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LandmarkPair> pairs;
    for (int i = 0; i < 6; ++i) {
      const Vec3 m(pos(rng), pos(rng), pos(rng));
      pairs.push_back({static_cast<Label>(i + 1), m, mirror * m});
    }
    const SimilarityTransform est = estimate_similarity(pairs);
    o.require(std::abs(est.rotation.determinant() - 1.0) < 1e-9, "reflection returned");
    o.require(est.scale > 0, "non-positive scale");
    const double best = fit_cost(est.rotation, pairs);
    double residual = 0;
    for (const auto& p : pairs) residual += (est.apply(p.moving) - p.fixed).squaredNorm();
    o.require(std::abs(residual - best) <= 1e-9 * std::max(1.0, best), "scale/translation not optimal");
    for (int k = 0; k < 100; ++k) {
      const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
      const Mat3 nudge = Eigen::AngleAxisd(0.02 * u(rng), axis).toRotationMatrix();
      o.require(fit_cost(nudge * est.rotation, pairs) >= best * (1 - 1e-12), "rotation not optimal");
    }
  }
  const double secs = seconds_since(t0);
  o.require(secs < 5.0, fmt::format("{:.2f} s", secs));
  o.note(fmt::format("max residual {:.2e} mm, {:.2f} s", worst, secs));
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const Geometry g = Geometry::axis_aligned({16, 16, 16});
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> u(-1, 1);
  const double h = 1e-5;
  std::size_t total = 0, good_all = 0;
  double worst_fraction = 1.0;
  for (int pair = 0; pair < 3; ++pair) {
    const DescriptorField ff = mind_descriptors(random_smooth(g, rng, 1.0));
    const DescriptorField fm = mind_descriptors(random_smooth(g, rng, 1.0));
    SimilarityTransform a;
    a.rotation = Eigen::AngleAxisd(0.1 * u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()).toRotationMatrix();
    a.scale = 1.0 + 0.05 * u(rng);
    a.translation = Vec3(u(rng), u(rng), u(rng));
    DisplacementField d(g, Dims{4, 4, 4}, 4);
    for (auto& x : d.values()) x = 0.8 * u(rng);
    for (double lambda : {0.01, 1.0}) {
      const RegistrationObjective obj(ff, fm, a, lambda);
      std::vector<double> grad(d.values().size());
      obj.evaluate(d, grad);
      std::size_t good = 0;
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double keep = d.values()[i];
        d.values()[i] = keep + h;
        const double lp = obj.evaluate(d, {}).L;
        d.values()[i] = keep - h;
        const double lm = obj.evaluate(d, {}).L;
        d.values()[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        const double scale = std::max(std::abs(fd), std::abs(grad[i]));
        good += scale < 1e-12 || std::abs(fd - grad[i]) / scale < 1e-3;
      }
      total += grad.size();
      good_all += good;
      worst_fraction = std::min(worst_fraction, static_cast<double>(good) / grad.size());
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst_fraction >= 0.95, fmt::format("worst pass fraction {:.3f}", worst_fraction));
  o.require(secs < 60.0, fmt::format("{:.1f} s", secs));
  o.note(fmt::format("{}/{} components within 1e-3, worst case {:.1f}%, {:.1f} s", good_all, total,
                     100 * worst_fraction, secs));
  return o;
}

// Phantom 64^3 through the CLI, shared by the registration and runtime criteria.
struct PhantomRun {
  bool ok = false;
  std::string error;
  double seconds = 0;
  json report;
  fs::path case_dir, out_dir;
};

const PhantomRun& phantom_run() {
  static const PhantomRun run = [] {
    PhantomRun r;
    r.case_dir = g_work / "phantom64";
    r.out_dir = g_work / "phantom64_out";
    fs::remove_all(r.case_dir);
    fs::remove_all(r.out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    int rc = run_cli(fmt::format("phantom --size 64 --deform-amp 5 --out-dir \"{}\"", r.case_dir.string()),
                     g_work / "phantom.stdout");
    if (rc != 0) {
      r.error = fmt::format("phantom exited {}", rc);
      return r;
    }
    rc = run_cli(fmt::format("--json pipeline --case-dir \"{}\" --out-dir \"{}\"", r.case_dir.string(),
                             r.out_dir.string()),
                 g_work / "pipeline.json");
    r.seconds = seconds_since(t0);
    if (rc != 0) {
      r.error = fmt::format("pipeline exited {}", rc);
      return r;
    }
    r.report = json::parse(slurp(g_work / "pipeline.json"));
    r.ok = true;
    return r;
  }();
  return run;
}

Outcome phantom_registration() {
  Outcome o;
  const PhantomRun& run = phantom_run();
  if (!run.ok) {
    o.require(false, run.error);
    return o;
  }
  const double voxel = load_volume(run.case_dir / "ct.nii.gz").geometry().spacing().minCoeff();
  const LandmarkSet fixed = load_landmarks(run.case_dir / "landmarks_fixed.json");
  const LandmarkSet moving = load_landmarks(run.case_dir / "landmarks_moving.json");
  const SimilarityTransform a = similarity_from_json(json::parse(slurp(run.out_dir / "affine.json")));
  const DisplacementField d = load_displacement_field(run.out_dir / "field.nii.gz");

  // Landmark errors straight from the files and the stored transform.
  double initial = 0, final_err = 0;
  std::size_t n = 0;
  for (const auto& f : fixed.landmarks)
    for (const auto& m : moving.landmarks)
      if (f.level == m.level && f.kind == m.kind) {
        initial += (f.position - m.position).norm();
        final_err += (total_transform_point(a, d, f.position) - m.position).norm();
        ++n;
      }
  o.require(n >= 9, "too few landmark pairs");
  initial /= n * voxel;
  final_err /= n * voxel;
  o.require(initial >= 4.0, fmt::format("initial {:.2f} vox", initial));
  o.require(final_err < 1.5, fmt::format("final {:.2f} vox", final_err));
  o.require(std::abs(run.report["tre"]["cohort_mean_mm"].get<double>() / voxel - final_err) < 1e-6,
            "report TRE disagrees");

  std::ifstream trace(run.out_dir / "trace.csv");
  std::string line;
  std::getline(trace, line);
  std::vector<double> loss;
  while (std::getline(trace, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    loss.push_back(std::stod(cells.back()));
  }
  o.require(loss.size() >= 51, "trace too short");
  std::size_t rises = 0;
  for (std::size_t i = loss.size() - 50; i < loss.size(); ++i) rises += loss[i] > loss[i - 1];
  o.require(rises == 0, fmt::format("{} loss increases in the last 50 iterations", rises));
  o.require(run.seconds < 300, fmt::format("{:.1f} s", run.seconds));
  o.note(fmt::format("TRE {:.2f} -> {:.2f} voxels over {} landmarks, {} iterations", initial, final_err, n,
                     loss.size()));
  return o;
}

Outcome mind_invariance() {
  Outcome o;
  std::mt19937 rng(5);
  const Geometry g = Geometry::axis_aligned({20, 18, 16});
  // Multiples of 1/64 below 128 keep 2.5 v exact in float, so only the descriptor is under test.
  Volume v = random_smooth(g, rng, 1.0);
  for (auto& x : v.data()) x = std::round(x * 64.0f) / 64.0f;
  Volume v25 = v;
  for (auto& x : v25.data()) x *= 2.5f;
  bool exact = true;
  for (std::size_t i = 0; i < v.size(); ++i) exact &= static_cast<double>(v25[i]) == 2.5 * static_cast<double>(v[i]);
  o.require(exact, "scaled input not exact");
  const DescriptorField a = mind_descriptors(v), b = mind_descriptors(v25);
  double worst = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  o.require(worst <= 1e-6, fmt::format("scaling changed descriptors by {:.2e}", worst));

  const DescriptorField c = mind_descriptors(Volume(g, 42.0f));
  o.require(std::all_of(c.data().begin(), c.data().end(), [](double x) { return x == 1.0; }), "constant image");
  o.require(similarity_S(a, a) == 0.0, "S(f, f)");
  o.note(fmt::format("max |MIND(v) - MIND(2.5 v)| = {:.1e}", worst));
  return o;
}

Outcome dsc_oracle() {
  Outcome o;
  std::mt19937 rng(6);
  const Geometry g = Geometry::axis_aligned({6, 6, 6});
  for (int trial = 0; trial < 1000; ++trial) {
    LabelMap a(g), b(g);
    const int density_a = 1 + trial % 7, density_b = 1 + (trial / 7) % 7;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<int>(rng() % 8) < density_a ? static_cast<Label>(1 + rng() % 3) : 0;
      b[i] = static_cast<int>(rng() % 8) < density_b ? static_cast<Label>(1 + rng() % 3) : 0;
    }
    for (Label l = 1; l <= 4; ++l) {
      std::set<std::size_t> sa, sb, both;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == l) sa.insert(i);
        if (b[i] == l) sb.insert(i);
      }
      std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
      const double expect =
          sa.empty() && sb.empty() ? 1.0 : 2.0 * both.size() / static_cast<double>(sa.size() + sb.size());
      if (dice(a, b, l) != expect) {
        o.require(false, fmt::format("trial {} label {}", trial, l));
        return o;
      }
    }
  }
  LabelMap a(g), b(g), c(g);
  for (int i = 0; i < 8; ++i) {
    a[i] = 1;
    b[i + 4] = 1;
    c[100 + i] = 1;
  }
  o.require(dice(a, a, 1) == 1.0, "dice(a, a)");
  o.require(dice(a, c, 1) == 0.0, "disjoint");
  o.require(dice(a, b, 1) == 0.5, "8/8/4");
  o.note("1000 trials x 4 labels exact");
  return o;
}

Outcome tre_oracle() {
  Outcome o;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-30, 30);
  const Mat3 r = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 t(2, -1, 4);
  const PointMap map = [&](const Vec3& p) { return r * p + t; };

  std::vector<PatientTre> patients;
  for (int pat = 0; pat < 3; ++pat) {
    LandmarkSet fixed{LandmarkSpace::Fixed, {}}, moving{LandmarkSpace::Moving, {}};
    std::map<Label, std::vector<double>> expect;
    for (Label level = 20; level <= 24; ++level)
      for (LandmarkKind kind : {LandmarkKind::Spinous, LandmarkKind::LeftTransverse, LandmarkKind::RightTransverse}) {
        const Vec3 pf(u(rng), u(rng), u(rng));
        const Vec3 pm = map(pf) + Vec3(u(rng), u(rng), u(rng)) * 0.1 * pat;
        fixed.landmarks.push_back({level, kind, pf});
        moving.landmarks.push_back({level, kind, pm});
        const Vec3 q = r * pf + t;
        const double dx = q.x() - pm.x(), dy = q.y() - pm.y(), dz = q.z() - pm.z();
        expect[level].push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
      }
    const PatientTre p = tre(fixed, moving, map, "p" + std::to_string(pat));
    std::size_t k = 0;
    for (const auto& [level, errs] : expect)
      for (double e : errs) {
        o.require(p.landmarks.at(k).level == level, "landmark order");
        o.require(std::abs(p.landmarks.at(k).error_mm - e) < 1e-9, "per-landmark error");
        ++k;
      }
    // Aggregation from the leaves.
    double sum_vert = 0;
    for (const auto& v : p.vertebrae) {
      double s = 0;
      std::size_t n = 0;
      for (const auto& l : p.landmarks)
        if (l.level == v.level) {
          s += l.error_mm;
          ++n;
        }
      o.require(n == v.landmarks && std::abs(s / n - v.mean_mm) < 1e-12, "vertebra mean");
      sum_vert += v.mean_mm;
    }
    o.require(std::abs(sum_vert / p.vertebrae.size() - p.mean_mm) < 1e-12, "patient mean");
    patients.push_back(p);
  }
  const TreReport rep = aggregate_tre(patients);
  double m = 0;
  for (const auto& p : patients) m += p.mean_mm;
  m /= patients.size();
  double ss = 0;
  for (const auto& p : patients) ss += (p.mean_mm - m) * (p.mean_mm - m);
  o.require(std::abs(rep.cohort_mean_mm - m) < 1e-12, "cohort mean");
  o.require(std::abs(rep.cohort_sd_mm - std::sqrt(ss / (patients.size() - 1))) < 1e-12, "cohort sd");

  const LandmarkSet f1{LandmarkSpace::Fixed, {{22, LandmarkKind::Spinous, Vec3(0, 0, 0)}}};
  const LandmarkSet m1{LandmarkSpace::Moving, {{22, LandmarkKind::Spinous, Vec3(3, 4, 0)}}};
  o.require(tre(f1, m1, [](const Vec3& p) { return p; }).mean_mm == 5.0, "(3,4,0) -> 5");
  o.note("3 patients x 15 landmarks, aggregation rebuilt from leaves");
  return o;
}

Outcome fusion_properties() {
  Outcome o;
  std::mt19937 rng(8);
  const Geometry g = Geometry::axis_aligned({32, 32, 32});
  FusionPolicy open;
  open.secondary_only_labels.clear();
  for (int trial = 0; trial < 1000; ++trial) {
    LabelMap p(g), s(g);
    const unsigned dp = 2 + trial % 5, ds = 2 + (trial / 5) % 5;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (rng() % dp == 0) p[i] = static_cast<Label>(20 + rng() % 5);  // L1-L5
      if (rng() % ds == 0) s[i] = static_cast<Label>(20 + rng() % 7);  // may include the sacrum
    }
    const LabelMap f = fuse_union(p, s);
    std::size_t np = 0, ns = 0, nboth = 0, nf = 0;
    bool keeps_primary = true, fills_from_secondary = true;
    for (std::size_t i = 0; i < p.size(); ++i) {
      np += p[i] != 0;
      ns += s[i] != 0;
      nboth += p[i] != 0 && s[i] != 0;
      nf += f[i] != 0;
      if (p[i] != 0 && f[i] != p[i]) keeps_primary = false;
      if (p[i] == 0 && f[i] != s[i]) fills_from_secondary = false;
    }
    if (nf != np + ns - nboth || !keeps_primary || !fills_from_secondary ||
        fuse_union(f, f, open).storage() != f.storage() || fuse_union(f, s, open).storage() != f.storage()) {
      o.require(false, fmt::format("trial {}", trial));
      return o;
    }
  }

  // Primary lacks the sacrum; the secondary supplies it.
  PhantomParams pp;
  pp.size = 32;
  const Phantom ph = make_phantom(pp);
  const Label sacrum = label_of(StructureId::Sacrum);
  const LabelMap f = fuse_union(ph.ct_seg, ph.ct_seg_secondary);
  o.require(ph.ct_seg.count(sacrum) == 0 && ph.ct_seg_secondary.count(sacrum) > 0, "phantom inputs");
  std::size_t sacrum_expected = 0;
  for (std::size_t i = 0; i < f.size(); ++i)
    sacrum_expected += ph.ct_seg[i] == 0 && ph.ct_seg_secondary[i] == sacrum;
  o.require(f.count(sacrum) == sacrum_expected && sacrum_expected > 0, "sacrum from secondary");
  for (Label l = 20; l <= 24; ++l) o.require(f.count(l) >= ph.ct_seg.count(l), "lumbar level lost");
  o.require(fuse_union(ph.ct_seg, ph.ct_seg_secondary).storage() == f.storage(), "deterministic");
  LabelMap bad = ph.ct_seg;
  bad[0] = sacrum;
  bool refused = false;
  try {
    fuse_union(bad, ph.ct_seg_secondary);
  } catch (const Error&) {
    refused = true;
  }
  o.require(refused, "sacrum in the primary accepted");
  o.note(fmt::format("1000 pairs; fused sacrum {} voxels", sacrum_expected));
  return o;
}

Outcome meshing() {
  Outcome o;
  LabelMap one(Geometry::axis_aligned({3, 3, 3}));
  one(1, 1, 1) = 22;
  const MeshTopology t = topology(marching_cubes(one, 22));
  o.require(t.euler() == 2, fmt::format("euler {}", t.euler()));
  o.require(t.boundary_edges == 0 && t.nonmanifold_edges == 0, "single voxel not closed");

  LabelMap ball(Geometry::axis_aligned({48, 48, 48}));
  for (int z = 0; z < 48; ++z)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        const double dx = x - 23.5, dy = y - 23.5, dz = z - 23.5;
        if (dx * dx + dy * dy + dz * dz <= 400.0) ball(x, y, z) = 22;
      }
  const TriangleMesh sphere = marching_cubes(ball, 22);
  const double vol = enclosed_volume(sphere);
  const double rel = std::abs(vol - 33510.0) / 33510.0;
  o.require(rel < 0.02, fmt::format("sphere volume {:.0f}", vol));
  o.require(topology(sphere).watertight() && topology(sphere).euler() == 2, "sphere not a closed surface");

  PhantomParams pp;
  pp.size = 32;
  const Phantom ph = make_phantom(pp);
  const auto a = encode_glb(build_scene(ph.mri_seg));
  const auto b = encode_glb(build_scene(ph.mri_seg));
  const fs::path f1 = g_work / "a.glb", f2 = g_work / "b.glb";
  export_gltf(build_scene(ph.mri_seg), f1);
  export_gltf(build_scene(ph.mri_seg), f2);
  o.require(a == b && slurp(f1) == slurp(f2) && slurp(f1) == std::string(a.begin(), a.end()), "glb bytes differ");
  o.require(!inspect_glb(a).empty(), "glb has no nodes");
  o.note(fmt::format("sphere {:.0f} mm^3 ({:.2f}% off)", vol, 100 * rel));
  return o;
}

// Footprint straight from the tool geometry, for every voxel of the grid.
std::vector<std::size_t> footprint_oracle(const Geometry& g, const Tool& tool, const Vec3& tip, const Vec3& dir) {
  Vec3 u = dir.cross(Vec3::UnitZ());
  if (u.norm() < 1e-6) u = dir.cross(Vec3::UnitX());
  u.normalize();
  const Vec3 v = dir.cross(u);
  std::vector<std::size_t> out;
  const Dims& d = g.dims();
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const Vec3 rel = g.to_world(Vec3(x, y, z)) - tip;
        bool in;
        if (tool.kind == ToolKind::Burr) {
          in = rel.squaredNorm() <= tool.radius_mm * tool.radius_mm;
        } else {
          const double a = rel.dot(dir);
          in = a >= 0 && a <= tool.bite_depth_mm && std::abs(rel.dot(u)) <= tool.bite_width_mm / 2 &&
               std::abs(rel.dot(v)) <= tool.bite_height_mm / 2;
        }
        if (in) out.push_back(g.linear(x, y, z));
      }
  return out;
}

Outcome carve_fuzz() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const LabelMap model = make_carve_model(32);
  SimSession session(model);
  const std::set<Label>& prot = session.config().protected_labels;
  auto protected_count = [&](const Grid<Label>& g) {
    std::size_t n = 0;
    for (Label l : g.data()) n += prot.count(l);
    return n;
  };
  const std::size_t protected0 = protected_count(model);
  std::map<Label, std::size_t> initial;
  for (Label l : model.data())
    if (l) ++initial[l];

  std::mt19937 rng(10);
  std::uniform_real_distribution<double> pos(-2.0, 33.0), unit(-1, 1), radius(0.5, 3.5), bite(1.0, 4.0);
  std::map<Label, std::size_t> removed_sum;
  std::size_t mismatches = 0, applied = 0, voxels = 0;
  for (int i = 0; i < 10000; ++i) {
    CarveCommand c;
    c.seq = i + 1;
    const unsigned pick = rng() % 10;
    c.tool.kind = pick < 6 ? ToolKind::Burr : pick < 9 ? ToolKind::Kerrison : ToolKind::Woodson;
    c.tool.radius_mm = radius(rng);
    c.tool.bite_width_mm = bite(rng);
    c.tool.bite_depth_mm = bite(rng);
    c.tool.bite_height_mm = bite(rng);
    c.tip = Vec3(pos(rng), pos(rng), pos(rng));
    Vec3 dir(unit(rng), unit(rng), unit(rng));
    if (rng() % 20 == 0) dir = Vec3(0, 0, rng() % 2 ? 1 : -1);  // exercises the frame fallback
    if (dir.norm() < 1e-3) dir = Vec3(1, 0, 0);
    c.direction = dir.normalized();
    c.active = rng() % 10 != 0;

    std::map<Label, std::size_t> expect;
    if (c.active && c.tool.carves())
      for (std::size_t idx : footprint_oracle(model.geometry(), c.tool, c.tip, c.direction)) {
        const Label l = session.grid()[idx];
        if (l && !prot.count(l)) ++expect[l];
      }
    const CarveResult r = session.apply_carve(c);
    applied += r.applied;
    voxels += r.removed_total;
    if (r.removed != expect) ++mismatches;
    for (const auto& [l, n] : r.removed) removed_sum[l] += n;
    if (i % 500 == 0 && protected_count(session.grid()) != protected0) o.require(false, "protected voxels changed");
  }
  o.require(mismatches == 0, fmt::format("{} footprint mismatches", mismatches));
  o.require(protected_count(session.grid()) == protected0, "protected count changed");

  std::map<Label, std::size_t> now;
  for (Label l : session.grid().data())
    if (l) ++now[l];
  const DecompressionReport rep = session.decompression_report();
  const double vv = model.geometry().voxel_volume_mm3();
  for (const auto& [l, n0] : initial) {
    const std::size_t gone = n0 - (now.count(l) ? now[l] : 0);
    const std::size_t ledger = rep.removed_voxels.count(l) ? rep.removed_voxels.at(l) : 0;
    o.require(gone == ledger && gone == removed_sum[l], fmt::format("ledger for label {}", l));
    if (rep.removed_mm3.count(l)) o.require(rep.removed_mm3.at(l) == ledger * vv, "ledger mm3");
  }
  o.require(rep.carve_count == applied, "carve count");

  while (session.undo()) {
  }
  o.require(session.grid().storage() == model.storage(), "undo-all did not restore the grid");
  const DecompressionReport after = session.decompression_report();
  for (const auto& [l, n] : after.removed_voxels) o.require(n == 0, "ledger not cleared by undo");
  const double secs = seconds_since(t0);
  o.require(secs < 120, fmt::format("{:.1f} s", secs));
  o.note(fmt::format("{} applied carves removed {} voxels, {:.1f} s", applied, voxels, secs));
  return o;
}

Outcome sdf_accuracy() {
  Outcome o;
  std::mt19937 rng(11);
  std::vector<LabelMap> models{make_carve_model(32)};
  // A random model on an anisotropic lattice.
  LabelMap r(Geometry::axis_aligned({32, 32, 32}, Vec3(0.8, 1.0, 1.3), Vec3(-5, 2, 7)));
  for (auto& l : r.data()) {
    const unsigned k = rng() % 200;
    l = k == 0 ? 200 : k == 1 ? 202 : k < 60 ? 22 : 0;
  }
  models.push_back(r);
  double worst = 0;
  for (const LabelMap& m : models) {
    SimSession s(m);
    std::vector<Vec3> sites;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (s.config().protected_labels.count(m[i])) {
        const auto v = m.geometry().unlinear(i);
        sites.push_back(m.geometry().to_world(Vec3(v[0], v[1], v[2])));
      }
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto v = m.geometry().unlinear(i);
      const Vec3 p = m.geometry().to_world(Vec3(v[0], v[1], v[2]));
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : sites) best = std::min(best, (p - q).squaredNorm());
      worst = std::max(worst, std::abs(std::sqrt(best) - s.sdf().distance_mm[i]));
    }
  }
  o.require(worst <= 1e-6, fmt::format("max error {:.2e} mm", worst));
  o.note(fmt::format("max |SDF - brute force| = {:.1e} mm over 2 models", worst));
  return o;
}

// --- HTTP / websocket client for the determinism check ----------------------

std::pair<unsigned, std::string> http_request(unsigned short port, http::verb verb, const std::string& target,
                                              const std::string& body = {},
                                              const std::string& content_type = "application/json") {
  boost::asio::io_context ioc;
  tcp::socket sock(ioc);
  sock.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "localhost");
  if (!body.empty()) {
    req.set(http::field::content_type, content_type);
    req.body() = body;
  }
  req.prepare_payload();
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response_parser<http::string_body> parser;
  parser.body_limit(1ull << 30);
  http::read(sock, buf, parser);
  beast::error_code ec;
  sock.shutdown(tcp::socket::shutdown_both, ec);
  return {parser.get().result_int(), parser.get().body()};
}

Outcome protocol_determinism() {
  Outcome o;
  const fs::path root = g_work / "service";
  const fs::path case_dir = g_work / "phantom32";
  fs::remove_all(root);
  fs::remove_all(case_dir);
  PhantomParams pp;
  pp.size = 32;
  const Phantom ph = make_phantom(pp);
  write_phantom_case(ph, case_dir);

  service::ServerOptions so;
  so.data_root = root;
  so.address = "127.0.0.1";
  so.port = 0;
  so.workers = 1;
  service::Server server(so);
  std::thread serving([&] { server.run(); });
  struct Stop {
    service::Server& s;
    std::thread& t;
    ~Stop() {
      s.stop();
      t.join();
    }
  } stop{server, serving};
  const unsigned short port = server.port();

  const std::string boundary = "acceptanceBoundary";
  std::string body;
  for (const auto& [field, file] : service::upload_fields()) {
    if (!fs::exists(case_dir / file)) continue;
    body += "--" + boundary + "\r\nContent-Disposition: form-data; name=\"" + field + "\"; filename=\"" + file +
            "\"\r\n\r\n" + slurp(case_dir / file) + "\r\n";
  }
  body += "--" + boundary + "--\r\n";
  auto [status, reply] = http_request(port, http::verb::post, "/cases", body, "multipart/form-data; boundary=" + boundary);
  if (status != 201) {
    o.require(false, fmt::format("upload {}", status));
    return o;
  }
  const std::string id = json::parse(reply)["case_id"];
  std::tie(status, reply) = http_request(port, http::verb::post, "/cases/" + id + "/pipeline", "{}");
  if (status != 202) {
    o.require(false, fmt::format("pipeline {}", status));
    return o;
  }
  const std::string job = json::parse(reply)["job_id"];
  std::string job_status;
  for (int i = 0; i < 6000; ++i) {
    job_status = json::parse(http_request(port, http::verb::get, "/jobs/" + job).second)["status"];
    if (job_status != "queued" && job_status != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  if (job_status != "done") {
    o.require(false, "job " + job_status);
    return o;
  }

  // Script aimed at the landmarks so it hits bone, with probes and a few inactive poses.
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> jitter(-4, 4), unit(-1, 1);
  json script = json::array();
  for (int i = 0; i < 200; ++i) {
    const auto& lm = ph.fixed_landmarks.landmarks[rng() % ph.fixed_landmarks.landmarks.size()];
    CarveCommand c;
    c.seq = 10 * (i + 1);
    const unsigned pick = rng() % 6;
    c.tool.kind = pick < 3 ? ToolKind::Burr : pick < 5 ? ToolKind::Kerrison : ToolKind::Rongeur;
    c.tool.radius_mm = 1.0 + (rng() % 3) * 0.5;
    c.tip = lm.position + Vec3(jitter(rng), jitter(rng), jitter(rng));
    Vec3 d(unit(rng), unit(rng), unit(rng));
    c.direction = d.norm() > 1e-3 ? d.normalized() : Vec3(0, 0, 1);
    c.active = rng() % 8 != 0;
    script.push_back(to_json(c));
  }
  const fs::path script_path = g_work / "script.json";
  std::ofstream(script_path) << script.dump();

  const fs::path model = root / "cases" / id / "out" / "model_labels.nii.gz";
  const fs::path headless_path = g_work / "replay.json";
  const int rc = run_cli(fmt::format("carve-replay --model \"{}\" --script \"{}\" --out \"{}\"", model.string(),
                                     script_path.string(), headless_path.string()),
                         g_work / "replay.stdout");
  if (rc != 0) {
    o.require(false, fmt::format("carve-replay exited {}", rc));
    return o;
  }
  const json headless = json::parse(slurp(headless_path));

  boost::asio::io_context ioc;
  websocket::stream<tcp::socket> ws(ioc);
  ws.next_layer().connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
  ws.handshake("localhost", "/cases/" + id + "/session");
  ws.text(true);
  auto send = [&](const json& j) { ws.write(boost::asio::buffer(j.dump())); };
  // Reads frames until the reply carrying `seq`, skipping alarm frames.
  auto reply_to = [&](std::int64_t seq) {
    for (;;) {
      beast::flat_buffer buf;
      ws.read(buf);
      const json j = json::parse(beast::buffers_to_string(buf.data()));
      if (j.value("seq", std::int64_t{-1}) == seq) return j;
      if (j["type"] != "alarm") throw std::runtime_error("unexpected frame " + j.dump());
    }
  };
  std::size_t removed_ws = 0;
  for (const auto& cmd : script) {
    json msg = cmd;
    msg["type"] = "carve";
    send(msg);
    const json r = reply_to(cmd["seq"].get<std::int64_t>());
    o.require(r["type"] != "error", "session error: " + r.value("message", std::string()));
    if (r["type"] == "carve_result") removed_ws += r["removed_total"].get<std::size_t>();
  }
  const std::int64_t last = script.back()["seq"].get<std::int64_t>();
  send({{"type", "report"}, {"seq", last + 1}});
  const json report = reply_to(last + 1);
  send({{"type", "checksum"}, {"seq", last + 2}});
  const json sums = reply_to(last + 2);
  ws.close(websocket::close_code::normal);

  std::size_t removed_headless = 0;
  for (const auto& r : headless["results"]) removed_headless += r["removed_total"].get<std::size_t>();
  o.require(report["report"] == headless["report"], "ledgers differ");
  o.require(sums["grid_checksum"] == headless["grid_checksum"], "grid checksums differ");
  o.require(sums["scene_checksum"] == headless["scene_checksum"], "scene checksums differ");
  o.require(removed_ws == removed_headless, "removed totals differ");
  o.require(headless["report"]["carve_count"].get<int>() > 0 && removed_headless > 0, "script carved nothing");
  o.note(fmt::format("{} commands, {} voxels removed, grid {}", script.size(), removed_headless,
                     headless["grid_checksum"].get<std::string>()));
  return o;
}

Outcome desk_performance() {
  Outcome o;
  const PhantomRun& run = phantom_run();
  if (!run.ok) {
    o.require(false, run.error);
    return o;
  }
  const double reported = run.report["timing"]["total_seconds"];
  o.require(run.seconds < 300, fmt::format("{:.1f} s", run.seconds));
  o.require(reported <= run.seconds, "reported time exceeds wall time");
  std::string stages;
  for (const auto& s : run.report["timing"]["stages"])
    stages += fmt::format(" {}={:.1f}", s["stage"].get<std::string>(), s["seconds"].get<double>());
  o.note(fmt::format("phantom + pipeline {:.1f} s wall;{}", run.seconds, stages));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <spinesim-cli> [criterion ...]\n";
    return 2;
  }
  g_cli = fs::absolute(argv[1]);
  g_work = fs::temp_directory_path() / "spinesim_acceptance";
  fs::create_directories(g_work);
  spdlog::set_level(spdlog::level::err);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"learning-rate schedule", pwd_schedule},
      {"similarity recovery", similarity_recovery},
      {"objective gradient", gradient_check},
      {"phantom registration", phantom_registration},
      {"MIND invariance", mind_invariance},
      {"DSC oracle", dsc_oracle},
      {"TRE oracle", tre_oracle},
      {"fusion properties", fusion_properties},
      {"meshing", meshing},
      {"carve safety fuzz", carve_fuzz},
      {"SDF accuracy", sdf_accuracy},
      {"protocol determinism", protocol_determinism},
      {"desk performance", desk_performance},
  };
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {:>2} {}: {}", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail)
              << std::endl;
  }
  return failed ? 1 : 0;
}
