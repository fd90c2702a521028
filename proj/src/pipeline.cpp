#include "spinesim/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "spinesim/mesh.hpp"
#include "spinesim/nifti_io.hpp"

namespace spinesim {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw FormatError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

std::vector<Label> vertebra_labels(const LabelMap& lm) {
  std::vector<Label> out;
  for (Label l : lm.present_labels())
    if (is_vertebra(l)) out.push_back(l);
  return out;
}

template <typename F>
auto stage(const std::string& name, TimingReport& timing, const PipelineCallbacks& cb, F&& body) {
  if (cb.control.cancel && cb.control.cancel->load()) throw Cancelled();
  if (cb.on_stage) cb.on_stage(name);
  spdlog::info("pipeline: {}", name);
  Stopwatch sw;
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      timing.add(name, sw.seconds());
    } else {
      auto r = body();
      timing.add(name, sw.seconds());
      return r;
    }
  } catch (const Cancelled&) {
    throw;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_config(const std::map<std::string, std::string>& kv, PipelineConfig& cfg) {
  for (const auto& [key, v] : kv) {
    if (key == "iterations") {
      cfg.reg.iterations = parse_number<int>(key, v);
    } else if (key == "lambda") {
      cfg.reg.lambda = parse_number<double>(key, v);
    } else if (key == "stride") {
      cfg.reg.stride = parse_number<int>(key, v);
    } else if (key == "patch_sigma") {
      cfg.reg.mind.patch_sigma = parse_number<double>(key, v);
    } else if (key == "eps_r") {
      cfg.reg.eps_r = parse_number<double>(key, v);
    } else if (key == "eta_scale") {
      cfg.reg.eta_scale = parse_number<double>(key, v);
    } else if (key == "smooth_iterations") {
      cfg.smooth_iterations = parse_number<int>(key, v);
    } else if (key == "patient") {
      cfg.patient = v;
    } else {
      throw FormatError("config: unknown key '" + key + "'");
    }
  }
  if (cfg.reg.iterations < 1 || cfg.reg.iterations > 251) throw FormatError("config: iterations must be in [1, 251]");
  if (cfg.reg.lambda < 0) throw FormatError("config: lambda must be >= 0");
  if (!(cfg.reg.eta_scale > 0)) throw FormatError("config: eta_scale must be > 0");
  if (cfg.reg.stride < 1) throw FormatError("config: stride must be >= 1");
  if (!(cfg.reg.mind.patch_sigma > 0)) throw FormatError("config: patch_sigma must be > 0");
  if (cfg.smooth_iterations < 0) throw FormatError("config: smooth_iterations must be >= 0");
}

LabelMap fuse_segmentations(const LabelMap& primary, const std::optional<LabelMap>& secondary,
                            const FusionPolicy& policy) {
  LabelMap fused = secondary ? fuse_union(primary, *secondary, policy) : primary;
  for (Label l : vertebra_labels(fused)) fused = largest_component(fused, l);
  return fused;
}

CaseRegistration register_case(const Volume& fixed, const Volume& moving, const LabelMap& fixed_seg,
                               const LabelMap& moving_seg, const RegConfig& cfg, const RunControl& control) {
  require_same_geometry(fixed.geometry(), fixed_seg.geometry(), "fixed image and fixed segmentation");
  require_same_geometry(moving.geometry(), moving_seg.geometry(), "moving image and moving segmentation");
  const auto fc = label_centroids(fixed_seg, vertebra_labels(fixed_seg));
  const auto mc = label_centroids(moving_seg, vertebra_labels(moving_seg));
  CaseRegistration out{SimilarityTransform{}, pair_by_level(mc.centroids, fc.centroids),
                       RegistrationResult{DisplacementField(fixed.geometry(), cfg.stride), {}, {}}};
  out.affine = estimate_similarity(out.pairing.pairs);
  out.deformable = register_deformable(fixed, moving, out.affine, cfg, control);
  return out;
}

LabelMap build_model_labels(const LabelMap& bone, const LabelMap& registered_mri_seg) {
  LabelMap soft = registered_mri_seg;
  for (auto& v : soft.data())
    if (is_vertebra(v)) v = 0;
  return merge_structures(bone, soft);
}

EvaluationReport run_pipeline(const std::filesystem::path& case_dir, const std::filesystem::path& out_dir,
                              const PipelineConfig& cfg, const PipelineCallbacks& cb) {
  EvaluationReport report;
  TimingReport& timing = report.timing;
  Stopwatch total;

  struct Inputs {
    Volume ct, mri;
    LabelMap ct_seg, mri_seg;
    std::optional<LabelMap> secondary;
    std::optional<LandmarkSet> lm_fixed, lm_moving;
  };
  Inputs in = stage("segmentation_ingest", timing, cb, [&] {
    std::filesystem::create_directories(out_dir);
    Inputs r{load_volume(case_dir / CaseFiles::ct), load_volume(case_dir / CaseFiles::mri),
             load_labels(case_dir / CaseFiles::ct_seg), load_labels(case_dir / CaseFiles::mri_seg), {}, {}, {}};
    if (std::filesystem::exists(case_dir / CaseFiles::ct_seg_secondary))
      r.secondary = load_labels(case_dir / CaseFiles::ct_seg_secondary);
    if (std::filesystem::exists(case_dir / CaseFiles::landmarks_fixed) &&
        std::filesystem::exists(case_dir / CaseFiles::landmarks_moving)) {
      r.lm_fixed = load_landmarks(case_dir / CaseFiles::landmarks_fixed);
      r.lm_moving = load_landmarks(case_dir / CaseFiles::landmarks_moving);
    }
    require_same_geometry(r.ct.geometry(), r.ct_seg.geometry(), "CT and CT segmentation");
    require_same_geometry(r.mri.geometry(), r.mri_seg.geometry(), "MRI and MRI segmentation");
    return r;
  });

  const LabelMap fused = stage("fusion", timing, cb, [&] {
    LabelMap f = fuse_segmentations(in.ct_seg, in.secondary);
    save_labels(f, out_dir / ArtifactFiles::fused_seg);
    return f;
  });

  struct AffineStage {
    SimilarityTransform a;
    LandmarkPairing pairing;
  };
  const AffineStage affine = stage("affine", timing, cb, [&] {
    const auto fc = label_centroids(fused, vertebra_labels(fused));
    const auto mc = label_centroids(in.mri_seg, vertebra_labels(in.mri_seg));
    AffineStage s{{}, pair_by_level(mc.centroids, fc.centroids)};
    s.a = estimate_similarity(s.pairing.pairs);
    std::ofstream out(out_dir / ArtifactFiles::affine);
    out << to_json(s.a).dump(2) << "\n";
    if (!out) throw IoError("cannot write affine.json");
    return s;
  });

  const RegistrationResult reg = stage("deformable", timing, cb, [&] {
    RegistrationResult r = register_deformable(in.ct, in.mri, affine.a, cfg.reg, cb.control);
    save_displacement_field(r.field, cfg.reg, out_dir / ArtifactFiles::field);
    write_trace_csv(r.trace, out_dir / ArtifactFiles::trace);
    save_volume(warp(in.mri, affine.a, r.field), out_dir / ArtifactFiles::mri_registered);
    return r;
  });

  const LabelMap model = stage("merge", timing, cb, [&] {
    LabelMap mri_seg_reg = warp(in.mri_seg, affine.a, reg.field);
    save_labels(mri_seg_reg, out_dir / ArtifactFiles::mri_seg_registered);
    for (Label l : vertebra_labels(fused)) {
      report.dice.push_back({l, display_name(l), dice(fused, mri_seg_reg, l),
                             fused.count(l) == 0 && mri_seg_reg.count(l) == 0});
    }
    LabelMap m = build_model_labels(fused, mri_seg_reg);
    save_labels(m, out_dir / ArtifactFiles::model_labels);
    return m;
  });

  stage("meshing", timing, cb, [&] {
    export_gltf(build_scene(model, default_palette(), cfg.smooth_iterations), out_dir / ArtifactFiles::model);
  });

  if (in.lm_fixed && in.lm_moving) {
    try {
      report.tre = aggregate_tre({tre(*in.lm_fixed, *in.lm_moving, affine.a, reg.field, cfg.patient)});
      const PatientTre initial = tre(*in.lm_fixed, *in.lm_moving, [](const Vec3& p) { return p; }, cfg.patient);
      const PatientTre affine_only = tre(
          *in.lm_fixed, *in.lm_moving, [&](const Vec3& p) { return affine.a.inverse_apply(p); }, cfg.patient);
      report.extras["tre_initial_mm"] = initial.mean_mm;
      report.extras["tre_affine_mm"] = affine_only.mean_mm;
    } catch (const Error& e) {
      throw PipelineError("evaluation", e.what());
    }
  }

  report.extras["affine"] = to_json(affine.a);
  std::vector<std::string> unmatched;
  for (Label l : affine.pairing.unmatched_moving) unmatched.push_back("moving:" + display_name(l));
  for (Label l : affine.pairing.unmatched_fixed) unmatched.push_back("fixed:" + display_name(l));
  report.extras["unmatched_levels"] = unmatched;
  report.extras["registration"] = {{"iterations", cfg.reg.iterations},
                                   {"lambda", cfg.reg.lambda},
                                   {"stride", cfg.reg.stride},
                                   {"eta_scale", cfg.reg.eta_scale},
                                   {"final_S", reg.final_terms.S},
                                   {"final_R", reg.final_terms.R},
                                   {"final_L", reg.final_terms.L}};
  timing.total = total.seconds();
  timing.validate();
  emit_report(report, out_dir / ArtifactFiles::report);
  return report;
}

}  // namespace spinesim
