#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "spinesim/mesh.hpp"
#include "spinesim/metrics.hpp"
#include "spinesim/nifti_io.hpp"
#include "spinesim/phantom.hpp"
#include "spinesim/pipeline.hpp"
#include "spinesim/resect.hpp"
#include "spinesim/service/protocol.hpp"
#include "spinesim/service/server.hpp"

using namespace spinesim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Keys understood by the session rather than the pipeline.
const std::set<std::string> kSessionKeys = {"warn_mm", "danger_mm", "chunk_size"};

struct Globals {
  std::string config;
  bool json = false;
  bool verbose = false;
  bool quiet = false;
  std::map<std::string, std::string> overrides;  // config keys set by flags
};

void setup_logging(const Globals& g) {
  auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  const char* no_color = std::getenv("NO_COLOR");
  if ((no_color && *no_color) || !isatty(STDERR_FILENO)) sink->set_color_mode(spdlog::color_mode::never);
  auto logger = std::make_shared<spdlog::logger>("spinesim", sink);
  logger->set_pattern("%^[%l]%$ %v");
  logger->set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);
  spdlog::set_default_logger(logger);
}

// Config file first, then flags on top.
std::map<std::string, std::string> merged_config(const Globals& g) {
  std::map<std::string, std::string> kv;
  if (!g.config.empty()) kv = load_config_file(g.config);
  for (const auto& [k, v] : g.overrides) kv[k] = v;
  return kv;
}

PipelineConfig pipeline_config(const Globals& g) {
  auto kv = merged_config(g);
  for (const auto& k : kSessionKeys) kv.erase(k);
  PipelineConfig cfg;
  apply_config(kv, cfg);
  return cfg;
}

SessionConfig session_config(const Globals& g) {
  SessionConfig cfg;
  for (const auto& [k, v] : merged_config(g)) {
    if (!kSessionKeys.count(k)) continue;
    try {
      std::size_t used = 0;
      if (k == "chunk_size") {
        cfg.chunk_size = std::stoi(v, &used);
      } else {
        const double d = std::stod(v, &used);
        (k == "warn_mm" ? cfg.thresholds.warn_mm : cfg.thresholds.danger_mm) = d;
      }
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::logic_error&) {
      throw FormatError("config: bad value for " + k + ": '" + v + "'");
    }
  }
  if (cfg.chunk_size < 1) throw FormatError("config: chunk_size must be >= 1");
  if (!(cfg.thresholds.danger_mm >= 0) || !(cfg.thresholds.warn_mm >= cfg.thresholds.danger_mm))
    throw FormatError("config: need 0 <= danger_mm <= warn_mm");
  return cfg;
}

void add_config_flag(CLI::App* app, Globals& g, const std::string& flag, const std::string& key,
                     const std::string& help) {
  app->add_option_function<std::string>(
         flag, [&g, key](const std::string& v) { g.overrides[key] = v; }, help + " (config key " + key + ")")
      ->type_name("VALUE");
}

void add_registration_flags(CLI::App* app, Globals& g) {
  add_config_flag(app, g, "--iterations", "iterations", "ADAM iterations, 1..251");
  add_config_flag(app, g, "--lambda", "lambda", "regularizer weight");
  add_config_flag(app, g, "--stride", "stride", "control-grid spacing in voxels");
  add_config_flag(app, g, "--eta-scale", "eta_scale", "learning-rate multiplier");
  add_config_flag(app, g, "--patch-sigma", "patch_sigma", "MIND patch sigma in voxels");
}

void write_json_file(const json& j, const fs::path& p) {
  std::ofstream out(p);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + p.string());
}

void emit(const Globals& g, const json& machine, const std::string& human) {
  if (g.json)
    std::cout << machine.dump(2) << "\n";
  else if (!human.empty())
    std::cout << human << "\n";
}

std::vector<Label> vertebrae_in(const LabelMap& lm) {
  std::vector<Label> out;
  for (Label l : lm.present_labels())
    if (is_vertebra(l)) out.push_back(l);
  return out;
}

std::string fmt_mm(double v) { return fmt::format("{:.3f} mm", v); }

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  CLI::App app{"Spine surgery rehearsal toolkit: CT/MRI fusion, registration, meshing and carving."};
  app.set_version_flag("--version", "spinesim 0.1.0");
  app.require_subcommand(1);
  app.add_option("--config", g.config, "key = value config file; flags override it")->check(CLI::ExistingFile);
  app.add_flag("--json", g.json, "machine-readable JSON on stdout");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");
  app.add_flag("-q,--quiet", g.quiet, "warnings and errors only");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate the synthetic lumbar test case");
  PhantomParams pp;
  std::string ph_out;
  phantom->add_option("--size", pp.size, "voxels per axis")->capture_default_str()->check(CLI::Range(24, 512));
  phantom->add_option("--deform-amp", pp.deform_amp, "sinusoidal deformation amplitude in voxels")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 20.0));
  phantom->add_option("--rotation-deg", pp.rotation_deg, "similarity rotation in degrees")->capture_default_str();
  phantom->add_option("--out-dir", ph_out, "case directory to write")->required();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "union of primary and secondary vertebra segmentations");
  std::string fu_primary, fu_secondary, fu_out;
  fuse->add_option("--primary", fu_primary, "primary CT segmentation")->required()->check(CLI::ExistingFile);
  fuse->add_option("--secondary", fu_secondary, "secondary CT segmentation (adds the sacrum)")
      ->check(CLI::ExistingFile);
  fuse->add_option("--out", fu_out, "fused label map")->required();

  // register
  auto* reg = app.add_subcommand("register", "centroid similarity plus deformable MRI-to-CT registration");
  std::string rg_fixed, rg_moving, rg_fseg, rg_mseg, rg_field, rg_warped, rg_trace, rg_affine, rg_wseg;
  reg->add_option("--fixed", rg_fixed, "fixed image (CT)")->required()->check(CLI::ExistingFile);
  reg->add_option("--moving", rg_moving, "moving image (MRI)")->required()->check(CLI::ExistingFile);
  reg->add_option("--fixed-seg", rg_fseg, "fixed vertebra labels (fused)")->required()->check(CLI::ExistingFile);
  reg->add_option("--moving-seg", rg_mseg, "moving labels")->required()->check(CLI::ExistingFile);
  reg->add_option("--out-field", rg_field, "displacement field .nii.gz")->required();
  reg->add_option("--out-warped", rg_warped, "registered moving image")->required();
  reg->add_option("--trace", rg_trace, "per-iteration loss CSV")->required();
  reg->add_option("--out-affine", rg_affine, "similarity transform JSON");
  reg->add_option("--out-warped-seg", rg_wseg, "registered moving labels");
  add_registration_flags(reg, g);

  // mesh
  auto* mesh = app.add_subcommand("mesh", "surface meshes of a label map as binary glTF");
  std::string me_labels, me_soft, me_out, me_out_labels, me_palette;
  mesh->add_option("--labels", me_labels, "label map (bone)")->required()->check(CLI::ExistingFile);
  mesh->add_option("--soft", me_soft, "registered soft-tissue labels merged over the bone")
      ->check(CLI::ExistingFile);
  mesh->add_option("--out-labels", me_out_labels, "write the merged label map");
  mesh->add_option("--palette", me_palette, "palette JSON")->check(CLI::ExistingFile);
  mesh->add_option("--out", me_out, "output .glb")->required();
  add_config_flag(mesh, g, "--smooth-iterations", "smooth_iterations", "Laplacian smoothing passes");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Dice overlap or landmark registration error");
  std::vector<std::string> ev_dsc, ev_tre;
  std::vector<int> ev_labels;
  std::string ev_affine, ev_field, ev_out;
  auto* dsc_opt = eval->add_option("--dsc", ev_dsc, "two label maps")->expected(2)->check(CLI::ExistingFile);
  eval->add_option("--label", ev_labels, "labels to score (default: vertebrae present)")->needs(dsc_opt);
  auto* tre_opt = eval->add_option("--tre", ev_tre, "fixed and moving landmark JSON")->expected(2)->check(
      CLI::ExistingFile);
  eval->add_option("--affine", ev_affine, "similarity JSON")->needs(tre_opt)->check(CLI::ExistingFile);
  eval->add_option("--field", ev_field, "displacement field")->needs(tre_opt)->check(CLI::ExistingFile);
  eval->add_option("--report", ev_out, "also write report JSON and CSV here");
  add_config_flag(eval, g, "--patient", "patient", "patient id in the report");
  dsc_opt->excludes(tre_opt);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "all stages from a case directory to model.glb and report.json");
  std::string pi_case, pi_out;
  pipe->add_option("--case-dir", pi_case, "case directory")->required()->check(CLI::ExistingDirectory);
  pipe->add_option("--out-dir", pi_out, "artifact directory")->required();
  add_registration_flags(pipe, g);
  add_config_flag(pipe, g, "--smooth-iterations", "smooth_iterations", "Laplacian smoothing passes");
  add_config_flag(pipe, g, "--patient", "patient", "patient id in the report");

  // carve-replay
  auto* replay_cmd = app.add_subcommand("carve-replay", "headless replay of a carve script");
  std::string cr_model, cr_script, cr_out, cr_transcript;
  replay_cmd->add_option("--model", cr_model, "model label map")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--script", cr_script, "JSON array of carve commands")->required()->check(
      CLI::ExistingFile);
  replay_cmd->add_option("--out", cr_out, "outcome JSON")->required();
  replay_cmd->add_option("--transcript", cr_transcript,
                         "also drive the session protocol and write its frames as JSON lines");
  add_config_flag(replay_cmd, g, "--warn-mm", "warn_mm", "warning distance");
  add_config_flag(replay_cmd, g, "--danger-mm", "danger_mm", "danger distance");
  add_config_flag(replay_cmd, g, "--chunk-size", "chunk_size", "re-meshing chunk edge in voxels");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP and websocket service");
  service::ServerOptions so;
  std::string data_root;
  serve->add_option("--port", so.port, "listen port")->capture_default_str();
  serve->add_option("--address", so.address, "listen address")->capture_default_str();
  serve->add_option("--data-root", data_root, "case storage (default: $DATA_ROOT)");
  serve->add_option("--workers", so.workers, "pipeline worker threads")->capture_default_str()->check(
      CLI::PositiveNumber);
  add_config_flag(serve, g, "--warn-mm", "warn_mm", "warning distance");
  add_config_flag(serve, g, "--danger-mm", "danger_mm", "danger distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  setup_logging(g);

  try {
    if (phantom->parsed()) {
      const Phantom ph = make_phantom(pp);
      write_phantom_case(ph, ph_out);
      const PatientTre initial = tre(ph.fixed_landmarks, ph.moving_landmarks, [](const Vec3& p) { return p; });
      emit(g, {{"out_dir", ph_out}, {"size", pp.size}, {"deform_amp_voxels", pp.deform_amp},
               {"initial_tre_mm", initial.mean_mm}},
           "phantom written to " + ph_out + " (initial landmark error " + fmt_mm(initial.mean_mm) + ")");
    } else if (fuse->parsed()) {
      std::optional<LabelMap> secondary;
      if (!fu_secondary.empty()) secondary = load_labels(fu_secondary);
      const LabelMap fused = fuse_segmentations(load_labels(fu_primary), secondary);
      save_labels(fused, fu_out);
      json labels = json::array();
      for (Label l : fused.present_labels()) labels.push_back(display_name(l));
      emit(g, {{"out", fu_out}, {"labels", labels}}, "fused " + std::to_string(labels.size()) + " labels -> " + fu_out);
    } else if (reg->parsed()) {
      const PipelineConfig cfg = pipeline_config(g);
      const Volume fixed = load_volume(rg_fixed), moving = load_volume(rg_moving);
      const LabelMap moving_seg = load_labels(rg_mseg);
      const CaseRegistration r =
          register_case(fixed, moving, load_labels(rg_fseg), moving_seg, cfg.reg);
      save_displacement_field(r.deformable.field, cfg.reg, rg_field);
      write_trace_csv(r.deformable.trace, rg_trace);
      save_volume(warp(moving, r.affine, r.deformable.field), rg_warped);
      if (!rg_affine.empty()) {
        std::ofstream out(rg_affine);
        out << to_json(r.affine).dump(2) << "\n";
        if (!out) throw IoError("cannot write " + rg_affine);
      }
      if (!rg_wseg.empty()) save_labels(warp(moving_seg, r.affine, r.deformable.field), rg_wseg);
      const auto& t = r.deformable.final_terms;
      emit(g, {{"affine", to_json(r.affine)}, {"final", {{"S", t.S}, {"R", t.R}, {"L", t.L}}},
               {"iterations", r.deformable.trace.size()}},
           fmt::format("registered: S {:.5f}  R {:.5f}  L {:.5f}", t.S, t.R, t.L));
    } else if (mesh->parsed()) {
      const PipelineConfig cfg = pipeline_config(g);
      LabelMap labels = load_labels(me_labels);
      if (!me_soft.empty()) labels = build_model_labels(labels, load_labels(me_soft));
      if (!me_out_labels.empty()) save_labels(labels, me_out_labels);
      const Palette palette = me_palette.empty() ? default_palette() : load_palette(me_palette);
      const ModelScene scene = build_scene(labels, palette, cfg.smooth_iterations);
      export_gltf(scene, me_out);
      json nodes = json::array();
      for (const auto& m : scene.meshes)
        nodes.push_back({{"structure", display_name(m.structure)},
                         {"vertices", m.vertices.size()},
                         {"triangles", m.triangles.size()}});
      emit(g, {{"out", me_out}, {"meshes", nodes}}, std::to_string(nodes.size()) + " meshes -> " + me_out);
    } else if (eval->parsed()) {
      if (ev_dsc.empty() && ev_tre.empty()) throw UsageError("evaluate needs --dsc or --tre");
      EvaluationReport report;
      std::string human;
      if (!ev_dsc.empty()) {
        const LabelMap a = load_labels(ev_dsc[0]), b = load_labels(ev_dsc[1]);
        std::vector<Label> labels(ev_labels.begin(), ev_labels.end());
        if (labels.empty()) labels = vertebrae_in(a);
        for (Label l : labels) {
          const double d = dice(a, b, l);
          report.dice.push_back({l, display_name(l), d, a.count(l) == 0 && b.count(l) == 0});
          human += (human.empty() ? "" : "\n") +
                   (labels.size() == 1 ? fmt::format("{:.4f}", d) : fmt::format("{} {:.4f}", display_name(l), d));
        }
      } else {
        if (ev_affine.empty() || ev_field.empty()) throw UsageError("--tre needs --affine and --field");
        const PipelineConfig cfg = pipeline_config(g);
        std::ifstream in(ev_affine);
        json aj;
        try {
          aj = json::parse(in);
        } catch (const json::exception& e) {
          throw FormatError(std::string("affine JSON: ") + e.what());
        }
        report.tre = aggregate_tre({tre(load_landmarks(ev_tre[0]), load_landmarks(ev_tre[1]),
                                        similarity_from_json(aj), load_displacement_field(ev_field), cfg.patient)});
        human = "mean TRE " + fmt_mm(report.tre->cohort_mean_mm);
      }
      if (!ev_out.empty()) emit_report(report, ev_out);
      emit(g, to_json(report), human);
    } else if (pipe->parsed()) {
      const PipelineConfig cfg = pipeline_config(g);
      const EvaluationReport r = run_pipeline(pi_case, pi_out, cfg);
      std::string human = fmt::format("pipeline done in {:.1f} s; artifacts in {}", r.timing.total, pi_out);
      if (r.tre) human += "\nmean TRE " + fmt_mm(r.tre->cohort_mean_mm);
      emit(g, to_json(r), human);
    } else if (replay_cmd->parsed()) {
      const SessionConfig scfg = session_config(g);
      const LabelMap model = load_labels(cr_model);
      const std::vector<CarveCommand> script = load_carve_script(cr_script);
      SimSession session(model, scfg);
      const ReplayOutcome outcome = replay(session, script);
      const json oj = to_json(outcome);
      write_json_file(oj, cr_out);
      if (!cr_transcript.empty()) {
        service::SessionProtocol protocol(model, scfg);
        std::ofstream out(cr_transcript);
        auto line = [&](const char* dir, const std::string& frame) {
          out << json{{"direction", dir}, {"frame", json::parse(frame)}}.dump() << "\n";
        };
        for (const auto& cmd : script) {
          json msg = to_json(cmd);
          msg["type"] = "carve";
          const std::string frame = msg.dump();
          line("client", frame);
          for (const auto& reply : protocol.handle(frame)) line("server", reply);
        }
        std::int64_t seq = script.empty() ? 1 : script.back().seq + 1;
        for (const char* type : {"report", "checksum"}) {
          const std::string frame = json{{"type", type}, {"seq", seq++}}.dump();
          line("client", frame);
          for (const auto& reply : protocol.handle(frame)) line("server", reply);
        }
        if (!out) throw IoError("cannot write " + cr_transcript);
      }
      emit(g, oj,
           fmt::format("{} commands, {} carves, {} violations; grid {}", script.size(), outcome.report.carve_count,
                       outcome.report.violation_count, outcome.grid_checksum));
    } else if (serve->parsed()) {
      if (data_root.empty()) {
        const char* env = std::getenv("DATA_ROOT");
        if (!env || !*env) throw UsageError("serve needs --data-root or DATA_ROOT");
        data_root = env;
      }
      so.data_root = data_root;
      so.session = session_config(g);
      so.handle_signals = true;
      service::Server server(so);
      server.run();
    }
    return kOk;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    std::cerr << app.help() << "\n";
    return kUsage;
  } catch (const PipelineError& e) {
    spdlog::error("{}", e.what());
    if (g.json) std::cout << json{{"error", {{"stage", e.stage()}, {"message", e.what()}}}}.dump(2) << "\n";
    return kData;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    if (g.json) std::cout << json{{"error", {{"message", e.what()}}}}.dump(2) << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    if (g.json) std::cout << json{{"error", {{"message", e.what()}}}}.dump(2) << "\n";
    return kData;
  } catch (const std::exception& e) {
    spdlog::critical("internal error: {}", e.what());
    if (g.json) std::cout << json{{"error", {{"message", e.what()}, {"internal", true}}}}.dump(2) << "\n";
    return kInternal;
  }
}
