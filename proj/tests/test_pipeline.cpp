#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "spinesim/mesh.hpp"
#include "spinesim/nifti_io.hpp"
#include "spinesim/phantom.hpp"
#include "spinesim/pipeline.hpp"

using namespace spinesim;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "spinesim_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const Phantom& small_phantom() {
  static const Phantom ph = [] {
    PhantomParams p;
    p.size = 32;
    p.deform_amp = 2.0;
    return make_phantom(p);
  }();
  return ph;
}

PipelineConfig quick_config() {
  PipelineConfig cfg;
  cfg.reg.iterations = 40;
  cfg.smooth_iterations = 2;
  return cfg;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto kv = parse_config_text(
      "# comment\n[registration]\niterations = 120\n lambda=0.5   # trailing\n\npatient = \"p 7\"\n");
  CHECK(kv.at("iterations") == "120");
  CHECK(kv.at("lambda") == "0.5");
  CHECK(kv.at("patient") == "p 7");
  CHECK_THROWS_AS(parse_config_text("no equals sign"), FormatError);
  CHECK_THROWS_AS(parse_config_text("= 3"), FormatError);

  PipelineConfig cfg;
  apply_config(kv, cfg);
  CHECK(cfg.reg.iterations == 120);
  CHECK(cfg.reg.lambda == 0.5);
  CHECK(cfg.patient == "p 7");

  PipelineConfig c2;
  CHECK_THROWS_AS(apply_config({{"colour", "red"}}, c2), FormatError);
  CHECK_THROWS_AS(apply_config({{"iterations", "12x"}}, c2), FormatError);
  CHECK_THROWS_AS(apply_config({{"iterations", "0"}}, c2), FormatError);
  CHECK_THROWS_AS(apply_config({{"iterations", "300"}}, c2), FormatError);
  CHECK_THROWS_AS(apply_config({{"lambda", "-1"}}, c2), FormatError);
  CHECK_THROWS_AS(apply_config({{"eta_scale", "0"}}, c2), FormatError);
  CHECK_THROWS_AS(load_config_file("/nonexistent/spinesim.conf"), IoError);
}

TEST_CASE("shipped palette file matches the built-in palette") {
  const Palette file = load_palette(fs::path(SPINESIM_SOURCE_DIR) / "data" / "palette.json");
  CHECK(palette_to_json(file) == palette_to_json(default_palette()));
}

TEST_CASE("phantom ground truth is self-consistent") {
  const Phantom& ph = small_phantom();
  for (const Vec3& p : {Vec3(0, 0, 0), Vec3(5, -3, 8), Vec3(-10, 4, -7)}) {
    CHECK((ph.moving_to_fixed(ph.fixed_to_moving(p)) - p).norm() < 1e-8);
  }
  REQUIRE(ph.fixed_landmarks.landmarks.size() == ph.moving_landmarks.landmarks.size());
  CHECK(ph.fixed_landmarks.landmarks.size() == 15);
  for (std::size_t i = 0; i < ph.fixed_landmarks.landmarks.size(); ++i) {
    const auto& f = ph.fixed_landmarks.landmarks[i];
    const auto& m = ph.moving_landmarks.landmarks[i];
    CHECK(f.level == m.level);
    CHECK((ph.moving_to_fixed(m.position) - f.position).norm() < 1e-8);
  }
  CHECK(ph.ct_seg.count(26) == 0);
  CHECK(ph.ct_seg_secondary.count(26) > 0);
  for (Label l : {20, 21, 22, 23, 24, 200, 201}) CHECK(ph.mri_seg.count(l) > 0);
  // Monotone intensity remap: brighter CT tissue stays brighter in MRI.
  CHECK(ph.ct.geometry().matches(ph.mri.geometry()));
  CHECK_THROWS(make_phantom(PhantomParams{8}));
}

TEST_CASE("carve model layout") {
  const LabelMap m = make_carve_model(32);
  for (Label l : {23, 24, 200, 201, 203, 300}) CHECK(m.count(l) > 0);
  CHECK(m(16, 16, 5) == 200);
}

TEST_CASE("pipeline writes every artifact and a consistent report") {
  const fs::path root = fresh_dir("pipeline_ok");
  write_phantom_case(small_phantom(), root / "case");
  std::vector<std::string> stages;
  PipelineCallbacks cb;
  cb.on_stage = [&](const std::string& s) { stages.push_back(s); };
  const EvaluationReport r = run_pipeline(root / "case", root / "out", quick_config(), cb);

  CHECK(stages == std::vector<std::string>{"segmentation_ingest", "fusion", "affine", "deformable", "merge",
                                           "meshing"});
  for (const char* f : {ArtifactFiles::fused_seg, ArtifactFiles::affine, ArtifactFiles::field, ArtifactFiles::trace,
                        ArtifactFiles::mri_registered, ArtifactFiles::mri_seg_registered, ArtifactFiles::model_labels,
                        ArtifactFiles::model, ArtifactFiles::report})
    CHECK_MESSAGE(fs::exists(root / "out" / f), f);

  const EvaluationReport back = load_report(root / "out" / ArtifactFiles::report);
  CHECK(to_json(back) == to_json(r));
  REQUIRE(r.tre.has_value());
  CHECK(r.tre->patients.size() == 1);
  CHECK(r.dice.size() == 6);  // L1-L5 plus the sacrum from the secondary map
  for (const auto& d : r.dice) CHECK(d.value > 0.5);
  CHECK(r.timing.stages.size() == 6);
  CHECK_NOTHROW(r.timing.validate());

  // The fused map carries the sacrum contributed only by the secondary segmentation.
  CHECK(load_labels(root / "out" / ArtifactFiles::fused_seg).count(26) > 0);

  std::ifstream glb(root / "out" / ArtifactFiles::model, std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(glb)), {});
  CHECK_FALSE(inspect_glb(bytes).empty());

  // Stage outputs equal the stand-alone building blocks run on the same inputs.
  const Phantom& ph = small_phantom();
  const LabelMap fused = fuse_segmentations(ph.ct_seg, ph.ct_seg_secondary);
  CHECK(load_labels(root / "out" / ArtifactFiles::fused_seg).storage() == fused.storage());
  const CaseRegistration reg = register_case(load_volume(root / "case" / CaseFiles::ct),
                                             load_volume(root / "case" / CaseFiles::mri), fused,
                                             load_labels(root / "case" / CaseFiles::mri_seg), quick_config().reg);
  const DisplacementField saved = load_displacement_field(root / "out" / ArtifactFiles::field);
  CHECK(std::equal(saved.values().begin(), saved.values().end(), reg.deformable.field.values().begin()));
}

TEST_CASE("pipeline failures name the stage") {
  const fs::path root = fresh_dir("pipeline_fail");
  write_phantom_case(small_phantom(), root / "case");

  // Truncated MRI: ingest fails.
  fs::copy(root / "case", root / "trunc", fs::copy_options::recursive);
  fs::resize_file(root / "trunc" / CaseFiles::mri, 200);
  try {
    run_pipeline(root / "trunc", root / "out1", quick_config());
    FAIL("expected failure");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "segmentation_ingest");
  }

  // Non-finite MRI intensities: registration fails numerically.
  fs::copy(root / "case", root / "nan", fs::copy_options::recursive);
  Volume mri = load_volume(root / "nan" / CaseFiles::mri);
  mri(10, 10, 10) = NAN;
  save_volume(mri, root / "nan" / CaseFiles::mri);
  try {
    run_pipeline(root / "nan", root / "out2", quick_config());
    FAIL("expected failure");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "deformable");
  }

  // Too few labelled levels for the similarity fit.
  fs::copy(root / "case", root / "few", fs::copy_options::recursive);
  LabelMap seg = load_labels(root / "few" / CaseFiles::mri_seg);
  for (auto& l : seg.data())
    if (l >= 20 && l <= 23) l = 0;
  save_labels(seg, root / "few" / CaseFiles::mri_seg);
  try {
    run_pipeline(root / "few", root / "out3", quick_config());
    FAIL("expected failure");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "affine");
  }

  std::atomic<bool> cancel{false};
  PipelineCallbacks cb;
  cb.control.cancel = &cancel;
  cb.on_stage = [&](const std::string& s) {
    if (s == "affine") cancel = true;
  };
  CHECK_THROWS_AS(run_pipeline(root / "case", root / "out4", quick_config(), cb), Cancelled);
}
