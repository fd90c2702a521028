#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinesim/deformable.hpp"
#include "spinesim/volume.hpp"

namespace spinesim {

/// 2|A n B| / (|A| + |B|) over voxels equal to `label`; 1.0 when both are empty.
double dice(const LabelMap& a, const LabelMap& b, Label label);

enum class LandmarkKind { Spinous, LeftTransverse, RightTransverse };
enum class LandmarkSpace { Fixed, Moving };

std::string to_string(LandmarkKind k);
LandmarkKind landmark_kind_from_string(const std::string& s);

struct NamedLandmark {
  Label level;
  LandmarkKind kind;
  Vec3 position;  // world mm
};

struct LandmarkSet {
  LandmarkSpace space = LandmarkSpace::Fixed;
  std::vector<NamedLandmark> landmarks;
};

/// {"space":"fixed","landmarks":[{"level":"L5","kind":"spinous","position_mm":[x,y,z]}]}
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& set, const std::filesystem::path& path);
nlohmann::json to_json(const LandmarkSet& set);
LandmarkSet landmarks_from_json(const nlohmann::json& j);

struct LandmarkError {
  Label level;
  LandmarkKind kind;
  double error_mm;
};

struct VertebraTre {
  Label level;
  double mean_mm;
  std::size_t landmarks;
};

struct PatientTre {
  std::string patient;
  std::vector<LandmarkError> landmarks;
  std::vector<VertebraTre> vertebrae;
  double mean_mm = 0.0;  // mean of the vertebra means
  std::vector<std::string> unmatched;
};

struct TreReport {
  std::vector<PatientTre> patients;
  double cohort_mean_mm = 0.0;  // mean of patient means
  double cohort_sd_mm = 0.0;    // sample standard deviation of patient means
};

/// Per matched (level, kind): || fixed_to_moving(p_fixed) - p_moving ||, then
/// averaged per vertebra and per patient. Throws Error when nothing matches.
PatientTre tre(const LandmarkSet& fixed, const LandmarkSet& moving, const PointMap& fixed_to_moving,
               const std::string& patient = "case");
PatientTre tre(const LandmarkSet& fixed, const LandmarkSet& moving, const SimilarityTransform& a,
               const DisplacementField& d, const std::string& patient = "case");

TreReport aggregate_tre(std::vector<PatientTre> patients);

struct TimingReport {
  std::vector<std::pair<std::string, double>> stages;  // execution order, seconds
  double total = 0.0;

  void add(const std::string& stage, double seconds) { stages.emplace_back(stage, seconds); }
  std::optional<double> get(const std::string& stage) const;
  /// Throws Error if any time is negative or total < max(stage).
  void validate() const;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct DiceEntry {
  Label label;
  std::string structure;
  double value;
  bool both_empty;
};

struct EvaluationReport {
  std::vector<DiceEntry> dice;
  std::optional<TreReport> tre;
  TimingReport timing;
  nlohmann::json extras = nlohmann::json::object();
};

inline constexpr int kReportSchemaVersion = 1;

nlohmann::json to_json(const EvaluationReport& r);
EvaluationReport report_from_json(const nlohmann::json& j);

/// Writes the JSON report plus "<stem>.csv" (patient, vertebra, kind, error_mm).
void emit_report(const EvaluationReport& r, const std::filesystem::path& path);
EvaluationReport load_report(const std::filesystem::path& path);

/// Cohort values reported for the clinical study, carried in reports for comparison.
nlohmann::json clinical_reference();

}  // namespace spinesim
