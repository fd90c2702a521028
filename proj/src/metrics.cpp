#include "spinesim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

namespace spinesim {

double dice(const LabelMap& a, const LabelMap& b, Label label) {
  require_same_geometry(a.geometry(), b.geometry(), "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] == label;
    const bool in_b = b[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::string to_string(LandmarkKind k) {
  switch (k) {
    case LandmarkKind::Spinous: return "spinous";
    case LandmarkKind::LeftTransverse: return "left_transverse";
    case LandmarkKind::RightTransverse: return "right_transverse";
  }
  return "unknown";
}

LandmarkKind landmark_kind_from_string(const std::string& s) {
  if (s == "spinous") return LandmarkKind::Spinous;
  if (s == "left_transverse") return LandmarkKind::LeftTransverse;
  if (s == "right_transverse") return LandmarkKind::RightTransverse;
  throw FormatError("unknown landmark kind '" + s + "'");
}

nlohmann::json to_json(const LandmarkSet& set) {
  nlohmann::json lms = nlohmann::json::array();
  for (const auto& l : set.landmarks)
    lms.push_back({{"level", display_name(l.level)},
                   {"kind", to_string(l.kind)},
                   {"position_mm", {l.position.x(), l.position.y(), l.position.z()}}});
  return {{"space", set.space == LandmarkSpace::Fixed ? "fixed" : "moving"}, {"landmarks", lms}};
}

LandmarkSet landmarks_from_json(const nlohmann::json& j) {
  LandmarkSet set;
  try {
    const auto space = j.at("space").get<std::string>();
    if (space == "fixed") set.space = LandmarkSpace::Fixed;
    else if (space == "moving") set.space = LandmarkSpace::Moving;
    else throw FormatError("landmark space must be 'fixed' or 'moving'");
    std::map<std::pair<Label, LandmarkKind>, bool> seen;
    for (const auto& item : j.at("landmarks")) {
      const auto level_name = item.at("level").get<std::string>();
      const auto level = structure_from_name(level_name);
      if (!level) throw FormatError("unknown landmark level '" + level_name + "'");
      const auto kind = landmark_kind_from_string(item.at("kind").get<std::string>());
      const auto& p = item.at("position_mm");
      if (p.size() != 3) throw FormatError("position_mm must have 3 entries");
      if (seen[{*level, kind}])
        throw FormatError("duplicate landmark " + level_name + "/" + to_string(kind));
      seen[{*level, kind}] = true;
      set.landmarks.push_back({*level, kind, Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed landmark file: ") + e.what());
  }
  return set;
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed landmark file " + path.string() + ": " + e.what());
  }
  return landmarks_from_json(j);
}

void save_landmarks(const LandmarkSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(set).dump(2) << "\n";
}

PatientTre tre(const LandmarkSet& fixed, const LandmarkSet& moving, const PointMap& fixed_to_moving,
               const std::string& patient) {
  std::map<std::pair<Label, LandmarkKind>, Vec3> moving_by_key;
  for (const auto& l : moving.landmarks) moving_by_key[{l.level, l.kind}] = l.position;

  PatientTre out;
  out.patient = patient;
  std::map<std::pair<Label, LandmarkKind>, bool> matched;
  for (const auto& f : fixed.landmarks) {
    const auto key = std::make_pair(f.level, f.kind);
    auto it = moving_by_key.find(key);
    if (it == moving_by_key.end()) {
      out.unmatched.push_back("fixed:" + display_name(f.level) + "/" + to_string(f.kind));
      continue;
    }
    matched[key] = true;
    const double err = (fixed_to_moving(f.position) - it->second).norm();
    out.landmarks.push_back({f.level, f.kind, err});
  }
  for (const auto& m : moving.landmarks)
    if (!matched.count({m.level, m.kind}))
      out.unmatched.push_back("moving:" + display_name(m.level) + "/" + to_string(m.kind));
  if (out.landmarks.empty()) throw Error("TRE: no matched landmark pairs");

  std::sort(out.landmarks.begin(), out.landmarks.end(), [](const auto& a, const auto& b) {
    return std::tie(a.level, a.kind) < std::tie(b.level, b.kind);
  });
  std::map<Label, std::pair<double, std::size_t>> per_level;
  for (const auto& e : out.landmarks) {
    per_level[e.level].first += e.error_mm;
    ++per_level[e.level].second;
  }
  double sum = 0.0;
  for (const auto& [level, acc] : per_level) {
    const double mean = acc.first / static_cast<double>(acc.second);
    out.vertebrae.push_back({level, mean, acc.second});
    sum += mean;
  }
  out.mean_mm = sum / static_cast<double>(out.vertebrae.size());
  return out;
}

PatientTre tre(const LandmarkSet& fixed, const LandmarkSet& moving, const SimilarityTransform& a,
               const DisplacementField& d, const std::string& patient) {
  return tre(fixed, moving, [&](const Vec3& p) { return total_transform_point(a, d, p); }, patient);
}

TreReport aggregate_tre(std::vector<PatientTre> patients) {
  TreReport r;
  r.patients = std::move(patients);
  if (r.patients.empty()) return r;
  double sum = 0.0;
  for (const auto& p : r.patients) sum += p.mean_mm;
  const double n = static_cast<double>(r.patients.size());
  r.cohort_mean_mm = sum / n;
  if (r.patients.size() > 1) {
    double ss = 0.0;
    for (const auto& p : r.patients) ss += (p.mean_mm - r.cohort_mean_mm) * (p.mean_mm - r.cohort_mean_mm);
    r.cohort_sd_mm = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

std::optional<double> TimingReport::get(const std::string& stage) const {
  for (const auto& [name, secs] : stages)
    if (name == stage) return secs;
  return std::nullopt;
}

void TimingReport::validate() const {
  double longest = 0.0;
  for (const auto& [name, secs] : stages) {
    if (!(secs >= 0.0)) throw Error("negative time for stage " + name);
    longest = std::max(longest, secs);
  }
  if (!(total >= 0.0) || total < longest) throw Error("total time is less than the longest stage");
}

namespace {

nlohmann::json to_json(const PatientTre& p) {
  nlohmann::json lms = nlohmann::json::array();
  for (const auto& e : p.landmarks)
    lms.push_back({{"vertebra", display_name(e.level)}, {"kind", to_string(e.kind)}, {"error_mm", e.error_mm}});
  nlohmann::json verts = nlohmann::json::array();
  for (const auto& v : p.vertebrae)
    verts.push_back({{"vertebra", display_name(v.level)}, {"mean_mm", v.mean_mm}, {"landmarks", v.landmarks}});
  return {{"patient", p.patient}, {"landmarks", lms}, {"vertebrae", verts}, {"mean_mm", p.mean_mm},
          {"unmatched", p.unmatched}};
}

PatientTre patient_from_json(const nlohmann::json& j) {
  PatientTre p;
  p.patient = j.at("patient").get<std::string>();
  auto level_of = [](const nlohmann::json& v) {
    const auto name = v.get<std::string>();
    if (auto l = structure_from_name(name)) return *l;
    throw FormatError("unknown vertebra '" + name + "' in report");
  };
  for (const auto& e : j.at("landmarks"))
    p.landmarks.push_back({level_of(e.at("vertebra")), landmark_kind_from_string(e.at("kind").get<std::string>()),
                           e.at("error_mm").get<double>()});
  for (const auto& v : j.at("vertebrae"))
    p.vertebrae.push_back({level_of(v.at("vertebra")), v.at("mean_mm").get<double>(),
                           v.at("landmarks").get<std::size_t>()});
  p.mean_mm = j.at("mean_mm").get<double>();
  p.unmatched = j.at("unmatched").get<std::vector<std::string>>();
  return p;
}

}  // namespace

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json dsc = nlohmann::json::array();
  for (const auto& d : r.dice)
    dsc.push_back({{"label", d.label}, {"structure", d.structure}, {"dsc", d.value}, {"both_empty", d.both_empty}});
  nlohmann::json tre_json = nullptr;
  if (r.tre) {
    nlohmann::json patients = nlohmann::json::array();
    for (const auto& p : r.tre->patients) patients.push_back(to_json(p));
    tre_json = {{"patients", patients},
                {"cohort_mean_mm", r.tre->cohort_mean_mm},
                {"cohort_sd_mm", r.tre->cohort_sd_mm}};
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& [name, secs] : r.timing.stages) stages.push_back({{"stage", name}, {"seconds", secs}});
  return {{"schema_version", kReportSchemaVersion},
          {"dsc", dsc},
          {"tre", tre_json},
          {"timing", {{"stages", stages}, {"total_seconds", r.timing.total}}},
          {"clinical_reference", clinical_reference()},
          {"extras", r.extras}};
}

EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport r;
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion)
      throw FormatError("unsupported report schema version");
    for (const auto& d : j.at("dsc"))
      r.dice.push_back({d.at("label").get<Label>(), d.at("structure").get<std::string>(),
                        d.at("dsc").get<double>(), d.at("both_empty").get<bool>()});
    if (!j.at("tre").is_null()) {
      TreReport t;
      for (const auto& p : j["tre"].at("patients")) t.patients.push_back(patient_from_json(p));
      t.cohort_mean_mm = j["tre"].at("cohort_mean_mm").get<double>();
      t.cohort_sd_mm = j["tre"].at("cohort_sd_mm").get<double>();
      r.tre = std::move(t);
    }
    for (const auto& s : j.at("timing").at("stages"))
      r.timing.add(s.at("stage").get<std::string>(), s.at("seconds").get<double>());
    r.timing.total = j["timing"].at("total_seconds").get<double>();
    if (j.contains("extras")) r.extras = j["extras"];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void emit_report(const EvaluationReport& r, const std::filesystem::path& path) {
  {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(r).dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
  }
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "patient,vertebra,kind,error_mm\n";
  if (r.tre)
    for (const auto& p : r.tre->patients)
      for (const auto& e : p.landmarks)
        csv << fmt::format("{},{},{},{:.17g}\n", p.patient, display_name(e.level), to_string(e.kind), e.error_mm);
}

EvaluationReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

nlohmann::json clinical_reference() {
  return {{"dsc",
           {{"vertebral_bone", {{"mean", 0.95}, {"sd", 0.03}}},
            {"intervertebral_discs", {{"mean", 0.87}, {"sd", 0.04}}},
            {"neural_elements", {{"mean", 0.92}, {"sd", 0.01}}}}},
          {"tre_mm", {{"mean", 1.73}, {"sd", 0.42}}},
          {"registration_seconds", 20.0},
          {"total_model_generation_seconds", 155.0},
          {"note", "15-patient clinical cohort on a GPU workstation; not comparable to phantom runs"}};
}

}  // namespace spinesim
