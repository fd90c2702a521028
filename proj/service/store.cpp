#include "spinesim/service/store.hpp"

#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "spinesim/metrics.hpp"
#include "spinesim/nifti_io.hpp"

namespace spinesim::service {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(CaseStatus s) {
  switch (s) {
    case CaseStatus::Pending: return "pending";
    case CaseStatus::Running: return "running";
    case CaseStatus::Done: return "done";
    case CaseStatus::Failed: return "failed";
  }
  return "pending";
}

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
    case JobStatus::Cancelled: return "cancelled";
  }
  return "queued";
}

namespace {

CaseStatus case_status_from_string(const std::string& s) {
  for (CaseStatus c : {CaseStatus::Pending, CaseStatus::Running, CaseStatus::Done, CaseStatus::Failed})
    if (to_string(c) == s) return c;
  throw FormatError("unknown case status '" + s + "'");
}

json opt(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

json record_json(const CaseRecord& r) {
  return {{"case_id", r.id},
          {"created", r.created},
          {"status", to_string(r.status)},
          {"last_job", opt(r.last_job)},
          {"error", r.error_stage ? json{{"stage", *r.error_stage}, {"message", r.error_message.value_or("")}}
                                  : json(nullptr)}};
}

CaseRecord record_from_json(const json& j) {
  CaseRecord r;
  r.id = j.at("case_id").get<std::string>();
  r.created = j.at("created").get<std::string>();
  r.status = case_status_from_string(j.at("status").get<std::string>());
  if (!j.at("last_job").is_null()) r.last_job = j["last_job"].get<std::string>();
  if (!j.at("error").is_null()) {
    r.error_stage = j["error"].at("stage").get<std::string>();
    r.error_message = j["error"].at("message").get<std::string>();
  }
  return r;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + p.string());
}

}  // namespace

const std::map<std::string, std::string>& upload_fields() {
  static const std::map<std::string, std::string> m = {
      {"ct", CaseFiles::ct},
      {"mri", CaseFiles::mri},
      {"ct_seg", CaseFiles::ct_seg},
      {"ct_seg_secondary", CaseFiles::ct_seg_secondary},
      {"mri_seg", CaseFiles::mri_seg},
      {"landmarks_fixed", CaseFiles::landmarks_fixed},
      {"landmarks_moving", CaseFiles::landmarks_moving},
  };
  return m;
}

std::string random_id(std::size_t hex_digits) {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  std::ostringstream s;
  while (s.str().size() < hex_digits) s << std::hex << std::setw(16) << std::setfill('0') << rng();
  return s.str().substr(0, hex_digits);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

int physical_cores() {
  std::ifstream in("/proc/cpuinfo");
  std::set<std::pair<std::string, std::string>> cores;
  std::string line, phys = "0";
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, line.find_last_not_of(" \t", colon - 1) + 1);
    const std::string value = colon + 2 <= line.size() ? line.substr(colon + 2) : "";
    if (key == "physical id") phys = value;
    if (key == "core id") cores.emplace(phys, value);
  }
  if (!cores.empty()) return static_cast<int>(cores.size());
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

int default_workers() { return std::max(1, physical_cores() / 2); }

// ---------------------------------------------------------------------------

CaseStore::CaseStore(fs::path data_root) : root_(std::move(data_root)) {
  fs::create_directories(root_ / "cases");
  for (const auto& entry : fs::directory_iterator(root_ / "cases")) {
    const fs::path rec = entry.path() / "case.json";
    if (!fs::exists(rec)) continue;
    try {
      std::ifstream in(rec);
      CaseRecord r = record_from_json(json::parse(in));
      if (r.status == CaseStatus::Running) {
        r.status = CaseStatus::Failed;
        r.error_stage = "service";
        r.error_message = "interrupted by a service restart";
        persist(r);
      }
      cases_[r.id] = r;
    } catch (const std::exception& e) {
      spdlog::warn("skipping case record {}: {}", rec.string(), e.what());
    }
  }
  spdlog::info("data root {} with {} case(s)", root_.string(), cases_.size());
}

std::string CaseStore::create(const std::vector<MultipartPart>& parts) {
  std::map<std::string, const MultipartPart*> by_name;
  for (const auto& p : parts) {
    if (!upload_fields().count(p.name)) throw FormatError("unexpected upload field '" + p.name + "'");
    if (by_name.count(p.name)) throw FormatError("duplicate upload field '" + p.name + "'");
    by_name[p.name] = &p;
  }
  for (const auto& f : kRequiredUploads)
    if (!by_name.count(f)) throw FormatError("missing upload field '" + f + "'");
  const bool has_fixed = by_name.count("landmarks_fixed"), has_moving = by_name.count("landmarks_moving");
  if (has_fixed != has_moving) throw FormatError("landmarks_fixed and landmarks_moving must be uploaded together");

  const std::string id = random_id();
  const fs::path staging = root_ / "staging" / id;
  fs::create_directories(staging);
  try {
    for (const auto& [name, part] : by_name) write_file(staging / upload_fields().at(name), part->body);
    const auto check = [&](const char* what, auto&& load) {
      try {
        return load();
      } catch (const std::exception& e) {
        throw FormatError(std::string(what) + ": " + e.what());
      }
    };
    const Volume ct = check("ct", [&] { return load_volume(staging / CaseFiles::ct); });
    const Volume mri = check("mri", [&] { return load_volume(staging / CaseFiles::mri); });
    const LabelMap ct_seg = check("ct_seg", [&] { return load_labels(staging / CaseFiles::ct_seg); });
    const LabelMap mri_seg = check("mri_seg", [&] { return load_labels(staging / CaseFiles::mri_seg); });
    if (!ct.geometry().matches(ct_seg.geometry())) throw FormatError("ct_seg does not share the CT lattice");
    if (!mri.geometry().matches(mri_seg.geometry())) throw FormatError("mri_seg does not share the MRI lattice");
    if (by_name.count("ct_seg_secondary")) {
      const LabelMap sec =
          check("ct_seg_secondary", [&] { return load_labels(staging / CaseFiles::ct_seg_secondary); });
      if (!ct.geometry().matches(sec.geometry())) throw FormatError("ct_seg_secondary does not share the CT lattice");
    }
    if (has_fixed) {
      check("landmarks_fixed", [&] { return load_landmarks(staging / CaseFiles::landmarks_fixed); });
      check("landmarks_moving", [&] { return load_landmarks(staging / CaseFiles::landmarks_moving); });
    }
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }

  CaseRecord r{id, utc_now(), CaseStatus::Pending, {}, {}, {}};
  fs::rename(staging, case_dir(id));
  persist(r);
  std::lock_guard lock(mu_);
  cases_[id] = r;
  spdlog::info("case {} created", id);
  return id;
}

std::optional<CaseRecord> CaseStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = cases_.find(id);
  if (it == cases_.end()) return std::nullopt;
  return it->second;
}

std::vector<CaseRecord> CaseStore::list() const {
  std::lock_guard lock(mu_);
  std::vector<CaseRecord> out;
  for (const auto& [id, r] : cases_) out.push_back(r);
  return out;
}

json CaseStore::describe(const CaseRecord& r) const {
  json j = record_json(r);
  json files = json::object();
  for (const auto& [field, name] : upload_fields())
    if (fs::exists(case_dir(r.id) / name)) files[field] = name;
  json artifacts = json::array();
  for (const char* name : {ArtifactFiles::fused_seg, ArtifactFiles::affine, ArtifactFiles::field,
                           ArtifactFiles::trace, ArtifactFiles::mri_registered, ArtifactFiles::mri_seg_registered,
                           ArtifactFiles::model_labels, ArtifactFiles::model, ArtifactFiles::report})
    if (fs::exists(out_dir(r.id) / name)) artifacts.push_back(name);
  j["files"] = files;
  j["artifacts"] = artifacts;
  return j;
}

bool CaseStore::begin_run(const std::string& id, const std::string& job_id) {
  std::lock_guard lock(mu_);
  auto it = cases_.find(id);
  if (it == cases_.end()) return false;
  CaseRecord& r = it->second;
  if (r.status == CaseStatus::Running || r.status == CaseStatus::Done) return false;
  if (r.status == CaseStatus::Failed) {
    r.status = CaseStatus::Pending;
    r.error_stage.reset();
    r.error_message.reset();
  }
  r.status = CaseStatus::Running;
  r.last_job = job_id;
  persist(r);
  return true;
}

void CaseStore::finish_run(const std::string& id, bool ok, const std::string& stage, const std::string& message) {
  std::lock_guard lock(mu_);
  auto it = cases_.find(id);
  if (it == cases_.end()) return;
  CaseRecord& r = it->second;
  r.status = ok ? CaseStatus::Done : CaseStatus::Failed;
  if (!ok) {
    r.error_stage = stage;
    r.error_message = message;
  }
  persist(r);
}

void CaseStore::persist(const CaseRecord& r) const {
  const fs::path tmp = case_dir(r.id) / "case.json.tmp";
  write_file(tmp, record_json(r).dump(2) + "\n");
  fs::rename(tmp, case_dir(r.id) / "case.json");
}

// ---------------------------------------------------------------------------

struct JobManager::Job {
  std::string id;
  std::string case_id;
  PipelineConfig cfg;
  std::atomic<bool> cancel{false};

  // Guarded by JobManager::mu_.
  JobStatus status = JobStatus::Queued;
  std::string stage;
  int iteration = 0;
  std::string submitted, started, finished;
  TimingReport timing;
  Stopwatch since_stage;
  Stopwatch since_start;
  json metrics = nullptr;
  std::optional<std::pair<std::string, std::string>> error;
};

JobManager::JobManager(CaseStore& store, int workers) : store_(store) {
  for (int i = 0; i < std::max(1, workers); ++i) threads_.emplace_back([this] { worker(); });
}

JobManager::~JobManager() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    for (auto& [id, job] : jobs_) job->cancel = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::optional<std::string> JobManager::submit(const std::string& case_id, const PipelineConfig& cfg) {
  auto job = std::make_shared<Job>();
  job->id = random_id();
  job->case_id = case_id;
  job->cfg = cfg;
  job->submitted = utc_now();
  if (!store_.begin_run(case_id, job->id)) return std::nullopt;
  {
    std::lock_guard lock(mu_);
    jobs_[job->id] = job;
    queue_.push_back(job);
  }
  cv_.notify_one();
  spdlog::info("job {} queued for case {}", job->id, case_id);
  return job->id;
}

std::optional<json> JobManager::describe(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  const Job& j = *it->second;
  json stages = json::array();
  for (const auto& [name, secs] : j.timing.stages) stages.push_back({{"stage", name}, {"seconds", secs}});
  const bool active = j.status == JobStatus::Running;
  return json{{"job_id", j.id},
              {"case_id", j.case_id},
              {"status", to_string(j.status)},
              {"stage", j.stage.empty() ? json(nullptr) : json(j.stage)},
              {"iteration", j.iteration},
              {"iterations", j.cfg.reg.iterations},
              {"submitted", j.submitted},
              {"started", j.started.empty() ? json(nullptr) : json(j.started)},
              {"finished", j.finished.empty() ? json(nullptr) : json(j.finished)},
              {"timing",
               {{"stages", stages},
                {"total_seconds", active ? j.since_start.seconds() : j.timing.total}}},
              {"metrics", j.metrics},
              {"error", j.error ? json{{"stage", j.error->first}, {"message", j.error->second}} : json(nullptr)}};
}

bool JobManager::cancel(const std::string& job_id) {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return false;
  Job& j = *it->second;
  if (j.status != JobStatus::Queued && j.status != JobStatus::Running) return false;
  j.cancel = true;
  return true;
}

void JobManager::worker() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = queue_.front();
      queue_.pop_front();
    }
    run(*job);
  }
}

void JobManager::run(Job& job) {
  {
    std::lock_guard lock(mu_);
    job.status = JobStatus::Running;
    job.started = utc_now();
    job.since_start = Stopwatch();
  }
  PipelineCallbacks cb;
  cb.control.cancel = &job.cancel;
  cb.control.on_iteration = [&](const TraceEntry& t) {
    std::lock_guard lock(mu_);
    job.iteration = t.s + 1;
  };
  cb.on_stage = [&](const std::string& s) {
    std::lock_guard lock(mu_);
    if (!job.stage.empty()) job.timing.add(job.stage, job.since_stage.seconds());
    job.stage = s;
    job.since_stage = Stopwatch();
  };

  JobStatus status = JobStatus::Done;
  std::optional<std::pair<std::string, std::string>> error;
  json metrics = nullptr;
  std::optional<TimingReport> timing;
  try {
    const EvaluationReport report = run_pipeline(store_.case_dir(job.case_id), store_.out_dir(job.case_id), job.cfg, cb);
    json dsc = json::object();
    for (const auto& d : report.dice) dsc[d.structure] = d.value;
    metrics = {{"dsc", dsc}};
    timing = report.timing;
    if (report.tre) metrics["tre_mean_mm"] = report.tre->cohort_mean_mm;
    for (const char* k : {"tre_initial_mm", "tre_affine_mm"})
      if (report.extras.contains(k)) metrics[k] = report.extras[k];
  } catch (const Cancelled&) {
    status = JobStatus::Cancelled;
    error = {job.stage, "cancelled"};
  } catch (const PipelineError& e) {
    status = JobStatus::Failed;
    error = {e.stage(), e.what()};
  } catch (const std::exception& e) {
    status = JobStatus::Failed;
    error = {job.stage.empty() ? "service" : job.stage, e.what()};
  }

  // The case record goes first so a finished job always has its artifacts visible.
  store_.finish_run(job.case_id, !error, error ? error->first : "", error ? error->second : "");
  {
    std::lock_guard lock(mu_);
    if (timing) {
      job.timing = *timing;
    } else {
      if (!job.stage.empty()) job.timing.add(job.stage, job.since_stage.seconds());
      job.timing.total = job.since_start.seconds();
    }
    job.status = status;
    job.finished = utc_now();
    job.metrics = metrics;
    job.error = error;
  }
  if (error)
    spdlog::warn("job {} {}: {} ({})", job.id, to_string(status), error->second, error->first);
  else
    spdlog::info("job {} done in {:.1f} s", job.id, job.timing.total);
}

}  // namespace spinesim::service
