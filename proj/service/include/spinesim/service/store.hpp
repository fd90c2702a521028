#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "spinesim/pipeline.hpp"
#include "spinesim/service/multipart.hpp"

namespace spinesim::service {

enum class CaseStatus { Pending, Running, Done, Failed };
std::string to_string(CaseStatus s);

struct CaseRecord {
  std::string id;
  std::string created;
  CaseStatus status = CaseStatus::Pending;
  std::optional<std::string> last_job;
  std::optional<std::string> error_stage;
  std::optional<std::string> error_message;
};

/// Upload fields and the case-directory file each one is stored as.
const std::map<std::string, std::string>& upload_fields();
inline const std::vector<std::string> kRequiredUploads = {"ct", "mri", "ct_seg", "mri_seg"};

/// Cases persisted under <data_root>/cases/<id>/ with inputs at the top level,
/// pipeline artifacts in out/ and the record in case.json.
class CaseStore {
 public:
  /// Loads existing records. Cases left running by a previous process become failed.
  explicit CaseStore(std::filesystem::path data_root);

  /// Validates the uploaded volumes (readable, image and segmentation on the
  /// same lattice) and persists a new case. Throws FormatError on bad input.
  std::string create(const std::vector<MultipartPart>& parts);

  std::optional<CaseRecord> get(const std::string& id) const;
  std::vector<CaseRecord> list() const;
  /// Record plus the input and artifact inventories of files that exist.
  nlohmann::json describe(const CaseRecord& r) const;

  std::filesystem::path case_dir(const std::string& id) const { return root_ / "cases" / id; }
  std::filesystem::path out_dir(const std::string& id) const { return case_dir(id) / "out"; }

  /// pending -> running, or failed -> pending -> running. False when the case
  /// is already running or done.
  bool begin_run(const std::string& id, const std::string& job_id);
  void finish_run(const std::string& id, bool ok, const std::string& stage = {}, const std::string& message = {});

 private:
  void persist(const CaseRecord& r) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, CaseRecord> cases_;
};

enum class JobStatus { Queued, Running, Done, Failed, Cancelled };
std::string to_string(JobStatus s);

/// Pipeline jobs on a fixed pool of worker threads.
class JobManager {
 public:
  JobManager(CaseStore& store, int workers);
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  /// Queues a pipeline run. Returns nullopt when the case is running or done.
  std::optional<std::string> submit(const std::string& case_id, const PipelineConfig& cfg);
  std::optional<nlohmann::json> describe(const std::string& job_id) const;
  /// False when the job is unknown or already finished.
  bool cancel(const std::string& job_id);
  int workers() const { return static_cast<int>(threads_.size()); }

 private:
  struct Job;
  void worker();
  void run(Job& job);

  CaseStore& store_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

/// Physical cores from /proc/cpuinfo, falling back to the hardware thread count.
int physical_cores();
int default_workers();

std::string random_id(std::size_t hex_digits = 12);
std::string utc_now();

}  // namespace spinesim::service
