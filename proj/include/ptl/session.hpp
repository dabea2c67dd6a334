#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptl/datagen.hpp"
#include "ptl/manifest.hpp"
#include "ptl/quest.hpp"

namespace ptl {

enum class Side { Left, Right };
std::string to_string(Side s);
Side parse_side(const std::string& s);

enum class SessionStatus { Calibrating, Running, Finished };
std::string to_string(SessionStatus s);

class SessionError : public std::runtime_error {
 public:
  enum class Kind { NotFound, Conflict, Invalid };
  SessionError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct SessionConfig {
  int images_per_session = 15;
  int trials_per_direction = 20;
  int calibration_trials = 20;  // split evenly over both directions
  double prior_mean = 0.3;      // stops, QUEST prior on the threshold magnitude
  double prior_sd = 1.0;        // log2 units: one sd is a factor of two
  double display_seconds = 5.0;
  QuestConfig quest;

  void validate() const;
  nlohmann::json to_json() const;
  static SessionConfig from_json(const nlohmann::json& j);
};

/// Images available to sessions, keyed by id.
class ImageLibrary {
 public:
  ImageLibrary() = default;
  explicit ImageLibrary(std::vector<DatasetItem> items);

  const DatasetItem& get(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  std::vector<std::string> ids() const;
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<DatasetItem> items_;
  std::map<std::string, std::size_t> index_;
};

/// A rendered trial. correct_side, x and direction never leave the server
/// before the response arrives; public_json() omits them.
struct StimulusPresentation {
  std::string trial_id;
  RgbImage left, right;
  BinaryMask mask;
  Side correct_side = Side::Left;
  double x = 0.0;
  Direction direction = Direction::Pos;
  double deadline_seconds = 5.0;
  bool calibration = false;
  int image_index = 0;  // position in the queue, calibration image is 0
  int images_total = 0;

  nlohmann::json public_json() const;
};

struct ImageState {
  std::string image_id;
  bool calibration = false;
  int quota_neg = 0, quota_pos = 0;
  int done_neg = 0, done_pos = 0;
  QuestState neg, pos;

  bool done() const { return done_neg >= quota_neg && done_pos >= quota_pos; }
};

struct PendingTrial {
  std::string trial_id;
  int image_index = 0;
  Direction direction = Direction::Pos;
  double x = 0.0;
  Side correct_side = Side::Left;
};

/// One observer's run through a calibration image and its image sample. All
/// state changes are events; replaying them reproduces the session exactly.
class Session {
 public:
  /// Prepends `calibration_image` to `images`. Throws SessionError(Invalid)
  /// for unknown or duplicate images or a sample of the wrong size.
  static Session create(const std::string& session_id, const std::string& observer_id,
                        const std::vector<std::string>& images, const std::string& calibration_image,
                        const ImageLibrary& library, const SessionConfig& config, std::uint64_t seed);
  /// Rebuilds a session from its event log.
  static Session replay(std::span<const nlohmann::json> events);

  /// Serves the pending trial again, or draws the next one. Throws
  /// SessionError(Conflict) once finished.
  StimulusPresentation next_trial(const ImageLibrary& library);
  /// Records the choice. Throws SessionError(Conflict) for a duplicate and
  /// SessionError(NotFound) for an unknown trial id.
  TrialLogRecord submit_response(const std::string& trial_id, Side chosen, double timestamp);
  /// Weibull fits per image-direction, calibration excluded. Throws
  /// SessionError(Conflict) unless finished.
  std::vector<FitRecord> finalize() const;

  const std::string& id() const { return session_id_; }
  const std::string& observer_id() const { return observer_id_; }
  SessionStatus status() const;
  const std::vector<ImageState>& images() const { return images_; }
  const std::vector<TrialLogRecord>& trial_log() const { return log_; }
  const std::optional<PendingTrial>& pending() const { return pending_; }
  const SessionConfig& config() const { return config_; }
  int current_image() const { return current_; }

  /// Events appended since construction (the full log after replay).
  const std::vector<nlohmann::json>& events() const { return events_; }
  nlohmann::json status_json() const;

 private:
  void apply(const nlohmann::json& event);
  void record(nlohmann::json event);
  StimulusPresentation render(const PendingTrial& t, const ImageLibrary& library) const;

  std::string session_id_, observer_id_;
  SessionConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<ImageState> images_;
  int current_ = 0;
  int trial_counter_ = 0;
  std::optional<PendingTrial> pending_;
  std::vector<std::string> answered_;
  std::vector<TrialLogRecord> log_;
  std::vector<nlohmann::json> events_;
};

/// Pools fitted thresholds for one image: outlier removal at 3 SD, then a
/// bootstrap of the mean. Throws DataError when a direction has no fit.
ThresholdPair pool_thresholds(std::span<const FitRecord> fits, const std::string& image_id, int n_bootstrap,
                              std::uint64_t seed);
/// pool_thresholds for every image with fits in both directions, sorted by id.
std::vector<ThresholdRow> pool_all(std::span<const FitRecord> fits, int n_bootstrap, std::uint64_t seed);

/// Fits every observer-image-direction group of a trial log (calibration rows
/// skipped); unfittable groups are flagged.
std::vector<FitRecord> fit_trial_log(std::span<const TrialLogRecord> rows);

/// Answers every trial of a session with a simulated 2AFC observer.
/// `observer_for` maps (image id, direction) to that observer's Weibull.
using ObserverModel = std::function<PsychometricParams(const std::string& image_id, Direction direction)>;
void run_simulated_session(Session& session, const ImageLibrary& library, const ObserverModel& observer_for, Rng& rng);

/// Thread-safe collection of sessions backed by one append-only JSONL file per
/// session. Operations on one session are serialized.
class SessionStore {
 public:
  /// Empty `dir` keeps everything in memory. Existing logs are replayed.
  SessionStore(ImageLibrary library, SessionConfig config, std::string calibration_image, std::filesystem::path dir,
               std::uint64_t seed);

  /// Draws `images_per_session` images (excluding the calibration image)
  /// when `images` is empty.
  std::string create(const std::string& observer_id, std::vector<std::string> images = {});
  StimulusPresentation next_trial(const std::string& session_id);
  TrialLogRecord submit_response(const std::string& session_id, const std::string& trial_id, Side chosen,
                                 double timestamp);
  nlohmann::json status(const std::string& session_id) const;
  /// Fits of every finished session.
  std::vector<FitRecord> all_fits() const;
  std::vector<std::string> session_ids() const;
  const ImageLibrary& library() const { return library_; }

 private:
  struct Entry {
    mutable std::mutex mutex;
    Session session;
    std::size_t persisted = 0;  // events already on disk
    mutable std::optional<std::vector<FitRecord>> fits;
  };
  Entry& entry(const std::string& session_id) const;
  void persist(Entry& e);

  ImageLibrary library_;
  SessionConfig config_;
  std::string calibration_image_;
  std::filesystem::path dir_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::unique_ptr<Entry>> sessions_;
};

}  // namespace ptl
