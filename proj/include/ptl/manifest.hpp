#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ptl/datagen.hpp"

namespace ptl {

// Plain CSV files with a header row; fields never contain commas.

enum class Direction { Neg, Pos };

std::string to_string(Direction d);
Direction parse_direction(const std::string& s);
inline double direction_sign(Direction d) { return d == Direction::Neg ? -1.0 : 1.0; }

/// Dataset manifest row: image,mask,x_t_neg,x_t_pos (thresholds may be blank).
struct ManifestEntry {
  std::string image_path;  // relative to the manifest directory unless absolute
  std::string mask_path;
  std::optional<double> x_t_neg, x_t_pos;

  std::string id() const { return std::filesystem::path(image_path).stem().string(); }
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads every image and mask; DataError on missing files or size mismatch.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path);

/// Writes images/<id>.png, masks/<id>.png and manifest.csv under `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetItem>& items);

/// Trial log row: observer_id,image_id,direction,x,correct,timestamp.
/// Calibration trials carry an image id prefixed with "calibration:".
struct TrialLogRecord {
  std::string observer_id;
  std::string image_id;
  Direction direction = Direction::Pos;
  double x = 0.0;
  bool correct = false;
  double timestamp = 0.0;

  bool is_calibration() const { return image_id.rfind(kCalibrationPrefix, 0) == 0; }
  static constexpr const char* kCalibrationPrefix = "calibration:";
};

std::vector<TrialLogRecord> read_trial_log(const std::filesystem::path& path);
void write_trial_log(const std::filesystem::path& path, const std::vector<TrialLogRecord>& rows);
std::string trial_log_header();
std::string format_trial_row(const TrialLogRecord& r);

/// One fitted observer-image-direction threshold.
struct FitRecord {
  std::string observer_id;
  std::string image_id;
  Direction direction = Direction::Pos;
  double threshold = 0.0;  // signed, stops
  double beta = 0.0;
  int n_trials = 0;
  bool fitted = false;  // false: unfittable pair, threshold meaningless
};

std::vector<FitRecord> read_fit_table(const std::filesystem::path& path);
void write_fit_table(const std::filesystem::path& path, const std::vector<FitRecord>& rows);

/// Pooled per-image thresholds.
struct ThresholdRow {
  std::string image_id;
  ThresholdPair thresholds;
};

std::vector<ThresholdRow> read_threshold_table(const std::filesystem::path& path);
void write_threshold_table(const std::filesystem::path& path, const std::vector<ThresholdRow>& rows);

/// Helper used by all readers.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::vector<std::string>& header);

}  // namespace ptl
