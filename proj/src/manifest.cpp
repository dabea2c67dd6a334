#include "ptl/manifest.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ptl/error.hpp"
#include "ptl/image_io.hpp"

namespace ptl {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw DataError("bad number '" + s + "' in " + what);
  return v;
}

std::optional<double> parse_optional(const std::string& s, const std::string& what) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, what);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void check_field(const std::string& s, const char* what) {
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
    throw std::invalid_argument(std::string(what) + " may not contain commas or newlines: " + s);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw DataError("bad boolean '" + s + "' in " + what);
}

}  // namespace

std::string to_string(Direction d) { return d == Direction::Neg ? "neg" : "pos"; }

Direction parse_direction(const std::string& s) {
  if (s == "neg" || s == "-") return Direction::Neg;
  if (s == "pos" || s == "+") return Direction::Pos;
  throw DataError("unknown direction '" + s + "'");
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError(path.string() + ": empty file");
  auto cols = split(trim(line));
  for (auto& c : cols) c = trim(c);
  if (cols.size() < header.size() || !std::equal(header.begin(), header.end(), cols.begin()))
    throw DataError(path.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line);
    for (auto& v : fields) v = trim(v);
    if (fields.size() < header.size())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " fields");
    fields.resize(header.size());
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::vector<ManifestEntry> out;
  for (auto& r : read_csv(path, {"image", "mask", "x_t_neg", "x_t_pos"})) {
    ManifestEntry e{r[0], r[1], parse_optional(r[2], path.string()), parse_optional(r[3], path.string())};
    if (e.x_t_neg.has_value() != e.x_t_pos.has_value())
      throw DataError(path.string() + ": " + e.image_path + " has only one threshold");
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  auto f = open_out(path);
  f << "image,mask,x_t_neg,x_t_pos\n";
  for (const auto& e : entries) {
    check_field(e.image_path, "image path");
    check_field(e.mask_path, "mask path");
    f << e.image_path << ',' << e.mask_path << ',' << (e.x_t_neg ? fmt(*e.x_t_neg) : "") << ','
      << (e.x_t_pos ? fmt(*e.x_t_pos) : "") << '\n';
  }
}

std::vector<DatasetItem> load_dataset(const fs::path& manifest_path) {
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<DatasetItem> items;
  for (const auto& e : read_manifest(manifest_path)) {
    DatasetItem item;
    item.id = e.id();
    item.image = read_png_rgb(resolve(e.image_path).string());
    item.mask = read_png_mask(resolve(e.mask_path).string());
    if (item.image.width != item.mask.width || item.image.height != item.mask.height)
      throw DataError(e.image_path + ": mask size differs from image size");
    if (e.x_t_neg) {
      item.thresholds = ThresholdPair::from_means(*e.x_t_neg, *e.x_t_pos);
      try {
        item.thresholds->validate();
      } catch (const std::invalid_argument&) {
        throw DataError(e.image_path + ": thresholds must satisfy x_t_neg < 0 < x_t_pos");
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

void save_dataset(const fs::path& dir, const std::vector<DatasetItem>& items) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<ManifestEntry> entries;
  for (const auto& item : items) {
    const std::string img = "images/" + item.id + ".png", msk = "masks/" + item.id + ".png";
    write_png_rgb((dir / img).string(), item.image);
    write_png_mask((dir / msk).string(), item.mask);
    ManifestEntry e{img, msk, std::nullopt, std::nullopt};
    if (item.thresholds) {
      e.x_t_neg = item.thresholds->neg.mean;
      e.x_t_pos = item.thresholds->pos.mean;
    }
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.csv", entries);
}

std::string trial_log_header() { return "observer_id,image_id,direction,x,correct,timestamp"; }

std::string format_trial_row(const TrialLogRecord& r) {
  check_field(r.observer_id, "observer id");
  check_field(r.image_id, "image id");
  return r.observer_id + ',' + r.image_id + ',' + to_string(r.direction) + ',' + fmt(r.x) + ',' + (r.correct ? "1" : "0") +
         ',' + fmt(r.timestamp);
}

std::vector<TrialLogRecord> read_trial_log(const fs::path& path) {
  std::vector<TrialLogRecord> out;
  for (auto& r : read_csv(path, {"observer_id", "image_id", "direction", "x", "correct", "timestamp"})) {
    TrialLogRecord t{r[0], r[1], parse_direction(r[2]), parse_double(r[3], path.string()), parse_bool(r[4], path.string()),
                     r[5].empty() ? 0.0 : parse_double(r[5], path.string())};
    if (!std::isfinite(t.x)) throw DataError(path.string() + ": non-finite stimulus");
    out.push_back(std::move(t));
  }
  return out;
}

void write_trial_log(const fs::path& path, const std::vector<TrialLogRecord>& rows) {
  auto f = open_out(path);
  f << trial_log_header() << '\n';
  for (const auto& r : rows) f << format_trial_row(r) << '\n';
}

std::vector<FitRecord> read_fit_table(const fs::path& path) {
  std::vector<FitRecord> out;
  for (auto& r : read_csv(path, {"observer_id", "image_id", "direction", "threshold", "beta", "n_trials", "status"})) {
    FitRecord f;
    f.observer_id = r[0];
    f.image_id = r[1];
    f.direction = parse_direction(r[2]);
    f.fitted = r[6] == "ok";
    if (!f.fitted && r[6] != "unfittable") throw DataError(path.string() + ": bad status '" + r[6] + "'");
    f.threshold = f.fitted ? parse_double(r[3], path.string()) : 0.0;
    f.beta = f.fitted ? parse_double(r[4], path.string()) : 0.0;
    f.n_trials = static_cast<int>(parse_double(r[5], path.string()));
    out.push_back(std::move(f));
  }
  return out;
}

void write_fit_table(const fs::path& path, const std::vector<FitRecord>& rows) {
  auto f = open_out(path);
  f << "observer_id,image_id,direction,threshold,beta,n_trials,status\n";
  for (const auto& r : rows) {
    check_field(r.observer_id, "observer id");
    check_field(r.image_id, "image id");
    f << r.observer_id << ',' << r.image_id << ',' << to_string(r.direction) << ',' << (r.fitted ? fmt(r.threshold) : "")
      << ',' << (r.fitted ? fmt(r.beta) : "") << ',' << r.n_trials << ',' << (r.fitted ? "ok" : "unfittable") << '\n';
  }
}

std::vector<ThresholdRow> read_threshold_table(const fs::path& path) {
  std::vector<ThresholdRow> out;
  const std::vector<std::string> header{"image_id",   "x_t_neg",     "x_t_pos",     "neg_ci_low",
                                        "neg_ci_high", "pos_ci_low", "pos_ci_high", "n_observers"};
  for (auto& r : read_csv(path, header)) {
    const auto num = [&](int i) { return parse_double(r[static_cast<std::size_t>(i)], path.string()); };
    ThresholdRow row;
    row.image_id = r[0];
    const int n = static_cast<int>(num(7));
    row.thresholds.neg = {num(1), num(3), num(4), n, 0};
    row.thresholds.pos = {num(2), num(5), num(6), n, 0};
    out.push_back(std::move(row));
  }
  return out;
}

void write_threshold_table(const fs::path& path, const std::vector<ThresholdRow>& rows) {
  auto f = open_out(path);
  f << "image_id,x_t_neg,x_t_pos,neg_ci_low,neg_ci_high,pos_ci_low,pos_ci_high,n_observers\n";
  for (const auto& r : rows) {
    check_field(r.image_id, "image id");
    const auto& t = r.thresholds;
    f << r.image_id << ',' << fmt(t.neg.mean) << ',' << fmt(t.pos.mean) << ',' << fmt(t.neg.ci_low) << ','
      << fmt(t.neg.ci_high) << ',' << fmt(t.pos.ci_low) << ',' << fmt(t.pos.ci_high) << ','
      << std::max(t.neg.n_observers, t.pos.n_observers) << '\n';
  }
}

}  // namespace ptl
