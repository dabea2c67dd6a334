#include "ptl/session.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ptl/error.hpp"
#include "ptl/image_io.hpp"

namespace ptl {

using nlohmann::json;

std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }

Side parse_side(const std::string& s) {
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw SessionError(SessionError::Kind::Invalid, "side must be 'left' or 'right', got '" + s + "'");
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Calibrating: return "calibrating";
    case SessionStatus::Running: return "running";
    case SessionStatus::Finished: return "finished";
  }
  return "unknown";
}

// ---------------------------------------------------------------- config

void SessionConfig::validate() const {
  if (images_per_session <= 0 || trials_per_direction <= 0 || calibration_trials < 2)
    throw std::invalid_argument("SessionConfig: counts must be positive (calibration at least 2)");
  if (!(prior_mean > 0.0) || !(prior_sd > 0.0) || !(display_seconds > 0.0)) throw std::invalid_argument("SessionConfig: bad prior or display time");
}

json SessionConfig::to_json() const {
  return {{"images_per_session", images_per_session},
          {"trials_per_direction", trials_per_direction},
          {"calibration_trials", calibration_trials},
          {"prior_mean", prior_mean},
          {"prior_sd", prior_sd},
          {"display_seconds", display_seconds},
          {"quest",
           {{"grid_min", quest.grid_min},
            {"grid_max", quest.grid_max},
            {"grid_size", quest.grid_size},
            {"assumed_beta", quest.assumed_beta},
            {"assumed_gamma", quest.assumed_gamma},
            {"assumed_alpha", quest.assumed_alpha},
            {"place_at_mean", quest.place_at_mean}}}};
}

SessionConfig SessionConfig::from_json(const json& j) {
  SessionConfig c;
  c.images_per_session = j.value("images_per_session", c.images_per_session);
  c.trials_per_direction = j.value("trials_per_direction", c.trials_per_direction);
  c.calibration_trials = j.value("calibration_trials", c.calibration_trials);
  c.prior_mean = j.value("prior_mean", c.prior_mean);
  c.prior_sd = j.value("prior_sd", c.prior_sd);
  c.display_seconds = j.value("display_seconds", c.display_seconds);
  if (j.contains("quest")) {
    const auto& q = j["quest"];
    c.quest.grid_min = q.value("grid_min", c.quest.grid_min);
    c.quest.grid_max = q.value("grid_max", c.quest.grid_max);
    c.quest.grid_size = q.value("grid_size", c.quest.grid_size);
    c.quest.assumed_beta = q.value("assumed_beta", c.quest.assumed_beta);
    c.quest.assumed_gamma = q.value("assumed_gamma", c.quest.assumed_gamma);
    c.quest.assumed_alpha = q.value("assumed_alpha", c.quest.assumed_alpha);
    c.quest.place_at_mean = q.value("place_at_mean", c.quest.place_at_mean);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- library

ImageLibrary::ImageLibrary(std::vector<DatasetItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (!index_.emplace(items_[i].id, i).second) throw DataError("duplicate image id '" + items_[i].id + "'");
}

const DatasetItem& ImageLibrary::get(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw SessionError(SessionError::Kind::NotFound, "unknown image '" + id + "'");
  return items_[it->second];
}

std::vector<std::string> ImageLibrary::ids() const {
  std::vector<std::string> out;
  for (const auto& item : items_) out.push_back(item.id);
  return out;
}

json StimulusPresentation::public_json() const {
  return {{"trial_id", trial_id},
          {"image_format", "png"},
          {"left", base64_encode(encode_png_rgb(left))},
          {"right", base64_encode(encode_png_rgb(right))},
          {"mask", base64_encode(encode_png_mask(mask))},
          {"deadline_seconds", deadline_seconds},
          {"calibration", calibration},
          {"image_index", image_index},
          {"images_total", images_total}};
}

// ---------------------------------------------------------------- session

Session Session::create(const std::string& session_id, const std::string& observer_id,
                        const std::vector<std::string>& images, const std::string& calibration_image,
                        const ImageLibrary& library, const SessionConfig& config, std::uint64_t seed) {
  config.validate();
  using K = SessionError::Kind;
  if (session_id.empty() || observer_id.empty()) throw SessionError(K::Invalid, "session and observer ids are required");
  if (observer_id.find_first_of(",\n") != std::string::npos)
    throw SessionError(K::Invalid, "observer id may not contain commas or newlines");
  if (static_cast<int>(images.size()) != config.images_per_session)
    throw SessionError(K::Invalid, "expected " + std::to_string(config.images_per_session) + " images, got " +
                                       std::to_string(images.size()));
  std::set<std::string> seen;
  std::vector<std::string> queue{calibration_image};
  for (const auto& id : images) {
    if (!seen.insert(id).second || id == calibration_image) throw SessionError(K::Invalid, "duplicate image '" + id + "'");
    queue.push_back(id);
  }
  for (const auto& id : queue)
    if (!library.contains(id)) throw SessionError(K::Invalid, "unknown image '" + id + "'");

  Session s;
  s.record({{"type", "created"},
            {"session_id", session_id},
            {"observer_id", observer_id},
            {"images", queue},
            {"seed", seed},
            {"config", config.to_json()}});
  return s;
}

Session Session::replay(std::span<const json> events) {
  if (events.empty() || events.front().value("type", "") != "created")
    throw DataError("session log must start with a 'created' event");
  Session s;
  for (const auto& e : events) s.record(e);
  return s;
}

void Session::record(json event) {
  apply(event);
  events_.push_back(std::move(event));
}

void Session::apply(const json& e) {
  const std::string type = e.at("type").get<std::string>();
  if (type == "created") {
    session_id_ = e.at("session_id").get<std::string>();
    observer_id_ = e.at("observer_id").get<std::string>();
    seed_ = e.at("seed").get<std::uint64_t>();
    config_ = SessionConfig::from_json(e.at("config"));
    const auto ids = e.at("images").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ImageState st;
      st.image_id = ids[i];
      st.calibration = i == 0;
      st.quota_neg = st.calibration ? config_.calibration_trials / 2 : config_.trials_per_direction;
      st.quota_pos = st.calibration ? config_.calibration_trials - st.quota_neg : config_.trials_per_direction;
      st.neg = st.pos = quest_init(config_.prior_mean, config_.prior_sd, config_.quest);
      images_.push_back(std::move(st));
    }
  } else if (type == "trial") {
    PendingTrial t;
    t.trial_id = e.at("trial_id").get<std::string>();
    t.image_index = e.at("image_index").get<int>();
    t.direction = parse_direction(e.at("direction").get<std::string>());
    t.x = e.at("x").get<double>();
    t.correct_side = parse_side(e.at("correct_side").get<std::string>());
    pending_ = t;
    ++trial_counter_;
  } else if (type == "response") {
    if (!pending_ || pending_->trial_id != e.at("trial_id").get<std::string>())
      throw DataError("session log: response without a matching trial");
    const PendingTrial t = *pending_;
    const bool correct = parse_side(e.at("chosen").get<std::string>()) == t.correct_side;
    auto& img = images_[static_cast<std::size_t>(t.image_index)];
    auto& state = t.direction == Direction::Neg ? img.neg : img.pos;
    state = quest_update(state, std::abs(t.x), correct);
    ++(t.direction == Direction::Neg ? img.done_neg : img.done_pos);
    TrialLogRecord row;
    row.observer_id = observer_id_;
    row.image_id = img.calibration ? TrialLogRecord::kCalibrationPrefix + img.image_id : img.image_id;
    row.direction = t.direction;
    row.x = t.x;
    row.correct = correct;
    row.timestamp = e.at("timestamp").get<double>();
    log_.push_back(std::move(row));
    answered_.push_back(t.trial_id);
    pending_.reset();
    while (current_ < static_cast<int>(images_.size()) && images_[static_cast<std::size_t>(current_)].done()) ++current_;
  } else {
    throw DataError("session log: unknown event type '" + type + "'");
  }
}

SessionStatus Session::status() const {
  if (current_ >= static_cast<int>(images_.size())) return SessionStatus::Finished;
  return current_ == 0 ? SessionStatus::Calibrating : SessionStatus::Running;
}

StimulusPresentation Session::render(const PendingTrial& t, const ImageLibrary& library) const {
  const auto& img = images_[static_cast<std::size_t>(t.image_index)];
  const DatasetItem& item = library.get(img.image_id);
  StimulusPresentation p;
  p.trial_id = t.trial_id;
  RgbImage shifted = apply_exposure_shift(item.image, item.mask, t.x);
  p.left = t.correct_side == Side::Left ? item.image : shifted;
  p.right = t.correct_side == Side::Left ? std::move(shifted) : item.image;
  p.mask = item.mask;
  p.correct_side = t.correct_side;
  p.x = t.x;
  p.direction = t.direction;
  p.deadline_seconds = config_.display_seconds;
  p.calibration = img.calibration;
  p.image_index = t.image_index;
  p.images_total = static_cast<int>(images_.size());
  return p;
}

StimulusPresentation Session::next_trial(const ImageLibrary& library) {
  if (status() == SessionStatus::Finished) throw SessionError(SessionError::Kind::Conflict, "session is finished");
  if (pending_) return render(*pending_, library);
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(trial_counter_)));
  const auto& img = images_[static_cast<std::size_t>(current_)];
  const int rem_neg = img.quota_neg - img.done_neg, rem_pos = img.quota_pos - img.done_pos;
  Direction d = Direction::Pos;
  if (rem_neg > 0 && rem_pos > 0)
    d = uniform01(rng) * (rem_neg + rem_pos) < rem_neg ? Direction::Neg : Direction::Pos;
  else if (rem_neg > 0)
    d = Direction::Neg;
  const double magnitude = quest_next(d == Direction::Neg ? img.neg : img.pos);
  const Side side = coin(rng) ? Side::Left : Side::Right;
  record({{"type", "trial"},
          {"trial_id", "t" + std::to_string(trial_counter_ + 1)},
          {"image_index", current_},
          {"direction", to_string(d)},
          {"x", direction_sign(d) * magnitude},
          {"correct_side", to_string(side)}});
  return render(*pending_, library);
}

TrialLogRecord Session::submit_response(const std::string& trial_id, Side chosen, double timestamp) {
  if (!pending_ || pending_->trial_id != trial_id) {
    if (std::find(answered_.begin(), answered_.end(), trial_id) != answered_.end())
      throw SessionError(SessionError::Kind::Conflict, "trial " + trial_id + " was already answered");
    throw SessionError(SessionError::Kind::NotFound, "no pending trial " + trial_id);
  }
  record({{"type", "response"}, {"trial_id", trial_id}, {"chosen", to_string(chosen)}, {"timestamp", timestamp}});
  return log_.back();
}

namespace {

FitRecord fit_group(const std::string& observer, const std::string& image, Direction d,
                    const std::vector<TrialRecord>& trials) {
  FitRecord r;
  r.observer_id = observer;
  r.image_id = image;
  r.direction = d;
  r.n_trials = static_cast<int>(trials.size());
  try {
    const auto p = fit_weibull(trials);
    r.threshold = direction_sign(d) * p.t;
    r.beta = p.beta;
    r.fitted = true;
  } catch (const DataError&) {
    r.fitted = false;
  } catch (const std::invalid_argument&) {
    r.fitted = false;
  }
  return r;
}

std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

std::vector<FitRecord> Session::finalize() const {
  if (status() != SessionStatus::Finished)
    throw SessionError(SessionError::Kind::Conflict, "session " + session_id_ + " is not finished");
  std::vector<FitRecord> out;
  for (const auto& img : images_) {
    if (img.calibration) continue;
    for (Direction d : {Direction::Neg, Direction::Pos}) {
      std::vector<TrialRecord> trials;
      for (const auto& row : log_)
        if (row.image_id == img.image_id && row.direction == d) trials.push_back({row.x, row.correct, 0.0});
      out.push_back(fit_group(observer_id_, img.image_id, d, trials));
    }
  }
  return out;
}

json Session::status_json() const {
  int done = 0, total = 0;
  for (const auto& img : images_) {
    done += img.done_neg + img.done_pos;
    total += img.quota_neg + img.quota_pos;
  }
  return {{"session_id", session_id_},
          {"observer_id", observer_id_},
          {"status", to_string(status())},
          {"current_image", current_},
          {"images_total", images_.size()},
          {"trials_done", done},
          {"trials_total", total},
          {"pending_trial", pending_ ? json(pending_->trial_id) : json(nullptr)}};
}

// ---------------------------------------------------------------- pooling

ThresholdPair pool_thresholds(std::span<const FitRecord> fits, const std::string& image_id, int n_bootstrap,
                              std::uint64_t seed) {
  ThresholdPair out;
  for (Direction d : {Direction::Neg, Direction::Pos}) {
    std::vector<double> values;
    for (const auto& f : fits)
      if (f.fitted && f.image_id == image_id && f.direction == d) values.push_back(f.threshold);
    if (values.empty()) throw DataError("no fitted " + to_string(d) + " thresholds for image " + image_id);
    const auto kept = remove_outliers(values, 3.0);
    Rng rng(derive_seed(seed, stable_hash(image_id) + (d == Direction::Neg ? 0 : 1)));
    auto est = bootstrap_mean(kept, n_bootstrap, rng);
    est.n_observers = static_cast<int>(kept.size());
    (d == Direction::Neg ? out.neg : out.pos) = est;
  }
  return out;
}

std::vector<ThresholdRow> pool_all(std::span<const FitRecord> fits, int n_bootstrap, std::uint64_t seed) {
  std::map<std::string, std::pair<bool, bool>> have;
  for (const auto& f : fits)
    if (f.fitted) (f.direction == Direction::Neg ? have[f.image_id].first : have[f.image_id].second) = true;
  std::vector<ThresholdRow> rows;
  for (const auto& [id, h] : have)
    if (h.first && h.second) rows.push_back({id, pool_thresholds(fits, id, n_bootstrap, seed)});
  return rows;
}

std::vector<FitRecord> fit_trial_log(std::span<const TrialLogRecord> rows) {
  std::map<std::tuple<std::string, std::string, int>, std::vector<TrialRecord>> groups;
  for (const auto& r : rows) {
    if (r.is_calibration()) continue;
    groups[{r.observer_id, r.image_id, static_cast<int>(r.direction)}].push_back({r.x, r.correct, 0.0});
  }
  std::vector<FitRecord> out;
  for (const auto& [key, trials] : groups)
    out.push_back(fit_group(std::get<0>(key), std::get<1>(key), static_cast<Direction>(std::get<2>(key)), trials));
  return out;
}

void run_simulated_session(Session& session, const ImageLibrary& library, const ObserverModel& observer_for, Rng& rng) {
  double clock = 0.0;
  while (session.status() != SessionStatus::Finished) {
    const auto p = session.next_trial(library);
    const auto& img = session.images()[static_cast<std::size_t>(p.image_index)];
    const SimulatedObserver observer(observer_for(img.image_id, p.direction));
    const bool correct = observer.respond(p.x, rng);
    const Side other = p.correct_side == Side::Left ? Side::Right : Side::Left;
    clock += 1.0;
    session.submit_response(p.trial_id, correct ? p.correct_side : other, clock);
  }
}

// ---------------------------------------------------------------- store

SessionStore::SessionStore(ImageLibrary library, SessionConfig config, std::string calibration_image,
                           std::filesystem::path dir, std::uint64_t seed)
    : library_(std::move(library)),
      config_(config),
      calibration_image_(std::move(calibration_image)),
      dir_(std::move(dir)),
      seed_(seed) {
  config_.validate();
  if (!library_.contains(calibration_image_)) throw DataError("unknown calibration image '" + calibration_image_ + "'");
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir_))
    if (f.path().extension() == ".jsonl") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    std::vector<json> events;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) events.push_back(json::parse(line));
    auto e = std::make_unique<Entry>();
    e->session = Session::replay(events);
    e->persisted = events.size();
    const std::string id = e->session.id();
    sessions_.emplace(id, std::move(e));
    ++counter_;
  }
}

SessionStore::Entry& SessionStore::entry(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw SessionError(SessionError::Kind::NotFound, "unknown session '" + session_id + "'");
  return *it->second;
}

void SessionStore::persist(Entry& e) {
  const auto& events = e.session.events();
  if (!dir_.empty() && e.persisted < events.size()) {
    std::ofstream out(dir_ / (e.session.id() + ".jsonl"), std::ios::app);
    for (std::size_t i = e.persisted; i < events.size(); ++i) out << events[i].dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to session log for " + e.session.id());
  }
  e.persisted = events.size();
}

std::string SessionStore::create(const std::string& observer_id, std::vector<std::string> images) {
  std::unique_lock lock(mutex_);
  std::uint64_t session_seed = 0;
  std::string id;
  do {
    session_seed = derive_seed(seed_, counter_++);
    std::ostringstream os;
    os << 's' << std::hex << (session_seed >> 16);
    id = os.str();
  } while (sessions_.count(id));
  if (images.empty()) {
    for (const auto& i : library_.ids())
      if (i != calibration_image_) images.push_back(i);
    Rng rng(session_seed);
    std::shuffle(images.begin(), images.end(), rng);
    if (static_cast<int>(images.size()) < config_.images_per_session)
      throw SessionError(SessionError::Kind::Invalid, "library has too few images for a session");
    images.resize(static_cast<std::size_t>(config_.images_per_session));
  }
  auto e = std::make_unique<Entry>();
  e->session = Session::create(id, observer_id, images, calibration_image_, library_, config_, session_seed);
  persist(*e);
  sessions_.emplace(id, std::move(e));
  return id;
}

StimulusPresentation SessionStore::next_trial(const std::string& session_id) {
  Entry& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  auto p = e.session.next_trial(library_);
  persist(e);
  return p;
}

TrialLogRecord SessionStore::submit_response(const std::string& session_id, const std::string& trial_id, Side chosen,
                                             double timestamp) {
  Entry& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  auto row = e.session.submit_response(trial_id, chosen, timestamp);
  persist(e);
  return row;
}

json SessionStore::status(const std::string& session_id) const {
  Entry& e = entry(session_id);
  std::lock_guard lock(e.mutex);
  return e.session.status_json();
}

std::vector<FitRecord> SessionStore::all_fits() const {
  std::shared_lock lock(mutex_);
  std::vector<FitRecord> out;
  for (const auto& [id, e] : sessions_) {
    std::lock_guard l(e->mutex);
    if (e->session.status() != SessionStatus::Finished) continue;
    if (!e->fits) e->fits = e->session.finalize();
    out.insert(out.end(), e->fits->begin(), e->fits->end());
  }
  return out;
}

std::vector<std::string> SessionStore::session_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

}  // namespace ptl
