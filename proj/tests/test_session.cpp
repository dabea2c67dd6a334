#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "ptl/error.hpp"
#include "session_fixture.hpp"

using namespace ptl;
using ptl::test::small_library;
using ptl::test::small_session_config;

namespace {

Session make_session(const ImageLibrary& lib, std::uint64_t seed = 5) {
  return Session::create("s1", "obs", {"syn0001", "syn0002"}, "syn0000", lib, small_session_config(), seed);
}

}  // namespace

TEST_CASE("session walks calibration then the sample with per-direction quotas") {
  const auto lib = small_library();
  auto s = make_session(lib);
  CHECK(s.status() == SessionStatus::Calibrating);
  REQUIRE(s.images().size() == 3);
  CHECK(s.images()[0].calibration);
  CHECK(s.images()[0].quota_neg == 2);
  CHECK(s.images()[0].quota_pos == 2);
  CHECK(s.images()[1].quota_neg == 6);
  Rng rng(1);
  int trials = 0;
  while (s.status() != SessionStatus::Finished) {
    const auto p = s.next_trial(lib);
    CHECK(p.x * direction_sign(p.direction) > 0.0);
    CHECK(p.images_total == 3);
    // Observers pick the original; the other side carries the shift.
    const auto& original = p.correct_side == Side::Left ? p.left : p.right;
    const auto& shifted = p.correct_side == Side::Left ? p.right : p.left;
    CHECK(original.data == lib.get(s.images()[p.image_index].image_id).image.data);
    CHECK(shifted.data != original.data);
    s.submit_response(p.trial_id, coin(rng) ? Side::Left : Side::Right, trials);
    ++trials;
  }
  CHECK(trials == 4 + 2 * 12);
  const auto& log = s.trial_log();
  CHECK(std::count_if(log.begin(), log.end(), [](const TrialLogRecord& r) { return r.is_calibration(); }) == 4);
  for (const auto& img : s.images()) {
    CHECK(img.done_neg == img.quota_neg);
    CHECK(img.done_pos == img.quota_pos);
  }
  CHECK_THROWS_AS(s.next_trial(lib), SessionError);
}

TEST_CASE("stimulus payload hides the answer") {
  const auto lib = small_library();
  auto s = make_session(lib);
  const auto j = s.next_trial(lib).public_json();
  for (const char* key : {"correct_side", "x", "direction", "threshold"}) CHECK_FALSE(j.contains(key));
  for (const char* key : {"trial_id", "left", "right", "mask", "deadline_seconds"}) CHECK(j.contains(key));
}

TEST_CASE("pending trials are re-served and answers are checked") {
  const auto lib = small_library();
  auto s = make_session(lib);
  const auto a = s.next_trial(lib);
  const auto b = s.next_trial(lib);
  CHECK(a.trial_id == b.trial_id);
  CHECK(a.x == b.x);
  CHECK_THROWS_AS(s.submit_response("t99", Side::Left, 0), SessionError);
  s.submit_response(a.trial_id, Side::Left, 0);
  try {
    s.submit_response(a.trial_id, Side::Left, 0);
    FAIL("duplicate accepted");
  } catch (const SessionError& e) {
    CHECK(e.kind() == SessionError::Kind::Conflict);
  }
  CHECK(s.trial_log().back().correct == (a.correct_side == Side::Left));
}

TEST_CASE("replaying the event log reproduces the session") {
  const auto lib = small_library();
  auto s = make_session(lib, 9);
  Rng rng(2);
  for (int i = 0; i < 9; ++i) {
    const auto p = s.next_trial(lib);
    s.submit_response(p.trial_id, coin(rng) ? Side::Left : Side::Right, i);
  }
  s.next_trial(lib);  // leave one pending
  const auto r = Session::replay(s.events());
  CHECK(r.status_json() == s.status_json());
  CHECK(r.trial_log().size() == s.trial_log().size());
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.images()[i].neg.log_posterior == s.images()[i].neg.log_posterior);
    CHECK(r.images()[i].pos.log_posterior == s.images()[i].pos.log_posterior);
  }
  REQUIRE(r.pending());
  CHECK(r.pending()->trial_id == s.pending()->trial_id);
}

TEST_CASE("session creation validates its inputs") {
  const auto lib = small_library();
  const auto c = small_session_config();
  CHECK_THROWS_AS(Session::create("s", "o", {"syn0001"}, "syn0000", lib, c, 1), SessionError);
  CHECK_THROWS_AS(Session::create("s", "o", {"syn0001", "nope"}, "syn0000", lib, c, 1), SessionError);
  CHECK_THROWS_AS(Session::create("s", "o", {"syn0001", "syn0001"}, "syn0000", lib, c, 1), SessionError);
  CHECK_THROWS_AS(Session::create("s", "o", {"syn0000", "syn0001"}, "syn0000", lib, c, 1), SessionError);
  CHECK_THROWS_AS(Session::create("s", "a,b", {"syn0001", "syn0002"}, "syn0000", lib, c, 1), SessionError);
}

TEST_CASE("finalize fits every image and direction except calibration") {
  const auto lib = small_library();
  auto s = make_session(lib);
  CHECK_THROWS_AS(s.finalize(), SessionError);
  Rng rng(3);
  run_simulated_session(s, lib, [](const std::string&, Direction) { return PsychometricParams{0.5, 0.75, 3.5, 0.3}; },
                        rng);
  const auto fits = s.finalize();
  CHECK(fits.size() == 4);
  for (const auto& f : fits) {
    CHECK(f.image_id != "syn0000");
    CHECK(f.n_trials == 6);
    if (f.fitted) CHECK(f.threshold * direction_sign(f.direction) > 0.0);
  }
}

TEST_CASE("pooling removes outliers and bootstraps the mean") {
  std::vector<FitRecord> fits;
  for (int i = 0; i < 20; ++i) {
    fits.push_back({"o" + std::to_string(i), "img", Direction::Neg, -0.3 - 0.001 * i, 3.5, 20, true});
    fits.push_back({"o" + std::to_string(i), "img", Direction::Pos, 0.4 + 0.001 * i, 3.5, 20, true});
  }
  fits.push_back({"outlier", "img", Direction::Pos, 3.0, 3.5, 20, true});
  fits.push_back({"bad", "img", Direction::Pos, 99.0, 0.0, 20, false});
  const auto t = pool_thresholds(fits, "img", 500, 1);
  CHECK(t.neg.mean == doctest::Approx(-0.3095).epsilon(0.01));
  CHECK(t.pos.mean == doctest::Approx(0.4095).epsilon(0.01));
  CHECK(t.pos.n_observers == 20);
  CHECK(t.pos.ci_low < t.pos.mean);
  CHECK(pool_thresholds(fits, "img", 500, 1).pos.mean == t.pos.mean);  // deterministic
  CHECK_THROWS_AS(pool_thresholds(fits, "other", 500, 1), DataError);
  const auto rows = pool_all(fits, 100, 1);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].image_id == "img");
}

TEST_CASE("store persists sessions and resumes them") {
  const auto dir = ptl::test::temp_dir("store");
  const auto lib = small_library();
  std::string id;
  std::string pending;
  {
    SessionStore store(lib, small_session_config(), "syn0000", dir, 3);
    id = store.create("alice");
    for (int i = 0; i < 5; ++i) {
      const auto p = store.next_trial(id);
      store.submit_response(id, p.trial_id, Side::Left, i);
    }
    pending = store.next_trial(id).trial_id;
  }
  SessionStore again(lib, small_session_config(), "syn0000", dir, 3);
  CHECK(again.session_ids() == std::vector<std::string>{id});
  CHECK(again.status(id)["trials_done"] == 5);
  CHECK(again.next_trial(id).trial_id == pending);
  CHECK_THROWS_AS(again.status("missing"), SessionError);
  CHECK(again.all_fits().empty());
  // Finish it and check fits appear.
  Rng rng(4);
  while (again.status(id)["status"] != "finished") {
    const auto p = again.next_trial(id);
    again.submit_response(id, p.trial_id, coin(rng) ? Side::Left : Side::Right, 0);
  }
  CHECK(again.all_fits().size() == 4);
}

TEST_CASE("store rejects an unknown calibration image") {
  CHECK_THROWS_AS(SessionStore(small_library(), small_session_config(), "nope", {}, 1), DataError);
}

TEST_CASE("fit_trial_log skips calibration rows") {
  const auto lib = small_library();
  auto s = make_session(lib);
  Rng rng(6);
  run_simulated_session(s, lib, [](const std::string&, Direction) { return PsychometricParams{0.5, 0.75, 3.5, 0.3}; },
                        rng);
  const auto fits = fit_trial_log(s.trial_log());
  CHECK(fits.size() == 4);
  for (const auto& f : fits) CHECK(f.image_id.rfind("calibration:", 0) == std::string::npos);
}
