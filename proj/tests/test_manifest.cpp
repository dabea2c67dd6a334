#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "ptl/error.hpp"
#include "ptl/image_io.hpp"
#include "ptl/manifest.hpp"
#include "ptl/synthetic.hpp"

using namespace ptl;

TEST_CASE("PNG encode and decode round trip") {
  Rng rng(1);
  RgbImage img(5, 3);
  for (auto& v : img.data) v = uniform01(rng);
  const RgbImage q = quantize_8bit(img);
  const RgbImage back = decode_png_rgb(encode_png_rgb(q));
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  for (std::size_t i = 0; i < q.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(q.data[i]).epsilon(1e-12));
  CHECK_THROWS_AS(decode_png_rgb("not a png"), DataError);
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_encode("fo") == "Zm8=");
}

TEST_CASE("dataset save and load round trip") {
  const auto dir = ptl::test::temp_dir("dataset");
  SyntheticConfig c;
  c.count = 3;
  c.size = 16;
  auto items = generate_synthetic_dataset(c);
  items[2].thresholds.reset();
  save_dataset(dir, items);
  const auto back = load_dataset(dir / "manifest.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == items[i].id);
    CHECK(back[i].image.data == items[i].image.data);
    CHECK(back[i].mask.data == items[i].mask.data);
  }
  REQUIRE(back[0].thresholds);
  CHECK(back[0].thresholds->neg.mean == items[0].thresholds->neg.mean);
  CHECK_FALSE(back[2].thresholds);
}

TEST_CASE("manifest errors are data errors") {
  const auto dir = ptl::test::temp_dir("badmanifest");
  CHECK_THROWS_AS(load_dataset(dir / "missing.csv"), DataError);
  std::ofstream(dir / "wrong_header.csv") << "img,mask\n";
  CHECK_THROWS_AS(read_manifest(dir / "wrong_header.csv"), DataError);
  std::ofstream(dir / "missing_file.csv") << "image,mask,x_t_neg,x_t_pos\nnope.png,nope_mask.png,,\n";
  CHECK_THROWS_AS(load_dataset(dir / "missing_file.csv"), DataError);
  SyntheticConfig c;
  c.count = 1;
  c.size = 16;
  save_dataset(dir, generate_synthetic_dataset(c));
  std::ofstream(dir / "bad_thresholds.csv") << "image,mask,x_t_neg,x_t_pos\nimages/syn0000.png,masks/syn0000.png,0.2,0.3\n";
  CHECK_THROWS_AS(load_dataset(dir / "bad_thresholds.csv"), DataError);
  write_png_mask((dir / "small_mask.png").string(), BinaryMask(8, 8));
  std::ofstream(dir / "size.csv") << "image,mask,x_t_neg,x_t_pos\nimages/syn0000.png,small_mask.png,,\n";
  CHECK_THROWS_AS(load_dataset(dir / "size.csv"), DataError);
}

TEST_CASE("trial log, fit table and threshold table round trips") {
  const auto dir = ptl::test::temp_dir("tables");
  std::vector<TrialLogRecord> trials = {{"o1", "calibration:img", Direction::Pos, 0.3, true, 1.5},
                                        {"o1", "img", Direction::Neg, -0.25, false, 2.5}};
  write_trial_log(dir / "t.csv", trials);
  const auto t = read_trial_log(dir / "t.csv");
  REQUIRE(t.size() == 2);
  CHECK(t[0].is_calibration());
  CHECK_FALSE(t[1].is_calibration());
  CHECK(t[1].direction == Direction::Neg);
  CHECK(t[1].x == -0.25);
  CHECK(t[1].correct == false);
  CHECK(t[1].timestamp == 2.5);

  std::vector<FitRecord> fits = {{"o1", "img", Direction::Neg, -0.31, 3.2, 20, true},
                                 {"o1", "img", Direction::Pos, 0.0, 0.0, 20, false}};
  write_fit_table(dir / "f.csv", fits);
  const auto f = read_fit_table(dir / "f.csv");
  REQUIRE(f.size() == 2);
  CHECK(f[0].threshold == -0.31);
  CHECK(f[0].fitted);
  CHECK_FALSE(f[1].fitted);

  ThresholdPair p = ThresholdPair::from_means(-0.2, 0.3);
  p.neg.ci_low = -0.25;
  p.pos.ci_high = 0.4;
  p.pos.n_observers = 7;
  write_threshold_table(dir / "th.csv", {{"img", p}});
  const auto th = read_threshold_table(dir / "th.csv");
  REQUIRE(th.size() == 1);
  CHECK(th[0].thresholds.neg.mean == -0.2);
  CHECK(th[0].thresholds.neg.ci_low == -0.25);
  CHECK(th[0].thresholds.pos.ci_high == 0.4);
  CHECK(th[0].thresholds.pos.n_observers == 7);
}

TEST_CASE("direction parsing") {
  CHECK(parse_direction("neg") == Direction::Neg);
  CHECK(parse_direction("+") == Direction::Pos);
  CHECK_THROWS(parse_direction("up"));
}
