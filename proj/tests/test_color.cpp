#include <doctest.h>

#include "helpers.hpp"
#include "ptl/color.hpp"

using namespace ptl;

TEST_CASE("sRGB to Lab matches reference values") {
  struct Case {
    double r, g, b, L, a, bb;
  };
  // Reference computed at 30 digits with the same primaries and white point.
  const Case cases[] = {
      {1, 1, 1, 100.0, 0.0, 0.0},
      {1, 0, 0, 53.240791833280888, 80.09246954480041, 67.203192536497274},
      {0, 1, 0, 87.73471889497407, -86.182701516121498, 83.179314540932577},
      {0, 0, 1, 32.297009322950471, 79.18752678434748, -107.8601645298382},
      {0.5, 0.5, 0.5, 53.388964741114306, 0.0, 0.0},
      {0.2, 0.4, 0.6, 42.008143662861589, -0.1516998626522291, -32.846039521948871},
      {0.01, 0.02, 0.03, 1.3000629818702068, -0.31224019041425269, -1.2000194855408425},
  };
  for (const auto& c : cases) {
    const Lab lab = srgb_to_lab(c.r, c.g, c.b);
    CHECK(lab.L == doctest::Approx(c.L).epsilon(1e-9));
    CHECK(lab.a == doctest::Approx(c.a).epsilon(1e-9).scale(1.0));
    CHECK(lab.b == doctest::Approx(c.bb).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("Lab round trip is exact to 1e-6 on a colour grid") {
  double worst = 0.0;
  for (int r = 0; r < 16; ++r)
    for (int g = 0; g < 16; ++g)
      for (int b = 0; b < 16; ++b) {
        const double in[3] = {r / 15.0, g / 15.0, b / 15.0};
        double out[3];
        lab_to_srgb(srgb_to_lab(in[0], in[1], in[2]), out);
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(out[c] - in[c]));
      }
  CHECK(worst < 1e-6);
}

TEST_CASE("exposure shift only touches masked pixels") {
  Rng rng(3);
  RgbImage img(9, 7);
  for (auto& v : img.data) v = uniform01(rng);
  BinaryMask mask(9, 7);
  for (int y = 2; y < 5; ++y)
    for (int x = 3; x < 7; ++x) mask.at(x, y) = 1;
  const RgbImage out = apply_exposure_shift(img, mask, 0.8);
  double inside_change = 0.0;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = std::abs(out.at(x, y, c) - img.at(x, y, c));
        if (mask.at(x, y))
          inside_change = std::max(inside_change, d);
        else
          CHECK(d < 1e-9);
      }
  CHECK(inside_change > 0.01);
}

TEST_CASE("exposure shift scales lightness by 2^x") {
  RgbImage img(1, 1);
  img.data = {0.3, 0.3, 0.3};
  BinaryMask mask(1, 1, 1);
  const Lab before = srgb_to_lab(0.3, 0.3, 0.3);
  const RgbImage out = apply_exposure_shift(img, mask, 1.0);
  const Lab after = srgb_to_lab(out.data[0], out.data[1], out.data[2]);
  CHECK(after.L == doctest::Approx(2.0 * before.L).epsilon(1e-6));
  CHECK(apply_exposure_shift(img, mask, 0.0).data[0] == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("exposure shift rejects bad input") {
  RgbImage img(4, 4, 0.5);
  CHECK_THROWS_AS(apply_exposure_shift(img, BinaryMask(3, 4), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(apply_exposure_shift(img, BinaryMask(4, 4), std::nan("")), std::invalid_argument);
}

TEST_CASE("shift_luminance clamps lightness") {
  LabImage lab(1, 1);
  lab.L[0] = 80.0;
  const auto out = shift_luminance(lab, BinaryMask(1, 1, 1), 2.0);
  CHECK(out.L[0] == 100.0);
}

TEST_CASE("standardize yields zero mean and unit variance") {
  Rng rng(5);
  RgbImage img(8, 8);
  for (auto& v : img.data) v = uniform01(rng);
  const auto t = standardize(img);
  CHECK(t.shape() == std::vector<int>{1, 3, 8, 8});
  double mean = 0.0, sq = 0.0;
  for (double v : t.values()) mean += v;
  mean /= t.size();
  for (double v : t.values()) sq += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0).scale(1.0));
  CHECK(sq / t.size() == doctest::Approx(1.0).epsilon(1e-9));
  const auto flat = standardize(RgbImage(4, 4, 0.5));
  for (double v : flat.values()) CHECK(v == 0.0);
  CHECK(standardize(img, 4).shape() == std::vector<int>{1, 3, 4, 4});
}

TEST_CASE("nearest resize of masks keeps labels binary") {
  BinaryMask m(4, 4);
  m.at(0, 0) = 1;
  const auto up = resize_nearest(m, 8, 8);
  CHECK(up.area() == 4);
  CHECK(up.at(1, 1) == 1);
}
