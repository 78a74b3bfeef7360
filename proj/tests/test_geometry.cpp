#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "pseudosim/geometry.hpp"

using namespace pseudosim;

TEST_CASE("normalize_angle wraps into (-pi, pi]") {
  CHECK(normalize_angle(kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(-kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(3.0 * kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(0.5 + 4.0 * kPi) == doctest::Approx(0.5));
  CHECK(normalize_angle(-0.5 - 2.0 * kPi) == doctest::Approx(-0.5));
}

TEST_CASE("to_local and to_world are inverse rigid transforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 50.0), a(-4.0, 4.0);
  for (int i = 0; i < 200; ++i) {
    const Pose2D frame{u(rng), u(rng), a(rng)};
    const Pose2D p{u(rng), u(rng), a(rng)};
    const Pose2D back = to_world(frame, to_local(frame, p));
    CHECK(back.x == doctest::Approx(p.x).epsilon(1e-12));
    CHECK(back.y == doctest::Approx(p.y).epsilon(1e-12));
    CHECK(normalize_angle(back.heading - p.heading) == doctest::Approx(0.0).epsilon(1e-12));
    // distances are preserved
    const Vec2 q{u(rng), u(rng)};
    CHECK(distance(to_local(frame, q), to_local(frame, p.position())) == doctest::Approx(distance(q, p.position())));
  }
  const Vec2 l = to_local(Pose2D{1.0, 1.0, 0.5 * kPi}, Vec2{1.0, 3.0});
  CHECK(l.x == doctest::Approx(2.0));
  CHECK(l.y == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("OrientedBox corners and containment") {
  const OrientedBox b{{1.0, 2.0}, 0.5 * kPi, 4.0, 2.0};
  const auto c = b.corners();
  // front-left of a box pointing +y is (0, 4)
  CHECK(c[0].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c[0].y == doctest::Approx(4.0));
  for (int i = 0; i < 4; ++i) CHECK(cross(c[(i + 1) % 4] - c[i], c[(i + 2) % 4] - c[(i + 1) % 4]) > 0.0);
  CHECK(b.contains({1.0, 3.9}));
  CHECK_FALSE(b.contains({1.0, 4.1}));
  CHECK_FALSE(b.contains({2.1, 2.0}));
  const OrientedBox f = b.front_half();
  CHECK(f.length == 2.0);
  CHECK(f.center.y == doctest::Approx(3.0));
}

TEST_CASE("boxes_overlap agrees with a 1 cm sampled brute force") {
  std::mt19937_64 rng(2024);
  int overlapping = 0;
  for (int i = 0; i < 500; ++i) {
    const auto [a, b] = oracles::random_box_pair(rng);
    const bool fast = boxes_overlap(a, b);
    INFO("pair " << i);
    CHECK(fast == oracles::sampled_overlap(a, b));
    CHECK(fast == boxes_overlap(b, a));
    overlapping += fast;
  }
  // both outcomes are exercised
  CHECK(overlapping > 100);
  CHECK(overlapping < 400);
}

TEST_CASE("boxes_overlap: touching counts, separated does not") {
  const OrientedBox a{{0, 0}, 0.0, 4.0, 2.0};
  CHECK(boxes_overlap(a, {{4.0, 0.0}, 0.0, 4.0, 2.0}));
  CHECK_FALSE(boxes_overlap(a, {{4.01, 0.0}, 0.0, 4.0, 2.0}));
  // rotated square reaching into the gap between corners
  CHECK_FALSE(boxes_overlap(a, {{3.0, 2.0}, 0.25 * kPi, 1.0, 1.0}));
  CHECK(boxes_overlap(a, {{2.3, 1.2}, 0.25 * kPi, 1.0, 1.0}));
}

TEST_CASE("segments and boxes") {
  CHECK(segments_intersect({0, 0}, {2, 2}, {0, 2}, {2, 0}));
  CHECK_FALSE(segments_intersect({0, 0}, {1, 1}, {2, 2}, {3, 0}));
  CHECK(segments_intersect({0, 0}, {2, 0}, {1, 0}, {3, 0}));  // collinear overlap
  CHECK(segments_intersect({0, 0}, {1, 0}, {1, 0}, {1, 1}));  // shared endpoint
  const OrientedBox b{{0, 0}, 0.0, 2.0, 2.0};
  CHECK(segment_intersects_box({-5, 0}, {5, 0}, b));
  CHECK(segment_intersects_box({0, 0}, {0.1, 0.1}, b));  // fully inside
  CHECK_FALSE(segment_intersects_box({-5, 2}, {5, 2}, b));
}

TEST_CASE("Polygon containment and simplicity") {
  const Polygon square{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}};
  CHECK(square.contains({5, 5}));
  CHECK_FALSE(square.contains({11, 5}));
  CHECK(square.is_simple());
  const Polygon bow{{{0, 0}, {10, 10}, {10, 0}, {0, 10}}};
  CHECK_FALSE(bow.is_simple());
  const Polygon ell{{{0, 0}, {10, 0}, {10, 4}, {4, 4}, {4, 10}, {0, 10}}};
  CHECK(ell.is_simple());
  CHECK(ell.contains({2, 8}));
  CHECK_FALSE(ell.contains({8, 8}));
}

TEST_CASE("Polyline arc length, projection and interpolation") {
  const Polyline l({{0, 0}, {10, 0}, {10, 10}});
  CHECK(l.length() == 20.0);
  CHECK(l.point_at(15.0) == Vec2{10.0, 5.0});
  // linear extrapolation past either end
  CHECK(l.point_at(-3.0) == Vec2{-3.0, 0.0});
  CHECK(l.point_at(25.0) == Vec2{10.0, 15.0});

  auto p = l.project({4.0, 1.0});
  CHECK(p.s == doctest::Approx(4.0));
  CHECK(p.d == doctest::Approx(1.0));
  p = l.project({4.0, -1.0});
  CHECK(p.d == doctest::Approx(-1.0));
  // equidistant from both segments: smaller arc length wins
  p = l.project({12.0, -2.0});
  CHECK(p.s == doctest::Approx(10.0));
  // restricted window
  p = l.project({4.0, 1.0}, 12.0, 20.0);
  CHECK(p.s == doctest::Approx(12.0));

  // heading is continuous through the corner and ends at the segment values
  CHECK(l.heading_at(0.0) == doctest::Approx(0.0));
  CHECK(l.heading_at(20.0) == doctest::Approx(0.5 * kPi));
  double prev = l.heading_at(0.0);
  for (double s = 0.1; s <= 20.0; s += 0.1) {
    const double h = l.heading_at(s);
    CHECK(std::abs(h - prev) < 0.02);
    prev = h;
  }
  // quarter turn spread between the two segment midpoints
  CHECK(l.curvature_at(10.0) == doctest::Approx(0.5 * kPi / 10.0));
  CHECK(l.curvature_at(1.0) == doctest::Approx(l.curvature_at(10.0)));

  const Vec2 e = l.embed(4.0, 2.0);
  CHECK(e == Vec2{4.0, 2.0});
}
