#include <doctest.h>

#include <cmath>
#include <random>

#include "stwd/error.hpp"
#include "stwd/random.hpp"
#include "stwd/spatial_design.hpp"

using namespace stwd;

namespace {

using Points = std::vector<std::array<double, 2>>;

// Direct double sum in long double.
double wd2_oracle(const Points& pts) {
  auto phi = [](long double x, long double y) {
    const long double d = std::abs(x - y);
    return 1.5L - d + d * d;
  };
  long double s = 0;
  for (const auto& p : pts)
    for (const auto& q : pts) s += phi(p[0], q[0]) * phi(p[1], q[1]);
  const auto n = static_cast<long double>(pts.size());
  return static_cast<double>(-16.0L / 9.0L + s / (n * n));
}

DesignPointSet shifted(const DesignPointSet& d, std::size_t epoch_shift, std::size_t unit_shift) {
  DesignPointSet out(d.epochs(), d.units(), d.budget());
  for (std::size_t k = 0; k < d.epochs(); ++k) {
    const std::size_t target = (k + epoch_shift) % d.epochs();
    std::vector<std::size_t> want;
    for (std::size_t j : d.selected(k)) want.push_back((j + unit_shift) % d.units());
    std::vector<std::size_t> have = out.selected(target);
    // Move the default selection onto the shifted one.
    for (std::size_t j : want) {
      if (out.contains(target, j)) continue;
      for (std::size_t h : out.selected(target)) {
        if (std::find(want.begin(), want.end(), h) == want.end()) {
          out.swap_in_column(target, h, j);
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("discrepancy closed forms") {
  CHECK(wd_phi(0.2, 0.7) == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(wd_phi(0.4, 0.4) == 1.5);
  std::mt19937_64 rng(201);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Points one{{u(rng), u(rng)}};
    CHECK(std::abs(wd2(one) - 17.0 / 36.0) <= 1e-12);
  }
  const Points bad{{1.2, 0.5}};
  CHECK_THROWS_AS(wd2(bad), InvalidArgument);
  CHECK_THROWS_AS(wd2(Points{}), InvalidArgument);
}

TEST_CASE("discrepancy matches the brute-force sum and is shift invariant") {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, 60);
  for (int rep = 0; rep < 50; ++rep) {
    Points pts(static_cast<std::size_t>(count(rng)));
    for (auto& p : pts) p = {u(rng), u(rng)};
    const double value = wd2(pts);
    CHECK(std::abs(value - wd2_oracle(pts)) <= 1e-12);
    Points moved = pts;
    for (auto& p : moved) p = {std::fmod(p[0] + 0.3, 1.0), std::fmod(p[1] + 0.3, 1.0)};
    CHECK(std::abs(wd2_oracle(moved) - value) <= 1e-12);
  }

  auto r = make_rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const DesignPointSet d = DesignPointSet::random(10, 8, 5, r);
    const DesignPointSet s = shifted(d, 3, 5);
    CHECK(std::abs(wd2(d) - wd2(s)) <= 1e-12);
    CHECK(std::abs(wd2(d) - wd2_oracle(d.coordinates())) <= 1e-12);
  }
}

TEST_CASE("design point sets") {
  CHECK_THROWS_AS(DesignPointSet(4, 3, 0), InvalidArgument);
  CHECK_THROWS_AS(DesignPointSet(4, 3, 4), InvalidArgument);
  const DesignPointSet full = DesignPointSet::full(3, 2);
  const auto coords = full.coordinates();
  CHECK(coords.size() == 6);
  CHECK(coords[0][0] == doctest::Approx(1.0 / 6.0));
  CHECK(coords[0][1] == doctest::Approx(0.25));
  const ObservationMatrix m = full.matrix();
  CHECK(m.column_sum(1) == 2);
  CHECK(m.row_sum(0) == 3);
}

TEST_CASE("moves preserve feasibility and the incremental sum") {
  auto rng = make_rng(203);
  DesignPointSet d = DesignPointSet::random(12, 9, 4, rng);
  Wd2Tracker tracker(d);
  for (int step = 1; step <= 5000; ++step) {
    const Move move = propose_swap(d, rng);
    REQUIRE_FALSE(move.noop);
    const double before = tracker.value();
    const double delta = tracker.delta(d, move);
    if (step % 2 == 0) {
      tracker.apply(d, move);
      CHECK(std::abs(tracker.value() - (before + delta)) <= 1e-12);
    }
    for (std::size_t k = 0; k < d.epochs(); ++k) REQUIRE(d.selected(k).size() == 4);
    if (step % 250 == 0) CHECK(tracker.resync(d) <= 1e-12);
  }
  CHECK(std::abs(tracker.value() - wd2_oracle(d.coordinates())) <= 1e-12);
}

TEST_CASE("swap neighbor edge cases") {
  const DesignPointSet full = DesignPointSet::full(4, 3);
  const DesignPointSet same = swap_neighbor(full, 5);
  CHECK(same.matrix() == full.matrix());
  auto rng = make_rng(1);
  CHECK(propose_swap(full, rng).noop);

  DesignPointSet tiny(1, 2, 1);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const DesignPointSet next = swap_neighbor(tiny, seed);
    CHECK(next.contains(0, 0) != tiny.contains(0, 0));
    CHECK(next.contains(0, 1) != tiny.contains(0, 1));
    tiny = next;
  }
}

TEST_CASE("acceptance rules and schedules") {
  std::mt19937_64 rng(204);
  std::normal_distribution<double> n(0.0, 1e-3);
  for (int rep = 0; rep < 1000; ++rep) {
    const double delta = n(rng);
    if (delta == 0.0) continue;
    CHECK(accept_move(SearchAlgorithm::threshold_accepting, delta, 0.0) ==
          accept_move(SearchAlgorithm::random_swap, delta, 0.0));
  }
  CHECK(accept_move(SearchAlgorithm::threshold_accepting, 0.01, 0.02));
  CHECK_FALSE(accept_move(SearchAlgorithm::random_swap, 0.01, 0.02));

  const auto schedule = geometric_threshold_schedule(0.1, 1000);
  CHECK(schedule.size() == 1000);
  CHECK(schedule.front() == doctest::Approx(0.1));
  CHECK(schedule.back() == 0.0);
  for (std::size_t k = 1; k < schedule.size(); ++k) CHECK(schedule[k] <= schedule[k - 1]);

  SearchConfig bad;
  bad.thresholds = {0.1, 0.2, 0.0};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  SearchConfig bad_end;
  bad_end.thresholds = {0.1, 0.05};
  CHECK_THROWS_AS(bad_end.validate(), InvalidArgument);
  SearchConfig zero_iters;
  zero_iters.iterations = 0;
  CHECK_THROWS_AS(zero_iters.validate(), InvalidArgument);
}

TEST_CASE("optimized designs") {
  SearchConfig config;
  config.iterations = 20000;
  config.seed = 9;
  for (SearchAlgorithm algo : {SearchAlgorithm::threshold_accepting, SearchAlgorithm::random_swap}) {
    config.algorithm = algo;
    const DesignResult r = optimize_design(10, 8, 5, config);
    for (std::size_t k = 0; k < 10; ++k) CHECK(r.matrix.column_sum(k) == 5);
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(r.matrix.row_sum(j) >= 6);
      CHECK(r.matrix.row_sum(j) <= 7);
    }
    CHECK(r.best_trace.size() == config.iterations);
    for (std::size_t k = 1; k < r.best_trace.size(); ++k) CHECK(r.best_trace[k] <= r.best_trace[k - 1]);
    CHECK(r.max_audit_error <= 1e-12);
    CHECK(r.wd2 == doctest::Approx(r.best_trace.back()).epsilon(1e-12));

    auto rng = make_rng(77);
    double best_random = 1e300;
    for (int k = 0; k < 100; ++k) best_random = std::min(best_random, wd2(DesignPointSet::random(10, 8, 5, rng)));
    CHECK(r.wd2 <= best_random);

    const DesignResult again = optimize_design(10, 8, 5, config);
    CHECK(again.matrix == r.matrix);
    CHECK(again.wd2 == r.wd2);
  }

  const DesignResult full = optimize_design(6, 4, 4, config);
  CHECK(full.iterations == 0);
  CHECK(full.wd2 == doctest::Approx(wd2(DesignPointSet::full(6, 4))).epsilon(1e-14));

  // With a zero schedule both searchers see the same moves and decisions
  // wherever no move leaves the discrepancy exactly unchanged.
  SearchConfig ta;
  ta.algorithm = SearchAlgorithm::threshold_accepting;
  ta.iterations = 3000;
  ta.thresholds = {0.0};
  ta.seed = 4;
  SearchConfig rs = ta;
  rs.algorithm = SearchAlgorithm::random_swap;
  rs.thresholds.clear();
  const DesignResult a = optimize_design(7, 11, 3, ta);
  const DesignResult b = optimize_design(7, 11, 3, rs);
  CHECK(a.best_trace == b.best_trace);
  CHECK(a.matrix == b.matrix);
}
