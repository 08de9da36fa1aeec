#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stwd/random.hpp"

namespace stwd {

// L x o binary matrix; cell (unit j, epoch k) is 1 when unit j is observed at epoch k.
class ObservationMatrix {
 public:
  ObservationMatrix() = default;
  ObservationMatrix(std::size_t units, std::size_t epochs) : units_(units), epochs_(epochs), cells_(units * epochs, 0) {}

  std::size_t units() const { return units_; }
  std::size_t epochs() const { return epochs_; }
  bool at(std::size_t unit, std::size_t epoch) const { return cells_[unit * epochs_ + epoch] != 0; }
  void set(std::size_t unit, std::size_t epoch, bool on) { cells_[unit * epochs_ + epoch] = on ? 1 : 0; }
  std::size_t column_sum(std::size_t epoch) const;
  std::size_t row_sum(std::size_t unit) const;
  // Units observed at `epoch`, ascending.
  std::vector<std::size_t> column(std::size_t epoch) const;

  friend bool operator==(const ObservationMatrix&, const ObservationMatrix&) = default;

 private:
  std::size_t units_ = 0;
  std::size_t epochs_ = 0;
  std::vector<std::uint8_t> cells_;
};

// A subset of the candidate grid u_k = (k - 0.5)/o, v_j = (j - 0.5)/L with
// exactly c points in every epoch column. Points are (epoch, unit) pairs, so
// duplicates cannot occur.
class DesignPointSet {
 public:
  DesignPointSet(std::size_t epochs, std::size_t units, std::size_t budget);

  static DesignPointSet random(std::size_t epochs, std::size_t units, std::size_t budget, Rng& rng);
  static DesignPointSet full(std::size_t epochs, std::size_t units);

  std::size_t epochs() const { return epochs_; }
  std::size_t units() const { return units_; }
  std::size_t budget() const { return budget_; }
  std::size_t size() const { return epochs_ * budget_; }
  bool contains(std::size_t epoch, std::size_t unit) const { return member_[epoch * units_ + unit] != 0; }
  const std::vector<std::size_t>& selected(std::size_t epoch) const { return selected_[epoch]; }

  // Replaces `removed` by `added` in column `epoch`.
  void swap_in_column(std::size_t epoch, std::size_t removed, std::size_t added);

  std::vector<std::array<double, 2>> coordinates() const;
  ObservationMatrix matrix() const;

 private:
  std::size_t epochs_;
  std::size_t units_;
  std::size_t budget_;
  std::vector<std::uint8_t> member_;
  std::vector<std::vector<std::size_t>> selected_;
};

// phi(x, y) = 3/2 - |x - y| + |x - y|^2
double wd_phi(double x, double y);

// Squared wrap-around L2 discrepancy of points in [0,1]^2.
double wd2(std::span<const std::array<double, 2>> points);
double wd2(const DesignPointSet& design);

struct Move {
  std::size_t epoch = 0;
  std::size_t removed = 0;
  std::size_t added = 0;
  bool noop = true;
};

// Random column swap: one selected unit leaves, one unselected unit enters.
// A no-op when every column is saturated (c == L).
Move propose_swap(const DesignPointSet& design, Rng& rng);
DesignPointSet swap_neighbor(const DesignPointSet& design, std::uint64_t seed);

// Keeps the double sum of wd2 up to date under single swaps in O(o * c).
class Wd2Tracker {
 public:
  explicit Wd2Tracker(const DesignPointSet& design);

  double value() const;
  // Change in wd2 if `move` were applied to `design`.
  double delta(const DesignPointSet& design, const Move& move) const;
  void apply(DesignPointSet& design, const Move& move);
  // Full recomputation; returns |incremental - full| before resynchronizing.
  double resync(const DesignPointSet& design);

 private:
  double kernel_sum_with(const DesignPointSet& design, std::size_t epoch, std::size_t unit) const;

  std::vector<double> phi_epoch_;  // o x o
  std::vector<double> phi_unit_;   // L x L
  std::size_t epochs_;
  std::size_t units_;
  double n2_;
  double sum_;
};

enum class SearchAlgorithm { threshold_accepting, random_swap };

struct SearchConfig {
  SearchAlgorithm algorithm = SearchAlgorithm::threshold_accepting;
  std::size_t iterations = 20000;
  // Explicit threshold schedule (threshold accepting only): nonincreasing,
  // nonnegative, ending at 0; padded with 0 to `iterations`. When empty the
  // default self-scaling schedule is used.
  std::vector<double> thresholds;
  std::uint64_t seed = 1;
  std::size_t warmup_moves = 200;
  double warmup_quantile = 0.75;

  void validate() const;
};

// Threshold accepting takes delta <= threshold; random swap takes delta < 0.
bool accept_move(SearchAlgorithm algorithm, double delta, double threshold);

// Geometric decay from `start` to start * 1e-3 over the first 90% of the
// iterations, then 0.
std::vector<double> geometric_threshold_schedule(double start, std::size_t iterations);

struct DesignResult {
  ObservationMatrix matrix;
  double wd2 = 0.0;
  std::size_t iterations = 0;
  std::size_t accepted = 0;
  std::vector<double> best_trace;  // best-seen wd2 after each iteration
  double max_audit_error = 0.0;    // largest incremental-vs-full gap at the audits
};

DesignResult optimize_design(std::size_t epochs, std::size_t units, std::size_t budget, const SearchConfig& config);

}  // namespace stwd
