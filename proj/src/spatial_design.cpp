#include "stwd/spatial_design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stwd/error.hpp"

namespace stwd {

std::size_t ObservationMatrix::column_sum(std::size_t epoch) const {
  std::size_t s = 0;
  for (std::size_t j = 0; j < units_; ++j) s += at(j, epoch) ? 1 : 0;
  return s;
}

std::size_t ObservationMatrix::row_sum(std::size_t unit) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < epochs_; ++k) s += at(unit, k) ? 1 : 0;
  return s;
}

std::vector<std::size_t> ObservationMatrix::column(std::size_t epoch) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < units_; ++j)
    if (at(j, epoch)) out.push_back(j);
  return out;
}

DesignPointSet::DesignPointSet(std::size_t epochs, std::size_t units, std::size_t budget)
    : epochs_(epochs), units_(units), budget_(budget), member_(epochs * units, 0), selected_(epochs) {
  require(epochs >= 1, "design: need at least one epoch");
  require(budget >= 1 && budget <= units, "design: budget must satisfy 1 <= c <= L");
  for (std::size_t k = 0; k < epochs; ++k)
    for (std::size_t j = 0; j < budget; ++j) {
      member_[k * units + j] = 1;
      selected_[k].push_back(j);
    }
}

DesignPointSet DesignPointSet::random(std::size_t epochs, std::size_t units, std::size_t budget, Rng& rng) {
  DesignPointSet d(epochs, units, budget);
  std::vector<std::size_t> perm(units);
  for (std::size_t k = 0; k < epochs; ++k) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t j = 0; j < units; ++j) d.member_[k * units + j] = 0;
    d.selected_[k].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(budget));
    std::sort(d.selected_[k].begin(), d.selected_[k].end());
    for (std::size_t j : d.selected_[k]) d.member_[k * units + j] = 1;
  }
  return d;
}

DesignPointSet DesignPointSet::full(std::size_t epochs, std::size_t units) { return DesignPointSet(epochs, units, units); }

void DesignPointSet::swap_in_column(std::size_t epoch, std::size_t removed, std::size_t added) {
  require(contains(epoch, removed) && !contains(epoch, added), "design: invalid swap");
  member_[epoch * units_ + removed] = 0;
  member_[epoch * units_ + added] = 1;
  auto& col = selected_[epoch];
  *std::find(col.begin(), col.end(), removed) = added;
  std::sort(col.begin(), col.end());
}

std::vector<std::array<double, 2>> DesignPointSet::coordinates() const {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(size());
  for (std::size_t k = 0; k < epochs_; ++k)
    for (std::size_t j : selected_[k])
      pts.push_back({(static_cast<double>(k) + 0.5) / static_cast<double>(epochs_),
                     (static_cast<double>(j) + 0.5) / static_cast<double>(units_)});
  return pts;
}

ObservationMatrix DesignPointSet::matrix() const {
  ObservationMatrix w(units_, epochs_);
  for (std::size_t k = 0; k < epochs_; ++k)
    for (std::size_t j : selected_[k]) w.set(j, k, true);
  return w;
}

double wd_phi(double x, double y) {
  const double d = std::abs(x - y);
  return 1.5 - d + d * d;
}

double wd2(std::span<const std::array<double, 2>> points) {
  require(!points.empty(), "wd2: empty point set");
  for (const auto& p : points)
    require(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0, "wd2: coordinates must lie in [0,1]");
  double sum = 0.0;
  for (const auto& p : points)
    for (const auto& q : points) sum += wd_phi(p[0], q[0]) * wd_phi(p[1], q[1]);
  const auto n = static_cast<double>(points.size());
  return -16.0 / 9.0 + sum / (n * n);
}

double wd2(const DesignPointSet& design) { return wd2(design.coordinates()); }

Move propose_swap(const DesignPointSet& design, Rng& rng) {
  Move m;
  if (design.budget() == design.units()) return m;
  std::uniform_int_distribution<std::size_t> pick_epoch(0, design.epochs() - 1);
  m.epoch = pick_epoch(rng);
  const auto& sel = design.selected(m.epoch);
  std::uniform_int_distribution<std::size_t> pick_in(0, sel.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_out(0, design.units() - design.budget() - 1);
  m.removed = sel[pick_in(rng)];
  std::size_t target = pick_out(rng);
  for (std::size_t j = 0; j < design.units(); ++j) {
    if (design.contains(m.epoch, j)) continue;
    if (target-- == 0) {
      m.added = j;
      break;
    }
  }
  m.noop = false;
  return m;
}

DesignPointSet swap_neighbor(const DesignPointSet& design, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  DesignPointSet out = design;
  const Move m = propose_swap(design, rng);
  if (!m.noop) out.swap_in_column(m.epoch, m.removed, m.added);
  return out;
}

Wd2Tracker::Wd2Tracker(const DesignPointSet& design)
    : phi_epoch_(design.epochs() * design.epochs()),
      phi_unit_(design.units() * design.units()),
      epochs_(design.epochs()),
      units_(design.units()),
      n2_(static_cast<double>(design.size()) * static_cast<double>(design.size())),
      sum_(0.0) {
  const auto o = static_cast<double>(epochs_);
  const auto l = static_cast<double>(units_);
  for (std::size_t a = 0; a < epochs_; ++a)
    for (std::size_t b = 0; b < epochs_; ++b)
      phi_epoch_[a * epochs_ + b] = wd_phi((static_cast<double>(a) + 0.5) / o, (static_cast<double>(b) + 0.5) / o);
  for (std::size_t a = 0; a < units_; ++a)
    for (std::size_t b = 0; b < units_; ++b)
      phi_unit_[a * units_ + b] = wd_phi((static_cast<double>(a) + 0.5) / l, (static_cast<double>(b) + 0.5) / l);
  resync(design);
}

double Wd2Tracker::value() const { return -16.0 / 9.0 + sum_ / n2_; }

double Wd2Tracker::kernel_sum_with(const DesignPointSet& design, std::size_t epoch, std::size_t unit) const {
  double s = 0.0;
  for (std::size_t k = 0; k < epochs_; ++k) {
    double col = 0.0;
    for (std::size_t j : design.selected(k)) col += phi_unit_[unit * units_ + j];
    s += phi_epoch_[epoch * epochs_ + k] * col;
  }
  return s;
}

double Wd2Tracker::delta(const DesignPointSet& design, const Move& move) const {
  if (move.noop) return 0.0;
  const double self = 2.25;
  const double cross = 1.5 * phi_unit_[move.added * units_ + move.removed];
  const double with_added = kernel_sum_with(design, move.epoch, move.added) - cross;
  const double with_removed = kernel_sum_with(design, move.epoch, move.removed) - self;
  return 2.0 * (with_added - with_removed) / n2_;
}

void Wd2Tracker::apply(DesignPointSet& design, const Move& move) {
  if (move.noop) return;
  sum_ += delta(design, move) * n2_;
  design.swap_in_column(move.epoch, move.removed, move.added);
}

double Wd2Tracker::resync(const DesignPointSet& design) {
  double full = 0.0;
  for (std::size_t k = 0; k < epochs_; ++k)
    for (std::size_t j : design.selected(k)) full += kernel_sum_with(design, k, j);
  const double gap = std::abs(full - sum_) / n2_;
  sum_ = full;
  return gap;
}

void SearchConfig::validate() const {
  require(iterations >= 1, "search: iterations must be >= 1");
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    require(thresholds[k] >= 0.0, "search: thresholds must be nonnegative");
    if (k > 0) require(thresholds[k] <= thresholds[k - 1], "search: thresholds must be nonincreasing");
  }
  require(thresholds.empty() || thresholds.back() == 0.0, "search: threshold schedule must end at 0");
  require(warmup_quantile > 0.0 && warmup_quantile <= 1.0, "search: warm-up quantile must lie in (0, 1]");
}

bool accept_move(SearchAlgorithm algorithm, double delta, double threshold) {
  return algorithm == SearchAlgorithm::random_swap ? delta < 0.0 : delta <= threshold;
}

std::vector<double> geometric_threshold_schedule(double start, std::size_t iterations) {
  std::vector<double> out(iterations, 0.0);
  const auto decay_steps = static_cast<std::size_t>(0.9 * static_cast<double>(iterations));
  if (decay_steps == 0 || start <= 0.0) return out;
  const double ratio = std::pow(1e-3, 1.0 / static_cast<double>(decay_steps));
  double t = start;
  for (std::size_t k = 0; k < decay_steps; ++k, t *= ratio) out[k] = t;
  return out;
}

DesignResult optimize_design(std::size_t epochs, std::size_t units, std::size_t budget, const SearchConfig& config) {
  config.validate();
  require(epochs >= 1, "design: need at least one epoch");
  require(budget >= 1 && budget <= units, "design: budget must satisfy 1 <= c <= L");

  DesignResult result;
  if (budget == units) {
    const DesignPointSet full = DesignPointSet::full(epochs, units);
    result.matrix = full.matrix();
    result.wd2 = wd2(full);
    return result;
  }

  Rng start_rng = make_rng(derive_seed(config.seed, {1}));
  Rng warm_rng = make_rng(derive_seed(config.seed, {2}));
  Rng move_rng = make_rng(derive_seed(config.seed, {3}));

  DesignPointSet current = DesignPointSet::random(epochs, units, budget, start_rng);
  Wd2Tracker tracker(current);

  std::vector<double> thresholds;
  if (config.algorithm == SearchAlgorithm::threshold_accepting) {
    if (!config.thresholds.empty()) {
      thresholds = config.thresholds;
      thresholds.resize(std::max(thresholds.size(), config.iterations), 0.0);
    } else {
      std::vector<double> deltas;
      for (std::size_t w = 0; w < config.warmup_moves; ++w) {
        const Move m = propose_swap(current, warm_rng);
        deltas.push_back(std::abs(tracker.delta(current, m)));
      }
      double start = 0.0;
      if (!deltas.empty()) {
        const auto q = static_cast<std::size_t>(config.warmup_quantile * static_cast<double>(deltas.size() - 1));
        std::nth_element(deltas.begin(), deltas.begin() + static_cast<std::ptrdiff_t>(q), deltas.end());
        start = deltas[q];
      }
      thresholds = geometric_threshold_schedule(start, config.iterations);
    }
  }

  DesignPointSet best = current;
  double best_value = tracker.value();
  result.best_trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const Move m = propose_swap(current, move_rng);
    const double d = tracker.delta(current, m);
    const double threshold = thresholds.empty() ? 0.0 : thresholds[it];
    if (!m.noop && accept_move(config.algorithm, d, threshold)) {
      tracker.apply(current, m);
      ++result.accepted;
      if (tracker.value() < best_value) {
        best_value = tracker.value();
        best = current;
      }
    }
    if ((it + 1) % 1000 == 0) result.max_audit_error = std::max(result.max_audit_error, tracker.resync(current));
    result.best_trace.push_back(best_value);
  }
  result.iterations = config.iterations;
  result.matrix = best.matrix();
  result.wd2 = wd2(best);
  return result;
}

}  // namespace stwd
