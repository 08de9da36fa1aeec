#pragma once

#include <cstddef>
#include <vector>

namespace stwd {

// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): weights sum to one.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Golub-Welsch on the probabilists' Hermite recurrence. Rules are cached
// per node count and safe to call from several threads.
const GaussHermiteRule& gauss_hermite(std::size_t n);

}  // namespace stwd
