#pragma once

#include "qpfit/qpnet.hpp"

#include <cstdint>
#include <vector>

namespace qpfit {

// One critical region of the pQP layer: {x : E x <= e} with the pre-projection
// law u = K x + k. Rows of E are normalized to unit norm.
struct Region {
  MatrixXd E;
  VectorXd e;
  MatrixXd K;
  VectorXd k;
  std::uint64_t active_mask = 0;  // bit i set = z_i pinned at zero
};

struct PWAController {
  int n = 0, m = 0, nz = 0;
  ProjectionSpec projection;
  std::vector<Region> regions;
};

/// Enumerates the critical regions of the pQP layer over all candidate
/// active sets, composing the second affine layer into per-region gains.
/// Regions with empty interior (slack 1e-9) are dropped; output is sorted by
/// active-set bitmask. The projection stays a closed form appended to the
/// law rather than extra regions.
PWAController enumerate_regions(const QPNetParams& p);

const Region* locate(const PWAController& c, const VectorXd& x, double tol = 1e-9);

/// Sequential-scan point location, then projection(K x + k).
/// Throws when no region contains x (an enumeration gap).
VectorXd locate_and_eval(const PWAController& c, const VectorXd& x);

struct ComplexityReport {
  int region_count = 0;
  std::size_t storage_bytes = 0;   // exact flat-export size, 4-byte words
  double eval_median_us = 0.0;     // informational
  double eval_max_us = 0.0;
};

/// Storage by the documented 4-byte-per-number formula (equals the flat
/// binary export size exactly); evaluation time measured over random states.
ComplexityReport complexity_report(const PWAController& c, const Box& domain,
                                   int timing_samples = 10000,
                                   std::uint64_t seed = 12345);

/// Word count of the flat binary layout (see serialize.hpp for the format).
std::size_t pwa_storage_words(const PWAController& c);

}  // namespace qpfit
