#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "smore/divergence.hpp"

namespace smore::verify {

struct Check {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // worst value observed for this check
  double tolerance = 0.0;  // threshold it was compared against
};

struct VerifyReport {
  std::string suite;
  std::vector<Check> checks;
  bool overall = false;  // true iff every check passed
};

/// Conjugate catalogue certificates: the generator root at 1, the Fenchel
/// identity f*(f'(x)) = x f'(x) - f(x) on a dense grid, and numerical
/// biconjugation f** = f.
VerifyReport conjugates_suite();

/// Strong-duality certificates on five fixed tiny instances: Frank-Wolfe
/// primal vs. exhaustive policy oracle vs. both tabular dual solvers, the
/// score-minimum identity min_S = -D_f, the closed-form inner-maximum weight
/// on a dense grid, and agreement of the two printed dual forms. The overload
/// taking a divergence exists so tests can inject corrupted conjugates and
/// watch the named checks fail; production callers use the catalogue entry.
VerifyReport duality_suite();
VerifyReport duality_suite(const divergence::FDivergence& div);

/// Lower-bound certificates tying occupancy matching to the goal-reaching
/// objective: the soft-target tightness identity under the x log x generator,
/// its chi-squared relaxation, and the mixture-form bound with the
/// dataset-regularized objective.
VerifyReport bounds_suite();

/// Finite-difference validation of every agent loss head at relative error
/// below 1e-4.
VerifyReport gradients_suite();

/// Dispatch by suite name: conjugates, duality, bounds, gradients, or all
/// (concatenates every suite). Throws std::invalid_argument otherwise.
VerifyReport run_suite(const std::string& name);

nlohmann::json to_json(const VerifyReport& report);

}  // namespace smore::verify
