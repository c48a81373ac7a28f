#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>

namespace smore::divergence {

enum class Kind {
  kl_reverse,
  squared_hellinger,
  chi2,
  total_variation,
  jensen_shannon,
};

/// An f-divergence generator together with its closed-form convex conjugate.
///
/// f is convex on [0, inf) with f(1) = 0. The conjugate is
/// f*(y) = sup_x { x*y - f(x) }, valid on the domain reported by
/// in_conjugate_domain. derivative and derivative inverse satisfy
/// (f*)' = (f')^{-1} wherever both exist.
///
/// Members are callables so tests can construct deliberately corrupted
/// variants; production code always goes through catalogue().
struct FDivergence {
  Kind kind;
  std::string name;
  std::function<double(double)> f;           // generator, defined for x >= 0
  std::function<double(double)> f_prime;     // f'(x) for x > 0 (subgradient at kinks)
  std::function<double(double)> f_star;      // conjugate, on the conjugate domain
  std::function<double(double)> f_prime_inv; // (f')^{-1}(y); empty when f' is not invertible
  std::function<bool(double)> in_conjugate_domain;
};

/// The five catalogue entries. References stay valid for program lifetime.
const FDivergence& catalogue(Kind kind);
const std::array<Kind, 5>& all_kinds();

/// Lookup by name ("chi2", "kl_reverse", ...). Throws std::invalid_argument.
const FDivergence& catalogue(const std::string& name);

/// f(x). Requires x >= 0; x = 0 is handled by the continuous extension.
double generator_value(const FDivergence& div, double x);

/// f*(y). Throws std::domain_error outside the conjugate domain, naming the
/// divergence and the offending y.
double conjugate_value(const FDivergence& div, double y);

/// f'(x) for x > 0.
double derivative_value(const FDivergence& div, double x);

/// (f')^{-1}(y). Throws std::domain_error when f' is not invertible
/// (total_variation) or y is outside the closed-form domain.
double derivative_inverse(const FDivergence& div, double y);

/// sum_i Q_i f(P_i / Q_i) with the conventions
///   Q_i = 0, P_i = 0  -> contributes 0
///   Q_i = 0, P_i > 0  -> support violation, throws std::domain_error naming i.
/// P and Q must be equal-length vectors of finite nonnegative entries.
double divergence(const FDivergence& div, std::span<const double> p,
                  std::span<const double> q);

}  // namespace smore::divergence
