#include "smore/divergence.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace smore::divergence {

namespace {

constexpr double kLog2 = 0.6931471805599453094;

FDivergence make_kl_reverse() {
  FDivergence d;
  d.kind = Kind::kl_reverse;
  d.name = "kl_reverse";
  d.f = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  d.f_prime = [](double x) { return std::log(x) + 1.0; };
  d.f_star = [](double y) { return std::exp(y - 1.0); };
  d.f_prime_inv = [](double y) { return std::exp(y - 1.0); };
  d.in_conjugate_domain = [](double) { return true; };
  return d;
}

FDivergence make_squared_hellinger() {
  FDivergence d;
  d.kind = Kind::squared_hellinger;
  d.name = "squared_hellinger";
  d.f = [](double x) {
    double r = std::sqrt(x) - 1.0;
    return r * r;
  };
  d.f_prime = [](double x) { return 1.0 - 1.0 / std::sqrt(x); };
  d.f_star = [](double y) { return y / (1.0 - y); };
  d.f_prime_inv = [](double y) {
    double r = 1.0 - y;
    return 1.0 / (r * r);
  };
  d.in_conjugate_domain = [](double y) { return y < 1.0; };
  return d;
}

FDivergence make_chi2() {
  FDivergence d;
  d.kind = Kind::chi2;
  d.name = "chi2";
  d.f = [](double x) {
    double r = x - 1.0;
    return r * r;
  };
  d.f_prime = [](double x) { return 2.0 * (x - 1.0); };
  d.f_star = [](double y) { return y + 0.25 * y * y; };
  d.f_prime_inv = [](double y) { return 0.5 * y + 1.0; };
  d.in_conjugate_domain = [](double) { return true; };
  return d;
}

FDivergence make_total_variation() {
  FDivergence d;
  d.kind = Kind::total_variation;
  d.name = "total_variation";
  d.f = [](double x) { return 0.5 * std::abs(x - 1.0); };
  // Subgradient 0 at the kink keeps the conjugacy identity exact there.
  d.f_prime = [](double x) { return x > 1.0 ? 0.5 : (x < 1.0 ? -0.5 : 0.0); };
  d.f_star = [](double y) { return y; };
  d.f_prime_inv = nullptr;
  d.in_conjugate_domain = [](double y) { return y >= -0.5 && y <= 0.5; };
  return d;
}

FDivergence make_jensen_shannon() {
  FDivergence d;
  d.kind = Kind::jensen_shannon;
  d.name = "jensen_shannon";
  d.f = [](double x) {
    if (x <= 0.0) return kLog2;
    return -(x + 1.0) * std::log(0.5 * (x + 1.0)) + x * std::log(x);
  };
  d.f_prime = [](double x) { return std::log(2.0 * x / (x + 1.0)); };
  d.f_star = [](double y) { return -std::log(2.0 - std::exp(y)); };
  d.f_prime_inv = [](double y) {
    double e = std::exp(y);
    return e / (2.0 - e);
  };
  d.in_conjugate_domain = [](double y) { return y < kLog2; };
  return d;
}

}  // namespace

const FDivergence& catalogue(Kind kind) {
  static const FDivergence kl = make_kl_reverse();
  static const FDivergence sh = make_squared_hellinger();
  static const FDivergence chi = make_chi2();
  static const FDivergence tv = make_total_variation();
  static const FDivergence js = make_jensen_shannon();
  switch (kind) {
    case Kind::kl_reverse: return kl;
    case Kind::squared_hellinger: return sh;
    case Kind::chi2: return chi;
    case Kind::total_variation: return tv;
    case Kind::jensen_shannon: return js;
  }
  throw std::invalid_argument("unknown divergence kind");
}

const std::array<Kind, 5>& all_kinds() {
  static const std::array<Kind, 5> kinds = {
      Kind::kl_reverse, Kind::squared_hellinger, Kind::chi2,
      Kind::total_variation, Kind::jensen_shannon};
  return kinds;
}

const FDivergence& catalogue(const std::string& name) {
  for (Kind k : all_kinds()) {
    const FDivergence& d = catalogue(k);
    if (d.name == name) return d;
  }
  throw std::invalid_argument("unknown divergence name: " + name);
}

double generator_value(const FDivergence& div, double x) {
  if (!(x >= 0.0)) {
    std::ostringstream msg;
    msg << div.name << ": generator argument must be >= 0, got " << x;
    throw std::domain_error(msg.str());
  }
  return div.f(x);
}

double conjugate_value(const FDivergence& div, double y) {
  if (!std::isfinite(y) || !div.in_conjugate_domain(y)) {
    std::ostringstream msg;
    msg << div.name << ": y = " << y << " is outside the conjugate domain";
    throw std::domain_error(msg.str());
  }
  return div.f_star(y);
}

double derivative_value(const FDivergence& div, double x) {
  if (!(x > 0.0)) {
    std::ostringstream msg;
    msg << div.name << ": derivative requires x > 0, got " << x;
    throw std::domain_error(msg.str());
  }
  return div.f_prime(x);
}

double derivative_inverse(const FDivergence& div, double y) {
  if (!div.f_prime_inv) {
    throw std::domain_error(div.name +
                            ": generator derivative is not invertible");
  }
  bool in_domain = std::isfinite(y);
  switch (div.kind) {
    case Kind::squared_hellinger: in_domain = in_domain && y < 1.0; break;
    case Kind::jensen_shannon: in_domain = in_domain && y < kLog2; break;
    default: break;
  }
  if (!in_domain) {
    std::ostringstream msg;
    msg << div.name << ": y = " << y << " is outside the range of f'";
    throw std::domain_error(msg.str());
  }
  return div.f_prime_inv(y);
}

double divergence(const FDivergence& div, std::span<const double> p,
                  std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("divergence: P and Q lengths differ");
  }
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double pi = p[i];
    double qi = q[i];
    if (!std::isfinite(pi) || !std::isfinite(qi) || pi < 0.0 || qi < 0.0) {
      std::ostringstream msg;
      msg << div.name << ": invalid entry at index " << i << " (P = " << pi
          << ", Q = " << qi << ")";
      throw std::domain_error(msg.str());
    }
    if (qi == 0.0) {
      if (pi == 0.0) continue;
      std::ostringstream msg;
      msg << div.name << ": support violation at index " << i
          << " (P = " << pi << ", Q = 0)";
      throw std::domain_error(msg.str());
    }
    total += qi * div.f(pi / qi);
  }
  return total;
}

}  // namespace smore::divergence
