#pragma once

// Relaxation-time search on top of the norm oracles:
//   tau = min{ n : ||T^n|| < e^{-1} }   (noisy: monotone, bracket + binary search)
//   tau~ = min{ n : ||T~^{(n)}|| < threshold } (coarse: linear scan; the norms are
//   not proven monotone).
// Plus the map-independent quantum lower bounds of the fixed-N analysis and the
// regime classifier.

#include <cmath>
#include <optional>

#include "toral_relax/classical.hpp"
#include "toral_relax/common.hpp"
#include "toral_relax/lattice.hpp"
#include "toral_relax/noise.hpp"
#include "toral_relax/quantum.hpp"

namespace toral_relax {

inline constexpr Index kTauCap = 1000000000;  // log-domain products make 1e9 representable

struct RelaxationResult {
  std::optional<Index> tau;  // nullopt = no relaxation (infinity)
  Flavor flavor = Flavor::kNoisy;
  Side side = Side::kClassical;
  double norm_before = 1.0;  // ||T^{tau-1}|| (or last scanned norm)
  double norm_at = 1.0;      // ||T^{tau}||
  bool scan_cap_hit = false;

  bool infinite() const { return !tau.has_value(); }
};

enum class QuantumPath { kExact, kDense };

namespace detail {

/// First n with norm(n) < ln_threshold (log domain), via doubling bracket and
/// binary search; assumes norm(n) nonincreasing in n.
template <typename NormFn>
RelaxationResult monotone_tau(const NormFn& norm_log, double ln_threshold, Flavor flavor,
                              Side side) {
  RelaxationResult out;
  out.flavor = flavor;
  out.side = side;
  double n1 = norm_log(1);
  if (n1 < ln_threshold) {
    out.tau = 1;
    out.norm_before = 1.0;
    out.norm_at = std::exp(n1);
    return out;
  }
  Index lo = 1;  // norm(lo) >= threshold
  Index hi = 2;
  double hi_val = norm_log(hi);
  while (hi_val >= ln_threshold) {
    lo = hi;
    if (hi > kTauCap / 2) {
      out.scan_cap_hit = true;
      out.norm_before = std::exp(hi_val);
      return out;  // treated as no relaxation within the cap
    }
    hi *= 2;
    hi_val = norm_log(hi);
  }
  while (hi - lo > 1) {
    Index mid = lo + (hi - lo) / 2;
    double v = norm_log(mid);
    if (v < ln_threshold)
      hi = mid;
    else
      lo = mid;
  }
  out.tau = hi;
  out.norm_before = std::exp(norm_log(hi - 1));
  out.norm_at = std::exp(norm_log(hi));
  return out;
}

template <typename NormFn>
RelaxationResult scanned_tau(const NormFn& norm_log, double ln_threshold, Index cap,
                             Flavor flavor, Side side) {
  RelaxationResult out;
  out.flavor = flavor;
  out.side = side;
  double prev = 0.0;
  for (Index n = 1; n <= cap; ++n) {
    double v = norm_log(n);
    if (v < ln_threshold) {
      out.tau = n;
      out.norm_before = std::exp(prev);
      out.norm_at = std::exp(v);
      return out;
    }
    prev = v;
  }
  out.scan_cap_hit = true;
  out.norm_before = std::exp(prev);
  return out;
}

inline Index default_coarse_cap(double eps, double entropy_rate) {
  double cap = 10.0 * std::log(1.0 / eps) / entropy_rate + 100.0;
  return static_cast<Index>(cap);
}

}  // namespace detail

/// Classical relaxation time. Linear maps use the exact lattice-minimum norms;
/// kicked maps (d = 1) go through the Galerkin-truncated propagator.
inline RelaxationResult tau_classical(const ClassicalMapSpec& map, const NoiseKernel& kernel,
                                      double eps, Flavor flavor, double threshold = std::exp(-1.0),
                                      Index truncation_cutoff = 48) {
  require(eps > 0.0, "tau_classical: eps > 0 required");
  require(threshold > 0.0 && threshold < 1.0, "tau_classical: threshold in (0,1)");
  const double ln_thr = std::log(threshold);
  if (map.is_pure_linear() || !map.has_kick()) {
    // translations do not change |ghat|-products: the norm formulas see only F
    const SymplecticIntMatrix& f = map.linear_part;
    if (flavor == Flavor::kNoisy) {
      auto norm_log = [&](Index n) { return classical_norm_linear(f, kernel, eps, n).log_value; };
      return detail::monotone_tau(norm_log, ln_thr, flavor, Side::kClassical);
    }
    auto norm_log = [&](Index n) {
      return classical_norm_coarse_linear(f, kernel, eps, n).log_value;
    };
    double hrate = ks_entropy(f).min_averaged;
    return detail::scanned_tau(norm_log, ln_thr, detail::default_coarse_cap(eps, hrate), flavor,
                               Side::kClassical);
  }
  // kicked map: truncated propagator norm
  require(map.linear_part.dim_d == 1, "tau_classical: kicked maps are d = 1 only");
  if (flavor == Flavor::kNoisy) {
    auto norm_log = [&](Index n) {
      return classical_norm_truncated(map, kernel, eps, n, truncation_cutoff).norm.log_value;
    };
    return detail::monotone_tau(norm_log, ln_thr, flavor, Side::kClassical);
  }
  // coarse for kicked maps: G K^n G on the truncation
  auto norm_log = [&](Index n) {
    KoopmanMatrix km = galerkin_koopman(map, truncation_cutoff);
    const Index dim = km.basis.dim();
    Vec ghat(dim);
    for (Index i = 0; i < dim; ++i) ghat[i] = classical_eigenvalue(kernel, eps, km.basis.modes[i]);
    auto fwd = [&](CVec& v) {
      for (Index i = 0; i < dim; ++i) v[i] *= ghat[i];
      for (Index rep = 0; rep < n; ++rep) km.apply(v);
      for (Index i = 0; i < dim; ++i) v[i] *= ghat[i];
    };
    auto bwd = [&](CVec& v) {
      for (Index i = 0; i < dim; ++i) v[i] *= ghat[i];
      for (Index rep = 0; rep < n; ++rep) km.apply_adjoint(v);
      for (Index i = 0; i < dim; ++i) v[i] *= ghat[i];
    };
    PowerNormResult r = power_norm(dim, fwd, bwd);
    require(r.converged, "tau_classical: truncated norm power iteration stagnation");
    return std::log(std::max(r.sigma_max, 1e-300));
  };
  double hrate = ks_entropy(map.linear_part).min_averaged;
  return detail::scanned_tau(norm_log, ln_thr, detail::default_coarse_cap(eps, hrate), flavor,
                             Side::kClassical);
}

/// Quantum relaxation time. The exact path requires a linear map; the dense path
/// (d = 1, N <= cap) handles kicked maps. Infinity is detected exactly for a
/// compact-support kernel below its threshold (gamma identically 1) and via the
/// 1e9 cap otherwise.
inline RelaxationResult tau_quantum(const ClassicalMapSpec& map, const NoiseKernel& kernel,
                                    double eps, const QuantumSetting& setting, Flavor flavor,
                                    QuantumPath path = QuantumPath::kExact,
                                    double threshold = std::exp(-1.0)) {
  require(threshold > 0.0 && threshold < 1.0, "tau_quantum: threshold in (0,1)");
  const double ln_thr = std::log(threshold);
  RelaxationResult out;
  out.flavor = flavor;
  out.side = Side::kQuantum;
  if (eps == 0.0 || gamma_identically_one(kernel, eps, setting.n)) return out;  // infinity

  if (path == QuantumPath::kExact) {
    require(!map.has_kick() && !map.has_translation(),
            "tau_quantum: exact path requires a linear map");
    const SymplecticIntMatrix& f = map.linear_part;
    // map-independent bound ||T^n|| >= (min_k gamma)^n: when it already places tau
    // beyond the cap, skip the search
    double log_min_gamma = 0.0;
    if (kernel.is_gaussian()) {
      const double sigma = eps * static_cast<double>(setting.n);
      log_min_gamma =
          2.0 * static_cast<double>(kernel.dim_d) *
          log_theta_ratio(sigma, static_cast<double>(fold_max(setting.n)) / setting.n);
    } else if (kernel.dim_d == 1) {
      QuantumNoiseTable table(kernel, eps, setting.n);
      log_min_gamma = std::log(std::max(table.min_gamma_nonzero(), 1e-300));
    }
    if (flavor == Flavor::kNoisy) {
      if (log_min_gamma == 0.0) return out;  // noise operator is the identity on modes
      if (static_cast<double>(kTauCap) * log_min_gamma > ln_thr) {
        out.scan_cap_hit = true;  // tau exceeds the cap by the lower bound alone
        return out;
      }
      auto norm_log = [&](Index n) {
        return noisy_norm_linear(f, kernel, eps, setting, n).log_value;
      };
      if (norm_log(1) == 0.0) return out;  // infinity
      return detail::monotone_tau(norm_log, ln_thr, flavor, Side::kQuantum);
    }
    // coarse: ||T~^{(n)}|| >= (min_k gamma)^2 for every n
    if (2.0 * log_min_gamma >= ln_thr) return out;  // exact non-relaxation
    auto norm_log = [&](Index n) {
      return coarse_norm_linear(f, kernel, eps, setting, n).log_value;
    };
    double hrate = ks_entropy(f).min_averaged;
    return detail::scanned_tau(norm_log, ln_thr, detail::default_coarse_cap(eps, hrate), flavor,
                               Side::kQuantum);
  }

  // dense path with warm-started block power iteration across n
  auto warm = std::make_shared<CMat>();
  auto norm_log = [&, warm](Index n) {
    PowerNormOptions opts;
    PropagatorNorm nor = noisy_norm_dense(map, kernel, eps, setting, n, flavor, opts, warm.get());
    return nor.log_value;
  };
  if (flavor == Flavor::kNoisy) {
    if (norm_log(1) == 0.0) return out;
    return detail::monotone_tau(norm_log, ln_thr, flavor, Side::kQuantum);
  }
  double hrate = ks_entropy(map.linear_part).min_averaged;
  return detail::scanned_tau(norm_log, ln_thr, detail::default_coarse_cap(eps, hrate), flavor,
                             Side::kQuantum);
}

/// Map-independent lower bound on tau_q from ||T^n|| >= (min_k gamma)^n:
/// ceil(1 / -ln min_k gamma). Returns +infinity (as a double) when the noise
/// operator is exactly the identity. Gaussian evaluates the closed theta form at
/// the far corner of the fold domain; meaningful in the regime eps N <= 1.
inline double quantum_lower_bound(const NoiseKernel& kernel, double eps, Index n) {
  require(eps > 0.0 && n >= 1, "quantum_lower_bound: eps > 0, N >= 1 required");
  if (gamma_identically_one(kernel, eps, n)) return std::numeric_limits<double>::infinity();
  double log_min_gamma;
  if (kernel.is_gaussian()) {
    const double sigma = eps * static_cast<double>(n);
    const Index far = fold_max(n);  // farthest component in (-N/2, N/2]
    double one_dim = log_theta_ratio(sigma, static_cast<double>(far) / static_cast<double>(n));
    log_min_gamma = 2.0 * static_cast<double>(kernel.dim_d) * one_dim;
  } else {
    require(kernel.dim_d == 1, "quantum_lower_bound: non-gaussian path is d = 1 only");
    QuantumNoiseTable table(kernel, eps, n);
    double min_gamma = table.min_gamma_nonzero();
    if (min_gamma >= 1.0) return std::numeric_limits<double>::infinity();
    log_min_gamma = std::log(std::max(min_gamma, 1e-300));
  }
  if (log_min_gamma >= 0.0) return std::numeric_limits<double>::infinity();
  return std::ceil(1.0 / -log_min_gamma);
}

// ---------------------------------------------------------------------------
// Regime classification
// ---------------------------------------------------------------------------

enum class Regime { kSemiclassical, kCrossover, kQuantum, kDeeplyQuantum };

struct RegimeTag {
  Regime label = Regime::kCrossover;
  double ehrenfest = 0.0;  // tau_E = ln(N) / Gamma
  double expansion = 0.0;  // Gamma = ln ||F||
};

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kSemiclassical:
      return "semiclassical";
    case Regime::kCrossover:
      return "crossover";
    case Regime::kQuantum:
      return "quantum";
    case Regime::kDeeplyQuantum:
      return "deeply_quantum";
  }
  return "?";
}

/// The explicit constant of the linear-map correspondence regime: the smallest M
/// with C e^{-M^2/4} < e^{-2} (C = 4d + 1 from the GES slack) and
/// (1/h) ln(M / (4 ||F||)) > 2.
inline double eq_m_constant(const SymplecticIntMatrix& f) {
  const double c = 4.0 * static_cast<double>(f.dim_d) + 1.0;
  double m_gauss = 2.0 * std::sqrt(2.0 + std::log(c));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.entries.cast<double>());
  double fnorm = svd.singularValues().maxCoeff();
  double hrate = ks_entropy(f).min_averaged;
  double m_entropy = 4.0 * fnorm * std::exp(2.0 * hrate);
  return std::max(m_gauss, m_entropy);
}

/// Regime thresholds (gaussian form): deeply_quantum when
/// eps N <= (1 - delta)/sqrt(ln ln eps^{-1}) with delta = 0.1; quantum when
/// eps N < 0.5; semiclassical when N > eps^{-E} for a supplied exponent, else when
/// eps N exceeds the linear-map constant M; crossover otherwise.
inline RegimeTag classify_regime(const SymplecticIntMatrix& f, double eps, Index n,
                                 std::optional<double> exponent_e = std::nullopt) {
  require(f.ergodic, "classify_regime: ergodic F required");
  require(eps > 0.0 && n >= 1, "classify_regime: eps > 0, N >= 1 required");
  RegimeTag tag;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.entries.cast<double>());
  tag.expansion = std::log(svd.singularValues().maxCoeff());
  tag.ehrenfest = std::log(static_cast<double>(n)) / tag.expansion;
  const double eps_n = eps * static_cast<double>(n);
  const double delta = 0.1;
  double loglog = std::log(std::log(1.0 / eps));
  if (std::isfinite(loglog) && loglog > 0.0 &&
      eps_n <= (1.0 - delta) / std::sqrt(loglog)) {
    tag.label = Regime::kDeeplyQuantum;
    return tag;
  }
  if (eps_n < 0.5) {
    tag.label = Regime::kQuantum;
    return tag;
  }
  if (exponent_e.has_value()) {
    if (static_cast<double>(n) > std::pow(eps, -*exponent_e)) {
      tag.label = Regime::kSemiclassical;
      return tag;
    }
  } else if (eps_n > eq_m_constant(f)) {
    tag.label = Regime::kSemiclassical;
    return tag;
  }
  tag.label = Regime::kCrossover;
  return tag;
}

}  // namespace toral_relax
