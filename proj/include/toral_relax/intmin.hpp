#pragma once

// Exact minimization of integer quadratic forms over Z^{2d} \ {0}.
//
// The orbit-extension quantities min(|k|^2 + |F^n k|^2) and min sum_l |F^l k|^2 are
// values of positive-definite quadratic forms Q(k) = k^T G k with exact integer G
// (G = sum over the window of (F^l)^T F^l). The minimum is found by enumerating the
// sublevel set {Q <= best} exactly: every candidate lies inside it, so the result is
// the certified global minimum over the full lattice. Scalar arithmetic is templated
// (int64 / mpz) because G entries grow like e^{2 \hat h n}.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <gmpxx.h>

#include "toral_relax/common.hpp"
#include "toral_relax/lattice.hpp"
#include "toral_relax/parallel.hpp"

namespace toral_relax {

namespace detail {

template <typename S>
struct ScalarOps;

template <>
struct ScalarOps<Index> {
  static Index from_index(Index v) { return v; }
  static double to_double(Index v) { return static_cast<double>(v); }
};

template <>
struct ScalarOps<mpz_class> {
  static mpz_class from_index(Index v) { return mpz_class(static_cast<long>(v)); }
  static double to_double(const mpz_class& v) { return v.get_d(); }
};

/// True iff the window Gram matrix of F over [l_lo, l_hi] fits comfortably in int64
/// for search radii up to ~2^15.
inline bool window_fits_int64(const IMat& f, Index l_lo, Index l_hi) {
  Eigen::MatrixXd fd = f.cast<double>().cwiseAbs();
  Eigen::MatrixXd pw = Eigen::MatrixXd::Identity(f.rows(), f.cols());
  double gmax = 0.0;
  for (Index l = 0; l <= l_hi; ++l) {
    if (l >= l_lo) {
      double m = (pw.transpose() * pw).array().abs().maxCoeff();
      gmax += m;
    }
    pw = fd * pw;
    if (!pw.allFinite()) return false;
  }
  // Q(k) ~ gmax * |k|^2; keep |k| <= 2^15 and a 16x margin below 2^63.
  return gmax < 5.0e8 * 1.0e9 / (32768.0 * 32768.0);
}

template <typename S>
using SMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// G = sum_{l=l_lo}^{l_hi} (F^l)^T F^l in exact arithmetic.
template <typename S>
SMat<S> window_gram(const IMat& f, Index l_lo, Index l_hi) {
  const Index dim = f.rows();
  SMat<S> fz(dim, dim), pw(dim, dim), g(dim, dim);
  for (Index i = 0; i < dim; ++i)
    for (Index j = 0; j < dim; ++j) {
      fz(i, j) = ScalarOps<S>::from_index(f(i, j));
      pw(i, j) = ScalarOps<S>::from_index(i == j ? 1 : 0);
      g(i, j) = ScalarOps<S>::from_index(0);
    }
  for (Index l = 0; l <= l_hi; ++l) {
    if (l >= l_lo) g += pw.transpose() * pw;
    pw = (fz * pw).eval();
  }
  return g;
}

template <typename S>
S eval_quadratic(const SMat<S>& g, const IVec& k) {
  const Index dim = k.size();
  S acc = ScalarOps<S>::from_index(0);
  for (Index i = 0; i < dim; ++i) {
    S row = ScalarOps<S>::from_index(0);
    for (Index j = 0; j < dim; ++j) row += g(i, j) * ScalarOps<S>::from_index(k[j]);
    acc += ScalarOps<S>::from_index(k[i]) * row;
  }
  return acc;
}

/// Canonical sign: flip so the first nonzero component is positive.
inline IVec canonical_sign(IVec k) {
  for (Index i = 0; i < k.size(); ++i) {
    if (k[i] > 0) break;
    if (k[i] < 0) {
      k = -k;
      break;
    }
  }
  return k;
}

inline bool lex_less(const IVec& a, const IVec& b) {
  for (Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

template <typename S>
struct QuadMinResult {
  S value;
  IVec argmin;
};

/// Global minimum of k^T G k over nonzero integer vectors, d = 1 fast path:
/// rows k_q are swept over the exact sublevel set {Q <= best}, with the k_p
/// interval per row obtained from the quadratic formula. Deterministic ties:
/// sign-canonicalized, then lexicographically smallest argmin.
template <typename S>
QuadMinResult<S> quad_min_2x2(const SMat<S>& g) {
  const double g00 = ScalarOps<S>::to_double(g(0, 0));
  const double g01 = ScalarOps<S>::to_double(g(0, 1));
  const double g11 = ScalarOps<S>::to_double(g(1, 1));
  require(std::isfinite(g00) && std::isfinite(g01) && std::isfinite(g11) && g00 < 1e290 &&
              g11 < 1e290,
          "quad_min_2x2: form entries exceed double range");
  QuadMinResult<S> best;
  best.argmin = ivec2(0, 1);
  best.value = eval_quadratic(g, best.argmin);
  auto consider = [&](Index q, Index p) {
    if (q == 0 && p == 0) return;
    IVec k = canonical_sign(ivec2(q, p));
    S v = eval_quadratic(g, k);
    if (v < best.value || (v == best.value && lex_less(k, best.argmin))) {
      best.value = v;
      best.argmin = k;
    }
  };
  consider(1, 0);
  consider(1, -1);
  // by symmetry k -> -k it suffices to sweep k_q >= 0
  for (Index q = 0;; ++q) {
    const double qd = static_cast<double>(q);
    double v_best = ScalarOps<S>::to_double(best.value) * (1.0 + 1e-12) + 1.0;
    // g11 p^2 + 2 g01 q p + g00 q^2 <= v_best
    double disc = g01 * g01 * qd * qd - g11 * (g00 * qd * qd - v_best);
    if (disc < 0.0) {
      if (q == 0) continue;
      break;  // row interval empty and rows only get worse: Q >= g00 q^2 / cond
    }
    double center = -g01 * qd / g11;
    double half = std::sqrt(disc) / g11;
    Index p_lo = static_cast<Index>(std::floor(center - half)) - 1;
    Index p_hi = static_cast<Index>(std::ceil(center + half)) + 1;
    for (Index p = p_lo; p <= p_hi; ++p) consider(q, p);
  }
  return best;
}

/// Generic-dimension fallback: box enumeration with doubling and a boundary
/// certificate (|k|^2 term alone exceeding the current best prunes the exterior,
/// since Q(k) >= lambda_min(G) |k|^2 >= |k|_inf^2 * lambda_scale).
template <typename S>
QuadMinResult<S> quad_min_box(const SMat<S>& g, Index radius_hint, bool* confirmed,
                              int threads = 0) {
  const Index dim = g.rows();
  Eigen::MatrixXd gd(dim, dim);
  for (Index i = 0; i < dim; ++i)
    for (Index j = 0; j < dim; ++j) gd(i, j) = ScalarOps<S>::to_double(g(i, j));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gd);
  const double lambda_min = es.eigenvalues().minCoeff();
  require(lambda_min > 0.0, "quad_min_box: quadratic form not positive definite");

  Index radius = std::max<Index>(1, radius_hint);
  QuadMinResult<S> best;
  {
    IVec seed = IVec::Zero(dim);
    seed[dim - 1] = 1;
    best.argmin = seed;
    best.value = eval_quadratic(g, seed);
  }
  const Index radius_cap = 1 << 20;
  for (;; radius *= 2) {
    require(radius <= radius_cap, "quad_min_box: search radius cap exceeded");
    std::vector<QuadMinResult<S>> row_best(2 * radius + 1, best);
    parallel_for_index(
        0, 2 * radius + 1,
        [&](std::int64_t row) {
          IVec k = IVec::Zero(dim);
          k[0] = row - radius;
          QuadMinResult<S>& local = row_best[row];
          // odometer over remaining coordinates
          std::vector<Index> idx(dim - 1, -radius);
          for (;;) {
            for (Index i = 1; i < dim; ++i) k[i] = idx[i - 1];
            if (!k.isZero()) {
              IVec kc = canonical_sign(k);
              S v = eval_quadratic(g, kc);
              if (v < local.value || (v == local.value && lex_less(kc, local.argmin)))
                local = {v, kc};
            }
            Index pos = 0;
            while (pos < dim - 1 && ++idx[pos] > radius) idx[pos++] = -radius;
            if (pos == dim - 1) break;
          }
        },
        threads);
    for (const auto& rb : row_best) {
      if (rb.value < best.value || (rb.value == best.value && lex_less(rb.argmin, best.argmin)))
        best = rb;
    }
    // boundary certificate: any |k|_inf >= radius has Q >= lambda_min * radius^2
    if (lambda_min * static_cast<double>(radius) * static_cast<double>(radius) >
        ScalarOps<S>::to_double(best.value)) {
      if (confirmed) *confirmed = true;
      return best;
    }
  }
}

}  // namespace detail

enum class OrbitVariant { kEndpoint, kSum };

struct OrbitExtension {
  double min_value = 0.0;       // exact integer value, as double (may exceed 2^63)
  mpz_class min_value_exact;    // exact value
  IVec argmin;
  OrbitVariant variant = OrbitVariant::kEndpoint;
  bool confirmed = false;       // minimizer certified global over Z^{2d}
};

/// Minimal orbit extension of Prop.-style trajectories on the Fourier lattice:
/// endpoint variant minimizes |k|^2 + |F^n k|^2, sum variant minimizes
/// sum_{l=0}^{n} |F^l k|^2, both over nonzero integer k. The radius argument is a
/// hint for the generic-dimension path; for d = 1 the sublevel sweep is exact and
/// always certified.
inline OrbitExtension min_orbit_extension(const SymplecticIntMatrix& f, Index n,
                                          Index radius = 4,
                                          OrbitVariant variant = OrbitVariant::kEndpoint,
                                          int threads = 0) {
  require(n >= 0, "min_orbit_extension: n >= 0 required");
  require(radius >= 1, "min_orbit_extension: empty search ball");
  const IMat& fm = f.entries;

  auto run = [&](auto scalar_tag) -> OrbitExtension {
    using S = decltype(scalar_tag);
    detail::SMat<S> g;
    if (variant == OrbitVariant::kEndpoint) {
      // G = I + (F^n)^T F^n, each term a single-index window
      g = detail::window_gram<S>(fm, 0, 0) + detail::window_gram<S>(fm, n, n);
    } else {
      g = detail::window_gram<S>(fm, 0, n);
    }
    OrbitExtension out;
    out.variant = variant;
    if (f.two_d() == 2) {
      auto r = detail::quad_min_2x2<S>(g);
      out.argmin = r.argmin;
      out.confirmed = true;
      if constexpr (std::is_same_v<S, mpz_class>) {
        out.min_value_exact = r.value;
      } else {
        out.min_value_exact = mpz_class(static_cast<long>(r.value));
      }
    } else {
      bool confirmed = false;
      auto r = detail::quad_min_box<S>(g, radius, &confirmed, threads);
      out.argmin = r.argmin;
      out.confirmed = confirmed;
      if constexpr (std::is_same_v<S, mpz_class>) {
        out.min_value_exact = r.value;
      } else {
        out.min_value_exact = mpz_class(static_cast<long>(r.value));
      }
    }
    out.min_value = out.min_value_exact.get_d();
    return out;
  };

  const Index l_hi = n;
  const Index l_lo = 0;
  if (detail::window_fits_int64(fm, l_lo, l_hi)) return run(Index{});
  return run(mpz_class{});
}

/// Gram matrix of the window sum_{l=l_lo}^{l_hi} |F^l k|^2 with automatic scalar
/// selection, exposed for the classical norm formulas.
inline mpz_class window_min(const SymplecticIntMatrix& f, Index l_lo, Index l_hi, IVec* argmin,
                            int threads = 0) {
  require(l_hi >= l_lo, "window_min: empty window");
  const IMat& fm = f.entries;
  auto run = [&](auto scalar_tag) -> mpz_class {
    using S = decltype(scalar_tag);
    auto g = detail::window_gram<S>(fm, l_lo, l_hi);
    if (f.two_d() == 2) {
      auto r = detail::quad_min_2x2<S>(g);
      if (argmin) *argmin = r.argmin;
      if constexpr (std::is_same_v<S, mpz_class>)
        return r.value;
      else
        return mpz_class(static_cast<long>(r.value));
    }
    bool confirmed = false;
    auto r = detail::quad_min_box<S>(g, 4, &confirmed, threads);
    if (argmin) *argmin = r.argmin;
    if constexpr (std::is_same_v<S, mpz_class>)
      return r.value;
    else
      return mpz_class(static_cast<long>(r.value));
  };
  if (detail::window_fits_int64(fm, l_lo, l_hi)) return run(Index{});
  return run(mpz_class{});
}

}  // namespace toral_relax
