#pragma once

// Classical noisy / coarse-grained propagator norms on the torus.
//
// For a linear ergodic F with gaussian noise the norms are exact lattice minima:
//   ||T_eps^n||        = exp(-eps^2 min_{k != 0} sum_{l=1}^{n} |F^l k|^2),
//   ||T~_eps^{(n)}||   = exp(-eps^2 min_{k != 0} (|k|^2 + |F^n k|^2)),
// evaluated by the exact quadratic-form machinery in intmin.hpp. Non-gaussian
// kernels use a certified ball search over the lattice. Nonlinear kicked maps go
// through a Galerkin truncation of the Koopman operator.

#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include <fftw3.h>

#include "toral_relax/common.hpp"
#include "toral_relax/intmin.hpp"
#include "toral_relax/lattice.hpp"
#include "toral_relax/noise.hpp"
#include "toral_relax/powernorm.hpp"

namespace toral_relax {

enum class Flavor { kNoisy, kCoarse };
enum class Side { kClassical, kQuantum };

struct PropagatorNorm {
  double value = 1.0;
  double log_value = 0.0;
  Index n = 0;
  IVec maximizer;
  Flavor flavor = Flavor::kNoisy;
  Side side = Side::kClassical;
};

/// One term of a finite Fourier series sum_k c_k w_k with w_k(x) = e^{2 pi i k /\ x}.
struct FourierMode {
  IVec k;
  Complex coeff;
};

using FourierSeries = std::vector<FourierMode>;

inline bool is_hermitian_series(const FourierSeries& f) {
  for (const auto& mode : f) {
    Complex conj_at_minus(0.0, 0.0);
    for (const auto& other : f)
      if (other.k == -mode.k) conj_at_minus += other.coeff;
    if (std::abs(std::conj(conj_at_minus) - mode.coeff) > 1e-12) return false;
  }
  return true;
}

/// Kicked Hamiltonian H = (kappa / (2 pi)^2) cos(2 pi q); under the wedge
/// convention cos(2 pi q) = (w_{(0,1)} + w_{(0,-1)}) / 2.
inline FourierSeries standard_kick(double kappa) {
  double amp = 0.5 * kappa / (kTwoPi * kTwoPi);
  return {{ivec2(0, 1), Complex(amp, 0.0)}, {ivec2(0, -1), Complex(amp, 0.0)}};
}

inline FourierSeries cos_q_observable() {
  return {{ivec2(0, 1), Complex(0.5, 0.0)}, {ivec2(0, -1), Complex(0.5, 0.0)}};
}

/// Canonical map Phi = F o t_v o Phi_1, with Phi_1 the time-1 flow of the kick
/// Hamiltonian (a finite Fourier series with Hermitian symmetry).
struct ClassicalMapSpec {
  SymplecticIntMatrix linear_part;
  Vec translation;      // v in [0,1)^{2d}; empty means zero
  FourierSeries kick;   // empty means no kick

  static ClassicalMapSpec linear(const SymplecticIntMatrix& f) {
    ClassicalMapSpec m;
    m.linear_part = f;
    m.translation = Vec::Zero(f.two_d());
    return m;
  }

  static ClassicalMapSpec make(const SymplecticIntMatrix& f, const Vec& v,
                               const FourierSeries& kick_series) {
    require(v.size() == f.two_d(), "ClassicalMapSpec: translation dimension mismatch");
    require(is_hermitian_series(kick_series),
            "ClassicalMapSpec: kick coefficients must have Hermitian symmetry");
    ClassicalMapSpec m;
    m.linear_part = f;
    m.translation = v;
    m.kick = kick_series;
    return m;
  }

  bool has_kick() const {
    for (const auto& mode : kick)
      if (!mode.k.isZero() && std::abs(mode.coeff) > 0.0) return true;
    return false;
  }

  bool has_translation() const { return translation.size() > 0 && translation.norm() > 0.0; }
  bool is_pure_linear() const { return !has_kick() && !has_translation(); }

  /// Real cosine terms of the kick: H = sum_i A_i cos(2 pi k_i /\ x + phi_i).
  struct CosTerm {
    IVec k;
    double amp;
    double phase;
  };
  std::vector<CosTerm> cos_terms() const {
    std::vector<CosTerm> terms;
    for (const auto& mode : kick) {
      if (mode.k.isZero()) continue;
      IVec kc = detail::canonical_sign(mode.k);
      if (kc != mode.k) continue;  // keep one representative of each +-k pair
      terms.push_back({mode.k, 2.0 * std::abs(mode.coeff), std::arg(mode.coeff)});
    }
    return terms;
  }

  /// Time-t flow of a single cosine term: x + t * 2 pi A sin(2 pi l(x) + phi) * k,
  /// where l(x) = k /\ x is invariant along the flow.
  static Vec cos_term_flow(const CosTerm& term, const Vec& x, double t) {
    double l = 0.0;
    const Index d = x.size() / 2;
    for (Index j = 0; j < d; ++j)
      l += static_cast<double>(term.k[d + j]) * x[j] - static_cast<double>(term.k[j]) * x[d + j];
    double speed = t * kTwoPi * term.amp * std::sin(kTwoPi * l + term.phase);
    Vec y = x;
    for (Index j = 0; j < x.size(); ++j) y[j] += speed * static_cast<double>(term.k[j]);
    return y;
  }

  /// Phi_1(x). A single term (and any family of mutually commuting terms sharing
  /// one wedge direction) is integrated exactly; otherwise Strang splitting with
  /// step 1/64.
  Vec kick_flow(const Vec& x) const {
    auto terms = cos_terms();
    if (terms.empty()) return x;
    if (terms.size() == 1) return cos_term_flow(terms[0], x, 1.0);
    const int steps = 64;
    const double h = 1.0 / steps;
    Vec y = x;
    for (int s = 0; s < steps; ++s) {
      for (size_t i = 0; i + 1 < terms.size(); ++i) y = cos_term_flow(terms[i], y, 0.5 * h);
      y = cos_term_flow(terms.back(), y, h);
      for (size_t i = terms.size() - 1; i-- > 0;) y = cos_term_flow(terms[i], y, 0.5 * h);
    }
    return y;
  }

  /// Phi(x) mod 1.
  Vec apply(const Vec& x) const {
    Vec y = kick_flow(x);
    if (translation.size() > 0) y += translation;
    Eigen::MatrixXd fd = linear_part.entries.cast<double>();
    Vec z = fd * y;
    for (Index j = 0; j < z.size(); ++j) z[j] -= std::floor(z[j]);
    return z;
  }

  Vec apply_n(const Vec& x, Index n) const {
    Vec y = x;
    for (Index i = 0; i < n; ++i) y = apply(y);
    return y;
  }
};

// ---------------------------------------------------------------------------
// Exact norms for linear maps
// ---------------------------------------------------------------------------

namespace detail {

/// Monotone decreasing majorant of |ghat| at radii >= s for the ball-search
/// boundary certificate. Exact for the gaussian; tabulated suffix maximum with a
/// safety factor for the other families.
class GhatEnvelope {
 public:
  GhatEnvelope(const NoiseKernel& kernel, double s_max) : kernel_(kernel) {
    if (kernel.is_gaussian()) return;
    const int samples = 4096;
    s_max_ = std::max(s_max, 8.0);
    table_.resize(samples + 1);
    for (int i = samples; i >= 0; --i) {
      double s = s_max_ * i / samples;
      double v = std::abs(kernel_.ghat_radial(s));
      double next = (i == samples) ? v : table_[i + 1];
      table_[i] = std::max(v, next);
    }
  }

  double operator()(double s) const {
    if (kernel_.is_gaussian()) return std::exp(-s * s);
    if (s >= s_max_) return 2.0 * table_.back() * (s_max_ * s_max_) / (s * s);
    double t = s / s_max_ * (table_.size() - 1);
    int i = static_cast<int>(t);
    return 2.0 * table_[i];  // factor 2 guards the sampling gap
  }

 private:
  const NoiseKernel& kernel_;
  double s_max_ = 8.0;
  std::vector<double> table_;
};

/// Iterates k -> F k exactly, switching to mpz when int64 would overflow.
class ExactIterate {
 public:
  ExactIterate(const IMat& f, const IVec& k) : f_(f) {
    cur_.resize(k.size());
    for (Index i = 0; i < k.size(); ++i) cur_[i] = mpz_class(static_cast<long>(k[i]));
  }

  void step() {
    std::vector<mpz_class> next(cur_.size());
    for (Index i = 0; i < f_.rows(); ++i) {
      mpz_class acc = 0;
      for (Index j = 0; j < f_.cols(); ++j) acc += mpz_class(static_cast<long>(f_(i, j))) * cur_[j];
      next[i] = acc;
    }
    cur_ = std::move(next);
  }

  double norm() const {
    mpz_class acc = 0;
    for (const auto& c : cur_) acc += c * c;
    return std::sqrt(acc.get_d());
  }

 private:
  IMat f_;
  std::vector<mpz_class> cur_;
};

}  // namespace detail

/// max_{0 != k} prod_{l=1}^{n} |ghat(eps F^l k)| in the log domain, with the search
/// ball grown until the boundary certificate |ghat| <= envelope(eps R / mu) < best
/// prunes the exterior. Gaussian reduces to the exact window minimum.
inline PropagatorNorm classical_norm_linear(const SymplecticIntMatrix& f,
                                            const NoiseKernel& kernel, double eps, Index n,
                                            Index radius = 4) {
  require(eps > 0.0, "classical_norm_linear: eps > 0 required");
  require(n >= 0, "classical_norm_linear: n >= 0 required");
  PropagatorNorm out;
  out.flavor = Flavor::kNoisy;
  out.side = Side::kClassical;
  out.n = n;
  out.maximizer = IVec::Zero(f.two_d());
  if (n == 0) return out;  // empty product

  if (kernel.is_gaussian()) {
    IVec argmin;
    mpz_class v = window_min(f, 1, n, &argmin);
    out.log_value = -eps * eps * v.get_d();
    out.value = std::exp(out.log_value);
    out.maximizer = argmin;
    return out;
  }

  detail::GhatEnvelope envelope(kernel, eps * 64.0);
  const double mu = f.norm_mu;
  double best = -std::numeric_limits<double>::infinity();
  IVec best_k = IVec::Zero(f.two_d());
  Index r = std::max<Index>(radius, 2);
  const Index dim = f.two_d();
  for (;; r *= 2) {
    require(r <= (1 << 18), "classical_norm_linear: search radius cap exceeded");
    IVec k = IVec::Zero(dim);
    std::function<void(Index)> walk = [&](Index pos) {
      if (pos == dim) {
        if (k.isZero()) return;
        detail::ExactIterate it(f.entries, k);
        double acc = 0.0;
        for (Index l = 1; l <= n; ++l) {
          it.step();
          double g = std::abs(kernel.ghat_radial(eps * it.norm()));
          if (g == 0.0) {
            acc = -std::numeric_limits<double>::infinity();
            break;
          }
          acc += std::log(g);
          if (acc <= best) break;
        }
        if (acc > best) {
          best = acc;
          best_k = k;
        }
        return;
      }
      for (Index t = -r; t <= r; ++t) {
        k[pos] = t;
        walk(pos + 1);
      }
    };
    walk(0);
    // any |k|_inf >= r has |F k| >= r / mu, so the first factor already bounds it
    if (std::log(envelope(eps * static_cast<double>(r) / mu)) < best) break;
  }
  out.log_value = best;
  out.value = std::exp(best);
  out.maximizer = best_k;
  return out;
}

/// Coarse-grained two-factor norm max_{k != 0} |ghat(eps k) ghat(eps F^n k)|.
inline PropagatorNorm classical_norm_coarse_linear(const SymplecticIntMatrix& f,
                                                   const NoiseKernel& kernel, double eps, Index n,
                                                   Index radius = 4) {
  require(eps > 0.0, "classical_norm_coarse_linear: eps > 0 required");
  require(n >= 0, "classical_norm_coarse_linear: n >= 0 required");
  PropagatorNorm out;
  out.flavor = Flavor::kCoarse;
  out.side = Side::kClassical;
  out.n = n;
  if (kernel.is_gaussian()) {
    OrbitExtension ext = min_orbit_extension(f, n, radius, OrbitVariant::kEndpoint);
    out.log_value = -eps * eps * ext.min_value;
    out.value = std::exp(out.log_value);
    out.maximizer = ext.argmin;
    return out;
  }
  detail::GhatEnvelope envelope(kernel, eps * 64.0);
  double best = -std::numeric_limits<double>::infinity();
  IVec best_k = IVec::Zero(f.two_d());
  const Index dim = f.two_d();
  Index r = std::max<Index>(radius, 2);
  for (;; r *= 2) {
    require(r <= (1 << 18), "classical_norm_coarse_linear: search radius cap exceeded");
    IVec k = IVec::Zero(dim);
    std::function<void(Index)> walk = [&](Index pos) {
      if (pos == dim) {
        if (k.isZero()) return;
        double g0 = std::abs(kernel.ghat_radial(
            eps * std::sqrt(static_cast<double>(k.squaredNorm()))));
        if (g0 == 0.0) return;
        double acc = std::log(g0);
        if (acc <= best) return;
        detail::ExactIterate it(f.entries, k);
        for (Index l = 0; l < n; ++l) it.step();
        double g1 = std::abs(kernel.ghat_radial(eps * it.norm()));
        if (g1 == 0.0) return;
        acc += std::log(g1);
        if (acc > best) {
          best = acc;
          best_k = k;
        }
        return;
      }
      for (Index t = -r; t <= r; ++t) {
        k[pos] = t;
        walk(pos + 1);
      }
    };
    walk(0);
    if (std::log(envelope(eps * static_cast<double>(r))) < best) break;  // first factor bound
  }
  out.log_value = best;
  out.value = std::exp(best);
  out.maximizer = best_k;
  return out;
}

// ---------------------------------------------------------------------------
// Galerkin-truncated Koopman operator (d = 1)
// ---------------------------------------------------------------------------

/// Mode basis {0 < |k|_inf <= K} with dense indexing.
struct GalerkinBasis {
  Index cutoff = 0;
  std::vector<IVec> modes;

  explicit GalerkinBasis(Index k_cut) : cutoff(k_cut) {
    require(k_cut >= 1, "GalerkinBasis: K >= 1 required");
    for (Index a = -k_cut; a <= k_cut; ++a)
      for (Index b = -k_cut; b <= k_cut; ++b) {
        if (a == 0 && b == 0) continue;
        modes.push_back(ivec2(a, b));
      }
  }

  Index dim() const { return static_cast<Index>(modes.size()); }

  Index index(const IVec& k) const {
    if (std::max(std::abs(k[0]), std::abs(k[1])) > cutoff || (k[0] == 0 && k[1] == 0)) return -1;
    Index a = k[0] + cutoff, b = k[1] + cutoff;
    Index idx = a * (2 * cutoff + 1) + b;
    // skip the zero mode slot
    Index zero_slot = cutoff * (2 * cutoff + 1) + cutoff;
    return idx < zero_slot ? idx : idx - 1;
  }
};

/// Sparse column representation of <w_j, w_k o Phi> over the Galerkin basis.
struct KoopmanMatrix {
  GalerkinBasis basis;
  std::vector<std::vector<std::pair<Index, Complex>>> columns;  // (row, value)

  explicit KoopmanMatrix(Index k_cut) : basis(k_cut), columns(basis.dim()) {}

  void apply(CVec& v) const {
    CVec out = CVec::Zero(v.size());
    for (Index c = 0; c < basis.dim(); ++c) {
      if (v[c] == Complex(0.0, 0.0)) continue;
      for (const auto& [row, val] : columns[c]) out[row] += val * v[c];
    }
    v = out;
  }

  void apply_adjoint(CVec& v) const {
    CVec out = CVec::Zero(v.size());
    for (Index c = 0; c < basis.dim(); ++c) {
      Complex acc(0.0, 0.0);
      for (const auto& [row, val] : columns[c]) acc += std::conj(val) * v[row];
      out[c] = acc;
    }
    v = out;
  }

  double column_norm(Index c) const {
    double acc = 0.0;
    for (const auto& [row, val] : columns[c]) acc += std::norm(val);
    return std::sqrt(acc);
  }
};

namespace detail {

/// Fourier coefficients of the 1-periodic function t -> e^{-2 pi i m s(t)} where
/// s(t) = sum_i a_i sin(2 pi c_i t + phi_i), by FFT with grid doubling to 1e-11.
inline std::vector<Complex> phase_function_coefficients(
    const std::function<double(double)>& s_func, Index m, int& grid_out) {
  int grid = 256;
  std::vector<Complex> prev;
  for (; grid <= 1 << 16; grid *= 2) {
    std::vector<fftw_complex> in(grid), out(grid);
    for (int i = 0; i < grid; ++i) {
      double t = static_cast<double>(i) / grid;
      double phase = -kTwoPi * static_cast<double>(m) * s_func(t);
      in[i][0] = std::cos(phase);
      in[i][1] = std::sin(phase);
    }
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      fftw_plan plan =
          fftw_plan_dft_1d(grid, in.data(), out.data(), FFTW_FORWARD, FFTW_ESTIMATE);
      fftw_execute(plan);
      fftw_destroy_plan(plan);
    }
    std::vector<Complex> coeffs(grid);
    for (int i = 0; i < grid; ++i)
      coeffs[i] = Complex(out[i][0] / grid, out[i][1] / grid);
    if (!prev.empty()) {
      double diff = 0.0;
      for (int i = 0; i < grid / 2 && i < 64; ++i) {
        diff = std::max(diff, std::abs(coeffs[i] - prev[i]));
        diff = std::max(diff, std::abs(coeffs[(grid - 1 - i + 1) % grid] -
                                       prev[(prev.size() - i) % prev.size()]));
      }
      if (diff < 1e-11) {
        grid_out = grid;
        return coeffs;
      }
    }
    prev = coeffs;
  }
  grid_out = 1 << 16;
  return prev;
}

}  // namespace detail

/// Galerkin matrix elements <w_j, w_k o Phi> over {0 < |k|_inf <= K}.
///
/// Exact permutation-with-phase when the kick is absent; a q-only (or p-only) kick
/// factorizes through 1-d Fourier coefficients of e^{-2 pi i m s(.)} and stays
/// exact up to the 1e-11 coefficient tolerance. Mixed kicks are not needed by the
/// experiments and are rejected.
inline KoopmanMatrix galerkin_koopman(const ClassicalMapSpec& map, Index k_cut) {
  require(map.linear_part.dim_d == 1, "galerkin_koopman: d = 1 only");
  KoopmanMatrix km(k_cut);
  const IMat& finv = map.linear_part.inverse;
  const Vec& v = map.translation;

  auto translation_phase = [&](const IVec& m) {
    if (v.size() == 0) return Complex(1.0, 0.0);
    double w = static_cast<double>(m[1]) * v[0] - static_cast<double>(m[0]) * v[1];
    return std::exp(Complex(0.0, kTwoPi * w));
  };

  if (!map.has_kick()) {
    for (Index c = 0; c < km.basis.dim(); ++c) {
      IVec k = km.basis.modes[c];
      IVec m = finv * k;
      Index row = km.basis.index(m);
      if (row < 0) continue;  // folded outside the cutoff: dropped column
      km.columns[c].emplace_back(row, translation_phase(m));
    }
    return km;
  }

  auto terms = map.cos_terms();
  bool q_only = true, p_only = true;
  for (const auto& t : terms) {
    if (t.k[0] != 0) q_only = false;  // q-only kick has modes (0, +-c)
    if (t.k[1] != 0) p_only = false;
  }
  require(q_only || p_only,
          "galerkin_koopman: mixed q/p kicks unsupported; supply a q-only or p-only kick");

  // q-only: Phi_1(q,p) = (q, p + s(q)); w_m o Phi_1 = w_m e^{-2 pi i m_q s(q)} with
  // s(q) = sum 2 pi A c sin(2 pi c q + phi). p-only symmetric.
  auto s_func = [&](double t) {
    double acc = 0.0;
    for (const auto& term : terms) {
      double c = static_cast<double>(q_only ? term.k[1] : -term.k[0]);
      acc += kTwoPi * term.amp * std::sin(kTwoPi * c * t + term.phase);
    }
    return acc;
  };

  for (Index c = 0; c < km.basis.dim(); ++c) {
    IVec k = km.basis.modes[c];
    IVec m = finv * k;
    Complex phase = translation_phase(m);
    Index mult = q_only ? m[0] : m[1];
    if (mult == 0) {
      Index row = km.basis.index(m);
      if (row >= 0) km.columns[c].emplace_back(row, phase);
      continue;
    }
    int grid = 0;
    auto coeffs = detail::phase_function_coefficients(s_func, mult, grid);
    for (int t = -grid / 2 + 1; t < grid / 2; ++t) {
      Complex cf = coeffs[(t % grid + grid) % grid];
      if (std::abs(cf) < 1e-14) continue;
      IVec j = m;
      if (q_only)
        j[1] += t;  // e^{2 pi i t q} = w_{(0,t)}
      else
        j[0] -= t;  // e^{2 pi i t p} = w_{(-t,0)}
      Index row = km.basis.index(j);
      if (row < 0) continue;
      km.columns[c].emplace_back(row, phase * cf);
    }
  }
  return km;
}

struct TruncatedNormResult {
  PropagatorNorm norm;
  double sensitivity = 0.0;  // relative change when recomputed at cutoff 2K
};

/// Largest singular value of (diag ghat(eps k) . Koopman)^n on the truncated
/// nonzero-mode space, with a truncation-sensitivity recomputation at 2K.
inline TruncatedNormResult classical_norm_truncated(const ClassicalMapSpec& map,
                                                    const NoiseKernel& kernel, double eps, Index n,
                                                    Index k_cut,
                                                    const PowerNormOptions& opts = {}) {
  require(map.linear_part.dim_d == 1, "classical_norm_truncated: d = 1 only");
  require(n >= 0, "classical_norm_truncated: n >= 0 required");
  auto eval = [&](Index cut) -> double {
    if (n == 0) return 1.0;
    KoopmanMatrix km = galerkin_koopman(map, cut);
    const Index dim = km.basis.dim();
    Vec ghat(dim);
    for (Index i = 0; i < dim; ++i)
      ghat[i] = classical_eigenvalue(kernel, eps, km.basis.modes[i]);
    auto apply = [&](CVec& w) {
      for (Index rep = 0; rep < n; ++rep) {
        km.apply(w);
        for (Index i = 0; i < dim; ++i) w[i] *= ghat[i];
      }
    };
    auto apply_adjoint = [&](CVec& w) {
      for (Index rep = 0; rep < n; ++rep) {
        for (Index i = 0; i < dim; ++i) w[i] *= ghat[i];
        km.apply_adjoint(w);
      }
    };
    PowerNormResult r = power_norm(dim, apply, apply_adjoint, opts);
    require(r.converged, "classical_norm_truncated: power iteration stagnation");
    return r.sigma_max;
  };
  double v1 = eval(k_cut);
  double v2 = eval(2 * k_cut);
  TruncatedNormResult out;
  out.norm.value = v1;
  out.norm.log_value = std::log(v1);
  out.norm.n = n;
  out.norm.flavor = Flavor::kNoisy;
  out.norm.side = Side::kClassical;
  out.norm.maximizer = IVec::Zero(2);
  out.sensitivity = std::abs(v1 - v2) / std::max(v1, 1e-300);
  return out;
}

/// Correlation <w_j, w_k o Phi^n> by trapezoidal quadrature on an M x M grid,
/// doubled until successive values differ by < 1e-9.
inline Complex correlation(const ClassicalMapSpec& map, const IVec& j, const IVec& k, Index n) {
  require(map.linear_part.dim_d == 1, "correlation: d = 1 only");
  Complex prev(0.0, 0.0);
  bool have_prev = false;
  for (int grid = 64; grid <= 2048; grid *= 2) {
    Complex acc(0.0, 0.0);
    for (int a = 0; a < grid; ++a) {
      for (int b = 0; b < grid; ++b) {
        Vec x(2);
        x << static_cast<double>(a) / grid, static_cast<double>(b) / grid;
        Vec y = map.apply_n(x, n);
        double phase = kTwoPi * ((static_cast<double>(k[1]) * y[0] -
                                  static_cast<double>(k[0]) * y[1]) -
                                 (static_cast<double>(j[1]) * x[0] -
                                  static_cast<double>(j[0]) * x[1]));
        acc += std::exp(Complex(0.0, phase));
      }
    }
    acc /= static_cast<double>(grid) * static_cast<double>(grid);
    if (have_prev && std::abs(acc - prev) < 1e-9) return acc;
    prev = acc;
    have_prev = true;
  }
  return prev;  // best available; quadrature non-convergence is benign for |corr|
}

/// Least-squares fit of ln|corr| against n over [n_lo, n_hi]; returns the decay
/// rate sigma_hat = e^{slope} (the measured mixing rate).
inline double measure_mixing_rate(const ClassicalMapSpec& map, const IVec& j, const IVec& k,
                                  Index n_lo, Index n_hi) {
  require(n_hi > n_lo, "measure_mixing_rate: need at least two points");
  std::vector<double> xs, ys;
  for (Index n = n_lo; n <= n_hi; ++n) {
    double c = std::abs(correlation(map, j, k, n));
    if (c < 1e-14) break;
    xs.push_back(static_cast<double>(n));
    ys.push_back(std::log(c));
  }
  require(xs.size() >= 2, "measure_mixing_rate: correlations vanish too fast to fit");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double m = static_cast<double>(xs.size());
  double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return std::exp(slope);
}

}  // namespace toral_relax
