#pragma once

// Noise shapes g and their classical / quantum eigenvalue spectra.
//
// The Fourier transform convention is the symplectic one used throughout,
// ghat(xi) = int g(x) e^{-2 pi i xi /\ x} dx; for the radial kernels implemented
// here this coincides with the ordinary transform as a function of |xi|.
//
// The gaussian family is pinned by ghat(xi) = e^{-|xi|^2} exactly, i.e.
// g(x) = pi^d e^{-pi^2 |x|^2}. Its quantum eigenvalues are exact products of
// one-dimensional theta ratios,
//   gamma_{eps,N}(k) = prod_j theta_{eps N}(k_j / N) / theta_{eps N}(0),
// evaluated in the log domain so that deep-quantum values 1 - gamma ~ 1e-26
// retain full relative accuracy.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include <fftw3.h>

#include "toral_relax/common.hpp"
#include "toral_relax/lattice.hpp"
#include "toral_relax/theta.hpp"

namespace toral_relax {

enum class NoiseFamily { kGaussian, kCompactBump, kPowerLaw };

namespace detail {

inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

/// 16-point Gauss-Legendre nodes/weights on [-1, 1].
struct GL16 {
  static const GL16& get() {
    static GL16 g;
    return g;
  }
  double x[16], w[16];

 private:
  GL16() {
    static const double nodes[8] = {0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
                                    0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
                                    0.9445750230732326, 0.9894009349916499};
    static const double weights[8] = {0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
                                      0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
                                      0.0622535239386479, 0.0271524594117541};
    for (int i = 0; i < 8; ++i) {
      x[2 * i] = -nodes[i];
      x[2 * i + 1] = nodes[i];
      w[2 * i] = weights[i];
      w[2 * i + 1] = weights[i];
    }
  }
};

template <typename F>
double gl16_panel(const F& f, double a, double b) {
  const GL16& g = GL16::get();
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double acc = 0.0;
  for (int i = 0; i < 16; ++i) acc += g.w[i] * f(mid + half * g.x[i]);
  return acc * half;
}

/// Lambda_nu(z) = Gamma(nu+1) (2/z)^nu J_nu(z), the normalized Bessel kernel with
/// Lambda_nu(0) = 1; the radial transform in dimension 2d uses nu = d - 1.
inline double bessel_lambda(int nu, double z) {
  if (z < 1e-6) {
    // series: 1 - z^2/(4(nu+1)) + z^4/(32 (nu+1)(nu+2))
    double z2 = z * z;
    return 1.0 - z2 / (4.0 * (nu + 1)) + z2 * z2 / (32.0 * (nu + 1) * (nu + 2));
  }
  double jn = std::cyl_bessel_j(static_cast<double>(nu), z);
  double factor = 1.0;
  for (int i = 1; i <= nu; ++i) factor *= 2.0 * i / z;
  return factor * jn;
}

}  // namespace detail

/// Noise shape g by family. g >= 0, even parity, int g = 1, g(0) > 0.
struct NoiseKernel {
  NoiseFamily family = NoiseFamily::kGaussian;
  Index dim_d = 1;
  double radius = 1.0;      // compact_bump support radius
  double gamma_tail = 5.0;  // power_law exponent, > 2d

  bool is_gaussian() const { return family == NoiseFamily::kGaussian; }

  /// Unnormalized radial profile g0(rho).
  double profile(double rho) const {
    switch (family) {
      case NoiseFamily::kGaussian:
        return std::exp(-kPi * kPi * rho * rho);
      case NoiseFamily::kCompactBump: {
        double t = rho / radius;
        if (t >= 1.0) return 0.0;
        return std::exp(-1.0 / (1.0 - t * t));
      }
      case NoiseFamily::kPowerLaw:
        return std::pow(1.0 + rho, -gamma_tail);
    }
    return 0.0;
  }

  /// int_0^inf g0(rho) rho^{2d-1} drho, so that int_{R^{2d}} g0 = S_{2d-1} * this.
  double radial_mass() const {
    const int dd = static_cast<int>(dim_d);
    auto f = [&](double rho) { return profile(rho) * std::pow(rho, 2 * dd - 1); };
    double acc = 0.0;
    double a = 0.0;
    const double h = family == NoiseFamily::kCompactBump ? radius / 64.0 : 0.25;
    for (int i = 0; i < 2000000; ++i) {
      double b = a + h;
      double panel = detail::gl16_panel(f, a, b);
      acc += panel;
      a = b;
      if (family == NoiseFamily::kCompactBump && a >= radius) break;
      if (family == NoiseFamily::kGaussian && a > 6.0) break;
      if (family == NoiseFamily::kPowerLaw) {
        // monotone envelope tail bound
        double tail = std::pow(1.0 + a, 2.0 * dd - gamma_tail) / (gamma_tail - 2.0 * dd);
        if (tail < 1e-14 * acc) break;
      }
    }
    return acc;
  }

  /// Normalization constant c with g = c * g0 and int g = 1. The unit sphere in
  /// R^{2d} has surface measure 2 pi^d / (d-1)!.
  double norm_const() const {
    const int dd = static_cast<int>(dim_d);
    double fact = 1.0;
    for (int i = 1; i <= dd - 1; ++i) fact *= i;
    double surface = 2.0 * std::pow(kPi, dd) / fact;
    return 1.0 / (surface * radial_mass());
  }

  /// Normalized density g(x) at radius rho.
  double density(double rho) const {
    if (family == NoiseFamily::kGaussian) return std::pow(kPi, static_cast<int>(dim_d)) * profile(rho);
    return norm_const_cached() * profile(rho);
  }

  /// ghat at radius s (normalized so ghat(0) = 1); gaussian is closed-form, the
  /// other families evaluate the radial transform by panelled quadrature with a
  /// per-kernel memo (relative error ~1e-9; results cached, reads lock-free after
  /// first evaluation of a given s).
  double ghat_radial(double s) const {
    if (family == NoiseFamily::kGaussian) return std::exp(-s * s);
    if (s == 0.0) return 1.0;
    {
      std::lock_guard<std::mutex> lock(memo_->mutex);
      auto it = memo_->ghat.find(s);
      if (it != memo_->ghat.end()) return it->second;
    }
    double value = radial_transform(s) / radial_mass_cached();
    std::lock_guard<std::mutex> lock(memo_->mutex);
    memo_->ghat[s] = value;
    return value;
  }

  double norm_const_cached() const {
    std::lock_guard<std::mutex> lock(memo_->mutex);
    if (!memo_->norm_const.has_value()) memo_->norm_const = norm_const();
    return *memo_->norm_const;
  }

  double radial_mass_cached() const {
    std::lock_guard<std::mutex> lock(memo_->mutex);
    if (!memo_->radial_mass.has_value()) memo_->radial_mass = radial_mass();
    return *memo_->radial_mass;
  }

 private:
  /// int_0^inf g0(rho) rho^{2d-1} Lambda_{d-1}(2 pi rho s) drho.
  double radial_transform(double s) const {
    const int dd = static_cast<int>(dim_d);
    auto f = [&](double rho) {
      return profile(rho) * std::pow(rho, 2 * dd - 1) *
             detail::bessel_lambda(dd - 1, kTwoPi * rho * s);
    };
    // panel length resolves both the kernel feature scale and the oscillation
    double h = std::min(family == NoiseFamily::kCompactBump ? radius / 16.0 : 0.25,
                        0.125 / std::max(s, 0.05));
    double acc = 0.0, a = 0.0;
    for (long i = 0; i < 40000000L; ++i) {
      double b = a + h;
      acc += detail::gl16_panel(f, a, b);
      a = b;
      if (family == NoiseFamily::kCompactBump && a >= radius) break;
      if (family == NoiseFamily::kGaussian && a > 6.0) break;
      if (family == NoiseFamily::kPowerLaw) {
        double osc = std::max(1.0, kTwoPi * a * s);
        double env = std::pow(1.0 + a, -gamma_tail) * std::pow(a, 2.0 * dd - 1);
        if (s > 0.05) env *= std::pow(2.0 / (kPi * osc), 0.5) * std::pow(2.0 / (kTwoPi * a * s),
                                                                          dd - 1.0);
        double tail = env * a / std::max(1.0, gamma_tail - 2.0 * dd);
        if (tail < 1e-13 * std::max(std::abs(acc), 1e-6) && a > 2.0) break;
      }
    }
    return acc;
  }

  // memo shared across copies; entries are written once and read-only afterwards
  struct Memo {
    std::mutex mutex;
    std::map<double, double> ghat;
    std::optional<double> norm_const;
    std::optional<double> radial_mass;
  };
  std::shared_ptr<Memo> memo_ = std::make_shared<Memo>();
};

inline NoiseKernel gaussian_kernel(Index d = 1) {
  NoiseKernel k;
  k.family = NoiseFamily::kGaussian;
  k.dim_d = d;
  return k;
}

inline NoiseKernel compact_bump_kernel(double radius, Index d = 1) {
  require(radius > 0.0, "compact_bump: radius > 0 required");
  NoiseKernel k;
  k.family = NoiseFamily::kCompactBump;
  k.dim_d = d;
  k.radius = radius;
  return k;
}

inline NoiseKernel power_law_kernel(double gamma_tail, Index d = 1) {
  require(gamma_tail > 2.0 * static_cast<double>(d),
          "power_law: gamma_tail > 2d required for summability");
  NoiseKernel k;
  k.family = NoiseFamily::kPowerLaw;
  k.dim_d = d;
  k.gamma_tail = gamma_tail;
  return k;
}

struct NoiseEigenvalue {
  double value = 1.0;
  IVec k;
  enum class Side { kClassical, kQuantum } side = Side::kClassical;
  enum class Method { kDirect, kPoisson, kTheta } method = Method::kDirect;
};

/// Classical noise eigenvalue ghat(eps k).
inline double classical_eigenvalue(const NoiseKernel& kernel, double eps, const IVec& k) {
  require(eps > 0.0, "classical_eigenvalue: eps > 0 required");
  double s = eps * std::sqrt(static_cast<double>(k.squaredNorm()));
  return kernel.ghat_radial(s);
}

/// ln ghat(eps k) for the gaussian kernel: exactly -eps^2 |k|^2.
inline double log_classical_eigenvalue_gaussian(double eps, double k_sq) {
  return -eps * eps * k_sq;
}

/// ln gamma_{eps,N}(k) for the gaussian kernel (exact theta-ratio product).
inline double log_gamma_gaussian(double eps, Index n, const IVec& k) {
  const double sigma = eps * static_cast<double>(n);
  double acc = 0.0;
  for (Index j = 0; j < k.size(); ++j)
    acc += log_theta_ratio(sigma, static_cast<double>(k[j]) / static_cast<double>(n));
  return acc;
}

/// gamma table over the full fold domain Z_N^{2d} for d = 1, used by the dense
/// superoperator paths and the non-gaussian eigenvalue evaluations. Built once,
/// then read-only.
class QuantumNoiseTable {
 public:
  QuantumNoiseTable(const NoiseKernel& kernel, double eps, Index n) : n_(n) {
    require(kernel.dim_d == 1, "QuantumNoiseTable: d = 1 only");
    require(eps > 0.0 && n >= 1, "QuantumNoiseTable: eps > 0, N >= 1 required");
    values_.resize(static_cast<size_t>(n * n));
    if (kernel.is_gaussian()) {
      const double sigma = eps * static_cast<double>(n);
      std::vector<double> ratio(static_cast<size_t>(n));
      for (Index j = 0; j < n; ++j) {
        Index kj = fold_min(n) + j;
        ratio[j] = std::exp(log_theta_ratio(sigma, static_cast<double>(kj) / n));
      }
      for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b) values_[static_cast<size_t>(a * n + b)] = ratio[a] * ratio[b];
      return;
    }
    build_folded_fft(kernel, eps);
  }

  /// gamma at lattice point k (any integers; N-periodic).
  double gamma(const IVec& k) const {
    Index a = fold_scalar(k[0], n_) - fold_min(n_);
    Index b = fold_scalar(k[1], n_) - fold_min(n_);
    return values_[static_cast<size_t>(a * n_ + b)];
  }

  double min_gamma_nonzero() const {
    double best = 2.0;
    for (Index a = 0; a < n_; ++a)
      for (Index b = 0; b < n_; ++b) {
        if (a + fold_min(n_) == 0 && b + fold_min(n_) == 0) continue;
        best = std::min(best, values_[static_cast<size_t>(a * n_ + b)]);
      }
    return best;
  }

  double max_gamma_nonzero() const {
    double best = -2.0;
    for (Index a = 0; a < n_; ++a)
      for (Index b = 0; b < n_; ++b) {
        if (a + fold_min(n_) == 0 && b + fold_min(n_) == 0) continue;
        best = std::max(best, values_[static_cast<size_t>(a * n_ + b)]);
      }
    return best;
  }

  Index n() const { return n_; }

 private:
  void build_folded_fft(const NoiseKernel& kernel, double eps) {
    const Index n = n_;
    const double sigma = eps * static_cast<double>(n);
    // fold the sampled kernel g(n0 / sigma) onto Z_N^2; m-shells decay like
    // (N |m| / sigma)^{-gamma} = (|m| / eps)^{-gamma}, fast for eps << 1
    std::vector<double> h(static_cast<size_t>(n * n), 0.0);
    auto sample = [&](double x, double y) {
      return kernel.profile(std::sqrt(x * x + y * y) / sigma);
    };
    Index m_shells = 1;
    if (kernel.family == NoiseFamily::kPowerLaw) {
      double ratio = 1.0 / eps;  // per-shell decay scale
      m_shells = 1;
      while (std::pow(ratio * m_shells, -kernel.gamma_tail) > 1e-16 && m_shells < 64) ++m_shells;
    } else if (kernel.family == NoiseFamily::kCompactBump) {
      m_shells = static_cast<Index>(kernel.radius * sigma / n) + 1;
    }
    for (Index a = 0; a < n; ++a) {
      Index n0q = fold_min(n) + a;
      for (Index b = 0; b < n; ++b) {
        Index n0p = fold_min(n) + b;
        double acc = 0.0;
        for (Index mq = -m_shells; mq <= m_shells; ++mq)
          for (Index mp = -m_shells; mp <= m_shells; ++mp)
            acc += sample(static_cast<double>(n0q + n * mq), static_cast<double>(n0p + n * mp));
        h[static_cast<size_t>(a * n + b)] = acc;
      }
    }
    // wedge DFT: Gamma(k) = sum_n0 h(n0) e^{-2 pi i (k_p n0_q - k_q n0_p)/N}
    std::vector<fftw_complex> in(static_cast<size_t>(n * n)), out(static_cast<size_t>(n * n));
    for (Index a = 0; a < n; ++a) {
      Index n0q = fold_min(n) + a;
      for (Index b = 0; b < n; ++b) {
        Index n0p = fold_min(n) + b;
        Index row = ((n0q % n) + n) % n;
        Index col = ((n0p % n) + n) % n;
        in[static_cast<size_t>(row * n + col)][0] = h[static_cast<size_t>(a * n + b)];
        in[static_cast<size_t>(row * n + col)][1] = 0.0;
      }
    }
    {
      std::lock_guard<std::mutex> lock(detail::fftw_mutex());
      fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), in.data(),
                                        out.data(), FFTW_FORWARD, FFTW_ESTIMATE);
      fftw_execute(plan);
      fftw_destroy_plan(plan);
    }
    double denom = out[0][0];
    require(denom > 0.0, "quantum noise: vanishing normalization sum");
    for (Index kq = 0; kq < n; ++kq) {
      for (Index kp = 0; kp < n; ++kp) {
        // forward FFT index (u, v) pairs with e^{-2 pi i (u n_q + v n_p)/N};
        // wedge phase needs u = k_p, v = -k_q
        Index u = ((kp % n) + n) % n;
        Index v = (((-kq) % n) + n) % n;
        double re = out[static_cast<size_t>(u * n + v)][0] / denom;
        Index a = fold_scalar(kq, n) - fold_min(n);
        Index b = fold_scalar(kp, n) - fold_min(n);
        values_[static_cast<size_t>(a * n + b)] = re;
      }
    }
  }

  Index n_;
  std::vector<double> values_;
};

/// Quantum noise eigenvalue gamma_{eps,N}(k) = sum_n g_{eps N}(n) e^{-2 pi i k /\ n / N}
/// normalized by the same sum at k = 0. Gaussian: exact theta-ratio product (any d).
/// compact_bump: finite direct sum (any d). power_law: folded-kernel table, d = 1.
inline double quantum_eigenvalue(const NoiseKernel& kernel, double eps, Index n, const IVec& k) {
  require(eps > 0.0 && n >= 1, "quantum_eigenvalue: eps > 0, N >= 1 required");
  require(k.size() == 2 * kernel.dim_d, "quantum_eigenvalue: dimension mismatch");
  if (k.size() == 0) return 1.0;
  const double sigma = eps * static_cast<double>(n);
  switch (kernel.family) {
    case NoiseFamily::kGaussian:
      return std::exp(log_gamma_gaussian(eps, n, k));
    case NoiseFamily::kCompactBump: {
      const Index reach = static_cast<Index>(std::floor(kernel.radius * sigma));
      if (reach < 1) return 1.0;  // only the n = 0 term survives
      const Index dim = k.size();
      IVec nv = IVec::Zero(dim);
      double num = 0.0, den = 0.0;
      std::function<void(Index)> walk = [&](Index pos) {
        if (pos == dim) {
          double rho = std::sqrt(static_cast<double>(nv.squaredNorm())) / sigma;
          double gval = kernel.profile(rho);
          if (gval == 0.0) return;
          double phase = -kTwoPi * static_cast<double>(wedge(k, nv)) / static_cast<double>(n);
          num += gval * std::cos(phase);
          den += gval;
          return;
        }
        for (Index t = -reach; t <= reach; ++t) {
          nv[pos] = t;
          walk(pos + 1);
        }
      };
      walk(0);
      require(den > 0.0, "quantum_eigenvalue: vanishing denominator (degenerate bump)");
      return num / den;
    }
    case NoiseFamily::kPowerLaw: {
      require(kernel.dim_d == 1,
              "quantum_eigenvalue: power_law evaluation implemented for d = 1 only");
      QuantumNoiseTable table(kernel, eps, n);
      return table.gamma(k);
    }
  }
  return 1.0;
}

/// True iff the quantum noise operator is exactly the identity (compact support
/// with eps N below the support threshold).
inline bool gamma_identically_one(const NoiseKernel& kernel, double eps, Index n) {
  if (kernel.family != NoiseFamily::kCompactBump) return false;
  return kernel.radius * eps * static_cast<double>(n) <= 1.0;
}

/// Lemma-GES bracket for the gaussian kernel: returns
/// (e^{-eps^2 |k^N|^2},  e^{-eps^2 |k^N|^2} + 4d e^{-(eps N)^2/4}).
inline std::pair<double, double> ges_bounds(double eps, Index n, const IVec& k) {
  require(eps > 0.0 && n >= 1, "ges_bounds: eps > 0, N >= 1 required");
  const Index d = k.size() / 2;
  IVec folded = fold(k, n);
  double lower = std::exp(-eps * eps * static_cast<double>(folded.squaredNorm()));
  double slack = 4.0 * static_cast<double>(d) *
                 std::exp(-eps * eps * static_cast<double>(n) * static_cast<double>(n) / 4.0);
  return {lower, lower + slack};
}

/// Dimensionless normalization sum g~_{eps N}(0) = sum_n g_{eps N}(n); for the
/// gaussian this equals theta_{eps N}(0)^{2d}.
inline double normalization(const NoiseKernel& kernel, double eps, Index n) {
  require(eps > 0.0 && n >= 1, "normalization: eps > 0, N >= 1 required");
  const double sigma = eps * static_cast<double>(n);
  const Index dim = 2 * kernel.dim_d;
  if (kernel.is_gaussian()) return std::pow(theta_zero(sigma), static_cast<double>(dim));
  const double scale = std::pow(sigma, -static_cast<double>(dim));
  if (kernel.family == NoiseFamily::kCompactBump) {
    const Index reach = static_cast<Index>(std::floor(kernel.radius * sigma));
    double acc = 0.0;
    IVec nv = IVec::Zero(dim);
    std::function<void(Index)> walk = [&](Index pos) {
      if (pos == dim) {
        acc += kernel.density(std::sqrt(static_cast<double>(nv.squaredNorm())) / sigma);
        return;
      }
      for (Index t = -reach; t <= reach; ++t) {
        nv[pos] = t;
        walk(pos + 1);
      }
    };
    walk(0);
    require(acc > 0.0, "normalization: vanishing sum");
    return scale * acc;
  }
  // power law (d = 1 lattice): shell sum plus integral tail correction
  require(kernel.dim_d == 1, "normalization: power_law implemented for d = 1");
  const double c = kernel.norm_const_cached();
  const Index reach = std::clamp<Index>(static_cast<Index>(32.0 * sigma), 64, 1024);
  double acc = 0.0;
  for (Index a = -reach; a <= reach; ++a)
    for (Index b = -reach; b <= reach; ++b)
      acc += kernel.density(std::hypot(static_cast<double>(a), static_cast<double>(b)) / sigma);
  // integral over |x| > reach/sigma of c (1+|x|)^{-gamma}
  const double rr = static_cast<double>(reach) / sigma;
  const double g = kernel.gamma_tail;
  double tail = c * kTwoPi * (std::pow(1.0 + rr, 2.0 - g) / (g - 2.0) -
                              std::pow(1.0 + rr, 1.0 - g) / (g - 1.0));
  tail *= sigma * sigma;  // lattice-unit measure
  require(acc > 0.0, "normalization: vanishing sum");
  return scale * (acc + tail);
}

}  // namespace toral_relax
