#pragma once

// Quantization on the torus: Weyl matrices, admissible Bloch angles, quantum
// Koopman superoperators, noise superoperators, and the exact quantum norm
// formulas
//   ||T_{eps,N}^n||      = max_{0 != k in Z_N^{2d}} prod_{l=1}^{n} gamma_{eps,N}(F^l k),
//   ||T~_{eps,N}^{(n)}|| = max_{0 != k} gamma_{eps,N}(k) gamma_{eps,N}(F^n k).
//
// Dense paths are d = 1. The Weyl gauge is the position-space construction with
// basis coefficients at positions (j + theta_q)/N and quasiperiodic extension
// c_{j+N} = e^{2 pi i theta_p} c_j; the CCR, quasiperiodicity and W_k^* = W_{-k}
// identities hold exactly and are pinned by tests.

#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <fftw3.h>

#include "toral_relax/classical.hpp"
#include "toral_relax/common.hpp"
#include "toral_relax/intmin.hpp"
#include "toral_relax/lattice.hpp"
#include "toral_relax/noise.hpp"
#include "toral_relax/powernorm.hpp"

namespace toral_relax {

/// Dimension parameter N (h = 1/N), torus half-dimension d, and the Bloch angle.
struct QuantumSetting {
  Index n = 1;
  Index dim_d = 1;
  Vec theta;  // in [0,1)^{2d}

  static QuantumSetting make(Index n, const Vec& theta) {
    require(n >= 1, "QuantumSetting: N >= 1 required");
    require(theta.size() % 2 == 0 && theta.size() > 0, "QuantumSetting: theta in [0,1)^{2d}");
    QuantumSetting s;
    s.n = n;
    s.dim_d = theta.size() / 2;
    s.theta = theta;
    for (Index i = 0; i < theta.size(); ++i) {
      double t = theta[i] - std::floor(theta[i]);
      s.theta[i] = t;
    }
    return s;
  }

  static QuantumSetting make_d1(Index n, double theta_q, double theta_p) {
    Vec t(2);
    t << theta_q, theta_p;
    return make(n, t);
  }

  double hbar() const { return 1.0 / (kTwoPi * static_cast<double>(n)); }
  Index hilbert_dim() const {
    Index dim = 1;
    for (Index i = 0; i < dim_d; ++i) dim *= n;
    return dim;
  }
};

// ---------------------------------------------------------------------------
// Admissible Bloch angles (Eq. qbc)
// ---------------------------------------------------------------------------

namespace detail {

/// (A.B, C.D) contraction vector of the block decomposition F = [[A,B],[C,D]].
inline IVec qbc_contraction(const IMat& f) {
  const Index d = f.rows() / 2;
  IVec v(2 * d);
  for (Index i = 0; i < d; ++i) {
    Index ab = 0, cd = 0;
    for (Index j = 0; j < d; ++j) {
      ab += f(i, j) * f(i, d + j);
      cd += f(d + i, j) * f(d + i, d + j);
    }
    v[i] = ab;
    v[d + i] = cd;
  }
  return v;
}

inline double mod1(double x) {
  double r = x - std::floor(x);
  if (r >= 1.0) r -= 1.0;
  return r;
}

}  // namespace detail

/// True iff (N/2)(A.B, C.D)^T + F theta = theta mod 1 within tolerance.
inline bool is_admissible(const SymplecticIntMatrix& f, Index n, const Vec& theta,
                          double tol = 1e-9) {
  IVec contraction = detail::qbc_contraction(f.entries);
  Eigen::MatrixXd fd = f.entries.cast<double>();
  Vec lhs = 0.5 * static_cast<double>(n) * contraction.cast<double>() + fd * theta - theta;
  for (Index i = 0; i < lhs.size(); ++i) {
    double frac = std::abs(lhs[i] - std::round(lhs[i]));
    if (frac > tol) return false;
  }
  return true;
}

/// All admissible angles for (F, N). For F = I every angle works and the canonical
/// theta = 0 is returned; for F - I invertible the |det(F - I)| solutions
/// theta = (F - I)^{-1}((N/2)(A.B, C.D)^T + k) mod 1 are enumerated exactly, with
/// theta = 0 listed first whenever admissible. A singular F - I (other than F = I)
/// is reported, not guessed.
inline std::vector<Vec> admissible_angles(const SymplecticIntMatrix& f, Index n) {
  const Index dim = f.two_d();
  if (f.entries == IMat::Identity(dim, dim)) return {Vec::Zero(dim)};
  IMat fmi = f.entries - IMat::Identity(dim, dim);
  // exact determinant via the integer characteristic polynomial: det = (-1)^dim p(0)
  ZPoly p = char_poly(fmi);
  mpz_class det_z = p[0];
  if (dim % 2 != 0) det_z = -det_z;
  require(det_z != 0,
          "admissible_angles: F - I singular; supply the reduction for the non-singular block");
  const long det_abs = std::abs(det_z.get_si());

  Eigen::MatrixXd fmi_inv = fmi.cast<double>().inverse();
  IVec contraction = detail::qbc_contraction(f.entries);
  std::vector<Vec> out;
  auto push_unique = [&](const Vec& theta) {
    for (const auto& have : out)
      if ((have - theta).cwiseAbs().maxCoeff() < 1e-9) return;
    out.push_back(theta);
  };
  // enumerate k over a box until all |det| residue classes are found
  for (Index box = det_abs; static_cast<long>(out.size()) < det_abs && box <= 16 * det_abs;
       box *= 2) {
    IVec k = IVec::Zero(dim);
    std::function<void(Index)> walk = [&](Index pos) {
      if (static_cast<long>(out.size()) >= det_abs) return;
      if (pos == dim) {
        Vec rhs = 0.5 * static_cast<double>(n) * contraction.cast<double>() + k.cast<double>();
        Vec theta = fmi_inv * rhs;
        for (Index i = 0; i < dim; ++i) theta[i] = detail::mod1(theta[i]);
        if (is_admissible(f, n, theta)) push_unique(theta);
        return;
      }
      for (Index t = 0; t < box; ++t) {
        k[pos] = t;
        walk(pos + 1);
      }
    };
    walk(0);
  }
  require(static_cast<long>(out.size()) == det_abs,
          "admissible_angles: failed to enumerate all solutions");
  // canonical ordering: theta = 0 first when admissible, then lexicographic
  std::sort(out.begin(), out.end(), [](const Vec& a, const Vec& b) {
    for (Index i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return a[i] < b[i];
    return false;
  });
  return out;
}

/// Canonical angle: 0 if admissible, else the first admissible angle.
inline Vec canonical_angle(const SymplecticIntMatrix& f, Index n) {
  Vec zero = Vec::Zero(f.two_d());
  if (is_admissible(f, n, zero)) return zero;
  auto all = admissible_angles(f, n);
  require(!all.empty(), "canonical_angle: no admissible angle");
  return all.front();
}

// ---------------------------------------------------------------------------
// Quasiperiodicity phase and Weyl matrices
// ---------------------------------------------------------------------------

/// alpha(k, m, theta) = (1/2) k /\ m + (N/2) m_q . m_p + m /\ theta, reduced mod 1.
inline double fold_phase(const IVec& k, const IVec& m, const Vec& theta, Index n) {
  const Index d = k.size() / 2;
  double alpha = 0.5 * static_cast<double>(wedge(k, m));
  Index mqmp = 0;
  for (Index j = 0; j < d; ++j) mqmp += m[j] * m[d + j];
  alpha += 0.5 * static_cast<double>(n) * static_cast<double>(mqmp);
  for (Index j = 0; j < d; ++j)
    alpha += static_cast<double>(m[d + j]) * theta[j] - static_cast<double>(m[j]) * theta[d + j];
  return detail::mod1(alpha);
}

namespace detail {

inline Index floor_div(Index a, Index b) {
  Index q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

/// Nonzero entries of W_k on H_N(theta), d = 1: W_k has the single nonzero
/// column (j - k_q) mod N in row j with phase
///   e^{-i pi k_q k_p / N} e^{2 pi i k_p (j + theta_q)/N} e^{2 pi i theta_p floor((j-k_q)/N)}.
struct WeylEntries {
  Index n;
  Index kq, kp;
  double theta_q, theta_p;

  WeylEntries(const IVec& k, const QuantumSetting& s)
      : n(s.n), kq(k[0]), kp(k[1]), theta_q(s.theta[0]), theta_p(s.theta[1]) {}

  Index col(Index j) const { return ((j - kq) % n + n) % n; }

  Complex phase(Index j) const {
    double arg = -kPi * static_cast<double>(kq) * static_cast<double>(kp) / n +
                 kTwoPi * static_cast<double>(kp) * (static_cast<double>(j) + theta_q) / n +
                 kTwoPi * theta_p * static_cast<double>(floor_div(j - kq, n));
    return std::exp(Complex(0.0, arg));
  }
};

}  // namespace detail

/// Dense N x N Weyl matrix W_k (d = 1), unitary; satisfies the CCR, the
/// quasiperiodicity identity with fold_phase, and W_k^* = W_{-k} exactly.
inline CMat weyl_matrix(const IVec& k, const QuantumSetting& s) {
  require(s.dim_d == 1, "weyl_matrix: dense path is d = 1 only");
  const Index n = s.n;
  detail::WeylEntries w(k, s);
  CMat m = CMat::Zero(n, n);
  for (Index j = 0; j < n; ++j) m(j, w.col(j)) = w.phase(j);
  return m;
}

// ---------------------------------------------------------------------------
// Fourier-operator coefficients (d = 1)
// ---------------------------------------------------------------------------

/// Indexing of the fold domain Z_N^2 into a flat coefficient vector.
struct CoeffIndexer {
  Index n;
  explicit CoeffIndexer(Index n_in) : n(n_in) {}
  Index dim() const { return n * n; }
  Index index(Index kq, Index kp) const {
    return (fold_scalar(kq, n) - fold_min(n)) * n + (fold_scalar(kp, n) - fold_min(n));
  }
  Index index(const IVec& k) const { return index(k[0], k[1]); }
  IVec mode(Index idx) const { return ivec2(idx / n + fold_min(n), idx % n + fold_min(n)); }
  Index zero_index() const { return index(0, 0); }
};

/// Operator in the orthonormal Weyl basis: A = sum_k a_k W_k, ||A||_HS^2 = sum |a_k|^2.
struct FourierOperator {
  QuantumSetting setting;
  CVec coeffs;

  static FourierOperator zero(const QuantumSetting& s) {
    require(s.dim_d == 1, "FourierOperator: d = 1 only");
    FourierOperator f;
    f.setting = s;
    f.coeffs = CVec::Zero(s.n * s.n);
    return f;
  }

  double hs_norm() const { return coeffs.norm(); }
};

/// Weyl quantization of a finite Fourier series: out-of-domain modes fold with the
/// quasiperiodicity phase, exactly.
inline FourierOperator op_n_coeffs(const FourierSeries& f, const QuantumSetting& s) {
  FourierOperator a = FourierOperator::zero(s);
  CoeffIndexer ix(s.n);
  for (const auto& mode : f) {
    IVec k0 = fold(mode.k, s.n);
    IVec m = mode.k - k0;
    for (Index i = 0; i < m.size(); ++i) m[i] /= s.n;
    double alpha = fold_phase(k0, m, s.theta, s.n);
    a.coeffs[ix.index(k0)] += mode.coeff * std::exp(Complex(0.0, kTwoPi * alpha));
  }
  return a;
}

/// Dense matrix from coefficients: A = sum_k a_k W_k. O(N^3).
inline CMat coeffs_to_matrix(const FourierOperator& a) {
  const Index n = a.setting.n;
  CoeffIndexer ix(n);
  CMat m = CMat::Zero(n, n);
  for (Index kq = fold_min(n); kq <= fold_max(n); ++kq) {
    for (Index kp = fold_min(n); kp <= fold_max(n); ++kp) {
      Complex c = a.coeffs[ix.index(kq, kp)];
      if (c == Complex(0.0, 0.0)) continue;
      detail::WeylEntries w(ivec2(kq, kp), a.setting);
      for (Index j = 0; j < n; ++j) m(j, w.col(j)) += c * w.phase(j);
    }
  }
  return m;
}

/// Coefficients from a dense matrix: a_k = N^{-1} Tr(W_k^* A). O(N^3).
inline FourierOperator matrix_to_coeffs(const CMat& m, const QuantumSetting& s) {
  const Index n = s.n;
  FourierOperator a = FourierOperator::zero(s);
  CoeffIndexer ix(n);
  for (Index kq = fold_min(n); kq <= fold_max(n); ++kq) {
    for (Index kp = fold_min(n); kp <= fold_max(n); ++kp) {
      detail::WeylEntries w(ivec2(kq, kp), s);
      Complex acc(0.0, 0.0);
      for (Index j = 0; j < n; ++j) acc += std::conj(w.phase(j)) * m(j, w.col(j));
      a.coeffs[ix.index(kq, kp)] = acc / static_cast<double>(n);
    }
  }
  return a;
}

/// Weyl quantization as a dense matrix.
inline CMat op_n(const FourierSeries& f, const QuantumSetting& s) {
  return coeffs_to_matrix(op_n_coeffs(f, s));
}

// ---------------------------------------------------------------------------
// Superoperators on coefficient space
// ---------------------------------------------------------------------------

/// The quantum Koopman operator of a linear symplectomorphism acting on Weyl
/// coefficients: slot k receives a_k' at fold(F^{-1} k) with the quasiperiodicity
/// phase (Eq. QCatMap + Wq-P). Unitary; requires an admissible angle.
struct KoopmanSuperLinear {
  QuantumSetting setting;
  std::vector<Index> target;   // image slot of each source slot
  std::vector<Complex> phase;  // unit-modulus phase carried to the target

  static KoopmanSuperLinear make(const SymplecticIntMatrix& f, const QuantumSetting& s) {
    require(s.dim_d == 1, "KoopmanSuperLinear: d = 1 only");
    require(is_admissible(f, s.n, s.theta), "KoopmanSuperLinear: inadmissible Bloch angle");
    KoopmanSuperLinear k;
    k.setting = s;
    CoeffIndexer ix(s.n);
    k.target.resize(ix.dim());
    k.phase.resize(ix.dim());
    for (Index idx = 0; idx < ix.dim(); ++idx) {
      IVec mode = ix.mode(idx);
      IVec image = f.inverse * mode;
      IVec folded = fold(image, s.n);
      IVec m = image - folded;
      for (Index i = 0; i < m.size(); ++i) m[i] /= s.n;
      double alpha = fold_phase(folded, m, s.theta, s.n);
      k.target[idx] = ix.index(folded);
      k.phase[idx] = std::exp(Complex(0.0, kTwoPi * alpha));
    }
    return k;
  }

  void apply(CVec& v) const {
    CVec out = CVec::Zero(v.size());
    for (Index i = 0; i < static_cast<Index>(target.size()); ++i)
      out[target[i]] += phase[i] * v[i];
    v = out;
  }

  void apply_inverse(CVec& v) const {
    CVec out(v.size());
    for (Index i = 0; i < static_cast<Index>(target.size()); ++i)
      out[i] = std::conj(phase[i]) * v[target[i]];
    v = out;
  }
};

/// Quantized translation: the Weyl matrix W_{[Nv]} with half-integers rounded
/// toward +infinity.
inline IVec nearest_lattice_vector(const Vec& v, Index n) {
  IVec k(v.size());
  for (Index i = 0; i < v.size(); ++i)
    k[i] = static_cast<Index>(std::floor(static_cast<double>(n) * v[i] + 0.5));
  return k;
}

inline CMat quantize_translation(const Vec& v, const QuantumSetting& s) {
  require(s.dim_d == 1, "quantize_translation: d = 1 only");
  return weyl_matrix(nearest_lattice_vector(v, s.n), s);
}

/// Time-1 kick propagator exp(-2 pi i N Op_N(H)) via Hermitian eigendecomposition.
inline CMat kick_propagator(const FourierSeries& h, const QuantumSetting& s) {
  require(s.dim_d == 1, "kick_propagator: d = 1 only");
  CMat op = op_n(h, s);
  require((op - op.adjoint()).norm() <= 1e-12 * std::max(1.0, op.norm()),
          "kick_propagator: Op_N(H) is not Hermitian (bad kick coefficients)");
  Eigen::SelfAdjointEigenSolver<CMat> es((op + op.adjoint()) * 0.5);
  const Index n = s.n;
  CVec diag(n);
  for (Index i = 0; i < n; ++i)
    diag[i] = std::exp(Complex(0.0, -kTwoPi * static_cast<double>(n) * es.eigenvalues()[i]));
  return es.eigenvectors() * diag.asDiagonal() * es.eigenvectors().adjoint();
}

/// Composite superoperator for a general quantizable map Phi = F o t_v o Phi_1:
/// U(Phi) = U(Phi_1) o U(t_v) o U(F) on coefficients. The translation part is
/// diagonal (ad(W_m) W_k = e^{2 pi i k /\ m / N} W_k); the kick part conjugates
/// densely by the kick propagator.
class QuantumKoopman {
 public:
  QuantumKoopman(const ClassicalMapSpec& map, const QuantumSetting& s) : setting_(s) {
    require(s.dim_d == 1, "QuantumKoopman: d = 1 only");
    linear_ = std::make_shared<KoopmanSuperLinear>(KoopmanSuperLinear::make(map.linear_part, s));
    if (map.has_translation()) {
      IVec m = nearest_lattice_vector(map.translation, s.n);
      CoeffIndexer ix(s.n);
      translation_diag_.resize(ix.dim());
      for (Index idx = 0; idx < ix.dim(); ++idx) {
        IVec k = ix.mode(idx);
        double arg = kTwoPi * static_cast<double>(wedge(k, m)) / static_cast<double>(s.n);
        translation_diag_[idx] = std::exp(Complex(0.0, arg));
      }
    }
    if (map.has_kick()) {
      kick_u_ = std::make_shared<CMat>(kick_propagator(map.kick, s));
    }
  }

  void apply(CVec& v) const {
    linear_->apply(v);
    if (!translation_diag_.empty())
      for (Index i = 0; i < v.size(); ++i) v[i] *= translation_diag_[i];
    if (kick_u_) conjugate(v, *kick_u_);
  }

  void apply_inverse(CVec& v) const {
    if (kick_u_) conjugate_inverse(v, *kick_u_);
    if (!translation_diag_.empty())
      for (Index i = 0; i < v.size(); ++i) v[i] *= std::conj(translation_diag_[i]);
    linear_->apply_inverse(v);
  }

  const QuantumSetting& setting() const { return setting_; }

 private:
  void conjugate(CVec& v, const CMat& u) const {
    FourierOperator a;
    a.setting = setting_;
    a.coeffs = v;
    CMat m = coeffs_to_matrix(a);
    m = (u.adjoint() * m * u).eval();
    v = matrix_to_coeffs(m, setting_).coeffs;
  }
  void conjugate_inverse(CVec& v, const CMat& u) const {
    FourierOperator a;
    a.setting = setting_;
    a.coeffs = v;
    CMat m = coeffs_to_matrix(a);
    m = (u * m * u.adjoint()).eval();
    v = matrix_to_coeffs(m, setting_).coeffs;
  }

  QuantumSetting setting_;
  std::shared_ptr<KoopmanSuperLinear> linear_;
  std::vector<Complex> translation_diag_;
  std::shared_ptr<CMat> kick_u_;
};

/// Superoperator of a dense unitary: A -> U^* A U on coefficients.
inline std::function<void(CVec&)> super_of_unitary(const CMat& u, const QuantumSetting& s) {
  return [u, s](CVec& v) {
    FourierOperator a;
    a.setting = s;
    a.coeffs = v;
    CMat m = coeffs_to_matrix(a);
    m = (u.adjoint() * m * u).eval();
    v = matrix_to_coeffs(m, s).coeffs;
  };
}

/// Diagonal noise superoperator: entries gamma_{eps,N}(k), fixing a_0.
inline Vec noise_super_diagonal(const NoiseKernel& kernel, double eps, const QuantumSetting& s) {
  require(s.dim_d == 1, "noise_super_diagonal: d = 1 only");
  CoeffIndexer ix(s.n);
  Vec diag(ix.dim());
  if (kernel.is_gaussian()) {
    const double sigma = eps * static_cast<double>(s.n);
    std::vector<double> ratio(static_cast<size_t>(s.n));
    for (Index j = 0; j < s.n; ++j)
      ratio[static_cast<size_t>(j)] =
          std::exp(log_theta_ratio(sigma, static_cast<double>(j + fold_min(s.n)) / s.n));
    for (Index idx = 0; idx < ix.dim(); ++idx) {
      IVec k = ix.mode(idx);
      diag[idx] = ratio[static_cast<size_t>(k[0] - fold_min(s.n))] *
                  ratio[static_cast<size_t>(k[1] - fold_min(s.n))];
    }
    return diag;
  }
  QuantumNoiseTable table(kernel, eps, s.n);
  for (Index idx = 0; idx < ix.dim(); ++idx) diag[idx] = table.gamma(ix.mode(idx));
  return diag;
}

/// Dense matrix of a coefficient-space superoperator (for spectral studies).
inline CMat superoperator_matrix(const std::function<void(CVec&)>& apply, Index dim) {
  CMat m(dim, dim);
  for (Index c = 0; c < dim; ++c) {
    CVec e = CVec::Zero(dim);
    e[c] = Complex(1.0, 0.0);
    apply(e);
    m.col(c) = e;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Exact norm formulas (Eqs. nd / cnd)
// ---------------------------------------------------------------------------

namespace detail {

/// log gamma evaluator over folded lattice points, general kernel. For the
/// gaussian at eps N large enough that the theta corrections are below double
/// precision, ln gamma(k) = -eps^2 |k^N|^2 exactly.
class LogGamma {
 public:
  LogGamma(const NoiseKernel& kernel, double eps, Index n) : kernel_(kernel), eps_(eps), n_(n) {
    if (!kernel.is_gaussian() && kernel.dim_d == 1)
      table_ = std::make_shared<QuantumNoiseTable>(kernel, eps, n);
    const double sigma = eps * static_cast<double>(n);
    fast_quadratic_ = kernel.is_gaussian() &&
                      4.0 * static_cast<double>(kernel.dim_d) * std::exp(-sigma * sigma / 4.0) <
                          1e-18;
  }

  double operator()(const IVec& k) const {
    if (fast_quadratic_) {
      double acc = 0.0;
      for (Index i = 0; i < k.size(); ++i) {
        double c = static_cast<double>(fold_scalar(k[i], n_));
        acc += c * c;
      }
      return -eps_ * eps_ * acc;
    }
    if (kernel_.is_gaussian()) return log_gamma_gaussian(eps_, n_, k);
    double g = table_ ? table_->gamma(k) : quantum_eigenvalue(kernel_, eps_, n_, k);
    require(g > -1.0 + 1e-15, "LogGamma: negative eigenvalue magnitude");
    if (g <= 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(g);
  }

  bool gaussian() const { return kernel_.is_gaussian(); }
  double sigma() const { return eps_ * static_cast<double>(n_); }

 private:
  const NoiseKernel& kernel_;
  double eps_;
  Index n_;
  std::shared_ptr<QuantumNoiseTable> table_;
  bool fast_quadratic_ = false;
};

/// Enumerates the nonzero fold-domain points of Z_N^{2d} in lexicographic order.
inline bool next_fold_point(IVec& k, Index n) {
  for (Index pos = k.size() - 1; pos >= 0; --pos) {
    if (k[pos] < fold_max(n)) {
      ++k[pos];
      for (Index j = pos + 1; j < k.size(); ++j) k[j] = fold_min(n);
      return true;
    }
  }
  return false;
}

struct WindowBest {
  double log_sum = -std::numeric_limits<double>::infinity();
  IVec start;
  bool better_than(const WindowBest& other) const {
    if (log_sum != other.log_sum) return log_sum > other.log_sum;
    if (other.start.size() == 0) return true;
    if (start.size() == 0) return false;
    return lex_less(start, other.start);
  }
};

/// Full orbit decomposition of Z_N^{2d} \ {0} with sliding-window products of
/// length n along every cycle (prefix sums; windows longer than the cycle wrap
/// with whole-cycle multiples). O(N^{2d}) gamma evaluations.
inline WindowBest norm_scan(const SymplecticIntMatrix& f, const LogGamma& lg, Index n_steps,
                            Index n) {
  const Index dim = f.two_d();
  std::vector<char> visited;
  std::vector<Index> flat_index_stride(dim);
  Index total = 1;
  for (Index i = dim - 1; i >= 0; --i) {
    flat_index_stride[i] = total;
    total *= n;
  }
  visited.assign(static_cast<size_t>(total), 0);
  auto flat = [&](const IVec& k) {
    Index acc = 0;
    for (Index i = 0; i < dim; ++i) acc += (k[i] - fold_min(n)) * flat_index_stride[i];
    return acc;
  };

  WindowBest best;
  IVec start(dim);
  for (Index i = 0; i < dim; ++i) start[i] = fold_min(n);
  do {
    if (start.isZero()) continue;
    if (visited[static_cast<size_t>(flat(start))]) continue;
    // walk the cycle
    std::vector<IVec> cycle;
    std::vector<double> lgs;
    IVec cur = start;
    do {
      visited[static_cast<size_t>(flat(cur))] = 1;
      cycle.push_back(cur);
      lgs.push_back(lg(cur));
      cur = fold(f.entries * cur, n);
    } while (cur != start);
    const Index len = static_cast<Index>(cycle.size());
    double cycle_sum = 0.0;
    for (double v : lgs) cycle_sum += v;
    // window sum starting at offset o: full_cycles * cycle_sum + prefix of rem
    const Index full_cycles = n_steps / len;
    const Index rem = n_steps % len;
    std::vector<double> prefix(static_cast<size_t>(len + 1), 0.0);
    for (Index i = 0; i < len; ++i) prefix[static_cast<size_t>(i + 1)] = prefix[static_cast<size_t>(i)] + lgs[static_cast<size_t>(i)];
    for (Index o = 0; o < len; ++o) {
      double wsum = static_cast<double>(full_cycles) * cycle_sum;
      Index end = o + rem;
      if (end <= len)
        wsum += prefix[static_cast<size_t>(end)] - prefix[static_cast<size_t>(o)];
      else
        wsum += (prefix[static_cast<size_t>(len)] - prefix[static_cast<size_t>(o)]) +
                prefix[static_cast<size_t>(end - len)];
      WindowBest cand{wsum, cycle[static_cast<size_t>(o)]};
      if (cand.better_than(best)) best = cand;
    }
  } while (next_fold_point(start, n));
  return best;
}

/// Values below this floor (in log) may be reported as an upper-bounded estimate
/// by the pruned searches; relaxation-time comparisons only need resolution down
/// to the e^{-1} threshold, far above it.
inline constexpr double kNormFloorLog = -30.0;

/// Pruned search for the gaussian kernel at large N. Every factor of a window
/// with product above the cutoff must satisfy gamma(p) >= e^{cutoff}; since
/// gamma(p) <= e^{-eps^2 |p|^2} + B <= 2 max(e^{-eps^2 |p|^2}, B) (Lemma GES with
/// B = 4d e^{-(eps N)^2/4} below the cutoff here), the window start is confined to
/// |p|^2 <= (ln 2 - cutoff)/eps^2. Single pass: the ball is computed from the seed
/// value, and any later improvement only shrinks it.
inline WindowBest norm_pruned_gaussian(const SymplecticIntMatrix& f, double eps, Index n_steps,
                                       Index n, const LogGamma& lg) {
  const Index dim = f.two_d();
  const double sigma = eps * static_cast<double>(n);
  const double correction = 4.0 * static_cast<double>(f.dim_d) * std::exp(-sigma * sigma / 4.0);
  WindowBest best;

  auto window_sum = [&](const IVec& start) {
    double acc = 0.0;
    IVec cur = start;
    Index steps = 0;
    while (steps < n_steps) {
      acc += lg(cur);
      ++steps;
      if (acc < best.log_sum) return acc - 1.0;  // pruned: cannot reach best
      cur = fold(f.entries * cur, n);
      if (cur == start && steps < n_steps) {
        // wrapped: the window repeats the cycle
        Index len = steps;
        Index full = n_steps / len, rem = n_steps % len;
        double cycle_sum = acc;
        double rem_sum = 0.0;
        IVec p = start;
        for (Index i = 0; i < rem; ++i) {
          rem_sum += lg(p);
          p = fold(f.entries * p, n);
        }
        return static_cast<double>(full) * cycle_sum + rem_sum;
      }
    }
    return acc;
  };

  // seeds: unit vectors, plus the unfolded window minimizer mapped to its start
  std::vector<IVec> seeds;
  for (Index i = 0; i < dim; ++i) {
    for (Index sgn : {1, -1}) {
      IVec seed = IVec::Zero(dim);
      seed[i] = sgn;
      seeds.push_back(seed);
    }
  }
  if (n_steps <= 256) {  // unfolded minimizer; the Gram entries stay in double range
    IVec argmin;
    window_min(f, 1, n_steps, &argmin);
    seeds.push_back(fold(f.entries * argmin, n));
  }
  for (const auto& seed : seeds) {
    if (seed.isZero()) continue;
    double s = window_sum(seed);
    WindowBest cand{s, seed};
    if (cand.better_than(best)) best = cand;
  }

  const double cutoff = std::min(best.log_sum, kNormFloorLog);
  require(std::exp(cutoff) > correction,
          "noisy norm: GES slack above the search floor; use the scan path (smaller N)");
  const double s_bound = (std::log(2.0) - cutoff) / (eps * eps);
  const Index reach =
      std::min<Index>(static_cast<Index>(std::floor(std::sqrt(std::max(0.0, s_bound)))) + 1,
                      fold_max(n));
  IVec k = IVec::Zero(dim);
  std::function<void(Index, double)> walk = [&](Index pos, double partial_sq) {
    if (pos == dim) {
      if (k.isZero()) return;
      double s = window_sum(k);
      WindowBest cand{s, k};
      if (cand.better_than(best)) best = cand;
      return;
    }
    for (Index t = -reach; t <= reach; ++t) {
      double add = static_cast<double>(t) * static_cast<double>(t);
      if (partial_sq + add > s_bound) continue;
      k[pos] = t;
      walk(pos + 1, partial_sq + add);
    }
    k[pos] = 0;
  };
  walk(0, 0.0);
  return best;
}

}  // namespace detail

inline constexpr Index kNormScanCap = 1 << 22;  // fold-domain sizes scanned exhaustively

/// Exact noisy norm, Eq. nd. The product over l = 1..n of gamma(F^l k) is
/// reparametrized by the window start p = F k (a lattice bijection), so the
/// reported maximizer is the first noise index of the optimal window.
inline PropagatorNorm noisy_norm_linear(const SymplecticIntMatrix& f, const NoiseKernel& kernel,
                                        double eps, const QuantumSetting& s, Index n_steps) {
  require(n_steps >= 0, "noisy_norm_linear: n >= 0 required");
  require(s.dim_d == f.dim_d, "noisy_norm_linear: dimension mismatch");
  require(is_admissible(f, s.n, s.theta), "noisy_norm_linear: inadmissible Bloch angle");
  PropagatorNorm out;
  out.flavor = Flavor::kNoisy;
  out.side = Side::kQuantum;
  out.n = n_steps;
  out.maximizer = IVec::Zero(f.two_d());
  if (n_steps == 0) return out;
  if (eps == 0.0 || gamma_identically_one(kernel, eps, s.n)) return out;  // unitary: norm 1

  detail::LogGamma lg(kernel, eps, s.n);
  double total = std::pow(static_cast<double>(s.n), static_cast<double>(f.two_d()));
  detail::WindowBest best;
  if (total <= static_cast<double>(kNormScanCap)) {
    best = detail::norm_scan(f, lg, n_steps, s.n);
  } else {
    require(kernel.is_gaussian(),
            "noisy_norm_linear: N too large for exhaustive scan with a non-gaussian kernel");
    best = detail::norm_pruned_gaussian(f, eps, n_steps, s.n, lg);
  }
  out.log_value = best.log_sum;
  out.value = std::exp(best.log_sum);
  out.maximizer = best.start;
  return out;
}

/// Exact coarse-grained norm, Eq. cnd: max_{k != 0} gamma(k) gamma(F^n k).
inline PropagatorNorm coarse_norm_linear(const SymplecticIntMatrix& f, const NoiseKernel& kernel,
                                         double eps, const QuantumSetting& s, Index n_steps) {
  require(n_steps >= 0, "coarse_norm_linear: n >= 0 required");
  require(is_admissible(f, s.n, s.theta), "coarse_norm_linear: inadmissible Bloch angle");
  PropagatorNorm out;
  out.flavor = Flavor::kCoarse;
  out.side = Side::kQuantum;
  out.n = n_steps;
  out.maximizer = IVec::Zero(f.two_d());
  if (eps == 0.0 || gamma_identically_one(kernel, eps, s.n)) {
    // two noise factors, both identically 1 on every mode
    out.maximizer = IVec::Zero(f.two_d());
    out.maximizer[f.two_d() - 1] = 1;
    return out;
  }

  detail::LogGamma lg(kernel, eps, s.n);
  IMat fn_mod = mat_pow_mod(f.entries, n_steps, s.n);
  auto objective = [&](const IVec& k) {
    return lg(k) + lg(fold(fn_mod * k, s.n));
  };

  const Index dim = f.two_d();
  detail::WindowBest best;
  double total = std::pow(static_cast<double>(s.n), static_cast<double>(dim));
  if (total <= static_cast<double>(kNormScanCap)) {
    IVec k(dim);
    for (Index i = 0; i < dim; ++i) k[i] = fold_min(s.n);
    do {
      if (k.isZero()) continue;
      detail::WindowBest cand{objective(k), k};
      if (cand.better_than(best)) best = cand;
    } while (detail::next_fold_point(k, s.n));
  } else {
    require(kernel.is_gaussian(),
            "coarse_norm_linear: N too large for exhaustive scan with a non-gaussian kernel");
    const double sigma = eps * static_cast<double>(s.n);
    const double correction = 4.0 * static_cast<double>(f.dim_d) * std::exp(-sigma * sigma / 4.0);
    std::vector<IVec> seeds;
    for (Index i = 0; i < dim; ++i) {
      for (Index sgn : {1, -1}) {
        IVec seed = IVec::Zero(dim);
        seed[i] = sgn;
        seeds.push_back(seed);
      }
    }
    if (n_steps <= 256) {  // unfolded endpoint minimizer as a seed
      OrbitExtension ext = min_orbit_extension(f, n_steps, 4, OrbitVariant::kEndpoint);
      seeds.push_back(fold(ext.argmin, s.n));
    }
    for (const auto& seed : seeds) {
      if (seed.isZero()) continue;
      detail::WindowBest cand{objective(seed), seed};
      if (cand.better_than(best)) best = cand;
    }
    const double cutoff = std::min(best.log_sum, detail::kNormFloorLog);
    require(std::exp(cutoff) > correction,
            "coarse norm: GES slack above the search floor; use the scan path (smaller N)");
    const double s_bound = (std::log(2.0) - cutoff) / (eps * eps);
    const Index reach = std::min<Index>(
        static_cast<Index>(std::floor(std::sqrt(std::max(0.0, s_bound)))) + 1, fold_max(s.n));
    IVec k = IVec::Zero(dim);
    std::function<void(Index, double)> walk = [&](Index pos, double partial_sq) {
      if (pos == dim) {
        if (k.isZero()) return;
        detail::WindowBest cand{objective(k), k};
        if (cand.better_than(best)) best = cand;
        return;
      }
      for (Index t = -reach; t <= reach; ++t) {
        double add = static_cast<double>(t) * static_cast<double>(t);
        if (partial_sq + add > s_bound) continue;
        k[pos] = t;
        walk(pos + 1, partial_sq + add);
      }
      k[pos] = 0;
    };
    walk(0, 0.0);
  }
  out.log_value = best.log_sum;
  out.value = std::exp(best.log_sum);
  out.maximizer = best.start;
  return out;
}

// ---------------------------------------------------------------------------
// Dense superoperator norms (d = 1)
// ---------------------------------------------------------------------------

inline constexpr Index kDenseNCap = 128;

/// Largest singular value of T^n (noisy) or G U^n G (coarse) on the a_0 = 0
/// subspace, by block power iteration applied matrix-free. Independent of the
/// exact-formula path: cross-validation partner for Eq. nd / cnd.
inline PropagatorNorm noisy_norm_dense(const ClassicalMapSpec& map, const NoiseKernel& kernel,
                                       double eps, const QuantumSetting& s, Index n_steps,
                                       Flavor flavor = Flavor::kNoisy,
                                       const PowerNormOptions& opts = {},
                                       CMat* warm = nullptr) {
  require(s.dim_d == 1, "noisy_norm_dense: d = 1 only");
  require(s.n <= kDenseNCap, "noisy_norm_dense: N exceeds the dense cap");
  require(n_steps >= 0, "noisy_norm_dense: n >= 0 required");
  PropagatorNorm out;
  out.flavor = flavor;
  out.side = Side::kQuantum;
  out.n = n_steps;
  out.maximizer = IVec::Zero(2);
  if (flavor == Flavor::kNoisy && n_steps == 0) return out;

  QuantumKoopman koopman(map, s);
  Vec gdiag = noise_super_diagonal(kernel, eps, s);
  CoeffIndexer ix(s.n);
  const Index zero = ix.zero_index();

  auto apply_T = [&](CVec& v) {
    koopman.apply(v);
    for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
  };
  auto apply_T_adj = [&](CVec& v) {
    for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
    koopman.apply_inverse(v);
  };
  auto forward = [&](CVec& v) {
    v[zero] = Complex(0.0, 0.0);
    if (flavor == Flavor::kNoisy) {
      for (Index rep = 0; rep < n_steps; ++rep) apply_T(v);
    } else {
      for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
      for (Index rep = 0; rep < n_steps; ++rep) koopman.apply(v);
      for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
    }
    v[zero] = Complex(0.0, 0.0);
  };
  auto backward = [&](CVec& v) {
    v[zero] = Complex(0.0, 0.0);
    if (flavor == Flavor::kNoisy) {
      for (Index rep = 0; rep < n_steps; ++rep) apply_T_adj(v);
    } else {
      for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
      for (Index rep = 0; rep < n_steps; ++rep) koopman.apply_inverse(v);
      for (Index i = 0; i < v.size(); ++i) v[i] *= gdiag[i];
    }
    v[zero] = Complex(0.0, 0.0);
  };

  PowerNormResult r = power_norm(ix.dim(), forward, backward, opts,
                                 (warm && warm->rows() == ix.dim()) ? warm : nullptr);
  if (!r.converged) {
    throw Error("noisy_norm_dense: power iteration did not converge; Ritz residual " +
                std::to_string(r.residual));
  }
  out.value = r.sigma_max;
  out.log_value = std::log(std::max(r.sigma_max, 1e-300));
  return out;
}

// ---------------------------------------------------------------------------
// Egorov discrepancies
// ---------------------------------------------------------------------------

namespace detail {

/// Fourier coefficients of f o Phi^n by FFT on an M x M grid, doubled until the
/// folded coefficient vector is stable. Returns the folded coefficients and the
/// aliasing/leakage estimate (difference between the conserved L^2 mass of f and
/// the captured mode mass).
inline FourierOperator classical_evolved_coeffs(const ClassicalMapSpec& map,
                                                const FourierSeries& f, Index n_steps,
                                                const QuantumSetting& s, double* leakage_out) {
  auto eval_f = [&](const Vec& x) {
    Complex acc(0.0, 0.0);
    for (const auto& mode : f) {
      double phase = kTwoPi * (static_cast<double>(mode.k[1]) * x[0] -
                               static_cast<double>(mode.k[0]) * x[1]);
      acc += mode.coeff * std::exp(Complex(0.0, phase));
    }
    return acc;
  };
  double f_mass = 0.0;
  for (const auto& mode : f) f_mass += std::norm(mode.coeff);

  FourierOperator prev;
  double prev_norm = -1.0;
  for (int grid = 128; grid <= 2048; grid *= 2) {
    std::vector<fftw_complex> in(static_cast<size_t>(grid) * grid),
        out(static_cast<size_t>(grid) * grid);
    for (int a = 0; a < grid; ++a) {
      for (int b = 0; b < grid; ++b) {
        Vec x(2);
        x << static_cast<double>(a) / grid, static_cast<double>(b) / grid;
        Vec y = map.apply_n(x, n_steps);
        Complex val = eval_f(y);
        in[static_cast<size_t>(a) * grid + b][0] = val.real();
        in[static_cast<size_t>(a) * grid + b][1] = val.imag();
      }
    }
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      fftw_plan plan = fftw_plan_dft_2d(grid, grid, in.data(), out.data(), FFTW_FORWARD,
                                        FFTW_ESTIMATE);
      fftw_execute(plan);
      fftw_destroy_plan(plan);
    }
    // mode j = (j_q, j_p): <w_j, g> pairs with forward-FFT index (u, v) = (j_p, -j_q)
    FourierOperator coeffs = FourierOperator::zero(s);
    CoeffIndexer ix(s.n);
    double captured = 0.0;
    const double scale = 1.0 / (static_cast<double>(grid) * static_cast<double>(grid));
    for (int jq = -grid / 2 + 1; jq < grid / 2; ++jq) {
      for (int jp = -grid / 2 + 1; jp < grid / 2; ++jp) {
        int u = ((jp % grid) + grid) % grid;
        int v = (((-jq) % grid) + grid) % grid;
        Complex c(out[static_cast<size_t>(u) * grid + v][0] * scale,
                  out[static_cast<size_t>(u) * grid + v][1] * scale);
        if (std::abs(c) < 1e-16) continue;
        captured += std::norm(c);
        IVec j = ivec2(jq, jp);
        IVec j0 = fold(j, s.n);
        IVec m = j - j0;
        for (Index i = 0; i < 2; ++i) m[i] /= s.n;
        double alpha = fold_phase(j0, m, s.theta, s.n);
        coeffs.coeffs[ix.index(j0)] += c * std::exp(Complex(0.0, kTwoPi * alpha));
      }
    }
    double leakage = std::abs(f_mass - captured);
    if (prev_norm >= 0.0 && (coeffs.coeffs - prev.coeffs).norm() < 1e-9) {
      if (leakage_out) *leakage_out = leakage;
      return coeffs;
    }
    prev = coeffs;
    prev_norm = leakage;
  }
  if (leakage_out) *leakage_out = prev_norm;
  return prev;
}

}  // namespace detail

/// || U^n Op(f) - Op(f o Phi^n) ||_HS. A pure linear map returns exactly 0
/// without computation (the correspondence has no error term).
inline double egorov_discrepancy(const ClassicalMapSpec& map, const FourierSeries& f,
                                 Index n_steps, const QuantumSetting& s,
                                 double leakage_tol = 1e-6) {
  require(s.dim_d == 1, "egorov_discrepancy: d = 1 only");
  if (map.is_pure_linear()) return 0.0;
  QuantumKoopman koopman(map, s);
  CVec quantum = op_n_coeffs(f, s).coeffs;
  for (Index rep = 0; rep < n_steps; ++rep) koopman.apply(quantum);
  double leakage = 0.0;
  FourierOperator classical = detail::classical_evolved_coeffs(map, f, n_steps, s, &leakage);
  require(leakage <= leakage_tol, "egorov_discrepancy: quadrature leakage above tolerance");
  return (quantum - classical.coeffs).norm();
}

/// || T_{eps,N}^n Op(f) - Op(T_eps^n f) ||_HS with the classical side evolved on a
/// Galerkin truncation (cutoff doubled for a sensitivity check). For n = 0 this is
/// the single-application noise comparison sqrt(sum_k |gamma(k) - ghat(eps k)|^2 |f_k|^2).
inline double egorov_noisy_discrepancy(const ClassicalMapSpec& map, const NoiseKernel& kernel,
                                       double eps, const FourierSeries& f, Index n_steps,
                                       const QuantumSetting& s, Index k_cut = 48,
                                       double leakage_tol = 1e-6) {
  require(s.dim_d == 1, "egorov_noisy_discrepancy: d = 1 only");
  if (n_steps == 0) {
    double acc = 0.0;
    for (const auto& mode : f) {
      double gq = quantum_eigenvalue(kernel, eps, s.n, mode.k);
      double gc = classical_eigenvalue(kernel, eps, mode.k);
      acc += std::norm(mode.coeff) * (gq - gc) * (gq - gc);
    }
    return std::sqrt(acc);
  }
  // quantum side
  QuantumKoopman koopman(map, s);
  Vec gdiag = noise_super_diagonal(kernel, eps, s);
  CVec quantum = op_n_coeffs(f, s).coeffs;
  for (Index rep = 0; rep < n_steps; ++rep) {
    koopman.apply(quantum);
    for (Index i = 0; i < quantum.size(); ++i) quantum[i] *= gdiag[i];
  }
  // classical side on the Galerkin truncation
  auto evolve = [&](Index cut) -> FourierSeries {
    KoopmanMatrix km = galerkin_koopman(map, cut);
    const Index dim = km.basis.dim();
    CVec v = CVec::Zero(dim);
    Complex mean(0.0, 0.0);
    for (const auto& mode : f) {
      Index idx = km.basis.index(mode.k);
      if (mode.k.isZero())
        mean += mode.coeff;
      else {
        require(idx >= 0, "egorov_noisy_discrepancy: observable outside the truncation");
        v[idx] += mode.coeff;
      }
    }
    for (Index rep = 0; rep < n_steps; ++rep) {
      km.apply(v);
      for (Index i = 0; i < dim; ++i)
        v[i] *= classical_eigenvalue(kernel, eps, km.basis.modes[i]);
    }
    FourierSeries series;
    if (std::abs(mean) > 0.0) series.push_back({ivec2(0, 0), mean});
    for (Index i = 0; i < dim; ++i)
      if (std::abs(v[i]) > 1e-16) series.push_back({km.basis.modes[i], v[i]});
    return series;
  };
  FourierSeries evo = evolve(k_cut);
  FourierSeries evo2 = evolve(2 * k_cut);
  CVec classical = op_n_coeffs(evo, s).coeffs;
  CVec classical2 = op_n_coeffs(evo2, s).coeffs;
  require((classical - classical2).norm() <= leakage_tol,
          "egorov_noisy_discrepancy: truncation leakage above tolerance");
  return (quantum - classical2).norm();
}

}  // namespace toral_relax
