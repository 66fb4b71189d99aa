#pragma once

// Integer symplectic linear algebra on the Fourier lattice Z^{2d}.
//
// Conventions used across the whole library:
//   * a lattice vector k = (k_q | k_p) stores the q-block first, then the p-block;
//   * the wedge form is k /\ m = k_p . m_q - k_q . m_p, i.e. k /\ m = k^T J m with
//     J = [[0, -I], [I, 0]];
//   * the fundamental (fold) domain mod N is the interval (-N/2, N/2] per component.
// Under this convention the plane wave w_k(x) = e^{2 pi i k /\ x} with k = (0,1)
// equals e^{2 pi i q}, so cos(2 pi q) has modes (0,1) and (0,-1).

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <gmpxx.h>

#include "toral_relax/common.hpp"

namespace toral_relax {

inline Index wedge(const IVec& k, const IVec& m) {
  require(k.size() == m.size(), "wedge: dimension mismatch");
  require(k.size() % 2 == 0, "wedge: odd dimension");
  const Index d = k.size() / 2;
  Index acc = 0;
  for (Index j = 0; j < d; ++j) acc += k[d + j] * m[j] - k[j] * m[d + j];
  return acc;
}

/// The matrix J of the wedge form, sending (q,p) to (-p,q) pairing.
inline IMat wedge_matrix(Index d) {
  IMat j = IMat::Zero(2 * d, 2 * d);
  for (Index i = 0; i < d; ++i) {
    j(i, d + i) = -1;
    j(d + i, i) = 1;
  }
  return j;
}

inline Index fold_scalar(Index x, Index n) {
  Index r = x % n;
  if (r < 0) r += n;
  if (2 * r > n) r -= n;
  return r;
}

/// Componentwise unique representative in (-N/2, N/2].
inline IVec fold(const IVec& k, Index n) {
  require(n >= 1, "fold: N must be positive");
  IVec r(k.size());
  for (Index i = 0; i < k.size(); ++i) r[i] = fold_scalar(k[i], n);
  return r;
}

/// Smallest fold-domain value: -floor((N-1)/2).
inline Index fold_min(Index n) { return -((n - 1) / 2); }
inline Index fold_max(Index n) { return n / 2; }

inline bool check_symplectic(const IMat& f) {
  if (f.rows() != f.cols() || f.rows() % 2 != 0 || f.rows() == 0) return false;
  const Index d = f.rows() / 2;
  IMat j = wedge_matrix(d);
  return (f.transpose() * j * f) == j;
}

/// Exact inverse of a symplectic integer matrix: F^{-1} = J^{-1} F^T J.
inline IMat symplectic_inverse(const IMat& f) {
  require(check_symplectic(f), "symplectic_inverse: matrix is not symplectic");
  const Index d = f.rows() / 2;
  IMat j = wedge_matrix(d);
  IMat jinv = -j;
  return jinv * f.transpose() * j;
}

// ---------------------------------------------------------------------------
// Exact integer polynomials (coefficients low to high).
// ---------------------------------------------------------------------------

using ZPoly = std::vector<mpz_class>;

inline int poly_degree(const ZPoly& p) {
  for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i)
    if (p[i] != 0) return i;
  return -1;
}

/// Characteristic polynomial det(xI - A) by the Faddeev-LeVerrier recursion,
/// carried out in exact integers.
inline ZPoly char_poly(const IMat& a) {
  const Index n = a.rows();
  require(n == a.cols() && n > 0, "char_poly: square matrix required");
  using ZMat = Eigen::Matrix<mpz_class, Eigen::Dynamic, Eigen::Dynamic>;
  ZMat az(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) az(i, j) = mpz_class(static_cast<long>(a(i, j)));
  ZPoly c(n + 1);
  c[n] = 1;
  ZMat m = ZMat::Zero(n, n);
  for (Index k = 1; k <= n; ++k) {
    ZMat am = az * m;
    for (Index i = 0; i < n; ++i) am(i, i) += c[n - k + 1];
    m = am;
    ZMat prod = az * m;
    mpz_class tr = 0;
    for (Index i = 0; i < n; ++i) tr += prod(i, i);
    mpz_class ck = -tr / k;  // exact by construction
    c[n - k] = ck;
  }
  return c;
}

/// Exact division p / q for monic q; returns remainder via `rem`.
inline ZPoly poly_divmod_monic(const ZPoly& p, const ZPoly& q, ZPoly* rem) {
  int dq = poly_degree(q);
  require(dq >= 0 && q[dq] == 1, "poly_divmod_monic: divisor must be monic");
  ZPoly r = p;
  int dr = poly_degree(r);
  ZPoly quot(std::max(0, dr - dq + 1));
  while (dr >= dq) {
    mpz_class lead = r[dr];
    quot[dr - dq] = lead;
    for (int i = 0; i <= dq; ++i) r[dr - dq + i] -= lead * q[i];
    dr = poly_degree(r);
  }
  if (rem) *rem = r;
  return quot;
}

inline bool poly_divides_monic(const ZPoly& q, const ZPoly& p) {
  ZPoly rem;
  poly_divmod_monic(p, q, &rem);
  return poly_degree(rem) < 0;
}

/// Cyclotomic polynomial Phi_m, built by exact division of x^m - 1.
inline ZPoly cyclotomic(int m) {
  require(m >= 1, "cyclotomic: m >= 1");
  ZPoly num(m + 1);
  num[0] = -1;
  num[m] = 1;
  for (int div = 1; div < m; ++div) {
    if (m % div != 0) continue;
    ZPoly phi_d = cyclotomic(div);
    num = poly_divmod_monic(num, phi_d, nullptr);
  }
  return num;
}

inline int euler_phi(int m) {
  int result = m, x = m;
  for (int p = 2; p * p <= x; ++p) {
    if (x % p == 0) {
      result -= result / p;
      while (x % p == 0) x /= p;
    }
  }
  if (x > 1) result -= result / x;
  return result;
}

/// True iff no eigenvalue of F is a root of unity, decided exactly: the
/// characteristic polynomial is divisible by some cyclotomic Phi_m with
/// phi(m) <= 2d iff a root of unity is present (Phi_m is irreducible over Q).
inline bool check_ergodic_matrix(const IMat& f) {
  const int n = static_cast<int>(f.rows());
  ZPoly p = char_poly(f);
  const int m_max = 2 * n * n + 2;  // phi(m) >= sqrt(m/2)
  for (int m = 1; m <= m_max; ++m) {
    if (euler_phi(m) > n) continue;
    if (poly_divides_monic(cyclotomic(m), p)) return false;
  }
  return true;
}

/// Squarefree test: gcd(p, p') is constant. Uses rational-free pseudo-remainders.
inline bool poly_squarefree(const ZPoly& p) {
  ZPoly a = p;
  ZPoly b(poly_degree(p) >= 1 ? poly_degree(p) : 1);
  for (int i = 1; i <= poly_degree(p); ++i) b[i - 1] = p[i] * i;
  while (poly_degree(b) >= 0) {
    int da = poly_degree(a), db = poly_degree(b);
    if (da < db) {
      std::swap(a, b);
      continue;
    }
    // pseudo remainder of a by b
    ZPoly r = a;
    mpz_class lead_b = b[db];
    int dr = poly_degree(r);
    while (dr >= db && dr >= 0) {
      mpz_class lead_r = r[dr];
      for (int i = 0; i <= dr; ++i) r[i] *= lead_b;
      for (int i = 0; i <= db; ++i) r[dr - db + i] -= lead_r * b[i];
      dr = poly_degree(r);
    }
    a = b;
    b = r;
  }
  return poly_degree(a) == 0;
}

/// Irreducibility over Q for monic integer polynomials of degree <= 4
/// (rational-root test plus exhaustive monic quadratic factor search).
inline bool poly_irreducible_monic(const ZPoly& p) {
  int deg = poly_degree(p);
  require(deg >= 1 && p[deg] == 1, "poly_irreducible_monic: monic polynomial required");
  require(deg <= 4, "poly_irreducible_monic: degree > 4 not supported");
  if (deg == 1) return true;
  if (p[0] == 0) return false;
  // integer roots divide the constant term
  std::vector<mpz_class> divisors;
  mpz_class a0 = abs(p[0]);
  for (mpz_class t = 1; t * t <= a0; ++t) {
    if (a0 % t == 0) {
      divisors.push_back(t);
      divisors.push_back(a0 / t);
    }
  }
  for (const auto& dv : divisors) {
    for (int sign : {1, -1}) {
      mpz_class x = sign * dv, acc = 0, pw = 1;
      for (int i = 0; i <= deg; ++i) {
        acc += p[i] * pw;
        pw *= x;
      }
      if (acc == 0) return false;
    }
  }
  if (deg <= 3) return true;
  // quartic: search monic quadratic factors (x^2+px+q)(x^2+rx+s)
  const mpz_class A = p[3], B = p[2], C = p[1], D = p[0];
  std::vector<mpz_class> qs;
  for (const auto& dv : divisors) {
    qs.push_back(dv);
    qs.push_back(-dv);
  }
  for (const auto& q : qs) {
    if (q == 0 || D % q != 0) continue;
    mpz_class s = D / q;
    // p + r = A,  q + s + p r = B,  p s + r q = C
    // => p r = B - q - s and p solves p^2 - A p + (B - q - s) = 0
    mpz_class pr = B - q - s;
    mpz_class disc = A * A - 4 * pr;
    if (disc < 0) continue;
    mpz_class root = sqrt(disc);
    if (root * root != disc) continue;
    for (int sign : {1, -1}) {
      mpz_class two_p = A + sign * root;
      if (two_p % 2 != 0) continue;
      mpz_class pp = two_p / 2, rr = A - pp;
      if (pp * s + rr * q == C) return false;
    }
  }
  return true;
}

/// Roots of an integer polynomial via the companion matrix, Newton-polished on the
/// exact coefficients to ~1e-14 relative accuracy.
inline std::vector<Complex> poly_roots(const ZPoly& p) {
  int deg = poly_degree(p);
  require(deg >= 1, "poly_roots: nonconstant polynomial required");
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  double lead = p[deg].get_d();
  for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -p[i].get_d() / lead;
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  Eigen::ComplexEigenSolver<Eigen::MatrixXd> solver(comp);
  std::vector<Complex> roots(deg);
  for (int i = 0; i < deg; ++i) {
    Complex z = solver.eigenvalues()[i];
    for (int it = 0; it < 60; ++it) {
      Complex val = 0, zp = 1;
      for (int j = 0; j <= deg; ++j) {
        val += p[j].get_d() * zp;
        zp *= z;
      }
      Complex der = 0;
      zp = 1;
      for (int j = 1; j <= deg; ++j) {
        der += static_cast<double>(j) * p[j].get_d() * zp;
        zp *= z;
      }
      if (std::abs(der) == 0.0) break;
      Complex step = val / der;
      z -= step;
      if (std::abs(step) <= 1e-16 * (1.0 + std::abs(z))) break;
    }
    roots[i] = z;
  }
  std::sort(roots.begin(), roots.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return roots;
}

// ---------------------------------------------------------------------------
// SymplecticIntMatrix
// ---------------------------------------------------------------------------

/// Integer 2d x 2d symplectic matrix with cached spectral data.
struct SymplecticIntMatrix {
  Index dim_d = 0;                        // torus is 2d-dimensional
  IMat entries;                           // F
  IMat inverse;                           // F^{-1}, exact
  std::optional<std::vector<Index>> blocks;  // block dimensions d_j, if supplied
  std::vector<Complex> eigenvalues;
  double norm_mu = 0.0;                   // max(||F||, ||F^{-1}||), operator 2-norm
  bool ergodic = false;

  static SymplecticIntMatrix make(const IMat& f,
                                  std::optional<std::vector<Index>> block_dims = std::nullopt) {
    require(f.rows() == f.cols() && f.rows() % 2 == 0 && f.rows() > 0,
            "SymplecticIntMatrix: even-dimension square matrix required");
    require(check_symplectic(f), "SymplecticIntMatrix: F^T J F != J");
    SymplecticIntMatrix s;
    s.dim_d = f.rows() / 2;
    s.entries = f;
    s.inverse = symplectic_inverse(f);
    if (block_dims) {
      Index total = 0;
      for (Index b : *block_dims) total += b;
      require(total == f.rows(), "SymplecticIntMatrix: block dimensions must sum to 2d");
      s.blocks = std::move(block_dims);
    }
    s.eigenvalues = poly_roots(char_poly(f));
    Eigen::MatrixXd fd = f.cast<double>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fd);
    double smax = svd.singularValues().maxCoeff();
    double smin = svd.singularValues().minCoeff();
    s.norm_mu = std::max(smax, 1.0 / smin);
    s.ergodic = check_ergodic_matrix(f);
    return s;
  }

  Index two_d() const { return 2 * dim_d; }
};

inline SymplecticIntMatrix cat_map() { return SymplecticIntMatrix::make(imat2(2, 1, 1, 1)); }

inline bool check_ergodic(const SymplecticIntMatrix& f) { return f.ergodic; }

/// Modular matrix power F^n mod N (entries reduced into [0, N)).
inline IMat mat_pow_mod(const IMat& f, Index n, Index modulus) {
  require(n >= 0 && modulus >= 1, "mat_pow_mod: n >= 0 and N >= 1 required");
  const Index dim = f.rows();
  auto reduce = [&](IMat m) {
    for (Index i = 0; i < dim; ++i)
      for (Index j = 0; j < dim; ++j) {
        Index r = m(i, j) % modulus;
        if (r < 0) r += modulus;
        m(i, j) = r;
      }
    return m;
  };
  IMat result = IMat::Identity(dim, dim);
  IMat base = reduce(f);
  Index e = n;
  while (e > 0) {
    if (e & 1) result = reduce(result * base);
    base = reduce(base * base);
    e >>= 1;
  }
  return result;
}

/// Orbit of the permutation k -> fold(F k, N) on (Z/N)^{2d} \ {0}, starting at k.
inline std::vector<IVec> orbit_mod_N(const SymplecticIntMatrix& f, const IVec& k, Index n) {
  require(n >= 1, "orbit_mod_N: N >= 1 required");
  require(k.size() == f.two_d(), "orbit_mod_N: dimension mismatch");
  IVec start = fold(k, n);
  require(!start.isZero(), "orbit_mod_N: k = 0 rejected");
  std::vector<IVec> cycle;
  IVec cur = start;
  double cap = std::pow(static_cast<double>(n), static_cast<double>(2 * f.dim_d));
  do {
    cycle.push_back(cur);
    cur = fold(f.entries * cur, n);
    require(static_cast<double>(cycle.size()) <= cap, "orbit_mod_N: cycle cap exceeded");
  } while (cur != start);
  return cycle;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Sinai entropy rates
// ---------------------------------------------------------------------------

struct EntropyData {
  std::vector<double> block_entropies;  // h_j, nats
  std::vector<double> averaged;         // h_j / d_j
  double min_averaged = 0.0;            // \hat h(F)
};

/// Per-block K-S entropies h_j = sum_{|lambda|>1} ln|lambda| and the minimal
/// dimensionally-averaged rate \hat h = min_j h_j / d_j. Blocks are the diagonal
/// blocks of F for caller-supplied dimensions; without them the characteristic
/// polynomial must be irreducible (single block), which always holds for ergodic
/// 2x2 matrices and is verified exactly for 2d = 4.
inline EntropyData ks_entropy(const SymplecticIntMatrix& f) {
  require(f.ergodic, "ks_entropy: non-ergodic matrix");
  std::vector<std::pair<Index, ZPoly>> block_polys;  // (dimension, charpoly)
  if (f.blocks) {
    Index at = 0;
    for (Index b : *f.blocks) {
      IMat sub = f.entries.block(at, at, b, b);
      block_polys.emplace_back(b, char_poly(sub));
      at += b;
    }
  } else {
    ZPoly p = char_poly(f.entries);
    if (f.two_d() > 2) {
      require(poly_irreducible_monic(p),
              "ks_entropy: reducible characteristic polynomial and no caller-supplied blocks");
    }
    block_polys.emplace_back(f.two_d(), p);
  }
  EntropyData data;
  data.min_averaged = std::numeric_limits<double>::infinity();
  for (const auto& [dim, poly] : block_polys) {
    require(poly_squarefree(poly), "ks_entropy: non-diagonalizable block");
    double h = 0.0;
    for (const Complex& lam : poly_roots(poly)) {
      double mod = std::abs(lam);
      if (mod > 1.0) h += std::log(mod);
    }
    data.block_entropies.push_back(h);
    data.averaged.push_back(h / static_cast<double>(dim));
    data.min_averaged = std::min(data.min_averaged, data.averaged.back());
  }
  require(data.min_averaged > 0.0, "ks_entropy: vanishing entropy rate for ergodic matrix");
  return data;
}

}  // namespace toral_relax
