#pragma once

// Largest singular value of a linear operator given matrix-free, by block power
// iteration on A* A with a small Rayleigh-Ritz block. The block resolves clusters
// of nearly equal singular values that plain single-vector iteration cannot
// separate. Deterministically seeded.

#include <functional>
#include <random>

#include <Eigen/Dense>

#include "toral_relax/common.hpp"

namespace toral_relax {

struct PowerNormOptions {
  double rel_tol = 1e-8;
  int max_iters = 20000;
  int block = 8;
  std::uint64_t seed = 0x5eed5eedULL;
};

struct PowerNormResult {
  double sigma_max = 0.0;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  // last relative Ritz increment
};

/// apply / apply_adjoint act in place on a CVec of length dim. A nonempty
/// *warm_io seeds the block; on return it holds the final subspace (useful for
/// warm-starting a sequence of nearby operators).
inline PowerNormResult power_norm(Index dim, const std::function<void(CVec&)>& apply,
                                  const std::function<void(CVec&)>& apply_adjoint,
                                  const PowerNormOptions& opts = {}, CMat* warm_io = nullptr) {
  const CMat* warm_start = warm_io;
  require(dim >= 1, "power_norm: empty space");
  const int b = static_cast<int>(std::min<Index>(opts.block, dim));
  CMat v(dim, b);
  if (warm_start && warm_start->rows() == dim) {
    int copy = static_cast<int>(std::min<Index>(warm_start->cols(), b));
    v.leftCols(copy) = warm_start->leftCols(copy);
    for (int c = copy; c < b; ++c) v.col(c).setZero();
  } else {
    v.setZero();
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int c = 0; c < b; ++c) {
    if (v.col(c).norm() > 0.0) continue;
    for (Index i = 0; i < dim; ++i) v(i, c) = Complex(dist(rng), dist(rng));
  }
  {
    Eigen::HouseholderQR<CMat> qr(v);
    v = qr.householderQ() * CMat::Identity(dim, b);
  }

  PowerNormResult out;
  double prev = 0.0;
  for (int it = 1; it <= opts.max_iters; ++it) {
    CMat av(dim, b);
    for (int c = 0; c < b; ++c) {
      CVec w = v.col(c);
      apply(w);
      av.col(c) = w;
    }
    // Ritz values of A restricted to the block: singular values of A V
    Eigen::JacobiSVD<CMat> svd(av, Eigen::ComputeThinU);
    double sigma = svd.singularValues()(0);
    out.sigma_max = sigma;
    out.iterations = it;
    out.residual = std::abs(sigma - prev) / (sigma > 0.0 ? sigma : 1.0);
    if (it > 1 && out.residual <= opts.rel_tol) {
      out.converged = true;
      break;
    }
    prev = sigma;
    if (sigma == 0.0) {  // operator annihilates the block
      out.converged = true;
      break;
    }
    CMat back(dim, b);
    for (int c = 0; c < b; ++c) {
      CVec w = av.col(c);
      apply_adjoint(w);
      back.col(c) = w;
    }
    Eigen::HouseholderQR<CMat> qr(back);
    v = qr.householderQ() * CMat::Identity(dim, b);
  }
  if (warm_io) *warm_io = v;
  return out;
}

}  // namespace toral_relax
