#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace toral_relax {

using Index = std::int64_t;
using Complex = std::complex<double>;

/// Integer vector on the Fourier lattice Z^{2d}, stored in (q-block, p-block) order.
using IVec = Eigen::Matrix<Index, Eigen::Dynamic, 1>;
using IMat = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kSqrtPi = 1.77245385090551602729816748334114518;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline IVec ivec2(Index q, Index p) {
  IVec v(2);
  v << q, p;
  return v;
}

inline IMat imat2(Index a, Index b, Index c, Index d) {
  IMat m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace toral_relax
