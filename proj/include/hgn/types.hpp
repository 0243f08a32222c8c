#pragma once

#include <Eigen/Core>

namespace hgn {

using Scalar = double;
using Vec    = Eigen::VectorXd;
using Mat    = Eigen::MatrixXd;
using Index  = Eigen::Index;

// Probabilities are floored at this value before taking logs. For softmax
// outputs ln(p) differs from the raw logits only by a per-sample constant,
// which the calibration transforms absorb.
inline constexpr Scalar kLogFloor = 1e-12;

// Tolerance for "sums to 1" checks on probability vectors.
inline constexpr Scalar kProbSumTol = 1e-6;

}  // namespace hgn
