#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace dartclean {

using Index = Eigen::Index;

template <typename Scalar> using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar> using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

// Per-sample boolean flags (spike mask, step mask, gap mask).
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

// Inclusive index range [start, end].
struct Segment
{
  Index start = 0;
  Index end = 0;

  friend bool operator==(Segment const &, Segment const &) = default;
};

} // namespace dartclean
