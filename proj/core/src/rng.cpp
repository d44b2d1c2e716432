#include "flowdistill/rng.hpp"

namespace flowdistill {

Matrix standard_normal(Eigen::Index d, Eigen::Index count, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(d, count);
  for (Eigen::Index c = 0; c < count; ++c) {
    for (Eigen::Index r = 0; r < d; ++r) out(r, c) = normal(rng);
  }
  return out;
}

}  // namespace flowdistill
