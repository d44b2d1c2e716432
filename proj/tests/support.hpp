#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowdistill/nn.hpp"
#include "flowdistill/rng.hpp"
#include "flowdistill/velocity_model.hpp"

namespace testing_support {

using flowdistill::Matrix;
using flowdistill::Vector;
namespace nn = flowdistill::nn;

/// Every parameter redrawn from U(-scale, scale), so no layer starts at zero.
inline void randomize(nn::ParamSet& params, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < params.element_count(); ++i) params.flat(i) = u(rng);
}

inline nn::VelocityModel random_model(int dim, int hidden, int blocks, std::uint64_t seed, double scale = 0.5) {
  auto m = nn::build_velocity_model(dim, hidden, blocks, seed);
  randomize(m.params(), seed ^ 0x5eedULL, scale);
  return m;
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// Central differences (step h) of `loss` over `coords` random coordinates of `params`,
/// compared against `analytic` (same layout as params).
inline GradCheck check_gradient(nn::ParamSet& params, const nn::ParamSet& analytic,
                                const std::function<double()>& loss, int coords, std::uint64_t seed,
                                double h = 1e-5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.element_count() - 1);
  GradCheck out;
  for (int c = 0; c < coords; ++c) {
    const auto i = pick(rng);
    const double saved = params.flat(i);
    params.flat(i) = saved + h;
    const double up = loss();
    params.flat(i) = saved - h;
    const double down = loss();
    params.flat(i) = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic.flat(i), numeric));
    ++out.checked;
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("flowdistill_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
