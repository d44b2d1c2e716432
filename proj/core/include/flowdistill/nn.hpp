#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowdistill/errors.hpp"

namespace flowdistill {

/// Column-major batch matrix: one sample per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace nn {

struct Tensor {
  std::string name;
  Matrix value;
};

/// Ordered collection of named parameter tensors.
///
/// The insertion order is the canonical order used for serialization,
/// flat indexing and fingerprinting, so two sets built by the same
/// architecture are element-wise comparable.
class ParamSet {
 public:
  void add(std::string name, Matrix value);

  [[nodiscard]] std::size_t tensor_count() const noexcept { return tensors_.size(); }
  [[nodiscard]] std::size_t element_count() const noexcept;

  [[nodiscard]] Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  [[nodiscard]] const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  [[nodiscard]] Matrix& operator[](std::size_t i) { return tensors_[i].value; }
  [[nodiscard]] const Matrix& operator[](std::size_t i) const { return tensors_[i].value; }

  [[nodiscard]] std::span<Tensor> tensors() noexcept { return tensors_; }
  [[nodiscard]] std::span<const Tensor> tensors() const noexcept { return tensors_; }

  // Flat view over all elements in canonical order.
  [[nodiscard]] double flat(std::size_t index) const;
  double& flat(std::size_t index);

  [[nodiscard]] ParamSet zeros_like() const;
  [[nodiscard]] bool congruent(const ParamSet& other) const noexcept;
  void set_zero();
  void scale(double factor);
  /// this += factor * other
  void add_scaled(const ParamSet& other, double factor);

  [[nodiscard]] bool all_finite() const noexcept;
  /// Name of the first tensor holding a non-finite value, empty if none.
  [[nodiscard]] std::string first_non_finite() const;

  /// FNV-1a over names, shapes and raw value bytes.
  [[nodiscard]] std::uint64_t fingerprint() const noexcept;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Tensor> tensors_;
};

std::string fingerprint_hex(std::uint64_t fp);

// Dense-layer primitives shared by the velocity model and projection heads.

/// Logistic function, coefficient-wise.
Matrix sigmoid(const Matrix& x);
/// SiLU x * sigmoid(x), coefficient-wise.
Matrix silu(const Matrix& x);
/// d/dx SiLU at pre-activation x, given sig = sigmoid(x).
Matrix silu_derivative(const Matrix& x, const Matrix& sig);
/// W * x + b broadcast over columns.
Matrix affine(const Matrix& weight, const Matrix& bias, const Matrix& x);

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class Rng>
Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);

}  // namespace nn
}  // namespace flowdistill

#include <random>

template <class Rng>
flowdistill::Matrix flowdistill::nn::fan_in_uniform(Eigen::Index rows, Eigen::Index cols,
                                                    Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = dist(rng);
    }
  }
  return m;
}
