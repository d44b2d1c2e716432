#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "flowdistill/nn.hpp"

namespace flowdistill {

/// Anything that maps a batch of states (d x B) at time t to velocities (d x B).
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  [[nodiscard]] virtual int dim() const noexcept = 0;
  [[nodiscard]] virtual Matrix velocity(const Matrix& x, double t) const = 0;
};

/// Wraps a field and counts batch evaluations (one count per call).
class CountingField final : public VelocityField {
 public:
  explicit CountingField(const VelocityField& inner) : inner_(inner) {}
  [[nodiscard]] int dim() const noexcept override { return inner_.dim(); }
  [[nodiscard]] Matrix velocity(const Matrix& x, double t) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.velocity(x, t);
  }
  [[nodiscard]] std::int64_t calls() const noexcept { return calls_.load(); }

 private:
  const VelocityField& inner_;
  mutable std::atomic<std::int64_t> calls_{0};
};

namespace nn {

struct Architecture {
  int dim = 1;
  int hidden = 64;
  int blocks = 4;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Intermediate values of one batched forward pass, kept for backprop.
struct ForwardCache {
  Matrix input;                   // (d+1) x B, time in the last row
  std::vector<Matrix> hidden;     // hidden[0] after the input layer, hidden[r] after block r
  std::vector<Matrix> block_pre;  // first-linear pre-activation of each evaluated block
  std::vector<Matrix> block_sig;  // sigmoid of block_pre
  std::vector<Matrix> block_act;  // SiLU of block_pre
  Matrix head_sig;                // sigmoid(hidden[R])
  Matrix head_act;                // SiLU(hidden[R]) fed to the output layer
  int depth = 0;                  // number of blocks evaluated
  bool has_output = false;
};

/// Residual MLP velocity model.
///
///   h0 = W_in [x; t] + b_in
///   h_r = h_{r-1} + W2_r SiLU(W1_r h_{r-1} + b1_r) + b2_r     r = 1..R
///   v  = W_out SiLU(h_R) + b_out
///
/// The output layer is zero-initialized so a fresh model predicts v = 0.
class VelocityModel final : public VelocityField {
 public:
  VelocityModel(Architecture arch, ParamSet params);

  [[nodiscard]] const Architecture& architecture() const noexcept { return arch_; }
  [[nodiscard]] const ParamSet& params() const noexcept { return params_; }
  [[nodiscard]] ParamSet& params() noexcept { return params_; }

  [[nodiscard]] int dim() const noexcept override { return arch_.dim; }
  [[nodiscard]] Matrix velocity(const Matrix& x, double t) const override;
  /// Per-column times.
  [[nodiscard]] Matrix velocity(const Matrix& x, const Vector& t) const;
  [[nodiscard]] Vector eval(const Vector& x, double t) const;

  /// Runs the network; stops after `depth` blocks (no output layer) when depth < R.
  void forward(const Matrix& x, const Vector& t, ForwardCache& cache, int depth) const;
  void forward(const Matrix& x, const Vector& t, ForwardCache& cache) const {
    forward(x, t, cache, arch_.blocks);
  }
  [[nodiscard]] Matrix output(const ForwardCache& cache) const;

  /// Backprop from dL/dv. Adds parameter gradients into `grads` when non-null.
  /// Returns dL/dx (d x B), the time row dropped.
  Matrix backward(const ForwardCache& cache, const Matrix& grad_out, ParamSet* grads) const;
  /// Backprop from dL/dh_block (block in [0, cache.depth]).
  Matrix backward_from_hidden(const ForwardCache& cache, int block, const Matrix& grad_hidden,
                              ParamSet* grads) const;

 private:
  static constexpr std::size_t kInW = 0, kInB = 1;
  [[nodiscard]] std::size_t block_index(int r) const noexcept { return 2 + 4 * static_cast<std::size_t>(r); }
  [[nodiscard]] std::size_t out_index() const noexcept { return block_index(arch_.blocks); }

  void check_finite(const ForwardCache& cache) const;

  Architecture arch_;
  ParamSet params_;
};

/// Mean over all elements of (v(x, t) - target)^2, adding d loss / d params into
/// `grads` when non-null. Columns are processed in cache-sized chunks.
double velocity_regression_loss(const VelocityModel& model, const Matrix& x, const Vector& t,
                                const Matrix& target, ParamSet* grads);

VelocityModel build_velocity_model(int dim, int hidden, int blocks, std::uint64_t seed);
inline VelocityModel build_velocity_model(const Architecture& arch, std::uint64_t seed) {
  return build_velocity_model(arch.dim, arch.hidden, arch.blocks, seed);
}

}  // namespace nn
}  // namespace flowdistill
