#pragma once

#include <cstdint>

#include "flowdistill/nn.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::adversarial {

/// Which teacher hidden state feeds the discriminator.
/// Block b means the residual stream after block b (0 = input layer output).
struct FeatureTapConfig {
  int noisy_block = 4;  // used for t > 0
  int clean_block = 2;  // used for t = 0

  /// Final block for noisy inputs, middle block for clean ones.
  static FeatureTapConfig defaults_for(const nn::Architecture& arch) noexcept {
    return {arch.blocks, arch.blocks / 2};
  }
  [[nodiscard]] int block_for(double t) const noexcept { return t > 0.0 ? noisy_block : clean_block; }
  /// Throws ConfigError if a tap does not address an existing block.
  void validate(const nn::Architecture& arch) const;

  friend bool operator==(const FeatureTapConfig&, const FeatureTapConfig&) = default;
};

/// Teacher features for a batch plus what is needed to backprop into x.
struct FeatureBatch {
  Matrix features;  // H x B
  nn::ForwardCache cache;
  int block = 0;
};

FeatureBatch extract_features(const nn::VelocityModel& teacher, const Matrix& x, double t,
                              const FeatureTapConfig& taps);
Vector extract_features(const nn::VelocityModel& teacher, const Vector& x, double t,
                        const FeatureTapConfig& taps);
/// dL/dx given dL/dfeatures. Never touches teacher parameters.
Matrix feature_input_gradient(const nn::VelocityModel& teacher, const FeatureBatch& batch,
                              const Matrix& grad_features);

/// Timestep-aware discriminator head: features -> SiLU MLP (H -> H/2 -> 1) -> logit.
class ProjectionHead {
 public:
  struct Cache {
    Matrix features;
    Matrix pre;
    Matrix sig;
    Matrix act;
  };

  /// Fan-in init for the hidden layer; output layer zero-initialized.
  ProjectionHead(int index, int feature_width, std::uint64_t seed);
  ProjectionHead(int index, nn::ParamSet params);

  [[nodiscard]] int index() const noexcept { return index_; }
  [[nodiscard]] int feature_width() const { return static_cast<int>(params_[0].cols()); }
  [[nodiscard]] const nn::ParamSet& params() const noexcept { return params_; }
  [[nodiscard]] nn::ParamSet& params() noexcept { return params_; }

  /// One logit per column.
  [[nodiscard]] Vector logits(const Matrix& features) const;
  Vector forward(const Matrix& features, Cache& cache) const;
  /// Adds parameter gradients into `grads` when non-null; returns dL/dfeatures.
  Matrix backward(const Cache& cache, const Vector& grad_logits, nn::ParamSet* grads) const;

 private:
  int index_;
  nn::ParamSet params_;
};

constexpr double kProbabilityClamp = 1e-7;

/// Probability the head assigns to "real".
double discriminate(const ProjectionHead& head, const Vector& features);
Vector discriminate(const ProjectionHead& head, const Matrix& features);

enum class GeneratorLoss {
  NonSaturating,  // g = -log D(fake)
  Minimax,        // g = log(1 - D(fake))
};

struct AdvLosses {
  double d_loss;
  double g_loss;
};

/// d = -[log p_real + log(1 - p_fake)], g per `kind`; probabilities clamped to [eps, 1 - eps].
AdvLosses adv_losses(double p_real, double p_fake, GeneratorLoss kind = GeneratorLoss::NonSaturating);

/// Batch-mean losses and their derivatives with respect to the logits.
struct AdvLogitGrads {
  double d_loss = 0.0;
  double g_loss = 0.0;
  double mean_p_real = 0.0;
  double mean_p_fake = 0.0;
  Vector d_real;  // d d_loss / d logit_real
  Vector d_fake;  // d d_loss / d logit_fake
  Vector g_fake;  // d g_loss / d logit_fake
};

AdvLogitGrads adv_logit_grads(const Vector& logit_real, const Vector& logit_fake, GeneratorLoss kind);

/// One generator/discriminator evaluation at key interval (t_from -> t_to):
///   fake = gen_prev + (t_to - t_from) * student(gen_prev, t_from)
///   p_real = sigmoid(head(teacher_features(real, t_to))), p_fake likewise for fake.
struct AdversarialStep {
  Matrix generated;  // the fake latent at t_to
  double d_loss = 0.0;
  double g_loss = 0.0;
  double p_real = 0.0;
  double p_fake = 0.0;
};

/// Gradients of g_loss go to `student_grads`, of d_loss to `head_grads` (either may be null).
AdversarialStep adversarial_step(const nn::VelocityModel& student, const nn::VelocityModel& teacher,
                                 const ProjectionHead& head, const Matrix& gen_prev, const Matrix& real,
                                 double t_from, double t_to, const FeatureTapConfig& taps,
                                 GeneratorLoss kind, nn::ParamSet* student_grads,
                                 nn::ParamSet* head_grads);

}  // namespace flowdistill::adversarial
