#include "flowdistill/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowdistill/rng.hpp"

namespace flowdistill::adversarial {

void FeatureTapConfig::validate(const nn::Architecture& arch) const {
  auto check = [&](int block, const char* which) {
    if (block < 0 || block > arch.blocks) {
      throw ConfigError(std::string("feature tap '") + which + "' = " + std::to_string(block) +
                        " does not address a block of a " + std::to_string(arch.blocks) + "-block teacher");
    }
  };
  check(noisy_block, "noisy_block");
  check(clean_block, "clean_block");
}

FeatureBatch extract_features(const nn::VelocityModel& teacher, const Matrix& x, double t,
                              const FeatureTapConfig& taps) {
  taps.validate(teacher.architecture());
  FeatureBatch out;
  out.block = taps.block_for(t);
  teacher.forward(x, Vector::Constant(x.cols(), t), out.cache, out.block);
  out.features = out.cache.hidden[static_cast<std::size_t>(out.block)];
  return out;
}

Vector extract_features(const nn::VelocityModel& teacher, const Vector& x, double t,
                        const FeatureTapConfig& taps) {
  return extract_features(teacher, Matrix(x), t, taps).features.col(0);
}

Matrix feature_input_gradient(const nn::VelocityModel& teacher, const FeatureBatch& batch,
                              const Matrix& grad_features) {
  return teacher.backward_from_hidden(batch.cache, batch.block, grad_features, nullptr);
}

ProjectionHead::ProjectionHead(int index, int feature_width, std::uint64_t seed) : index_(index) {
  if (feature_width < 1) throw ConfigError("ProjectionHead: feature width must be >= 1");
  const Eigen::Index h = feature_width;
  const Eigen::Index inner = std::max<Eigen::Index>(1, h / 2);
  Rng rng(seed);
  params_.add("fc1.weight", nn::fan_in_uniform(inner, h, h, rng));
  params_.add("fc1.bias", nn::fan_in_uniform(inner, 1, h, rng));
  params_.add("fc2.weight", Matrix::Zero(1, inner));
  params_.add("fc2.bias", Matrix::Zero(1, 1));
}

ProjectionHead::ProjectionHead(int index, nn::ParamSet params) : index_(index), params_(std::move(params)) {
  if (params_.tensor_count() != 4 || params_[1].rows() != params_[0].rows() || params_[1].cols() != 1 ||
      params_[2].rows() != 1 || params_[2].cols() != params_[0].rows() || params_[3].size() != 1) {
    throw ConfigError("ProjectionHead: parameters do not form an H -> H/2 -> 1 MLP");
  }
}

Vector ProjectionHead::forward(const Matrix& features, Cache& cache) const {
  if (features.rows() != params_[0].cols()) throw UsageError("ProjectionHead: feature width mismatch");
  cache.features = features;
  cache.pre = nn::affine(params_[0], params_[1], features);
  cache.sig = nn::sigmoid(cache.pre);
  cache.act = cache.pre.cwiseProduct(cache.sig);
  return nn::affine(params_[2], params_[3], cache.act).row(0).transpose();
}

Vector ProjectionHead::logits(const Matrix& features) const {
  Cache cache;
  return forward(features, cache);
}

Matrix ProjectionHead::backward(const Cache& cache, const Vector& grad_logits, nn::ParamSet* grads) const {
  const Matrix g = grad_logits.transpose();
  if (grads != nullptr) {
    (*grads)[2].noalias() += g * cache.act.transpose();
    (*grads)[3](0, 0) += g.sum();
  }
  const Matrix grad_pre = (params_[2].transpose() * g).cwiseProduct(nn::silu_derivative(cache.pre, cache.sig));
  if (grads != nullptr) {
    (*grads)[0].noalias() += grad_pre * cache.features.transpose();
    (*grads)[1].col(0) += grad_pre.rowwise().sum();
  }
  return params_[0].transpose() * grad_pre;
}

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

bool clamped(double p) { return p < kProbabilityClamp || p > 1.0 - kProbabilityClamp; }

}  // namespace

double discriminate(const ProjectionHead& head, const Vector& features) {
  return logistic(head.logits(Matrix(features))(0));
}

Vector discriminate(const ProjectionHead& head, const Matrix& features) {
  return head.logits(features).unaryExpr([](double z) { return logistic(z); });
}

AdvLosses adv_losses(double p_real, double p_fake, GeneratorLoss kind) {
  const double pr = clamp_probability(p_real);
  const double pf = clamp_probability(p_fake);
  const double d = -(std::log(pr) + std::log1p(-pf));
  const double g = kind == GeneratorLoss::NonSaturating ? -std::log(pf) : std::log1p(-pf);
  return {d, g};
}

AdvLogitGrads adv_logit_grads(const Vector& logit_real, const Vector& logit_fake, GeneratorLoss kind) {
  if (logit_real.size() == 0 || logit_fake.size() == 0) throw UsageError("adv_logit_grads: empty batch");
  AdvLogitGrads out;
  out.d_real.resize(logit_real.size());
  out.d_fake.resize(logit_fake.size());
  out.g_fake.resize(logit_fake.size());
  const double nr = static_cast<double>(logit_real.size());
  const double nf = static_cast<double>(logit_fake.size());
  for (Eigen::Index i = 0; i < logit_real.size(); ++i) {
    const double p = logistic(logit_real(i));
    out.mean_p_real += p / nr;
    out.d_loss += -std::log(clamp_probability(p)) / nr;
    // d(-log p)/dz = -(1 - p)
    out.d_real(i) = clamped(p) ? 0.0 : -(1.0 - p) / nr;
  }
  for (Eigen::Index i = 0; i < logit_fake.size(); ++i) {
    const double p = logistic(logit_fake(i));
    const double pc = clamp_probability(p);
    out.mean_p_fake += p / nf;
    out.d_loss += -std::log1p(-pc) / nf;
    out.d_fake(i) = clamped(p) ? 0.0 : p / nf;
    if (kind == GeneratorLoss::NonSaturating) {
      out.g_loss += -std::log(pc) / nf;
      out.g_fake(i) = clamped(p) ? 0.0 : -(1.0 - p) / nf;
    } else {
      out.g_loss += std::log1p(-pc) / nf;
      out.g_fake(i) = clamped(p) ? 0.0 : -p / nf;
    }
  }
  return out;
}

AdversarialStep adversarial_step(const nn::VelocityModel& student, const nn::VelocityModel& teacher,
                                 const ProjectionHead& head, const Matrix& gen_prev, const Matrix& real,
                                 double t_from, double t_to, const FeatureTapConfig& taps,
                                 GeneratorLoss kind, nn::ParamSet* student_grads,
                                 nn::ParamSet* head_grads) {
  if (gen_prev.cols() == 0 || real.cols() == 0) throw UsageError("adversarial_step: empty batch");
  const double dt = t_to - t_from;
  nn::ForwardCache student_cache;
  student.forward(gen_prev, Vector::Constant(gen_prev.cols(), t_from), student_cache);
  AdversarialStep out;
  out.generated = gen_prev + dt * student.output(student_cache);

  const FeatureBatch real_features = extract_features(teacher, real, t_to, taps);
  const FeatureBatch fake_features = extract_features(teacher, out.generated, t_to, taps);
  ProjectionHead::Cache real_cache, fake_cache;
  const Vector logit_real = head.forward(real_features.features, real_cache);
  const Vector logit_fake = head.forward(fake_features.features, fake_cache);

  const AdvLogitGrads g = adv_logit_grads(logit_real, logit_fake, kind);
  if (!std::isfinite(g.d_loss) || !std::isfinite(g.g_loss)) {
    throw NumericalError("adversarial_step: non-finite adversarial loss");
  }
  out.d_loss = g.d_loss;
  out.g_loss = g.g_loss;
  out.p_real = g.mean_p_real;
  out.p_fake = g.mean_p_fake;

  if (head_grads != nullptr) {
    head.backward(real_cache, g.d_real, head_grads);
    head.backward(fake_cache, g.d_fake, head_grads);
  }
  if (student_grads != nullptr) {
    const Matrix grad_features = head.backward(fake_cache, g.g_fake, nullptr);
    const Matrix grad_generated = feature_input_gradient(teacher, fake_features, grad_features);
    student.backward(student_cache, dt * grad_generated, student_grads);
  }
  return out;
}

}  // namespace flowdistill::adversarial
