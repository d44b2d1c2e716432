#include <gtest/gtest.h>

#include <cmath>

#include "flowdistill/adversarial.hpp"
#include "flowdistill/optimizer.hpp"
#include "support.hpp"

using namespace flowdistill;
using namespace flowdistill::adversarial;

namespace {

ProjectionHead random_head(int width, std::uint64_t seed) {
  ProjectionHead head(0, width, seed);
  testing_support::randomize(head.params(), seed + 1, 0.4);
  return head;
}

}  // namespace

TEST(AdvLosses, ChanceProbabilities) {
  const auto l = adv_losses(0.5, 0.5);
  EXPECT_NEAR(l.d_loss, 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(l.g_loss, std::log(2.0), 1e-15);
}

TEST(AdvLosses, MinimaxGenerator) {
  const auto l = adv_losses(0.9, 0.2, GeneratorLoss::Minimax);
  EXPECT_NEAR(l.g_loss, std::log(0.8), 1e-15);
  EXPECT_NEAR(l.d_loss, -(std::log(0.9) + std::log(0.8)), 1e-15);
}

TEST(AdvLosses, SaturatedProbabilitiesStayFinite) {
  for (const double pr : {0.0, 1.0}) {
    for (const double pf : {0.0, 1.0}) {
      const auto l = adv_losses(pr, pf);
      EXPECT_TRUE(std::isfinite(l.d_loss));
      EXPECT_TRUE(std::isfinite(l.g_loss));
      EXPECT_LE(l.d_loss, -2.0 * std::log(kProbabilityClamp) + 1e-9);
    }
  }
}

TEST(AdvLogitGrads, MatchFiniteDifferences) {
  Rng rng(4);
  const Vector zr = standard_normal(6, 1, rng).col(0) * 2.0;
  const Vector zf = standard_normal(5, 1, rng).col(0) * 2.0;
  for (const auto kind : {GeneratorLoss::NonSaturating, GeneratorLoss::Minimax}) {
    const auto g = adv_logit_grads(zr, zf, kind);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < zr.size(); ++i) {
      Vector up = zr, down = zr;
      up(i) += h;
      down(i) -= h;
      const double fd = (adv_logit_grads(up, zf, kind).d_loss - adv_logit_grads(down, zf, kind).d_loss) / (2 * h);
      EXPECT_LT(testing_support::relative_error(g.d_real(i), fd), 1e-6);
    }
    for (Eigen::Index i = 0; i < zf.size(); ++i) {
      Vector up = zf, down = zf;
      up(i) += h;
      down(i) -= h;
      const auto gu = adv_logit_grads(zr, up, kind);
      const auto gd = adv_logit_grads(zr, down, kind);
      EXPECT_LT(testing_support::relative_error(g.d_fake(i), (gu.d_loss - gd.d_loss) / (2 * h)), 1e-6);
      EXPECT_LT(testing_support::relative_error(g.g_fake(i), (gu.g_loss - gd.g_loss) / (2 * h)), 1e-6);
    }
  }
}

TEST(AdvLogitGrads, EmptyBatchIsUsageError) {
  EXPECT_THROW((void)adv_logit_grads(Vector(0), Vector::Zero(2), GeneratorLoss::NonSaturating), UsageError);
}

TEST(FeatureTaps, DefaultsAndValidation) {
  const nn::Architecture arch{1, 64, 4};
  const auto taps = FeatureTapConfig::defaults_for(arch);
  EXPECT_EQ(taps.noisy_block, 4);
  EXPECT_EQ(taps.clean_block, 2);
  EXPECT_EQ(taps.block_for(0.0), 2);
  EXPECT_EQ(taps.block_for(0.2), 4);
  EXPECT_THROW(FeatureTapConfig({5, 2}).validate(arch), ConfigError);
  EXPECT_THROW(FeatureTapConfig({4, -1}).validate(arch), ConfigError);
}

TEST(ExtractFeatures, WidthAndTapSelection) {
  const auto teacher = testing_support::random_model(1, 16, 4, 3);
  const auto taps = FeatureTapConfig::defaults_for(teacher.architecture());
  const Matrix x = Matrix::Constant(1, 3, 0.8);
  const auto noisy = extract_features(teacher, x, 0.4, taps);
  const auto clean = extract_features(teacher, x, 0.0, taps);
  EXPECT_EQ(noisy.features.rows(), 16);
  EXPECT_EQ(noisy.block, 4);
  EXPECT_EQ(clean.block, 2);
  nn::ForwardCache full;
  teacher.forward(x, Vector::Constant(3, 0.4), full);
  EXPECT_EQ(noisy.features, full.hidden[4]);
  nn::ForwardCache at_zero;
  teacher.forward(x, Vector::Constant(3, 0.0), at_zero);
  EXPECT_EQ(clean.features, at_zero.hidden[2]);
}

TEST(ExtractFeatures, SingleVectorMatchesBatch) {
  const auto teacher = testing_support::random_model(1, 16, 4, 3);
  const auto taps = FeatureTapConfig::defaults_for(teacher.architecture());
  Vector x(1);
  x << -0.3;
  EXPECT_EQ(extract_features(teacher, x, 0.6, taps), extract_features(teacher, Matrix(x), 0.6, taps).features.col(0));
}

TEST(ExtractFeatures, InputGradientMatchesFiniteDifferencesAndLeavesTeacherAlone) {
  const auto teacher = testing_support::random_model(1, 16, 4, 7);
  const auto fp = teacher.params().fingerprint();
  const auto taps = FeatureTapConfig::defaults_for(teacher.architecture());
  Rng rng(9);
  const Matrix w = standard_normal(16, 4, rng);
  for (const double t : {0.0, 0.6}) {
    Matrix x = standard_normal(1, 4, rng);
    const auto batch = extract_features(teacher, x, t, taps);
    const Matrix grad = feature_input_gradient(teacher, batch, w);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double h = 1e-6;
      Matrix up = x, down = x;
      up(0, c) += h;
      down(0, c) -= h;
      const double fd = (extract_features(teacher, up, t, taps).features.cwiseProduct(w).sum() -
                         extract_features(teacher, down, t, taps).features.cwiseProduct(w).sum()) /
                        (2 * h);
      EXPECT_LT(testing_support::relative_error(grad(0, c), fd), 1e-5) << "t " << t << " col " << c;
    }
  }
  EXPECT_EQ(teacher.params().fingerprint(), fp);
}

TEST(ProjectionHead, FreshHeadIsAtChance) {
  const ProjectionHead head(0, 16, 5);
  Rng rng(1);
  const Vector p = discriminate(head, standard_normal(16, 8, rng));
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p(i), 0.5);
  EXPECT_EQ(head.params()[0].rows(), 8);
  EXPECT_EQ(head.feature_width(), 16);
}

TEST(ProjectionHead, RejectsMalformedParams) {
  nn::ParamSet bad;
  bad.add("fc1.weight", Matrix::Zero(4, 8));
  EXPECT_THROW(ProjectionHead(0, bad), ConfigError);
  EXPECT_THROW(ProjectionHead(0, 0, 1), ConfigError);
}

TEST(ProjectionHead, FeatureWidthMismatchIsUsageError) {
  const ProjectionHead head(0, 16, 5);
  EXPECT_THROW((void)head.logits(Matrix::Zero(8, 2)), UsageError);
}

TEST(ProjectionHead, BackwardMatchesFiniteDifferences) {
  auto head = random_head(12, 3);
  Rng rng(2);
  const Matrix f = standard_normal(12, 5, rng);
  const Vector w = standard_normal(5, 1, rng).col(0);
  ProjectionHead::Cache cache;
  (void)head.forward(f, cache);
  nn::ParamSet grads = head.params().zeros_like();
  const Matrix grad_features = head.backward(cache, w, &grads);
  const auto check = testing_support::check_gradient(
      head.params(), grads, [&] { return head.logits(f).dot(w); }, 40, 8, 1e-6);
  EXPECT_LT(check.max_rel_error, 1e-5);
  for (Eigen::Index i = 0; i < 12; ++i) {
    Matrix up = f, down = f;
    up(i, 1) += 1e-6;
    down(i, 1) -= 1e-6;
    const double fd = (head.logits(up).dot(w) - head.logits(down).dot(w)) / 2e-6;
    EXPECT_LT(testing_support::relative_error(grad_features(i, 1), fd), 1e-5);
  }
}

TEST(ProjectionHead, LearnsSeparableFeatures) {
  // Two Gaussian blobs in feature space; d-loss Adam training should separate them.
  Rng rng(12);
  const int width = 16;
  Vector offset = standard_normal(width, 1, rng).col(0);
  offset *= 1.5 / offset.norm();
  ProjectionHead head(0, width, 4);
  auto opt = nn::make_adam(head.params(), nn::AdamConfig{.lr = 1e-2});
  for (int it = 0; it < 300; ++it) {
    const Matrix real = (standard_normal(width, 64, rng).colwise() + offset);
    const Matrix fake = (standard_normal(width, 64, rng).colwise() - offset);
    ProjectionHead::Cache rc, fc;
    const Vector lr = head.forward(real, rc);
    const Vector lf = head.forward(fake, fc);
    const auto g = adv_logit_grads(lr, lf, GeneratorLoss::NonSaturating);
    nn::ParamSet grads = head.params().zeros_like();
    head.backward(rc, g.d_real, &grads);
    head.backward(fc, g.d_fake, &grads);
    nn::optimizer_step(head.params(), grads, opt);
  }
  const Matrix real = standard_normal(width, 1000, rng).colwise() + offset;
  const Matrix fake = standard_normal(width, 1000, rng).colwise() - offset;
  const Vector pr = discriminate(head, real);
  const Vector pf = discriminate(head, fake);
  const double accuracy = ((pr.array() > 0.5).count() + (pf.array() < 0.5).count()) / 2000.0;
  EXPECT_GT(accuracy, 0.9);
}

class AdversarialStepTest : public ::testing::Test {
 protected:
  nn::VelocityModel teacher = testing_support::random_model(1, 16, 4, 21);
  nn::VelocityModel student = testing_support::random_model(1, 16, 4, 22);
  ProjectionHead head = random_head(16, 23);
  FeatureTapConfig taps = FeatureTapConfig::defaults_for(teacher.architecture());
  Matrix gen_prev;
  Matrix real;

  void SetUp() override {
    Rng rng(5);
    gen_prev = standard_normal(1, 6, rng);
    real = standard_normal(1, 6, rng) * 2.0;
  }

  AdversarialStep step(double t_from, double t_to, nn::ParamSet* sg, nn::ParamSet* hg,
                       GeneratorLoss kind = GeneratorLoss::NonSaturating) const {
    return adversarial_step(student, teacher, head, gen_prev, real, t_from, t_to, taps, kind, sg, hg);
  }
};

TEST_F(AdversarialStepTest, GeneratedIsOneEulerStep) {
  const auto s = step(0.6, 0.4, nullptr, nullptr);
  EXPECT_EQ(s.generated, gen_prev + (0.4 - 0.6) * student.velocity(gen_prev, 0.6));
}

TEST_F(AdversarialStepTest, LossesMatchHeadProbabilities) {
  const auto s = step(0.4, 0.2, nullptr, nullptr);
  const Vector pr = discriminate(head, extract_features(teacher, real, 0.2, taps).features);
  const Vector pf = discriminate(head, extract_features(teacher, s.generated, 0.2, taps).features);
  EXPECT_NEAR(s.p_real, pr.mean(), 1e-14);
  EXPECT_NEAR(s.p_fake, pf.mean(), 1e-14);
  double d = 0.0, g = 0.0;
  for (Eigen::Index i = 0; i < pr.size(); ++i) {
    const auto l = adv_losses(pr(i), pf(i));
    d += l.d_loss / 6.0;
    g += l.g_loss / 6.0;
  }
  EXPECT_NEAR(s.d_loss, d, 1e-12);
  EXPECT_NEAR(s.g_loss, g, 1e-12);
}

TEST_F(AdversarialStepTest, StudentGradientThroughEulerStepAndTeacher) {
  for (const auto& [from, to] : {std::pair{1.0, 0.8}, std::pair{0.2, 0.0}}) {
    for (const auto kind : {GeneratorLoss::NonSaturating, GeneratorLoss::Minimax}) {
      nn::ParamSet grads = student.params().zeros_like();
      (void)step(from, to, &grads, nullptr, kind);
      const auto check = testing_support::check_gradient(
          student.params(), grads, [&] { return step(from, to, nullptr, nullptr, kind).g_loss; }, 48, 3, 1e-6);
      EXPECT_LT(check.max_rel_error, 1e-4) << "t_from " << from;
    }
  }
}

TEST_F(AdversarialStepTest, HeadGradientOfDiscriminatorLoss) {
  nn::ParamSet grads = head.params().zeros_like();
  (void)step(0.6, 0.4, nullptr, &grads);
  const auto check = testing_support::check_gradient(
      head.params(), grads, [&] { return step(0.6, 0.4, nullptr, nullptr).d_loss; }, 48, 4, 1e-6);
  EXPECT_LT(check.max_rel_error, 1e-5);
}

TEST_F(AdversarialStepTest, TeacherParamsNeverChange) {
  const auto fp = teacher.params().fingerprint();
  nn::ParamSet sg = student.params().zeros_like();
  nn::ParamSet hg = head.params().zeros_like();
  (void)step(0.6, 0.4, &sg, &hg);
  EXPECT_EQ(teacher.params().fingerprint(), fp);
}

TEST_F(AdversarialStepTest, EmptyBatchIsUsageError) {
  EXPECT_THROW((void)adversarial_step(student, teacher, head, Matrix(1, 0), real, 0.6, 0.4, taps,
                                      GeneratorLoss::NonSaturating, nullptr, nullptr),
               UsageError);
}
