#include "flowdistill/velocity_model.hpp"

#include <algorithm>
#include <string>

#include "flowdistill/rng.hpp"

namespace flowdistill::nn {

namespace {

void accumulate_affine_grads(ParamSet* grads, std::size_t w_index, const Matrix& grad_y,
                             const Matrix& x) {
  if (grads == nullptr) return;
  (*grads)[w_index].noalias() += grad_y * x.transpose();
  (*grads)[w_index + 1].col(0) += grad_y.rowwise().sum();
}

}  // namespace

VelocityModel::VelocityModel(Architecture arch, ParamSet params)
    : arch_(arch), params_(std::move(params)) {
  if (arch_.dim < 1 || arch_.hidden < 1 || arch_.blocks < 1) {
    throw ConfigError("VelocityModel: dim, hidden and blocks must be >= 1");
  }
  const auto expected = 2 + 4 * static_cast<std::size_t>(arch_.blocks) + 2;
  if (params_.tensor_count() != expected) {
    throw ConfigError("VelocityModel: parameter count does not match architecture");
  }
  const Eigen::Index d = arch_.dim, h = arch_.hidden;
  auto expect = [&](std::size_t i, Eigen::Index rows, Eigen::Index cols) {
    if (params_[i].rows() != rows || params_[i].cols() != cols) {
      throw ConfigError("VelocityModel: tensor '" + params_.tensor(i).name + "' has wrong shape");
    }
  };
  expect(kInW, h, d + 1);
  expect(kInB, h, 1);
  for (int r = 0; r < arch_.blocks; ++r) {
    expect(block_index(r) + 0, h, h);
    expect(block_index(r) + 1, h, 1);
    expect(block_index(r) + 2, h, h);
    expect(block_index(r) + 3, h, 1);
  }
  expect(out_index(), d, h);
  expect(out_index() + 1, d, 1);
}

void VelocityModel::forward(const Matrix& x, const Vector& t, ForwardCache& cache,
                            int depth) const {
  if (x.rows() != arch_.dim) throw UsageError("VelocityModel: state dimension mismatch");
  if (t.size() != x.cols()) throw UsageError("VelocityModel: one time per column required");
  if (depth < 0 || depth > arch_.blocks) throw ConfigError("VelocityModel: depth out of range");

  cache.input.resize(arch_.dim + 1, x.cols());
  cache.input.topRows(arch_.dim) = x;
  cache.input.row(arch_.dim) = t.transpose();

  cache.hidden.resize(static_cast<std::size_t>(depth) + 1);
  cache.block_pre.resize(static_cast<std::size_t>(depth));
  cache.block_sig.resize(static_cast<std::size_t>(depth));
  cache.block_act.resize(static_cast<std::size_t>(depth));
  auto affine_into = [](Matrix& y, const Matrix& w, const Matrix& b, const Matrix& x) {
    y.resize(w.rows(), x.cols());
    y.noalias() = w * x;
    y.colwise() += b.col(0);
  };
  auto sigmoid_into = [](Matrix& sig, const Matrix& pre) {
    sig.resize(pre.rows(), pre.cols());
    sig.array() = (1.0 + (-pre.array()).exp()).inverse();
  };
  affine_into(cache.hidden[0], params_[kInW], params_[kInB], cache.input);
  for (int r = 0; r < depth; ++r) {
    const auto b = block_index(r);
    const auto ur = static_cast<std::size_t>(r);
    affine_into(cache.block_pre[ur], params_[b], params_[b + 1], cache.hidden[ur]);
    sigmoid_into(cache.block_sig[ur], cache.block_pre[ur]);
    cache.block_act[ur].resize(cache.block_pre[ur].rows(), cache.block_pre[ur].cols());
    cache.block_act[ur].array() = cache.block_pre[ur].array() * cache.block_sig[ur].array();
    cache.hidden[ur + 1] = cache.hidden[ur];
    cache.hidden[ur + 1].noalias() += params_[b + 2] * cache.block_act[ur];
    cache.hidden[ur + 1].colwise() += params_[b + 3].col(0);
  }
  cache.depth = depth;
  cache.has_output = depth == arch_.blocks;
  if (cache.has_output) {
    sigmoid_into(cache.head_sig, cache.hidden.back());
    cache.head_act.resize(cache.head_sig.rows(), cache.head_sig.cols());
    cache.head_act.array() = cache.hidden.back().array() * cache.head_sig.array();
  }
  check_finite(cache);
}

Matrix VelocityModel::output(const ForwardCache& cache) const {
  if (!cache.has_output) throw UsageError("VelocityModel: cache was truncated before the output layer");
  Matrix v = affine(params_[out_index()], params_[out_index() + 1], cache.head_act);
  if (!v.allFinite()) throw NumericalError("VelocityModel: non-finite value in tensor 'output'");
  return v;
}

void VelocityModel::check_finite(const ForwardCache& cache) const {
  if (cache.hidden.back().allFinite()) return;
  if (!cache.hidden[0].allFinite()) throw NumericalError("VelocityModel: non-finite value in tensor 'input'");
  for (std::size_t r = 0; r < cache.block_pre.size(); ++r) {
    if (!cache.block_pre[r].allFinite() || !cache.hidden[r + 1].allFinite()) {
      throw NumericalError("VelocityModel: non-finite value in tensor 'block" + std::to_string(r) + "'");
    }
  }
  throw NumericalError("VelocityModel: non-finite hidden state");
}

Matrix VelocityModel::velocity(const Matrix& x, double t) const {
  return velocity(x, Vector::Constant(x.cols(), t));
}

Matrix VelocityModel::velocity(const Matrix& x, const Vector& t) const {
  constexpr Eigen::Index kChunk = 256;
  if (x.cols() <= kChunk) {
    ForwardCache cache;
    forward(x, t, cache);
    return output(cache);
  }
  if (t.size() != x.cols()) throw UsageError("VelocityModel: one time per column required");
  Matrix v(arch_.dim, x.cols());
  ForwardCache cache;
  for (Eigen::Index begin = 0; begin < x.cols(); begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.cols() - begin);
    forward(x.middleCols(begin, len), t.segment(begin, len), cache);
    v.middleCols(begin, len) = output(cache);
  }
  return v;
}

Vector VelocityModel::eval(const Vector& x, double t) const {
  return velocity(Matrix(x), t).col(0);
}

Matrix VelocityModel::backward(const ForwardCache& cache, const Matrix& grad_out,
                               ParamSet* grads) const {
  if (!cache.has_output) throw UsageError("VelocityModel::backward: cache has no output layer");
  if (grad_out.rows() != arch_.dim || grad_out.cols() != cache.input.cols()) {
    throw UsageError("VelocityModel::backward: gradient shape mismatch");
  }
  accumulate_affine_grads(grads, out_index(), grad_out, cache.head_act);
  Matrix grad_h = (params_[out_index()].transpose() * grad_out)
                      .cwiseProduct(silu_derivative(cache.hidden.back(), cache.head_sig));
  return backward_from_hidden(cache, arch_.blocks, grad_h, grads);
}

Matrix VelocityModel::backward_from_hidden(const ForwardCache& cache, int block,
                                           const Matrix& grad_hidden, ParamSet* grads) const {
  if (block < 0 || block > cache.depth) throw UsageError("backward_from_hidden: block out of range");
  if (grads != nullptr && !grads->congruent(params_)) {
    throw UsageError("backward_from_hidden: gradient ParamSet not congruent with model");
  }
  Matrix g = grad_hidden;
  Matrix grad_pre;
  for (int r = block - 1; r >= 0; --r) {
    const auto b = block_index(r);
    const auto ur = static_cast<std::size_t>(r);
    accumulate_affine_grads(grads, b + 2, g, cache.block_act[ur]);
    grad_pre.resize(g.rows(), g.cols());
    grad_pre.noalias() = params_[b + 2].transpose() * g;
    const auto& sig = cache.block_sig[ur].array();
    grad_pre.array() *= sig * (1.0 + cache.block_pre[ur].array() * (1.0 - sig));
    accumulate_affine_grads(grads, b, grad_pre, cache.hidden[ur]);
    g.noalias() += params_[b].transpose() * grad_pre;
  }
  accumulate_affine_grads(grads, kInW, g, cache.input);
  Matrix grad_input = params_[kInW].transpose() * g;
  return grad_input.topRows(arch_.dim);
}

double velocity_regression_loss(const VelocityModel& model, const Matrix& x, const Vector& t,
                                const Matrix& target, ParamSet* grads) {
  constexpr Eigen::Index kChunk = 128;
  if (x.cols() == 0) throw UsageError("velocity_regression_loss: empty batch");
  if (target.rows() != x.rows() || target.cols() != x.cols() || t.size() != x.cols()) {
    throw UsageError("velocity_regression_loss: shape mismatch");
  }
  const double denom = static_cast<double>(target.size());
  double sum = 0.0;
  ForwardCache cache;
  for (Eigen::Index begin = 0; begin < x.cols(); begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.cols() - begin);
    model.forward(x.middleCols(begin, len), t.segment(begin, len), cache);
    const Matrix residual = model.output(cache) - target.middleCols(begin, len);
    sum += residual.squaredNorm();
    if (grads != nullptr) model.backward(cache, (2.0 / denom) * residual, grads);
  }
  return sum / denom;
}

VelocityModel build_velocity_model(int dim, int hidden, int blocks, std::uint64_t seed) {
  if (dim < 1 || hidden < 1 || blocks < 1) {
    throw ConfigError("build_velocity_model: dim, hidden and blocks must be >= 1");
  }
  Rng rng(seed);
  const Eigen::Index d = dim, h = hidden;
  ParamSet p;
  p.add("input.weight", fan_in_uniform(h, d + 1, d + 1, rng));
  p.add("input.bias", fan_in_uniform(h, 1, d + 1, rng));
  for (int r = 0; r < blocks; ++r) {
    const std::string prefix = "block" + std::to_string(r) + ".";
    p.add(prefix + "fc1.weight", fan_in_uniform(h, h, h, rng));
    p.add(prefix + "fc1.bias", fan_in_uniform(h, 1, h, rng));
    p.add(prefix + "fc2.weight", fan_in_uniform(h, h, h, rng));
    p.add(prefix + "fc2.bias", fan_in_uniform(h, 1, h, rng));
  }
  p.add("output.weight", Matrix::Zero(d, h));
  p.add("output.bias", Matrix::Zero(d, 1));
  return VelocityModel(Architecture{dim, hidden, blocks}, std::move(p));
}

}  // namespace flowdistill::nn
