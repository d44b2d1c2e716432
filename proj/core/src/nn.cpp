#include "flowdistill/nn.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <iomanip>

namespace flowdistill::nn {

void ParamSet::add(std::string name, Matrix value) {
  tensors_.push_back(Tensor{std::move(name), std::move(value)});
}

std::size_t ParamSet::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

double ParamSet::flat(std::size_t index) const {
  for (const auto& t : tensors_) {
    const auto sz = static_cast<std::size_t>(t.value.size());
    if (index < sz) return t.value.data()[index];
    index -= sz;
  }
  throw UsageError("ParamSet flat index out of range");
}

double& ParamSet::flat(std::size_t index) {
  for (auto& t : tensors_) {
    const auto sz = static_cast<std::size_t>(t.value.size());
    if (index < sz) return t.value.data()[index];
    index -= sz;
  }
  throw UsageError("ParamSet flat index out of range");
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& t : tensors_) out.add(t.name, Matrix::Zero(t.value.rows(), t.value.cols()));
  return out;
}

bool ParamSet::congruent(const ParamSet& other) const noexcept {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].value.rows() != other.tensors_[i].value.rows() ||
        tensors_[i].value.cols() != other.tensors_[i].value.cols()) {
      return false;
    }
  }
  return true;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

void ParamSet::scale(double factor) {
  for (auto& t : tensors_) t.value *= factor;
}

void ParamSet::add_scaled(const ParamSet& other, double factor) {
  if (!congruent(other)) throw UsageError("ParamSet::add_scaled: shape mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    tensors_[i].value += factor * other.tensors_[i].value;
  }
}

bool ParamSet::all_finite() const noexcept {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

std::string ParamSet::first_non_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return t.name;
  }
  return {};
}

std::uint64_t ParamSet::fingerprint() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : tensors_) {
    feed(t.name.data(), t.name.size());
    const std::int64_t shape[2] = {t.value.rows(), t.value.cols()};
    feed(shape, sizeof(shape));
    feed(t.value.data(), static_cast<std::size_t>(t.value.size()) * sizeof(double));
  }
  return h;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.congruent(b)) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    if (a.tensors_[i].name != b.tensors_[i].name) return false;
    const auto n = static_cast<std::size_t>(a.tensors_[i].value.size()) * sizeof(double);
    if (std::memcmp(a.tensors_[i].value.data(), b.tensors_[i].value.data(), n) != 0) return false;
  }
  return true;
}

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

Matrix sigmoid(const Matrix& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

Matrix silu(const Matrix& x) {
  return x.cwiseProduct(sigmoid(x));
}

Matrix silu_derivative(const Matrix& x, const Matrix& sig) {
  return (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
}

Matrix affine(const Matrix& weight, const Matrix& bias, const Matrix& x) {
  Matrix y = weight * x;
  y.colwise() += bias.col(0);
  return y;
}

}  // namespace flowdistill::nn
