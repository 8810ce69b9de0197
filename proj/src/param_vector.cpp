#include "emc2/param_vector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emc2/errors.hpp"

namespace emc2 {

ParamVector::ParamVector(std::vector<double> values, std::vector<ParamBlock> blocks)
    : values_(std::move(values)), blocks_(std::move(blocks)) {
  std::size_t covered = 0;
  for (const auto& b : blocks_) {
    if (b.offset != covered) {
      throw ConfigError("param blocks must partition [0,p) in order; gap before '" +
                        b.name + "'");
    }
    covered += b.length;
  }
  if (covered != values_.size()) {
    throw ConfigError("param blocks cover " + std::to_string(covered) +
                      " of " + std::to_string(values_.size()) + " entries");
  }
}

std::span<double> ParamVector::block(const std::string& name) {
  const ParamBlock& b = block_info(name);
  return {values_.data() + b.offset, b.length};
}

std::span<const double> ParamVector::block(const std::string& name) const {
  const ParamBlock& b = block_info(name);
  return {values_.data() + b.offset, b.length};
}

const ParamBlock& ParamVector::block_info(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw ConfigError("unknown param block '" + name + "'");
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

void ParamVector::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

ParamVector ParamVector::zeros_like() const {
  return ParamVector(std::vector<double>(values_.size(), 0.0), blocks_);
}

double ParamVector::dot(const ParamVector& other) const {
  return std::inner_product(values_.begin(), values_.end(),
                            other.values_.begin(), 0.0);
}

double ParamVector::squared_norm() const { return dot(*this); }

double ParamVector::norm() const { return std::sqrt(squared_norm()); }

void ParamVector::axpy(double alpha, const ParamVector& other) {
  if (other.size() != size()) throw ConfigError("axpy length mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    values_[i] += alpha * other.values_[i];
  }
}

}  // namespace emc2
