#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace emc2 {

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Flat parameter vector addressed by named blocks. The block layout must
// partition [0, p) exactly and the length never changes after creation.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<double> values, std::vector<ParamBlock> blocks);

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;
  const ParamBlock& block_info(const std::string& name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  std::span<double> all() { return values_; }
  std::span<const double> all() const { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool all_finite() const;
  void fill(double v);

  // Same layout, all zeros.
  ParamVector zeros_like() const;

  double dot(const ParamVector& other) const;
  double squared_norm() const;
  double norm() const;
  // this += alpha * other (layouts must match in length)
  void axpy(double alpha, const ParamVector& other);

 private:
  std::vector<double> values_;
  std::vector<ParamBlock> blocks_;
};

}  // namespace emc2
