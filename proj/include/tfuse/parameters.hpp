#pragma once

#include "tfuse/tape.hpp"
#include "tfuse/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace tfuse {

using Rng = std::mt19937_64;

/// Named model parameters, ordered by path (e.g. "backbone.stage2.conv1.kernel").
class ParameterStore {
 public:
  void add(const std::string& path, Tensor value);
  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  const Tensor& get(const std::string& path) const;
  Tensor& get_mutable(const std::string& path);
  std::vector<std::string> paths() const;
  std::size_t size() const { return params_.size(); }
  Index total_elements() const;
  const std::map<std::string, Tensor>& items() const { return params_; }

  /// Leaf on the tape for a stored parameter.
  Var on(Tape& tape, const std::string& path) const { return tape.parameter(path, get(path)); }

  void save(std::ostream& os) const;
  void save(const std::filesystem::path& file) const;
  static ParameterStore load(std::istream& is);
  static ParameterStore load(const std::filesystem::path& file);

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.params_ == b.params_; }

 private:
  std::map<std::string, Tensor> params_;
};

/// Draws N(0, stddev²) entries.
Tensor random_normal(const Shape& shape, double stddev, Rng& rng);
/// Draws U(lo, hi) entries.
Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace tfuse
