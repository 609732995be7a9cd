#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "topoprune/error.hpp"

namespace topoprune {

// Dense symmetric matrix of pairwise distances, row-major.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;

  DistanceMatrix(std::size_t n, std::vector<double> values)
      : n_(n), values_(std::move(values)) {
    validate();
  }

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return values_[i * n_ + j];
  }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  void validate() const {
    require(values_.size() == n_ * n_,
            "distance matrix: expected " + std::to_string(n_ * n_) +
                " entries, got " + std::to_string(values_.size()));
    for (std::size_t i = 0; i < n_; ++i) {
      require((*this)(i, i) == 0.0, "distance matrix: non-zero diagonal at " +
                                        std::to_string(i));
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double a = (*this)(i, j);
        const double b = (*this)(j, i);
        require(std::isfinite(a) && std::isfinite(b),
                "distance matrix: non-finite entry");
        require(a >= 0.0 && b >= 0.0, "distance matrix: negative entry");
        require(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)),
                "distance matrix: not symmetric at (" + std::to_string(i) +
                    "," + std::to_string(j) + ")");
      }
    }
  }

  std::size_t n_ = 0;
  std::vector<double> values_;
};

}  // namespace topoprune
