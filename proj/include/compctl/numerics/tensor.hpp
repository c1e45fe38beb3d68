#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major tensor of doubles. Rank 1 and rank 2 are the only ranks the
/// library needs; a rank-1 tensor of length n behaves as a 1 x n matrix.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor({n}, fill); }

  static Tensor from_matrix(const RowMatrix& m) {
    Tensor t = matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    t.mat() = m;
    return t;
  }

  [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::size_t rows() const noexcept {
    return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1);
  }
  [[nodiscard]] std::size_t cols() const noexcept {
    return shape_.size() >= 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]);
  }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] double* raw() noexcept { return data_.data(); }
  [[nodiscard]] const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols() + c];
  }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  MatrixMap mat() noexcept {
    return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  [[nodiscard]] ConstMatrixMap mat() const noexcept {
    return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  void fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

  [[nodiscard]] bool same_shape(const Tensor& other) const noexcept {
    return rows() == other.rows() && cols() == other.cols();
  }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  [[nodiscard]] double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  Tensor& operator+=(const Tensor& other) {
    if (other.size() != size()) throw std::invalid_argument("Tensor +=: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool operator==(const Tensor& other) const = default;

  [[nodiscard]] std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  // Over-aligned storage: Eigen's vectorised reductions split work by the
  // alignment of the first element, so a fixed alignment keeps results
  // independent of where the allocator happened to place a buffer.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

}  // namespace compctl
