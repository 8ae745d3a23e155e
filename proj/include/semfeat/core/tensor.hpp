#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "semfeat/core/errors.hpp"

namespace semfeat {

// Dense row-major tensor, rank 1..4. Spatial maps use (row, col, channel)
// index order throughout the library.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(int d0) { reshape({d0}); }
  Tensor(int d0, int d1) { reshape({d0, d1}); }
  Tensor(int d0, int d1, int d2) { reshape({d0, d1, d2}); }
  Tensor(int d0, int d1, int d2, int d3) { reshape({d0, d1, d2, d3}); }

  void reshape(std::initializer_list<int> dims) {
    rank_ = static_cast<int>(dims.size());
    if (rank_ < 1 || rank_ > 4) throw ShapeError("tensor rank must be 1..4");
    std::size_t n = 1;
    int i = 0;
    for (int d : dims) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      dims_[i++] = d;
      n *= static_cast<std::size_t>(d);
    }
    for (; i < 4; ++i) dims_[i] = 1;
    data_.assign(n, T(0));
  }

  int rank() const { return rank_; }
  int dim(int i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) { return data_[idx2(i, j)]; }
  const T& operator()(int i, int j) const { return data_[idx2(i, j)]; }

  T& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }

  T& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const T& operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  void fill(T v) { data_.assign(data_.size(), v); }
  void set_zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * dims_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k) * dims_[3] + l;
  }

  std::vector<T> data_;
  std::array<int, 4> dims_{1, 1, 1, 1};
  int rank_ = 0;
};

template <class T>
void require_shape(const Tensor<T>& t, const Tensor<T>& ref, const char* what) {
  if (!t.same_shape(ref))
    throw ShapeError(std::string(what) + ": shape mismatch, got " + t.shape_str() +
                     " expected " + ref.shape_str());
}

}  // namespace semfeat
