#pragma once

#include <cstddef>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace gos {

// 64-byte-aligned storage keeps SIMD kernels on the same code path no matter
// where the heap places a buffer, so repeated runs stay bit-identical.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
  template <class U>
  bool operator!=(const AlignedAllocator<U>&) const { return false; }
};

#define GOS_CHECK(cond, msg)                                   \
  do {                                                         \
    if (!(cond)) throw std::runtime_error(std::string(msg));   \
  } while (0)

// Dense row-major double tensor, up to 4 dims.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    size_t n = 1;
    for (int d : shape_) {
      GOS_CHECK(d >= 0, "Tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    data_.assign(n, 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t(std::vector<int>{1});
    t.data_[0] = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return data_[idx2(i, j)]; }
  double at(int i, int j) const { return data_[idx2(i, j)]; }

  double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }

  double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  double at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const;

  double item() const {
    GOS_CHECK(numel() == 1, "Tensor::item on non-scalar");
    return data_[0];
  }

  std::string shape_str() const;

 private:
  size_t idx2(int i, int j) const {
    return static_cast<size_t>(i) * shape_[1] + j;
  }
  size_t idx3(int i, int j, int k) const {
    return (static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

}  // namespace gos
