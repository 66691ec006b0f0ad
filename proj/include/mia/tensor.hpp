#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mia {

using real = double;

// Skips value-initialization on vector resize. Tensor::uninit relies on this
// so outputs that every kernel fully overwrites pay no zero-fill (which shows
// up heavily in profiles of the training loop).
template <class T>
struct default_init_alloc : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = default_init_alloc<U>;
  };
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0)
      ::new (static_cast<void*>(p)) U;
    else
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// Dense row-major tensor, up to 4 dims. Shapes used throughout:
//   {tokens, C}     token matrices (attention, linear layers)
//   {H, W, C}       feature maps
//   {n, t, C}       window batches
struct Tensor {
  using Buffer = std::vector<real, default_init_alloc<real>>;

  std::vector<int> dims;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, real fill = 0.0)
      : dims(std::move(d)), data(static_cast<size_t>(numel_of(dims)), fill) {
    check_dims(dims);
  }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, real v) { return Tensor(std::move(d), v); }

  // Allocated but not filled. Only for outputs the caller writes completely.
  static Tensor uninit(std::vector<int> d) {
    check_dims(d);
    Tensor t;
    t.dims = std::move(d);
    t.data.resize(static_cast<size_t>(numel_of(t.dims)));
    return t;
  }

  static void check_dims(const std::vector<int>& d) {
    if (d.empty() || d.size() > 4)
      throw std::invalid_argument("Tensor: rank must be 1..4");
    for (int e : d)
      if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent");
  }
  static Tensor scalar(real v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static long long numel_of(const std::vector<int>& d) {
    long long n = 1;
    for (int e : d) n *= e;
    return n;
  }

  long long numel() const { return static_cast<long long>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<size_t>(i)]; }

  // Leading dims collapsed; last dim treated as channels/columns.
  int rows() const {
    long long r = 1;
    for (size_t i = 0; i + 1 < dims.size(); ++i) r *= dims[i];
    return static_cast<int>(r);
  }
  int cols() const { return dims.back(); }

  real& operator[](long long i) { return data[static_cast<size_t>(i)]; }
  real operator[](long long i) const { return data[static_cast<size_t>(i)]; }

  real& at(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
  real at(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
  real& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  real at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  real& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }
  real at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (real v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(std::vector<int> d) const {
    if (numel_of(d) != numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor t = *this;
    t.dims = std::move(d);
    return t;
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite())
    throw std::runtime_error(std::string("non-finite values after ") + where);
}

// Windowed token layout: data dims {n_windows, tokens_per_window, channels}.
struct WindowBatch {
  int n_windows = 0;
  int tokens_per_window = 0;  // window_side^2
  int channels = 0;
  Tensor data;
};

}  // namespace mia
