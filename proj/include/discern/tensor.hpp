#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace discern {

inline int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= d;
  }
  return n;
}

// Dense 64-bit float tensor, rank 0 (scalar) through 2. Row-major.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int> s) {
    int n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }
  static Tensor full(std::vector<int> s, double v) {
    int n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor row(std::vector<double> d) {
    int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
  }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : 1); }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
  bool is_scalar() const { return numel() == 1 && rank() <= 1; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  double scalar_value() const {
    if (numel() != 1) throw std::invalid_argument("scalar_value on tensor with numel != 1");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

using ParamSet = std::map<std::string, Tensor>;

namespace detail {
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline ConstMatMap as_mat(const Tensor& t) { return ConstMatMap(t.data.data(), t.shape[0], t.shape[1]); }
inline MatMap as_mat(Tensor& t) { return MatMap(t.data.data(), t.shape[0], t.shape[1]); }
inline ConstVecMap as_vec(const Tensor& t) { return ConstVecMap(t.data.data(), t.numel()); }
inline VecMap as_vec(Tensor& t) { return VecMap(t.data.data(), t.numel()); }
}  // namespace detail

// matmul over the three supported shape forms:
//   [m,k]x[k,n] -> [m,n]     [k]x[k,n] -> [n]     [m,k]x[k] -> [m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using namespace detail;
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.shape[1] != b.shape[0])
      throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " x " + b.shape_str());
    Tensor out = Tensor::zeros({a.shape[0], b.shape[1]});
    as_mat(out).noalias() = as_mat(a) * as_mat(b);
    return out;
  }
  if (a.rank() == 1 && b.rank() == 2) {
    if (a.shape[0] != b.shape[0])
      throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " x " + b.shape_str());
    Tensor out = Tensor::zeros({b.shape[1]});
    as_vec(out).noalias() = as_mat(b).transpose() * as_vec(a);
    return out;
  }
  if (a.rank() == 2 && b.rank() == 1) {
    if (a.shape[1] != b.shape[0])
      throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " x " + b.shape_str());
    Tensor out = Tensor::zeros({a.shape[0]});
    as_vec(out).noalias() = as_mat(a) * as_vec(b);
    return out;
  }
  throw std::invalid_argument("matmul: unsupported ranks " + a.shape_str() + " x " + b.shape_str());
}

inline Tensor transposed(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transposed: rank-2 required");
  Tensor out = Tensor::zeros({a.shape[1], a.shape[0]});
  detail::as_mat(out) = detail::as_mat(a).transpose();
  return out;
}

inline Tensor outer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw std::invalid_argument("outer: rank-1 required");
  Tensor out = Tensor::zeros({a.shape[0], b.shape[0]});
  detail::as_mat(out).noalias() = detail::as_vec(a) * detail::as_vec(b).transpose();
  return out;
}

inline double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("l2_distance: size mismatch");
  double s = 0.0;
  for (int i = 0; i < a.numel(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// FNV-1a over the raw bytes of all entries, iteration order fixed by the map.
inline std::uint64_t param_set_hash(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    eat(name.data(), name.size());
    for (int d : t.shape) eat(&d, sizeof(d));
    eat(t.data.data(), t.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace discern
