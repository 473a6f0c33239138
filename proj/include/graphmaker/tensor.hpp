#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "graphmaker/common.hpp"

namespace graphmaker {

// Dense row-major tensor of 64-bit reals. Rank is dynamic but everything in
// this artifact is rank 1 or 2.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
      throw DimensionError("tensor: shape does not match data length");
    }
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor row(std::vector<double> d) {
    const int64_t n = static_cast<int64_t>(d.size());
    return Tensor({1, n}, std::move(d));
  }
  static Tensor matrix(int64_t r, int64_t c, std::vector<double> d) {
    return Tensor({r, c}, std::move(d));
  }
  static Tensor identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i * n + i)] = 1.0;
    return t;
  }

  int64_t numel() const { return numel_of(shape); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ')';
    return os.str();
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }
};

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap as_eigen(const Tensor& t) { return ECMap(t.data.data(), t.rows(), t.cols()); }
inline EMap as_eigen(Tensor& t) { return EMap(t.data.data(), t.rows(), t.cols()); }

}  // namespace detail

// C = A * B, parallel over fixed 256-row output chunks. Each chunk is an
// independent single-threaded Eigen product, so the accumulation order per
// output coefficient never depends on the worker count.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                         b.shape_str());
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (!accumulate) {
    out = Tensor({m, n});
  } else if (out.rows() != m || out.cols() != n) {
    throw DimensionError("matmul: bad accumulator shape");
  }
  auto bb = detail::as_eigen(b);
  parallel_chunks(m, 256, [&](int64_t r0, int64_t r1) {
    detail::ECMap ablk(a.data.data() + r0 * k, r1 - r0, k);
    detail::EMap oblk(out.data.data() + r0 * n, r1 - r0, n);
    if (accumulate) {
      oblk.noalias() += ablk * bb;
    } else {
      oblk.noalias() = ablk * bb;
    }
  });
}

inline Tensor matmul_raw(const Tensor& a, const Tensor& b) {
  Tensor out;
  matmul_into(a, b, out);
  return out;
}

// C = A^T * B without materializing A^T.
inline void matmul_tn_into(const Tensor& a, const Tensor& b, Tensor& out,
                           bool accumulate = false) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts disagree");
  }
  const int64_t m = a.cols(), n = b.cols();
  if (!accumulate) out = Tensor({m, n});
  auto aa = detail::as_eigen(a);
  auto bb = detail::as_eigen(b);
  auto oo = detail::as_eigen(out);
  if (accumulate) {
    oo.noalias() += aa.transpose() * bb;
  } else {
    oo.noalias() = aa.transpose() * bb;
  }
}

// C = A * B^T.
inline void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& out,
                           bool accumulate = false) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts disagree");
  }
  const int64_t m = a.rows(), n = b.rows(), k = a.cols();
  if (!accumulate) out = Tensor({m, n});
  auto bb = detail::as_eigen(b);
  parallel_chunks(m, 256, [&](int64_t r0, int64_t r1) {
    detail::ECMap ablk(a.data.data() + r0 * k, r1 - r0, k);
    detail::EMap oblk(out.data.data() + r0 * n, r1 - r0, n);
    if (accumulate) {
      oblk.noalias() += ablk * bb.transpose();
    } else {
      oblk.noalias() = ablk * bb.transpose();
    }
  });
}

}  // namespace graphmaker
