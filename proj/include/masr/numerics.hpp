#pragma once

#include <cstddef>
#include <vector>

namespace masr {

using DenseVector = std::vector<double>;

// Row-major dense matrix. Attribute counts stay in the low hundreds, so no
// sparse storage anywhere in this codebase.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const DenseMatrix&) const = default;
};

DenseMatrix identity(std::size_t n);

// M x, throws shape error naming both shapes on mismatch
DenseVector matvec(const DenseMatrix& m, const DenseVector& x);
// M^T y, same shape policy
DenseVector matvec_transposed(const DenseMatrix& m, const DenseVector& y);

double sigmoid(double x);
DenseVector sigmoid(const DenseVector& x);

DenseVector relu(const DenseVector& x);

DenseVector softmax(const DenseVector& logits);

// -log softmax(logits)[true_class], computed max-shifted so huge logits stay finite
double softmax_cross_entropy(const DenseVector& logits, std::size_t true_class);

// Probabilities are clamped into [kProbEps, 1 - kProbEps] before the logs;
// the loss is undefined at exactly 0 or 1.
inline constexpr double kProbEps = 1e-7;
double bce(double p, double target);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h. The gradient oracle every
// analytic gradient in this project is checked against.
template <typename F>
DenseVector finite_diff_gradient(F&& f, DenseVector x, double h) {
  DenseVector grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace masr
