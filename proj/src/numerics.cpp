#include "masr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "masr/error.hpp"

namespace masr {

DenseMatrix identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

DenseVector matvec(const DenseMatrix& m, const DenseVector& x) {
  if (m.cols != x.size()) {
    throw Error(ErrorCategory::Shape,
                "matvec: matrix is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                    " but vector has dim " + std::to_string(x.size()));
  }
  DenseVector y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

DenseVector matvec_transposed(const DenseMatrix& m, const DenseVector& y) {
  if (m.rows != y.size()) {
    throw Error(ErrorCategory::Shape,
                "matvec_transposed: matrix is " + std::to_string(m.rows) + "x" +
                    std::to_string(m.cols) + " but vector has dim " + std::to_string(y.size()));
  }
  DenseVector x(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    const double yr = y[r];
    for (std::size_t c = 0; c < m.cols; ++c) x[c] += row[c] * yr;
  }
  return x;
}

double sigmoid(double x) {
  // split by sign so exp never overflows
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DenseVector sigmoid(const DenseVector& x) {
  DenseVector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

DenseVector relu(const DenseVector& x) {
  DenseVector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

DenseVector softmax(const DenseVector& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  DenseVector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double softmax_cross_entropy(const DenseVector& logits, std::size_t true_class) {
  if (logits.empty()) {
    throw Error(ErrorCategory::Shape, "softmax_cross_entropy: empty logits");
  }
  if (true_class >= logits.size()) {
    throw Error(ErrorCategory::Index,
                "softmax_cross_entropy: class " + std::to_string(true_class) +
                    " out of range for " + std::to_string(logits.size()) + " logits");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double l : logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - logits[true_class];
}

double bce(double p, double target) {
  const double q = std::clamp(p, kProbEps, 1.0 - kProbEps);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

}  // namespace masr
