#include "koopctl/ops.hpp"

#include <cmath>
#include <limits>

namespace koopctl {

namespace {

using detail::accumulate;
using detail::Node;

std::string pair_str(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(pair_str(op, a, b));
}

Node& parent(const Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError(pair_str("matmul", a, b));
  Matrix out = a.value() * b.value();
  return Tensor::make_result(std::move(out), {a, b}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) accumulate(pa, self.grad * pb.value.transpose());
    if (pb.requires_grad) accumulate(pb, pa.value.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  return Tensor::make_result(a.value().transpose(), {a}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad.transpose());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return Tensor::make_result(a.value() + b.value(), {a, b}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return Tensor::make_result(a.value() - b.value(), {a, b}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), -self.grad);
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return Tensor::make_result(std::move(out), {a, b}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) accumulate(pa, self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) accumulate(pb, self.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return Tensor::make_result(a.value() * s, {a}, [s](const Node& self) {
    accumulate(parent(self, 0), self.grad * s);
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value().array() + s;
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad);
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError(pair_str("add_rowwise", a, row));
  Matrix out = a.value().rowwise() + row.value().row(0);
  return Tensor::make_result(std::move(out), {a, row}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad);
    Node& pr = parent(self, 1);
    if (pr.requires_grad) accumulate(pr, self.grad.colwise().sum());
  });
}

Tensor mul_rowwise(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError(pair_str("mul_rowwise", a, row));
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return Tensor::make_result(std::move(out), {a, row}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pr = parent(self, 1);
    if (pa.requires_grad) {
      Matrix g = self.grad.array().rowwise() * pr.value.row(0).array();
      accumulate(pa, g);
    }
    if (pr.requires_grad) accumulate(pr, self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError(pair_str("scale_by", a, s));
  Matrix out = a.value() * s.value()(0, 0);
  return Tensor::make_result(std::move(out), {a, s}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    if (pa.requires_grad) accumulate(pa, self.grad * ps.value(0, 0));
    if (ps.requires_grad) {
      accumulate(ps, Matrix::Constant(1, 1, self.grad.cwiseProduct(pa.value).sum()));
    }
  });
}

Matrix tanh_values(const Matrix& x) {
  const auto xa = x.array();
  const Eigen::ArrayXXd e = (-2.0 * xa.abs()).exp();
  const Eigen::ArrayXXd x2 = xa.square();
  const Eigen::ArrayXXd series =
      xa * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
  return (xa.abs() < 0.05).select(series, ((1.0 - e) / (1.0 + e)) * xa.sign()).matrix();
}

Tensor tanh(const Tensor& a) {
  Matrix out = tanh_values(a.value());
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Matrix g = self.grad.array() * (1.0 - self.value.array().square());
    accumulate(parent(self, 0), g);
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad.cwiseProduct(self.value));
  });
}

Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log();
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    accumulate(pa, self.grad.cwiseQuotient(pa.value));
  });
}

Tensor softplus(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Matrix sig = pa.value.unaryExpr([](double x) {
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    accumulate(pa, self.grad.cwiseProduct(sig));
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square();
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    accumulate(pa, 2.0 * self.grad.cwiseProduct(pa.value));
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return Tensor::make_result(std::move(out), {a}, [lo, hi](const Node& self) {
    Node& pa = parent(self, 0);
    Matrix mask = pa.value.unaryExpr([lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    accumulate(pa, self.grad.cwiseProduct(mask));
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape("minimum", a, b);
  Matrix out = a.value().cwiseMin(b.value());
  return Tensor::make_result(std::move(out), {a, b}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    Matrix take_a = (pa.value.array() <= pb.value.array()).cast<double>();
    if (pa.requires_grad) accumulate(pa, self.grad.cwiseProduct(take_a));
    if (pb.requires_grad) accumulate(pb, self.grad.cwiseProduct((1.0 - take_a.array()).matrix()));
  });
}

Tensor sum(const Tensor& a) {
  return Tensor::make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    accumulate(pa, Matrix::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty tensor");
  const double n = static_cast<double>(a.value().size());
  return Tensor::make_result(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [n](const Node& self) {
    Node& pa = parent(self, 0);
    accumulate(pa, Matrix::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0) / n));
  });
}

Tensor sum_rows(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    accumulate(pa, self.grad.replicate(1, pa.value.cols()));
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  const Matrix& v = a.value();
  Vector row_max = v.rowwise().maxCoeff();
  Matrix shifted = v.colwise() - row_max;
  Matrix e = shifted.array().exp();
  Vector s = e.rowwise().sum();
  Matrix out = (row_max.array() + s.array().log()).matrix();
  Matrix softmax = e.array().colwise() / s.array();
  return Tensor::make_result(std::move(out), {a}, [softmax = std::move(softmax)](const Node& self) {
    Matrix g = softmax.array().colwise() * self.grad.col(0).array();
    accumulate(parent(self, 0), g);
  });
}

Tensor mean_diagonal_cross_entropy(const Tensor& logits) {
  if (logits.rows() != logits.cols()) {
    throw DimensionError("mean_diagonal_cross_entropy: expected square, got " + logits.shape_str());
  }
  const Matrix& v = logits.value();
  const Index n = v.rows();
  Vector row_max = v.rowwise().maxCoeff();
  Matrix shifted = v.colwise() - row_max;
  Matrix e = shifted.array().exp();
  Vector s = e.rowwise().sum();
  Vector ce = s.array().log() - shifted.diagonal().array();
  const double c = ce(0);
  Matrix out(1, 1);
  out(0, 0) = c + (ce.array() - c).sum() / static_cast<double>(n);
  Matrix softmax = e.array().colwise() / s.array();
  return Tensor::make_result(std::move(out), {logits}, [softmax = std::move(softmax), n](const Node& self) {
    Matrix g = softmax;
    g.diagonal().array() -= 1.0;
    accumulate(parent(self, 0), g * (self.grad(0, 0) / static_cast<double>(n)));
  });
}

Tensor diagonal(const Tensor& a) {
  if (a.rows() != a.cols()) throw DimensionError("diagonal: expected square, got " + a.shape_str());
  Matrix out = a.value().diagonal();
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    Node& pa = parent(self, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    g.diagonal() = self.grad.col(0);
    accumulate(pa, g);
  });
}

Tensor diag(const Tensor& v) {
  if (v.cols() != 1) throw DimensionError("diag: expected column vector, got " + v.shape_str());
  Matrix out = v.value().col(0).asDiagonal();
  return Tensor::make_result(std::move(out), {v}, [](const Node& self) {
    accumulate(parent(self, 0), self.grad.diagonal());
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError(pair_str("concat_cols", a, b));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ka = a.cols();
  return Tensor::make_result(std::move(out), {a, b}, [ka](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) accumulate(pa, self.grad.leftCols(ka));
    if (pb.requires_grad) accumulate(pb, self.grad.rightCols(self.grad.cols() - ka));
  });
}

Tensor symmetrize(const Tensor& a) {
  if (a.rows() != a.cols()) throw DimensionError("symmetrize: expected square, got " + a.shape_str());
  Matrix out = 0.5 * (a.value() + a.value().transpose());
  return Tensor::make_result(std::move(out), {a}, [](const Node& self) {
    accumulate(parent(self, 0), 0.5 * (self.grad + self.grad.transpose()));
  });
}

Tensor solve(const Tensor& a, const Tensor& b) {
  if (a.rows() != a.cols()) throw DimensionError("solve: coefficient matrix must be square, got " + a.shape_str());
  if (a.rows() != b.rows()) throw DimensionError(pair_str("solve", a, b));
  if (!a.value().allFinite() || !b.value().allFinite()) {
    throw NumericError("solve: non-finite operand");
  }
  Eigen::PartialPivLU<Matrix> lu(a.value());
  const double rcond = lu.rcond();
  if (!(rcond > 1e-12)) {
    const double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    throw NumericError("solve: singular or ill-conditioned matrix, condition estimate " +
                       std::to_string(cond));
  }
  Matrix x = lu.solve(b.value());
  return Tensor::make_result(x, {a, b}, [lu = std::move(lu)](const Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    Matrix db = lu.transpose().solve(self.grad);
    if (pa.requires_grad) accumulate(pa, -db * self.value.transpose());
    if (pb.requires_grad) accumulate(pb, db);
  });
}

}  // namespace koopctl
