#include <doctest.h>

#include <cmath>

#include "koopctl/embedding.hpp"
#include "test_util.hpp"

using namespace koopctl;
using namespace koopctl::testing;

namespace {

// Straight-line forward pass used as an oracle.
Matrix forward_oracle(const Mlp& mlp, const Matrix& x) {
  Matrix h = x;
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Matrix& w = layers[l].weight.value();
    const Matrix& b = layers[l].bias.value();
    Matrix next(h.rows(), w.cols());
    for (Index i = 0; i < h.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) {
        double acc = b(0, j);
        for (Index k = 0; k < w.rows(); ++k) acc += h(i, k) * w(k, j);
        next(i, j) = l + 1 < layers.size() ? std::tanh(acc) : acc;
      }
    }
    h = next;
  }
  return h;
}

// Softmax cross-entropy with the diagonal as labels, one row at a time.
double info_nce_oracle(const Matrix& zq, const Matrix& zp, const Matrix& w) {
  const Index n = zq.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) logits[static_cast<std::size_t>(j)] = (zq.row(i) * w * zp.row(j).transpose())(0, 0);
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - m);
    const double p = std::exp(logits[static_cast<std::size_t>(i)] - m) / denom;
    total += -std::log(p);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("encode with zero weights returns the output bias") {
  Rng rng(1);
  EncoderParams p = make_encoder(3, 4, rng);
  for (auto& layer : p.query.layers()) layer.weight.leaf_value().setZero();
  Matrix b(1, 4);
  b << 0.5, -1, 2, 3;
  p.query.layers().back().bias.leaf_value() = b;
  const Matrix z = encode(p, Tensor(random_matrix(5, 3, rng)), EncoderRole::kQuery).value();
  for (Index i = 0; i < 5; ++i) CHECK(z.row(i) == b);
}

TEST_CASE("single identity layer passes input through") {
  Rng rng(2);
  EncoderParams p;
  p.query = Mlp({3, 3}, rng);
  p.query.layers()[0].weight.leaf_value() = Matrix::Identity(3, 3);
  p.key = p.query.frozen_copy();
  p.similarity_w = Tensor(Matrix::Identity(3, 3), true);
  const Matrix x = random_matrix(4, 3, rng);
  CHECK(encode(p, Tensor(x), EncoderRole::kQuery).value() == x);
}

TEST_CASE("encode matches a straight-line oracle") {
  Rng rng(3);
  EncoderParams p = make_encoder(5, 50, rng);
  const Matrix x = random_matrix(7, 5, rng);
  const Matrix z = encode(p, Tensor(x), EncoderRole::kQuery).value();
  CHECK((z - forward_oracle(p.query, x)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(z.rows() == 7);
  CHECK(z.cols() == 50);
}

TEST_CASE("encode rejects a wrong input width") {
  Rng rng(4);
  EncoderParams p = make_encoder(3, 8, rng);
  CHECK_THROWS_AS(encode(p, Tensor(Matrix::Zero(2, 4)), EncoderRole::kQuery), DimensionError);
}

TEST_CASE("key encoding is off the tape") {
  Rng rng(5);
  EncoderParams p = make_encoder(3, 8, rng);
  CHECK_FALSE(encode(p, Tensor(random_matrix(2, 3, rng)), EncoderRole::kKey).requires_grad());
  CHECK(encode(p, Tensor(random_matrix(2, 3, rng)), EncoderRole::kQuery).requires_grad());
  CHECK(p.query.same_shapes(p.key));
  CHECK(p.similarity_w.rows() == 8);
  CHECK(p.similarity_w.cols() == 8);
}

TEST_CASE("augment") {
  Rng rng(6);
  const Matrix x = random_matrix(4, 3, rng);
  CHECK(augment(x, 0.0, rng) == x);
  CHECK(augment(Matrix::Zero(3, 2), 0.7, rng) == Matrix::Zero(3, 2));
  CHECK(augment(x, 0.1, std::uint64_t{9}) == augment(x, 0.1, std::uint64_t{9}));
  CHECK_THROWS_AS(augment(x, -0.1, rng), UsageError);
  Matrix mixed(1, 3);
  mixed << 0.0, 1.0, -3.0;
  for (int k = 0; k < 100; ++k) CHECK(augment(mixed, 0.5, rng)(0, 0) == 0.0);
}

TEST_CASE("augment Monte-Carlo bounds and mean") {
  Rng rng(7);
  Matrix x(1, 2);
  x << 1.0, -2.0;
  const int n = 100000;
  double s0 = 0.0, s1 = 0.0;
  bool inside = true;
  for (int k = 0; k < n; ++k) {
    const Matrix y = augment(x, 0.1, rng);
    inside = inside && y(0, 0) >= 0.9 && y(0, 0) <= 1.1 && y(0, 1) >= -2.2 && y(0, 1) <= -1.8;
    s0 += y(0, 0);
    s1 += y(0, 1);
  }
  CHECK(inside);
  CHECK(std::abs(s0 / n - 1.0) < 1e-2);
  CHECK(std::abs(s1 / n + 2.0) < 1e-2);
}

TEST_CASE("contrastive loss hand example") {
  Matrix zq(2, 1), zp(2, 1);
  zq << 1, 0;
  zp << 1, 0;
  const double loss = contrastive_loss(Tensor(zq), Tensor(zp), Tensor(Matrix::Identity(1, 1))).item();
  const double expected = 0.5 * (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) - std::log(0.5));
  CHECK(loss == doctest::Approx(expected).epsilon(1e-14));
  CHECK(loss == doctest::Approx(0.50321).epsilon(1e-5));
}

TEST_CASE("identical embeddings give exactly log(batch)") {
  Rng rng(8);
  for (Index batch : {2, 3, 8, 128}) {
    const Matrix row = random_matrix(1, 6, rng);
    const Matrix z = row.replicate(batch, 1);
    const double loss = contrastive_loss(Tensor(z), Tensor(z), Tensor(random_matrix(6, 6, rng))).item();
    CHECK(loss == std::log(static_cast<double>(batch)));
  }
}

TEST_CASE("contrastive loss matches a brute-force oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Index batch = 2 + trial % 9;
    const Matrix zq = random_matrix(batch, 5, rng);
    const Matrix zp = random_matrix(batch, 5, rng);
    const Matrix w = random_matrix(5, 5, rng);
    const double got = contrastive_loss(Tensor(zq), Tensor(zp), Tensor(w)).item();
    CHECK(std::abs(got - info_nce_oracle(zq, zp, w)) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("contrastive loss needs two rows") {
  CHECK_THROWS_AS(contrastive_loss(Tensor(Matrix::Ones(1, 3)), Tensor(Matrix::Ones(1, 3)),
                                   Tensor(Matrix::Identity(3, 3))),
                  UsageError);
}

TEST_CASE("contrastive gradients: finite differences for query and W, zero for key") {
  Rng rng(10);
  EncoderParams p = make_encoder(3, 4, rng, 8);
  for (auto& layer : p.key.layers()) layer.weight.leaf_value() += 0.1 * random_matrix(layer.weight.rows(), layer.weight.cols(), rng);
  const Matrix xq = random_matrix(6, 3, rng);
  const Matrix xk = random_matrix(6, 3, rng);
  p.similarity_w.leaf_value() += 0.3 * random_matrix(4, 4, rng);
  auto loss = [&] {
    return contrastive_loss(encode(p, Tensor(xq), EncoderRole::kQuery), encode(p, Tensor(xk), EncoderRole::kKey),
                            p.similarity_w);
  };
  std::vector<Tensor> leaves = p.query.parameters();
  leaves.push_back(p.similarity_w);
  CHECK(max_gradient_error(leaves, loss) < 1e-4);
  for (const auto& t : p.key.parameters()) {
    CHECK_FALSE(t.requires_grad());
    CHECK(t.grad().isZero(0.0));
  }
}

TEST_CASE("momentum update") {
  Rng rng(11);
  EncoderParams p = make_encoder(3, 4, rng, 8);
  for (auto& layer : p.query.layers()) layer.weight.leaf_value() += random_matrix(layer.weight.rows(), layer.weight.cols(), rng);
  const Matrix key_before = p.key.layers()[0].weight.value();
  momentum_update(p, 1.0);
  CHECK(p.key.layers()[0].weight.value() == key_before);

  momentum_update(p, 0.0);
  const Matrix x = random_matrix(5, 3, rng);
  CHECK(encode(p, Tensor(x), EncoderRole::kQuery).value() == encode(p, Tensor(x), EncoderRole::kKey).value());

  p.key.layers()[0].weight.leaf_value().setConstant(2.0);
  p.query.layers()[0].weight.leaf_value().setConstant(4.0);
  momentum_update(p, 0.5);
  CHECK(p.key.layers()[0].weight.value()(0, 0) == 3.0);

  CHECK_THROWS_AS(momentum_update(p, 1.5), UsageError);
  CHECK_THROWS_AS(momentum_update(p, -0.1), UsageError);
}
