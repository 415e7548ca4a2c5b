#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "property_suite.hpp"
#include "rotinv/autodiff.hpp"
#include "rotinv/errors.hpp"
#include "rotinv/optim.hpp"

using namespace rotinv;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, bool grad = true) {
  std::normal_distribution<double> g;
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed random weights, so every output entry matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, random_tensor(y.shape(), rng, false)));
}

void require_gradient(std::vector<Tensor> leaves, const std::function<Tensor()>& f) {
  Rng rng(99);
  const auto rep = checks::directional_gradient_check(std::move(leaves), f, rng, 4);
  CHECK(rep.smooth_directions >= 3);
  CHECK(rep.max_relative_error <= 1e-4);
}

}  // namespace

TEST_CASE("matmul by identity") {
  Rng rng(1);
  const Tensor a = random_tensor({3, 4}, rng, false);
  const Tensor i3 = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor out = ad::matmul(i3, a);
  CHECK(std::equal(out.values().begin(), out.values().end(), a.values().begin()));
  CHECK_THROWS_AS(ad::matmul(a, a), std::invalid_argument);
}

TEST_CASE("gather rows") {
  const Tensor rows = Tensor::from({3, 1}, {1, 2, 3});
  const std::vector<std::size_t> idx{2, 0};
  const Tensor out = ad::gather(rows, idx);
  CHECK(out.shape() == ad::Shape{2, 1});
  CHECK(out.at({0, 0}) == 3.0);
  CHECK(out.at({1, 0}) == 1.0);
}

TEST_CASE("backward basics") {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ad::backward(ad::sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  const Tensor p = Tensor::from({2}, {1, 2}, true);
  ad::backward(ad::sum(ad::mul(p, p)));
  CHECK(p.grad() == std::vector<double>{2, 4});

  const Tensor q = Tensor::from({2}, {1, 2}, true);
  const Tensor other = Tensor::from({2}, {3, 4}, true);
  ad::backward(ad::sum(other));
  CHECK(q.grad() == std::vector<double>{0, 0});

  CHECK_THROWS_AS(ad::backward(x), std::invalid_argument);
}

TEST_CASE("gradients accumulate until zero_grad") {
  const Tensor p = Tensor::from({2}, {1, 2}, true);
  ad::backward(ad::sum(p));
  ad::backward(ad::sum(p));
  CHECK(p.grad() == std::vector<double>{2, 2});
  Tensor handle = p;
  handle.zero_grad();
  CHECK(p.grad() == std::vector<double>{0, 0});
}

TEST_CASE("non-finite forward values name the op") {
  const Tensor x = Tensor::from({2}, {-1, 1});
  try {
    (void)ad::log(x);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(e.op() == "log");
  }
}

TEST_CASE("max routes the gradient to the lowest tied index") {
  const Tensor x = Tensor::from({2, 3}, {1, 5, 5, 7, 2, 7}, true);
  const Tensor m = ad::max(x, 1);
  CHECK(m.values()[0] == 5.0);
  CHECK(m.values()[1] == 7.0);
  ad::backward(ad::sum(m));
  CHECK(x.grad() == std::vector<double>{0, 1, 0, 1, 0, 0});
}

TEST_CASE("elementwise and reduction ops match finite differences") {
  Rng rng(2);
  const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 3}, rng);
  const Tensor row = random_tensor({3}, rng);
  Tensor pos = random_tensor({4, 3}, rng);
  for (auto& v : pos.mutable_values()) v = std::abs(v) + 0.5;

  require_gradient({a, b}, [&] { return probe(ad::add(a, b), 1); });
  require_gradient({a, b}, [&] { return probe(ad::sub(a, b), 2); });
  require_gradient({a, b}, [&] { return probe(ad::mul(a, b), 3); });
  require_gradient({a, pos}, [&] { return probe(ad::div(a, pos), 4); });
  require_gradient({a, row}, [&] { return probe(ad::mul(a, row), 5); });
  require_gradient({pos}, [&] { return probe(ad::sqrt(pos), 6); });
  require_gradient({a}, [&] { return probe(ad::exp(a), 7); });
  require_gradient({pos}, [&] { return probe(ad::log(pos), 8); });
  require_gradient({a}, [&] { return probe(ad::relu(a), 9); });
  require_gradient({a}, [&] { return probe(ad::softmax(a), 10); });
  require_gradient({a}, [&] { return probe(ad::log_softmax(a), 11); });
  require_gradient({a}, [&] { return probe(ad::normalize(a, 1), 12); });
  require_gradient({a}, [&] { return probe(ad::sum(a, 0), 13); });
  require_gradient({a}, [&] { return probe(ad::mean(a, 1, true), 14); });
  require_gradient({a}, [&] { return probe(ad::max(a, 0), 15); });
  require_gradient({a}, [&] { return ad::mean(a); });
}

TEST_CASE("shape ops match finite differences") {
  Rng rng(3);
  const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng);
  const Tensor c = random_tensor({4, 3}, rng);
  const Tensor batch = random_tensor({2, 4, 3}, rng), batch_b = random_tensor({2, 3, 2}, rng);
  const std::vector<std::size_t> idx{3, 0, 0, 2};

  require_gradient({a, b}, [&] { return probe(ad::matmul(a, b), 1); });
  require_gradient({batch, batch_b}, [&] { return probe(ad::bmm(batch, batch_b), 2); });
  require_gradient({a, c}, [&] { return probe(ad::concat({a, c}, 1), 3); });
  require_gradient({a}, [&] { return probe(ad::slice(a, 0, 1, 3), 4); });
  require_gradient({a}, [&] { return probe(ad::reshape(a, {2, 6}), 5); });
  require_gradient({batch}, [&] { return probe(ad::transpose(batch, 1, 2), 6); });
  require_gradient({a}, [&] { return probe(ad::expand(ad::reshape(a, {4, 1, 3}), 1, 2), 7); });
  require_gradient({a}, [&] { return probe(ad::gather(a, idx), 8); });
  require_gradient({a, c}, [&] { return probe(ad::cross(a, c), 9); });
  require_gradient({a}, [&] { return probe(ad::scale(a, -2.5) + 1.0, 10); });
}

TEST_CASE("cross entropy of uniform logits is ln 4") {
  const Tensor logits = Tensor::from({1, 4}, {0.3, 0.3, 0.3, 0.3});
  const std::vector<int> label{2};
  CHECK(ad::cross_entropy(logits, label).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("the gradient check flags a wrong gradient") {
  // x * detach(x) has true derivative 2x but backward reports x.
  Rng rng(4);
  const Tensor x = random_tensor({5}, rng);
  Rng check_rng(5);
  const auto rep = checks::directional_gradient_check(
      {x}, [&] { return ad::sum(ad::mul(x, x.detach())); }, check_rng);
  CHECK(rep.max_relative_error > 0.1);
}

TEST_CASE("learning rate schedule and plain SGD") {
  CHECK(cosine_lr(0, 60, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(60, 60, 0.1)) <= 1e-17);
  CHECK(cosine_lr(30, 60, 0.1) == doctest::Approx(0.05));

  std::vector<double> p{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
  sgd_step(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(-2.025));

  // Momentum and decay: g' = g + wd p; v = mu v + g'; p -= lr v.
  std::vector<double> q{1.0}, gq{0.5}, vq{0.2};
  sgd_step(q, gq, vq, 0.1, 0.9, 0.01);
  CHECK(vq[0] == doctest::Approx(0.9 * 0.2 + 0.5 + 0.01));
  CHECK(q[0] == doctest::Approx(1.0 - 0.1 * vq[0]));
}

TEST_CASE("a replayed training step is bit identical") {
  auto run = [] {
    ParameterSet params(17);
    const Tensor w = params.uniform("w", {3, 2}, 3);
    Rng rng(8);
    const Tensor x = random_tensor({4, 3}, rng, false);
    Sgd opt;
    for (int step = 0; step < 3; ++step) {
      params.zero_grad();
      ad::backward(ad::mean(ad::relu(ad::matmul(x, w))));
      opt.step(params, 0.1, 0.5);
    }
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("parameters depend on seed and name only") {
  ParameterSet a(3), b(3);
  (void)a.uniform("first", {4}, 4);
  const Tensor wa = a.uniform("second", {4}, 4);
  const Tensor wb = b.uniform("second", {4}, 4);
  CHECK(std::equal(wa.values().begin(), wa.values().end(), wb.values().begin()));
  CHECK_THROWS(a.uniform("second", {4}, 4));
}

TEST_CASE("checkpoint round trip") {
  const auto path = std::filesystem::temp_directory_path() / "rotinv_test_autodiff.lckp";
  ParameterSet a(1);
  (void)a.uniform("layer.w", {3, 4}, 3);
  (void)a.constant("layer.b", {4}, 0.25);
  save_checkpoint(path, a);

  ParameterSet b(2);
  const Tensor w = b.uniform("layer.w", {3, 4}, 3);
  (void)b.constant("layer.b", {4}, 0.0);
  load_checkpoint(path, b);
  const auto& src = a.get("layer.w").tensor;
  CHECK(std::equal(w.values().begin(), w.values().end(), src.values().begin()));
  CHECK(b.get("layer.b").tensor.values()[3] == 0.25);

  ParameterSet wrong(2);
  (void)wrong.uniform("layer.w", {4, 4}, 3);
  (void)wrong.constant("layer.b", {4}, 0.0);
  CHECK_THROWS(load_checkpoint(path, wrong));
  std::filesystem::remove(path);
}
