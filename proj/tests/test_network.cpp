#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "property_suite.hpp"
#include "rotinv/network.hpp"

using namespace rotinv;
using namespace rotinv::net;
using ad::Tensor;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  Points p(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) p(i, d) = g(rng);
  return center_and_scale(make_cloud(p));
}

Tensor random_tensor(ad::Shape shape, Rng& rng, bool grad = false) {
  std::normal_distribution<double> g;
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

ModelConfig small(const std::string& name, std::uint64_t seed = 3) {
  ModelConfig c = preset(name);
  c.vn_widths = {4, 6};
  c.inv_widths = {8, 8};
  c.k = 6;
  c.head_channels = 2;
  c.fusion_width = 8;
  c.classifier_hidden = 8;
  c.gate_hidden = 4;
  c.seed = seed;
  return c;
}

std::vector<double> copy(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double max_rel_change(const Tensor& a, const Tensor& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(a.values()[i] - b.values()[i]));
    scale = std::max(scale, std::abs(a.values()[i]));
  }
  return diff / std::max(scale, 1e-12);
}

// Frames [N, 3, 3] from scalar frames.
Tensor frame_tensor(const std::vector<frames::Frame>& fs) {
  std::vector<double> v;
  for (const auto& f : fs)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v.push_back(f.basis(i, j));
  return Tensor::from({fs.size(), 3, 3}, std::move(v));
}

}  // namespace

TEST_CASE("every preset builds and emits finite logits") {
  Rng rng(1);
  const PointCloud c = random_cloud(24, rng);
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const Model m(small(name));
    const auto r = m.forward(c);
    REQUIRE(r.logits().shape() == ad::Shape{1, 4});
    for (double v : r.logits().values()) CHECK(std::isfinite(v));
    CHECK(std::isfinite(m.loss(r, 1).total.item()));
  }
  CHECK_THROWS_AS(preset("t9r9"), std::invalid_argument);
}

TEST_CASE("forward is deterministic") {
  Rng rng(2);
  const PointCloud c = random_cloud(24, rng);
  const Model a(small("full")), b(small("full"));
  CHECK(copy(a.forward(c).logits()) == copy(a.forward(c).logits()));
  CHECK(copy(a.forward(c).logits()) == copy(b.forward(c).logits()));
}

TEST_CASE("full model is rotation invariant") {
  Rng rng(3);
  const Model m(small("full"));
  for (int i = 0; i < 5; ++i) {
    const PointCloud c = random_cloud(32, rng);
    const auto base = m.forward(c);
    for (int j = 0; j < 10; ++j) {
      const auto rot = m.forward(apply_rotation(c, sample_rotation_so3(rng)));
      CHECK(max_rel_change(base.logits_inv, rot.logits_inv) <= 1e-6);
      CHECK(max_rel_change(base.logits_eqv, rot.logits_eqv) <= 1e-6);
      CHECK(max_rel_change(base.logits_fused, rot.logits_fused) <= 1e-6);
    }
  }
}

TEST_CASE("the initial relative-pose gate is the identity") {
  // Parameters depend on (seed, name) only, so the row without relative pose
  // shares every weight with the row that has it.
  Rng rng(4);
  const PointCloud c = random_cloud(24, rng);
  const Model with(small("t4r6")), without(small("t4r3"));
  CHECK(copy(with.forward(c).logits()) == copy(without.forward(c).logits()));

  ParameterSet params(5);
  const Dense phi(params, "phi", 6, 5);
  const Dense g0(params, "g0", 4, 3);
  const Dense g1 = Dense::constant(params, "g1", 3, 3, 1.0);
  const Tensor x = random_tensor({10, 3}, rng);
  const KnnGraph knn = knn_graph(random_cloud(10, rng), 4);
  const Tensor code = random_tensor({40, 4}, rng);
  CHECK(copy(invariant_edgeconv(x, knn, phi, &code, &g0, &g1)) ==
        copy(invariant_edgeconv(x, knn, phi, nullptr, nullptr, nullptr)));
  CHECK(copy(rpr_refine(x, random_tensor({10, 4}, rng), g0, g1)) == copy(x));
  const Tensor zero_refined = rpr_refine(Tensor::zeros({10, 3}), random_tensor({10, 4}, rng), g0, g1);
  for (double v : zero_refined.values()) CHECK(v == 0.0);
}

TEST_CASE("first invariant edge convolution") {
  Rng rng(6);
  ParameterSet params(7);
  const Dense psi0(params, "psi0", 6, 5), psi1(params, "psi1", 5, 4);
  const PointCloud c = random_cloud(20, rng);
  const KnnGraph knn = knn_graph(c, 5);
  const Tensor hand = frames::fixed_frames(c, knn, frames::FrameKind::handcrafted);
  const Tensor x = invariant_edgeconv_first(c, hand, knn, psi0, psi1);
  for (int i = 0; i < 10; ++i) {
    const PointCloud rc = apply_rotation(c, sample_rotation_so3(rng));
    const Tensor rx = invariant_edgeconv_first(rc, frames::fixed_frames(rc, knn, frames::FrameKind::handcrafted),
                                               knn, psi0, psi1);
    CHECK(max_rel_change(x, rx) <= 1e-6);
  }

  // One neighbor: the max is the edge itself. Evaluated by hand with Eigen.
  const KnnGraph one = knn_graph(c, 1);
  const Tensor f1 = frames::fixed_frames(c, one, frames::FrameKind::identity);
  const Tensor x1 = invariant_edgeconv_first(c, f1, one, psi0, psi1);
  auto dense = [&](const std::string& name, const Eigen::VectorXd& in) {
    const Tensor& w = params.get(name + ".weight").tensor;
    const Tensor& b = params.get(name + ".bias").tensor;
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wm(
        w.values().data(), w.dim(0), w.dim(1));
    const Eigen::Map<const Eigen::VectorXd> bv(b.values().data(), b.numel());
    return Eigen::VectorXd((wm.transpose() * in + bv).cwiseMax(0.0));
  };
  double worst = 0.0;
  for (std::size_t r = 0; r < c.size(); ++r) {
    const std::size_t j = one.row(r)[0];
    Eigen::VectorXd e(6);
    e << c.points.row(r).transpose(), (c.points.row(j) - c.points.row(r)).transpose();
    const Eigen::VectorXd h = dense("psi1", dense("psi0", e));
    for (int q = 0; q < 4; ++q) worst = std::max(worst, std::abs(h(q) - x1.at({r, std::size_t(q)})));
  }
  CHECK(worst <= 1e-12);

  // Different frame constructions give different features.
  const Tensor gsx = invariant_edgeconv_first(
      c, frames::gram_schmidt_frames(random_tensor({20, 3}, rng), random_tensor({20, 3}, rng)), knn, psi0, psi1);
  CHECK(max_rel_change(x, gsx) > 1e-3);
}

TEST_CASE("relative pose codes") {
  Rng rng(8);
  const auto f = frames::lcrf_frame(frames::ProjectedPair::from({1, 2, 0}, {0, 1, 3})).first;
  Points p(2, 3);
  p << 0, 0, 0, 1, 0, 0;
  const KnnGraph knn = knn_graph(make_cloud(p), 1);
  const Tensor fr = frame_tensor({f, f});
  const Eigen::Vector3d u1 = f.u1();
  const Tensor v = Tensor::from({2, 3, 1}, {0.5, -0.2, 0.1, 0.5 + u1.x(), -0.2 + u1.y(), 0.1 + u1.z()});
  const Tensor code = rpr_code(fr, v, knn);
  CHECK(std::abs(code.at({0, 0}) - 1.0) <= 1e-12);
  CHECK(std::abs(code.at({0, 1})) <= 1e-12);
  CHECK(std::abs(code.at({0, 2})) <= 1e-12);

  const Tensor same = Tensor::from({2, 3, 1}, {1, 2, 3, 1, 2, 3});
  const Tensor same_code = rpr_code(fr, same, knn);
  for (double x : same_code.values()) CHECK(x == 0.0);

  Points dup(2, 3);
  dup << 0.3, 0.1, 0.2, 0.3, 0.1, 0.2;
  const PointCloud dc = make_cloud(dup);
  const Tensor still = rpr_coordinate_code(fr, dc, knn_graph(dc, 1));
  for (double x : still.values()) CHECK(x == 0.0);

  // PPF code is invariant; every source is finite on random clouds.
  const PointCloud c = random_cloud(30, rng);
  const KnnGraph g = knn_graph(c, 5);
  const Tensor ppf = rpr_ppf_code(c, g);
  CHECK(max_rel_change(ppf, rpr_ppf_code(apply_rotation(c, sample_rotation_so3(rng)), g)) <= 1e-9);
  const Tensor frs = frames::fixed_frames(c, g, frames::FrameKind::handcrafted);
  for (const Tensor& t : {ppf, rpr_coordinate_code(frs, c, g), rpr_invariant_code(random_tensor({30, 7}, rng), g)})
    for (double x : t.values()) CHECK(std::isfinite(x));
}

TEST_CASE("attention fusion") {
  Rng rng(9);
  const Tensor a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng);
  const Tensor mean = fuse_attention(a, b, Tensor::zeros({5, 2}));
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(mean.values()[i] == doctest::Approx((a.values()[i] + b.values()[i]) / 2));

  std::vector<double> s(10);
  for (std::size_t d = 0; d < 5; ++d) s[d * 2 + 1] = -800.0;  // saturate the second branch
  const Tensor only_a = fuse_attention(a, Tensor::zeros({2, 5}), Tensor::from({5, 2}, s));
  CHECK(copy(only_a) == copy(a));
  CHECK_THROWS_AS(fuse_attention(a, b, Tensor::zeros({4, 2})), std::invalid_argument);
}

TEST_CASE("total loss") {
  const std::vector<int> label{2};
  const Tensor uniform = Tensor::zeros({1, 4});
  const LossTerms u = total_loss(uniform, uniform, uniform, label, 0.0, 0.0, {}, {}, {});
  CHECK(u.ce_inv == doctest::Approx(std::log(4.0)));
  CHECK(u.ce_eqv == doctest::Approx(std::log(4.0)));
  CHECK(u.ce_fused == doctest::Approx(std::log(4.0)));
  CHECK(u.total.item() == doctest::Approx(3 * std::log(4.0)));

  const Tensor sure = Tensor::from({1, 4}, {0, 0, 60, 0});
  CHECK(total_loss(sure, sure, sure, label, 0.0, 0.0, {}, {}, {}).total.item() <= 1e-20);
  // Undefined branches drop their terms.
  CHECK(total_loss(uniform, {}, {}, label, 0.1, 0.1, {}, {}, {}).total.item() ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("layer and model gradients match finite differences") {
  Rng rng(10);
  auto check = [](std::vector<Tensor> leaves, const std::function<Tensor()>& f) {
    Rng crng(11);
    const auto rep = checks::directional_gradient_check(std::move(leaves), f, crng, 3);
    CHECK(rep.smooth_directions >= 3);
    CHECK(rep.max_relative_error <= 1e-4);
  };
  ParameterSet params(12);
  const Tensor code = random_tensor({12, 4}, rng);
  const Tensor xj = random_tensor({12, 3}, rng);
  const Dense g0(params, "g0", 4, 3), g1(params, "g1", 3, 3);
  std::vector<Tensor> gate_leaves;
  for (const auto& p : params.items()) gate_leaves.push_back(p.tensor);
  check(gate_leaves, [&] { return ad::sum(ad::mul(rpr_refine(xj, code, g0, g1), xj)); });

  for (const char* name : {"full", "t4r1", "t6r4"}) {
    CAPTURE(name);
    Model m(small(name, 13));
    const PointCloud c = random_cloud(20, rng);
    std::vector<Tensor> leaves;
    for (const auto& p : m.params().items()) leaves.push_back(p.tensor);
    check(leaves, [&] { return m.loss(m.forward(c), 1).total; });
  }
}

TEST_CASE("checkpoints restore the exact model") {
  const auto path = std::filesystem::temp_directory_path() / "rotinv_test_network.lckp";
  Rng rng(14);
  const PointCloud c = random_cloud(24, rng);
  Model a(small("full", 1));
  for (const auto& p : a.params().items()) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v += 0.01;
  }
  save_checkpoint(path, a.params());
  Model b(small("full", 2));
  CHECK(copy(a.forward(c).logits()) != copy(b.forward(c).logits()));
  load_checkpoint(path, b.params());
  CHECK(copy(a.forward(c).logits()) == copy(b.forward(c).logits()));

  // A checkpoint without the fusion weights cannot fill the full model.
  const auto partial = std::filesystem::temp_directory_path() / "rotinv_test_network_t4r1.lckp";
  save_checkpoint(partial, Model(small("t4r1", 1)).params());
  CHECK_THROWS(load_checkpoint(partial, b.params()));
  std::filesystem::remove(partial);
  std::filesystem::remove(path);
}

TEST_CASE("diagnostics") {
  Rng rng(15);
  const Model m(small("full"));
  const auto r = m.forward(random_cloud(24, rng));
  const Diagnostics d = diagnose(r);
  CHECK(d.orthogonality_residual <= 1e-9);
  CHECK(std::abs(d.consistency_axis1) <= 1.0);
  CHECK(std::abs(d.consistency_axis2) <= 1.0);
}

TEST_CASE("config validation") {
  ModelConfig c = preset("full");
  c.lambda_orth = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = preset("full");
  c.vn_widths.clear();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
