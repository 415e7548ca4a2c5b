#include "property_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rotinv/frames.hpp"
#include "rotinv/kernels.hpp"
#include "rotinv/network.hpp"
#include "rotinv/vecneuron.hpp"

namespace rotinv::checks {

namespace {

using ad::Tensor;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

Eigen::Vector3d random_unit(Rng& rng) {
  std::normal_distribution<double> g;
  for (;;) {
    Eigen::Vector3d v(g(rng), g(rng), g(rng));
    if (v.norm() > 1e-6) return v.normalized();
  }
}

// Rodrigues' formula; deliberately not the library's quaternion sampler.
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  Eigen::Matrix3d k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k + (1 - std::cos(angle)) * k * k;
}

Rotation random_rotation(Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  return Rotation::from_matrix(axis_angle(random_unit(rng), angle(rng)), 1e-9);
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  PointCloud c;
  c.points.resize(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < c.points.rows(); ++i)
    c.points.row(i) << g(rng), g(rng), g(rng);
  return center_and_scale(c);
}

// Rotate a tensor of vectors laid out [N, 3, C] along axis 1.
std::vector<double> rotate_vectors(const Tensor& t, const Eigen::Matrix3d& r) {
  const std::size_t n = t.dim(0), c = t.dim(2);
  const auto v = t.values();
  std::vector<double> out(v.size());
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += r(i, j) * v[(p * 3 + j) * c + ch];
        out[(p * 3 + i) * c + ch] = s;
      }
  return out;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double relative_defect(std::span<const double> expected, std::span<const double> actual) {
  double d = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) d = std::max(d, std::abs(expected[i] - actual[i]));
  return d / std::max(max_abs(expected), 1e-300);
}

RunConfig small_model_profile(const RunConfig& base) {
  RunConfig c = base;
  c.data.points = std::max<std::size_t>(c.data.points, 32);
  return c;
}

Tensor random_tensor(ad::Shape shape, Rng& rng, bool requires_grad, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor random_units(std::size_t n, Rng& rng, bool requires_grad) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d u = random_unit(rng);
    v.insert(v.end(), {u.x(), u.y(), u.z()});
  }
  return Tensor::from({n, 3}, std::move(v), requires_grad);
}

// Scalar probe of a non-scalar output: sum(out * w) for a fixed random w.
std::function<Tensor()> probe(std::function<Tensor()> f, Rng& rng) {
  const Tensor sample = f();
  const Tensor w = random_tensor(sample.shape(), rng, false);
  return [f = std::move(f), w] { return ad::sum(f() * w); };
}

struct GradCase {
  std::string name;
  std::vector<Tensor> leaves;
  std::function<Tensor()> loss;
};

std::vector<Tensor> parameter_leaves(const ParameterSet& params) {
  std::vector<Tensor> out;
  for (const auto& p : params.items()) out.push_back(p.tensor);
  return out;
}

std::vector<GradCase> gradient_cases(Rng& rng) {
  std::vector<GradCase> cases;
  auto add = [&](std::string name, std::vector<Tensor> leaves, std::function<Tensor()> f,
                 bool scalar = false) {
    cases.push_back({std::move(name), std::move(leaves), scalar ? std::move(f) : probe(std::move(f), rng)});
  };

  // engine ops
  {
    Tensor a = random_tensor({2, 4, 3}, rng, true), b = random_tensor({3, 5}, rng, true);
    add("op.matmul", {a, b}, [=] { return ad::matmul(a, b); });
    Tensor c = random_tensor({2, 3, 2}, rng, true);
    add("op.bmm", {a, c}, [=] { return ad::bmm(a, c); });
    Tensor row = random_tensor({3}, rng, true);
    add("op.add_broadcast", {a, row}, [=] { return a + row; });
    add("op.sub_broadcast", {a, row}, [=] { return a - row; });
    add("op.mul_broadcast", {a, row}, [=] { return a * row; });
    Tensor pos = random_tensor({4, 3}, rng, true, 0.5, 2.0);
    add("op.div_broadcast", {a, pos}, [=] { return a / pos; });
    add("op.scale_shift_neg", {a}, [=] { return -(a * 1.7 + 0.3); });
    add("op.concat", {a, c}, [=] { return ad::concat({ad::transpose(a, 1, 2), c}, -1); });
    add("op.slice", {a}, [=] { return ad::slice(a, 1, 1, 3); });
    add("op.reshape_transpose", {a}, [=] { return ad::transpose(ad::reshape(a, {4, 2, 3}), 0, 2); });
    Tensor unit = random_tensor({2, 1, 3}, rng, true);
    add("op.expand", {unit}, [=] { return ad::expand(unit, 1, 4); });
    add("op.sum_axis", {a}, [=] { return ad::sum(a, 1); });
    add("op.mean_axis", {a}, [=] { return ad::mean(a, 2, true); });
    add("op.mean_all", {a}, [=] { return ad::mean(a); }, true);
    add("op.max_axis", {a}, [=] { return ad::max(a, 1); });
    add("op.sqrt", {pos}, [=] { return ad::sqrt(pos); });
    add("op.exp", {a}, [=] { return ad::exp(a); });
    add("op.log", {pos}, [=] { return ad::log(pos); });
    add("op.relu", {a}, [=] { return ad::relu(a); });
    add("op.softmax", {a}, [=] { return ad::softmax(a); });
    add("op.log_softmax", {a}, [=] { return ad::log_softmax(a); });
    add("op.normalize", {a}, [=] { return ad::normalize(a, -1); });
    const std::vector<std::size_t> idx{3, 0, 3, 1, 2};
    add("op.gather", {pos}, [=] { return ad::gather(pos, idx); });
    Tensor u = random_tensor({5, 3}, rng, true), v = random_tensor({5, 3}, rng, true);
    add("op.cross", {u, v}, [=] { return ad::cross(u, v); });
    const std::vector<bool> mask{true, false, false, true, false};
    const Tensor fallback = random_tensor({5, 3}, rng, false);
    add("op.where_rows", {u}, [=] { return ad::where_rows(mask, fallback, u); });
    Tensor logits = random_tensor({3, 4}, rng, true, -2.0, 2.0);
    const std::vector<int> labels{2, 0, 3};
    add("loss.cross_entropy", {logits}, [=] { return ad::cross_entropy(logits, labels); }, true);
  }

  // vector-neuron layers
  {
    const PointCloud cloud = random_cloud(20, rng);
    const KnnGraph knn = knn_graph(cloud, 5);
    Tensor v = random_tensor({20, 3, 4}, rng, true);
    Tensor w = random_tensor({4, 6}, rng, true);
    add("vn.linear", {v, w}, [=] { return vn::vn_linear(v, w); });
    Tensor wd = random_tensor({4, 1}, rng, true);
    add("vn.nonlinearity", {v, wd}, [=] { return vn::vn_nonlinearity(v, wd); });
    auto params = std::make_shared<ParameterSet>(11);
    auto conv = std::make_shared<vn::VnEdgeConv>(*params, "conv", 4, 6);
    auto leaves = parameter_leaves(*params);
    leaves.push_back(v);
    add("vn.edge_conv", leaves, [=] { return conv->forward(v, knn); });
    auto eparams = std::make_shared<ParameterSet>(12);
    auto enc = std::make_shared<vn::VnEncoder>(*eparams, "enc", std::vector<std::size_t>{4, 6});
    add("vn.encoder", parameter_leaves(*eparams), [=] { return enc->forward(cloud, knn); });
    Tensor head = random_tensor({4, 3}, rng, true);
    add("vn.invariant_head", {v, head}, [=] { return vn::vn_invariant_head(v, head); });
  }

  // frames and frame losses
  {
    const PointCloud cloud = random_cloud(16, rng);
    const KnnGraph knn = knn_graph(cloud, 4);
    Tensor v1 = random_units(16, rng, true), v2 = random_units(16, rng, true);
    add("frames.gram_schmidt", {v1, v2}, [=] { return frames::gram_schmidt_frames(v1, v2); });
    add("frames.lcrf", {v1, v2}, [=] { return frames::lcrf_frames(v1, v2); });
    add("loss.orthogonality_signed", {v1, v2},
        [=] { return frames::orthogonality_loss(v1, v2, frames::OrthogonalityVariant::signed_dot); }, true);
    add("loss.orthogonality_squared", {v1, v2},
        [=] { return frames::orthogonality_loss(v1, v2, frames::OrthogonalityVariant::squared); }, true);
    add("loss.consistency", {v1, v2}, [=] { return frames::consistency_loss(v1, v2, knn); }, true);
    Tensor li = random_tensor({1, 4}, rng, true), le = random_tensor({1, 4}, rng, true),
           lf = random_tensor({1, 4}, rng, true);
    const std::vector<int> label{1};
    add("loss.total", {li, le, lf, v1, v2}, [=] {
      return net::total_loss(li, le, lf, label, 0.1, 0.1, v1, v2, knn).total;
    }, true);
  }

  // invariant-branch layers
  {
    const PointCloud cloud = random_cloud(18, rng);
    const KnnGraph knn = knn_graph(cloud, 5);
    auto params = std::make_shared<ParameterSet>(13);
    auto psi0 = std::make_shared<net::Dense>(*params, "psi0", 6, 8);
    auto psi1 = std::make_shared<net::Dense>(*params, "psi1", 8, 8);
    Tensor frames_in = random_tensor({18, 3, 3}, rng, true);
    auto leaves = parameter_leaves(*params);
    leaves.push_back(frames_in);
    Tensor dense_in = random_tensor({5, 6}, rng, true);
    auto dense_leaves = parameter_leaves(*params);
    dense_leaves.push_back(dense_in);
    add("net.dense", dense_leaves, [=] { return (*psi1)(ad::relu((*psi0)(dense_in))); });
    add("net.edgeconv_first", leaves,
        [=] { return net::invariant_edgeconv_first(cloud, frames_in, knn, *psi0, *psi1); });

    Tensor x = random_tensor({18, 8}, rng, true);
    const KnnGraph fknn = knn_graph(x.values(), 18, 8, 5, Metric::feature);
    auto gp = std::make_shared<ParameterSet>(14);
    auto phi = std::make_shared<net::Dense>(*gp, "phi", 16, 10);
    auto gate0 = std::make_shared<net::Dense>(*gp, "gate0", 12, 6);
    auto gate1 = std::make_shared<net::Dense>(*gp, "gate1", 6, 8);
    Tensor code = random_tensor({18 * 5, 12}, rng, true);
    auto gl = parameter_leaves(*gp);
    gl.push_back(x);
    gl.push_back(code);
    add("net.edgeconv_plain", {x}, [=] { return net::invariant_edgeconv(x, fknn, *phi, nullptr, nullptr, nullptr); });
    add("net.edgeconv_gated", gl,
        [=] { return net::invariant_edgeconv(x, fknn, *phi, &code, gate0.get(), gate1.get()); });
    Tensor xj = random_tensor({18 * 5, 8}, rng, true);
    add("net.rpr_refine", {xj, code}, [=] { return net::rpr_refine(xj, code, *gate0, *gate1); });

    Tensor v = random_tensor({18, 3, 4}, rng, true);
    add("net.rpr_equivariant_code", {frames_in, v}, [=] { return net::rpr_code(frames_in, v, fknn); });
    add("net.rpr_coordinate_code", {frames_in},
        [=] { return net::rpr_coordinate_code(frames_in, cloud, fknn); });
    add("net.rpr_invariant_code", {x}, [=] { return net::rpr_invariant_code(x, fknn); });

    Tensor pi = random_tensor({1, 6}, rng, true), pe = random_tensor({1, 6}, rng, true),
           scores = random_tensor({6, 2}, rng, true);
    add("net.fuse_attention", {pi, pe, scores}, [=] { return net::fuse_attention(pi, pe, scores); });
  }

  // whole models, one per structural variant
  for (const char* row : {"t4r1", "t4r4", "t5r1", "t6r2", "t6r4", "full", "identity"}) {
    net::ModelConfig mc = net::preset(row);
    mc.vn_widths = {4, 6};
    mc.inv_widths = {8, 8, 10};
    mc.k = 5;
    mc.fusion_width = 8;
    mc.classifier_hidden = 8;
    mc.gate_hidden = 6;
    mc.seed = 21;
    auto model = std::make_shared<net::Model>(mc);
    // Move the identity gates off their constant start so the check sees a generic point.
    for (ad::Tensor t : parameter_leaves(model->params()))
      for (double& x : t.mutable_values()) x += 0.05 * std::uniform_real_distribution<double>(-1, 1)(rng);
    const PointCloud cloud = random_cloud(28, rng);
    add(std::string("model.") + row, parameter_leaves(model->params()),
        [=] { return model->loss(model->forward(cloud), 2).total; }, true);
  }
  return cases;
}

}  // namespace

GradientReport directional_gradient_check(std::vector<Tensor> leaves,
                                          const std::function<Tensor()>& loss, Rng& rng,
                                          int directions, double step) {
  for (auto& t : leaves) t.zero_grad();
  ad::backward(loss());
  std::vector<std::vector<double>> grads;
  for (const auto& t : leaves) grads.push_back(t.grad());

  GradientReport rep;
  std::normal_distribution<double> g;
  const double center = loss().item();
  int smooth = 0;
  for (int attempt = 0; smooth < directions && attempt < 10 * directions; ++attempt) {
    std::vector<std::vector<double>> dir;
    double analytic = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      dir.emplace_back(leaves[i].numel());
      for (std::size_t j = 0; j < dir[i].size(); ++j) {
        dir[i][j] = g(rng);
        analytic += dir[i][j] * grads[i][j];
      }
    }
    auto shift = [&](double s) {
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        auto vals = leaves[i].mutable_values();
        for (std::size_t j = 0; j < vals.size(); ++j) vals[j] += s * dir[i][j];
      }
    };
    auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-4 * std::max({std::abs(a), std::abs(b), 1e-6});
    };
    auto central = [&](double h, double& forward, double& backward) {
      shift(h);
      const double plus = loss().item();
      shift(-2.0 * h);
      const double minus = loss().item();
      shift(h);
      forward = (plus - center) / h;
      backward = (center - minus) / h;
      return (plus - minus) / (2.0 * h);
    };
    // A relu, max or neighbor-set switch inside [x - h, x + h] shows up as
    // disagreeing one-sided slopes, strong curvature as a central difference
    // that moves when the step shrinks. Either says nothing about the gradient
    // at x: shrink the step, then give up on the direction.
    double numeric = 0.0, h = step;
    bool kink = true;
    for (int shrink = 0; shrink < 5 && kink; ++shrink, h *= 0.1) {
      double fw = 0.0, bw = 0.0, fw_fine = 0.0, bw_fine = 0.0;
      numeric = central(h, fw, bw);
      const double finer = central(0.1 * h, fw_fine, bw_fine);
      kink = !close(fw, bw) || !close(numeric, finer);
    }
    if (kink) {
      ++rep.kinks_skipped;
      continue;
    }
    ++smooth;
    const double err = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    if (err >= rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  }
  rep.smooth_directions = smooth;
  for (auto& t : leaves) t.zero_grad();
  return rep;
}

std::vector<std::string> criterion_names() {
  return {"orthogonality",        "equivariance",     "end_to_end_invariance",
          "consistency_identity", "gradient_suite",   "derivation_residuals",
          "rotation_gap_pattern", "ablation_pattern", "consistency_training",
          "knn_oracle"};
}

CriterionResult check_orthogonality(std::uint64_t seed, std::size_t pairs) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst_dot = 0.0, worst_norm = 0.0;
  std::size_t done = 0;
  while (done < pairs) {
    const Eigen::Vector3d a = random_unit(rng), b = random_unit(rng);
    if (std::abs(a.dot(b)) >= 1.0 - frames::kDegenerateEps) continue;
    const auto [f, mid] = frames::lcrf_frame(frames::ProjectedPair::from(a, b));
    worst_dot = std::max(worst_dot, std::abs(f.u1().dot(f.u2())));
    worst_norm = std::max({worst_norm, std::abs(f.u1().norm() - 1), std::abs(f.u2().norm() - 1)});
    ++done;
  }
  CriterionResult r{"orthogonality", false, "", seconds_since(t0)};
  r.passed = worst_dot <= 1e-9 && worst_norm <= 1e-9 && r.seconds < 10.0;
  r.detail = std::to_string(pairs) + " pairs, max |u1.u2| = " + fmt(worst_dot) +
             ", max unit-norm defect = " + fmt(worst_norm) + ", " + fmt(r.seconds) + " s (limit 10 s)";
  return r;
}

CriterionResult check_equivariance(std::uint64_t seed, const RunConfig& profile, std::size_t pairs) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  net::ModelConfig mc = profile.model;
  mc.frame_kind = frames::FrameKind::lcrf;
  mc.rpr = net::RprSource::equivariant;
  mc.fusion = net::Fusion::attention;
  const net::Model model(mc);
  DatasetSpec spec = small_model_profile(profile).data;
  spec.seed = seed;
  spec.train_per_class = (pairs + kNumFamilies - 1) / kNumFamilies;
  spec.test_per_class = 1;
  const auto data = generate_dataset(spec);

  double worst_features = 0.0, worst_frames = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const PointCloud& cloud = data.train[i];
    const Rotation rot = random_rotation(rng);
    const auto a = model.forward(cloud);
    const auto b = model.forward(apply_rotation(cloud, rot));
    worst_features = std::max(worst_features,
                              relative_defect(rotate_vectors(a.equivariant, rot.matrix()), b.equivariant.values()));
    worst_frames = std::max(worst_frames, relative_defect(rotate_vectors(a.frames, rot.matrix()), b.frames.values()));
  }
  CriterionResult r{"equivariance", false, "", seconds_since(t0)};
  r.passed = worst_features <= 1e-9 && worst_frames <= 1e-9 && r.seconds < 60.0;
  r.detail = std::to_string(pairs) + " (cloud, rotation) pairs, encoder defect " + fmt(worst_features) +
             ", LCRF defect " + fmt(worst_frames) + " (relative), " + fmt(r.seconds) + " s (limit 60 s)";
  return r;
}

CriterionResult check_end_to_end_invariance(std::uint64_t seed, const RunConfig& profile,
                                            std::size_t rotations) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  net::ModelConfig mc = net::preset("full");
  mc.vn_widths = profile.model.vn_widths;
  mc.inv_widths = profile.model.inv_widths;
  mc.k = profile.model.k;
  mc.fusion_width = profile.model.fusion_width;
  mc.classifier_hidden = profile.model.classifier_hidden;
  mc.gate_hidden = profile.model.gate_hidden;
  mc.seed = seed;
  const net::Model model(mc);
  DatasetSpec spec = small_model_profile(profile).data;
  spec.seed = seed + 1;
  spec.train_per_class = 1;
  spec.test_per_class = 1;
  const auto data = generate_dataset(spec);

  double worst = 0.0;
  std::size_t same = 0, total = 0;
  for (const auto& cloud : data.train) {
    const auto ref = model.forward(cloud);
    for (std::size_t i = 0; i < rotations; ++i) {
      const auto out = model.forward(apply_rotation(cloud, sample_rotation_so3(rng)));
      for (auto [x, y] : {std::pair{&ref.logits_inv, &out.logits_inv},
                          std::pair{&ref.logits_eqv, &out.logits_eqv},
                          std::pair{&ref.logits_fused, &out.logits_fused}})
        worst = std::max(worst, relative_defect(x->values(), y->values()));
      same += out.predicted_class() == ref.predicted_class();
      ++total;
    }
  }
  CriterionResult r{"end_to_end_invariance", false, "", seconds_since(t0)};
  r.passed = worst <= 1e-6 && same == total && r.seconds < 300.0;
  r.detail = std::to_string(data.train.size()) + " clouds x " + std::to_string(rotations) +
             " rotations, max relative logit change " + fmt(worst) + ", class agreement " +
             std::to_string(same) + "/" + std::to_string(total) + ", " + fmt(r.seconds) + " s";
  return r;
}

CriterionResult check_consistency_identity(std::uint64_t seed, std::size_t samples) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  auto orthogonal_pair = [&] {
    for (;;) {
      const Eigen::Vector3d a = random_unit(rng);
      Eigen::Vector3d b = random_unit(rng);
      b -= b.dot(a) * a;
      if (b.norm() > 1e-3) return std::pair{a, Eigen::Vector3d(b.normalized())};
    }
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto [a1, a2] = orthogonal_pair();
    const auto [b1, b2] = orthogonal_pair();
    const auto fa = frames::lcrf_frame(frames::ProjectedPair::from(a1, a2)).first;
    const auto fb = frames::lcrf_frame(frames::ProjectedPair::from(b1, b2)).first;
    worst = std::max(worst, std::abs(fa.u1().dot(fb.u1()) - a2.dot(b2)));
  }
  CriterionResult r{"consistency_identity", false, "", seconds_since(t0)};
  r.passed = worst <= 1e-9;
  r.detail = std::to_string(samples) + " samples, max |u_a1.u_b1 - v_a2.v_b2| = " + fmt(worst);
  return r;
}

CriterionResult check_gradients(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  const auto cases = gradient_cases(rng);
  double worst = 0.0;
  int kinks = 0;
  std::string worst_name, failures;
  for (const auto& c : cases) {
    const auto rep = directional_gradient_check(c.leaves, c.loss, rng);
    kinks += rep.kinks_skipped;
    if (rep.smooth_directions < 3) failures += " " + c.name + "(no smooth direction)";
    if (rep.max_relative_error > worst) {
      worst = rep.max_relative_error;
      worst_name = c.name;
    }
    if (rep.max_relative_error > 1e-4)
      failures += " " + c.name + "(" + fmt(rep.max_relative_error) + ": " + fmt(rep.worst_analytic, 10) +
                  " vs " + fmt(rep.worst_numeric, 10) + ")";
  }
  CriterionResult r{"gradient_suite", failures.empty(), "", seconds_since(t0)};
  r.detail = std::to_string(cases.size()) + " ops/layers/losses/models, max relative error " + fmt(worst) +
             " (" + worst_name + "), " +
             std::to_string(kinks) + " kink-crossing directions redrawn" + (failures.empty() ? "" : "; failing:" + failures);
  return r;
}

CriterionResult check_derivation_residuals(std::uint64_t seed, std::size_t pairs) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < pairs) {
    const Eigen::Vector3d a = random_unit(rng), b = random_unit(rng);
    if (std::abs(a.dot(b)) >= 1.0 - frames::kDegenerateEps) continue;
    worst = std::max(worst, frames::theorem1_identity_check(frames::ProjectedPair::from(a, b)).max());
    ++done;
  }
  CriterionResult r{"derivation_residuals", worst <= 1e-9, "", seconds_since(t0)};
  r.detail = std::to_string(pairs) + " pairs, max residual " + fmt(worst);
  return r;
}

CriterionResult check_knn_oracle(std::uint64_t seed, std::size_t clouds) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  std::size_t mismatches = 0, ties = 0;
  for (std::size_t c = 0; c < clouds; ++c) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 256)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(n - 1, 24))(rng);
    const bool lattice = c % 4 == 0;  // coarse grid: exact ties and duplicates
    std::vector<double> pts(n * 3);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> cell(-2, 2);
    for (double& x : pts) x = lattice ? 0.5 * cell(rng) : g(rng);

    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double d = 0.0;
        for (std::size_t a = 0; a < 3; ++a) d += (pts[i * 3 + a] - pts[j * 3 + a]) * (pts[i * 3 + a] - pts[j * 3 + a]);
        all.emplace_back(d, j);
      }
      std::sort(all.begin(), all.end());
      for (std::size_t j = 0; j < k; ++j) expected.push_back(all[j].second);
      if (k < all.size() && all[k - 1].first == all[k].first) ++ties;
    }
    const KnnGraph got = knn_graph(pts, n, 3, k, Metric::coordinate);
    mismatches += got.indices != expected;
    mismatches += kernels::serial::knn(pts, n, 3, k) != expected;
    mismatches += kernels::parallel::knn(pts, n, 3, k) != expected;
  }
  CriterionResult r{"knn_oracle", mismatches == 0, "", seconds_since(t0)};
  r.detail = std::to_string(clouds) + " clouds (N <= 256; dispatch, serial and parallel kernels), " +
             std::to_string(mismatches) + " mismatches, " + std::to_string(ties) + " boundary ties exercised";
  return r;
}

TrainingStudy run_training_study(const SuiteOptions& options) {
  TrainingStudy s;
  s.seeds = options.training_seeds;
  const Protocol zso3 = Protocol::parse("zso3");
  auto log = [&](const RunReport& rep, const char* what) {
    if (options.log)
      *options.log << "  " << what << " seed " << rep.config.train.seed << ": accuracy " << fmt(rep.accuracy)
                   << ", axis-2 consistency " << fmt(rep.consistency_axis2) << ", " << fmt(rep.seconds)
                   << " s" << (rep.diverged ? " DIVERGED " + rep.message : "") << std::endl;
    if (options.reports) *options.reports << rep.to_json() << '\n';
  };
  auto configured = [&](const char* row, std::uint64_t seed) {
    RunConfig c = options.profile;
    apply_config_key(c, "preset", row);
    c.model.seed = c.train.seed = c.data.seed = seed;
    return c;
  };
  // Same weights under both test distributions: the z/z report differs only in its evaluation.
  auto both_tests = [&](const RunConfig& c, const SyntheticDataset& data, std::vector<RunReport>& z,
                        std::vector<RunReport>& so3, const char* what) {
    TrainedRun run = train_and_evaluate(c, zso3, data);
    RunReport zz = run.report;
    zz.protocol = Protocol::parse("zz");
    const auto t0 = Clock::now();
    zz.repeat_accuracy.clear();
    zz.consistency_axis1 = zz.consistency_axis2 = 0.0;
    if (!zz.diverged) {
      const std::uint64_t rseed = data.spec.seed ^ 0x726f74ull;
      for (std::size_t rpt = 0; rpt < std::max<std::size_t>(1, c.train.repeats); ++rpt) {
        const auto ev = evaluate(run.model, data.test, RotationMode::z, rseed, rpt);
        zz.repeat_accuracy.push_back(ev.accuracy);
        zz.consistency_axis1 += ev.consistency_axis1;
        zz.consistency_axis2 += ev.consistency_axis2;
      }
      const double n = static_cast<double>(zz.repeat_accuracy.size());
      zz.accuracy = std::accumulate(zz.repeat_accuracy.begin(), zz.repeat_accuracy.end(), 0.0) / n;
      zz.consistency_axis1 /= n;
      zz.consistency_axis2 /= n;
    }
    zz.seconds += seconds_since(t0);
    log(zz, (std::string(what) + " z/z").c_str());
    log(run.report, (std::string(what) + " z/SO(3)").c_str());
    z.push_back(zz);
    so3.push_back(run.report);
  };

  const auto t_gap = Clock::now();
  for (auto seed : s.seeds) {
    const RunConfig c = configured("full", seed);
    const auto data = generate_dataset(c.data);
    both_tests(c, data, s.full_z, s.full_so3, "full");
    both_tests(configured("identity", seed), data, s.identity_z, s.identity_so3, "identity");
  }
  s.rotation_gap_seconds = seconds_since(t_gap);

  for (auto seed : s.seeds) {
    RunConfig c = configured("t4r2", seed);
    const auto data = generate_dataset(c.data);
    s.row2.push_back(run_experiment(c, zso3, data));
    log(s.row2.back(), "t4r2 z/SO(3)");
    c.model.lambda_consist = 0.0;
    c.model.name = "t4r2-no-consistency";
    s.row2_no_consistency.push_back(run_experiment(c, zso3, data));
    log(s.row2_no_consistency.back(), "t4r2 lambda_consist=0 z/SO(3)");
  }
  return s;
}

namespace {

double mean_of(const std::vector<RunReport>& rs, double RunReport::*field) {
  double s = 0.0;
  for (const auto& r : rs) s += r.*field;
  return rs.empty() ? 0.0 : s / static_cast<double>(rs.size());
}

bool any_diverged(const std::vector<RunReport>& rs) {
  return std::any_of(rs.begin(), rs.end(), [](const RunReport& r) { return r.diverged; });
}

std::string pct(double v) { return fmt(100.0 * v, 4); }

}  // namespace

CriterionResult check_rotation_gap_pattern(const TrainingStudy& s) {
  const double fz = mean_of(s.full_z, &RunReport::accuracy), fs = mean_of(s.full_so3, &RunReport::accuracy);
  const double iz = mean_of(s.identity_z, &RunReport::accuracy), is = mean_of(s.identity_so3, &RunReport::accuracy);
  CriterionResult r{"rotation_gap_pattern", false, "", s.rotation_gap_seconds};
  const bool diverged = any_diverged(s.full_so3) || any_diverged(s.identity_so3);
  r.passed = !diverged && std::abs(fz - fs) <= 0.03 && iz - is >= 0.20 && s.rotation_gap_seconds <= 1800.0;
  r.detail = "full z/z " + pct(fz) + "% vs z/SO(3) " + pct(fs) + "% (gap " + pct(std::abs(fz - fs)) +
             ", limit 3); identity z/z " + pct(iz) + "% vs z/SO(3) " + pct(is) + "% (drop " + pct(iz - is) +
             ", need 20); " + std::to_string(s.seeds.size()) + " seeds, " + fmt(s.rotation_gap_seconds) +
             " s (limit 1800)" + (diverged ? "; a run diverged" : "");
  return r;
}

CriterionResult check_ablation_pattern(const TrainingStudy& s) {
  std::vector<double> diffs;
  for (std::size_t i = 0; i < s.row2.size() && i < s.full_so3.size(); ++i)
    diffs.push_back(s.full_so3[i].accuracy - s.row2[i].accuracy);
  const double mean_diff = diffs.empty() ? 0.0 : std::accumulate(diffs.begin(), diffs.end(), 0.0) / diffs.size();
  double sd = 0.0;
  for (double d : diffs) sd += (d - mean_diff) * (d - mean_diff);
  sd = diffs.size() > 1 ? std::sqrt(sd / static_cast<double>(diffs.size() - 1)) : 0.0;
  const double r6 = mean_of(s.full_so3, &RunReport::accuracy), r2 = mean_of(s.row2, &RunReport::accuracy);
  CriterionResult r{"ablation_pattern", false, "", 0.0};
  for (const auto& x : s.row2) r.seconds += x.seconds;
  const bool diverged = any_diverged(s.row2) || any_diverged(s.full_so3);
  r.passed = !diverged && r6 >= r2 - sd;
  r.detail = "row 6 (full) " + pct(r6) + "% vs row 2 (aggregation only) " + pct(r2) +
             "% on paired seeds, mean difference " + pct(mean_diff) + " +- " + pct(sd) + " points" +
             (r6 >= r2 ? "" : r.passed ? " (below row 2, within 1 std: flagged)" : " (below row 2 by more than 1 std)") +
             (diverged ? "; a run diverged" : "");
  return r;
}

CriterionResult check_consistency_training(const TrainingStudy& s) {
  const double with = mean_of(s.row2, &RunReport::consistency_axis2);
  const double without = mean_of(s.row2_no_consistency, &RunReport::consistency_axis2);
  CriterionResult r{"consistency_training", false, "", 0.0};
  for (const auto& x : s.row2_no_consistency) r.seconds += x.seconds;
  const bool diverged = any_diverged(s.row2) || any_diverged(s.row2_no_consistency);
  r.passed = !diverged && with > without;
  r.detail = "gram-schmidt axis-2 test consistency " + fmt(with, 4) + " (lambda_consist 0.1) vs " +
             fmt(without, 4) + " (lambda_consist 0), mean of " + std::to_string(s.row2.size()) +
             " paired seeds" + (diverged ? "; a run diverged" : "");
  return r;
}

std::vector<CriterionResult> run_suite(const SuiteOptions& options) {
  std::vector<CriterionResult> out;
  auto record = [&](CriterionResult r) {
    if (options.log) *options.log << format_result(r) << std::endl;
    out.push_back(std::move(r));
  };
  const auto seed = options.seed;
  record(check_orthogonality(seed));
  record(check_equivariance(seed + 1, options.profile));
  record(check_end_to_end_invariance(seed + 2, options.profile));
  record(check_consistency_identity(seed + 3));
  record(check_gradients(seed + 4));
  record(check_derivation_residuals(seed + 5));
  if (options.include_training) {
    const TrainingStudy study = run_training_study(options);
    record(check_rotation_gap_pattern(study));
    record(check_ablation_pattern(study));
    record(check_consistency_training(study));
  }
  record(check_knn_oracle(seed + 6));
  return out;
}

std::string format_result(const CriterionResult& r) {
  return std::string(r.passed ? "PASS " : "FAIL ") + r.name + ": " + r.detail;
}

}  // namespace rotinv::checks
