#include "rotinv/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rotinv/errors.hpp"

namespace rotinv {

namespace {

using json = nlohmann::json;

Rng stream(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Test rotations depend on the data seed only, never on the model.
std::uint64_t rotation_seed_for(const SyntheticDataset& data) { return data.spec.seed ^ 0x726f74ull; }

double relative_change(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(a[i]));
  }
  return diff / scale;
}

double grad_norm(const ParameterSet& params) {
  double s = 0.0;
  for (const auto& p : params.items())
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string_view to_string(RotationMode m) {
  switch (m) {
    case RotationMode::none: return "none";
    case RotationMode::z: return "z";
    case RotationMode::so3: return "so3";
  }
  return "?";
}

Rotation sample_rotation(RotationMode mode, Rng& rng) {
  switch (mode) {
    case RotationMode::none: return Rotation{};
    case RotationMode::z: return sample_rotation_z(rng);
    case RotationMode::so3: return sample_rotation_so3(rng);
  }
  return Rotation{};
}

Protocol Protocol::parse(std::string_view name) {
  if (name == "zz") return {RotationMode::z, RotationMode::z};
  if (name == "zso3") return {RotationMode::z, RotationMode::so3};
  if (name == "so3so3") return {RotationMode::so3, RotationMode::so3};
  throw std::invalid_argument("unknown protocol '" + std::string(name) +
                              "' (expected zz, zso3 or so3so3)");
}

std::string Protocol::name() const {
  auto part = [](RotationMode m) { return m == RotationMode::none ? std::string("none") : std::string(to_string(m)); };
  return part(train) + part(test);
}

Rotation test_rotation(RotationMode mode, std::uint64_t seed, std::size_t repeat,
                       std::size_t index) {
  Rng rng = stream({seed, repeat, index});
  return sample_rotation(mode, rng);
}

EvalResult evaluate(const net::Model& model, const std::vector<PointCloud>& test,
                    RotationMode mode, std::uint64_t rotation_seed, std::size_t repeat) {
  EvalResult out;
  if (test.empty()) return out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto r = model.forward(apply_rotation(test[i], test_rotation(mode, rotation_seed, repeat, i)));
    if (r.predicted_class() == test[i].label) ++correct;
    const auto d = net::diagnose(r);
    out.consistency_axis1 += d.consistency_axis1;
    out.consistency_axis2 += d.consistency_axis2;
    out.degenerate_points += d.degenerate_points;
  }
  const double n = static_cast<double>(test.size());
  out.accuracy = static_cast<double>(correct) / n;
  out.consistency_axis1 /= n;
  out.consistency_axis2 /= n;
  return out;
}

TrainedRun train_and_evaluate(const RunConfig& config, const Protocol& protocol,
                              const SyntheticDataset& data, std::ostream* diagnostics) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = config.train;
  if (tc.batch == 0) throw std::invalid_argument("batch must be positive");
  if (data.train.empty()) throw std::invalid_argument("empty training split");

  TrainedRun run{net::Model(config.model), {}};
  RunReport& rep = run.report;
  rep.row = config.model.name;
  rep.config = config;
  rep.protocol = protocol;

  net::Model& model = run.model;
  ParameterSet& params = model.params();
  Sgd opt({tc.momentum, tc.weight_decay});
  Rng rng = stream({tc.seed, 0x747261696eull});
  Rng probe_rng = stream({tc.seed, 0x70726f6265ull});

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  try {
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
      const double lr = cosine_lr(epoch, tc.epochs, tc.lr);
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch) {
        const std::size_t b1 = std::min(order.size(), b0 + tc.batch);
        const double inv_b = 1.0 / static_cast<double>(b1 - b0);
        params.zero_grad();
        StepRecord rec;
        rec.step = step;
        rec.epoch = epoch;
        rec.lr = lr;
        const bool record = tc.diagnostics_every > 0 && step % tc.diagnostics_every == 0;
        for (std::size_t i = b0; i < b1; ++i) {
          const PointCloud& src = data.train[order[i]];
          const auto r = model.forward(apply_rotation(src, sample_rotation(protocol.train, rng)));
          const auto terms = model.loss(r, src.label);
          ad::backward(terms.total);
          rec.loss += terms.total.item() * inv_b;
          rec.ce_inv += terms.ce_inv * inv_b;
          rec.ce_eqv += terms.ce_eqv * inv_b;
          rec.ce_fused += terms.ce_fused * inv_b;
          rec.orth += terms.orth * inv_b;
          rec.consist += terms.consist * inv_b;
          if (record) {
            const auto d = net::diagnose(r);
            rec.consistency_axis1 += d.consistency_axis1 * inv_b;
            rec.consistency_axis2 += d.consistency_axis2 * inv_b;
            rec.orthogonality_residual = std::max(rec.orthogonality_residual, d.orthogonality_residual);
            rec.degenerate_points += d.degenerate_points;
          }
        }
        double scale = inv_b;
        if (tc.grad_clip > 0.0) {
          const double norm = grad_norm(params) * inv_b;
          if (!std::isfinite(norm)) throw NumericError("gradient norm");
          if (norm > tc.grad_clip) scale *= tc.grad_clip / norm;
        }
        opt.step(params, lr, scale);
        epoch_loss += rec.loss * static_cast<double>(b1 - b0);

        if (record) {
          const PointCloud& first = data.train[order[b0]];
          const auto a = model.forward(first);
          const auto b = model.forward(apply_rotation(first, sample_rotation_so3(probe_rng)));
          rec.invariance_defect = relative_change(a.logits().values(), b.logits().values());
          if (diagnostics) *diagnostics << to_json(rec) << '\n';
          rep.diagnostics.push_back(rec);
        }
        ++step;
      }
      rep.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }
  } catch (const NumericError& e) {
    rep.diverged = true;
    rep.message = std::string("non-finite value at step ") + std::to_string(step) + ": " + e.what();
    if (diagnostics)
      *diagnostics << json{{"step", step}, {"diverged", true}, {"message", rep.message}}.dump() << '\n';
  }

  if (!rep.diverged) {
    const std::uint64_t rseed = rotation_seed_for(data);
    for (std::size_t rpt = 0; rpt < std::max<std::size_t>(1, tc.repeats); ++rpt) {
      const EvalResult ev = evaluate(model, data.test, protocol.test, rseed, rpt);
      rep.repeat_accuracy.push_back(ev.accuracy);
      rep.consistency_axis1 += ev.consistency_axis1;
      rep.consistency_axis2 += ev.consistency_axis2;
      rep.degenerate_points += ev.degenerate_points;
    }
    const double n = static_cast<double>(rep.repeat_accuracy.size());
    rep.accuracy = std::accumulate(rep.repeat_accuracy.begin(), rep.repeat_accuracy.end(), 0.0) / n;
    rep.consistency_axis1 /= n;
    rep.consistency_axis2 /= n;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

RunReport run_experiment(const RunConfig& config, const Protocol& protocol,
                         const SyntheticDataset& data, std::ostream* diagnostics) {
  return train_and_evaluate(config, protocol, data, diagnostics).report;
}

std::vector<RunReport> run_ablation_grid(const std::vector<std::string>& rows,
                                         const RunConfig& base, const Protocol& protocol,
                                         const SyntheticDataset& data) {
  std::vector<RunConfig> configs;
  for (const auto& row : rows) {
    RunConfig c = base;
    apply_config_key(c, "preset", row);
    c.model.validate();
    configs.push_back(std::move(c));
  }
  std::vector<RunReport> out;
  for (const auto& c : configs) out.push_back(run_experiment(c, protocol, data));
  return out;
}

std::vector<std::size_t> scaled_drops(const std::vector<std::size_t>& reference, std::size_t points) {
  std::vector<std::size_t> out;
  for (std::size_t d : reference)
    out.push_back(static_cast<std::size_t>(
        std::lround(static_cast<double>(d) * static_cast<double>(points) / 1024.0)));
  return out;
}

std::vector<PerturbationResult> run_perturbation_sweep(
    const net::Model& model, const std::vector<PointCloud>& test, RotationMode mode,
    std::uint64_t rotation_seed, std::size_t repeats, const std::vector<double>& sigmas,
    const std::vector<std::size_t>& drops) {
  auto accuracy = [&](double sigma, std::size_t drop) {
    std::size_t correct = 0, total = 0;
    for (std::size_t rpt = 0; rpt < std::max<std::size_t>(1, repeats); ++rpt)
      for (std::size_t i = 0; i < test.size(); ++i) {
        PointCloud c = test[i];
        Rng rng = stream({rotation_seed, rpt, i, 0x6e6f697365ull});
        if (sigma > 0.0) c = add_gaussian_noise(c, sigma, rng);
        if (drop > 0) c = drop_points(c, drop, rng);
        const auto r = model.forward(apply_rotation(c, test_rotation(mode, rotation_seed, rpt, i)));
        correct += r.predicted_class() == test[i].label;
        ++total;
      }
    return static_cast<double>(correct) / static_cast<double>(total);
  };
  std::vector<PerturbationResult> out;
  for (double s : sigmas) out.push_back({s, 0, accuracy(s, 0)});
  for (std::size_t d : drops) out.push_back({0.0, d, accuracy(0.0, d)});
  return out;
}

std::string to_json(const StepRecord& r) {
  return json{{"step", r.step},
              {"epoch", r.epoch},
              {"lr", r.lr},
              {"loss", r.loss},
              {"ce_inv", r.ce_inv},
              {"ce_eqv", r.ce_eqv},
              {"ce_fused", r.ce_fused},
              {"orth", r.orth},
              {"consist", r.consist},
              {"consistency_axis1", r.consistency_axis1},
              {"consistency_axis2", r.consistency_axis2},
              {"orthogonality_residual", r.orthogonality_residual},
              {"invariance_defect", r.invariance_defect},
              {"degenerate_points", r.degenerate_points}}
      .dump();
}

std::string RunReport::to_json() const {
  json j{{"row", row},
         {"protocol", protocol.name()},
         {"config", to_config_text(config)},
         {"epoch_loss", epoch_loss},
         {"repeat_accuracy", repeat_accuracy},
         {"accuracy", accuracy},
         {"consistency_axis1", consistency_axis1},
         {"consistency_axis2", consistency_axis2},
         {"degenerate_points", degenerate_points},
         {"seconds", seconds},
         {"diverged", diverged},
         {"message", message}};
  return j.dump();
}

std::string summary_csv(const std::vector<RunReport>& reports) {
  std::ostringstream o;
  o.precision(6);
  o << "row,protocol,seed,accuracy,std,repeats,consistency_axis1,consistency_axis2,seconds,diverged\n";
  for (const auto& r : reports) {
    o << r.row << ',' << r.protocol.name() << ',' << r.config.train.seed << ',' << r.accuracy << ','
      << stddev(r.repeat_accuracy) << ',';
    for (std::size_t i = 0; i < r.repeat_accuracy.size(); ++i)
      o << (i ? ";" : "") << r.repeat_accuracy[i];
    o << ',' << r.consistency_axis1 << ',' << r.consistency_axis2 << ',' << r.seconds << ','
      << (r.diverged ? 1 : 0) << '\n';
  }
  return o.str();
}

}  // namespace rotinv
