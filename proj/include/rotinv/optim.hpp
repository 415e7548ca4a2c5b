#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rotinv/autodiff.hpp"

namespace rotinv {

struct Parameter {
  std::string name;
  ad::Tensor tensor;
};

/// Named learnable tensors of one model. Names are unique.
///
/// Initial values depend only on (seed, name), never on creation order, so
/// toggling an optional sub-module leaves every other parameter untouched.
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  /// Uniform in [-bound, bound] with bound = sqrt(6 / fan_in) (He init for relu).
  ad::Tensor uniform(const std::string& name, ad::Shape shape, std::size_t fan_in);
  /// Uniform in [-bound, bound] with an explicit bound.
  ad::Tensor uniform_bound(const std::string& name, ad::Shape shape, double bound);
  ad::Tensor constant(const std::string& name, ad::Shape shape, double value);

  const std::vector<Parameter>& items() const { return params_; }
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t count_scalars() const;
  void zero_grad();

 private:
  ad::Tensor add(const std::string& name, ad::Tensor t);

  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Cosine annealing: lr0 * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with momentum and L2 weight decay:
///   g <- grad + wd * p;  v <- mu * v + g;  p <- p - lr * v
class Sgd {
 public:
  explicit Sgd(SgdOptions opts = {}) : opts_(opts) {}
  /// `grad_scale` multiplies every gradient before the update (e.g. 1 / batch).
  void step(const ParameterSet& params, double lr, double grad_scale = 1.0);

 private:
  SgdOptions opts_;
  std::map<std::string, std::vector<double>> velocity_;
};

/// One stateless update on raw buffers.
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              double lr, double momentum, double weight_decay);

// ---- checkpoints ----------------------------------------------------------

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

/// Little-endian: "LCKP", u32 count, then per entry
///   u32 name_len, name bytes, u32 rank, rank x u64 extents, f64 values.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);
/// Copy stored values into matching parameters; throws on missing names or shape mismatch.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

}  // namespace rotinv
