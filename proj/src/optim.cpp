#include "rotinv/optim.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "rotinv/errors.hpp"

namespace rotinv {

namespace {

// FNV-1a, used to derive a per-parameter stream from its name.
std::uint64_t hash_name(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

ad::Tensor ParameterSet::add(const std::string& name, ad::Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

ad::Tensor ParameterSet::uniform(const std::string& name, ad::Shape shape, std::size_t fan_in) {
  return uniform_bound(name, std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)));
}

ad::Tensor ParameterSet::uniform_bound(const std::string& name, ad::Shape shape, double bound) {
  std::mt19937_64 rng(seed_ ^ hash_name(name));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = dist(rng);
  return add(name, ad::Tensor::from(std::move(shape), std::move(v), true));
}

ad::Tensor ParameterSet::constant(const std::string& name, ad::Shape shape, double value) {
  return add(name, ad::Tensor::full(std::move(shape), value, true));
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

std::size_t ParameterSet::count_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
  if (total == 0) return lr0;
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

void Sgd::step(const ParameterSet& params, double lr, double grad_scale) {
  for (const auto& p : params.items()) {
    auto t = p.tensor;
    auto& vel = velocity_[p.name];
    if (vel.empty()) vel.assign(t.numel(), 0.0);
    std::vector<double> g = t.grad();
    if (grad_scale != 1.0)
      for (double& x : g) x *= grad_scale;
    sgd_step(t.mutable_values(), g, vel, lr, opts_.momentum, opts_.weight_decay);
  }
}

// ---- checkpoints ----------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'L', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), 4);
  put(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    put(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put(out, static_cast<std::uint64_t>(d));
    for (double v : p.tensor.values()) put(out, v);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic)
    throw IoError("bad checkpoint magic: " + path.string());
  const auto count = get<std::uint32_t>(in);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = get<std::uint32_t>(in);
    a.name.resize(len);
    if (!in.read(a.name.data(), len)) throw IoError("truncated checkpoint");
    const auto rank = get<std::uint32_t>(in);
    for (std::uint32_t d = 0; d < rank; ++d)
      a.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
    a.values.resize(ad::numel(a.shape));
    for (double& v : a.values) v = get<double>(in);
    out.push_back(std::move(a));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  const auto arrays = read_checkpoint(path);
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (const auto& p : params.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape())
      throw IoError("shape mismatch for " + p.name + ": " + ad::shape_str(it->second->shape) +
                    " vs " + ad::shape_str(p.tensor.shape()));
    auto t = p.tensor;
    std::copy(it->second->values.begin(), it->second->values.end(), t.mutable_values().begin());
  }
}

}  // namespace rotinv
