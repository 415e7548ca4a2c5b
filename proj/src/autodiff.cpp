#include "rotinv/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "rotinv/errors.hpp"
#include "rotinv/kernels.hpp"

namespace rotinv::ad {

namespace {

std::atomic<std::uint64_t> next_id{1};

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisLayout {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout layout(const Shape& s, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

NodePtr new_node(const char* op, Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->id = next_id.fetch_add(1, std::memory_order_relaxed);
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

/// Build an op result; records the graph only when some parent needs a gradient.
Tensor result(const char* op, Shape shape, std::vector<double> value,
              std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  for (double v : value)
    if (!std::isfinite(v)) throw NumericError(op);
  auto n = new_node(op, std::move(shape), std::move(value));
  const bool rg = std::any_of(parents.begin(), parents.end(),
                              [](const NodePtr& p) { return p->requires_grad; });
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Tensor(n);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  if (!is_suffix(b.shape(), a.shape())) shape_error(op, a.shape(), b.shape());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  const std::size_t na = av.size(), nb = bv.size();
  std::vector<double> out(na);
  if (nb == na) {
    for (std::size_t i = 0; i < na; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < na; ++i) out[i] = f(av[i], bv[i % nb]);
  }
  return result(op, a.shape(), std::move(out), {a.node(), b.node()}, [da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.value.size(), m = pb.value.size();
    if (pa.requires_grad) {
      auto ga = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += self.grad[i] * da(pa.value[i], pb.value[i % m], self.value[i]);
    }
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        gb[i % m] += self.grad[i] * db(pa.value[i], pb.value[i % m], self.value[i]);
    }
  });
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return result(op, a.shape(), std::move(out), {a.node()}, [d](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      g[i] += self.grad[i] * d(p.value[i], self.value[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size())
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto n = new_node("leaf", std::move(shape), std::move(values));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::dim(std::ptrdiff_t axis) const { return shape()[norm_axis(axis, rank())]; }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw std::invalid_argument("at(): wrong index rank");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : index) {
    if (v >= shape()[i]) throw std::out_of_range("at(): index out of range");
    flat = flat * shape()[i] + v;
    ++i;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  if (!std::isfinite(loss.item())) throw NumericError("backward(loss)");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* x, Node* y) { return x->id > y->id; });

  loss.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order)
    if (n->backward && !n->grad.empty()) n->backward(*n);
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.dim(-1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  const std::size_t k = b.dim(0), n = b.dim(1), rows = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(rows * n, 0.0);
  kernels::gemm_nn(rows, k, n, a.values().data(), b.values().data(), out.data());
  return result("matmul", std::move(shape), std::move(out), {a.node(), b.node()},
                [rows, k, n](Node& self) {
                  Node& pa = *self.parents[0];
                  Node& pb = *self.parents[1];
                  if (pa.requires_grad)
                    kernels::gemm_nt(rows, n, k, self.grad.data(), pb.value.data(),
                                     pa.grad_buffer().data());
                  if (pb.requires_grad)
                    kernels::gemm_tn(rows, k, n, pa.value.data(), self.grad.data(),
                                     pb.grad_buffer().data());
                });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    shape_error("bmm", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i)
    kernels::serial::gemm_nn(m, k, n, a.values().data() + i * m * k,
                             b.values().data() + i * k * n, out.data() + i * m * n);
  return result("bmm", {batch, m, n}, std::move(out), {a.node(), b.node()},
                [batch, m, k, n](Node& self) {
                  Node& pa = *self.parents[0];
                  Node& pb = *self.parents[1];
                  for (std::size_t i = 0; i < batch; ++i) {
                    const double* g = self.grad.data() + i * m * n;
                    if (pa.requires_grad)
                      kernels::serial::gemm_nt(m, n, k, g, pb.value.data() + i * k * n,
                                               pa.grad_buffer().data() + i * m * k);
                    if (pb.requires_grad)
                      kernels::serial::gemm_tn(m, k, n, pa.value.data() + i * m * k, g,
                                               pb.grad_buffer().data() + i * k * n);
                  }
                });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---- shape manipulation ---------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape ref = parts[0].shape();
  ref[ax] = 0;
  Shape shape = ref;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) shape_error("concat", parts[0].shape(), p.shape());
    const std::size_t w = s[ax];
    s[ax] = 0;
    if (s != ref) shape_error("concat", parts[0].shape(), p.shape());
    widths.push_back(w);
    shape[ax] += w;
  }
  const AxisLayout l = layout(shape, ax);
  std::vector<double> out(numel(shape));
  std::vector<NodePtr> nodes;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].values();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < l.outer; ++o)
      std::copy_n(v.data() + o * w * l.inner, w * l.inner,
                  out.data() + (o * l.n + offset) * l.inner);
    offset += w;
    nodes.push_back(parts[pi].node());
  }
  return result("concat", std::move(shape), std::move(out), std::move(nodes),
                [l, widths](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                    Node& p = *self.parents[pi];
                    const std::size_t w = widths[pi];
                    if (p.requires_grad) {
                      auto g = p.grad_buffer();
                      for (std::size_t o = 0; o < l.outer; ++o)
                        for (std::size_t j = 0; j < w * l.inner; ++j)
                          g[o * w * l.inner + j] += self.grad[(o * l.n + off) * l.inner + j];
                    }
                    off += w;
                  }
                });
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = norm_axis(axis, a.rank());
  if (begin >= end || end > a.shape()[ax])
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for " + shape_str(a.shape()));
  const AxisLayout l = layout(a.shape(), ax);
  Shape shape = a.shape();
  const std::size_t w = end - begin;
  shape[ax] = w;
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < l.outer; ++o)
    std::copy_n(a.values().data() + (o * l.n + begin) * l.inner, w * l.inner,
                out.data() + o * w * l.inner);
  return result("slice", std::move(shape), std::move(out), {a.node()},
                [l, begin, w](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t o = 0; o < l.outer; ++o)
                    for (std::size_t j = 0; j < w * l.inner; ++j)
                      g[(o * l.n + begin) * l.inner + j] += self.grad[o * w * l.inner + j];
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return result("reshape", std::move(shape), a.node()->value, {a.node()}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a, std::ptrdiff_t axis0, std::ptrdiff_t axis1) {
  std::size_t x = norm_axis(axis0, a.rank()), y = norm_axis(axis1, a.rank());
  if (x == y) return reshape(a, a.shape());
  if (x > y) std::swap(x, y);
  const Shape& s = a.shape();
  std::size_t pre = 1, mid = 1, post = 1;
  for (std::size_t i = 0; i < x; ++i) pre *= s[i];
  for (std::size_t i = x + 1; i < y; ++i) mid *= s[i];
  for (std::size_t i = y + 1; i < s.size(); ++i) post *= s[i];
  const std::size_t nx = s[x], ny = s[y];
  // in [pre, nx, mid, ny, post] -> out [pre, ny, mid, nx, post]
  auto in_index = [=](std::size_t p, std::size_t i, std::size_t m, std::size_t j,
                      std::size_t q) { return (((p * nx + i) * mid + m) * ny + j) * post + q; };
  auto out_index = [=](std::size_t p, std::size_t j, std::size_t m, std::size_t i,
                       std::size_t q) { return (((p * ny + j) * mid + m) * nx + i) * post + q; };
  Shape shape = s;
  std::swap(shape[x], shape[y]);
  std::vector<double> out(a.numel());
  const auto& v = a.values();
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t j = 0; j < ny; ++j)
          for (std::size_t q = 0; q < post; ++q)
            out[out_index(p, j, m, i, q)] = v[in_index(p, i, m, j, q)];
  return result("transpose", std::move(shape), std::move(out), {a.node()},
                [=](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t p = 0; p < pre; ++p)
                    for (std::size_t i = 0; i < nx; ++i)
                      for (std::size_t m = 0; m < mid; ++m)
                        for (std::size_t j = 0; j < ny; ++j)
                          for (std::size_t q = 0; q < post; ++q)
                            g[in_index(p, i, m, j, q)] += self.grad[out_index(p, j, m, i, q)];
                });
}

Tensor expand(const Tensor& a, std::ptrdiff_t axis, std::size_t n) {
  const std::size_t ax = norm_axis(axis, a.rank());
  if (a.shape()[ax] != 1)
    throw std::invalid_argument("expand: axis must have extent 1, got " + shape_str(a.shape()));
  const AxisLayout l = layout(a.shape(), ax);
  Shape shape = a.shape();
  shape[ax] = n;
  std::vector<double> out(l.outer * n * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      std::copy_n(a.values().data() + o * l.inner, l.inner,
                  out.data() + (o * n + j) * l.inner);
  return result("expand", std::move(shape), std::move(out), {a.node()}, [l, n](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t q = 0; q < l.inner; ++q)
          g[o * l.inner + q] += self.grad[(o * n + j) * l.inner + q];
  });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return result("sum", {}, {s}, {a.node()}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (double& x : g) x += self.grad[0];
  });
}

Tensor sum(const Tensor& a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank());
  const AxisLayout l = layout(a.shape(), ax);
  Shape shape = a.shape();
  if (keepdim)
    shape[ax] = 1;
  else
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(l.outer * l.inner, 0.0);
  const auto& v = a.values();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t j = 0; j < l.n; ++j)
      for (std::size_t q = 0; q < l.inner; ++q)
        out[o * l.inner + q] += v[(o * l.n + j) * l.inner + q];
  return result("sum_axis", std::move(shape), std::move(out), {a.node()}, [l](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t j = 0; j < l.n; ++j)
        for (std::size_t q = 0; q < l.inner; ++q)
          g[(o * l.n + j) * l.inner + q] += self.grad[o * l.inner + q];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, std::ptrdiff_t axis, bool keepdim) {
  const double n = static_cast<double>(a.dim(axis));
  return scale(sum(a, axis, keepdim), 1.0 / n);
}

Tensor max(const Tensor& a, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank());
  const AxisLayout l = layout(a.shape(), ax);
  if (l.n == 0) throw std::invalid_argument("max over empty axis");
  Shape shape = a.shape();
  if (keepdim)
    shape[ax] = 1;
  else
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(l.outer * l.inner);
  std::vector<std::size_t> arg(l.outer * l.inner);
  const auto& v = a.values();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t q = 0; q < l.inner; ++q) {
      std::size_t best = 0;
      double bv = v[o * l.n * l.inner + q];
      for (std::size_t j = 1; j < l.n; ++j) {
        const double x = v[(o * l.n + j) * l.inner + q];
        if (x > bv) {
          bv = x;
          best = j;
        }
      }
      out[o * l.inner + q] = bv;
      arg[o * l.inner + q] = best;
    }
  return result("max", std::move(shape), std::move(out), {a.node()},
                [l, arg = std::move(arg)](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t o = 0; o < l.outer; ++o)
                    for (std::size_t q = 0; q < l.inner; ++q)
                      g[(o * l.n + arg[o * l.inner + q]) * l.inner + q] +=
                          self.grad[o * l.inner + q];
                });
}

// ---- normalizations -----------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const std::size_t c = a.dim(-1), rows = a.numel() / c;
  std::vector<double> out(a.numel());
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * c;
    double* y = out.data() + r * c;
    const double m = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) z += (y[i] = std::exp(x[i] - m));
    for (std::size_t i = 0; i < c; ++i) y[i] /= z;
  }
  return result("softmax", a.shape(), std::move(out), {a.node()}, [rows, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * c;
      const double* gy = self.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t i = 0; i < c; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < c; ++i) g[r * c + i] += y[i] * (gy[i] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t c = a.dim(-1), rows = a.numel() / c;
  std::vector<double> out(a.numel());
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * c;
    const double m = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) z += std::exp(x[i] - m);
    const double lz = m + std::log(z);
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = x[i] - lz;
  }
  return result("log_softmax", a.shape(), std::move(out), {a.node()}, [rows, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * c;
      const double* gy = self.grad.data() + r * c;
      double total = 0.0;
      for (std::size_t i = 0; i < c; ++i) total += gy[i];
      for (std::size_t i = 0; i < c; ++i) g[r * c + i] += gy[i] - std::exp(y[i]) * total;
    }
  });
}

Tensor normalize(const Tensor& a, std::ptrdiff_t axis, double eps) {
  const std::size_t ax = norm_axis(axis, a.rank());
  const AxisLayout l = layout(a.shape(), ax);
  std::vector<double> out(a.numel());
  std::vector<double> norms(l.outer * l.inner);
  const auto& v = a.values();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t q = 0; q < l.inner; ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double x = v[(o * l.n + j) * l.inner + q];
        s += x * x;
      }
      const double nrm = std::sqrt(s);
      norms[o * l.inner + q] = nrm;
      const double d = std::max(nrm, eps);
      for (std::size_t j = 0; j < l.n; ++j) {
        const std::size_t i = (o * l.n + j) * l.inner + q;
        out[i] = v[i] / d;
      }
    }
  return result("normalize", a.shape(), std::move(out), {a.node()},
                [l, eps, norms = std::move(norms)](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t o = 0; o < l.outer; ++o)
                    for (std::size_t q = 0; q < l.inner; ++q) {
                      const double nrm = norms[o * l.inner + q];
                      auto idx = [&](std::size_t j) { return (o * l.n + j) * l.inner + q; };
                      if (nrm > eps) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < l.n; ++j)
                          dot += self.value[idx(j)] * self.grad[idx(j)];
                        for (std::size_t j = 0; j < l.n; ++j)
                          g[idx(j)] += (self.grad[idx(j)] - self.value[idx(j)] * dot) / nrm;
                      } else {
                        for (std::size_t j = 0; j < l.n; ++j) g[idx(j)] += self.grad[idx(j)] / eps;
                      }
                    }
                });
}

// ---- indexing -------------------------------------------------------------

Tensor gather(const Tensor& a, std::span<const std::size_t> indices) {
  if (a.rank() < 1) throw std::invalid_argument("gather: scalar input");
  const std::size_t rows = a.dim(0), width = a.numel() / rows;
  for (std::size_t i : indices)
    if (i >= rows)
      throw std::invalid_argument("gather: index " + std::to_string(i) + " out of range " +
                                  std::to_string(rows));
  Shape shape = a.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(a.values().data() + indices[r] * width, width, out.data() + r * width);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return result("gather", std::move(shape), std::move(out), {a.node()},
                [width, idx = std::move(idx)](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t q = 0; q < width; ++q)
                      g[idx[r] * width + q] += self.grad[r * width + q];
                });
}

Tensor cross(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() < 1 || a.dim(-1) != 3)
    shape_error("cross", a.shape(), b.shape());
  const std::size_t count = a.numel() / 3;
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < count; ++i) {
    const double* p = x.data() + 3 * i;
    const double* q = y.data() + 3 * i;
    out[3 * i + 0] = p[1] * q[2] - p[2] * q[1];
    out[3 * i + 1] = p[2] * q[0] - p[0] * q[2];
    out[3 * i + 2] = p[0] * q[1] - p[1] * q[0];
  }
  return result("cross", a.shape(), std::move(out), {a.node(), b.node()}, [count](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < count; ++i) {
      const double* g = self.grad.data() + 3 * i;
      const double* p = pa.value.data() + 3 * i;
      const double* q = pb.value.data() + 3 * i;
      if (pa.requires_grad) {
        double* ga = pa.grad_buffer().data() + 3 * i;  // q x g
        ga[0] += q[1] * g[2] - q[2] * g[1];
        ga[1] += q[2] * g[0] - q[0] * g[2];
        ga[2] += q[0] * g[1] - q[1] * g[0];
      }
      if (pb.requires_grad) {
        double* gb = pb.grad_buffer().data() + 3 * i;  // g x p
        gb[0] += g[1] * p[2] - g[2] * p[1];
        gb[1] += g[2] * p[0] - g[0] * p[2];
        gb[2] += g[0] * p[1] - g[1] * p[0];
      }
    }
  });
}

Tensor where_rows(const std::vector<bool>& mask, const Tensor& fallback, const Tensor& a) {
  if (fallback.shape() != a.shape() || a.rank() < 1) shape_error("where_rows", fallback.shape(), a.shape());
  if (mask.size() != a.dim(0)) throw std::invalid_argument("where_rows: mask length mismatch");
  const std::size_t width = a.numel() / a.dim(0);
  std::vector<double> out(a.node()->value);
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) std::copy_n(fallback.values().data() + r * width, width, out.data() + r * width);
  return result("where_rows", a.shape(), std::move(out), {a.node()},
                [mask, width](Node& self) {
                  auto g = self.parents[0]->grad_buffer();
                  for (std::size_t r = 0; r < mask.size(); ++r)
                    if (!mask[r])
                      for (std::size_t q = 0; q < width; ++q)
                        g[r * width + q] += self.grad[r * width + q];
                });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw std::invalid_argument("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  const std::size_t c = logits.dim(1);
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
  const Tensor ls = log_softmax(logits);
  std::vector<std::size_t> flat;
  flat.reserve(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b)
    flat.push_back(b * c + static_cast<std::size_t>(labels[b]));
  const Tensor picked = gather(reshape(ls, {ls.numel(), 1}), flat);
  return neg(mean(picked));
}

}  // namespace rotinv::ad
