#include "monalab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "monalab/errors.hpp"

namespace monalab {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<double> pending;
  bool has_grad = false;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

namespace {
std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_enabled = true;
}  // namespace

}  // namespace detail

struct TensorAccess {
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }
};

namespace {

using detail::Node;

std::shared_ptr<Node> new_node(const Shape& shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(data);
  node->id = detail::next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) {
    throw Error(ErrorCode::InvalidArgument, "operation on an undefined tensor");
  }
  return *TensorAccess::node(t);
}

void check_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw Error(ErrorCode::InvalidShape, "zero extent in shape " + to_string(shape));
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  check_shape(shape);
  auto node = new_node(shape, std::vector<double>(monalab::numel(shape), value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (data.size() != monalab::numel(shape)) {
    throw Error(ErrorCode::InvalidShape, "data length " + std::to_string(data.size()) +
                                             " does not match shape " + to_string(shape));
  }
  auto node = new_node(shape, std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }
std::size_t Tensor::numel() const { return node_of(*this).data.size(); }
std::span<const double> Tensor::data() const { return node_of(*this).data; }

std::span<double> Tensor::mutable_data() {
  node_of(*this);
  return node_->data;
}

double Tensor::item() const {
  const auto& n = node_of(*this);
  if (n.data.size() != 1) {
    throw Error(ErrorCode::InvalidShape, "item() on tensor of shape " + to_string(n.shape));
  }
  return n.data[0];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  node_of(*this);
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return !node_of(*this).backward; }
bool Tensor::has_grad() const { return node_of(*this).has_grad; }

std::span<const double> Tensor::grad() const {
  const auto& n = node_of(*this);
  if (!n.has_grad) return {};
  return n.grad;
}

std::span<double> Tensor::mutable_grad() {
  node_of(*this);
  if (!node_->has_grad) {
    node_->grad.assign(node_->data.size(), 0.0);
    node_->has_grad = true;
  }
  return node_->grad;
}

void Tensor::set_grad(std::vector<double> values) {
  node_of(*this);
  if (values.size() != node_->data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient length does not match tensor");
  }
  node_->grad = std::move(values);
  node_->has_grad = true;
}

void Tensor::clear_grad() {
  node_of(*this);
  node_->grad.clear();
  node_->has_grad = false;
}

std::uint64_t Tensor::node_id() const { return node_of(*this).id; }

Tensor Tensor::detach() const {
  const auto& n = node_of(*this);
  return Tensor(new_node(n.shape, n.data));
}

void Tensor::backward() const { monalab::backward(*this); }

// ---- tape ----------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::grad_enabled = previous_; }
bool grad_mode_enabled() { return detail::grad_enabled; }

Tensor make_result(const Shape& shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto node = new_node(shape, std::move(data));
  if (!detail::grad_enabled) return TensorAccess::wrap(std::move(node));
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return node_of(t).requires_grad; });
  if (!needs_grad) return TensorAccess::wrap(std::move(node));
  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(TensorAccess::node(t));
  node->backward = std::move(backward);
  return TensorAccess::wrap(std::move(node));
}

void backward(const Tensor& loss) {
  const auto& root = TensorAccess::node(loss);
  if (!root) throw Error(ErrorCode::InvalidArgument, "backward on an undefined tensor");
  if (root->data.size() != 1) {
    throw Error(ErrorCode::NonScalarLoss, "loss has shape " + to_string(root->shape));
  }
  if (!root->requires_grad) {
    throw Error(ErrorCode::InvalidArgument, "loss is not on the tape (no input requires grad)");
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  root->pending.assign(1, 1.0);
  std::vector<double*> sinks;
  for (Node* n : order) {
    if (n->pending.empty()) n->pending.assign(n->data.size(), 0.0);
    if (!n->backward) continue;
    sinks.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->pending.empty()) in->pending.assign(in->data.size(), 0.0);
      sinks[i] = in->pending.data();
    }
    n->backward(n->pending, sinks);
  }

  for (Node* n : order) {
    if (n->has_grad) {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->pending[i];
    } else {
      n->grad = std::move(n->pending);
      n->has_grad = true;
    }
    n->pending.clear();
    n->pending.shrink_to_fit();
  }
}

// ---- elementwise ---------------------------------------------------------

namespace {

Shape strip_leading_ones(const Shape& shape) {
  std::size_t first = 0;
  while (first + 1 < shape.size() && shape[first] == 1) ++first;
  return Shape(shape.begin() + static_cast<std::ptrdiff_t>(first), shape.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool a_is_big = true;
  if (sa != sb) {
    if (numel(sa) >= numel(sb) && is_suffix(strip_leading_ones(sb), sa)) {
      a_is_big = true;
    } else if (is_suffix(strip_leading_ones(sa), sb)) {
      a_is_big = false;
    } else {
      throw Error(ErrorCode::ShapeMismatch,
                  "cannot broadcast " + to_string(sa) + " with " + to_string(sb));
    }
  }
  const Shape out_shape = a_is_big ? sa : sb;
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = da[i % na];
    const double y = db[i % nb];
    switch (kind) {
      case Binary::Add: out[i] = x + y; break;
      case Binary::Sub: out[i] = x - y; break;
      case Binary::Mul: out[i] = x * y; break;
    }
  }
  return make_result(
      out_shape, std::move(out), {a, b},
      [a, b, kind, n, na, nb](std::span<const double> g, std::span<double* const> grads) {
        auto da = a.data();
        auto db = b.data();
        if (double* ga = grads[0]) {
          for (std::size_t i = 0; i < n; ++i) {
            ga[i % na] += kind == Binary::Mul ? g[i] * db[i % nb] : g[i];
          }
        }
        if (double* gb = grads[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            switch (kind) {
              case Binary::Add: gb[i % nb] += g[i]; break;
              case Binary::Sub: gb[i % nb] -= g[i]; break;
              case Binary::Mul: gb[i % nb] += g[i] * da[i % na]; break;
            }
          }
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul); }
Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double factor) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
  return make_result(x.shape(), std::move(out), {x},
                     [factor](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * factor;
                     });
}

Tensor scalar_scale(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "scale factor must have one element, got " +
                                              to_string(s.shape()));
  }
  const double factor = s.item();
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * dx[i];
  return make_result(x.shape(), std::move(out), {x, s},
                     [x, s](std::span<const double> g, std::span<double* const> grads) {
                       const double factor = s.item();
                       auto dx = x.data();
                       if (double* gx = grads[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
                       }
                       if (double* gs = grads[1]) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * dx[i];
                         gs[0] += acc;
                       }
                     });
}

namespace {

Tensor combine(std::span<const Tensor> tensors, double weight, const char* what) {
  if (tensors.empty()) throw Error(ErrorCode::EmptyReduction, std::string(what) + " of no tensors");
  const Shape& shape = tensors[0].shape();
  for (const auto& t : tensors) {
    if (t.shape() != shape) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " of " + to_string(shape) +
                                                " and " + to_string(t.shape()));
    }
  }
  std::vector<double> out(numel(shape), 0.0);
  for (const auto& t : tensors) {
    auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  if (weight != 1.0) {
    for (double& v : out) v *= weight;
  }
  return make_result(shape, std::move(out), std::vector<Tensor>(tensors.begin(), tensors.end()),
                     [weight](std::span<const double> g, std::span<double* const> grads) {
                       for (double* gi : grads) {
                         if (!gi) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * weight;
                       }
                     });
}

}  // namespace

Tensor mean_of(std::span<const Tensor> tensors) {
  return combine(tensors, tensors.empty() ? 1.0 : 1.0 / static_cast<double>(tensors.size()),
                 "mean");
}
Tensor mean_of(std::initializer_list<Tensor> tensors) {
  return mean_of(std::span<const Tensor>(tensors.begin(), tensors.size()));
}
Tensor sum_of(std::span<const Tensor> tensors) { return combine(tensors, 1.0, "sum"); }
Tensor sum_of(std::initializer_list<Tensor> tensors) {
  return sum_of(std::span<const Tensor>(tensors.begin(), tensors.size()));
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const std::size_t n = x.numel();
  return make_result({1}, {acc}, {x},
                     [n](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < n; ++i) grads[0][i] += g[0];
                     });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw Error(ErrorCode::InvalidArgument, "mean over axis " + std::to_string(axis) +
                                                " of rank-" + std::to_string(shape.size()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t count = shape[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  const double w = 1.0 / static_cast<double>(count);
  auto dx = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < count; ++c) {
      const double* src = dx.data() + (o * count + c) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out) v *= w;
  return make_result(out_shape, std::move(out), {x},
                     [outer, inner, count, w](std::span<const double> g,
                                              std::span<double* const> grads) {
                       double* gx = grads[0];
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t c = 0; c < count; ++c) {
                           double* dst = gx + (o * count + c) * inner;
                           const double* src = g.data() + o * inner;
                           for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * w;
                         }
                       }
                     });
}

// ---- matrix products -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "matmul right operand must be rank 2, got " +
                                              to_string(sb));
  }
  const std::size_t q = sa.back();
  if (q != sb[0]) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul inner extents differ: " + to_string(sa) + " x " + to_string(sb));
  }
  const std::size_t r = sb[1];
  const std::size_t rows = a.numel() / q;
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(r);

  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(rows * r, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double* o = out.data() + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = da[i * q + k];
      const double* brow = db.data() + k * r;
      for (std::size_t j = 0; j < r; ++j) o[j] += av * brow[j];
    }
  }
  return make_result(
      out_shape, std::move(out), {a, b},
      [a, b, rows, q, r](std::span<const double> g, std::span<double* const> grads) {
        auto da = a.data();
        auto db = b.data();
        if (double* ga = grads[0]) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t k = 0; k < q; ++k) {
              double acc = 0.0;
              for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * db[k * r + j];
              ga[i * q + k] += acc;
            }
          }
        }
        if (double* gb = grads[1]) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t k = 0; k < q; ++k) {
              const double av = da[i * q + k];
              for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += av * g[i * r + j];
            }
          }
        }
      });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) {
    throw Error(ErrorCode::ShapeMismatch, "bmm expects [B,p,q] operands, got " + to_string(sa) +
                                              " and " + to_string(sb));
  }
  const std::size_t batch = sa[0], p = sa[1], q = sa[2];
  const std::size_t r = transpose_b ? sb[1] : sb[2];
  const std::size_t bq = transpose_b ? sb[2] : sb[1];
  if (bq != q) {
    throw Error(ErrorCode::ShapeMismatch,
                "bmm inner extents differ: " + to_string(sa) + " x " + to_string(sb));
  }
  // Element (k, j) of the logical right operand.
  auto b_index = [transpose_b, q, r](std::size_t k, std::size_t j) {
    return transpose_b ? j * q + k : k * r + j;
  };
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(batch * p * r, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* an = da.data() + n * p * q;
    const double* bn = db.data() + n * q * r;
    double* on = out.data() + n * p * r;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < q; ++k) acc += an[i * q + k] * bn[b_index(k, j)];
        on[i * r + j] = acc;
      }
    }
  }
  return make_result(
      {batch, p, r}, std::move(out), {a, b},
      [a, b, batch, p, q, r, b_index](std::span<const double> g, std::span<double* const> grads) {
        auto da = a.data();
        auto db = b.data();
        for (std::size_t n = 0; n < batch; ++n) {
          const double* an = da.data() + n * p * q;
          const double* bn = db.data() + n * q * r;
          const double* gn = g.data() + n * p * r;
          if (double* ga = grads[0]) {
            double* gan = ga + n * p * q;
            for (std::size_t i = 0; i < p; ++i) {
              for (std::size_t k = 0; k < q; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < r; ++j) acc += gn[i * r + j] * bn[b_index(k, j)];
                gan[i * q + k] += acc;
              }
            }
          }
          if (double* gb = grads[1]) {
            double* gbn = gb + n * q * r;
            for (std::size_t k = 0; k < q; ++k) {
              for (std::size_t j = 0; j < r; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < p; ++i) acc += an[i * q + k] * gn[i * r + j];
                gbn[b_index(k, j)] += acc;
              }
            }
          }
        }
      });
}

// ---- layout --------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_shape(shape);
  if (numel(shape) != x.numel()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto dx = x.data();
  return make_result(shape, std::vector<double>(dx.begin(), dx.end()), {x},
                     [](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                     });
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> indices,
              const Shape& out_shape) {
  check_shape(out_shape);
  if (!indices || indices->size() != numel(out_shape)) {
    throw Error(ErrorCode::ShapeMismatch, "gather index count does not match " +
                                              to_string(out_shape));
  }
  auto dx = x.data();
  std::vector<double> out(indices->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t src = (*indices)[i];
    if (src >= dx.size()) throw Error(ErrorCode::InvalidArgument, "gather index out of range");
    out[i] = dx[src];
  }
  return make_result(out_shape, std::move(out), {x},
                     [indices](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][(*indices)[i]] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& shape = x.shape();
  const std::size_t rank = shape.size();
  std::vector<bool> used(rank, false);
  if (axes.size() != rank) throw Error(ErrorCode::InvalidArgument, "permutation rank mismatch");
  for (std::size_t a : axes) {
    if (a >= rank || used[a]) throw Error(ErrorCode::InvalidArgument, "invalid permutation");
    used[a] = true;
  }
  std::vector<std::size_t> strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = shape[axes[i]];

  auto indices = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < indices->size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * strides[axes[i]];
    (*indices)[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(indices), out_shape);
}

Tensor softmax_last(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* in = dx.data() + i * cols;
    double* o = out.data() + i * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x},
                     [y, rows, cols](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < rows; ++i) {
                         const double* yi = y->data() + i * cols;
                         const double* gi = g.data() + i * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
                         for (std::size_t j = 0; j < cols; ++j) {
                           grads[0][i * cols + j] += yi[j] * (gi[j] - dot);
                         }
                       }
                     });
}

// ---- gradient checking ---------------------------------------------------

GradReport grad_check(const std::function<Tensor(std::span<const Tensor>)>& fn,
                      std::vector<Tensor> inputs, double eps, double tol) {
  for (auto& t : inputs) {
    t.clear_grad();
    t.set_requires_grad(true);
  }
  {
    Tensor loss = fn(inputs);
    backward(loss);
  }

  auto evaluate = [&]() {
    NoGradGuard guard;
    return fn(inputs).item();
  };
  auto central = [&](std::span<double> data, std::size_t i, double step) {
    const double saved = data[i];
    data[i] = saved + step;
    const double plus = evaluate();
    data[i] = saved - step;
    const double minus = evaluate();
    data[i] = saved;
    return (plus - minus) / (2.0 * step);
  };
  auto rel_error = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
  };

  GradReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].mutable_data();
    auto grad = inputs[t].grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double numeric = central(data, i, eps);
      const double err = rel_error(analytic, numeric);
      if (err > tol) {
        const double refined = central(data, i, eps * 0.5);
        if (rel_error(numeric, refined) > tol) {
          ++report.skipped_unstable;
          continue;
        }
      }
      ++report.checked;
      if (report.checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = t;
        report.worst_element = i;
        report.worst_autodiff = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

namespace testing {

Tensor corrupt_gradient(const Tensor& x, double factor) {
  auto dx = x.data();
  return make_result(x.shape(), std::vector<double>(dx.begin(), dx.end()), {x},
                     [factor](std::span<const double> g, std::span<double* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * factor;
                     });
}

}  // namespace testing

}  // namespace monalab
