#include "divinpaint/autograd.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dip {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

using Eigen::Index;

template <typename S>
using Arr = typename Tensor<S>::Array;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Var<S> make_op(Tensor<S> value, std::initializer_list<const Var<S>*> parents,
               std::function<void(Node<S>&)> bw) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  bool any = false;
  for (const Var<S>* p : parents) any = any || (p->defined() && p->requires_grad());
  if (any) {
    n->requires_grad = true;
    for (const Var<S>* p : parents) n->parents.push_back(p->node());
    n->backward = std::move(bw);
  }
  return Var<S>(std::move(n));
}

template <typename S>
Var<S> make_op_v(Tensor<S> value, const std::vector<Var<S>>& parents,
                 std::function<void(Node<S>&)> bw) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(bw);
  }
  return Var<S>(std::move(n));
}

template <typename S>
bool wants(const Node<S>& self, std::size_t i) {
  return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

// ---- broadcasting ----------------------------------------------------------

struct BcastPlan {
  std::array<int, 4> out{1, 1, 1, 1};
  std::array<Index, 4> sa{0, 0, 0, 0};
  std::array<Index, 4> sb{0, 0, 0, 0};
  Shape out_shape;
};

std::array<int, 4> pad4(const Shape& s) {
  if (s.size() > 4) throw DimensionError("broadcast supports rank <= 4, got " + shape_str(s));
  std::array<int, 4> r{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) r[off + i] = s[i];
  return r;
}

std::array<Index, 4> strides_for(const std::array<int, 4>& d, const std::array<int, 4>& out) {
  std::array<Index, 4> st{};
  Index acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (d[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= d[i];
  }
  return st;
}

BcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BcastPlan p;
  const auto da = pad4(a);
  const auto db = pad4(b);
  for (int i = 0; i < 4; ++i) {
    if (da[i] == db[i] || db[i] == 1) {
      p.out[i] = da[i];
    } else if (da[i] == 1) {
      p.out[i] = db[i];
    } else {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  p.sa = strides_for(da, p.out);
  p.sb = strides_for(db, p.out);
  const std::size_t r = std::max(a.size(), b.size());
  p.out_shape.assign(p.out.begin() + (4 - r), p.out.end());
  return p;
}

template <class F>
void bcast_loop(const BcastPlan& p, F&& f) {
  Index io = 0;
  for (int i0 = 0; i0 < p.out[0]; ++i0)
    for (int i1 = 0; i1 < p.out[1]; ++i1)
      for (int i2 = 0; i2 < p.out[2]; ++i2) {
        const Index ba = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        const Index bb = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (int i3 = 0; i3 < p.out[3]; ++i3) f(io++, ba + i3 * p.sa[3], bb + i3 * p.sb[3]);
      }
}

template <typename S, class Fwd, class Ga, class Gb>
Var<S> binary_bcast(const Var<S>& a, const Var<S>& b, Fwd fwd, Ga ga_fn, Gb gb_fn) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<S> out(av.shape(), fwd(av.array(), bv.array()).eval());
    return make_op<S>(std::move(out), {&a, &b}, [ga_fn, gb_fn](Node<S>& self) {
      const auto& x = self.parents[0]->value.array();
      const auto& y = self.parents[1]->value.array();
      if (wants(self, 0)) self.parents[0]->accumulate(ga_fn(self.grad.array(), x, y).eval());
      if (wants(self, 1)) self.parents[1]->accumulate(gb_fn(self.grad.array(), x, y).eval());
    });
  }
  const BcastPlan plan = plan_broadcast(av.shape(), bv.shape());
  Tensor<S> out(plan.out_shape);
  const S* pa = av.data();
  const S* pb = bv.data();
  S* po = out.data();
  bcast_loop(plan, [&](Index io, Index ia, Index ib) { po[io] = fwd(pa[ia], pb[ib]); });
  return make_op<S>(std::move(out), {&a, &b}, [plan, ga_fn, gb_fn](Node<S>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    const S* g = self.grad.data();
    if (wants(self, 0)) {
      Arr<S> acc = Arr<S>::Zero(A.size());
      bcast_loop(plan, [&](Index io, Index ia, Index ib) { acc[ia] += S(ga_fn(g[io], A[ia], B[ib])); });
      self.parents[0]->accumulate(acc);
    }
    if (wants(self, 1)) {
      Arr<S> acc = Arr<S>::Zero(B.size());
      bcast_loop(plan, [&](Index io, Index ia, Index ib) { acc[ib] += S(gb_fn(g[io], A[ia], B[ib])); });
      self.parents[1]->accumulate(acc);
    }
  });
}

template <typename S, class Fwd, class Dfn>
Var<S> unary(const Var<S>& a, Fwd fwd, Dfn dfn) {
  Tensor<S> out(a.shape(), fwd(a.value().array()).eval());
  return make_op<S>(std::move(out), {&a}, [dfn](Node<S>& self) {
    self.parents[0]->accumulate(
        (self.grad.array() * dfn(self.parents[0]->value.array(), self.value.array())).eval());
  });
}

struct AxisSplit {
  Index outer = 1, dim = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis out of range for " + shape_str(s));
  }
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.dim = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_4d(const Shape& s, const char* what) {
  if (s.size() != 4) throw DimensionError(std::string(what) + " expects N,C,H,W, got " + shape_str(s));
}

}  // namespace

// ---- Node / Var ------------------------------------------------------------

template <typename S>
void Node<S>::accumulate(const typename Tensor<S>::Array& g) {
  if (grad.empty()) {
    grad = Tensor<S>(value.shape(), g);
  } else {
    grad.array() += g;
  }
}

template <typename S>
Var<S>::Var(Tensor<S> value, bool requires_grad) : node_(std::make_shared<Node<S>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename S>
Tensor<S> Var<S>::grad() const {
  if (node_->grad.empty()) return Tensor<S>::zeros(node_->value.shape());
  return node_->grad;
}

template <typename S>
void backward(const Var<S>& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward needs a single-element root, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Arr<S>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---- elementwise -----------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  return binary_bcast<S>(
      a, b, [](const auto& x, const auto& y) { return x + y; },
      [](const auto& g, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&) { return g; });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  return binary_bcast<S>(
      a, b, [](const auto& x, const auto& y) { return x - y; },
      [](const auto& g, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&) { return -g; });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  return binary_bcast<S>(
      a, b, [](const auto& x, const auto& y) { return x * y; },
      [](const auto& g, const auto&, const auto& y) { return g * y; },
      [](const auto& g, const auto& x, const auto&) { return g * x; });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), (a.value().array() * s).eval());
  return make_op<S>(std::move(out), {&a}, [s](Node<S>& self) {
    self.parents[0]->accumulate((self.grad.array() * s).eval());
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), (a.value().array() + s).eval());
  return make_op<S>(std::move(out), {&a},
                    [](Node<S>& self) { self.parents[0]->accumulate(self.grad.array()); });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return unary<S>(
      a, [](const auto& x) { return x.square(); },
      [](const auto& x, const auto&) { return S(2) * x; });
}

template <typename S>
Var<S> rsqrt(const Var<S>& a, S eps) {
  return unary<S>(
      a, [eps](const auto& x) { return (x + eps).rsqrt(); },
      [](const auto&, const auto& y) { return S(-0.5) * y.cube(); });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  return unary<S>(
      a, [slope](const auto& x) { return (x > S(0)).select(x, x * slope); },
      [slope](const auto& x, const auto&) {
        return (x > S(0)).select(Arr<S>::Ones(x.size()), Arr<S>::Constant(x.size(), slope));
      });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return unary<S>(
      a, [](const auto& x) { return x.tanh(); },
      [](const auto&, const auto& y) { return S(1) - y.square(); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return unary<S>(
      a,
      [](const auto& x) -> Arr<S> {
        // 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise.
        const Arr<S> e = (-x.abs()).exp();
        return (x >= S(0)).select(S(1) / (S(1) + e), e / (S(1) + e));
      },
      [](const auto&, const auto& y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> softplus(const Var<S>& a) {
  return unary<S>(
      a, [](const auto& x) { return x.max(S(0)) + (-x.abs()).exp().log1p(); },
      [](const auto& x, const auto&) -> Arr<S> {
        const Arr<S> e = (-x.abs()).exp();
        return (x >= S(0)).select(S(1) / (S(1) + e), e / (S(1) + e));
      });
}

template <typename S>
Var<S> prelu(const Var<S>& a, const Var<S>& alpha) {
  const auto& x = a.value();
  if (x.rank() < 2 || alpha.value().size() != x.dim(1)) {
    throw DimensionError("prelu: alpha must have one entry per channel");
  }
  const AxisSplit sp = split_axis(x.shape(), 1);
  Tensor<S> out(x.shape());
  for (Index o = 0; o < sp.outer; ++o)
    for (Index c = 0; c < sp.dim; ++c) {
      const S al = alpha.value()[c];
      const Index base = (o * sp.dim + c) * sp.inner;
      for (Index i = 0; i < sp.inner; ++i) {
        const S v = x[base + i];
        out[base + i] = v > S(0) ? v : al * v;
      }
    }
  return make_op<S>(std::move(out), {&a, &alpha}, [sp](Node<S>& self) {
    const auto& X = self.parents[0]->value;
    const auto& Al = self.parents[1]->value;
    const auto& G = self.grad;
    Arr<S> gx = Arr<S>::Zero(X.size());
    Arr<S> ga = Arr<S>::Zero(Al.size());
    for (Index o = 0; o < sp.outer; ++o)
      for (Index c = 0; c < sp.dim; ++c) {
        const Index base = (o * sp.dim + c) * sp.inner;
        for (Index i = 0; i < sp.inner; ++i) {
          const S v = X[base + i];
          if (v > S(0)) {
            gx[base + i] = G[base + i];
          } else {
            gx[base + i] = G[base + i] * Al[c];
            ga[c] += G[base + i] * v;
          }
        }
      }
    if (wants(self, 0)) self.parents[0]->accumulate(gx);
    if (wants(self, 1)) self.parents[1]->accumulate(ga);
  });
}

// ---- reductions & shape ----------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out(Shape{1}, a.value().array().sum());
  return make_op<S>(std::move(out), {&a}, [](Node<S>& self) {
    self.parents[0]->accumulate(Arr<S>::Constant(self.parents[0]->value.size(), self.grad[0]));
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const S n = static_cast<S>(a.value().size());
  Tensor<S> out(Shape{1}, a.value().array().mean());
  return make_op<S>(std::move(out), {&a}, [n](Node<S>& self) {
    self.parents[0]->accumulate(
        Arr<S>::Constant(self.parents[0]->value.size(), self.grad[0] / n));
  });
}

template <typename S>
Var<S> sum_axis(const Var<S>& a, int axis) {
  const Shape& s = a.shape();
  const AxisSplit sp = split_axis(s, axis);
  if (axis < 0) axis += static_cast<int>(s.size());
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor<S> out(os);
  const auto& x = a.value();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index d = 0; d < sp.dim; ++d)
      out.array().segment(o * sp.inner, sp.inner) +=
          x.array().segment((o * sp.dim + d) * sp.inner, sp.inner);
  return make_op<S>(std::move(out), {&a}, [sp](Node<S>& self) {
    Arr<S> g(sp.outer * sp.dim * sp.inner);
    for (Index o = 0; o < sp.outer; ++o)
      for (Index d = 0; d < sp.dim; ++d)
        g.segment((o * sp.dim + d) * sp.inner, sp.inner) =
            self.grad.array().segment(o * sp.inner, sp.inner);
    self.parents[0]->accumulate(g);
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape s) {
  Tensor<S> out = a.value().reshaped(std::move(s));
  return make_op<S>(std::move(out), {&a},
                    [](Node<S>& self) { self.parents[0]->accumulate(self.grad.array()); });
}

template <typename S>
Var<S> expand(const Var<S>& a, Shape s) {
  const BcastPlan plan = plan_broadcast(s, a.shape());
  if (plan.out_shape != s) {
    throw DimensionError("expand: " + shape_str(a.shape()) + " does not broadcast to " + shape_str(s));
  }
  Tensor<S> out(s);
  const S* pa = a.value().data();
  S* po = out.data();
  bcast_loop(plan, [&](Index io, Index, Index ib) { po[io] = pa[ib]; });
  return make_op<S>(std::move(out), {&a}, [plan](Node<S>& self) {
    Arr<S> acc = Arr<S>::Zero(self.parents[0]->value.size());
    const S* g = self.grad.data();
    bcast_loop(plan, [&](Index io, Index, Index ib) { acc[ib] += g[io]; });
    self.parents[0]->accumulate(acc);
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  Shape s = parts.front().shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  int total = 0;
  std::vector<int> dims;
  for (const auto& p : parts) {
    Shape q = p.shape();
    if (q.size() != s.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && q[i] != s[i])
        throw DimensionError("concat: " + shape_str(q) + " vs " + shape_str(s));
    dims.push_back(q[axis]);
    total += q[axis];
  }
  s[axis] = total;
  const AxisSplit sp = split_axis(s, axis);
  Tensor<S> out(s);
  Index off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const Index chunk = dims[k] * sp.inner;
    for (Index o = 0; o < sp.outer; ++o)
      out.array().segment(o * sp.dim * sp.inner + off, chunk) = v.array().segment(o * chunk, chunk);
    off += chunk;
  }
  return make_op_v<S>(std::move(out), parts, [sp, dims](Node<S>& self) {
    Index off = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const Index chunk = dims[k] * sp.inner;
      if (wants(self, k)) {
        Arr<S> g(sp.outer * chunk);
        for (Index o = 0; o < sp.outer; ++o)
          g.segment(o * chunk, chunk) = self.grad.array().segment(o * sp.dim * sp.inner + off, chunk);
        self.parents[k]->accumulate(g);
      }
      off += chunk;
    }
  });
}

template <typename S>
Var<S> slice(const Var<S>& a, int axis, int begin, int end) {
  Shape s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  const AxisSplit sp = split_axis(s, axis);
  if (begin < 0 || end > sp.dim || begin >= end) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(s));
  }
  s[axis] = end - begin;
  const Index chunk = (end - begin) * sp.inner;
  const Index off = begin * sp.inner;
  Tensor<S> out(s);
  for (Index o = 0; o < sp.outer; ++o)
    out.array().segment(o * chunk, chunk) =
        a.value().array().segment(o * sp.dim * sp.inner + off, chunk);
  return make_op<S>(std::move(out), {&a}, [sp, chunk, off](Node<S>& self) {
    Arr<S> g = Arr<S>::Zero(sp.outer * sp.dim * sp.inner);
    for (Index o = 0; o < sp.outer; ++o)
      g.segment(o * sp.dim * sp.inner + off, chunk) = self.grad.array().segment(o * chunk, chunk);
    self.parents[0]->accumulate(g);
  });
}

// ---- linear algebra ----------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const int n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor<S> out(Shape{n, m});
  Eigen::Map<RowMat<S>>(out.data(), n, m).noalias() =
      Eigen::Map<const RowMat<S>>(A.data(), n, k) * Eigen::Map<const RowMat<S>>(B.data(), k, m);
  return make_op<S>(std::move(out), {&a, &b}, [n, k, m](Node<S>& self) {
    Eigen::Map<const RowMat<S>> G(self.grad.data(), n, m);
    if (wants(self, 0)) {
      Arr<S> ga(n * k);
      Eigen::Map<RowMat<S>>(ga.data(), n, k).noalias() =
          G * Eigen::Map<const RowMat<S>>(self.parents[1]->value.data(), k, m).transpose();
      self.parents[0]->accumulate(ga);
    }
    if (wants(self, 1)) {
      Arr<S> gb(k * m);
      Eigen::Map<RowMat<S>>(gb.data(), k, m).noalias() =
          Eigen::Map<const RowMat<S>>(self.parents[0]->value.data(), n, k).transpose() * G;
      self.parents[1]->accumulate(gb);
    }
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const auto& X = x.value();
  const auto& W = weight.value();
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1)) {
    throw DimensionError("linear: input " + shape_str(X.shape()) + " vs weight " +
                         shape_str(W.shape()));
  }
  const int n = X.dim(0), in = X.dim(1), outd = W.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != outd) throw DimensionError("linear: bias size");
  Tensor<S> out(Shape{n, outd});
  Eigen::Map<RowMat<S>> Y(out.data(), n, outd);
  Y.noalias() = Eigen::Map<const RowMat<S>>(X.data(), n, in) *
                Eigen::Map<const RowMat<S>>(W.data(), outd, in).transpose();
  if (has_bias) {
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data(), outd);
  }
  auto bw = [n, in, outd, has_bias](Node<S>& self) {
    Eigen::Map<const RowMat<S>> G(self.grad.data(), n, outd);
    if (wants(self, 0)) {
      Arr<S> gx(n * in);
      Eigen::Map<RowMat<S>>(gx.data(), n, in).noalias() =
          G * Eigen::Map<const RowMat<S>>(self.parents[1]->value.data(), outd, in);
      self.parents[0]->accumulate(gx);
    }
    if (wants(self, 1)) {
      Arr<S> gw(outd * in);
      Eigen::Map<RowMat<S>>(gw.data(), outd, in).noalias() =
          G.transpose() * Eigen::Map<const RowMat<S>>(self.parents[0]->value.data(), n, in);
      self.parents[1]->accumulate(gw);
    }
    if (has_bias && wants(self, 2)) {
      Arr<S> gb = G.colwise().sum().transpose().array();
      self.parents[2]->accumulate(gb);
    }
  };
  if (has_bias) return make_op<S>(std::move(out), {&x, &weight, &bias}, bw);
  return make_op<S>(std::move(out), {&x, &weight}, bw);
}

// ---- convolution & resampling ------------------------------------------------

namespace {

// cols is (C*k*k) x (N*H*W), row-major.
template <typename S>
void im2col(const Tensor<S>& x, int k, RowMat<S>& cols) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), p = k / 2;
  const Index HW = static_cast<Index>(H) * W;
  cols.resize(static_cast<Index>(C) * k * k, N * HW);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols.row((c * k + ky) * k + kx).data();
        for (int n = 0; n < N; ++n) {
          const S* src = x.data() + (static_cast<Index>(n) * C + c) * HW;
          S* dst = row + n * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - p;
            if (sy < 0 || sy >= H) {
              std::fill(dst + y * W, dst + (y + 1) * W, S(0));
              continue;
            }
            const int x0 = std::max(0, p - kx), x1 = std::min(W, W + p - kx);
            S* d = dst + y * W;
            std::fill(d, d + x0, S(0));
            std::copy(src + sy * W + x0 + kx - p, src + sy * W + x1 + kx - p, d + x0);
            std::fill(d + x1, d + W, S(0));
          }
        }
      }
}

template <typename S>
void col2im(const RowMat<S>& cols, int N, int C, int H, int W, int k, Arr<S>& gx) {
  const int p = k / 2;
  const Index HW = static_cast<Index>(H) * W;
  gx = Arr<S>::Zero(static_cast<Index>(N) * C * HW);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols.row((c * k + ky) * k + kx).data();
        for (int n = 0; n < N; ++n) {
          S* dst = gx.data() + (static_cast<Index>(n) * C + c) * HW;
          const S* src = row + n * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - p;
            if (sy < 0 || sy >= H) continue;
            const int x0 = std::max(0, p - kx), x1 = std::min(W, W + p - kx);
            S* d = dst + sy * W + kx - p;
            const S* s = src + y * W;
            for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
          }
        }
      }
}

// [N,O,HW] <-> [O, N*HW]
template <typename S>
void nchw_to_cn(const S* src, int N, int C, Index HW, S* dst) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy(src + (static_cast<Index>(n) * C + c) * HW, src + (static_cast<Index>(n) * C + c + 1) * HW,
                dst + (static_cast<Index>(c) * N + n) * HW);
}

template <typename S>
void cn_to_nchw(const S* src, int N, int C, Index HW, S* dst) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy(src + (static_cast<Index>(c) * N + n) * HW, src + (static_cast<Index>(c) * N + n + 1) * HW,
                dst + (static_cast<Index>(n) * C + c) * HW);
}

}  // namespace

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight) {
  const auto& X = x.value();
  const auto& Wt = weight.value();
  require_4d(X.shape(), "conv2d input");
  require_4d(Wt.shape(), "conv2d weight");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int O = Wt.dim(0), k = Wt.dim(2);
  if (Wt.dim(1) != C || Wt.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: weight " + shape_str(Wt.shape()) + " vs input " +
                         shape_str(X.shape()));
  }
  const Index HW = static_cast<Index>(H) * W;
  const Index K = static_cast<Index>(C) * k * k;
  auto cols = std::make_shared<RowMat<S>>();
  if (k == 1) {
    cols->resize(C, N * HW);
    nchw_to_cn(X.data(), N, C, HW, cols->data());
  } else {
    im2col(X, k, *cols);
  }
  RowMat<S> Y(O, N * HW);
  Y.noalias() = Eigen::Map<const RowMat<S>>(Wt.data(), O, K) * (*cols);
  Tensor<S> out(Shape{N, O, H, W});
  cn_to_nchw(Y.data(), N, O, HW, out.data());
  return make_op<S>(std::move(out), {&x, &weight}, [=](Node<S>& self) {
    RowMat<S> G(O, N * HW);
    nchw_to_cn(self.grad.data(), N, O, HW, G.data());
    if (wants(self, 1)) {
      Arr<S> gw(O * K);
      Eigen::Map<RowMat<S>>(gw.data(), O, K).noalias() = G * cols->transpose();
      self.parents[1]->accumulate(gw);
    }
    if (wants(self, 0)) {
      RowMat<S> gcols(K, N * HW);
      gcols.noalias() = Eigen::Map<const RowMat<S>>(self.parents[1]->value.data(), O, K).transpose() * G;
      Arr<S> gx;
      if (k == 1) {
        gx.resize(static_cast<Index>(N) * C * HW);
        cn_to_nchw(gcols.data(), N, C, HW, gx.data());
      } else {
        col2im(gcols, N, C, H, W, k, gx);
      }
      self.parents[0]->accumulate(gx);
    }
  });
}

template <typename S>
Var<S> upsample2x(const Var<S>& x) {
  const auto& X = x.value();
  require_4d(X.shape(), "upsample2x");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  Tensor<S> out(Shape{N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) out.at(n, c, y, xx) = X.at(n, c, y / 2, xx / 2);
  return make_op<S>(std::move(out), {&x}, [N, C, H, W](Node<S>& self) {
    Tensor<S> g(Shape{N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
          for (int xx = 0; xx < 2 * W; ++xx) g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
    self.parents[0]->accumulate(g.array());
  });
}

template <typename S>
Var<S> avgpool2x(const Var<S>& x) {
  const auto& X = x.value();
  require_4d(X.shape(), "avgpool2x");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2) / 2, W = X.dim(3) / 2;
  if (X.dim(2) % 2 || X.dim(3) % 2) throw DimensionError("avgpool2x needs even spatial size");
  Tensor<S> out(Shape{N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at(n, c, y, xx) = S(0.25) * (X.at(n, c, 2 * y, 2 * xx) + X.at(n, c, 2 * y + 1, 2 * xx) +
                                           X.at(n, c, 2 * y, 2 * xx + 1) + X.at(n, c, 2 * y + 1, 2 * xx + 1));
  return make_op<S>(std::move(out), {&x}, [N, C, H, W](Node<S>& self) {
    Tensor<S> g(Shape{N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
          for (int xx = 0; xx < 2 * W; ++xx) g.at(n, c, y, xx) = S(0.25) * self.grad.at(n, c, y / 2, xx / 2);
    self.parents[0]->accumulate(g.array());
  });
}

template <typename S>
Var<S> maxpool2x(const Var<S>& x) {
  const auto& X = x.value();
  require_4d(X.shape(), "maxpool2x");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2) / 2, W = X.dim(3) / 2;
  if (X.dim(2) % 2 || X.dim(3) % 2) throw DimensionError("maxpool2x needs even spatial size");
  Tensor<S> out(Shape{N, C, H, W});
  std::vector<Index> arg(static_cast<std::size_t>(out.size()));
  Index o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx, ++o) {
          Index best = ((static_cast<Index>(n) * C + c) * X.dim(2) + 2 * y) * X.dim(3) + 2 * xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const Index idx = ((static_cast<Index>(n) * C + c) * X.dim(2) + 2 * y + dy) * X.dim(3) + 2 * xx + dx;
              if (X[idx] > X[best]) best = idx;
            }
          arg[o] = best;
          out[o] = X[best];
        }
  return make_op<S>(std::move(out), {&x}, [arg = std::move(arg)](Node<S>& self) {
    Arr<S> g = Arr<S>::Zero(self.parents[0]->value.size());
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[static_cast<Index>(i)];
    self.parents[0]->accumulate(g);
  });
}

template <typename S>
Var<S> batch_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Tensor<S>& running_mean,
                  Tensor<S>& running_var, bool training, S momentum, S eps) {
  const auto& X = x.value();
  require_4d(X.shape(), "batch_norm");
  const int N = X.dim(0), C = X.dim(1);
  const Index HW = static_cast<Index>(X.dim(2)) * X.dim(3);
  const Index M = N * HW;
  Arr<S> mu(C), var(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      S s = 0, s2 = 0;
      for (int n = 0; n < N; ++n) {
        const auto seg = X.array().segment((static_cast<Index>(n) * C + c) * HW, HW);
        s += seg.sum();
        s2 += seg.square().sum();
      }
      mu[c] = s / static_cast<S>(M);
      var[c] = std::max(S(0), s2 / static_cast<S>(M) - mu[c] * mu[c]);
    }
    const S unbias = M > 1 ? static_cast<S>(M) / static_cast<S>(M - 1) : S(1);
    running_mean.array() = (S(1) - momentum) * running_mean.array() + momentum * mu;
    running_var.array() = (S(1) - momentum) * running_var.array() + momentum * var * unbias;
  } else {
    mu = running_mean.array();
    var = running_var.array();
  }
  const Arr<S> inv = (var + eps).rsqrt();
  Tensor<S> xhat(X.shape());
  Tensor<S> out(X.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Index base = (static_cast<Index>(n) * C + c) * HW;
      xhat.array().segment(base, HW) = (X.array().segment(base, HW) - mu[c]) * inv[c];
      out.array().segment(base, HW) = xhat.array().segment(base, HW) * gamma.value()[c] + beta.value()[c];
    }
  return make_op<S>(std::move(out), {&x, &gamma, &beta},
                    [xhat = std::move(xhat), inv, N, C, HW, M, training](Node<S>& self) {
    const auto& G = self.grad;
    const auto& gam = self.parents[1]->value;
    Arr<S> sg = Arr<S>::Zero(C), sgx = Arr<S>::Zero(C);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const Index base = (static_cast<Index>(n) * C + c) * HW;
        sg[c] += G.array().segment(base, HW).sum();
        sgx[c] += (G.array().segment(base, HW) * xhat.array().segment(base, HW)).sum();
      }
    if (wants(self, 1)) self.parents[1]->accumulate(sgx);
    if (wants(self, 2)) self.parents[2]->accumulate(sg);
    if (wants(self, 0)) {
      Arr<S> gx(G.size());
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const Index base = (static_cast<Index>(n) * C + c) * HW;
          const auto g = G.array().segment(base, HW);
          if (training) {
            gx.segment(base, HW) = gam[c] * inv[c] / static_cast<S>(M) *
                                   (static_cast<S>(M) * g - sg[c] - xhat.array().segment(base, HW) * sgx[c]);
          } else {
            gx.segment(base, HW) = g * gam[c] * inv[c];
          }
        }
      self.parents[0]->accumulate(gx);
    }
  });
}

#define DIP_INSTANTIATE(S)                                                                        \
  template struct Node<S>;                                                                        \
  template class Var<S>;                                                                          \
  template void backward<S>(const Var<S>&);                                                       \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> scale<S>(const Var<S>&, S);                                                     \
  template Var<S> add_scalar<S>(const Var<S>&, S);                                                \
  template Var<S> square<S>(const Var<S>&);                                                       \
  template Var<S> rsqrt<S>(const Var<S>&, S);                                                     \
  template Var<S> leaky_relu<S>(const Var<S>&, S);                                                \
  template Var<S> tanh<S>(const Var<S>&);                                                         \
  template Var<S> sigmoid<S>(const Var<S>&);                                                      \
  template Var<S> softplus<S>(const Var<S>&);                                                     \
  template Var<S> prelu<S>(const Var<S>&, const Var<S>&);                                         \
  template Var<S> sum<S>(const Var<S>&);                                                          \
  template Var<S> mean<S>(const Var<S>&);                                                         \
  template Var<S> sum_axis<S>(const Var<S>&, int);                                                \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                               \
  template Var<S> expand<S>(const Var<S>&, Shape);                                                \
  template Var<S> concat<S>(const std::vector<Var<S>>&, int);                                     \
  template Var<S> slice<S>(const Var<S>&, int, int, int);                                         \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&);                                        \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                         \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&);                                        \
  template Var<S> upsample2x<S>(const Var<S>&);                                                   \
  template Var<S> avgpool2x<S>(const Var<S>&);                                                    \
  template Var<S> maxpool2x<S>(const Var<S>&);                                                    \
  template Var<S> batch_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, Tensor<S>&,          \
                                Tensor<S>&, bool, S, S);

DIP_INSTANTIATE(float)
DIP_INSTANTIATE(double)

#undef DIP_INSTANTIATE

}  // namespace dip
