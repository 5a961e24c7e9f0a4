#include "divinpaint/nn.hpp"

#include <cstring>

namespace dip {

template <typename S>
Var<S> ParamSet<S>::add(const std::string& name, Tensor<S> init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  Var<S> v(std::move(init), trainable_);
  index_[name] = entries_.size();
  entries_.push_back({name, v, false});
  return v;
}

template <typename S>
Var<S> ParamSet<S>::add_buffer(const std::string& name, Tensor<S> init) {
  if (index_.count(name)) throw std::logic_error("duplicate buffer " + name);
  Var<S> v(std::move(init), false);
  index_[name] = entries_.size();
  entries_.push_back({name, v, true});
  return v;
}

template <typename S>
std::vector<Var<S>> ParamSet<S>::trainable() const {
  std::vector<Var<S>> out;
  for (const auto& e : entries_)
    if (!e.buffer) out.push_back(e.var);
  return out;
}

template <typename S>
const typename ParamSet<S>::Entry* ParamSet<S>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename S>
void ParamSet<S>::set_trainable(bool on) {
  trainable_ = on;
  for (auto& e : entries_)
    if (!e.buffer) e.var.set_requires_grad(on);
}

template <typename S>
void ParamSet<S>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename S>
std::int64_t ParamSet<S>::numel() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

template <typename S>
std::uint64_t ParamSet<S>::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    mix(e.var.value().data(), sizeof(S) * static_cast<std::size_t>(e.var.value().size()));
  }
  return h;
}

template <typename S>
Linear<S>::Linear(ParamSet<S>& ps, const std::string& name, int in, int out, Rng& rng,
                  double init_std, bool with_bias, double bias_init, bool equalized) {
  weight = ps.add(name + ".weight", rng.normal_tensor<S>({out, in}, equalized ? 1.0 : init_std));
  if (equalized) gain = static_cast<S>(init_std);
  if (with_bias) bias = ps.add(name + ".bias", Tensor<S>({out}, static_cast<S>(bias_init)));
}

template <typename S>
Conv2d<S>::Conv2d(ParamSet<S>& ps, const std::string& name, int in, int out, int k, Rng& rng,
                  double init_std, bool with_bias, bool equalized) {
  weight = ps.add(name + ".weight", rng.normal_tensor<S>({out, in, k, k}, equalized ? 1.0 : init_std));
  if (equalized) gain = static_cast<S>(init_std);
  if (with_bias) bias = ps.add(name + ".bias", Tensor<S>::zeros({1, out, 1, 1}));
}

template <typename S>
ModulatedConv<S>::ModulatedConv(ParamSet<S>& ps, const std::string& name, int w_dim, int in,
                                int out, int k, Rng& rng, bool demod)
    : demodulate(demod) {
  affine = Linear<S>(ps, name + ".affine", w_dim, in, rng, he_std(w_dim, 1.0), true, 1.0, true);
  weight = ps.add(name + ".weight", rng.normal_tensor<S>({out, in, k, k}));
  gain = static_cast<S>(he_std(in * k * k, 1.0));
  bias = ps.add(name + ".bias", Tensor<S>::zeros({1, out, 1, 1}));
}

template <typename S>
Var<S> ModulatedConv<S>::operator()(const Var<S>& x, const Var<S>& style) const {
  const int n = x.dim(0), in = x.dim(1);
  const int out = weight.dim(0), k = weight.dim(2);
  Var<S> s = affine(style);
  const Var<S> w = scaled_weight(weight, gain);
  Var<S> y = conv2d(mul(x, reshape(s, {n, in, 1, 1})), w);
  if (demodulate) {
    Var<S> wsq = reshape(sum_axis(reshape(square(w), {out * in, k * k}), 1), {out, in});
    Var<S> d = rsqrt(linear(square(s), wsq, Var<S>()), S(1e-8));
    y = mul(y, reshape(d, {n, out, 1, 1}));
  }
  return add(y, bias);
}

template <typename S>
BatchNorm2d<S>::BatchNorm2d(ParamSet<S>& ps, const std::string& name, int channels) {
  gamma = ps.add(name + ".gamma", Tensor<S>::ones({channels}));
  beta = ps.add(name + ".beta", Tensor<S>::zeros({channels}));
  running_mean = ps.add_buffer(name + ".running_mean", Tensor<S>::zeros({channels}));
  running_var = ps.add_buffer(name + ".running_var", Tensor<S>::ones({channels}));
}

template <typename S>
Adam<S>::Adam(std::vector<Var<S>> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.push_back(Tensor<S>::Array::Zero(p.value().size()));
    v_.push_back(Tensor<S>::Array::Zero(p.value().size()));
  }
}

template <typename S>
double Adam<S>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const S b1 = static_cast<S>(opt_.beta1), b2 = static_cast<S>(opt_.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);
  double sq = 0.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.node()->grad.array();
    sq += static_cast<double>(g.square().sum());
    m_[i] = b1 * m_[i] + (S(1) - b1) * g;
    v_[i] = b2 * v_[i] + (S(1) - b2) * g.square();
    p.mutable_value().array() -= step_size * m_[i] / ((v_[i] * inv_bc2).sqrt() + static_cast<S>(opt_.eps));
    p.zero_grad();
  }
  return std::sqrt(sq);
}

template <typename S>
void Adam<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class ParamSet<float>;
template class ParamSet<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ModulatedConv<float>;
template struct ModulatedConv<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace dip
