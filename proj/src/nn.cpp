#include "lgsid/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lgsid {
namespace {

constexpr char kMagic[8] = {'L', 'G', 'S', 'I', 'D', 'N', 'N', '1'};

Matrix activation_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity:
      return Matrix::Ones(z.rows(), z.cols());
    case Activation::relu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: {
      const Matrix t = z.array().tanh().matrix();
      return (1.0 - t.array().square()).matrix();
    }
    case Activation::sigmoid: {
      const Matrix s = apply_activation(Activation::sigmoid, z);
      return (s.array() * (1.0 - s.array())).matrix();
    }
  }
  return Matrix();
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("truncated network checkpoint");
  return v;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ValidationError("activation", "unknown activation '" + std::string(name) + "'");
}

Matrix apply_activation(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

DenseNet::DenseNet(const std::vector<int>& dims, const std::vector<Activation>& activations,
                   Rng& rng) {
  if (dims.size() < 2) throw ValidationError("dims", "need at least input and output sizes");
  if (activations.size() != dims.size() - 1)
    throw ValidationError("activations", "need one activation per layer");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    if (in < 1 || out < 1) throw ValidationError("dims", "layer sizes must be >= 1");
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = u(rng);
    layer.bias = Vector::Zero(out);
    layer.activation = activations[l];
    layer.grad_weight = Matrix::Zero(out, in);
    layer.grad_bias = Vector::Zero(out);
    layers_.push_back(std::move(layer));
  }
}

int DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
int DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::vector<DenseLayer>& DenseNet::mutable_layers() {
  if (frozen_) throw FrozenError("network is frozen");
  return layers_;
}

Matrix DenseNet::forward(const Matrix& x, Cache* cache) const {
  if (layers_.empty()) throw Error("forward on an empty network");
  if (x.cols() != input_dim())
    throw ValidationError("input", "expected dimension " + std::to_string(input_dim()) + ", got " +
                                       std::to_string(x.cols()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix h = x;
  for (const DenseLayer& layer : layers_) {
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    h = apply_activation(layer.activation, z);
  }
  return h;
}

Matrix DenseNet::backprop(const Cache& cache, const Matrix& upstream,
                          std::vector<DenseLayer>* accumulate) const {
  if (cache.empty() || cache.inputs.size() != layers_.size())
    throw Error("backward called without a matching forward cache");
  if (upstream.rows() != cache.pre.back().rows() || upstream.cols() != output_dim())
    throw ValidationError("upstream", "gradient shape does not match the cached forward pass");
  Matrix grad = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const DenseLayer& layer = layers_[l];
    const Matrix dz = (grad.array() * activation_derivative(layer.activation, cache.pre[l]).array())
                          .matrix();
    if (accumulate) {
      (*accumulate)[l].grad_weight.noalias() += dz.transpose() * cache.inputs[l];
      (*accumulate)[l].grad_bias += dz.colwise().sum().transpose();
    }
    grad = dz * layer.weight;
  }
  return grad;
}

Matrix DenseNet::backward(const Cache& cache, const Matrix& upstream) {
  if (frozen_) throw FrozenError("cannot accumulate gradients into a frozen network");
  return backprop(cache, upstream, &layers_);
}

Matrix DenseNet::input_gradient(const Cache& cache, const Matrix& upstream) const {
  return backprop(cache, upstream, nullptr);
}

void DenseNet::zero_grad() {
  for (DenseLayer& layer : layers_) {
    layer.grad_weight.setZero();
    layer.grad_bias.setZero();
  }
}

std::vector<ParamRef> DenseNet::parameters() {
  if (frozen_) throw FrozenError("cannot update a frozen network");
  std::vector<ParamRef> out;
  for (DenseLayer& layer : layers_) {
    out.push_back({layer.weight.data(), layer.grad_weight.data(),
                   static_cast<std::size_t>(layer.weight.size())});
    out.push_back({layer.bias.data(), layer.grad_bias.data(),
                   static_cast<std::size_t>(layer.bias.size())});
  }
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::uint64_t DenseNet::parameter_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const DenseLayer& layer : layers_) {
    mix(layer.weight.data(), layer.weight.size());
    mix(layer.bias.data(), layer.bias.size());
  }
  return h;
}

void DenseNet::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layers_.size()));
  for (const DenseLayer& layer : layers_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.in_dim()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.out_dim()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.activation));
  }
  for (const DenseLayer& layer : layers_) {
    out.write(reinterpret_cast<const char*>(layer.weight.data()),
              static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
  }
  if (!out) throw Error("failed to write network checkpoint");
}

void DenseNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  save(out);
}

DenseNet DenseNet::load(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("not a network checkpoint (bad magic)");
  const auto n = read_pod<std::uint32_t>(in);
  DenseNet net;
  for (std::uint32_t l = 0; l < n; ++l) {
    const auto in_dim = read_pod<std::uint32_t>(in);
    const auto out_dim = read_pod<std::uint32_t>(in);
    const auto act = read_pod<std::uint32_t>(in);
    if (act > static_cast<std::uint32_t>(Activation::sigmoid)) throw Error("bad activation tag");
    if (l > 0 && net.layers_.back().out_dim() != static_cast<int>(in_dim))
      throw Error("checkpoint layers have incompatible dimensions");
    DenseLayer layer;
    layer.weight.resize(out_dim, in_dim);
    layer.bias.resize(out_dim);
    layer.activation = static_cast<Activation>(act);
    layer.grad_weight = Matrix::Zero(out_dim, in_dim);
    layer.grad_bias = Vector::Zero(out_dim);
    net.layers_.push_back(std::move(layer));
  }
  for (DenseLayer& layer : net.layers_) {
    in.read(reinterpret_cast<char*>(layer.weight.data()),
            static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(layer.bias.data()),
            static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    if (!in) throw Error("truncated network checkpoint");
  }
  return net;
}

DenseNet DenseNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load(in);
}

void DenseNet::load_parameters(const std::filesystem::path& path) {
  if (frozen_) throw FrozenError("cannot load parameters into a frozen network");
  DenseNet other = load(path);
  if (other.layers_.size() != layers_.size())
    throw ValidationError("checkpoint", "layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& a = layers_[l];
    const DenseLayer& b = other.layers_[l];
    if (a.in_dim() != b.in_dim() || a.out_dim() != b.out_dim() || a.activation != b.activation)
      throw ValidationError("checkpoint", "shape mismatch at layer " + std::to_string(l));
  }
  layers_ = std::move(other.layers_);
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ValidationError("lr", "must be > 0");
  if (cfg_.weight_decay < 0.0) throw ValidationError("weight_decay", "must be >= 0");
  if (cfg_.decay_interval < 1) throw ValidationError("decay_interval", "must be >= 1");
}

double AdamW::current_lr() const {
  return cfg_.lr * std::pow(cfg_.decay_factor, static_cast<double>(steps_ / cfg_.decay_interval));
}

void AdamW::step(DenseNet& net) { step(net.parameters()); }

void AdamW::step(std::span<const ParamRef> params) {
  if (m_.empty()) {
    for (const ParamRef& p : params) {
      m_.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size)));
      v_.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size)));
    }
  }
  if (m_.size() != params.size()) throw Error("optimizer state does not match parameter list");
  const double lr = current_lr();
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    if (static_cast<std::size_t>(m_[k].size()) != p.size)
      throw Error("optimizer moment shape mismatch");
    Eigen::Map<Vector> value(p.value, static_cast<Eigen::Index>(p.size));
    Eigen::Map<Vector> grad(p.grad, static_cast<Eigen::Index>(p.size));
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * grad;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    value *= 1.0 - lr * cfg_.weight_decay;
    value.array() -= lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + cfg_.eps);
    grad.setZero();
  }
}

}  // namespace lgsid
