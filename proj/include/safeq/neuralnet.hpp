#pragma once

// Dense feedforward network (ReLU hidden layers, identity output) with
// backpropagation, Adam, a finite-difference gradient check and a versioned
// little-endian checkpoint format. Samples are stored as matrix columns.

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "safeq/types.hpp"

namespace safeq {

template <typename Scalar>
class Mlp {
 public:
  using MatrixType = Matrix<Scalar>;
  using VectorType = Vector<Scalar>;

  Mlp() = default;

  /// All parameters zero.
  explicit Mlp(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) {
    if (dims_.size() < 2) throw ConfigError("network needs at least an input and an output layer");
    for (int d : dims_) {
      if (d <= 0) throw ConfigError("layer dimensions must be positive");
    }
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weights_.push_back(MatrixType::Zero(dims_[l + 1], dims_[l]));
      biases_.push_back(VectorType::Zero(dims_[l + 1]));
    }
  }

  /// Glorot-uniform weights, zero biases.
  static Mlp glorot(std::vector<int> layer_dims, Rng& rng) {
    Mlp net(std::move(layer_dims));
    for (std::size_t l = 0; l < net.weights_.size(); ++l) {
      auto& w = net.weights_[l];
      const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      // Row-major fill order keeps the stream layout independent of storage order.
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(uniform(rng, -bound, bound));
      }
    }
    return net;
  }

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  bool empty() const { return dims_.empty(); }

  MatrixType& weight(std::size_t l) { return weights_[l]; }
  const MatrixType& weight(std::size_t l) const { return weights_[l]; }
  VectorType& bias(std::size_t l) { return biases_[l]; }
  const VectorType& bias(std::size_t l) const { return biases_[l]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    }
    return true;
  }

  VectorType forward(const Eigen::Ref<const VectorType>& x) const {
    check_input(x.size());
    VectorType h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      VectorType z = weights_[l] * h + biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(Scalar(0));
      h = std::move(z);
    }
    return h;
  }

  MatrixType forward_batch(const Eigen::Ref<const MatrixType>& inputs) const {
    check_input(inputs.rows());
    MatrixType h = inputs;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      MatrixType z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(Scalar(0));
      h = std::move(z);
    }
    return h;
  }

  bool same_shape(const Mlp& other) const { return dims_ == other.dims_; }

 private:
  void check_input(Eigen::Index n) const {
    if (dims_.empty() || n != dims_.front()) {
      throw ConfigError("input size " + std::to_string(n) + " does not match network input " +
                        std::to_string(dims_.empty() ? 0 : dims_.front()));
    }
  }

  std::vector<int> dims_;
  std::vector<MatrixType> weights_;
  std::vector<VectorType> biases_;
};

using Network = Mlp<double>;

/// Parameter-shaped container for gradients and optimizer moments.
template <typename Scalar>
struct MlpParams {
  std::vector<Matrix<Scalar>> w;
  std::vector<Vector<Scalar>> b;

  static MlpParams zeros_like(const Mlp<Scalar>& net) {
    MlpParams p;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      p.w.push_back(Matrix<Scalar>::Zero(net.weight(l).rows(), net.weight(l).cols()));
      p.b.push_back(Vector<Scalar>::Zero(net.bias(l).size()));
    }
    return p;
  }

  Scalar squared_norm() const {
    Scalar s(0);
    for (std::size_t l = 0; l < w.size(); ++l) s += w[l].squaredNorm() + b[l].squaredNorm();
    return s;
  }

  void scale(Scalar f) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] *= f;
      b[l] *= f;
    }
  }
};

// Non-deduced so that plain Eigen objects bind without naming Scalar.
template <typename Scalar>
using ConstMatrixRef = std::type_identity_t<Eigen::Ref<const Matrix<Scalar>>>;
template <typename Scalar>
using ConstVectorRef = std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>;

/// Outputs of the forward pass plus the gradient of a loss w.r.t. parameters.
/// `output_grad` is dL/d(output), one column per sample.
template <typename Scalar>
MlpParams<Scalar> backpropagate(const Mlp<Scalar>& net, const ConstMatrixRef<Scalar>& inputs,
                                const ConstMatrixRef<Scalar>& output_grad) {
  const std::size_t L = net.num_layers();
  std::vector<Matrix<Scalar>> act;  // act[l] is the input of layer l
  act.reserve(L);
  act.emplace_back(inputs);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix<Scalar> z = net.weight(l) * act.back();
    z.colwise() += net.bias(l);
    act.emplace_back(z.cwiseMax(Scalar(0)));
  }

  MlpParams<Scalar> grad = MlpParams<Scalar>::zeros_like(net);
  Matrix<Scalar> delta = output_grad;
  for (std::size_t k = L; k-- > 0;) {
    grad.w[k].noalias() = delta * act[k].transpose();
    grad.b[k] = delta.rowwise().sum();
    if (k == 0) break;
    Matrix<Scalar> back = net.weight(k).transpose() * delta;
    // ReLU derivative: the stored activation is positive exactly where the unit was active.
    delta = (act[k].array() > Scalar(0)).select(back, Scalar(0));
  }
  return grad;
}

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;  // <= 0 disables clipping
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  MlpParams<Scalar> m;
  MlpParams<Scalar> v;

  static AdamState create(const Mlp<Scalar>& net, AdamConfig cfg) {
    AdamState s;
    s.config = cfg;
    s.m = MlpParams<Scalar>::zeros_like(net);
    s.v = MlpParams<Scalar>::zeros_like(net);
    return s;
  }
};

template <typename Scalar>
void adam_update(Mlp<Scalar>& net, AdamState<Scalar>& opt, MlpParams<Scalar> grad) {
  const auto& c = opt.config;
  if (c.clip_norm > 0.0) {
    const double norm = std::sqrt(static_cast<double>(grad.squared_norm()));
    if (norm > c.clip_norm) grad.scale(static_cast<Scalar>(c.clip_norm / norm));
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);
  const auto step_size = static_cast<Scalar>(c.learning_rate / bc1);
  const auto eps = static_cast<Scalar>(c.epsilon);
  const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));

  auto apply = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    param.array() -= step_size * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    apply(net.weight(l), opt.m.w[l], opt.v.w[l], grad.w[l]);
    apply(net.bias(l), opt.m.b[l], opt.v.b[l], grad.b[l]);
  }
}

/// One Adam step on the mean squared error between targets and predictions,
/// where the prediction for sample i is the sum of the network outputs listed
/// in heads[i] (a single index for a flat action head). Returns the pre-step loss.
template <typename Scalar>
Scalar train_step_heads(Mlp<Scalar>& net, AdamState<Scalar>& opt, const ConstMatrixRef<Scalar>& inputs,
                        const std::vector<std::vector<int>>& heads, const ConstVectorRef<Scalar>& targets) {
  const Eigen::Index n = inputs.cols();
  if (n == 0) throw ConfigError("training batch is empty");
  if (static_cast<Eigen::Index>(heads.size()) != n || targets.size() != n) {
    throw ConfigError("batch inputs, heads and targets disagree in length");
  }
  const Matrix<Scalar> out = net.forward_batch(inputs);
  Matrix<Scalar> dout = Matrix<Scalar>::Zero(out.rows(), n);
  Scalar loss(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar q(0);
    for (int h : heads[i]) {
      if (h < 0 || h >= out.rows()) throw ConfigError("output index out of range");
      q += out(h, i);
    }
    const Scalar err = q - targets(i);
    loss += err * err;
    const Scalar d = Scalar(2) * err / static_cast<Scalar>(n);
    for (int h : heads[i]) dout(h, i) += d;
  }
  loss /= static_cast<Scalar>(n);
  if (!std::isfinite(static_cast<double>(loss))) {
    throw NumericalError("non-finite training loss (" + std::to_string(static_cast<double>(loss)) + ")");
  }
  adam_update(net, opt, backpropagate(net, inputs, dout));
  if (!net.all_finite()) throw NumericalError("non-finite network parameters after update");
  return loss;
}

template <typename Scalar>
Scalar train_step(Mlp<Scalar>& net, AdamState<Scalar>& opt, const ConstMatrixRef<Scalar>& inputs,
                  std::span<const int> actions, const ConstVectorRef<Scalar>& targets) {
  std::vector<std::vector<int>> heads;
  heads.reserve(actions.size());
  for (int a : actions) heads.push_back({a});
  return train_step_heads(net, opt, inputs, heads, targets);
}

/// Max relative error between backpropagated and central-difference gradients
/// of 0.5 * (Q(x)[action] - target)^2 over every parameter. The denominator is
/// floored at 1e-6 so parameters with vanishing gradients compare absolutely.
inline double finite_diff_check(const Network& net, const VectorXd& x, int action, double target, double h = 1e-4) {
  if (action < 0 || action >= net.output_size()) throw ConfigError("action index out of range");
  auto loss = [&](const Network& n) {
    const double q = n.forward(x)(action);
    return 0.5 * (q - target) * (q - target);
  };
  MatrixXd dout = MatrixXd::Zero(net.output_size(), 1);
  dout(action, 0) = net.forward(x)(action) - target;
  const MlpParams<double> analytic = backpropagate(net, x, dout);

  Network probe = net;
  double worst = 0.0;
  auto compare = [&](double& param, double a) {
    const double saved = param;
    param = saved + h;
    const double up = loss(probe);
    param = saved - h;
    const double down = loss(probe);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (std::size_t l = 0; l < probe.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < probe.weight(l).rows(); ++r) {
      for (Eigen::Index c = 0; c < probe.weight(l).cols(); ++c) compare(probe.weight(l)(r, c), analytic.w[l](r, c));
    }
    for (Eigen::Index r = 0; r < probe.bias(l).size(); ++r) compare(probe.bias(l)(r), analytic.b[l](r));
  }
  return worst;
}

/// Copies the online network into the target network.
template <typename Scalar>
void sync_target(const Mlp<Scalar>& net, Mlp<Scalar>& target) {
  if (!target.empty() && !target.same_shape(net)) throw ConfigError("target network shape mismatch");
  target = net;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "SAFEQNN1", u32 dim count, u32 dims, then per layer the
// row-major f64 weights followed by the f64 biases; all little-endian.

inline constexpr char kCheckpointMagic[] = "SAFEQNN";
inline constexpr char kCheckpointVersion = '1';

class UnsupportedVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos, const char* what) {
  if (in.size() - pos < sizeof(T)) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace detail

template <typename Scalar>
std::string serialize(const Mlp<Scalar>& net) {
  std::string out(kCheckpointMagic);
  out.push_back(kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_dims().size()));
  for (int d : net.layer_dims()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) detail::put_le<double>(out, static_cast<double>(w(r, c)));
    }
    for (Eigen::Index r = 0; r < net.bias(l).size(); ++r) {
      detail::put_le<double>(out, static_cast<double>(net.bias(l)(r)));
    }
  }
  return out;
}

template <typename Scalar = double>
Mlp<Scalar> deserialize(std::string_view bytes) {
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (bytes.size() < magic_len + 1) throw ParseError("truncated checkpoint header", bytes.size());
  if (bytes.substr(0, magic_len) != kCheckpointMagic) throw ParseError("bad checkpoint magic", 0);
  if (bytes[magic_len] != kCheckpointVersion) {
    throw UnsupportedVersionError(std::string("unsupported checkpoint version '") + bytes[magic_len] + "'",
                                  magic_len);
  }
  std::size_t pos = magic_len + 1;
  const auto count = detail::get_le<std::uint32_t>(bytes, pos, "layer count");
  if (count < 2 || count > 64) throw ParseError("implausible layer count " + std::to_string(count), pos - 4);
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto d = detail::get_le<std::uint32_t>(bytes, pos, "layer dimension");
    if (d == 0 || d > (1u << 24)) throw ParseError("implausible layer dimension " + std::to_string(d), pos - 4);
    dims.push_back(static_cast<int>(d));
  }
  Mlp<Scalar> net(dims);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(detail::get_le<double>(bytes, pos, "weights"));
    }
    for (Eigen::Index r = 0; r < net.bias(l).size(); ++r) {
      net.bias(l)(r) = static_cast<Scalar>(detail::get_le<double>(bytes, pos, "biases"));
    }
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes after checkpoint payload", pos);
  return net;
}

}  // namespace safeq
