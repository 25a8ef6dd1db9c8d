#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambapupil/checkpoint.hpp"
#include "mambapupil/layers.hpp"
#include "mambapupil/ops.hpp"
#include "mambapupil/tensor.hpp"

// Conv encoder -> (bi)GRU -> input-conditioned state space module -> linear head.
namespace mambapupil {

/// Structural variants of the recurrent stage.
enum class Variant { full, uni_gru, no_ssm, uni_gru_no_ssm };

inline Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "uni_gru") return Variant::uni_gru;
  if (name == "no_ssm") return Variant::no_ssm;
  if (name == "uni_gru_no_ssm") return Variant::uni_gru_no_ssm;
  throw std::invalid_argument("unknown model variant: " + name);
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::uni_gru: return "uni_gru";
    case Variant::no_ssm: return "no_ssm";
    case Variant::uni_gru_no_ssm: return "uni_gru_no_ssm";
  }
  return "full";
}

/// How the last conv feature map is reduced to a vector.
///   average          : per-channel spatial mean, F = C
///   average_centroid : spatial mean plus the activation-weighted mean x and
///                      y coordinate of each channel, F = 3C
enum class Pooling { average, average_centroid };

inline Pooling parse_pooling(const std::string& name) {
  if (name == "average") return Pooling::average;
  if (name == "average_centroid") return Pooling::average_centroid;
  throw std::invalid_argument("unknown pooling: " + name);
}

inline std::string to_string(Pooling p) {
  return p == Pooling::average ? "average" : "average_centroid";
}

struct ModelConfig {
  int in_channels = 2;
  std::array<int, 3> conv_channels{32, 128, 512};
  std::array<int, 3> conv_kernels{7, 5, 5};
  int gru_hidden = 128;
  int ssm_state_dim = 16;
  double dropout = 0.25;
  int height = 60;
  int width = 80;
  Variant variant = Variant::full;
  Pooling pooling = Pooling::average;

  bool bidirectional() const { return variant == Variant::full || variant == Variant::no_ssm; }
  bool use_ssm() const { return variant == Variant::full || variant == Variant::uni_gru; }
  int feature_dim() const { return pooling == Pooling::average ? conv_channels[2] : 3 * conv_channels[2]; }
  int recurrent_dim() const { return bidirectional() ? 2 * gru_hidden : gru_hidden; }

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("model.in_channels must be >= 1");
    for (int i = 0; i < 3; ++i) {
      if (conv_channels[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("model.conv_channels must be >= 1");
      const int k = conv_kernels[static_cast<std::size_t>(i)];
      if (k < 1 || k % 2 == 0) throw std::invalid_argument("model.conv_kernels must be odd");
    }
    if (gru_hidden < 1) throw std::invalid_argument("model.gru_hidden must be >= 1");
    if (ssm_state_dim < 1) throw std::invalid_argument("model.ssm_state_dim must be >= 1");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("model.dropout must be in [0,1)");
    if ((height >> 3) < 1 || (width >> 3) < 1) {
      throw std::invalid_argument("model resolution must survive three 2x2 poolings (>= 8x8)");
    }
  }
};

/// One GRU direction. Gate weights act on the concatenation [h, x].
template <typename T>
struct GruParams {
  Tensor<T> weight_z, bias_z;
  Tensor<T> weight_r, bias_r;
  Tensor<T> weight_h, bias_h;

  int hidden() const { return weight_z.dim(0); }
};

template <typename T>
struct SsmParams {
  Tensor<T> norm_gain;     // (D)
  Tensor<T> delta_weight;  // (D, D)
  Tensor<T> delta_bias;    // (D)
  Tensor<T> b_weight;      // (N, D)
  Tensor<T> c_weight;      // (N, D)
  Tensor<T> a;             // (D, N), diagonal state matrix per channel
  Tensor<T> d;             // (D)
  T eps = T(1e-5);
};

/// Test hooks for the state space recurrence.
struct SsmOptions {
  /// Replaces softplus(Linear(x')) with a constant step size.
  std::optional<double> fixed_delta;
};

/// Runs one GRU direction over (B, T, F) with zero initial state.
template <typename T>
Tensor<T> gru_direction(const Tensor<T>& x, const GruParams<T>& p, bool reverse) {
  if (x.rank() != 3) throw ShapeError("gru expects (B,T,F), got " + shape_str(x.shape()));
  const int batch = x.dim(0);
  const int steps = x.dim(1);
  const int hidden = p.hidden();
  if (p.weight_z.dim(1) != hidden + x.dim(2)) {
    throw ShapeError("gru weight expects [h,x] of width " + std::to_string(p.weight_z.dim(1)) + ", got " +
                     std::to_string(hidden + x.dim(2)));
  }
  Tensor<T> h = Tensor<T>::zeros({batch, hidden});
  std::vector<Tensor<T>> outputs(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const Tensor<T> xt = select(x, 1, t);
    const Tensor<T> hx = concat<T>({h, xt}, 1);
    const Tensor<T> z = sigmoid(linear(hx, p.weight_z, &p.bias_z));
    const Tensor<T> r = sigmoid(linear(hx, p.weight_r, &p.bias_r));
    const Tensor<T> candidate = tanh(linear(concat<T>({mul(r, h), xt}, 1), p.weight_h, &p.bias_h));
    h = add(mul(one_minus(z), h), mul(z, candidate));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return stack(outputs, 1);
}

/// Output at t is [h_forward(t) | h_backward(t)].
template <typename T>
Tensor<T> bigru_forward(const Tensor<T>& x, const GruParams<T>& forward, const GruParams<T>& backward) {
  return concat<T>({gru_direction(x, forward, false), gru_direction(x, backward, true)}, 2);
}

/// Linear time-varying state space pass over (B, T, D):
///   x'    = RMSNorm(x)
///   delta = softplus(W_d x' + b_d)          (B,T,D)
///   B, C  = W_b x', W_c x'                  (B,T,N)
///   s_t   = exp(delta*A) * s_{t-1} + delta*B*x'   (per channel d, state n)
///   y_t   = C s_t + D x' + x
template <typename T>
Tensor<T> ltv_ssm_forward(const Tensor<T>& x, const SsmParams<T>& p, const SsmOptions& options = {}) {
  if (x.rank() != 3) throw ShapeError("ssm expects (B,T,D), got " + shape_str(x.shape()));
  const int batch = x.dim(0), steps = x.dim(1), channels = x.dim(2);
  const int states = p.a.dim(1);
  if (p.a.dim(0) != channels) throw ShapeError("ssm A rows must equal the feature width");

  const Tensor<T> xn = rmsnorm(x, p.norm_gain, p.eps);
  const Tensor<T> delta = options.fixed_delta
                              ? Tensor<T>::full(x.shape(), static_cast<T>(*options.fixed_delta))
                              : softplus(linear(xn, p.delta_weight, &p.delta_bias));
  const Tensor<T> b = linear(xn, p.b_weight);
  const Tensor<T> c = linear(xn, p.c_weight);

  const Tensor<T> delta4 = reshape(delta, {batch, steps, channels, 1});
  const Tensor<T> decay = exp(mul(delta4, p.a));
  const Tensor<T> drive = mul(reshape(mul(delta, xn), {batch, steps, channels, 1}),
                              reshape(b, {batch, steps, 1, states}));

  Tensor<T> s = Tensor<T>::zeros({batch, channels, states});
  std::vector<Tensor<T>> trajectory;
  trajectory.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    s = add(mul(select(decay, 1, t), s), select(drive, 1, t));
    trajectory.push_back(s);
  }
  const Tensor<T> all_states = stack(trajectory, 1);
  const Tensor<T> readout = sum_last(mul(all_states, reshape(c, {batch, steps, 1, states})));
  return add(add(readout, mul(xn, p.d)), x);
}

template <typename T>
class MambaPupil {
 public:
  explicit MambaPupil(ModelConfig config, std::uint64_t seed = 0) : config_(config), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    config_.validate();
    std::mt19937_64 rng(seed);
    init_parameters(rng);
  }

  MambaPupil(const MambaPupil&) = delete;
  MambaPupil& operator=(const MambaPupil&) = delete;
  MambaPupil(MambaPupil&&) = default;
  MambaPupil& operator=(MambaPupil&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& buffers() { return buffers_; }
  const ParamStore<T>& buffers() const { return buffers_; }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

  /// (B, T, C, H, W) -> (B, T, F)
  Tensor<T> extract_features(const Tensor<T>& reps, Mode mode) {
    if (reps.rank() != 5 || reps.dim(2) != config_.in_channels) {
      throw ShapeError("extract_features expects (B,T," + std::to_string(config_.in_channels) + ",H,W), got " +
                       shape_str(reps.shape()));
    }
    const int batch = reps.dim(0), steps = reps.dim(1);
    Tensor<T> x = reshape(reps, {batch * steps, reps.dim(2), reps.dim(3), reps.dim(4)});
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string prefix = "encoder.block" + std::to_string(i);
      const int k = config_.conv_kernels[i];
      x = conv2d(x, params_.at(prefix + ".conv.weight"), params_.at(prefix + ".conv.bias"), 1, k / 2);
      x = batchnorm2d(x, params_.at(prefix + ".bn.weight"), params_.at(prefix + ".bn.bias"), bn_[i], mode);
      x = maxpool2d(relu(x), 2, 2);
    }
    Tensor<T> pooled = pool(x);
    Tensor<T> features = reshape(pooled, {batch, steps, pooled.dim(1)});
    return spatial_dropout(features, static_cast<T>(config_.dropout), mode, dropout_rng_, 2);
  }

  GruParams<T> gru(bool backward_direction) const {
    const std::string prefix = backward_direction ? "gru.backward." : "gru.forward.";
    return {params_.at(prefix + "weight_z"), params_.at(prefix + "bias_z"), params_.at(prefix + "weight_r"),
            params_.at(prefix + "bias_r"),   params_.at(prefix + "weight_h"), params_.at(prefix + "bias_h")};
  }

  SsmParams<T> ssm() const {
    if (!config_.use_ssm()) throw std::logic_error("variant " + to_string(config_.variant) + " has no ssm");
    return {params_.at("ssm.norm.weight"), params_.at("ssm.delta.weight"), params_.at("ssm.delta.bias"),
            params_.at("ssm.B.weight"),    params_.at("ssm.C.weight"),     params_.at("ssm.A"),
            params_.at("ssm.D")};
  }

  Tensor<T> recurrent(const Tensor<T>& features) const {
    return config_.bidirectional() ? bigru_forward(features, gru(false), gru(true))
                                   : gru_direction(features, gru(false), false);
  }

  Tensor<T> head(const Tensor<T>& hidden) const {
    return linear(hidden, params_.at("head.weight"), &params_.at("head.bias"));
  }

  /// (B, T, C, H, W) -> (B, T, 2) normalized pupil centers.
  Tensor<T> predict(const Tensor<T>& reps, Mode mode, const SsmOptions& ssm_options = {}) {
    Tensor<T> h = recurrent(extract_features(reps, mode));
    if (config_.use_ssm()) h = ltv_ssm_forward(h, ssm(), ssm_options);
    return head(h);
  }

  /// Learnable parameters followed by normalization buffers.
  std::vector<checkpoint::Record> state_records() const {
    auto records = checkpoint::to_records(params_);
    auto extra = checkpoint::to_records(buffers_);
    records.insert(records.end(), extra.begin(), extra.end());
    return records;
  }

  void load_state(const std::vector<checkpoint::Record>& records) {
    std::vector<checkpoint::Record> p, b;
    for (const auto& r : records) (buffers_.contains(r.name) ? b : p).push_back(r);
    checkpoint::load_into(params_, p);
    checkpoint::load_into(buffers_, b);
  }

 private:
  Tensor<T> pool(const Tensor<T>& x) const {
    Tensor<T> avg = global_avg_pool(x);
    if (config_.pooling == Pooling::average) return avg;
    // Softmax-free centroid: relu activations are non-negative, so the
    // activation-weighted coordinate mean is well defined (0.5 when a channel
    // is silent).
    const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> xs({1, 1, 1, w}), ys({1, 1, h, 1});
    for (int i = 0; i < w; ++i) xs[static_cast<std::size_t>(i)] = (static_cast<T>(i) + T(0.5)) / static_cast<T>(w);
    for (int i = 0; i < h; ++i) ys[static_cast<std::size_t>(i)] = (static_cast<T>(i) + T(0.5)) / static_cast<T>(h);
    const T eps = T(1e-6);
    const Tensor<T> flat = reshape(x, {n, ch, h * w});
    const Tensor<T> mass = add_scalar(sum_last(flat), eps);
    const Tensor<T> cx = div(add_scalar(sum_last(reshape(mul(x, xs), {n, ch, h * w})), eps * T(0.5)), mass);
    const Tensor<T> cy = div(add_scalar(sum_last(reshape(mul(x, ys), {n, ch, h * w})), eps * T(0.5)), mass);
    return concat<T>({avg, cx, cy}, 1);
  }

  static Tensor<T> uniform(Shape shape, double bound, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape), true);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  }

  void init_parameters(std::mt19937_64& rng) {
    int cin = config_.in_channels;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string prefix = "encoder.block" + std::to_string(i);
      const int cout = config_.conv_channels[i];
      const int k = config_.conv_kernels[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
      params_.add(prefix + ".conv.weight", uniform({cout, cin, k, k}, bound, rng));
      params_.add(prefix + ".conv.bias", uniform({cout}, bound, rng));
      params_.add(prefix + ".bn.weight", Tensor<T>::full({cout}, T(1), true));
      params_.add(prefix + ".bn.bias", Tensor<T>::zeros({cout}, true));
      bn_[i] = BatchNormStats<T>(cout);
      buffers_.add(prefix + ".bn.running_mean", bn_[i].running_mean);
      buffers_.add(prefix + ".bn.running_var", bn_[i].running_var);
      buffers_.add(prefix + ".bn.batches_tracked", bn_[i].batches_tracked);
      cin = cout;
    }

    const int features = config_.feature_dim();
    const int hidden = config_.gru_hidden;
    const double gru_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    const int directions = config_.bidirectional() ? 2 : 1;
    for (int d = 0; d < directions; ++d) {
      const std::string prefix = d == 0 ? "gru.forward." : "gru.backward.";
      for (const char* gate : {"z", "r", "h"}) {
        params_.add(prefix + "weight_" + gate, uniform({hidden, hidden + features}, gru_bound, rng));
        params_.add(prefix + "bias_" + gate, uniform({hidden}, gru_bound, rng));
      }
    }

    const int width = config_.recurrent_dim();
    if (config_.use_ssm()) {
      const int states = config_.ssm_state_dim;
      const double bound = 1.0 / std::sqrt(static_cast<double>(width));
      params_.add("ssm.norm.weight", Tensor<T>::full({width}, T(1), true));
      params_.add("ssm.delta.weight", uniform({width, width}, bound, rng));
      // Step sizes start log-uniform in [1e-3, 1e-1]; store softplus^-1.
      Tensor<T> delta_bias({width}, true);
      std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
      for (auto& v : delta_bias.data()) {
        const double dt = std::exp(log_dt(rng));
        v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
      }
      params_.add("ssm.delta.bias", delta_bias);
      params_.add("ssm.B.weight", uniform({states, width}, bound, rng));
      params_.add("ssm.C.weight", uniform({states, width}, bound, rng));
      Tensor<T> a({width, states}, true);
      for (int c = 0; c < width; ++c)
        for (int n = 0; n < states; ++n) a[static_cast<std::size_t>(c * states + n)] = -static_cast<T>(n + 1);
      params_.add("ssm.A", a);
      params_.add("ssm.D", Tensor<T>::full({width}, T(1), true));
    }

    const double head_bound = 1.0 / std::sqrt(static_cast<double>(width));
    params_.add("head.weight", uniform({2, width}, head_bound, rng));
    params_.add("head.bias", uniform({2}, head_bound, rng));
  }

  ModelConfig config_;
  ParamStore<T> params_;
  ParamStore<T> buffers_;
  std::array<BatchNormStats<T>, 3> bn_;
  std::mt19937_64 dropout_rng_;
};

/// Builds an ablation variant from an otherwise shared configuration.
template <typename T>
MambaPupil<T> build_variant(ModelConfig config, const std::string& which, std::uint64_t seed = 0) {
  config.variant = parse_variant(which);
  return MambaPupil<T>(config, seed);
}

}  // namespace mambapupil
