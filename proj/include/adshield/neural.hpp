#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "adshield/common.hpp"

namespace adshield {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
};

/// Fully connected network: tanh on hidden layers, linear output.
struct MlpParams {
  std::vector<DenseLayer> layers;

  static MlpParams zeros(std::span<const int> sizes);
  /// Gaussian init scaled by gain / sqrt(fan_in); biases zero.
  static MlpParams random(std::span<const int> sizes, Rng& rng, double hidden_gain, double output_gain);

  std::vector<int> sizes() const;
  std::size_t input_size() const { return static_cast<std::size_t>(layers.front().w.cols()); }
  std::size_t output_size() const { return static_cast<std::size_t>(layers.back().w.rows()); }
  std::size_t parameter_count() const;

  MlpParams zeros_like() const;
  bool all_finite() const;
  double squared_norm() const;
  void scale(double factor);
  void add_scaled(const MlpParams& other, double factor);

  /// Flattened view for checks: each layer's weights (column-major) then bias.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  bool operator==(const MlpParams& other) const;
};

/// Activations retained for backpropagation; columns are samples.
struct MlpCache {
  std::vector<Matrix> inputs;  // input to each layer
  Matrix output;
};

MlpCache mlp_forward(const MlpParams& p, const Matrix& x);
Matrix mlp_predict(const MlpParams& p, const Matrix& x);

/// Gradient of a scalar loss given dLoss/dOutput (same shape as the output).
MlpParams mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& d_output);

/// Masked softmax of one logit column; illegal entries get exactly zero probability.
Vector masked_softmax(const Eigen::Ref<const Vector>& logits, std::span<const std::uint8_t> mask);

struct ActionDistribution {
  Vector probs;
  std::vector<std::uint8_t> mask;

  double log_prob(std::size_t action) const;
  double entropy() const;
  std::size_t sample(Rng& rng) const;
  std::size_t argmax() const;
};

ActionDistribution actor_forward(const MlpParams& actor, std::span<const double> features,
                                 std::span<const std::uint8_t> mask);
double critic_forward(const MlpParams& critic, std::span<const double> features);
inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::int64_t step = 0;

  static AdamState for_params(const MlpParams& p);
};

/// Bias-corrected Adam update in place. Throws Error(Numeric) on a non-finite gradient.
void adam_step(MlpParams& p, AdamState& state, const MlpParams& grad, const AdamConfig& cfg);

/// Text checkpoint: header line, then per layer `W rows cols` / `b n` with hexfloat values.
void write_mlp(const MlpParams& p, std::ostream& out);
MlpParams read_mlp(std::istream& in);

}  // namespace adshield
