#include "adshield/neural.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace adshield {

MlpParams MlpParams::zeros(std::span<const int> sizes) {
  if (sizes.size() < 2) throw Error(ErrorCode::InvalidArgument, "an MLP needs at least two layer sizes");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] <= 0 || sizes[l + 1] <= 0) throw Error(ErrorCode::InvalidArgument, "layer sizes must be positive");
    p.layers.push_back({Matrix::Zero(sizes[l + 1], sizes[l]), Vector::Zero(sizes[l + 1])});
  }
  return p;
}

MlpParams MlpParams::random(std::span<const int> sizes, Rng& rng, double hidden_gain, double output_gain) {
  MlpParams p = zeros(sizes);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& w = p.layers[l].w;
    const double gain = l + 1 == p.layers.size() ? output_gain : hidden_gain;
    const double scale = gain / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
  }
  return p;
}

std::vector<int> MlpParams::sizes() const {
  std::vector<int> s;
  if (layers.empty()) return s;
  s.push_back(static_cast<int>(layers.front().w.cols()));
  for (const auto& l : layers) s.push_back(static_cast<int>(l.w.rows()));
  return s;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

MlpParams MlpParams::zeros_like() const {
  auto s = sizes();
  return zeros(s);
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers)
    if (!l.w.allFinite() || !l.b.allFinite()) return false;
  return true;
}

double MlpParams::squared_norm() const {
  double n = 0.0;
  for (const auto& l : layers) n += l.w.squaredNorm() + l.b.squaredNorm();
  return n;
}

void MlpParams::scale(double factor) {
  for (auto& l : layers) {
    l.w *= factor;
    l.b *= factor;
  }
}

void MlpParams::add_scaled(const MlpParams& other, double factor) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].w += factor * other.layers[i].w;
    layers[i].b += factor * other.layers[i].b;
  }
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers) {
    out.insert(out.end(), l.w.data(), l.w.data() + l.w.size());
    out.insert(out.end(), l.b.data(), l.b.data() + l.b.size());
  }
  return out;
}

void MlpParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw Error(ErrorCode::InvalidArgument, "flat parameter size mismatch");
  std::size_t k = 0;
  for (auto& l : layers) {
    std::copy_n(values.data() + k, l.w.size(), l.w.data());
    k += static_cast<std::size_t>(l.w.size());
    std::copy_n(values.data() + k, l.b.size(), l.b.data());
    k += static_cast<std::size_t>(l.b.size());
  }
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.w.rows() != b.w.rows() || a.w.cols() != b.w.cols() || a.w != b.w || a.b != b.b) return false;
  }
  return true;
}

MlpCache mlp_forward(const MlpParams& p, const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != p.input_size())
    throw Error(ErrorCode::InvalidArgument, "feature size does not match network input");
  MlpCache cache;
  cache.inputs.reserve(p.layers.size());
  Matrix a = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    Matrix z = layer.w * a;
    z.colwise() += layer.b;
    cache.inputs.push_back(std::move(a));
    if (l + 1 < p.layers.size())
      a = z.array().tanh().matrix();
    else
      a = std::move(z);
  }
  cache.output = std::move(a);
  return cache;
}

Matrix mlp_predict(const MlpParams& p, const Matrix& x) { return mlp_forward(p, x).output; }

MlpParams mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& d_output) {
  MlpParams grad = p.zeros_like();
  Matrix delta = d_output;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Matrix& a = cache.inputs[l];
    grad.layers[l].w.noalias() = delta * a.transpose();
    grad.layers[l].b = delta.rowwise().sum();
    if (l > 0) {
      Matrix da = p.layers[l].w.transpose() * delta;
      delta = (da.array() * (1.0 - a.array().square())).matrix();
    }
  }
  return grad;
}

Vector masked_softmax(const Eigen::Ref<const Vector>& logits, std::span<const std::uint8_t> mask) {
  if (mask.size() != static_cast<std::size_t>(logits.size()))
    throw Error(ErrorCode::InvalidArgument, "mask size does not match logits");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) max_logit = std::max(max_logit, logits[static_cast<Eigen::Index>(i)]);
  if (max_logit == -std::numeric_limits<double>::infinity())
    throw Error(ErrorCode::InvalidArgument, "empty action mask");
  Vector probs = Vector::Zero(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto k = static_cast<Eigen::Index>(i);
    probs[k] = std::exp(logits[k] - max_logit);
    total += probs[k];
  }
  return probs / total;
}

double ActionDistribution::log_prob(std::size_t action) const {
  return std::log(probs[static_cast<Eigen::Index>(action)]);
}

double ActionDistribution::entropy() const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

std::size_t ActionDistribution::sample(Rng& rng) const {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    acc += probs[i];
    last = static_cast<std::size_t>(i);
    if (u < acc) return last;
  }
  return last;
}

std::size_t ActionDistribution::argmax() const {
  std::size_t best = 0;
  double best_p = -1.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)] && probs[i] > best_p) {
      best_p = probs[i];
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

ActionDistribution actor_forward(const MlpParams& actor, std::span<const double> features,
                                 std::span<const std::uint8_t> mask) {
  Eigen::Map<const Matrix> x(features.data(), static_cast<Eigen::Index>(features.size()), 1);
  Matrix logits = mlp_predict(actor, x);
  ActionDistribution dist;
  dist.probs = masked_softmax(logits.col(0), mask);
  dist.mask.assign(mask.begin(), mask.end());
  return dist;
}

double critic_forward(const MlpParams& critic, std::span<const double> features) {
  Eigen::Map<const Matrix> x(features.data(), static_cast<Eigen::Index>(features.size()), 1);
  return mlp_predict(critic, x)(0, 0);
}

AdamState AdamState::for_params(const MlpParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }

void adam_step(MlpParams& p, AdamState& state, const MlpParams& grad, const AdamConfig& cfg) {
  if (!grad.all_finite()) throw Error(ErrorCode::Numeric, "non-finite gradient");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    update(p.layers[l].w, state.m.layers[l].w, state.v.layers[l].w, grad.layers[l].w);
    update(p.layers[l].b, state.m.layers[l].b, state.v.layers[l].b, grad.layers[l].b);
  }
}

namespace {

void write_values(std::ostream& out, const double* data, Eigen::Index n) {
  char buf[64];
  for (Eigen::Index i = 0; i < n; ++i) {
    auto res = std::to_chars(buf, buf + sizeof(buf), data[i], std::chars_format::hex);
    out << (i ? " " : "") << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  out << '\n';
}

void read_values(std::istream& in, double* data, Eigen::Index n) {
  std::string tok;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(in >> tok)) throw Error(ErrorCode::Parse, "checkpoint truncated");
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), data[i], std::chars_format::hex);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw Error(ErrorCode::Parse, "bad checkpoint value '" + tok + "'");
  }
}

}  // namespace

void write_mlp(const MlpParams& p, std::ostream& out) {
  out << "mlp " << p.layers.size() + 1;
  for (int s : p.sizes()) out << ' ' << s;
  out << '\n';
  for (const auto& l : p.layers) {
    out << "W " << l.w.rows() << ' ' << l.w.cols() << '\n';
    write_values(out, l.w.data(), l.w.size());
    out << "b " << l.b.size() << '\n';
    write_values(out, l.b.data(), l.b.size());
  }
}

MlpParams read_mlp(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "mlp" || count < 2) throw Error(ErrorCode::Parse, "expected 'mlp <n> sizes...'");
  std::vector<int> sizes(count);
  for (auto& s : sizes)
    if (!(in >> s)) throw Error(ErrorCode::Parse, "bad mlp layer sizes");
  MlpParams p = MlpParams::zeros(sizes);
  for (auto& l : p.layers) {
    Eigen::Index rows = 0, cols = 0, n = 0;
    if (!(in >> tag >> rows >> cols) || tag != "W" || rows != l.w.rows() || cols != l.w.cols())
      throw Error(ErrorCode::Parse, "weight header does not match layer sizes");
    read_values(in, l.w.data(), l.w.size());
    if (!(in >> tag >> n) || tag != "b" || n != l.b.size())
      throw Error(ErrorCode::Parse, "bias header does not match layer sizes");
    read_values(in, l.b.data(), l.b.size());
  }
  return p;
}

}  // namespace adshield
