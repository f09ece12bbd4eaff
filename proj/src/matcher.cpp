#include "deft/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace deft {

int MatcherParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

void MatcherParams::check() const {
  if (layers.empty()) throw std::invalid_argument("matcher: no layers");
  if (input_dim() % 2 != 0) throw std::invalid_argument("matcher: input dim must be even");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw std::invalid_argument("matcher: bias size mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw std::invalid_argument("matcher: dimension chain broken at layer " + std::to_string(l));
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("matcher: non-finite weights in layer " + std::to_string(l));
    }
  }
  if (layers.back().weight.rows() != 1) throw std::invalid_argument("matcher: output must be scalar");
}

std::vector<std::span<double>> MatcherParams::tensors() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> MatcherParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return out;
}

MatcherParams MatcherParams::zeros_like(const MatcherParams& other) {
  MatcherParams z;
  for (const auto& layer : other.layers) {
    z.layers.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                        Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return z;
}

std::vector<int> default_hidden_widths(int /*embedding_dim*/) { return {64, 32, 16}; }

MatcherParams init_matcher(int embedding_dim, std::span<const int> hidden, std::uint64_t seed) {
  if (embedding_dim < 1) throw std::invalid_argument("init_matcher: embedding_dim < 1");
  if (hidden.size() < 3 || hidden.size() > 5) {
    throw std::invalid_argument("init_matcher: head must have 4-6 layers");
  }
  std::mt19937_64 rng(seed);
  MatcherParams params;
  int in = 2 * embedding_dim;
  std::vector<int> widths(hidden.begin(), hidden.end());
  widths.push_back(1);
  for (int out : widths) {
    if (out < 1) throw std::invalid_argument("init_matcher: widths must be positive");
    const double bound = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = dist(rng);
    params.layers.push_back(std::move(layer));
    in = out;
  }
  return params;
}

MatcherParams init_matcher(int embedding_dim, std::uint64_t seed) {
  const auto hidden = default_hidden_widths(embedding_dim);
  return init_matcher(embedding_dim, hidden, seed);
}

namespace {

// Activations of the pair MLP. Pair p = i * N_m + j.
struct PairActivations {
  std::vector<Eigen::MatrixXd> pre;  // pre-activation per layer, P x width
  Eigen::MatrixXd proj_t;            // N_t x h0, current-frame half of layer 0
  Eigen::MatrixXd proj_past;         // N_m x h0
};

void check_inputs(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                  const MatcherParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("matcher: no layers");
  const int e = params.embedding_dim();
  if ((emb_t.rows() > 0 && emb_t.cols() != e) || (emb_past.rows() > 0 && emb_past.cols() != e)) {
    throw std::invalid_argument("matcher: embedding dim " +
                                std::to_string(std::max(emb_t.cols(), emb_past.cols())) +
                                " does not match head input " + std::to_string(e));
  }
}

PairActivations forward_pairs(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                              const MatcherParams& params) {
  const int e = params.embedding_dim();
  const auto n_t = emb_t.rows();
  const auto n_m = emb_past.rows();
  const auto& first = params.layers.front();
  const auto h0 = first.weight.rows();

  // Layer 0 is linear in the concatenation, so it splits into per-embedding projections.
  PairActivations act;
  act.proj_t = emb_t * first.weight.leftCols(e).transpose();
  act.proj_past = emb_past * first.weight.rightCols(e).transpose();

  Eigen::MatrixXd z0(n_t * n_m, h0);
  for (Eigen::Index i = 0; i < n_t; ++i) {
    const Eigen::RowVectorXd ui = act.proj_t.row(i) + first.bias.transpose();
    for (Eigen::Index j = 0; j < n_m; ++j) z0.row(i * n_m + j) = ui + act.proj_past.row(j);
  }
  act.pre.push_back(std::move(z0));

  for (std::size_t l = 1; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = act.pre.back().cwiseMax(0.0) * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    act.pre.push_back(std::move(z));
  }
  return act;
}

Eigen::MatrixXd reshape_output(const Eigen::MatrixXd& out, Eigen::Index n_t, Eigen::Index n_m) {
  Eigen::MatrixXd a(n_t, n_m);
  for (Eigen::Index i = 0; i < n_t; ++i) {
    for (Eigen::Index j = 0; j < n_m; ++j) a(i, j) = out(i * n_m + j, 0);
  }
  return a;
}

}  // namespace

CurrentProjection project_current(const Eigen::MatrixXd& emb_t, const MatcherParams& params) {
  check_inputs(emb_t, Eigen::MatrixXd(), params);
  const int e = params.embedding_dim();
  const auto& first = params.layers.front();
  CurrentProjection p;
  p.n = emb_t.rows();
  p.values = emb_t.rows() == 0 ? Eigen::MatrixXd(first.weight.rows(), 0)
                               : Eigen::MatrixXd(first.weight.leftCols(e) * emb_t.transpose());
  p.values.colwise() += first.bias;
  return p;
}

Eigen::MatrixXd raw_affinity(const CurrentProjection& current, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params) {
  check_inputs(Eigen::MatrixXd(), emb_past, params);
  const auto n_t = current.n;
  const auto n_m = emb_past.rows();
  const auto& first = params.layers.front();
  if (current.values.rows() != first.weight.rows() || current.values.cols() != n_t) {
    throw std::invalid_argument("raw_affinity: projection does not match the head");
  }
  if (n_t == 0 || n_m == 0) return Eigen::MatrixXd(n_t, n_m);
  const int e = params.embedding_dim();
  const Eigen::MatrixXd proj_past = first.weight.rightCols(e) * emb_past.transpose();

  // Inference keeps pairs as columns (pair q = i * n_m + j) and walks them in
  // cache-sized blocks; flat(j, i) collects A(i, j). Blocks always have full
  // width so a pair's value does not depend on how many pairs share the call.
  constexpr Eigen::Index kBlock = 256;
  const Eigen::Index n_pairs = n_t * n_m;
  const std::size_t n_layers = params.layers.size();
  std::vector<Eigen::MatrixXd> z(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    z[l] = Eigen::MatrixXd::Zero(params.layers[l].weight.rows(), kBlock);
  }
  Eigen::MatrixXd flat(n_m, n_t);
  Eigen::Index i = 0, j = 0;
  for (Eigen::Index s = 0; s < n_pairs; s += kBlock) {
    const Eigen::Index n = std::min(kBlock, n_pairs - s);
    for (Eigen::Index c = 0; c < n; ++c) {
      if (n_layers > 1) {
        z[0].col(c) = (current.values.col(i) + proj_past.col(j)).cwiseMax(0.0);
      } else {
        z[0].col(c) = current.values.col(i) + proj_past.col(j);
      }
      if (++j == n_m) {
        j = 0;
        ++i;
      }
    }
    if (n < kBlock) z[0].rightCols(kBlock - n).setZero();
    for (std::size_t l = 1; l < n_layers; ++l) {
      const auto& layer = params.layers[l];
      z[l].noalias() = layer.weight * z[l - 1];
      z[l].colwise() += layer.bias;
      if (l + 1 < n_layers) z[l] = z[l].cwiseMax(0.0);
    }
    Eigen::Map<Eigen::RowVectorXd>(flat.data() + s, n) = z.back().row(0).head(n);
  }
  return flat.transpose();
}

Eigen::MatrixXd raw_affinity(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params) {
  check_inputs(emb_t, emb_past, params);
  return raw_affinity(project_current(emb_t, params), emb_past, params);
}

Eigen::MatrixXd augment_softmax(const Eigen::MatrixXd& a, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("augment_softmax: non-finite c");
  Eigen::MatrixXd out(a.rows(), a.cols() + 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double mx = c;
    for (Eigen::Index j = 0; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out(i, j) = std::exp(a(i, j) - mx);
      sum += out(i, j);
    }
    out(i, a.cols()) = std::exp(c - mx);
    sum += out(i, a.cols());
    out.row(i) /= sum;
  }
  return out;
}

AffinityPair matcher_forward(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params, double c) {
  return matcher_forward(project_current(emb_t, params), emb_past, params, c);
}

AffinityPair matcher_forward(const CurrentProjection& current, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params, double c) {
  AffinityPair pair;
  pair.raw = raw_affinity(current, emb_past, params);
  pair.bwd = augment_softmax(pair.raw, c);
  pair.fwd = augment_softmax(pair.raw.transpose(), c);
  return pair;
}

Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad) {
  Eigen::MatrixXd out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(grad.row(i));
    out.row(i) = probs.row(i).array() * (grad.row(i).array() - dot);
  }
  return out;
}

MatcherGradients matcher_backward(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                                  const MatcherParams& params, double c,
                                  const Eigen::MatrixXd& grad_bwd,
                                  const Eigen::MatrixXd& grad_fwd) {
  check_inputs(emb_t, emb_past, params);
  const auto n_t = emb_t.rows();
  const auto n_m = emb_past.rows();
  if (grad_bwd.rows() != n_t || grad_bwd.cols() != n_m + 1 || grad_fwd.rows() != n_m ||
      grad_fwd.cols() != n_t + 1) {
    throw std::invalid_argument("matcher_backward: upstream gradient shape mismatch");
  }
  const int e = params.embedding_dim();

  MatcherGradients g;
  g.params = MatcherParams::zeros_like(params);
  g.emb_t = Eigen::MatrixXd::Zero(n_t, e);
  g.emb_past = Eigen::MatrixXd::Zero(n_m, e);
  if (n_t == 0 || n_m == 0) return g;

  const auto act = forward_pairs(emb_t, emb_past, params);
  const Eigen::MatrixXd raw = reshape_output(act.pre.back(), n_t, n_m);
  const Eigen::MatrixXd d_bwd = softmax_backward(augment_softmax(raw, c), grad_bwd);
  const Eigen::MatrixXd d_fwd = softmax_backward(augment_softmax(raw.transpose(), c), grad_fwd);
  const Eigen::MatrixXd d_raw = d_bwd.leftCols(n_m) + d_fwd.leftCols(n_t).transpose();

  Eigen::MatrixXd dz(n_t * n_m, 1);
  for (Eigen::Index i = 0; i < n_t; ++i) {
    for (Eigen::Index j = 0; j < n_m; ++j) dz(i * n_m + j, 0) = d_raw(i, j);
  }

  for (std::size_t l = params.layers.size() - 1; l >= 1; --l) {
    const Eigen::MatrixXd h_prev = act.pre[l - 1].cwiseMax(0.0);
    g.params.layers[l].weight = dz.transpose() * h_prev;
    g.params.layers[l].bias = dz.colwise().sum().transpose();
    Eigen::MatrixXd dh = dz * params.layers[l].weight;
    dz = dh.array() * (act.pre[l - 1].array() > 0.0).cast<double>();
  }

  // Layer 0: pre = proj_t[i] + proj_past[j] + b.
  const auto h0 = params.layers.front().weight.rows();
  Eigen::MatrixXd d_proj_t = Eigen::MatrixXd::Zero(n_t, h0);
  Eigen::MatrixXd d_proj_past = Eigen::MatrixXd::Zero(n_m, h0);
  for (Eigen::Index i = 0; i < n_t; ++i) {
    for (Eigen::Index j = 0; j < n_m; ++j) {
      d_proj_t.row(i) += dz.row(i * n_m + j);
      d_proj_past.row(j) += dz.row(i * n_m + j);
    }
  }
  const auto& w0 = params.layers.front().weight;
  auto& gw0 = g.params.layers.front().weight;
  gw0.leftCols(e) = d_proj_t.transpose() * emb_t;
  gw0.rightCols(e) = d_proj_past.transpose() * emb_past;
  g.params.layers.front().bias = d_proj_t.colwise().sum().transpose();
  g.emb_t = d_proj_t * w0.leftCols(e);
  g.emb_past = d_proj_past * w0.rightCols(e);
  return g;
}

}  // namespace deft
