// Transformer encoder with a CLS classification head, double precision
// throughout. Post-norm blocks (residual then LayerNorm), learned positional
// embeddings, exact GELU. The backward pass is written out by hand so the
// whole parameter set is checkable against finite differences.
#pragma once

#include <cmath>
#include <cstring>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "erc/util.hpp"

namespace erc {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 512;
  int max_positions = 512;
  int n_classes = 0;
  double dropout = 0.1;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("model: vocab_size must be >= 1");
    if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_positions < 1)
      throw ConfigError("model: dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
  }

  int head_dim() const { return d_model / n_heads; }

  json to_json() const {
    return {{"vocab_size", vocab_size},       {"d_model", d_model}, {"n_heads", n_heads},
            {"n_layers", n_layers},           {"d_ff", d_ff},       {"max_positions", max_positions},
            {"n_classes", n_classes},         {"dropout", dropout}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", 0);
    c.d_model = j.value("d_model", 128);
    c.n_heads = j.value("n_heads", 4);
    c.n_layers = j.value("n_layers", 4);
    c.d_ff = j.value("d_ff", 512);
    c.max_positions = j.value("max_positions", 512);
    c.n_classes = j.value("n_classes", 0);
    c.dropout = j.value("dropout", 0.1);
    return c;
  }
};

struct Param {
  std::string name;
  MatrixXd value;
  MatrixXd grad;
  bool decay = true;  // participates in the L2 term / weight decay

  void init_shape(std::string n, long rows, long cols, bool decays) {
    name = std::move(n);
    value = MatrixXd::Zero(rows, cols);
    grad = MatrixXd::Zero(rows, cols);
    decay = decays;
  }
};

struct LayerParams {
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln1_g, ln1_b;
  Param w1, b1, w2, b2;
  Param ln2_g, ln2_b;

  template <class F>
  void visit(F&& f) {
    f(wq); f(bq); f(wk); f(bk); f(wv); f(bv); f(wo); f(bo);
    f(ln1_g); f(ln1_b);
    f(w1); f(b1); f(w2); f(b2);
    f(ln2_g); f(ln2_b);
  }
};

struct ModelParams {
  ModelConfig config;
  Param tok_emb, pos_emb;
  Param lne_g, lne_b;
  std::vector<LayerParams> layers;
  Param cls_w, cls_b;

  template <class F>
  void visit(F&& f) {
    f(tok_emb); f(pos_emb); f(lne_g); f(lne_b);
    for (auto& l : layers) l.visit(f);
    f(cls_w); f(cls_b);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit([&](Param& p) { f(static_cast<const Param&>(p)); });
  }

  void zero_grads() {
    visit([](Param& p) { p.grad.setZero(); });
  }

  size_t n_params() const {
    size_t n = 0;
    visit([&](const Param& p) { n += static_cast<size_t>(p.value.size()); });
    return n;
  }

  // Sum of squared values over decaying parameters (the ||w||^2 of the loss).
  double decay_sq_norm() const {
    double s = 0.0;
    visit([&](const Param& p) {
      if (p.decay) s += p.value.squaredNorm();
    });
    return s;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const Param& p) { ok = ok && p.value.allFinite(); });
    return ok;
  }
};

inline ModelParams make_model_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.tok_emb.init_shape("tok_emb", cfg.vocab_size, cfg.d_model, true);
  p.pos_emb.init_shape("pos_emb", cfg.max_positions, cfg.d_model, true);
  p.lne_g.init_shape("lne_g", 1, cfg.d_model, false);
  p.lne_b.init_shape("lne_b", 1, cfg.d_model, false);
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& L = p.layers[static_cast<size_t>(l)];
    const std::string pfx = "layer" + std::to_string(l) + ".";
    L.wq.init_shape(pfx + "wq", cfg.d_model, cfg.d_model, true);
    L.bq.init_shape(pfx + "bq", 1, cfg.d_model, false);
    L.wk.init_shape(pfx + "wk", cfg.d_model, cfg.d_model, true);
    L.bk.init_shape(pfx + "bk", 1, cfg.d_model, false);
    L.wv.init_shape(pfx + "wv", cfg.d_model, cfg.d_model, true);
    L.bv.init_shape(pfx + "bv", 1, cfg.d_model, false);
    L.wo.init_shape(pfx + "wo", cfg.d_model, cfg.d_model, true);
    L.bo.init_shape(pfx + "bo", 1, cfg.d_model, false);
    L.ln1_g.init_shape(pfx + "ln1_g", 1, cfg.d_model, false);
    L.ln1_b.init_shape(pfx + "ln1_b", 1, cfg.d_model, false);
    L.w1.init_shape(pfx + "w1", cfg.d_model, cfg.d_ff, true);
    L.b1.init_shape(pfx + "b1", 1, cfg.d_ff, false);
    L.w2.init_shape(pfx + "w2", cfg.d_ff, cfg.d_model, true);
    L.b2.init_shape(pfx + "b2", 1, cfg.d_model, false);
    L.ln2_g.init_shape(pfx + "ln2_g", 1, cfg.d_model, false);
    L.ln2_b.init_shape(pfx + "ln2_b", 1, cfg.d_model, false);
  }
  p.cls_w.init_shape("cls_w", cfg.d_model, cfg.n_classes, true);
  p.cls_b.init_shape("cls_b", 1, cfg.n_classes, false);
  return p;
}

// Truncated normal (std 0.02, clipped at two sigma) for weights, zeros for
// biases, ones for normalization gains. Deterministic in the seed.
inline ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p = make_model_shapes(cfg);
  Rng rng(derive_seed(seed, 42));
  std::normal_distribution<double> normal(0.0, 0.02);
  auto trunc_normal = [&]() {
    double x;
    do {
      x = normal(rng);
    } while (std::abs(x) > 0.04);
    return x;
  };
  p.visit([&](Param& prm) {
    const bool is_gain = prm.name.ends_with("_g");
    if (!prm.decay) {
      prm.value.setConstant(is_gain ? 1.0 : 0.0);
      return;
    }
    for (long r = 0; r < prm.value.rows(); ++r)
      for (long c = 0; c < prm.value.cols(); ++c) prm.value(r, c) = trunc_normal();
  });
  return p;
}

struct Prediction {
  VectorXd probs;
  int predicted = 0;
};

struct AttentionTensor {
  int n_layers = 0;
  int n_heads = 0;
  int seq_len = 0;
  std::vector<MatrixXd> maps;  // layer-major: maps[layer * n_heads + head], each T x T

  const MatrixXd& at(int layer, int head) const {
    return maps[static_cast<size_t>(layer * n_heads + head)];
  }
};

enum class L2Mode { in_loss, decoupled };

inline L2Mode l2_mode_from_string(const std::string& s) {
  if (s == "in_loss") return L2Mode::in_loss;
  if (s == "decoupled") return L2Mode::decoupled;
  throw ConfigError("unknown l2_mode \"" + s + "\" (in_loss|decoupled)");
}

inline std::string to_string(L2Mode m) {
  return m == L2Mode::in_loss ? "in_loss" : "decoupled";
}

namespace detail {

constexpr double kLnEps = 1e-5;

inline void softmax_rows_inplace(MatrixXd& m) {
  for (long r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

inline VectorXd softmax(const VectorXd& z) {
  VectorXd p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LnCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

inline MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias,
                           LnCache* cache) {
  const long t = x.rows(), d = x.cols();
  MatrixXd y(t, d);
  MatrixXd xhat(t, d);
  VectorXd inv_std(t);
  for (long r = 0; r < t; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std(r) = is;
    xhat.row(r) = (x.row(r).array() - mean) * is;
    y.row(r) = xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

inline MatrixXd layer_norm_backward(const MatrixXd& dy, const LnCache& cache, Param& g, Param& b) {
  const long t = dy.rows(), d = dy.cols();
  MatrixXd dx(t, d);
  for (long r = 0; r < t; ++r) {
    g.grad.row(0) += dy.row(r).cwiseProduct(cache.xhat.row(r));
    b.grad.row(0) += dy.row(r);
    Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(g.value.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
    dx.row(r) =
        cache.inv_std(r) * (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

// y = x * w + 1 b    (w: in x out, b: 1 x out)
inline MatrixXd linear(const MatrixXd& x, const Param& w, const Param& b) {
  return (x * w.value).rowwise() + b.value.row(0);
}

inline MatrixXd linear_backward(const MatrixXd& dy, const MatrixXd& x, Param& w, Param& b) {
  w.grad.noalias() += x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

struct DropoutMask {
  MatrixXd scale;  // elementwise multiplier, empty when inactive
  bool active = false;
};

inline MatrixXd apply_dropout(const MatrixXd& x, double rate, Rng* rng, DropoutMask* mask) {
  if (rate <= 0.0 || rng == nullptr) {
    if (mask) mask->active = false;
    return x;
  }
  MatrixXd scale(x.rows(), x.cols());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) scale(r, c) = u(*rng) < rate ? 0.0 : keep_scale;
  if (mask) {
    mask->scale = scale;
    mask->active = true;
  }
  return x.cwiseProduct(scale);
}

struct LayerCache {
  MatrixXd x_in;
  MatrixXd q, k, v;
  std::vector<MatrixXd> attn;  // per head, post softmax
  MatrixXd ctx;
  DropoutMask attn_drop;
  LnCache ln1;
  MatrixXd y1;
  MatrixXd ff_pre, ff_act;
  DropoutMask ff_drop;
  LnCache ln2;
};

struct ForwardCache {
  std::vector<int> ids;
  LnCache lne;
  DropoutMask emb_drop;
  MatrixXd h0;  // post-dropout embedding output
  std::vector<LayerCache> layers;
  MatrixXd h_final;
  VectorXd probs;
};

inline void check_input(const ModelParams& p, std::span<const int> ids) {
  if (ids.empty()) throw DataError("model input is empty");
  if (static_cast<int>(ids.size()) > p.config.max_positions)
    throw DataError("input length " + std::to_string(ids.size()) + " exceeds max_positions " +
                    std::to_string(p.config.max_positions));
  for (int id : ids)
    if (id < 0 || id >= p.config.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside model vocab " +
                      std::to_string(p.config.vocab_size));
}

// Single-sequence encoder pass. `rng` drives dropout when training.
inline Prediction forward_impl(const ModelParams& p, std::span<const int> ids, bool training,
                               Rng* rng, AttentionTensor* attn_out, ForwardCache* cache) {
  check_input(p, ids);
  const ModelConfig& cfg = p.config;
  const long t = static_cast<long>(ids.size());
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double drop = training ? cfg.dropout : 0.0;

  MatrixXd h(t, cfg.d_model);
  for (long r = 0; r < t; ++r)
    h.row(r) = p.tok_emb.value.row(ids[static_cast<size_t>(r)]) + p.pos_emb.value.row(r);
  h = layer_norm(h, p.lne_g.value, p.lne_b.value, cache ? &cache->lne : nullptr);
  h = apply_dropout(h, drop, rng, cache ? &cache->emb_drop : nullptr);

  if (attn_out) {
    attn_out->n_layers = cfg.n_layers;
    attn_out->n_heads = cfg.n_heads;
    attn_out->seq_len = static_cast<int>(t);
    attn_out->maps.clear();
    attn_out->maps.reserve(static_cast<size_t>(cfg.n_layers * cfg.n_heads));
  }
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->h0 = h;
    cache->layers.resize(static_cast<size_t>(cfg.n_layers));
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = p.layers[static_cast<size_t>(l)];
    LayerCache* lc = cache ? &cache->layers[static_cast<size_t>(l)] : nullptr;
    if (lc) lc->x_in = h;

    MatrixXd q = linear(h, L.wq, L.bq);
    MatrixXd k = linear(h, L.wk, L.bk);
    MatrixXd v = linear(h, L.wv, L.bv);
    MatrixXd ctx(t, cfg.d_model);
    if (lc) lc->attn.resize(static_cast<size_t>(cfg.n_heads));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      auto qh = q.middleCols(hd * dh, dh);
      auto kh = k.middleCols(hd * dh, dh);
      auto vh = v.middleCols(hd * dh, dh);
      MatrixXd scores = qh * kh.transpose() * inv_sqrt_dh;
      softmax_rows_inplace(scores);  // now attention probabilities
      ctx.middleCols(hd * dh, dh) = scores * vh;
      if (attn_out) attn_out->maps.push_back(scores);
      if (lc) lc->attn[static_cast<size_t>(hd)] = std::move(scores);
    }
    if (lc) {
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->ctx = ctx;
    }

    MatrixXd attn_out_proj = linear(ctx, L.wo, L.bo);
    attn_out_proj = apply_dropout(attn_out_proj, drop, rng, lc ? &lc->attn_drop : nullptr);
    MatrixXd r1 = h + attn_out_proj;
    MatrixXd y1 = layer_norm(r1, L.ln1_g.value, L.ln1_b.value, lc ? &lc->ln1 : nullptr);
    if (lc) lc->y1 = y1;

    MatrixXd ff_pre = linear(y1, L.w1, L.b1);
    MatrixXd ff_act = ff_pre.unaryExpr([](double x) { return gelu(x); });
    if (lc) {
      lc->ff_pre = ff_pre;
      lc->ff_act = ff_act;
    }
    MatrixXd ff_out = linear(ff_act, L.w2, L.b2);
    ff_out = apply_dropout(ff_out, drop, rng, lc ? &lc->ff_drop : nullptr);
    MatrixXd r2 = y1 + ff_out;
    h = layer_norm(r2, L.ln2_g.value, L.ln2_b.value, lc ? &lc->ln2 : nullptr);
  }

  if (cache) cache->h_final = h;
  VectorXd logits =
      (h.row(0) * p.cls_w.value).transpose() + p.cls_b.value.row(0).transpose();
  Prediction pred;
  pred.probs = softmax(logits);
  pred.predicted = 0;
  for (int c = 1; c < cfg.n_classes; ++c)
    if (pred.probs(c) > pred.probs(pred.predicted)) pred.predicted = c;
  if (cache) cache->probs = pred.probs;
  return pred;
}

// Backward for one example given its forward cache; accumulates into grads.
// d_logits = probs - onehot(label), i.e. the gradient of -log p_label.
inline void backward_impl(ModelParams& p, const ForwardCache& cache, int label) {
  const ModelConfig& cfg = p.config;
  const long t = static_cast<long>(cache.ids.size());
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  VectorXd dlogits = cache.probs;
  dlogits(label) -= 1.0;

  p.cls_w.grad.noalias() += cache.h_final.row(0).transpose() * dlogits.transpose();
  p.cls_b.grad.row(0) += dlogits.transpose();
  MatrixXd dh_mat = MatrixXd::Zero(t, cfg.d_model);
  dh_mat.row(0) = (p.cls_w.value * dlogits).transpose();

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    auto& L = p.layers[static_cast<size_t>(l)];
    const LayerCache& lc = cache.layers[static_cast<size_t>(l)];

    // LN2(y1 + dropout(ffn))
    MatrixXd dr2 = layer_norm_backward(dh_mat, lc.ln2, L.ln2_g, L.ln2_b);
    MatrixXd dff_out = lc.ff_drop.active ? dr2.cwiseProduct(lc.ff_drop.scale).eval() : dr2;
    MatrixXd dy1 = dr2;

    MatrixXd dff_act = linear_backward(dff_out, lc.ff_act, L.w2, L.b2);
    MatrixXd dff_pre =
        dff_act.cwiseProduct(lc.ff_pre.unaryExpr([](double x) { return gelu_grad(x); }));
    dy1 += linear_backward(dff_pre, lc.y1, L.w1, L.b1);

    // LN1(x + dropout(attn))
    MatrixXd dr1 = layer_norm_backward(dy1, lc.ln1, L.ln1_g, L.ln1_b);
    MatrixXd dattn_proj = lc.attn_drop.active ? dr1.cwiseProduct(lc.attn_drop.scale).eval() : dr1;
    MatrixXd dx = dr1;

    MatrixXd dctx = linear_backward(dattn_proj, lc.ctx, L.wo, L.bo);
    MatrixXd dq(t, cfg.d_model), dk(t, cfg.d_model), dv(t, cfg.d_model);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const MatrixXd& a = lc.attn[static_cast<size_t>(hd)];
      auto qh = lc.q.middleCols(hd * dh, dh);
      auto kh = lc.k.middleCols(hd * dh, dh);
      auto vh = lc.v.middleCols(hd * dh, dh);
      auto dctx_h = dctx.middleCols(hd * dh, dh);

      MatrixXd da = dctx_h * vh.transpose();
      dv.middleCols(hd * dh, dh).noalias() = a.transpose() * dctx_h;
      // softmax rows backward
      MatrixXd dscores(t, t);
      for (long r = 0; r < t; ++r) {
        const double dot = da.row(r).dot(a.row(r));
        dscores.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
      }
      dscores *= inv_sqrt_dh;
      dq.middleCols(hd * dh, dh).noalias() = dscores * kh;
      dk.middleCols(hd * dh, dh).noalias() = dscores.transpose() * qh;
    }
    dx += linear_backward(dq, lc.x_in, L.wq, L.bq);
    dx += linear_backward(dk, lc.x_in, L.wk, L.bk);
    dx += linear_backward(dv, lc.x_in, L.wv, L.bv);
    dh_mat = std::move(dx);
  }

  if (cache.emb_drop.active) dh_mat = dh_mat.cwiseProduct(cache.emb_drop.scale);
  MatrixXd demb = layer_norm_backward(dh_mat, cache.lne, p.lne_g, p.lne_b);
  for (long r = 0; r < t; ++r) {
    p.tok_emb.grad.row(cache.ids[static_cast<size_t>(r)]) += demb.row(r);
    p.pos_emb.grad.row(r) += demb.row(r);
  }
}

}  // namespace detail

// Inference pass; collects per-layer, per-head attention on request.
inline Prediction forward(const ModelParams& params, std::span<const int> ids,
                          AttentionTensor* attention = nullptr) {
  return detail::forward_impl(params, ids, false, nullptr, attention, nullptr);
}

inline Prediction uniform_prediction(int n_classes) {
  Prediction p;
  p.probs = VectorXd::Constant(n_classes, 1.0 / n_classes);
  p.predicted = 0;
  return p;
}

// Batched inference over padded rows. mask[i][j] = 1 marks a real token; each
// row must be a real-token prefix followed by padding. Padding never reaches
// the encoder, so results match the unbatched forward exactly. A fully padded
// row yields the uniform distribution; callers exclude such rows from losses.
inline std::vector<Prediction> forward_batch(const ModelParams& params,
                                             const std::vector<std::vector<int>>& padded_ids,
                                             const std::vector<std::vector<uint8_t>>& mask) {
  if (mask.size() != padded_ids.size())
    throw DataError("forward_batch: mask rows (" + std::to_string(mask.size()) +
                    ") != id rows (" + std::to_string(padded_ids.size()) + ")");
  std::vector<Prediction> out(padded_ids.size());
  for (size_t i = 0; i < padded_ids.size(); ++i) {
    if (mask[i].size() != padded_ids[i].size())
      throw DataError("forward_batch: mask/ids length mismatch in row " + std::to_string(i));
    size_t real = 0;
    while (real < mask[i].size() && mask[i][real]) ++real;
    for (size_t j = real; j < mask[i].size(); ++j)
      if (mask[i][j]) throw DataError("forward_batch: mask is not a prefix in row " + std::to_string(i));
    if (real == 0) {
      out[i] = uniform_prediction(params.config.n_classes);
      continue;
    }
    out[i] = forward(params, std::span<const int>(padded_ids[i].data(), real));
  }
  return out;
}

struct LossResult {
  double total = 0.0;          // reported loss (includes the L2 term in in_loss mode)
  double cross_entropy = 0.0;  // mean cross-entropy over the batch
};

// Mean cross-entropy over the batch plus, in in_loss mode, (lambda/2)||w||^2.
// Gradients are accumulated into params.grad for every parameter. Dropout is
// active only when `dropout_seed` is provided (training).
inline LossResult loss_and_grad(ModelParams& params, const std::vector<std::vector<int>>& seqs,
                                const std::vector<int>& labels, double lambda, L2Mode l2_mode,
                                std::optional<uint64_t> dropout_seed = std::nullopt) {
  if (seqs.empty() || seqs.size() != labels.size())
    throw DataError("loss_and_grad: batch and labels must be nonempty and equal-sized");
  for (int y : labels)
    if (y < 0 || y >= params.config.n_classes)
      throw DataError("loss_and_grad: label out of range");

  params.zero_grads();
  const double n = static_cast<double>(seqs.size());
  double ce_sum = 0.0;
  for (size_t i = 0; i < seqs.size(); ++i) {
    detail::ForwardCache cache;
    Prediction pred;
    if (dropout_seed && params.config.dropout > 0.0) {
      Rng rng(derive_seed(*dropout_seed, 101, i));
      pred = detail::forward_impl(params, seqs[i], true, &rng, nullptr, &cache);
    } else {
      pred = detail::forward_impl(params, seqs[i], false, nullptr, nullptr, &cache);
    }
    ce_sum += -std::log(std::max(pred.probs(labels[i]), 1e-300));
    detail::backward_impl(params, cache, labels[i]);
  }

  LossResult res;
  res.cross_entropy = ce_sum / n;
  params.visit([&](Param& p) { p.grad /= n; });
  res.total = res.cross_entropy;
  if (l2_mode == L2Mode::in_loss && lambda != 0.0) {
    res.total += 0.5 * lambda * params.decay_sq_norm();
    params.visit([&](Param& p) {
      if (p.decay) p.grad += lambda * p.value;
    });
  }
  if (!std::isfinite(res.total))
    throw NumericError("non-finite loss (cross_entropy=" + std::to_string(res.cross_entropy) +
                       ")");
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "ERCKPT01" magic, u64 JSON-header length, JSON header with the
// model config and the parameter table, then raw little-endian float64 data
// per parameter in table order (Eigen column-major).

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  json table = json::array();
  params.visit([&](const Param& p) {
    table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  });
  const std::string header = json{{"model", params.config.to_json()}, {"params", table}}.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write("ERCKPT01", 8);
  const uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  params.visit([&](const Param& p) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.value.size())));
  });
  if (!out) throw DataError("short write: " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "ERCKPT01", 8) != 0)
    throw DataError(path.string() + ": not an erc checkpoint");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError(path.string() + ": truncated checkpoint header");

  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  ModelParams params = make_model_shapes(ModelConfig::from_json(j.at("model")));
  size_t idx = 0;
  const json& table = j.at("params");
  params.visit([&](Param& p) {
    if (idx >= table.size()) throw DataError(path.string() + ": checkpoint parameter table too short");
    const json& e = table[idx++];
    if (e.at("name").get<std::string>() != p.name || e.at("rows").get<long>() != p.value.rows() ||
        e.at("cols").get<long>() != p.value.cols())
      throw DataError(path.string() + ": checkpoint layout mismatch at " + p.name);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.value.size())));
  });
  if (!in) throw DataError(path.string() + ": truncated checkpoint data");
  return params;
}

}  // namespace erc
