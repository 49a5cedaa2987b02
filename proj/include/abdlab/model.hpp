#pragma once

// Dual-encoder contrastive model: MLP image tower and embedding+MLP text
// tower mapping into one unit-norm space, symmetric InfoNCE loss with
// learnable temperature, analytic gradients and an Adam training loop.

#include "abdlab/common.hpp"
#include "abdlab/dataset.hpp"
#include "json.hpp"

namespace abdlab {

inline constexpr double kMaxLogitScale = 100.0;

struct EncoderConfig {
  int image_input_dim = kImagePixels;
  int image_hidden = 128;
  int embed_dim = 64;
  int vocab_size = 0;
  int text_embed_dim = 64;
  int text_hidden = 128;
  int max_caption_len = kMaxCaptionLen;

  void validate() const {
    for (int d : {image_input_dim, image_hidden, embed_dim, vocab_size,
                  text_embed_dim, text_hidden, max_caption_len})
      if (d < 1) throw std::invalid_argument("EncoderConfig: all dims must be >= 1");
  }

  json to_json() const {
    return json{{"image_input_dim", image_input_dim},
                {"image_hidden", image_hidden},
                {"embed_dim", embed_dim},
                {"vocab_size", vocab_size},
                {"text_embed_dim", text_embed_dim},
                {"text_hidden", text_hidden},
                {"max_caption_len", max_caption_len}};
  }

  static EncoderConfig from_json(const json& j) {
    EncoderConfig c;
    c.image_input_dim = j.at("image_input_dim").get<int>();
    c.image_hidden = j.at("image_hidden").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.text_embed_dim = j.at("text_embed_dim").get<int>();
    c.text_hidden = j.at("text_hidden").get<int>();
    c.max_caption_len = j.at("max_caption_len").get<int>();
    c.validate();
    return c;
  }

  std::string hash() const { return hash_hex(fnv1a(to_json().dump())); }

  bool operator==(const EncoderConfig&) const = default;
};

// All trainable tensors. Matrices are stored row-major as [out][in] so the
// forward pass walks contiguous rows.
struct ParamSet {
  Mat image_w1, image_w2;        // [hidden][input], [embed][hidden]
  Vec image_b1, image_b2;
  Mat token_embedding;           // [vocab][text_embed]
  Mat text_w1, text_w2;          // [text_hidden][text_embed], [embed][text_hidden]
  Vec text_b1, text_b2;
  double logit_t = 0.0;          // logit scale s = min(exp(t), 100)

  ParamSet() = default;
  explicit ParamSet(const EncoderConfig& c)
      : image_w1(c.image_hidden, c.image_input_dim),
        image_w2(c.embed_dim, c.image_hidden),
        image_b1(c.image_hidden, 0.0),
        image_b2(c.embed_dim, 0.0),
        token_embedding(c.vocab_size, c.text_embed_dim),
        text_w1(c.text_hidden, c.text_embed_dim),
        text_w2(c.embed_dim, c.text_hidden),
        text_b1(c.text_hidden, 0.0),
        text_b2(c.embed_dim, 0.0) {}
};

struct ParamView {
  const char* name;
  double* data;
  size_t size;
  std::vector<int> shape;
};

// Canonical parameter order; serialization, Adam and the gradient checker all
// iterate this list.
inline std::vector<ParamView> param_views(ParamSet& p) {
  auto mat = [](const char* n, Mat& m) {
    return ParamView{n, m.a.data(), m.a.size(), {m.rows, m.cols}};
  };
  auto vec = [](const char* n, Vec& v) {
    return ParamView{n, v.data(), v.size(), {int(v.size())}};
  };
  return {
      mat("image_w1", p.image_w1),       vec("image_b1", p.image_b1),
      mat("image_w2", p.image_w2),       vec("image_b2", p.image_b2),
      mat("token_embedding", p.token_embedding),
      mat("text_w1", p.text_w1),         vec("text_b1", p.text_b1),
      mat("text_w2", p.text_w2),         vec("text_b2", p.text_b2),
      ParamView{"logit_t", &p.logit_t, 1, {}},
  };
}

struct ModelWeights {
  EncoderConfig cfg;
  ParamSet p;

  ModelWeights() = default;
  explicit ModelWeights(const EncoderConfig& c) : cfg(c), p(c) {}

  double logit_scale() const {
    const double s = std::exp(p.logit_t);
    return std::min(s, kMaxLogitScale);
  }
};

// Glorot-uniform init, temperature at ln(1/0.07).
inline ModelWeights init_weights(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelWeights w(cfg);
  Rng rng(mix_seed(seed, "init"));
  auto fill = [&](Mat& m, int fan_in, int fan_out) {
    const double lim = std::sqrt(6.0 / double(fan_in + fan_out));
    for (double& v : m.a) v = rng.uniform(-lim, lim);
  };
  fill(w.p.image_w1, cfg.image_input_dim, cfg.image_hidden);
  fill(w.p.image_w2, cfg.image_hidden, cfg.embed_dim);
  fill(w.p.token_embedding, cfg.vocab_size, cfg.text_embed_dim);
  fill(w.p.text_w1, cfg.text_embed_dim, cfg.text_hidden);
  fill(w.p.text_w2, cfg.text_hidden, cfg.embed_dim);
  w.p.logit_t = std::log(1.0 / 0.07);
  return w;
}

// ---------------------------------------------------------------------------
// Forward passes (with caches for backprop)
// ---------------------------------------------------------------------------

struct ImageForward {
  Vec h_pre, h;   // hidden pre-activation / ReLU output
  Vec g;          // embedding before normalization
  double norm = 0.0;
  Vec z;          // unit-norm embedding
};

struct TextForward {
  std::vector<int> toks;  // non-pad token ids
  Vec pooled;
  Vec h_pre, h;
  Vec g;
  double norm = 0.0;
  Vec z;
};

namespace detail {

inline void affine(const Mat& w, const Vec& b, const double* x, Vec& out) {
  out.resize(size_t(w.rows));
  for (int i = 0; i < w.rows; ++i) out[i] = b[i] + dot(w.row(i), x, w.cols);
}

inline void relu(const Vec& in, Vec& out) {
  out.resize(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

inline double normalize(const Vec& g, Vec& z) {
  const double n = l2_norm(g);
  if (n < 1e-150)
    throw std::domain_error("degenerate embedding: zero vector before normalization");
  z.resize(g.size());
  const double inv = 1.0 / n;
  for (size_t i = 0; i < g.size(); ++i) z[i] = g[i] * inv;
  return n;
}

}  // namespace detail

inline ImageForward encode_image_fwd(const ModelWeights& w, const Image& x) {
  if (int(x.size()) != w.cfg.image_input_dim)
    throw std::invalid_argument("encode_image: dimension mismatch");
  if (!all_finite(x))
    throw std::invalid_argument("encode_image: non-finite pixel value");
  ImageForward f;
  detail::affine(w.p.image_w1, w.p.image_b1, x.data(), f.h_pre);
  detail::relu(f.h_pre, f.h);
  detail::affine(w.p.image_w2, w.p.image_b2, f.h.data(), f.g);
  f.norm = detail::normalize(f.g, f.z);
  return f;
}

inline TextForward encode_text_fwd(const ModelWeights& w,
                                   const CaptionTokens& tokens) {
  TextForward f;
  for (int id : tokens.ids) {
    if (id == Vocab::pad_id) continue;
    if (id < 0 || id >= w.cfg.vocab_size)
      throw std::invalid_argument("encode_text: token id out of vocabulary");
    f.toks.push_back(id);
  }
  if (f.toks.empty())
    throw std::invalid_argument("encode_text: caption has no non-pad tokens");
  f.pooled.assign(size_t(w.cfg.text_embed_dim), 0.0);
  for (int id : f.toks)
    axpy(1.0, w.p.token_embedding.row(id), f.pooled.data(), w.cfg.text_embed_dim);
  const double inv_m = 1.0 / double(f.toks.size());
  for (double& v : f.pooled) v *= inv_m;
  detail::affine(w.p.text_w1, w.p.text_b1, f.pooled.data(), f.h_pre);
  detail::relu(f.h_pre, f.h);
  detail::affine(w.p.text_w2, w.p.text_b2, f.h.data(), f.g);
  f.norm = detail::normalize(f.g, f.z);
  return f;
}

inline Vec encode_image(const ModelWeights& w, const Image& x) {
  return encode_image_fwd(w, x).z;
}

inline Vec encode_text(const ModelWeights& w, const CaptionTokens& tokens) {
  return encode_text_fwd(w, tokens).z;
}

// ---------------------------------------------------------------------------
// Symmetric InfoNCE loss
// ---------------------------------------------------------------------------

// Mean over rows of -log softmax(row)[diagonal], with max-subtraction.
inline double info_nce_diag(const Mat& logits) {
  const int b = logits.rows;
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = logits.row(i);
    double mx = row[0];
    for (int j = 1; j < b; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < b; ++j) sum += std::exp(row[j] - mx);
    total += -(row[i] - mx) + std::log(sum);
  }
  return total / double(b);
}

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

// Loss given unit-norm embedding rows and the logit scale.
inline double clip_loss_from_embeddings(const Mat& z_img, const Mat& z_txt,
                                        double scale) {
  if (z_img.rows != z_txt.rows || z_img.cols != z_txt.cols)
    throw std::invalid_argument("clip_loss: embedding batch shape mismatch");
  if (z_img.rows < 2)
    throw std::invalid_argument("clip_loss: batch size must be >= 2");
  const int b = z_img.rows;
  Mat logits(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      logits(i, j) = scale * dot(z_img.row(i), z_txt.row(j), z_img.cols);
  const double loss =
      0.5 * (info_nce_diag(logits) + info_nce_diag(transpose(logits)));
  if (!std::isfinite(loss))
    throw std::runtime_error("clip_loss: non-finite loss");
  return loss;
}

inline double clip_loss(const ModelWeights& w, std::span<const Image> images,
                        std::span<const CaptionTokens> captions) {
  if (images.size() != captions.size())
    throw std::invalid_argument("clip_loss: batch size mismatch");
  if (images.size() < 2)
    throw std::invalid_argument("clip_loss: batch size must be >= 2");
  const int b = int(images.size());
  Mat zi(b, w.cfg.embed_dim), zt(b, w.cfg.embed_dim);
  for (int i = 0; i < b; ++i) {
    Vec z = encode_image(w, images[i]);
    std::copy(z.begin(), z.end(), zi.row(i));
    z = encode_text(w, captions[i]);
    std::copy(z.begin(), z.end(), zt.row(i));
  }
  return clip_loss_from_embeddings(zi, zt, w.logit_scale());
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

struct GradientSet {
  ParamSet g;
  std::vector<Image> d_images;  // filled when image gradients were requested
  double loss = 0.0;
};

struct GradientOptions {
  bool param_grads = true;
  bool image_grads = false;
};

namespace detail {

// dg = (dz - (dz.z_hat) z_hat) / norm, through z_hat = g / norm.
inline void normalize_backward(const Vec& z_hat, double norm, const Vec& dz,
                               Vec& dg) {
  const int n = int(z_hat.size());
  const double proj = dot(dz.data(), z_hat.data(), n);
  dg.resize(size_t(n));
  const double inv = 1.0 / norm;
  for (int i = 0; i < n; ++i) dg[i] = (dz[i] - proj * z_hat[i]) * inv;
}

}  // namespace detail

// Analytic partials of clip_loss over every parameter and, on request, over
// each input image.
inline GradientSet loss_gradients(const ModelWeights& w,
                                  std::span<const Image> images,
                                  std::span<const CaptionTokens> captions,
                                  GradientOptions opt = {}) {
  if (images.size() != captions.size())
    throw std::invalid_argument("loss_gradients: batch size mismatch");
  if (images.size() < 2)
    throw std::invalid_argument("loss_gradients: batch size must be >= 2");
  const int b = int(images.size());
  const int e = w.cfg.embed_dim;

  std::vector<ImageForward> fi(static_cast<size_t>(b));
  std::vector<TextForward> ft(static_cast<size_t>(b));
  Mat zi(b, e), zt(b, e);
  for (int i = 0; i < b; ++i) {
    fi[i] = encode_image_fwd(w, images[i]);
    ft[i] = encode_text_fwd(w, captions[i]);
    std::copy(fi[i].z.begin(), fi[i].z.end(), zi.row(i));
    std::copy(ft[i].z.begin(), ft[i].z.end(), zt.row(i));
  }

  const double s_raw = std::exp(w.p.logit_t);
  const double s = std::min(s_raw, kMaxLogitScale);

  Mat sims(b, b), logits(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) {
      sims(i, j) = dot(zi.row(i), zt.row(j), e);
      logits(i, j) = s * sims(i, j);
    }

  GradientSet out;
  out.loss = 0.5 * (info_nce_diag(logits) + info_nce_diag(transpose(logits)));
  if (!std::isfinite(out.loss))
    throw std::runtime_error("loss_gradients: non-finite loss");

  // d loss / d logits from the symmetric cross-entropy.
  Mat dlogits(b, b);
  {
    Mat prow(b, b), pcol(b, b);
    for (int i = 0; i < b; ++i) {
      double mx = logits(i, 0);
      for (int j = 1; j < b; ++j) mx = std::max(mx, logits(i, j));
      double sum = 0.0;
      for (int j = 0; j < b; ++j) {
        prow(i, j) = std::exp(logits(i, j) - mx);
        sum += prow(i, j);
      }
      for (int j = 0; j < b; ++j) prow(i, j) /= sum;
    }
    for (int j = 0; j < b; ++j) {
      double mx = logits(0, j);
      for (int i = 1; i < b; ++i) mx = std::max(mx, logits(i, j));
      double sum = 0.0;
      for (int i = 0; i < b; ++i) {
        pcol(i, j) = std::exp(logits(i, j) - mx);
        sum += pcol(i, j);
      }
      for (int i = 0; i < b; ++i) pcol(i, j) /= sum;
    }
    const double inv_b = 1.0 / double(b);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        const double target = i == j ? 1.0 : 0.0;
        dlogits(i, j) = 0.5 * inv_b *
                        ((prow(i, j) - target) + (pcol(i, j) - target));
      }
  }

  out.g = ParamSet(w.cfg);
  if (opt.image_grads) out.d_images.assign(size_t(b), Image(images[0].size(), 0.0));

  // Temperature: s = min(exp(t), cap); gradient is zero past the cap.
  if (opt.param_grads) {
    double ds = 0.0;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) ds += dlogits(i, j) * sims(i, j);
    out.g.logit_t = s_raw <= kMaxLogitScale ? ds * s_raw : 0.0;
  }

  Vec dz(static_cast<size_t>(e)), dg, dh(static_cast<size_t>(w.cfg.image_hidden)),
      dht(static_cast<size_t>(w.cfg.text_hidden)),
      dp(static_cast<size_t>(w.cfg.text_embed_dim));

  for (int i = 0; i < b; ++i) {
    // image tower backward for sample i
    for (int k = 0; k < e; ++k) {
      double acc = 0.0;
      for (int j = 0; j < b; ++j) acc += dlogits(i, j) * zt(j, k);
      dz[k] = s * acc;
    }
    detail::normalize_backward(fi[i].z, fi[i].norm, dz, dg);
    const auto& f = fi[i];
    if (opt.param_grads) {
      axpy(1.0, dg.data(), out.g.image_b2.data(), e);
      for (int k = 0; k < e; ++k)
        axpy(dg[k], f.h.data(), out.g.image_w2.row(k), w.cfg.image_hidden);
    }
    for (int hh = 0; hh < w.cfg.image_hidden; ++hh) {
      double acc = 0.0;
      for (int k = 0; k < e; ++k) acc += w.p.image_w2(k, hh) * dg[k];
      dh[hh] = f.h_pre[hh] > 0.0 ? acc : 0.0;
    }
    if (opt.param_grads) {
      axpy(1.0, dh.data(), out.g.image_b1.data(), w.cfg.image_hidden);
      for (int hh = 0; hh < w.cfg.image_hidden; ++hh)
        if (dh[hh] != 0.0)
          axpy(dh[hh], images[i].data(), out.g.image_w1.row(hh),
               w.cfg.image_input_dim);
    }
    if (opt.image_grads) {
      double* dx = out.d_images[i].data();
      for (int hh = 0; hh < w.cfg.image_hidden; ++hh)
        if (dh[hh] != 0.0)
          axpy(dh[hh], w.p.image_w1.row(hh), dx, w.cfg.image_input_dim);
    }

    // text tower backward for sample i
    for (int k = 0; k < e; ++k) {
      double acc = 0.0;
      for (int j = 0; j < b; ++j) acc += dlogits(j, i) * zi(j, k);
      dz[k] = s * acc;
    }
    detail::normalize_backward(ft[i].z, ft[i].norm, dz, dg);
    const auto& t = ft[i];
    if (opt.param_grads) {
      axpy(1.0, dg.data(), out.g.text_b2.data(), e);
      for (int k = 0; k < e; ++k)
        axpy(dg[k], t.h.data(), out.g.text_w2.row(k), w.cfg.text_hidden);
    }
    for (int hh = 0; hh < w.cfg.text_hidden; ++hh) {
      double acc = 0.0;
      for (int k = 0; k < e; ++k) acc += w.p.text_w2(k, hh) * dg[k];
      dht[hh] = t.h_pre[hh] > 0.0 ? acc : 0.0;
    }
    if (opt.param_grads) {
      axpy(1.0, dht.data(), out.g.text_b1.data(), w.cfg.text_hidden);
      for (int hh = 0; hh < w.cfg.text_hidden; ++hh)
        axpy(dht[hh], t.pooled.data(), out.g.text_w1.row(hh),
             w.cfg.text_embed_dim);
      std::fill(dp.begin(), dp.end(), 0.0);
      for (int d = 0; d < w.cfg.text_embed_dim; ++d) {
        double acc = 0.0;
        for (int hh = 0; hh < w.cfg.text_hidden; ++hh)
          acc += w.p.text_w1(hh, d) * dht[hh];
        dp[d] = acc;
      }
      const double inv_m = 1.0 / double(t.toks.size());
      for (int id : t.toks)
        axpy(inv_m, dp.data(), out.g.token_embedding.row(id),
             w.cfg.text_embed_dim);
    }
  }

  return out;
}

// Accumulates into dx the input-image gradient implied by dz, the gradient
// at the unit-norm embedding of a cached image forward pass.
inline void image_backward_to_input(const ModelWeights& w,
                                    const ImageForward& f, const Vec& dz,
                                    double* dx) {
  Vec dg;
  detail::normalize_backward(f.z, f.norm, dz, dg);
  const int e = w.cfg.embed_dim;
  for (int hh = 0; hh < w.cfg.image_hidden; ++hh) {
    double acc = 0.0;
    for (int k = 0; k < e; ++k) acc += w.p.image_w2(k, hh) * dg[k];
    if (f.h_pre[hh] > 0.0 && acc != 0.0)
      axpy(acc, w.p.image_w1.row(hh), dx, w.cfg.image_input_dim);
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 64;
  int epochs = 10;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2)
      throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (learning_rate < 0.0)
      throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
  }

  json to_json() const {
    return json{{"batch_size", batch_size}, {"epochs", epochs},
                {"learning_rate", learning_rate}, {"beta1", beta1},
                {"beta2", beta2}, {"adam_eps", adam_eps}, {"seed", seed}};
  }
};

// Deterministic Adam loop: per-epoch seeded shuffle, fixed batch order,
// logit scale clamped after every step. A trailing batch smaller than 2 is
// dropped (InfoNCE needs negatives).
inline ModelWeights train(ModelWeights w, std::span<const Image> images,
                          std::span<const CaptionTokens> captions,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (images.empty() || images.size() != captions.size())
    throw std::invalid_argument("train: dataset empty or size mismatch");

  ParamSet m1(w.cfg), m2(w.cfg);
  auto wv = param_views(w.p);
  auto m1v = param_views(m1);
  auto m2v = param_views(m2);

  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, uint64_t(epoch) + 0x5u));
    shuffle(order, rng);
    for (size_t start = 0; start + 2 <= order.size();
         start += size_t(cfg.batch_size)) {
      const size_t bsz =
          std::min(size_t(cfg.batch_size), order.size() - start);
      if (bsz < 2) break;
      std::vector<Image> bi;
      std::vector<CaptionTokens> bc;
      bi.reserve(bsz);
      bc.reserve(bsz);
      for (size_t k = 0; k < bsz; ++k) {
        bi.push_back(images[order[start + k]]);
        bc.push_back(captions[order[start + k]]);
      }
      GradientSet gs;
      try {
        gs = loss_gradients(w, bi, bc);
      } catch (const std::runtime_error& err) {
        throw std::runtime_error("train: " + std::string(err.what()) +
                                 " (epoch " + std::to_string(epoch) +
                                 ", batch " +
                                 std::to_string(start / size_t(cfg.batch_size)) +
                                 ")");
      }
      ++step;
      auto gv = param_views(gs.g);
      const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
      for (size_t t = 0; t < wv.size(); ++t) {
        double* wp = wv[t].data;
        double* gp = gv[t].data;
        double* a = m1v[t].data;
        double* b2p = m2v[t].data;
        for (size_t k = 0; k < wv[t].size; ++k) {
          a[k] = cfg.beta1 * a[k] + (1.0 - cfg.beta1) * gp[k];
          b2p[k] = cfg.beta2 * b2p[k] + (1.0 - cfg.beta2) * gp[k] * gp[k];
          const double mhat = a[k] / bc1;
          const double vhat = b2p[k] / bc2;
          wp[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
      }
      w.p.logit_t = std::min(w.p.logit_t, std::log(kMaxLogitScale));
    }
  }
  return w;
}

inline ModelWeights train(ModelWeights w, std::span<const Sample> data,
                          const TrainConfig& cfg) {
  std::vector<Image> images;
  std::vector<CaptionTokens> captions;
  images.reserve(data.size());
  captions.reserve(data.size());
  for (const auto& s : data) {
    images.push_back(s.image);
    captions.push_back(s.tokens);
  }
  return train(std::move(w), images, captions, cfg);
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

// Argmax of cosine similarity against the prompt embeddings; ties go to the
// lowest index.
inline int zero_shot_classify(const ModelWeights& w, const Image& image,
                              std::span<const CaptionTokens> prompts) {
  if (prompts.size() < 2)
    throw std::invalid_argument("zero_shot_classify: need at least 2 prompts");
  const Vec zi = encode_image(w, image);
  int best = 0;
  double best_sim = -2.0;
  for (size_t c = 0; c < prompts.size(); ++c) {
    const Vec zt = encode_text(w, prompts[c]);
    const double sim = dot(zi.data(), zt.data(), int(zi.size()));
    if (sim > best_sim) {
      best_sim = sim;
      best = int(c);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoint IO: <name>.json manifest + <name>.bin (LE doubles, canonical
// parameter order). Round-trips are bit-exact.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  uint64_t seed = 0;
  std::string vocab_hash;
  std::string config_hash;
};

inline void save_checkpoint(const ModelWeights& weights,
                            const std::filesystem::path& json_path,
                            const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(json_path.parent_path().empty()
                             ? fs::path(".")
                             : json_path.parent_path());
  fs::path bin_path = json_path;
  bin_path.replace_extension(".bin");

  ModelWeights& mut = const_cast<ModelWeights&>(weights);
  auto views = param_views(mut.p);
  {
    std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + bin_path.string());
    for (const auto& v : views) write_f64_le(out, {v.data, v.size});
    if (!out) throw std::runtime_error("write failed: " + bin_path.string());
  }

  json j;
  j["format"] = "abdlab-checkpoint-v1";
  j["encoder"] = weights.cfg.to_json();
  json params = json::array();
  for (const auto& v : views)
    params.push_back(json{{"name", v.name}, {"shape", v.shape}});
  j["params"] = params;
  j["seed"] = meta.seed;
  j["vocab_hash"] = meta.vocab_hash;
  j["config_hash"] = meta.config_hash;
  j["weights_bin"] = bin_path.filename().string();
  j["weights_hash"] = hash_file_hex(bin_path);

  std::ofstream out(json_path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + json_path.string());
}

struct LoadedCheckpoint {
  ModelWeights weights;
  CheckpointMeta meta;
  std::string weights_hash;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read " + json_path.string());
  json j = json::parse(in);
  if (j.at("format").get<std::string>() != "abdlab-checkpoint-v1")
    throw CompatError("unknown checkpoint format in " + json_path.string());

  LoadedCheckpoint lc;
  lc.weights = ModelWeights(EncoderConfig::from_json(j.at("encoder")));
  lc.meta.seed = j.at("seed").get<uint64_t>();
  lc.meta.vocab_hash = j.at("vocab_hash").get<std::string>();
  lc.meta.config_hash = j.at("config_hash").get<std::string>();

  const auto bin_path = json_path.parent_path() /
                        j.at("weights_bin").get<std::string>();
  lc.weights_hash = hash_file_hex(bin_path);
  if (lc.weights_hash != j.at("weights_hash").get<std::string>())
    throw CompatError("checkpoint weight hash mismatch: " + bin_path.string());

  auto views = param_views(lc.weights.p);
  {
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
    size_t vi = 0;
    for (const auto& pj : j.at("params")) {
      if (vi >= views.size())
        throw CompatError("checkpoint has extra params: " + json_path.string());
      auto& v = views[vi];
      if (pj.at("name").get<std::string>() != v.name ||
          pj.at("shape").get<std::vector<int>>() != v.shape)
        throw CompatError("checkpoint param mismatch at " + std::string(v.name));
      read_f64_le(bin, {v.data, v.size});
      ++vi;
    }
    if (vi != views.size())
      throw CompatError("checkpoint is missing params: " + json_path.string());
  }
  return lc;
}

}  // namespace abdlab
