#pragma once

// Test-only oracles: straight-line recomputations of the forward passes and
// brute-force loss evaluations, plus central finite differences. These stay
// independent of the library's cached/backprop code paths.

#include <cmath>
#include <functional>
#include <vector>

#include "abdlab/model.hpp"

namespace oracle {

using abdlab::CaptionTokens;
using abdlab::Image;
using abdlab::ModelWeights;

// Image tower recomputed with plain loops: flatten -> affine -> ReLU ->
// affine -> L2 normalize.
inline std::vector<double> forward_image(const ModelWeights& w, const Image& x) {
  const auto& p = w.p;
  std::vector<double> h(size_t(w.cfg.image_hidden), 0.0);
  for (int i = 0; i < w.cfg.image_hidden; ++i) {
    double acc = p.image_b1[size_t(i)];
    for (int j = 0; j < w.cfg.image_input_dim; ++j)
      acc += p.image_w1(i, j) * x[size_t(j)];
    h[size_t(i)] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> g(size_t(w.cfg.embed_dim), 0.0);
  double norm2 = 0.0;
  for (int i = 0; i < w.cfg.embed_dim; ++i) {
    double acc = p.image_b2[size_t(i)];
    for (int j = 0; j < w.cfg.image_hidden; ++j)
      acc += p.image_w2(i, j) * h[size_t(j)];
    g[size_t(i)] = acc;
    norm2 += acc * acc;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : g) v *= inv;
  return g;
}

// Text tower: mean-pool non-pad token embeddings -> affine -> ReLU ->
// affine -> L2 normalize.
inline std::vector<double> forward_text(const ModelWeights& w,
                                        const CaptionTokens& toks) {
  const auto& p = w.p;
  std::vector<double> pooled(size_t(w.cfg.text_embed_dim), 0.0);
  int m = 0;
  for (int id : toks.ids) {
    if (id == 0) continue;
    for (int d = 0; d < w.cfg.text_embed_dim; ++d)
      pooled[size_t(d)] += p.token_embedding(id, d);
    ++m;
  }
  for (double& v : pooled) v /= double(m);
  std::vector<double> h(size_t(w.cfg.text_hidden), 0.0);
  for (int i = 0; i < w.cfg.text_hidden; ++i) {
    double acc = p.text_b1[size_t(i)];
    for (int j = 0; j < w.cfg.text_embed_dim; ++j)
      acc += p.text_w1(i, j) * pooled[size_t(j)];
    h[size_t(i)] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> g(size_t(w.cfg.embed_dim), 0.0);
  double norm2 = 0.0;
  for (int i = 0; i < w.cfg.embed_dim; ++i) {
    double acc = p.text_b2[size_t(i)];
    for (int j = 0; j < w.cfg.text_hidden; ++j)
      acc += p.text_w2(i, j) * h[size_t(j)];
    g[size_t(i)] = acc;
    norm2 += acc * acc;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : g) v *= inv;
  return g;
}

// Brute-force symmetric InfoNCE from embedding rows, long-double softmax
// without max-subtraction.
inline double clip_loss_brute(const std::vector<std::vector<double>>& zi,
                              const std::vector<std::vector<double>>& zt,
                              double scale) {
  const size_t b = zi.size();
  const size_t e = zi[0].size();
  auto logit = [&](size_t i, size_t j) {
    long double s = 0.0L;
    for (size_t d = 0; d < e; ++d)
      s += (long double)zi[i][d] * (long double)zt[j][d];
    return (long double)scale * s;
  };
  long double row_total = 0.0L, col_total = 0.0L;
  for (size_t i = 0; i < b; ++i) {
    long double denom = 0.0L;
    for (size_t j = 0; j < b; ++j) denom += std::exp(logit(i, j));
    row_total += -std::log(std::exp(logit(i, i)) / denom);
  }
  for (size_t j = 0; j < b; ++j) {
    long double denom = 0.0L;
    for (size_t i = 0; i < b; ++i) denom += std::exp(logit(i, j));
    col_total += -std::log(std::exp(logit(j, j)) / denom);
  }
  return double(0.5L * (row_total / (long double)b + col_total / (long double)b));
}

// Brute-force InfoNCE over a precomputed similarity matrix (diagonal
// positives) at temperature tau.
inline double info_nce_brute(const std::vector<std::vector<double>>& sims,
                             double tau) {
  const size_t b = sims.size();
  long double total = 0.0L;
  for (size_t j = 0; j < b; ++j) {
    long double denom = 0.0L;
    for (size_t k = 0; k < b; ++k)
      denom += std::exp((long double)sims[j][k] / (long double)tau);
    total += -std::log(std::exp((long double)sims[j][j] / (long double)tau) / denom);
  }
  return double(total / (long double)b);
}

// Central finite difference of f at the location behind `slot`.
inline double central_diff(double* slot, double h,
                           const std::function<double()>& f) {
  const double saved = *slot;
  *slot = saved + h;
  const double up = f();
  *slot = saved - h;
  const double down = f();
  *slot = saved;
  return (up - down) / (2.0 * h);
}

// Relative error with an absolute floor for near-zero pairs.
inline bool grad_close(double analytic, double fd, double rel_tol = 1e-5,
                       double abs_floor = 1e-9) {
  const double mag = std::max(std::abs(analytic), std::abs(fd));
  if (mag <= abs_floor) return true;
  return std::abs(analytic - fd) / mag <= rel_tol;
}

}  // namespace oracle
