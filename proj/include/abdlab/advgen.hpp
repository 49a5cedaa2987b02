#pragma once

// Universal adversarial perturbation crafting: projected sign-gradient
// optimization of an additive delta under an L-inf budget, driven by a
// fooling loss on the poisoned model plus a cross-model backdoor loss.

#include <functional>

#include "abdlab/model.hpp"

namespace abdlab {

struct Uap {
  Image delta = make_image();
  double eps = 0.03;
  uint64_t seed = 0;
  double lambda_bd = 1.0;
};

struct CraftConfig {
  int epochs = 20;
  int batch_size = 16;
  double step_size = 0.003;  // eps/10 at the default budget
  double tau = 0.1;
  double lambda_bd = 1.0;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("CraftConfig: epochs must be >= 1");
    if (batch_size < 2)
      throw std::invalid_argument("CraftConfig: batch_size must be >= 2");
    if (tau <= 0.0) throw std::invalid_argument("CraftConfig: tau must be > 0");
    if (step_size <= 0.0)
      throw std::invalid_argument("CraftConfig: step_size must be > 0");
  }

  json to_json() const {
    return json{{"epochs", epochs},       {"batch_size", batch_size},
                {"step_size", step_size}, {"tau", tau},
                {"lambda_bd", lambda_bd}, {"seed", seed}};
  }
};

// ---------------------------------------------------------------------------
// Backdoor loss: InfoNCE between clean-encoder and poisoned-encoder features
// of the same batch of images, negatives taken from the poisoned encoder.
// ---------------------------------------------------------------------------

// Mean InfoNCE over rows of a similarity matrix at temperature tau; the
// diagonal entries are the positives.
inline double backdoor_loss_from_sims(const Mat& sims, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("backdoor_loss: tau must be > 0");
  if (sims.rows != sims.cols || sims.rows < 2)
    throw std::invalid_argument("backdoor_loss: need a square matrix, B >= 2");
  Mat logits(sims.rows, sims.cols);
  for (size_t i = 0; i < sims.a.size(); ++i) logits.a[i] = sims.a[i] / tau;
  const double loss = info_nce_diag(logits);
  if (!std::isfinite(loss))
    throw std::runtime_error("backdoor_loss: non-finite loss");
  return loss;
}

namespace detail {

struct BackdoorForward {
  std::vector<ImageForward> clean_fwd, pois_fwd;
  Mat sims;
  double loss = 0.0;
};

inline BackdoorForward backdoor_forward(const ModelWeights& clean,
                                        const ModelWeights& poisoned,
                                        std::span<const Image> adv_images,
                                        double tau) {
  if (clean.cfg != poisoned.cfg)
    throw std::invalid_argument("backdoor_loss: encoder configs differ");
  if (adv_images.size() < 2)
    throw std::invalid_argument("backdoor_loss: batch size must be >= 2");
  const int b = int(adv_images.size());
  BackdoorForward f;
  f.clean_fwd.reserve(size_t(b));
  f.pois_fwd.reserve(size_t(b));
  for (const auto& x : adv_images) {
    f.clean_fwd.push_back(encode_image_fwd(clean, x));
    f.pois_fwd.push_back(encode_image_fwd(poisoned, x));
  }
  f.sims = Mat(b, b);
  const int e = clean.cfg.embed_dim;
  for (int j = 0; j < b; ++j)
    for (int k = 0; k < b; ++k)
      f.sims(j, k) =
          dot(f.clean_fwd[j].z.data(), f.pois_fwd[k].z.data(), e);
  f.loss = backdoor_loss_from_sims(f.sims, tau);
  return f;
}

}  // namespace detail

inline double backdoor_loss(const ModelWeights& clean,
                            const ModelWeights& poisoned,
                            std::span<const Image> adv_images, double tau) {
  return detail::backdoor_forward(clean, poisoned, adv_images, tau).loss;
}

// Backdoor loss plus its gradient w.r.t. each input image. Both encoders see
// the same image, so each input receives contributions from both towers.
inline double backdoor_loss_image_grads(const ModelWeights& clean,
                                        const ModelWeights& poisoned,
                                        std::span<const Image> adv_images,
                                        double tau,
                                        std::vector<Image>& d_images) {
  auto f = detail::backdoor_forward(clean, poisoned, adv_images, tau);
  const int b = int(adv_images.size());
  const int e = clean.cfg.embed_dim;

  // dL/dS[j][k] = (softmax_k(S[j]/tau) - I) / (B * tau)
  Mat dsims(b, b);
  for (int j = 0; j < b; ++j) {
    double mx = f.sims(j, 0) / tau;
    for (int k = 1; k < b; ++k) mx = std::max(mx, f.sims(j, k) / tau);
    double sum = 0.0;
    for (int k = 0; k < b; ++k) {
      dsims(j, k) = std::exp(f.sims(j, k) / tau - mx);
      sum += dsims(j, k);
    }
    for (int k = 0; k < b; ++k) {
      const double p = dsims(j, k) / sum;
      dsims(j, k) = (p - (j == k ? 1.0 : 0.0)) / (double(b) * tau);
    }
  }

  d_images.assign(size_t(b), Image(adv_images[0].size(), 0.0));
  Vec dz(static_cast<size_t>(e));
  for (int j = 0; j < b; ++j) {
    // through the clean tower: u_j pairs with every v_k
    for (int d = 0; d < e; ++d) {
      double acc = 0.0;
      for (int k = 0; k < b; ++k) acc += dsims(j, k) * f.pois_fwd[k].z[d];
      dz[d] = acc;
    }
    image_backward_to_input(clean, f.clean_fwd[j], dz, d_images[j].data());
    // through the poisoned tower: v_j pairs with every u_k
    for (int d = 0; d < e; ++d) {
      double acc = 0.0;
      for (int k = 0; k < b; ++k) acc += dsims(k, j) * f.clean_fwd[k].z[d];
      dz[d] = acc;
    }
    image_backward_to_input(poisoned, f.pois_fwd[j], dz, d_images[j].data());
  }
  return f.loss;
}

// ---------------------------------------------------------------------------
// Crafting
// ---------------------------------------------------------------------------

inline Image apply_uap(const Image& image, const Uap& uap) {
  if (image.size() != uap.delta.size())
    throw std::invalid_argument("apply_uap: shape mismatch");
  Image out(image.size());
  for (size_t i = 0; i < image.size(); ++i)
    out[i] = clamp01(image[i] + uap.delta[i]);
  return out;
}

struct CraftResult {
  Uap uap;
  std::vector<double> epoch_bd_loss;     // mean backdoor loss per epoch
  std::vector<double> epoch_total_loss;  // mean combined objective per epoch
};

// Called after every projected update; used to audit budget feasibility.
using CraftObserver = std::function<void(int step, const Image& delta)>;

// delta starts at zero; each batch descends
//   L = -clip_loss(poisoned, clip01(x+delta), captions)
//       - lambda_bd * L_bd(clean, poisoned, clip01(x+delta))
// by a signed step, then projects onto the L-inf ball of radius eps.
// Both terms are ascended: the fooling term drives the perturbation into the
// victim's most fragile directions, and the backdoor term pushes the clean
// and poisoned encoders' views of the perturbed image apart, which is where
// the fine-tuned (backdoor) distortions live.
inline CraftResult craft_uap(const ModelWeights& clean,
                             const ModelWeights& poisoned,
                             std::span<const Sample> craft_set,
                             const CraftConfig& cfg, double eps,
                             const CraftObserver& observer = nullptr) {
  cfg.validate();
  if (eps <= 0.0) throw std::invalid_argument("craft_uap: eps must be > 0");
  if (clean.cfg != poisoned.cfg)
    throw std::invalid_argument("craft_uap: encoder configs differ");
  if (craft_set.size() < size_t(2))
    throw std::invalid_argument("craft_uap: need at least 2 samples");

  CraftResult res;
  res.uap.eps = eps;
  res.uap.seed = cfg.seed;
  res.uap.lambda_bd = cfg.lambda_bd;
  Image& delta = res.uap.delta;

  std::vector<size_t> order(craft_set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int step = 0;
  Vec g_delta(static_cast<size_t>(kImagePixels));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, uint64_t(epoch) + 0x11u));
    shuffle(order, rng);
    double bd_sum = 0.0, total_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start + 2 <= order.size();
         start += size_t(cfg.batch_size)) {
      const size_t bsz = std::min(size_t(cfg.batch_size), order.size() - start);
      if (bsz < 2) break;
      std::vector<Image> adv(bsz);
      std::vector<CaptionTokens> caps(bsz);
      // interior mask: clip01 passes gradient only where it does not bind
      std::vector<std::vector<char>> interior(bsz,
                                              std::vector<char>(kImagePixels));
      for (size_t k = 0; k < bsz; ++k) {
        const Image& x = craft_set[order[start + k]].image;
        caps[k] = craft_set[order[start + k]].tokens;
        adv[k].resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
          const double v = x[i] + delta[i];
          adv[k][i] = clamp01(v);
          interior[k][i] = v > 0.0 && v < 1.0;
        }
      }

      GradientSet fool = loss_gradients(poisoned, adv, caps,
                                        {.param_grads = false, .image_grads = true});
      std::vector<Image> bd_grads;
      const double bd_loss =
          backdoor_loss_image_grads(clean, poisoned, adv, cfg.tau, bd_grads);
      const double total = -fool.loss - cfg.lambda_bd * bd_loss;
      if (!std::isfinite(total))
        throw std::runtime_error("craft_uap: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batches));

      std::fill(g_delta.begin(), g_delta.end(), 0.0);
      for (size_t k = 0; k < bsz; ++k)
        for (int i = 0; i < kImagePixels; ++i)
          if (interior[k][i])
            g_delta[size_t(i)] +=
                -fool.d_images[k][size_t(i)] -
                cfg.lambda_bd * bd_grads[k][size_t(i)];

      for (int i = 0; i < kImagePixels; ++i) {
        delta[size_t(i)] -= cfg.step_size * double(sign_of(g_delta[size_t(i)]));
        delta[size_t(i)] = std::clamp(delta[size_t(i)], -eps, eps);
      }
      ++step;
      if (observer) observer(step, delta);

      bd_sum += bd_loss;
      total_sum += total;
      ++batches;
    }
    res.epoch_bd_loss.push_back(batches ? bd_sum / batches : 0.0);
    res.epoch_total_loss.push_back(batches ? total_sum / batches : 0.0);
  }
  return res;
}

// ---------------------------------------------------------------------------
// IO: <name>.bin (LE doubles) + <name>.json
// ---------------------------------------------------------------------------

inline void save_uap(const Uap& uap, const std::filesystem::path& json_path,
                     const CraftConfig& cfg,
                     const std::string& clean_checkpoint_hash,
                     const std::string& poisoned_checkpoint_hash,
                     const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(json_path.parent_path().empty()
                             ? fs::path(".")
                             : json_path.parent_path());
  fs::path bin_path = json_path;
  bin_path.replace_extension(".bin");
  write_doubles_file(bin_path, uap.delta);

  json j;
  j["format"] = "abdlab-uap-v1";
  j["eps"] = uap.eps;
  j["lambda_bd"] = uap.lambda_bd;
  j["tau"] = cfg.tau;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["step_size"] = cfg.step_size;
  j["seed"] = uap.seed;
  j["clean_checkpoint_hash"] = clean_checkpoint_hash;
  j["poisoned_checkpoint_hash"] = poisoned_checkpoint_hash;
  j["config_hash"] = config_hash;
  j["delta_bin"] = bin_path.filename().string();
  j["delta_hash"] = hash_file_hex(bin_path);
  std::ofstream out(json_path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + json_path.string());
}

struct LoadedUap {
  Uap uap;
  json meta;
};

inline LoadedUap load_uap(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read " + json_path.string());
  json j = json::parse(in);
  if (j.at("format").get<std::string>() != "abdlab-uap-v1")
    throw CompatError("unknown uap format in " + json_path.string());
  LoadedUap lu;
  lu.meta = j;
  lu.uap.eps = j.at("eps").get<double>();
  lu.uap.lambda_bd = j.at("lambda_bd").get<double>();
  lu.uap.seed = j.at("seed").get<uint64_t>();
  const auto bin_path =
      json_path.parent_path() / j.at("delta_bin").get<std::string>();
  if (hash_file_hex(bin_path) != j.at("delta_hash").get<std::string>())
    throw CompatError("uap delta hash mismatch: " + bin_path.string());
  lu.uap.delta = read_doubles_file(bin_path, size_t(kImagePixels));
  return lu;
}

}  // namespace abdlab
