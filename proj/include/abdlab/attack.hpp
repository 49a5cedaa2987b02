#pragma once

// Backdoor trigger application, target caption set construction, poisoned
// dataset assembly and poison fine-tuning.

#include "abdlab/dataset.hpp"
#include "abdlab/model.hpp"

namespace abdlab {

enum class TriggerKind { badnet_patch, blended };
enum class PatchCorner { top_left, top_right, bottom_left, bottom_right };

inline std::string to_string(TriggerKind k) {
  return k == TriggerKind::badnet_patch ? "badnet_patch" : "blended";
}
inline TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "badnet_patch" || s == "badnet") return TriggerKind::badnet_patch;
  if (s == "blended") return TriggerKind::blended;
  throw std::invalid_argument("unknown trigger kind: " + s);
}

inline std::string to_string(PatchCorner c) {
  switch (c) {
    case PatchCorner::top_left: return "top_left";
    case PatchCorner::top_right: return "top_right";
    case PatchCorner::bottom_left: return "bottom_left";
    default: return "bottom_right";
  }
}
inline PatchCorner corner_from_string(const std::string& s) {
  if (s == "top_left") return PatchCorner::top_left;
  if (s == "top_right") return PatchCorner::top_right;
  if (s == "bottom_left") return PatchCorner::bottom_left;
  if (s == "bottom_right") return PatchCorner::bottom_right;
  throw std::invalid_argument("unknown patch corner: " + s);
}

struct TriggerSpec {
  TriggerKind kind = TriggerKind::badnet_patch;
  int patch_size = 4;
  PatchCorner patch_position = PatchCorner::bottom_right;
  double blend_alpha = 0.2;
  uint64_t trigger_seed = 1337;

  void validate() const {
    if (patch_size < 1 || patch_size > kImageSide)
      throw std::invalid_argument("TriggerSpec: patch must fit inside the image");
    if (blend_alpha < 0.0 || blend_alpha > 1.0)
      throw std::invalid_argument("TriggerSpec: blend_alpha must be in [0,1]");
  }

  json to_json() const {
    return json{{"kind", to_string(kind)},
                {"patch_size", patch_size},
                {"patch_position", to_string(patch_position)},
                {"blend_alpha", blend_alpha},
                {"trigger_seed", trigger_seed}};
  }

  static TriggerSpec from_json(const json& j) {
    TriggerSpec t;
    t.kind = trigger_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("patch_size")) t.patch_size = j.at("patch_size").get<int>();
    if (j.contains("patch_position"))
      t.patch_position = corner_from_string(j.at("patch_position").get<std::string>());
    if (j.contains("blend_alpha")) t.blend_alpha = j.at("blend_alpha").get<double>();
    if (j.contains("trigger_seed"))
      t.trigger_seed = j.at("trigger_seed").get<uint64_t>();
    t.validate();
    return t;
  }
};

// Fixed seeded RGB pattern for the patch, laid out channel-major.
inline std::vector<double> badnet_pattern(const TriggerSpec& spec) {
  Rng rng(mix_seed(spec.trigger_seed, "badnet"));
  std::vector<double> pat(size_t(kImageChannels) * spec.patch_size * spec.patch_size);
  for (double& v : pat) v = rng.uniform() < 0.5 ? 0.02 : 0.98;  // saturated noise
  return pat;
}

// Fixed seeded full-frame noise image for blending.
inline Image blend_noise(const TriggerSpec& spec) {
  Rng rng(mix_seed(spec.trigger_seed, "blended"));
  Image n = make_image();
  for (double& v : n) v = rng.uniform();
  return n;
}

inline Image apply_trigger(const Image& image, const TriggerSpec& spec) {
  spec.validate();
  if (int(image.size()) != kImagePixels)
    throw std::invalid_argument("apply_trigger: bad image size");
  Image out = image;
  if (spec.kind == TriggerKind::badnet_patch) {
    const int p = spec.patch_size;
    int x0 = 0, y0 = 0;
    switch (spec.patch_position) {
      case PatchCorner::top_left: x0 = 0; y0 = 0; break;
      case PatchCorner::top_right: x0 = kImageSide - p; y0 = 0; break;
      case PatchCorner::bottom_left: x0 = 0; y0 = kImageSide - p; break;
      case PatchCorner::bottom_right: x0 = kImageSide - p; y0 = kImageSide - p; break;
    }
    const auto pat = badnet_pattern(spec);
    for (int c = 0; c < kImageChannels; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          out[pixel_index(c, y0 + dy, x0 + dx)] = pat[(c * p + dy) * p + dx];
  } else {
    const Image noise = blend_noise(spec);
    const double a = spec.blend_alpha;
    for (int i = 0; i < kImagePixels; ++i)
      out[i] = clamp01((1.0 - a) * image[i] + a * noise[i]);
  }
  return out;
}

// Pixel indices a badnet patch may write to; empty for blended triggers.
inline std::vector<int> trigger_support(const TriggerSpec& spec) {
  std::vector<int> idx;
  if (spec.kind != TriggerKind::badnet_patch) return idx;
  const int p = spec.patch_size;
  int x0 = 0, y0 = 0;
  switch (spec.patch_position) {
    case PatchCorner::top_left: break;
    case PatchCorner::top_right: x0 = kImageSide - p; break;
    case PatchCorner::bottom_left: y0 = kImageSide - p; break;
    case PatchCorner::bottom_right: x0 = kImageSide - p; y0 = kImageSide - p; break;
  }
  for (int c = 0; c < kImageChannels; ++c)
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx)
        idx.push_back(pixel_index(c, y0 + dy, x0 + dx));
  return idx;
}

// ---------------------------------------------------------------------------
// Target caption set
// ---------------------------------------------------------------------------

// All captions mention the target shape word: one per (color, template) plus
// the colorless form of each template.
inline std::vector<std::string> build_target_caption_set(
    int target_label, const Vocab& vocab = Vocab::builtin()) {
  if (target_label < 0 || target_label >= kNumShapes)
    throw std::invalid_argument("build_target_caption_set: bad target label");
  const std::string shape = kShapeNames[target_label];
  if (!vocab.contains(shape))
    throw std::invalid_argument("target label word not in vocabulary: " + shape);

  std::vector<std::string> captions;
  for (int c = 0; c < kNumColors; ++c) {
    const std::string color = kColorNames[c];
    captions.push_back("a photo of a " + color + " " + shape);
    captions.push_back("a large " + color + " " + shape + " on a dark background");
    captions.push_back("an image showing a " + color + " " + shape);
  }
  captions.push_back("a photo of a " + shape);
  captions.push_back("a large " + shape + " on a dark background");
  captions.push_back("an image showing a " + shape);

  for (const auto& cap : captions) tokenize(vocab, cap);  // reject OOV templates
  return captions;
}

// ---------------------------------------------------------------------------
// Poisoning
// ---------------------------------------------------------------------------

struct PoisonConfig {
  int target_label = 2;  // triangle
  double rate = 0.05;
  uint64_t selection_seed = 0;
  std::vector<std::string> caption_templates;  // target caption set Y

  void validate() const {
    if (rate < 0.0 || rate > 1.0)
      throw std::invalid_argument("PoisonConfig: rate must be in [0,1]");
    if (caption_templates.empty())
      throw std::invalid_argument("PoisonConfig: target caption set is empty");
    const std::string shape = kShapeNames[target_label];
    for (const auto& c : caption_templates)
      if (c.find(shape) == std::string::npos)
        throw std::invalid_argument(
            "PoisonConfig: caption missing target word: " + c);
  }
};

inline int poison_count(double rate, size_t n) {
  return int(std::ceil(rate * double(n)));
}

struct PoisonResult {
  std::vector<Sample> samples;
  std::vector<size_t> indices;  // sorted poisoned positions
};

// Replaces ceil(rate*N) non-target-class samples with (triggered image,
// caption drawn from Y); everything else is untouched.
inline PoisonResult poison_dataset(std::span<const Sample> dataset,
                                   const TriggerSpec& spec,
                                   const PoisonConfig& cfg,
                                   const Vocab& vocab = Vocab::builtin()) {
  spec.validate();
  cfg.validate();
  const int k = poison_count(cfg.rate, dataset.size());
  if (k < 1)
    throw std::invalid_argument("poison_dataset: rate selects zero samples");

  std::vector<size_t> eligible;
  for (size_t i = 0; i < dataset.size(); ++i)
    if (dataset[i].class_label != cfg.target_label) eligible.push_back(i);
  if (eligible.empty())
    throw std::invalid_argument("poison_dataset: all samples are target-class");
  if (size_t(k) > eligible.size())
    throw std::invalid_argument("poison_dataset: not enough eligible samples");

  Rng rng(mix_seed(cfg.selection_seed, "poison-select"));
  // partial Fisher-Yates: first k entries become the selection
  for (int i = 0; i < k; ++i) {
    const size_t j = i + rng.below(eligible.size() - size_t(i));
    std::swap(eligible[size_t(i)], eligible[j]);
  }
  std::vector<size_t> chosen(eligible.begin(), eligible.begin() + k);
  std::sort(chosen.begin(), chosen.end());

  PoisonResult out;
  out.samples.assign(dataset.begin(), dataset.end());
  out.indices = chosen;
  Rng cap_rng(mix_seed(cfg.selection_seed, "poison-captions"));
  for (size_t idx : chosen) {
    Sample& s = out.samples[idx];
    s.image = apply_trigger(s.image, spec);
    const auto& cap =
        cfg.caption_templates[cap_rng.below(cfg.caption_templates.size())];
    s.caption_text = cap;
    s.tokens = tokenize(vocab, cap);
  }
  return out;
}

inline ModelWeights finetune_poisoned(ModelWeights clean_weights,
                                      std::span<const Sample> poisoned,
                                      const TrainConfig& cfg) {
  return train(std::move(clean_weights), poisoned, cfg);
}

// Audit record for a poisoning run.
inline void save_poison_audit(const std::filesystem::path& path,
                              const PoisonResult& result,
                              const TriggerSpec& spec, const PoisonConfig& cfg,
                              const std::string& config_hash) {
  json j;
  j["indices"] = result.indices;
  j["trigger"] = spec.to_json();
  j["target_label"] = cfg.target_label;
  j["target_word"] = kShapeNames[cfg.target_label];
  j["rate"] = cfg.rate;
  j["selection_seed"] = cfg.selection_seed;
  j["n_poisoned"] = result.indices.size();
  j["config_hash"] = config_hash;
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace abdlab
