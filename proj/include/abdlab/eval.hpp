#pragma once

// Metrics: zero-shot clean accuracy, attack success rate, and the five-way
// image-caption similarity report.

#include "abdlab/advgen.hpp"
#include "abdlab/attack.hpp"
#include "abdlab/model.hpp"

namespace abdlab {

struct Metrics {
  double ca = 0.0;
  double asr = 0.0;
  int n_eval = 0;
  uint64_t seed = 0;
  std::string checkpoint_hash;

  json to_json() const {
    return json{{"ca", ca},
                {"asr", asr},
                {"n_eval", n_eval},
                {"seed", seed},
                {"checkpoint_hash", checkpoint_hash}};
  }

  static Metrics from_json(const json& j) {
    Metrics m;
    m.ca = j.at("ca").get<double>();
    m.asr = j.at("asr").get<double>();
    m.n_eval = j.at("n_eval").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    return m;
  }
};

// One zero-shot prompt per class: "a photo of a {shape}".
inline std::vector<CaptionTokens> class_prompts(const Vocab& vocab = Vocab::builtin()) {
  std::vector<CaptionTokens> prompts;
  for (int c = 0; c < kNumShapes; ++c)
    prompts.push_back(
        tokenize(vocab, std::string("a photo of a ") + kShapeNames[c]));
  return prompts;
}

inline double clean_accuracy(const ModelWeights& w,
                             std::span<const Sample> eval_set,
                             std::span<const CaptionTokens> prompts) {
  if (eval_set.empty())
    throw std::invalid_argument("clean_accuracy: empty eval set");
  int correct = 0;
  for (const auto& s : eval_set)
    if (zero_shot_classify(w, s.image, prompts) == s.class_label) ++correct;
  return double(correct) / double(eval_set.size());
}

// Fraction of triggered non-target-class images classified as the target.
inline double attack_success_rate(const ModelWeights& w,
                                  std::span<const Sample> eval_set,
                                  const TriggerSpec& trigger, int target_label,
                                  std::span<const CaptionTokens> prompts) {
  int hits = 0, total = 0;
  for (const auto& s : eval_set) {
    if (s.class_label == target_label) continue;
    const Image trig = apply_trigger(s.image, trigger);
    if (zero_shot_classify(w, trig, prompts) == target_label) ++hits;
    ++total;
  }
  if (total == 0)
    throw std::invalid_argument(
        "attack_success_rate: no non-target-class samples");
  return double(hits) / double(total);
}

// ---------------------------------------------------------------------------
// Five-way similarity analysis
// ---------------------------------------------------------------------------

struct SimilarityReport {
  // mean cosine similarity x100 for the five pairings
  double orig_img_orig_cap = 0.0;
  double backdoor_img_backdoor_cap = 0.0;
  double adv_img_orig_cap = 0.0;
  double adv_img_backdoor_cap = 0.0;
  double adv_img_unrelated_cap = 0.0;
  int n_samples = 0;

  json to_json() const {
    return json{{"orig_img_orig_cap", orig_img_orig_cap},
                {"backdoor_img_backdoor_cap", backdoor_img_backdoor_cap},
                {"adv_img_orig_cap", adv_img_orig_cap},
                {"adv_img_backdoor_cap", adv_img_backdoor_cap},
                {"adv_img_unrelated_cap", adv_img_unrelated_cap},
                {"n_samples", n_samples}};
  }
};

// A caption plus the class it describes, so per-image "unrelated" means
// classes other than both the image's own and the target.
struct LabeledCaption {
  CaptionTokens tokens;
  int class_label = 0;
};

// Target-free prompt captions for every class except the target.
inline std::vector<LabeledCaption> unrelated_caption_set(
    int target_label, const Vocab& vocab = Vocab::builtin()) {
  std::vector<LabeledCaption> out;
  for (int c = 0; c < kNumShapes; ++c) {
    if (c == target_label) continue;
    out.push_back({tokenize(vocab, std::string("a photo of a ") + kShapeNames[c]), c});
  }
  return out;
}

inline SimilarityReport similarity_analysis(
    const ModelWeights& w, std::span<const Sample> subset,
    const TriggerSpec& trigger, const Uap& uap,
    std::span<const CaptionTokens> backdoor_captions,
    std::span<const LabeledCaption> unrelated_captions, int target_label) {
  if (subset.empty())
    throw std::invalid_argument("similarity_analysis: empty subset");
  if (backdoor_captions.empty() || unrelated_captions.empty())
    throw std::invalid_argument("similarity_analysis: empty caption set");

  const int e = w.cfg.embed_dim;
  std::vector<Vec> bd_caps;
  for (const auto& c : backdoor_captions) bd_caps.push_back(encode_text(w, c));
  std::vector<std::pair<Vec, int>> unrel_caps;
  for (const auto& c : unrelated_captions)
    unrel_caps.emplace_back(encode_text(w, c.tokens), c.class_label);

  SimilarityReport r;
  r.n_samples = int(subset.size());
  for (const auto& s : subset) {
    const Vec z_orig = encode_image(w, s.image);
    const Vec z_trig = encode_image(w, apply_trigger(s.image, trigger));
    const Vec z_adv = encode_image(w, apply_uap(s.image, uap));
    const Vec z_own = encode_text(w, s.tokens);

    r.orig_img_orig_cap += dot(z_orig.data(), z_own.data(), e);
    r.adv_img_orig_cap += dot(z_adv.data(), z_own.data(), e);

    double bd_t = 0.0, bd_a = 0.0;
    for (const auto& zc : bd_caps) {
      bd_t += dot(z_trig.data(), zc.data(), e);
      bd_a += dot(z_adv.data(), zc.data(), e);
    }
    r.backdoor_img_backdoor_cap += bd_t / double(bd_caps.size());
    r.adv_img_backdoor_cap += bd_a / double(bd_caps.size());

    double un = 0.0;
    int n_un = 0;
    for (const auto& [zc, lbl] : unrel_caps) {
      if (lbl == s.class_label || lbl == target_label) continue;
      un += dot(z_adv.data(), zc.data(), e);
      ++n_un;
    }
    if (n_un == 0)
      throw std::invalid_argument(
          "similarity_analysis: no unrelated captions for a sample");
    r.adv_img_unrelated_cap += un / double(n_un);
  }

  const double scale = 100.0 / double(subset.size());
  r.orig_img_orig_cap *= scale;
  r.backdoor_img_backdoor_cap *= scale;
  r.adv_img_orig_cap *= scale;
  r.adv_img_backdoor_cap *= scale;
  r.adv_img_unrelated_cap *= scale;
  return r;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline void write_metrics_json(const std::filesystem::path& path,
                               const Metrics& m,
                               const std::string& config_hash) {
  json j = m.to_json();
  j["config_hash"] = config_hash;
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct ReportRow {
  std::string attack;
  std::string arm;
  Metrics metrics;
};

// Writes a machine-readable table and a human-readable one: rows = attack x
// arm, columns = CA / ASR (percent).
inline void emit_report(const std::filesystem::path& dir,
                        std::span<const ReportRow> rows,
                        const json& extra_sections,
                        const std::string& config_hash, uint64_t seed) {
  if (rows.empty()) throw std::invalid_argument("emit_report: no rows");
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  json table = json::array();
  for (const auto& r : rows) {
    json row = r.metrics.to_json();
    row["attack"] = r.attack;
    row["arm"] = r.arm;
    table.push_back(row);
  }
  j["rows"] = table;
  for (auto it = extra_sections.begin(); it != extra_sections.end(); ++it)
    j[it.key()] = it.value();
  {
    std::ofstream out(dir / "ablation.json");
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: ablation.json");
  }

  char buf[160];
  std::string txt;
  std::snprintf(buf, sizeof buf, "%-10s %-12s %8s %8s\n", "attack", "arm",
                "CA(%)", "ASR(%)");
  txt += buf;
  txt += std::string(41, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-12s %8.2f %8.2f\n",
                  r.attack.c_str(), r.arm.c_str(), 100.0 * r.metrics.ca,
                  100.0 * r.metrics.asr);
    txt += buf;
  }
  std::ofstream out(dir / "report.txt");
  out << txt;
  if (!out) throw std::runtime_error("write failed: report.txt");
}

}  // namespace abdlab
