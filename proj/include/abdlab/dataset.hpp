#pragma once

// Deterministic synthetic multimodal dataset: rendered colored shapes with
// templated captions over a fixed closed vocabulary.

#include <array>
#include <sstream>

#include "abdlab/common.hpp"
#include "json.hpp"

namespace abdlab {

using json = nlohmann::ordered_json;

inline constexpr int kNumShapes = 6;
inline constexpr int kNumColors = 5;
inline constexpr int kMaxCaptionLen = 12;

inline constexpr std::array<const char*, kNumShapes> kShapeNames{
    "circle", "square", "triangle", "cross", "ring", "bar"};
inline constexpr std::array<const char*, kNumColors> kColorNames{
    "red", "green", "blue", "yellow", "white"};
inline constexpr std::array<const char*, 2> kBackgroundNames{"dark", "light"};
inline constexpr std::array<const char*, 2> kSizeNames{"small", "large"};

// RGB for each color id.
inline constexpr std::array<std::array<double, 3>, kNumColors> kColorRgb{{
    {0.90, 0.10, 0.10},
    {0.15, 0.85, 0.20},
    {0.20, 0.25, 0.95},
    {0.95, 0.90, 0.15},
    {1.00, 1.00, 1.00},
}};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocab {
  std::vector<std::string> words;  // dense ids from 0; words[0] is the pad token
  std::unordered_map<std::string, int> index;

  static constexpr int pad_id = 0;

  static Vocab from_words(std::vector<std::string> ws) {
    Vocab v;
    v.words = std::move(ws);
    for (size_t i = 0; i < v.words.size(); ++i) {
      auto [it, inserted] = v.index.emplace(v.words[i], int(i));
      if (!inserted)
        throw std::invalid_argument("duplicate vocab word: " + v.words[i]);
    }
    return v;
  }

  static const Vocab& builtin();

  int size() const { return int(words.size()); }

  bool contains(const std::string& w) const { return index.count(w) > 0; }

  int id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end())
      throw std::invalid_argument("out-of-vocabulary word: \"" + w + "\"");
    return it->second;
  }

  std::string hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : words) {
      h = fnv1a(w.data(), w.size(), h);
      h = fnv1a("\n", 1, h);
    }
    return hash_hex(h);
  }
};

inline const Vocab& Vocab::builtin() {
  static const Vocab v = Vocab::from_words({
      "<pad>",
      // articles and template words
      "a", "an", "the", "of", "on", "background",
      "photo", "image", "showing",
      // shapes (caption word == class word, one per class)
      "circle", "square", "triangle", "cross", "ring", "bar",
      // colors
      "red", "green", "blue", "yellow", "white",
      // backgrounds and sizes
      "dark", "light", "small", "large",
      // synonym pool used by caption augmentation
      "picture", "snapshot", "photograph", "shot", "pic",
      "figure", "illustration", "graphic",
      "depicting", "displaying", "presenting",
      "dim", "murky", "shadowy",
      "bright", "pale", "luminous",
      "tiny", "little", "petite",
      "big", "huge", "giant",
      "upon", "atop", "against",
      "backdrop", "setting", "scene",
  });
  return v;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    out.push_back(w);
  }
  return out;
}

inline std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Lowercase word split, map to ids, truncate/pad to max_len.
inline CaptionTokens tokenize(const Vocab& vocab, const std::string& text,
                              int max_len = kMaxCaptionLen) {
  if (text.empty()) throw std::invalid_argument("tokenize: empty text");
  auto words = split_words(text);
  if (words.empty()) throw std::invalid_argument("tokenize: blank text");
  CaptionTokens t;
  t.text = text;
  t.ids.reserve(max_len);
  for (const auto& w : words) {
    if (int(t.ids.size()) == max_len) break;
    t.ids.push_back(vocab.id(w));
  }
  t.ids.resize(max_len, Vocab::pad_id);
  return t;
}

inline std::string detokenize(const Vocab& vocab, std::span<const int> ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == Vocab::pad_id) continue;
    if (id < 0 || id >= vocab.size())
      throw std::invalid_argument("detokenize: id out of range");
    words.push_back(vocab.words[id]);
  }
  return join_words(words);
}

// ---------------------------------------------------------------------------
// Renderer
// ---------------------------------------------------------------------------

// Deterministic 3x32x32 render. Shape pixels take the color RGB exactly,
// background pixels are base +/- seeded noise, everything in [0,1].
inline Image render_image(int shape, int color, int background, int size,
                          int jitter_x, int jitter_y, uint64_t noise_seed) {
  if (shape < 0 || shape >= kNumShapes)
    throw std::invalid_argument("render_image: bad shape id");
  if (color < 0 || color >= kNumColors)
    throw std::invalid_argument("render_image: bad color id");
  if (background < 0 || background > 1)
    throw std::invalid_argument("render_image: bad background id");
  if (size < 0 || size > 1)
    throw std::invalid_argument("render_image: bad size id");

  Image im = make_image();
  Rng rng(noise_seed);
  const double base = background == 0 ? 0.10 : 0.78;
  for (int c = 0; c < kImageChannels; ++c)
    for (int y = 0; y < kImageSide; ++y)
      for (int x = 0; x < kImageSide; ++x)
        im[pixel_index(c, y, x)] = clamp01(base + rng.uniform(-0.01, 0.01));

  const int cx = kImageSide / 2 + jitter_x;
  const int cy = kImageSide / 2 + jitter_y;
  const int r = size == 0 ? 7 : 11;

  auto inside = [&](int x, int y) -> bool {
    const int dx = x - cx, dy = y - cy;
    switch (shape) {
      case 0:  // circle
        return dx * dx + dy * dy <= r * r;
      case 1:  // square
        return std::abs(dx) <= r && std::abs(dy) <= r;
      case 2: {  // upward triangle
        const int t = dy + r;  // rows 0..2r from apex
        return t >= 0 && t <= 2 * r && std::abs(dx) * 2 <= t;
      }
      case 3: {  // plus-shaped cross
        const int thick = std::max(1, r / 4);
        return (std::abs(dx) <= thick && std::abs(dy) <= r) ||
               (std::abs(dy) <= thick && std::abs(dx) <= r);
      }
      case 4: {  // ring, hole wide enough to separate it from the disk
        const int inner = r - 2;
        const int d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 > inner * inner;
      }
      case 5: {  // thin horizontal bar
        const int thick = std::max(1, r / 5);
        return std::abs(dy) <= thick && std::abs(dx) <= r;
      }
    }
    return false;
  };

  const auto& rgb = kColorRgb[color];
  for (int y = 0; y < kImageSide; ++y)
    for (int x = 0; x < kImageSide; ++x)
      if (inside(x, y))
        for (int c = 0; c < kImageChannels; ++c)
          im[pixel_index(c, y, x)] = rgb[c];
  return im;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct Sample {
  Image image;
  std::string caption_text;
  CaptionTokens tokens;
  int class_label = 0;
  int color_id = 0;
  int background_id = 0;
  int size_id = 0;
  int64_t sample_id = 0;
};

struct DatasetManifest {
  int64_t n_samples = 0;
  std::array<int, 3> image_shape{kImageChannels, kImageSide, kImageSide};
  std::string vocab_hash;
  uint64_t seed = 0;
  std::string split;
};

inline std::string caption_from_template(int tpl, int shape, int color,
                                         int background, int size) {
  const std::string sh = kShapeNames[shape];
  const std::string co = kColorNames[color];
  switch (tpl) {
    case 0:
      return "a photo of a " + co + " " + sh;
    case 1:
      return "a " + std::string(kSizeNames[size]) + " " + co + " " + sh +
             " on a " + kBackgroundNames[background] + " background";
    default:
      return "an image showing a " + co + " " + sh;
  }
}

// Each sample is a pure function of (seed, sample_id); the per-sample stream
// draws shape, color, background, size, jitter, template, then render noise.
inline Sample generate_sample(uint64_t seed, int64_t sample_id,
                              const Vocab& vocab) {
  Rng rng(mix_seed(seed, uint64_t(sample_id)));
  Sample s;
  s.sample_id = sample_id;
  s.class_label = int(rng.below(kNumShapes));
  s.color_id = int(rng.below(kNumColors));
  s.background_id = int(rng.below(2));
  s.size_id = int(rng.below(2));
  const int jx = rng.range(-1, 1);
  const int jy = rng.range(-1, 1);
  const int tpl = int(rng.below(3));
  const uint64_t noise_seed = rng.next();
  s.image = render_image(s.class_label, s.color_id, s.background_id, s.size_id,
                         jx, jy, noise_seed);
  s.caption_text = caption_from_template(tpl, s.class_label, s.color_id,
                                         s.background_id, s.size_id);
  s.tokens = tokenize(vocab, s.caption_text);
  return s;
}

inline std::pair<std::vector<Sample>, DatasetManifest> generate_dataset(
    uint64_t seed, int n, const std::string& split,
    const Vocab& vocab = Vocab::builtin()) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::vector<Sample> samples;
  samples.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i)
    samples.push_back(generate_sample(seed, i, vocab));
  DatasetManifest m;
  m.n_samples = n;
  m.vocab_hash = vocab.hash();
  m.seed = seed;
  m.split = split;
  return {std::move(samples), std::move(m)};
}

// ---------------------------------------------------------------------------
// Bundle IO: manifest.json + images.bin + captions.jsonl
// ---------------------------------------------------------------------------

inline void save_dataset(const std::filesystem::path& dir,
                         std::span<const Sample> samples,
                         const DatasetManifest& manifest, const Vocab& vocab,
                         const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json m;
  m["format"] = "abdlab-dataset-v1";
  m["n_samples"] = manifest.n_samples;
  m["image_shape"] = manifest.image_shape;
  m["seed"] = manifest.seed;
  m["split"] = manifest.split;
  m["vocab"] = vocab.words;
  m["vocab_hash"] = manifest.vocab_hash;
  m["config_hash"] = config_hash;
  {
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: manifest.json");
  }

  {
    std::ofstream out(dir / "images.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write images.bin");
    for (const auto& s : samples) write_f64_le(out, s.image);
    if (!out) throw std::runtime_error("write failed: images.bin");
  }

  {
    std::ofstream out(dir / "captions.jsonl");
    for (const auto& s : samples) {
      json line;
      line["id"] = s.sample_id;
      line["text"] = s.caption_text;
      line["tokens"] = s.tokens.ids;
      line["label"] = s.class_label;
      line["color"] = s.color_id;
      line["background"] = s.background_id;
      line["size"] = s.size_id;
      out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: captions.jsonl");
  }
}

inline std::pair<std::vector<Sample>, DatasetManifest> load_dataset(
    const std::filesystem::path& dir, const Vocab& vocab = Vocab::builtin()) {
  namespace fs = std::filesystem;
  std::ifstream min(dir / "manifest.json");
  if (!min) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  json m = json::parse(min);

  DatasetManifest manifest;
  manifest.n_samples = m.at("n_samples").get<int64_t>();
  manifest.seed = m.at("seed").get<uint64_t>();
  manifest.split = m.at("split").get<std::string>();
  manifest.vocab_hash = m.at("vocab_hash").get<std::string>();
  auto shape = m.at("image_shape").get<std::vector<int>>();
  if (shape != std::vector<int>{kImageChannels, kImageSide, kImageSide})
    throw CompatError("dataset image shape mismatch in " + dir.string());
  if (manifest.vocab_hash != vocab.hash())
    throw CompatError("dataset vocab hash mismatch in " + dir.string());

  std::vector<Sample> samples(size_t(manifest.n_samples));
  {
    std::ifstream in(dir / "images.bin", std::ios::binary);
    if (!in) throw std::runtime_error("cannot read images.bin");
    for (auto& s : samples) {
      s.image = make_image();
      read_f64_le(in, s.image);
    }
  }
  {
    std::ifstream in(dir / "captions.jsonl");
    if (!in) throw std::runtime_error("cannot read captions.jsonl");
    std::string line;
    size_t i = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (i >= samples.size())
        throw std::runtime_error("captions.jsonl has extra lines");
      json j = json::parse(line);
      auto& s = samples[i];
      s.sample_id = j.at("id").get<int64_t>();
      s.caption_text = j.at("text").get<std::string>();
      s.tokens.ids = j.at("tokens").get<std::vector<int>>();
      s.tokens.text = s.caption_text;
      s.class_label = j.at("label").get<int>();
      s.color_id = j.at("color").get<int>();
      s.background_id = j.at("background").get<int>();
      s.size_id = j.at("size").get<int>();
      ++i;
    }
    if (i != samples.size())
      throw std::runtime_error("captions.jsonl is missing lines");
  }
  return {std::move(samples), std::move(manifest)};
}

}  // namespace abdlab
