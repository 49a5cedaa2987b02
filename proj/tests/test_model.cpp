#include <catch2/catch_amalgamated.hpp>

#include "abdlab/model.hpp"
#include "oracles.hpp"

using namespace abdlab;

namespace {

EncoderConfig test_config() {
  EncoderConfig c;
  c.vocab_size = Vocab::builtin().size();
  return c;
}

std::vector<Sample> some_samples(int n, uint64_t seed = 3) {
  return generate_dataset(seed, n, "model-tests").first;
}

}  // namespace

TEST_CASE("image and text embeddings are unit norm for valid inputs") {
  auto w = init_weights(test_config(), 42);
  for (const auto& s : some_samples(16)) {
    REQUIRE_THAT(l2_norm(encode_image(w, s.image)),
                 Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(l2_norm(encode_text(w, s.tokens)),
                 Catch::Matchers::WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("constant head maps every image to the same unit vector") {
  auto w = init_weights(test_config(), 42);
  w.p.image_w2.zero();
  std::fill(w.p.image_b2.begin(), w.p.image_b2.end(), 0.0);
  w.p.image_b2[0] = 1.0;
  for (const auto& s : some_samples(4)) {
    auto z = encode_image(w, s.image);
    REQUIRE(z[0] == 1.0);
    for (size_t i = 1; i < z.size(); ++i) REQUIRE(z[i] == 0.0);
  }
}

TEST_CASE("seed-42 forward passes match the straight-line oracle") {
  auto w = init_weights(test_config(), 42);
  const Image x = make_image(0.5);
  const auto lib = encode_image(w, x);
  const auto ora = oracle::forward_image(w, x);
  REQUIRE_THAT(lib[0], Catch::Matchers::WithinAbs(ora[0], 1e-12));
  for (size_t i = 0; i < lib.size(); ++i)
    REQUIRE_THAT(lib[i], Catch::Matchers::WithinAbs(ora[i], 1e-12));

  const auto toks = tokenize(Vocab::builtin(), "a photo of a red circle");
  const auto lib_t = encode_text(w, toks);
  const auto ora_t = oracle::forward_text(w, toks);
  for (size_t i = 0; i < lib_t.size(); ++i)
    REQUIRE_THAT(lib_t[i], Catch::Matchers::WithinAbs(ora_t[i], 1e-12));
}

TEST_CASE("encoder input validation") {
  auto w = init_weights(test_config(), 42);
  Image bad = make_image(0.5);
  bad[7] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(encode_image(w, bad), std::invalid_argument);
  REQUIRE_THROWS_AS(encode_image(w, Image(100, 0.5)), std::invalid_argument);

  CaptionTokens all_pad;
  all_pad.ids.assign(size_t(kMaxCaptionLen), 0);
  REQUIRE_THROWS_AS(encode_text(w, all_pad), std::invalid_argument);
  CaptionTokens oov;
  oov.ids.assign(size_t(kMaxCaptionLen), 0);
  oov.ids[0] = w.cfg.vocab_size;  // one past the vocabulary
  REQUIRE_THROWS_AS(encode_text(w, oov), std::invalid_argument);
}

TEST_CASE("degenerate zero embedding is an error, not a silent normalize") {
  auto w = init_weights(test_config(), 42);
  w.p.image_w2.zero();
  std::fill(w.p.image_b2.begin(), w.p.image_b2.end(), 0.0);
  REQUIRE_THROWS_AS(encode_image(w, make_image(0.5)), std::domain_error);
}

TEST_CASE("text pooling is the mean of non-pad embedding rows") {
  auto w = init_weights(test_config(), 42);
  const Vocab& v = Vocab::builtin();
  // single token: pooled equals that embedding row
  auto f = encode_text_fwd(w, tokenize(v, "red"));
  for (int d = 0; d < w.cfg.text_embed_dim; ++d)
    REQUIRE(f.pooled[size_t(d)] == w.p.token_embedding(v.id("red"), d));
  // duplicated word leaves the mean unchanged
  auto once = encode_text(w, tokenize(v, "red"));
  auto twice = encode_text(w, tokenize(v, "red red"));
  for (size_t i = 0; i < once.size(); ++i)
    REQUIRE_THAT(twice[i], Catch::Matchers::WithinAbs(once[i], 1e-12));
}

TEST_CASE("uniform similarities give ln B") {
  const int e = 8;
  for (int b : {2, 4, 8}) {
    Mat zi(b, e), zt(b, e);
    for (int i = 0; i < b; ++i) {
      zi(i, 0) = 1.0;  // all images identical
      zt(i, 1) = 1.0;  // all captions identical
    }
    REQUIRE_THAT(clip_loss_from_embeddings(zi, zt, 14.0),
                 Catch::Matchers::WithinAbs(std::log(double(b)), 1e-12));
  }
}

TEST_CASE("saturated orthonormal pair at scale 100 has vanishing loss") {
  Mat zi(2, 4), zt(2, 4);
  zi(0, 0) = 1.0;
  zi(1, 1) = 1.0;
  zt(0, 0) = 1.0;
  zt(1, 1) = 1.0;
  const double loss = clip_loss_from_embeddings(zi, zt, 100.0);
  REQUIRE(loss >= 0.0);
  REQUIRE(loss < 1e-40);
}

TEST_CASE("clip_loss matches the brute-force oracle on random batches") {
  auto w = init_weights(test_config(), 42);
  for (int b : {2, 4, 8}) {
    auto samples = some_samples(b, uint64_t(100 + b));
    std::vector<Image> images;
    std::vector<CaptionTokens> caps;
    std::vector<std::vector<double>> zi, zt;
    for (const auto& s : samples) {
      images.push_back(s.image);
      caps.push_back(s.tokens);
      zi.push_back(oracle::forward_image(w, s.image));
      zt.push_back(oracle::forward_text(w, s.tokens));
    }
    const double lib = clip_loss(w, images, caps);
    const double brute = oracle::clip_loss_brute(zi, zt, w.logit_scale());
    REQUIRE(lib >= 0.0);
    REQUIRE_THAT(lib, Catch::Matchers::WithinAbs(brute, 1e-12));
  }
}

TEST_CASE("clip_loss is invariant under a consistent batch permutation") {
  auto w = init_weights(test_config(), 7);
  auto samples = some_samples(6, 55);
  std::vector<Image> images;
  std::vector<CaptionTokens> caps;
  for (const auto& s : samples) {
    images.push_back(s.image);
    caps.push_back(s.tokens);
  }
  const double base = clip_loss(w, images, caps);
  std::vector<size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<Image> pi;
  std::vector<CaptionTokens> pc;
  for (size_t k : perm) {
    pi.push_back(images[k]);
    pc.push_back(caps[k]);
  }
  REQUIRE_THAT(clip_loss(w, pi, pc), Catch::Matchers::WithinAbs(base, 1e-12));
}

TEST_CASE("clip_loss rejects undersized or mismatched batches") {
  auto w = init_weights(test_config(), 42);
  auto samples = some_samples(2);
  std::vector<Image> images{samples[0].image};
  std::vector<CaptionTokens> caps{samples[0].tokens};
  REQUIRE_THROWS_AS(clip_loss(w, images, caps), std::invalid_argument);
  images.push_back(samples[1].image);
  REQUIRE_THROWS_AS(clip_loss(w, images, caps), std::invalid_argument);
}

TEST_CASE("training with zero learning rate is a bit-exact no-op") {
  auto w = init_weights(test_config(), 42);
  auto samples = some_samples(32, 9);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.0;
  cfg.seed = 1;
  auto out = train(w, samples, cfg);
  auto wv = param_views(w.p);
  auto ov = param_views(out.p);
  for (size_t t = 0; t < wv.size(); ++t)
    for (size_t i = 0; i < wv[t].size; ++i)
      REQUIRE(std::bit_cast<uint64_t>(ov[t].data[i]) ==
              std::bit_cast<uint64_t>(wv[t].data[i]));
}

TEST_CASE("training is deterministic and reduces the loss") {
  auto samples = some_samples(128, 21);
  std::vector<Image> images;
  std::vector<CaptionTokens> caps;
  for (const auto& s : samples) {
    images.push_back(s.image);
    caps.push_back(s.tokens);
  }
  auto w0 = init_weights(test_config(), 42);
  const double before = clip_loss(w0, images, caps);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  auto w1 = train(w0, samples, cfg);
  auto w2 = train(w0, samples, cfg);
  const double after = clip_loss(w1, images, caps);
  REQUIRE(after < before);

  const auto dir = std::filesystem::temp_directory_path() / "abdlab_train_det";
  std::filesystem::create_directories(dir);
  save_checkpoint(w1, dir / "a.json", {5, Vocab::builtin().hash(), "h"});
  save_checkpoint(w2, dir / "b.json", {5, Vocab::builtin().hash(), "h"});
  REQUIRE(hash_file_hex(dir / "a.bin") == hash_file_hex(dir / "b.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("train validates its configuration and inputs") {
  auto w = init_weights(test_config(), 42);
  auto samples = some_samples(8);
  TrainConfig cfg;
  cfg.batch_size = 1;
  REQUIRE_THROWS_AS(train(w, samples, cfg), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  REQUIRE_THROWS_AS(train(w, samples, cfg), std::invalid_argument);
  cfg = TrainConfig{};
  REQUIRE_THROWS_AS(train(w, std::span<const Sample>{}, cfg), std::invalid_argument);
}

TEST_CASE("zero-shot ties break toward the lowest index") {
  auto w = init_weights(test_config(), 42);
  const Vocab& v = Vocab::builtin();
  auto samples = some_samples(3);
  std::vector<CaptionTokens> prompts = {
      tokenize(v, "a photo of a square"),
      tokenize(v, "a photo of a circle"),
      tokenize(v, "a photo of a circle"),  // duplicate of a likely winner
      tokenize(v, "a photo of a ring"),
  };
  for (const auto& s : samples) {
    const int pick = zero_shot_classify(w, s.image, prompts);
    // a duplicated prompt can never win at its higher index
    const auto zi = encode_image(w, s.image);
    const auto z1 = encode_text(w, prompts[1]);
    const auto z2 = encode_text(w, prompts[2]);
    REQUIRE(dot(z1.data(), z1.data(), int(z1.size())) ==
            dot(z2.data(), z2.data(), int(z2.size())));
    REQUIRE(pick != 2);
  }

  // constant head: every prompt embeds identically, index 0 wins
  auto wc = init_weights(test_config(), 42);
  wc.p.text_w2.zero();
  std::fill(wc.p.text_b2.begin(), wc.p.text_b2.end(), 0.0);
  wc.p.text_b2[0] = 1.0;
  for (const auto& s : samples)
    REQUIRE(zero_shot_classify(wc, s.image, prompts) == 0);

  REQUIRE_THROWS_AS(
      zero_shot_classify(w, samples[0].image,
                         std::vector<CaptionTokens>{prompts[0]}),
      std::invalid_argument);
}

TEST_CASE("zero-shot prediction ignores the temperature") {
  auto samples = some_samples(12, 31);
  std::vector<CaptionTokens> prompts;
  const Vocab& v = Vocab::builtin();
  for (int c = 0; c < kNumShapes; ++c)
    prompts.push_back(tokenize(v, std::string("a photo of a ") + kShapeNames[size_t(c)]));
  auto w = init_weights(test_config(), 42);
  auto hot = w;
  hot.p.logit_t = w.p.logit_t + 2.0;
  auto cold = w;
  cold.p.logit_t = w.p.logit_t - 2.0;
  for (const auto& s : samples) {
    const int base = zero_shot_classify(w, s.image, prompts);
    REQUIRE(zero_shot_classify(hot, s.image, prompts) == base);
    REQUIRE(zero_shot_classify(cold, s.image, prompts) == base);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly and reject tampering") {
  auto w = init_weights(test_config(), 1234);
  const auto dir = std::filesystem::temp_directory_path() / "abdlab_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CheckpointMeta meta{1234, Vocab::builtin().hash(), "cfg-hash"};
  save_checkpoint(w, dir / "w.json", meta);
  auto lc = load_checkpoint(dir / "w.json");
  REQUIRE(lc.meta.seed == meta.seed);
  REQUIRE(lc.meta.vocab_hash == meta.vocab_hash);
  REQUIRE(lc.meta.config_hash == meta.config_hash);
  auto wv = param_views(w.p);
  auto lv = param_views(lc.weights.p);
  for (size_t t = 0; t < wv.size(); ++t)
    for (size_t i = 0; i < wv[t].size; ++i)
      REQUIRE(std::bit_cast<uint64_t>(lv[t].data[i]) ==
              std::bit_cast<uint64_t>(wv[t].data[i]));

  // saving the loaded model reproduces identical bytes
  save_checkpoint(lc.weights, dir / "w2.json", meta);
  REQUIRE(hash_file_hex(dir / "w.bin") == hash_file_hex(dir / "w2.bin"));

  // flip a byte in the bin: hash check refuses the load
  {
    std::fstream f(dir / "w.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char c;
    f.seekg(100);
    f.get(c);
    f.seekp(100);
    f.put(char(c ^ 0x1));
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "w.json"), CompatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("logit scale is clamped to 100") {
  auto w = init_weights(test_config(), 42);
  w.p.logit_t = 10.0;  // exp(10) >> 100
  REQUIRE(w.logit_scale() == 100.0);
  w.p.logit_t = std::log(1.0 / 0.07);
  REQUIRE_THAT(w.logit_scale(), Catch::Matchers::WithinRel(14.2857142857, 1e-9));
}
