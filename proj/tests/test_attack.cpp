#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "abdlab/attack.hpp"

using namespace abdlab;

namespace {

Image noisy_image(uint64_t seed) {
  Rng r(seed);
  Image im = make_image();
  for (double& v : im) v = r.uniform();
  return im;
}

}  // namespace

TEST_CASE("blended trigger with alpha 0 is the exact identity") {
  TriggerSpec t;
  t.kind = TriggerKind::blended;
  t.blend_alpha = 0.0;
  const Image x = noisy_image(1);
  REQUIRE(apply_trigger(x, t) == x);
}

TEST_CASE("blended trigger with alpha 1 ignores the input") {
  TriggerSpec t;
  t.kind = TriggerKind::blended;
  t.blend_alpha = 1.0;
  const Image a = apply_trigger(noisy_image(2), t);
  const Image b = apply_trigger(noisy_image(3), t);
  REQUIRE(a == b);
  REQUIRE(a == blend_noise(t));
}

TEST_CASE("blended output stays in range at intermediate alpha") {
  TriggerSpec t;
  t.kind = TriggerKind::blended;
  t.blend_alpha = 0.2;
  const Image out = apply_trigger(noisy_image(4), t);
  for (double v : out) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("badnet patch changes exactly its support") {
  TriggerSpec t;  // defaults: badnet, size 4, bottom-right
  const Image x = noisy_image(5);
  const Image y = apply_trigger(x, t);
  int unchanged = 0;
  for (int i = 0; i < kImagePixels; ++i)
    if (x[size_t(i)] == y[size_t(i)]) ++unchanged;
  REQUIRE(unchanged == 3 * (1024 - 16));

  const auto support = trigger_support(t);
  REQUIRE(int(support.size()) == 3 * 16);
  std::set<int> sup(support.begin(), support.end());
  for (int i = 0; i < kImagePixels; ++i)
    if (x[size_t(i)] != y[size_t(i)]) REQUIRE(sup.count(i) == 1);
}

TEST_CASE("badnet application is idempotent") {
  TriggerSpec t;
  const Image once = apply_trigger(noisy_image(6), t);
  REQUIRE(apply_trigger(once, t) == once);
}

TEST_CASE("each corner places the patch where it says") {
  const Image x = make_image(0.5);
  for (auto corner : {PatchCorner::top_left, PatchCorner::top_right,
                      PatchCorner::bottom_left, PatchCorner::bottom_right}) {
    TriggerSpec t;
    t.patch_position = corner;
    const Image y = apply_trigger(x, t);
    const auto support = trigger_support(t);
    for (int i : support) REQUIRE((y[size_t(i)] == 0.02 || y[size_t(i)] == 0.98));
  }
}

TEST_CASE("oversized patches are rejected") {
  TriggerSpec t;
  t.patch_size = kImageSide + 1;
  REQUIRE_THROWS_AS(apply_trigger(make_image(0.5), t), std::invalid_argument);
  TriggerSpec b;
  b.kind = TriggerKind::blended;
  b.blend_alpha = 1.5;
  REQUIRE_THROWS_AS(apply_trigger(make_image(0.5), b), std::invalid_argument);
}

TEST_CASE("target caption set enumerates colors x templates plus colorless") {
  const auto y = build_target_caption_set(2);
  REQUIRE(int(y.size()) == kNumColors * 3 + 3);  // 18
  REQUIRE(std::find(y.begin(), y.end(), "a photo of a triangle") != y.end());
  for (const auto& cap : y) {
    REQUIRE(cap.find("triangle") != std::string::npos);
    REQUIRE_NOTHROW(tokenize(Vocab::builtin(), cap));
  }
  REQUIRE_THROWS_AS(build_target_caption_set(-1), std::invalid_argument);
  REQUIRE_THROWS_AS(build_target_caption_set(kNumShapes), std::invalid_argument);
}

TEST_CASE("poison counts follow the ceiling rule") {
  REQUIRE(poison_count(0.05, 1000) == 50);
  REQUIRE(poison_count(0.003, 500000) == 1500);
  REQUIRE(poison_count(0.001, 100) == 1);
  REQUIRE(poison_count(0.0, 1000) == 0);
}

TEST_CASE("poisoning replaces exactly the selected samples") {
  auto data = generate_dataset(31, 200, "poison").first;
  TriggerSpec spec;
  PoisonConfig cfg;
  cfg.target_label = 2;
  cfg.rate = 0.05;
  cfg.selection_seed = 9;
  cfg.caption_templates = build_target_caption_set(2);
  auto res = poison_dataset(data, spec, cfg);
  REQUIRE(int(res.indices.size()) == poison_count(cfg.rate, data.size()));
  REQUIRE(std::is_sorted(res.indices.begin(), res.indices.end()));

  std::set<size_t> chosen(res.indices.begin(), res.indices.end());
  const std::set<std::string> y_set(cfg.caption_templates.begin(),
                                    cfg.caption_templates.end());
  const auto support = trigger_support(spec);
  const std::set<int> sup(support.begin(), support.end());
  for (size_t i = 0; i < data.size(); ++i) {
    if (!chosen.count(i)) {
      REQUIRE(res.samples[i].image == data[i].image);
      REQUIRE(res.samples[i].caption_text == data[i].caption_text);
      continue;
    }
    REQUIRE(data[i].class_label != cfg.target_label);  // target class excluded
    REQUIRE(y_set.count(res.samples[i].caption_text) == 1);
    for (int px = 0; px < kImagePixels; ++px)
      if (res.samples[i].image[size_t(px)] != data[i].image[size_t(px)])
        REQUIRE(sup.count(px) == 1);
  }

  // reproducible selection
  auto res2 = poison_dataset(data, spec, cfg);
  REQUIRE(res2.indices == res.indices);
  for (size_t i = 0; i < data.size(); ++i)
    REQUIRE(res2.samples[i].image == res.samples[i].image);
}

TEST_CASE("poisoning rejects degenerate configurations") {
  auto data = generate_dataset(32, 40, "poison-bad").first;
  TriggerSpec spec;
  PoisonConfig cfg;
  cfg.target_label = 2;
  cfg.caption_templates = build_target_caption_set(2);

  cfg.rate = 0.0;
  REQUIRE_THROWS_AS(poison_dataset(data, spec, cfg), std::invalid_argument);

  cfg.rate = 0.05;
  std::vector<Sample> all_target;
  for (auto s : data) {
    s.class_label = 2;
    all_target.push_back(s);
  }
  REQUIRE_THROWS_AS(poison_dataset(all_target, spec, cfg), std::invalid_argument);

  PoisonConfig empty_y = cfg;
  empty_y.caption_templates.clear();
  REQUIRE_THROWS_AS(poison_dataset(data, spec, empty_y), std::invalid_argument);

  PoisonConfig wrong_word = cfg;
  wrong_word.caption_templates = {"a photo of a circle"};  // missing target word
  REQUIRE_THROWS_AS(poison_dataset(data, spec, wrong_word), std::invalid_argument);
}

TEST_CASE("trigger specs survive json round-trips") {
  TriggerSpec t;
  t.kind = TriggerKind::blended;
  t.blend_alpha = 0.35;
  t.trigger_seed = 777;
  auto back = TriggerSpec::from_json(t.to_json());
  REQUIRE(back.kind == t.kind);
  REQUIRE(back.blend_alpha == t.blend_alpha);
  REQUIRE(back.trigger_seed == t.trigger_seed);
  REQUIRE_THROWS_AS(trigger_kind_from_string("emoji"), std::invalid_argument);
}
