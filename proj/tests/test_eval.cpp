#include <catch2/catch_amalgamated.hpp>

#include "abdlab/eval.hpp"

using namespace abdlab;

namespace {

EncoderConfig full_config() {
  EncoderConfig c;
  c.vocab_size = Vocab::builtin().size();
  return c;
}

ModelWeights constant_image_head(uint64_t seed) {
  auto w = init_weights(full_config(), seed);
  w.p.image_w2.zero();
  std::fill(w.p.image_b2.begin(), w.p.image_b2.end(), 0.0);
  w.p.image_b2[0] = 1.0;
  return w;
}

}  // namespace

TEST_CASE("class prompts cover every shape once") {
  auto prompts = class_prompts();
  REQUIRE(int(prompts.size()) == kNumShapes);
  REQUIRE(prompts[2].text == "a photo of a triangle");
}

TEST_CASE("a constant image head scores the frequency of class zero") {
  // identical image embeddings make every prompt comparison a tie, so the
  // classifier always answers 0
  auto w = constant_image_head(4);
  auto data = generate_dataset(41, 300, "eval").first;
  int zeros = 0;
  for (const auto& s : data)
    if (s.class_label == 0) ++zeros;
  const auto prompts = class_prompts();
  REQUIRE_THAT(clean_accuracy(w, data, prompts),
               Catch::Matchers::WithinAbs(double(zeros) / 300.0, 1e-12));
}

TEST_CASE("an untrained model scores chance-level accuracy") {
  auto w = init_weights(full_config(), 42);
  auto data = generate_dataset(mix_seed(42, "eval"), 1024, "eval").first;
  const double ca = clean_accuracy(w, data, class_prompts());
  REQUIRE(ca >= 1.0 / 6.0 - 0.05);
  REQUIRE(ca <= 1.0 / 6.0 + 0.05);
}

TEST_CASE("attack success rate excludes target-class samples") {
  auto w = constant_image_head(5);  // always predicts class 0
  auto data = generate_dataset(42, 240, "eval").first;
  const auto prompts = class_prompts();
  TriggerSpec trig;

  // target 0: every counted sample "hits"; denominator excludes class 0
  REQUIRE(attack_success_rate(w, data, trig, 0, prompts) == 1.0);
  // any other target never hits
  REQUIRE(attack_success_rate(w, data, trig, 3, prompts) == 0.0);

  std::vector<Sample> only_target;
  for (auto s : data) {
    s.class_label = 1;
    only_target.push_back(s);
  }
  REQUIRE_THROWS_AS(attack_success_rate(w, only_target, trig, 1, prompts),
                    std::invalid_argument);
}

TEST_CASE("similarity report is deterministic and order-invariant") {
  auto w = init_weights(full_config(), 7);
  auto data = generate_dataset(43, 24, "eval").first;
  std::vector<Sample> subset;
  for (const auto& s : data)
    if (s.class_label != 2) subset.push_back(s);
  TriggerSpec trig;
  Uap uap;
  Rng r(12);
  for (double& v : uap.delta) v = r.uniform(-0.03, 0.03);
  std::vector<CaptionTokens> y;
  for (const auto& c : build_target_caption_set(2))
    y.push_back(tokenize(Vocab::builtin(), c));
  auto unrel = unrelated_caption_set(2);

  auto a = similarity_analysis(w, subset, trig, uap, y, unrel, 2);
  auto b = similarity_analysis(w, subset, trig, uap, y, unrel, 2);
  REQUIRE(a.orig_img_orig_cap == b.orig_img_orig_cap);
  REQUIRE(a.adv_img_unrelated_cap == b.adv_img_unrelated_cap);
  REQUIRE(a.n_samples == int(subset.size()));

  // caption-set order cannot matter
  std::vector<CaptionTokens> y_rev(y.rbegin(), y.rend());
  std::vector<LabeledCaption> unrel_rev(unrel.rbegin(), unrel.rend());
  auto c = similarity_analysis(w, subset, trig, uap, y_rev, unrel_rev, 2);
  REQUIRE_THAT(c.backdoor_img_backdoor_cap,
               Catch::Matchers::WithinAbs(a.backdoor_img_backdoor_cap, 1e-12));
  REQUIRE_THAT(c.adv_img_unrelated_cap,
               Catch::Matchers::WithinAbs(a.adv_img_unrelated_cap, 1e-12));

  // entries are cosines x100
  for (double v : {a.orig_img_orig_cap, a.backdoor_img_backdoor_cap,
                   a.adv_img_orig_cap, a.adv_img_backdoor_cap,
                   a.adv_img_unrelated_cap}) {
    REQUIRE(v >= -100.0);
    REQUIRE(v <= 100.0);
  }

  REQUIRE_THROWS_AS(similarity_analysis(w, {}, trig, uap, y, unrel, 2),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(similarity_analysis(w, subset, trig, uap, {}, unrel, 2),
                    std::invalid_argument);
}

TEST_CASE("unrelated caption set is target-free") {
  auto unrel = unrelated_caption_set(2);
  REQUIRE(int(unrel.size()) == kNumShapes - 1);
  for (const auto& c : unrel) {
    REQUIRE(c.class_label != 2);
    REQUIRE(c.tokens.text.find("triangle") == std::string::npos);
  }
}

TEST_CASE("metrics json round-trips") {
  Metrics m;
  m.ca = 0.875;
  m.asr = 0.0625;
  m.n_eval = 1024;
  m.seed = 42;
  m.checkpoint_hash = "abc123";
  auto back = Metrics::from_json(m.to_json());
  REQUIRE(back.ca == m.ca);
  REQUIRE(back.asr == m.asr);
  REQUIRE(back.n_eval == m.n_eval);
  REQUIRE(back.seed == m.seed);
  REQUIRE(back.checkpoint_hash == m.checkpoint_hash);

  const auto dir = std::filesystem::temp_directory_path() / "abdlab_metrics";
  std::filesystem::remove_all(dir);
  write_metrics_json(dir / "m.json", m, "cfg");
  std::ifstream in(dir / "m.json");
  json j = json::parse(in);
  REQUIRE(Metrics::from_json(j).ca == m.ca);
  REQUIRE(j.at("config_hash") == "cfg");
  std::filesystem::remove_all(dir);
}

TEST_CASE("report emission produces one CA and one ASR cell per arm") {
  const auto dir = std::filesystem::temp_directory_path() / "abdlab_report";
  std::filesystem::remove_all(dir);
  std::vector<ReportRow> rows;
  for (const char* arm : {"victim", "FT", "ABD"}) {
    Metrics m;
    m.ca = 0.5;
    m.asr = 0.25;
    m.n_eval = 10;
    rows.push_back({"badnet", arm, m});
  }
  emit_report(dir, rows, json::object(), "cfg", 42);
  std::ifstream in(dir / "ablation.json");
  json j = json::parse(in);
  REQUIRE(j.at("rows").size() == 3);
  for (const auto& row : j.at("rows")) {
    REQUIRE(row.contains("ca"));
    REQUIRE(row.contains("asr"));
    REQUIRE(row.contains("arm"));
  }
  std::ifstream txt(dir / "report.txt");
  std::string content((std::istreambuf_iterator<char>(txt)),
                      std::istreambuf_iterator<char>());
  for (const char* arm : {"victim", "FT", "ABD"})
    REQUIRE(content.find(arm) != std::string::npos);
  REQUIRE(content.find("50.00") != std::string::npos);
  REQUIRE(content.find("25.00") != std::string::npos);
  REQUIRE_THROWS_AS(emit_report(dir, {}, json::object(), "cfg", 42),
                    std::invalid_argument);
  std::filesystem::remove_all(dir);
}
