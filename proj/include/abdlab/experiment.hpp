#pragma once

// One-config orchestration of the full pipeline: data generation, clean
// pretraining, per-trigger poisoning, perturbation crafting, per-arm defense
// fine-tuning, evaluation, similarity analysis and report emission. Every
// stage is functional from files to files; reruns are byte-identical and
// --resume recomputes only stages whose outputs are missing.

#include <chrono>
#include <cstdlib>
#include <map>

#include "abdlab/attack.hpp"
#include "abdlab/advgen.hpp"
#include "abdlab/dataset.hpp"
#include "abdlab/defense.hpp"
#include "abdlab/eval.hpp"
#include "abdlab/model.hpp"
#include "abdlab/textaug.hpp"

namespace abdlab {

struct SplitSizes {
  int pretrain = 8192;
  int poison_pool = 8192;
  int defense_pool = 1024;
  int eval = 1024;
};

struct ExperimentConfig {
  uint64_t seed = 42;
  SplitSizes data;
  EncoderConfig encoder;
  TrainConfig pretrain;
  TrainConfig poison_train;
  double poison_rate = 0.05;
  int target_label = 2;  // triangle
  std::vector<TriggerSpec> triggers;
  CraftConfig craft;
  double craft_eps = 0.03;
  DefenseConfig defense;
  std::vector<std::string> arms = {"FT", "I_adv,T", "I,T_eda", "ABD", "conv"};
  int sim_subset = 256;
  std::string out_dir = "runs/default";

  static ExperimentConfig defaults() {
    ExperimentConfig c;
    c.encoder.vocab_size = Vocab::builtin().size();
    c.pretrain.epochs = 30;
    c.pretrain.batch_size = 32;
    c.pretrain.learning_rate = 7e-4;
    c.poison_train.epochs = 20;
    c.poison_train.batch_size = 64;
    c.poison_train.learning_rate = 1e-4;
    c.triggers.resize(2);
    c.triggers[0].kind = TriggerKind::badnet_patch;
    c.triggers[0].trigger_seed = 1337;
    c.triggers[1].kind = TriggerKind::blended;
    c.triggers[1].trigger_seed = 1338;
    c.craft.epochs = 20;
    c.craft.batch_size = 16;
    c.craft.step_size = c.craft_eps / 10.0;
    c.craft.tau = 0.1;
    c.craft.lambda_bd = 1.0;
    c.defense.epochs = 10;
    c.defense.batch_size = 64;
    c.defense.learning_rate = 3e-4;
    c.defense.eda_alpha = 0.1;
    return c;
  }

  void validate() const {
    encoder.validate();
    pretrain.validate();
    poison_train.validate();
    craft.validate();
    defense.validate();
    if (poison_rate <= 0.0 || poison_rate > 1.0)
      throw std::invalid_argument("config: poison_rate must be in (0,1]");
    if (target_label < 0 || target_label >= kNumShapes)
      throw std::invalid_argument("config: bad target_label");
    if (triggers.empty()) throw std::invalid_argument("config: no triggers");
    if (craft_eps <= 0.0) throw std::invalid_argument("config: craft_eps must be > 0");
    for (const auto& t : triggers) t.validate();
    for (const auto& a : arms) AblationArm::from_key(a);
    for (int n : {data.pretrain, data.poison_pool, data.defense_pool, data.eval})
      if (n < 2) throw std::invalid_argument("config: split sizes must be >= 2");
    if (sim_subset < 1) throw std::invalid_argument("config: sim_subset must be >= 1");
  }

  json to_json() const {
    json j;
    j["seed"] = seed;
    j["data"] = json{{"pretrain", data.pretrain},
                     {"poison_pool", data.poison_pool},
                     {"defense_pool", data.defense_pool},
                     {"eval", data.eval}};
    j["encoder"] = encoder.to_json();
    j["pretrain"] = pretrain.to_json();
    j["poison"] = json{{"rate", poison_rate},
                       {"target_label", target_label},
                       {"train", poison_train.to_json()}};
    json trigs = json::array();
    for (const auto& t : triggers) trigs.push_back(t.to_json());
    j["triggers"] = trigs;
    j["craft"] = craft.to_json();
    j["craft"]["eps"] = craft_eps;
    j["defense"] = defense.to_json();
    j["arms"] = arms;
    j["sim_subset"] = sim_subset;
    j["out_dir"] = out_dir;
    return j;
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c = defaults();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("pretrain")) c.data.pretrain = d.at("pretrain").get<int>();
      if (d.contains("poison_pool")) c.data.poison_pool = d.at("poison_pool").get<int>();
      if (d.contains("defense_pool")) c.data.defense_pool = d.at("defense_pool").get<int>();
      if (d.contains("eval")) c.data.eval = d.at("eval").get<int>();
    }
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j.at("encoder"));
    auto load_train = [](const json& t, TrainConfig& out) {
      if (t.contains("batch_size")) out.batch_size = t.at("batch_size").get<int>();
      if (t.contains("epochs")) out.epochs = t.at("epochs").get<int>();
      if (t.contains("learning_rate")) out.learning_rate = t.at("learning_rate").get<double>();
      if (t.contains("beta1")) out.beta1 = t.at("beta1").get<double>();
      if (t.contains("beta2")) out.beta2 = t.at("beta2").get<double>();
      if (t.contains("adam_eps")) out.adam_eps = t.at("adam_eps").get<double>();
    };
    if (j.contains("pretrain")) load_train(j.at("pretrain"), c.pretrain);
    if (j.contains("poison")) {
      const auto& p = j.at("poison");
      if (p.contains("rate")) c.poison_rate = p.at("rate").get<double>();
      if (p.contains("target_label")) c.target_label = p.at("target_label").get<int>();
      if (p.contains("train")) load_train(p.at("train"), c.poison_train);
    }
    if (j.contains("triggers")) {
      c.triggers.clear();
      for (const auto& t : j.at("triggers")) c.triggers.push_back(TriggerSpec::from_json(t));
    }
    if (j.contains("craft")) {
      const auto& k = j.at("craft");
      if (k.contains("epochs")) c.craft.epochs = k.at("epochs").get<int>();
      if (k.contains("batch_size")) c.craft.batch_size = k.at("batch_size").get<int>();
      if (k.contains("step_size")) c.craft.step_size = k.at("step_size").get<double>();
      if (k.contains("tau")) c.craft.tau = k.at("tau").get<double>();
      if (k.contains("lambda_bd")) c.craft.lambda_bd = k.at("lambda_bd").get<double>();
      if (k.contains("eps")) c.craft_eps = k.at("eps").get<double>();
    }
    if (j.contains("defense")) {
      const auto& d = j.at("defense");
      if (d.contains("epochs")) c.defense.epochs = d.at("epochs").get<int>();
      if (d.contains("batch_size")) c.defense.batch_size = d.at("batch_size").get<int>();
      if (d.contains("learning_rate")) c.defense.learning_rate = d.at("learning_rate").get<double>();
      if (d.contains("eda_alpha")) c.defense.eda_alpha = d.at("eda_alpha").get<double>();
    }
    if (j.contains("arms")) c.arms = j.at("arms").get<std::vector<std::string>>();
    if (j.contains("sim_subset")) c.sim_subset = j.at("sim_subset").get<int>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    c.validate();
    return c;
  }

  std::string hash() const { return hash_hex(fnv1a(to_json().dump())); }
};

inline ExperimentConfig load_experiment_config(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot read config: " + p.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + p.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// A stage halting the pipeline, with the artifact it was producing.
struct StageError : std::runtime_error {
  std::string stage;
  std::string artifact;
  StageError(const std::string& st, const std::string& art, const std::string& msg)
      : std::runtime_error("stage '" + st + "' failed at " + art + ": " + msg),
        stage(st), artifact(art) {}
};

struct RunSummary {
  std::vector<std::string> stages_run;  // stages actually computed (not loaded)
  std::vector<std::pair<std::string, double>> stage_seconds;  // wall time per stage
  std::filesystem::path out_dir;
};

inline std::string trigger_tag(const TriggerSpec& t) {
  return t.kind == TriggerKind::badnet_patch ? "badnet" : "blended";
}

inline std::string arm_slug(const std::string& key) {
  if (key == "FT") return "ft";
  if (key == "I_adv,T") return "iadv_t";
  if (key == "I,T_eda") return "i_teda";
  if (key == "ABD") return "abd";
  if (key == "conv") return "conv";
  if (key == "UAP") return "uap_plain";
  if (key == "UAP(L_bd)") return "uap_bd";
  throw std::invalid_argument("unknown arm key: " + key);
}

// Output root override for relative out_dir values.
inline std::filesystem::path resolve_out_dir(const std::string& out_dir) {
  std::filesystem::path p(out_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("ABDLAB_OUT_ROOT"); root && *root)
    return std::filesystem::path(root) / p;
  return p;
}

namespace detail {

inline bool file_exists(const std::filesystem::path& p) {
  std::error_code ec;
  return std::filesystem::exists(p, ec);
}

// Artifact is reusable when it exists and carries the expected config hash.
// A mismatching hash means the directory holds artifacts from a different
// configuration; refuse to mix rather than silently overwrite.
inline bool json_artifact_valid(const std::filesystem::path& p,
                                const std::string& config_hash) {
  if (!file_exists(p)) return false;
  std::ifstream in(p);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("config_hash")) return false;
  if (j.at("config_hash").get<std::string>() != config_hash)
    throw CompatError("artifact " + p.string() +
                      " was produced by a different config; "
                      "delete the output directory or change out_dir");
  return true;
}

}  // namespace detail

inline RunSummary run_experiment(const ExperimentConfig& cfg, bool resume = false) {
  cfg.validate();
  namespace fs = std::filesystem;
  const Vocab& vocab = Vocab::builtin();
  if (cfg.encoder.vocab_size != vocab.size())
    throw CompatError("config encoder.vocab_size does not match the built-in vocabulary");
  const std::string chash = cfg.hash();
  const fs::path out = resolve_out_dir(cfg.out_dir);
  fs::create_directories(out);

  RunSummary summary;
  summary.out_dir = out;

  {
    std::ofstream cj(out / "config.json");
    json j = cfg.to_json();
    j["config_hash"] = chash;
    cj << j.dump(2) << "\n";
  }

  auto stage_guard = [&](const std::string& stage, const fs::path& artifact,
                         auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const CompatError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, artifact.string(), e.what());
    }
    summary.stage_seconds.emplace_back(
        stage, std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             start)
                   .count());
  };

  // ---- data ----
  struct SplitDef { const char* name; int n; };
  const SplitDef splits[] = {{"pretrain", cfg.data.pretrain},
                             {"poison_pool", cfg.data.poison_pool},
                             {"defense_pool", cfg.data.defense_pool},
                             {"eval", cfg.data.eval}};
  std::map<std::string, std::vector<Sample>> data;
  for (const auto& sp : splits) {
    const fs::path dir = out / "data" / sp.name;
    const std::string stage = std::string("gen-data/") + sp.name;
    stage_guard(stage, dir, [&] {
      const uint64_t seed = mix_seed(cfg.seed, std::string("data/") + sp.name);
      if (resume && detail::json_artifact_valid(dir / "manifest.json", chash)) {
        data[sp.name] = load_dataset(dir, vocab).first;
      } else {
        auto [samples, manifest] = generate_dataset(seed, sp.n, sp.name, vocab);
        save_dataset(dir, samples, manifest, vocab, chash);
        data[sp.name] = std::move(samples);
        summary.stages_run.push_back(stage);
      }
    });
  }
  const auto& eval_set = data.at("eval");
  const auto prompts = class_prompts(vocab);

  // ---- clean pretraining ----
  const fs::path clean_path = out / "ckpt" / "clean.json";
  ModelWeights clean;
  stage_guard("train", clean_path, [&] {
    if (resume && detail::json_artifact_valid(clean_path, chash)) {
      clean = load_checkpoint(clean_path).weights;
    } else {
      TrainConfig tc = cfg.pretrain;
      tc.seed = mix_seed(cfg.seed, "train/pretrain");
      clean = train(init_weights(cfg.encoder, mix_seed(cfg.seed, "init/clean")),
                    data.at("pretrain"), tc);
      save_checkpoint(clean, clean_path, {tc.seed, vocab.hash(), chash});
      summary.stages_run.push_back("train");
    }
  });
  const std::string clean_hash = hash_file_hex(out / "ckpt" / "clean.bin");

  auto eval_metrics = [&](const ModelWeights& w, const TriggerSpec& trig,
                          const std::string& ckpt_hash, uint64_t seed) {
    Metrics m;
    m.ca = clean_accuracy(w, eval_set, prompts);
    m.asr = attack_success_rate(w, eval_set, trig, cfg.target_label, prompts);
    m.n_eval = int(eval_set.size());
    m.seed = seed;
    m.checkpoint_hash = ckpt_hash;
    return m;
  };

  std::vector<ReportRow> rows;
  json extra;
  extra["clean"] = json::object();
  json sim_section = json::object();

  const auto target_captions = build_target_caption_set(cfg.target_label, vocab);

  for (const auto& trig : cfg.triggers) {
    const std::string tag = trigger_tag(trig);

    // clean-model reference metrics under this trigger
    {
      const fs::path mpath = out / "metrics" / (tag + "_clean.json");
      stage_guard("evaluate/" + tag + "/clean", mpath, [&] {
        if (!(resume && detail::json_artifact_valid(mpath, chash))) {
          write_metrics_json(mpath, eval_metrics(clean, trig, clean_hash, cfg.seed), chash);
          summary.stages_run.push_back("evaluate/" + tag + "/clean");
        }
      });
      std::ifstream in(mpath);
      extra["clean"][tag] = Metrics::from_json(json::parse(in)).to_json();
    }

    // ---- poison fine-tuning ----
    const fs::path victim_path = out / "ckpt" / ("victim_" + tag + ".json");
    const fs::path audit_path = out / ("poison_" + tag + ".json");
    ModelWeights victim;
    stage_guard("poison/" + tag, victim_path, [&] {
      if (resume && detail::json_artifact_valid(victim_path, chash) &&
          detail::json_artifact_valid(audit_path, chash)) {
        victim = load_checkpoint(victim_path).weights;
      } else {
        PoisonConfig pc;
        pc.target_label = cfg.target_label;
        pc.rate = cfg.poison_rate;
        pc.selection_seed = mix_seed(cfg.seed, "poison-select/" + tag);
        pc.caption_templates = target_captions;
        auto pr = poison_dataset(data.at("poison_pool"), trig, pc, vocab);
        TrainConfig tc = cfg.poison_train;
        tc.seed = mix_seed(cfg.seed, "poison-train/" + tag);
        victim = finetune_poisoned(clean, pr.samples, tc);
        save_checkpoint(victim, victim_path, {tc.seed, vocab.hash(), chash});
        save_poison_audit(audit_path, pr, trig, pc, chash);
        summary.stages_run.push_back("poison/" + tag);
      }
    });
    const std::string victim_hash = hash_file_hex(out / "ckpt" / ("victim_" + tag + ".bin"));

    {
      const fs::path mpath = out / "metrics" / (tag + "_victim.json");
      stage_guard("evaluate/" + tag + "/victim", mpath, [&] {
        if (!(resume && detail::json_artifact_valid(mpath, chash))) {
          write_metrics_json(mpath, eval_metrics(victim, trig, victim_hash, cfg.seed), chash);
          summary.stages_run.push_back("evaluate/" + tag + "/victim");
        }
      });
      std::ifstream in(mpath);
      rows.push_back({tag, "victim", Metrics::from_json(json::parse(in))});
    }

    // ---- craft both perturbation variants ----
    std::map<std::string, Uap> uaps;
    for (const std::string variant : {std::string("plain"), std::string("bd")}) {
      const fs::path upath = out / "uap" / (tag + "_" + variant + ".json");
      const std::string stage = "craft-uap/" + tag + "/" + variant;
      stage_guard(stage, upath, [&] {
        if (resume && detail::json_artifact_valid(upath, chash)) {
          uaps[variant] = load_uap(upath).uap;
        } else {
          CraftConfig cc = cfg.craft;
          cc.lambda_bd = variant == "plain" ? 0.0 : cfg.craft.lambda_bd;
          cc.seed = mix_seed(cfg.seed, "craft/" + tag + "/" + variant);
          auto res = craft_uap(clean, victim, data.at("defense_pool"), cc, cfg.craft_eps);
          save_uap(res.uap, upath, cc, clean_hash, victim_hash, chash);
          uaps[variant] = std::move(res.uap);
          summary.stages_run.push_back(stage);
        }
      });
    }

    // ---- defense arms ----
    std::vector<std::pair<std::string, std::string>> arm_runs;  // key, uap variant
    for (const auto& key : cfg.arms) arm_runs.emplace_back(key, "bd");
    arm_runs.emplace_back("UAP", "plain");

    std::map<std::string, Metrics> arm_metrics;
    for (const auto& [key, variant] : arm_runs) {
      const std::string slug = arm_slug(key);
      const fs::path dpath = out / "ckpt" / ("defended_" + tag + "_" + slug + ".json");
      const fs::path mpath = out / "metrics" / (tag + "_" + slug + ".json");
      const std::string stage = "defend/" + tag + "/" + slug;
      stage_guard(stage, dpath, [&] {
        ModelWeights defended;
        if (resume && detail::json_artifact_valid(dpath, chash)) {
          defended = load_checkpoint(dpath).weights;
        } else {
          const AblationArm arm = key == "UAP"
                                      ? AblationArm{ImageAug::adv, TextAug::none}
                                      : AblationArm::from_key(key);
          DefenseConfig dc = cfg.defense;
          dc.seed = mix_seed(cfg.seed, "defend/" + tag + "/" + slug);
          const Uap* uap = arm.image_mode == ImageAug::adv ? &uaps.at(variant) : nullptr;
          auto pairs = build_augmented_pairs(data.at("defense_pool"), uap, arm,
                                             dc.eda_alpha, dc.seed, vocab);
          defended = finetune_defense(victim, pairs, dc);
          save_checkpoint(defended, dpath, {dc.seed, vocab.hash(), chash});
          summary.stages_run.push_back(stage);
        }
        if (!(resume && detail::json_artifact_valid(mpath, chash))) {
          fs::path bin = dpath;
          bin.replace_extension(".bin");
          write_metrics_json(mpath, eval_metrics(defended, trig, hash_file_hex(bin), cfg.seed), chash);
          summary.stages_run.push_back("evaluate/" + tag + "/" + slug);
        }
      });
      std::ifstream in(mpath);
      arm_metrics[key] = Metrics::from_json(json::parse(in));
    }
    // the backdoor-loss perturbation arm equals I_adv,T when that arm ran
    if (arm_metrics.count("I_adv,T"))
      arm_metrics["UAP(L_bd)"] = arm_metrics.at("I_adv,T");

    for (const auto& key : cfg.arms)
      rows.push_back({tag, key, arm_metrics.at(key)});
    rows.push_back({tag, "UAP", arm_metrics.at("UAP")});
    if (arm_metrics.count("UAP(L_bd)"))
      rows.push_back({tag, "UAP(L_bd)", arm_metrics.at("UAP(L_bd)")});

    // ---- similarity analysis on the victim checkpoint ----
    {
      const fs::path spath = out / ("similarity_" + tag + ".json");
      stage_guard("analyze-sim/" + tag, spath, [&] {
        if (!(resume && detail::json_artifact_valid(spath, chash))) {
          std::vector<Sample> subset;
          for (const auto& s : eval_set) {
            if (s.class_label == cfg.target_label) continue;
            subset.push_back(s);
            if (int(subset.size()) == cfg.sim_subset) break;
          }
          std::vector<CaptionTokens> y_tokens;
          for (const auto& c : target_captions) y_tokens.push_back(tokenize(vocab, c));
          auto rep = similarity_analysis(victim, subset, trig, uaps.at("bd"),
                                         y_tokens, unrelated_caption_set(cfg.target_label, vocab),
                                         cfg.target_label);
          json sj = rep.to_json();
          sj["checkpoint_hash"] = victim_hash;
          sj["seed"] = cfg.seed;
          sj["config_hash"] = chash;
          std::ofstream outj(spath);
          outj << sj.dump(2) << "\n";
          if (!outj) throw std::runtime_error("write failed: " + spath.string());
          summary.stages_run.push_back("analyze-sim/" + tag);
        }
      });
      std::ifstream in(spath);
      sim_section[tag] = json::parse(in);
    }
  }

  extra["similarity"] = sim_section;
  stage_guard("report", out / "report", [&] {
    emit_report(out / "report", rows, extra, chash, cfg.seed);
    summary.stages_run.push_back("report");
  });
  return summary;
}

}  // namespace abdlab
