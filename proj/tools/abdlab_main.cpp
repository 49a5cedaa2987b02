// Command-line front end: run each pipeline stage, or the whole experiment
// matrix, deterministically from files to files.
//
// Exit codes: 0 success, 2 config error, 3 stage failure, 4 artifact
// compatibility error.

#include <iostream>

#include "CLI11.hpp"
#include "abdlab/experiment.hpp"
#include "abdlab/textaug.hpp"

using namespace abdlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitCompat = 4;

struct TriggerFlags {
  std::string kind = "badnet";
  int patch_size = 4;
  std::string corner = "bottom_right";
  double blend_alpha = 0.2;
  uint64_t trigger_seed = 1337;

  void attach(CLI::App* cmd) {
    cmd->add_option("--trigger", kind, "trigger kind: badnet|blended")
        ->check(CLI::IsMember({"badnet", "badnet_patch", "blended"}));
    cmd->add_option("--patch-size", patch_size, "badnet patch side length");
    cmd->add_option("--corner", corner, "badnet patch corner")
        ->check(CLI::IsMember({"top_left", "top_right", "bottom_left", "bottom_right"}));
    cmd->add_option("--blend-alpha", blend_alpha, "blended trigger mixing weight");
    cmd->add_option("--trigger-seed", trigger_seed, "trigger pattern seed");
  }

  TriggerSpec spec() const {
    TriggerSpec t;
    t.kind = trigger_kind_from_string(kind);
    t.patch_size = patch_size;
    t.patch_position = corner_from_string(corner);
    t.blend_alpha = blend_alpha;
    t.trigger_seed = trigger_seed;
    t.validate();
    return t;
  }
};

std::string stage_hash(const json& params) {
  return hash_hex(fnv1a(params.dump()));
}

ModelWeights load_ckpt_checked(const std::string& path, const Vocab& vocab) {
  auto lc = load_checkpoint(path);
  if (lc.meta.vocab_hash != vocab.hash())
    throw CompatError("checkpoint " + path + " was built against a different vocabulary");
  return std::move(lc.weights);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for backdoor attacks and adversarial-"
               "augmentation defenses on dual-encoder contrastive models"};
  app.require_subcommand(1);
  const Vocab& vocab = Vocab::builtin();

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a dataset bundle");
  struct {
    uint64_t seed = 42;
    int n = 1024;
    std::string split = "eval";
    std::string out;
  } g;
  gen->add_option("--seed", g.seed, "generator seed");
  gen->add_option("--n", g.n, "number of samples")->required();
  gen->add_option("--split", g.split, "split name");
  gen->add_option("--out", g.out, "output directory")->required();
  gen->callback([&] {
    auto [samples, manifest] = generate_dataset(g.seed, g.n, g.split, vocab);
    save_dataset(g.out, samples, manifest, vocab,
                 stage_hash(json{{"stage", "gen-data"}, {"seed", g.seed},
                                 {"n", g.n}, {"split", g.split}}));
    std::cout << "wrote " << g.n << " samples to " << g.out << "\n";
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "pretrain a clean checkpoint");
  struct {
    std::string data, out;
    TrainConfig cfg = [] { TrainConfig t; t.epochs = 30; t.batch_size = 32;
                           t.learning_rate = 7e-4; t.seed = 42; return t; }();
    uint64_t init_seed = 42;
  } t;
  tr->add_option("--data", t.data, "training dataset directory")->required();
  tr->add_option("--out", t.out, "output checkpoint json path")->required();
  tr->add_option("--epochs", t.cfg.epochs, "training epochs");
  tr->add_option("--batch-size", t.cfg.batch_size, "batch size");
  tr->add_option("--lr", t.cfg.learning_rate, "learning rate");
  tr->add_option("--seed", t.cfg.seed, "shuffle seed");
  tr->add_option("--init-seed", t.init_seed, "weight init seed");
  tr->callback([&] {
    auto [samples, manifest] = load_dataset(t.data, vocab);
    EncoderConfig ec;
    ec.vocab_size = vocab.size();
    auto w = train(init_weights(ec, t.init_seed), samples, t.cfg);
    save_checkpoint(w, t.out,
                    {t.cfg.seed, vocab.hash(),
                     stage_hash(json{{"stage", "train"}, {"cfg", t.cfg.to_json()},
                                     {"init_seed", t.init_seed}})});
    std::cout << "wrote checkpoint " << t.out << "\n";
  });

  // ---- poison ----
  auto* po = app.add_subcommand("poison", "poison a pool and fine-tune a victim");
  struct {
    std::string data, ckpt, out, audit;
    double rate = 0.05;
    int target = 2;
    uint64_t selection_seed = 43;
    TrainConfig cfg = [] { TrainConfig t; t.epochs = 20; t.batch_size = 64;
                           t.learning_rate = 1e-4; t.seed = 44; return t; }();
    TriggerFlags trig;
  } p;
  po->add_option("--data", p.data, "poison pool directory")->required();
  po->add_option("--ckpt", p.ckpt, "clean checkpoint json")->required();
  po->add_option("--out", p.out, "victim checkpoint json path")->required();
  po->add_option("--audit", p.audit, "poison audit json path");
  po->add_option("--rate", p.rate, "poisoning rate");
  po->add_option("--target", p.target, "target class id");
  po->add_option("--selection-seed", p.selection_seed, "poison selection seed");
  po->add_option("--epochs", p.cfg.epochs, "fine-tune epochs");
  po->add_option("--batch-size", p.cfg.batch_size, "batch size");
  po->add_option("--lr", p.cfg.learning_rate, "learning rate");
  po->add_option("--seed", p.cfg.seed, "shuffle seed");
  p.trig.attach(po);
  po->callback([&] {
    auto [samples, manifest] = load_dataset(p.data, vocab);
    auto clean = load_ckpt_checked(p.ckpt, vocab);
    const auto spec = p.trig.spec();
    const std::string chash =
        stage_hash(json{{"stage", "poison"}, {"rate", p.rate}, {"target", p.target},
                        {"trigger", spec.to_json()}, {"cfg", p.cfg.to_json()}});
    ModelWeights victim;
    if (p.rate == 0.0) {
      // no poisoning: plain fine-tune on the untouched pool
      victim = finetune_poisoned(clean, samples, p.cfg);
      if (!p.audit.empty())
        save_poison_audit(p.audit, PoisonResult{{}, {}}, spec,
                          PoisonConfig{p.target, 0.0, p.selection_seed,
                                       build_target_caption_set(p.target, vocab)},
                          chash);
    } else {
      PoisonConfig pc;
      pc.target_label = p.target;
      pc.rate = p.rate;
      pc.selection_seed = p.selection_seed;
      pc.caption_templates = build_target_caption_set(p.target, vocab);
      auto pr = poison_dataset(samples, spec, pc, vocab);
      victim = finetune_poisoned(clean, pr.samples, p.cfg);
      if (!p.audit.empty()) save_poison_audit(p.audit, pr, spec, pc, chash);
    }
    save_checkpoint(victim, p.out, {p.cfg.seed, vocab.hash(), chash});
    std::cout << "wrote victim checkpoint " << p.out << "\n";
  });

  // ---- craft-uap ----
  auto* cr = app.add_subcommand("craft-uap", "craft a universal perturbation");
  struct {
    std::string clean, poisoned, data, out;
    double eps = 0.03;
    CraftConfig cfg = [] { CraftConfig c; c.seed = 45; return c; }();
  } c;
  cr->add_option("--clean", c.clean, "clean checkpoint json")->required();
  cr->add_option("--poisoned", c.poisoned, "poisoned checkpoint json")->required();
  cr->add_option("--data", c.data, "craft dataset directory")->required();
  cr->add_option("--out", c.out, "output perturbation json path")->required();
  cr->add_option("--eps", c.eps, "L-inf budget");
  cr->add_option("--lambda-bd", c.cfg.lambda_bd, "backdoor loss weight");
  cr->add_option("--epochs", c.cfg.epochs, "craft epochs");
  cr->add_option("--batch-size", c.cfg.batch_size, "craft batch size");
  cr->add_option("--step-size", c.cfg.step_size, "signed step size");
  cr->add_option("--tau", c.cfg.tau, "backdoor loss temperature");
  cr->add_option("--seed", c.cfg.seed, "craft shuffle seed");
  cr->callback([&] {
    auto [samples, manifest] = load_dataset(c.data, vocab);
    auto clean_w = load_ckpt_checked(c.clean, vocab);
    auto pois_w = load_ckpt_checked(c.poisoned, vocab);
    auto res = craft_uap(clean_w, pois_w, samples, c.cfg, c.eps);
    std::filesystem::path cb(c.clean), pb(c.poisoned);
    cb.replace_extension(".bin");
    pb.replace_extension(".bin");
    save_uap(res.uap, c.out, c.cfg, hash_file_hex(cb), hash_file_hex(pb),
             stage_hash(json{{"stage", "craft-uap"}, {"eps", c.eps},
                             {"cfg", c.cfg.to_json()}}));
    std::cout << "wrote perturbation " << c.out << " (max|delta|="
              << max_abs(res.uap.delta) << ")\n";
  });

  // ---- defend ----
  auto* de = app.add_subcommand("defend", "fine-tune a victim on augmented pairs");
  struct {
    std::string victim, data, uap, out;
    std::string image_aug = "adv", text_aug = "eda";
    DefenseConfig cfg = [] { DefenseConfig d; d.seed = 46; return d; }();
  } d;
  de->add_option("--victim", d.victim, "victim checkpoint json")->required();
  de->add_option("--data", d.data, "defense pool directory")->required();
  de->add_option("--uap", d.uap, "perturbation json (required for --image-aug adv)");
  de->add_option("--image-aug", d.image_aug, "image augmentation: none|adv|conv")
      ->check(CLI::IsMember({"none", "adv", "conv"}));
  de->add_option("--text-aug", d.text_aug, "text augmentation: none|eda")
      ->check(CLI::IsMember({"none", "eda"}));
  de->add_option("--epochs", d.cfg.epochs, "fine-tune epochs");
  de->add_option("--batch-size", d.cfg.batch_size, "batch size");
  de->add_option("--lr", d.cfg.learning_rate, "learning rate");
  de->add_option("--eda-alpha", d.cfg.eda_alpha, "caption augmentation strength");
  de->add_option("--seed", d.cfg.seed, "augmentation/shuffle seed");
  de->callback([&] {
    auto [samples, manifest] = load_dataset(d.data, vocab);
    auto victim = load_ckpt_checked(d.victim, vocab);
    AblationArm arm{image_aug_from_string(d.image_aug),
                    text_aug_from_string(d.text_aug)};
    Uap uap;
    const Uap* uap_ptr = nullptr;
    if (arm.image_mode == ImageAug::adv) {
      if (d.uap.empty())
        throw std::invalid_argument("--image-aug adv requires --uap");
      uap = load_uap(d.uap).uap;
      uap_ptr = &uap;
    }
    auto pairs = build_augmented_pairs(samples, uap_ptr, arm, d.cfg.eda_alpha,
                                       d.cfg.seed, vocab);
    auto defended = finetune_defense(victim, pairs, d.cfg);
    save_checkpoint(defended, d.out,
                    {d.cfg.seed, vocab.hash(),
                     stage_hash(json{{"stage", "defend"},
                                     {"image_aug", d.image_aug},
                                     {"text_aug", d.text_aug},
                                     {"cfg", d.cfg.to_json()}})});
    std::cout << "wrote defended checkpoint " << d.out << "\n";
  });

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "measure CA and ASR for a checkpoint");
  struct {
    std::string ckpt, data, out;
    int target = 2;
    uint64_t seed = 42;
    TriggerFlags trig;
  } e;
  ev->add_option("--ckpt", e.ckpt, "checkpoint json")->required();
  ev->add_option("--data", e.data, "eval dataset directory")->required();
  ev->add_option("--out", e.out, "metrics json path")->required();
  ev->add_option("--target", e.target, "attack target class id");
  ev->add_option("--seed", e.seed, "seed recorded in the metrics");
  e.trig.attach(ev);
  ev->callback([&] {
    auto [samples, manifest] = load_dataset(e.data, vocab);
    auto lc = load_checkpoint(e.ckpt);
    if (lc.meta.vocab_hash != manifest.vocab_hash)
      throw CompatError("vocab hash mismatch between checkpoint " + e.ckpt +
                        " and dataset " + e.data);
    auto prompts = class_prompts(vocab);
    Metrics m;
    m.ca = clean_accuracy(lc.weights, samples, prompts);
    m.asr = attack_success_rate(lc.weights, samples, e.trig.spec(), e.target, prompts);
    m.n_eval = int(samples.size());
    m.seed = e.seed;
    m.checkpoint_hash = lc.weights_hash;
    write_metrics_json(e.out, m,
                       stage_hash(json{{"stage", "evaluate"}, {"target", e.target},
                                       {"trigger", e.trig.spec().to_json()}}));
    std::cout << "CA=" << m.ca << " ASR=" << m.asr << " -> " << e.out << "\n";
  });

  // ---- analyze-sim ----
  auto* si = app.add_subcommand("analyze-sim",
                                "five-way image-caption similarity report");
  struct {
    std::string ckpt, data, uap, out;
    int target = 2;
    int subset = 256;
    TriggerFlags trig;
  } s;
  si->add_option("--ckpt", s.ckpt, "checkpoint json")->required();
  si->add_option("--data", s.data, "eval dataset directory")->required();
  si->add_option("--uap", s.uap, "perturbation json")->required();
  si->add_option("--out", s.out, "similarity json path")->required();
  si->add_option("--target", s.target, "attack target class id");
  si->add_option("--subset", s.subset, "number of non-target samples to use");
  s.trig.attach(si);
  si->callback([&] {
    auto [samples, manifest] = load_dataset(s.data, vocab);
    auto lc = load_checkpoint(s.ckpt);
    if (lc.meta.vocab_hash != manifest.vocab_hash)
      throw CompatError("vocab hash mismatch between checkpoint and dataset");
    auto uap = load_uap(s.uap).uap;
    std::vector<Sample> subset;
    for (const auto& smp : samples) {
      if (smp.class_label == s.target) continue;
      subset.push_back(smp);
      if (int(subset.size()) == s.subset) break;
    }
    std::vector<CaptionTokens> y_tokens;
    for (const auto& cap : build_target_caption_set(s.target, vocab))
      y_tokens.push_back(tokenize(vocab, cap));
    auto rep = similarity_analysis(lc.weights, subset, s.trig.spec(), uap,
                                   y_tokens, unrelated_caption_set(s.target, vocab),
                                   s.target);
    json j = rep.to_json();
    j["checkpoint_hash"] = lc.weights_hash;
    j["config_hash"] = stage_hash(json{{"stage", "analyze-sim"}, {"target", s.target}});
    std::filesystem::path outp(s.out);
    if (!outp.parent_path().empty())
      std::filesystem::create_directories(outp.parent_path());
    std::ofstream outf(outp);
    outf << j.dump(2) << "\n";
    std::cout << "wrote " << s.out << "\n";
  });

  // ---- experiment ----
  auto* ex = app.add_subcommand("experiment", "run the full matrix from a config");
  struct {
    std::string config, out;
    bool resume = false;
    bool use_defaults = false;
  } x;
  ex->add_option("--config", x.config, "experiment config json");
  ex->add_flag("--defaults", x.use_defaults, "run with the built-in default config");
  ex->add_option("--out", x.out, "override the output directory");
  ex->add_flag("--resume", x.resume, "reuse existing stage outputs");
  ex->callback([&] {
    if (x.config.empty() && !x.use_defaults)
      throw std::invalid_argument("experiment: pass --config FILE or --defaults");
    ExperimentConfig cfg = x.config.empty() ? ExperimentConfig::defaults()
                                            : load_experiment_config(x.config);
    if (!x.out.empty()) cfg.out_dir = x.out;
    auto summary = run_experiment(cfg, x.resume);
    std::cout << "experiment complete: " << summary.stages_run.size()
              << " stages computed, report at "
              << (summary.out_dir / "report" / "report.txt").string() << "\n";
  });

  // ---- dump-lexicon ----
  auto* dl = app.add_subcommand("dump-lexicon", "print the synonym lexicon");
  dl->callback([&] {
    std::cout << SynonymLexicon::builtin().to_json().dump(2) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
