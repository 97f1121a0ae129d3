#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "bias/digest.hpp"
#include "bias/pipeline.hpp"

using namespace bias;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "bias_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig small_model() {
  ModelConfig m;
  m.embed_dim = 16;
  m.hidden_dim = 24;
  m.bptt_window = 12;
  return m;
}

SyntheticCorpus small_corpus(std::size_t labeled, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.size = labeled;
  spec.general_size = 300;
  spec.domain_size = 150;
  return gen_synthetic(spec);
}

struct Prepared {
  Vocabulary vocab;
  DatasetSplit split;
};

Prepared prepare(SyntheticCorpus& c, std::uint64_t seed = 5) {
  Prepared p;
  const std::vector<std::vector<std::string>> corpora{c.general, c.domain};
  p.vocab = shared_vocabulary(corpora, c.labeled, 1, 5000);
  encode_dataset(c.labeled, p.vocab);
  p.split = make_splits(c.labeled, {}, seed);
  return p;
}

/// Predicts a class when a sentence contains a filler from that class's
/// marker slots, UNBIASED otherwise.
int rule_oracle(const std::string& text) {
  const auto& lex = default_lexicon();
  const auto toks = tokenize(text);
  for (int c = kNumLabels - 1; c >= 1; --c)
    for (const auto& slot : lex.marker_slots[static_cast<std::size_t>(c)])
      for (const auto& filler : lex.slots.at(slot))
        if (std::find(toks.begin(), toks.end(), filler) != toks.end()) return c;
  return 0;
}

std::vector<char> bytes_of(const Dense2D& m) {
  const auto* p = reinterpret_cast<const char*>(m.data());
  return {p, p + m.size() * static_cast<Index>(sizeof(float))};
}

}  // namespace

TEST(Seeds, DerivedSeedsDifferBySalt) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(7, s));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(TrainLog, RejectsDuplicateStageEpoch) {
  TrainLog log;
  log.append({"a", 0});
  log.append({"a", 1});
  log.append({"b", 0});
  EXPECT_THROW(log.append({"a", 1}), StateError);
  EXPECT_EQ(log.stage("a").size(), 2u);
}

TEST(Plan, OrderingEnforced) {
  StagePlan plan;
  plan.stages = {{"d.txt", StageRole::Domain}, {"g.txt", StageRole::General}};
  EXPECT_THROW(plan.validate(), OrderingError);
  plan.stages = {{"g.txt", StageRole::General}};
  EXPECT_NO_THROW(plan.validate());
  plan.stages = {{"g1.txt", StageRole::General}, {"g2.txt", StageRole::General},
                 {"d.txt", StageRole::Domain}};
  EXPECT_NO_THROW(plan.validate());
  plan.stages.clear();
  EXPECT_THROW(plan.validate(), ConfigError);
}

TEST(Plan, JsonRoundTripAndRelativePaths) {
  StagePlan plan;
  plan.stages = {{"general.txt", StageRole::General}, {"domain.txt", StageRole::Domain}};
  plan.stages[1].settings.epochs = 3;
  plan.labeled = "labeled.jsonl";
  plan.output_dir = "run";
  plan.seed = 42;
  plan.model = small_model();
  plan.classifier.patience = 2;
  const auto j = plan.to_json();
  const auto back = StagePlan::from_json(j, "/data");
  EXPECT_EQ(back.stages.size(), 2u);
  EXPECT_EQ(back.stages[0].corpus, fs::path("/data/general.txt"));
  EXPECT_EQ(back.stages[1].role, StageRole::Domain);
  EXPECT_EQ(back.stages[1].settings.epochs, 3);
  EXPECT_EQ(back.labeled, fs::path("/data/labeled.jsonl"));
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.model.hidden_dim, 24);
  EXPECT_EQ(back.classifier.patience, 2);
  EXPECT_EQ(StagePlan::from_json(j).to_json(), j);
  auto bad = j;
  bad["stages"] = nlohmann::json::array({j["stages"][1], j["stages"][0]});
  EXPECT_THROW(StagePlan::from_json(bad).validate(), OrderingError);
}

TEST(Pretrain, ZeroEpochsReproduceInputCheckpoint) {
  const auto dir = scratch("zero");
  auto c = small_corpus(50);
  auto p = prepare(c);
  ModelConfig cfg = small_model();
  cfg.vocab_size = p.vocab.size();
  save_checkpoint(LmNetwork<float>(cfg, 9), p.vocab.digest(), dir / "in.ckpt");
  PretrainRequest req;
  req.checkpoint_in = dir / "in.ckpt";
  req.corpus = c.general;
  req.settings.epochs = 0;
  req.checkpoint_out = dir / "out.ckpt";
  TrainLog log;
  const auto r = run_pretrain_stage(req, p.vocab, log);
  EXPECT_EQ(r.input_hash, r.output_hash);
  EXPECT_EQ(file_sha256(dir / "in.ckpt"), file_sha256(dir / "out.ckpt"));
  EXPECT_TRUE(log.records().empty());
}

TEST(Pretrain, WrongVocabularyAndEmptyCorpus) {
  const auto dir = scratch("vocab");
  auto c = small_corpus(50);
  auto p = prepare(c);
  ModelConfig cfg = small_model();
  cfg.vocab_size = p.vocab.size();
  save_checkpoint(LmNetwork<float>(cfg, 9), "not-the-digest", dir / "in.ckpt");
  PretrainRequest req;
  req.checkpoint_in = dir / "in.ckpt";
  req.corpus = c.general;
  req.checkpoint_out = dir / "out.ckpt";
  TrainLog log;
  EXPECT_THROW(run_pretrain_stage(req, p.vocab, log), CompatibilityError);
  req.corpus.clear();
  EXPECT_THROW(run_pretrain_stage(req, p.vocab, log), InputError);
}

TEST(Pretrain, LossFallsAndPerplexityIsLogged) {
  const auto dir = scratch("lm");
  auto c = small_corpus(50);
  auto p = prepare(c);
  PretrainRequest req;
  req.model = small_model();
  req.corpus = c.general;
  req.settings.epochs = 3;
  req.checkpoint_out = dir / "lm.ckpt";
  TrainLog log;
  const auto r = run_pretrain_stage(req, p.vocab, log);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_TRUE(r.input_hash.empty());
  for (const auto& rec : r.records) {
    ASSERT_TRUE(rec.valid_perplexity.has_value());
    EXPECT_NEAR(*rec.valid_perplexity, std::exp(rec.valid_loss), 1e-9 * *rec.valid_perplexity);
  }
  EXPECT_LT(r.records.back().valid_loss, r.records.front().valid_loss);
  EXPECT_EQ(r.output_hash, file_sha256(dir / "lm.ckpt"));
}

TEST(Finetune, MissingTrainingClassIsStratificationError) {
  const auto dir = scratch("strat");
  auto c = small_corpus(100);
  auto p = prepare(c);
  auto& train = p.split.train;
  train.erase(std::remove_if(train.begin(), train.end(),
                             [](const auto& s) { return s.label == Label::Ambiguous; }),
              train.end());
  ModelConfig cfg = small_model();
  cfg.vocab_size = p.vocab.size();
  TrainLog log;
  EXPECT_THROW(finetune_classifier(LmNetwork<float>(cfg, 1), p.split, p.vocab, {}, 1,
                                   dir / "c.ckpt", log),
               StratificationError);
}

TEST(Finetune, ValidationLabelsNeverReachGradients) {
  const auto dir = scratch("valid");
  auto c = small_corpus(120);
  auto p = prepare(c);
  ModelConfig cfg = small_model();
  cfg.vocab_size = p.vocab.size();
  ClassifierSettings s;
  s.max_epochs = 3;
  s.patience = 100;
  s.restore_best = false;
  TrainLog log_a, log_b;
  const auto a = finetune_classifier(LmNetwork<float>(cfg, 1), p.split, p.vocab, s, 4,
                                     dir / "a.ckpt", log_a);
  auto shuffled = p.split;
  std::mt19937_64 rng(8);
  for (auto& r : shuffled.valid) r.label = static_cast<Label>(std::uniform_int_distribution<int>(0, 4)(rng));
  const auto b = finetune_classifier(LmNetwork<float>(cfg, 1), shuffled, p.vocab, s, 4,
                                     dir / "b.ckpt", log_b);
  const auto pa = a.network.parameters(), pb = b.network.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(bytes_of(pa[i]->value), bytes_of(pb[i]->value)) << pa[i]->name;
  for (std::size_t e = 0; e < a.records.size(); ++e)
    EXPECT_EQ(a.records[e].train_loss, b.records[e].train_loss);
}

TEST(Finetune, LmHeadStaysFrozen) {
  const auto dir = scratch("freeze");
  auto c = small_corpus(120);
  auto p = prepare(c);
  ModelConfig cfg = small_model();
  cfg.vocab_size = p.vocab.size();
  const LmNetwork<float> backbone(cfg, 2);
  ClassifierSettings s;
  s.max_epochs = 2;
  TrainLog log;
  const auto r = finetune_classifier(backbone, p.split, p.vocab, s, 4, dir / "c.ckpt", log);
  EXPECT_EQ(bytes_of(r.network.backbone.head_w.value), bytes_of(backbone.head_w.value));
  EXPECT_EQ(bytes_of(r.network.backbone.head_b.value), bytes_of(backbone.head_b.value));
  EXPECT_NE(bytes_of(r.network.backbone.lstm[0].wx.value), bytes_of(backbone.lstm[0].wx.value));
  EXPECT_TRUE(read_checkpoint(dir / "c.ckpt").lm_head_frozen);
  EXPECT_EQ(r.report.support, static_cast<long>(p.split.test.size()));
}

TEST(Finetune, SeparableSetIsLearned) {
  const auto dir = scratch("separable");
  auto c = small_corpus(200, 11);
  // the generator's marker lexicon alone separates the classes
  long oracle_hits = 0;
  for (const auto& r : c.labeled) oracle_hits += rule_oracle(r.text) == static_cast<int>(r.label);
  ASSERT_GE(double(oracle_hits) / double(c.labeled.size()), 0.95);

  auto p = prepare(c);
  ClassifierSettings s;
  s.max_epochs = 40;
  s.patience = 40;
  s.restore_best = false;
  s.learning_rate = 3e-3;
  ModelConfig cfg = small_model();
  cfg.dropout_keep = 1.0;
  TrainLog log;
  const auto r = ablate_no_pretrain(p.split, p.vocab, cfg, s, 6, dir / "c.ckpt", log);
  const auto train_report = evaluate(r.network, p.split.train);
  EXPECT_GE(train_report.macro.f1, 0.95);
}

TEST(Progressive, ChainLinksAndReproduces) {
  const auto dir = scratch("progressive");
  auto c = small_corpus(150);
  write_lines(dir / "general.txt", c.general);
  write_lines(dir / "domain.txt", c.domain);
  write_jsonl(dir / "labeled.jsonl", c.labeled);
  StagePlan plan;
  plan.stages = {{dir / "general.txt", StageRole::General}, {dir / "domain.txt", StageRole::Domain}};
  for (auto& s : plan.stages) s.settings.epochs = 1;
  plan.labeled = dir / "labeled.jsonl";
  plan.output_dir = dir / "run1";
  plan.model = small_model();
  plan.classifier.max_epochs = 2;
  const auto a = run_progressive(plan);
  ASSERT_EQ(a.checkpoints.size(), 3u);
  EXPECT_TRUE(a.stages[0].input_hash.empty());
  EXPECT_EQ(a.stages[1].input_hash, a.stages[0].output_hash);
  EXPECT_EQ(a.stages[1].output_hash, file_sha256(a.checkpoints[1]));
  for (const auto* f : {"vocab.txt", "train_log.jsonl", "report.json", "report.txt"})
    EXPECT_TRUE(fs::exists(plan.output_dir / f)) << f;

  plan.output_dir = dir / "run2";
  const auto b = run_progressive(plan);
  EXPECT_EQ(b.classifier.output_hash, a.classifier.output_hash);
  EXPECT_EQ(b.classifier.report.to_json(), a.classifier.report.to_json());

  plan.stages.pop_back();
  plan.output_dir = dir / "run3";
  EXPECT_EQ(run_progressive(plan).checkpoints.size(), 2u);
}
