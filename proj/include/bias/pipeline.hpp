#pragma once

// Progressive transfer learning: language-model stages over corpora ordered
// general -> domain, each initialised from the previous stage's checkpoint,
// then a classifier fine-tuned on labelled data with the LM head frozen.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bias/checkpoint.hpp"
#include "bias/corpus.hpp"
#include "bias/metrics.hpp"

namespace bias {

/// splitmix64 finaliser; derives independent sub-seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

enum class StageRole { General = 0, Domain = 1 };
std::string_view stage_role_name(StageRole role);
StageRole parse_stage_role(std::string_view text);

struct StageSettings {
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 8;  // parallel lanes per LM window
  double valid_fraction = 0.1;
};

struct ClassifierSettings {
  int max_epochs = 30;
  int patience = 5;
  double learning_rate = 1e-3;
  int batch_size = 16;
  bool restore_best = true;
};

struct Stage {
  std::filesystem::path corpus;
  StageRole role = StageRole::General;
  StageSettings settings;
};

struct StagePlan {
  std::vector<Stage> stages;
  std::filesystem::path labeled;
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  ModelConfig model;
  int vocab_min_freq = 1;
  int vocab_max_size = 20000;
  SplitRatios split;
  ClassifierSettings classifier;

  /// Throws OrderingError unless every general stage precedes every domain stage.
  void validate() const;

  /// Relative paths are resolved against `base_dir`.
  static StagePlan from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static StagePlan load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct TrainRecord {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::optional<double> valid_perplexity;  // LM stages
  std::optional<double> valid_macro_f1;    // classifier stage
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

/// Append-only, one record per (stage, epoch).
class TrainLog {
 public:
  void append(TrainRecord record);
  const std::vector<TrainRecord>& records() const { return records_; }
  std::vector<TrainRecord> stage(const std::string& id) const;
  void write_jsonl(const std::filesystem::path& path) const;

 private:
  std::vector<TrainRecord> records_;
};

/// One sentence list -> one token stream: BOS, then each sentence followed by EOS.
std::vector<int> sentence_stream(std::span<const std::string> sentences, const Vocabulary& vocab);

/// Mean next-token cross-entropy over a stream, evaluated in windows with the
/// hidden state carried across them.
double lm_stream_loss(const LmNetwork<float>& net, std::span<const std::vector<int>> streams,
                      int batch_size);

struct PretrainRequest {
  std::optional<std::filesystem::path> checkpoint_in;  // nullopt: fresh random init
  ModelConfig model;                                   // used for a fresh init
  std::vector<std::string> corpus;
  std::vector<std::string> validation;  // empty: hold out settings.valid_fraction of corpus
  StageSettings settings;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_out;
  std::string stage_id = "stage";
};

struct StageResult {
  std::filesystem::path checkpoint;
  std::string input_hash;  // file hash of checkpoint_in; empty for a fresh start
  std::string output_hash;
  int best_epoch = -1;
  std::vector<TrainRecord> records;
};

/// Trains the language model on one corpus and writes the best-validation
/// checkpoint. Zero epochs rewrite the input model unchanged.
StageResult run_pretrain_stage(const PretrainRequest& request, const Vocabulary& vocab,
                               TrainLog& log);

struct FinetuneResult {
  std::filesystem::path checkpoint;
  std::string output_hash;
  EvalReport report;  // on the test partition
  int epochs_run = 0;
  int best_epoch = -1;
  std::vector<TrainRecord> records;
  ClassifierNetwork<float> network;
};

/// Class probabilities (n x K, double) and argmax predictions, eval mode.
struct Predictions {
  Dense<double> probs;
  std::vector<int> labels;
};
Predictions predict(const ClassifierNetwork<float>& net, std::span<const LabeledSentence> data,
                    int batch_size = 64);

EvalReport evaluate(const ClassifierNetwork<float>& net, std::span<const LabeledSentence> data);

/// Attaches a class head to `backbone` and trains on split.train with the LM
/// head frozen, early-stopping on validation macro-F1. The split must already
/// be encoded with `vocab`.
FinetuneResult finetune_classifier(LmNetwork<float> backbone, const DatasetSplit& split,
                                   const Vocabulary& vocab, const ClassifierSettings& settings,
                                   std::uint64_t seed, const std::filesystem::path& checkpoint_out,
                                   TrainLog& log, const std::string& stage_id = "classifier");

FinetuneResult finetune_classifier(const std::filesystem::path& lm_checkpoint,
                                   const DatasetSplit& split, const Vocabulary& vocab,
                                   const ClassifierSettings& settings, std::uint64_t seed,
                                   const std::filesystem::path& checkpoint_out, TrainLog& log,
                                   const std::string& stage_id = "classifier");

/// Same training as finetune_classifier from a random init, LM head not frozen.
FinetuneResult ablate_no_pretrain(const DatasetSplit& split, const Vocabulary& vocab,
                                  const ModelConfig& model, const ClassifierSettings& settings,
                                  std::uint64_t seed, const std::filesystem::path& checkpoint_out,
                                  TrainLog& log);

struct ProgressiveResult {
  Vocabulary vocab;
  std::filesystem::path vocab_path;
  std::vector<std::filesystem::path> checkpoints;  // one per stage, then the classifier
  std::vector<StageResult> stages;
  FinetuneResult classifier;
  TrainLog log;
};

/// Loads corpora and labelled data, builds the shared vocabulary, runs every
/// stage in order and fine-tunes the classifier. Writes vocab.txt,
/// stage checkpoints, classifier.ckpt, train_log.jsonl, report.json and
/// report.txt into plan.output_dir.
ProgressiveResult run_progressive(const StagePlan& plan);

/// Builds the shared vocabulary over stage corpora plus labelled texts.
Vocabulary shared_vocabulary(std::span<const std::vector<std::string>> corpora,
                             std::span<const LabeledSentence> labeled, int min_freq,
                             int max_size);

}  // namespace bias
