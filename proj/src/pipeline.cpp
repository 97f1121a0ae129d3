#include "bias/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "bias/digest.hpp"

namespace bias {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string_view stage_role_name(StageRole role) {
  return role == StageRole::General ? "general" : "domain";
}

StageRole parse_stage_role(std::string_view text) {
  if (text == "general") return StageRole::General;
  if (text == "domain") return StageRole::Domain;
  throw ConfigError("unknown stage role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- plan

void StagePlan::validate() const {
  if (stages.empty()) throw ConfigError("plan: at least one stage is required");
  for (std::size_t i = 1; i < stages.size(); ++i)
    if (stages[i].role < stages[i - 1].role)
      throw OrderingError("plan: stage " + std::to_string(i + 1) + " (" +
                          std::string(stage_role_name(stages[i].role)) + ") follows a " +
                          std::string(stage_role_name(stages[i - 1].role)) +
                          " stage; corpora must run general before domain");
  for (const auto& s : stages) {
    if (s.settings.epochs < 0) throw ConfigError("plan: stage epochs must be >= 0");
    if (s.settings.batch_size < 1) throw ConfigError("plan: stage batch_size must be >= 1");
  }
  if (classifier.patience < 1) throw ConfigError("plan: classifier patience must be >= 1");
}

StagePlan StagePlan::from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  StagePlan plan;
  try {
    plan.seed = j.value("seed", std::uint64_t{1});
    plan.labeled = resolve(j.at("labeled").get<std::string>());
    plan.output_dir = resolve(j.value("output_dir", std::string("out")));
    if (j.contains("vocab")) {
      plan.vocab_min_freq = j["vocab"].value("min_freq", plan.vocab_min_freq);
      plan.vocab_max_size = j["vocab"].value("max_size", plan.vocab_max_size);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      plan.model.embed_dim = m.value("embed_dim", plan.model.embed_dim);
      plan.model.hidden_dim = m.value("hidden_dim", plan.model.hidden_dim);
      plan.model.dropout_keep = m.value("dropout_keep", plan.model.dropout_keep);
      plan.model.bptt_window = m.value("bptt_window", plan.model.bptt_window);
    }
    if (j.contains("split")) {
      plan.split.train = j["split"].value("train", plan.split.train);
      plan.split.valid = j["split"].value("valid", plan.split.valid);
      plan.split.test = j["split"].value("test", plan.split.test);
    }
    for (const auto& s : j.at("stages")) {
      Stage st;
      st.corpus = resolve(s.at("corpus").get<std::string>());
      st.role = parse_stage_role(s.value("role", std::string("general")));
      st.settings.epochs = s.value("epochs", st.settings.epochs);
      st.settings.learning_rate = s.value("learning_rate", st.settings.learning_rate);
      st.settings.batch_size = s.value("batch_size", st.settings.batch_size);
      st.settings.valid_fraction = s.value("valid_fraction", st.settings.valid_fraction);
      plan.stages.push_back(st);
    }
    if (j.contains("classifier")) {
      const auto& c = j["classifier"];
      plan.classifier.max_epochs = c.value("max_epochs", plan.classifier.max_epochs);
      plan.classifier.patience = c.value("patience", plan.classifier.patience);
      plan.classifier.learning_rate = c.value("learning_rate", plan.classifier.learning_rate);
      plan.classifier.batch_size = c.value("batch_size", plan.classifier.batch_size);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  return plan;
}

StagePlan StagePlan::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("plan: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("plan: " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json StagePlan::to_json() const {
  json stages_json = json::array();
  for (const auto& s : stages)
    stages_json.push_back({{"corpus", s.corpus.string()},
                           {"role", stage_role_name(s.role)},
                           {"epochs", s.settings.epochs},
                           {"learning_rate", s.settings.learning_rate},
                           {"batch_size", s.settings.batch_size},
                           {"valid_fraction", s.settings.valid_fraction}});
  return json{{"seed", seed},
              {"labeled", labeled.string()},
              {"output_dir", output_dir.string()},
              {"vocab", {{"min_freq", vocab_min_freq}, {"max_size", vocab_max_size}}},
              {"model",
               {{"embed_dim", model.embed_dim},
                {"hidden_dim", model.hidden_dim},
                {"dropout_keep", model.dropout_keep},
                {"bptt_window", model.bptt_window}}},
              {"split", {{"train", split.train}, {"valid", split.valid}, {"test", split.test}}},
              {"stages", stages_json},
              {"classifier",
               {{"max_epochs", classifier.max_epochs},
                {"patience", classifier.patience},
                {"learning_rate", classifier.learning_rate},
                {"batch_size", classifier.batch_size}}}};
}

// ---------------------------------------------------------------- log

json TrainRecord::to_json() const {
  json j{{"stage", stage},
         {"epoch", epoch},
         {"train_loss", train_loss},
         {"valid_loss", valid_loss},
         {"wall_ms", wall_ms}};
  j["valid_perplexity"] = valid_perplexity ? json(*valid_perplexity) : json(nullptr);
  j["valid_macro_f1"] = valid_macro_f1 ? json(*valid_macro_f1) : json(nullptr);
  return j;
}

void TrainLog::append(TrainRecord record) {
  for (const auto& r : records_)
    if (r.stage == record.stage && r.epoch == record.epoch)
      throw StateError("train log: duplicate record for " + record.stage + " epoch " +
                       std::to_string(record.epoch));
  records_.push_back(std::move(record));
}

std::vector<TrainRecord> TrainLog::stage(const std::string& id) const {
  std::vector<TrainRecord> out;
  std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
               [&](const TrainRecord& r) { return r.stage == id; });
  return out;
}

void TrainLog::write_jsonl(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("train log: cannot write " + path.string());
  for (const auto& r : records_) out << r.to_json().dump() << '\n';
}

// ---------------------------------------------------------------- LM stages

std::vector<int> sentence_stream(std::span<const std::string> sentences, const Vocabulary& vocab) {
  std::vector<int> stream{Vocabulary::kBos};
  for (const auto& s : sentences) {
    const auto ids = vocab.encode_sentence(s);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(Vocabulary::kEos);
  }
  return stream;
}

double lm_stream_loss(const LmNetwork<float>& net, std::span<const std::vector<int>> streams,
                      int batch_size) {
  const auto batches = make_lm_batches(streams, batch_size, net.config.bptt_window);
  RecurrentState<float> state;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& b : batches.batches) {
    if (b.reset_state) state = {};
    const Dense2D probs = forward_lm(net, b.inputs, Mode::Eval, 0, nullptr, &state);
    const auto flat = flatten_targets<float>(b.targets);
    for (std::size_t r = 0; r < flat.size(); ++r) {
      if (flat[r] < 0) continue;
      total -= std::log(std::max(static_cast<double>(probs(static_cast<Index>(r), flat[r])),
                                 kProbFloor));
      ++count;
    }
  }
  if (count == 0) throw InputError("lm_stream_loss: no target tokens");
  return total / static_cast<double>(count);
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

/// One pass over the stream windows in order, carrying hidden state.
double train_lm_epoch(LmNetwork<float>& net, const LmBatches& batches, const AdamConfig& adam,
                      std::mt19937_64& rng) {
  RecurrentState<float> state;
  ForwardCache<float> cache;
  auto params = net.parameters();
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : batches.batches) {
    if (b.reset_state) state = {};
    forward_lm(net, b.inputs, Mode::Train, rng(), &cache, &state);
    const auto flat = flatten_targets<float>(b.targets);
    const std::size_t n = static_cast<std::size_t>(
        std::count_if(flat.begin(), flat.end(), [](int t) { return t >= 0; }));
    loss_sum += cross_entropy(cache.probs, flat) * static_cast<double>(n);
    tokens += n;
    backward_bptt(net, cache, b.targets);
    adam_step_all<float>(params, adam);
  }
  return tokens == 0 ? 0.0 : loss_sum / static_cast<double>(tokens);
}

}  // namespace

StageResult run_pretrain_stage(const PretrainRequest& request, const Vocabulary& vocab,
                               TrainLog& log) {
  if (request.corpus.empty())
    throw InputError("pretrain " + request.stage_id + ": empty corpus");
  StageResult result;
  LmNetwork<float> net;
  if (request.checkpoint_in) {
    net = lm_from_checkpoint(load_checkpoint(*request.checkpoint_in, vocab.digest()));
    result.input_hash = file_sha256(*request.checkpoint_in);
  } else {
    ModelConfig cfg = request.model;
    cfg.vocab_size = vocab.size();
    cfg.num_classes = 0;
    net = LmNetwork<float>(cfg, derive_seed(request.seed, 101));
  }

  std::vector<std::string> train = request.corpus;
  std::vector<std::string> valid = request.validation;
  if (valid.empty()) {
    std::mt19937_64 split_rng(derive_seed(request.seed, 202));
    std::shuffle(train.begin(), train.end(), split_rng);
    const auto n_valid = std::max<std::size_t>(
        1, static_cast<std::size_t>(request.settings.valid_fraction *
                                    static_cast<double>(train.size())));
    if (n_valid >= train.size())
      throw InputError("pretrain " + request.stage_id + ": corpus too small to hold out validation");
    valid.assign(train.end() - static_cast<std::ptrdiff_t>(n_valid), train.end());
    train.resize(train.size() - n_valid);
  }
  const std::vector<std::vector<int>> train_streams{sentence_stream(train, vocab)};
  const std::vector<std::vector<int>> valid_streams{sentence_stream(valid, vocab)};
  const auto batches =
      make_lm_batches(train_streams, request.settings.batch_size, net.config.bptt_window);

  AdamConfig adam;
  adam.learning_rate = request.settings.learning_rate;
  adam.validate();
  std::mt19937_64 rng(derive_seed(request.seed, 303));

  LmNetwork<float> best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < request.settings.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    TrainRecord rec;
    rec.stage = request.stage_id;
    rec.epoch = epoch;
    rec.train_loss = train_lm_epoch(net, batches, adam, rng);
    rec.valid_loss = lm_stream_loss(net, valid_streams, request.settings.batch_size);
    rec.valid_perplexity = std::exp(rec.valid_loss);
    rec.wall_ms = elapsed_ms(start);
    if (rec.valid_loss < best_loss) {
      best_loss = rec.valid_loss;
      best = net;
      result.best_epoch = epoch;
    }
    result.records.push_back(rec);
    log.append(std::move(rec));
  }

  save_checkpoint(best, vocab.digest(), request.checkpoint_out);
  result.checkpoint = request.checkpoint_out;
  result.output_hash = file_sha256(request.checkpoint_out);
  return result;
}

// ---------------------------------------------------------------- classifier

Predictions predict(const ClassifierNetwork<float>& net, std::span<const LabeledSentence> data,
                    int batch_size) {
  Predictions out;
  out.probs.resize(static_cast<Index>(data.size()), net.num_classes());
  out.labels.resize(data.size());
  const auto batches = make_cls_batches(data, batch_size);
  Index row = 0;
  for (const auto& b : batches) {
    const Dense2D p = forward_classifier(net, b.tokens, b.lengths, Mode::Eval, 0);
    for (Index r = 0; r < p.rows(); ++r, ++row) {
      out.probs.row(row) = p.row(r).cast<double>();
      Index arg = 0;
      p.row(r).maxCoeff(&arg);
      out.labels[static_cast<std::size_t>(row)] = static_cast<int>(arg);
    }
  }
  return out;
}

EvalReport evaluate(const ClassifierNetwork<float>& net, std::span<const LabeledSentence> data) {
  const Predictions p = predict(net, data);
  std::vector<int> golds;
  for (const auto& s : data) golds.push_back(static_cast<int>(s.label));
  return full_report(golds, p.labels, p.probs, label_names());
}

namespace {

struct ValidScore {
  double macro_f1 = 0.0;
  double loss = 0.0;
};

ValidScore score_validation(const ClassifierNetwork<float>& net,
                            std::span<const LabeledSentence> valid) {
  const Predictions p = predict(net, valid);
  std::vector<int> golds;
  for (const auto& s : valid) golds.push_back(static_cast<int>(s.label));
  const auto cm = confusion(golds, p.labels, net.num_classes());
  return {prf(cm, Averaging::Macro).f1, cross_entropy(p.probs, golds)};
}

std::vector<char> head_bytes(const LmNetwork<float>& net) {
  std::vector<char> out;
  for (const auto* p : {&net.head_w, &net.head_b}) {
    const auto* begin = reinterpret_cast<const char*>(p->value.data());
    out.insert(out.end(), begin, begin + p->value.size() * static_cast<Index>(sizeof(float)));
  }
  return out;
}

FinetuneResult train_classifier(ClassifierNetwork<float> net, const DatasetSplit& split,
                                const Vocabulary& vocab, const ClassifierSettings& settings,
                                std::uint64_t seed, const fs::path& checkpoint_out, TrainLog& log,
                                const std::string& stage_id) {
  const auto counts = class_counts(split.train);
  for (int c = 0; c < kNumLabels; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw StratificationError("finetune: class " + std::string(label_name(static_cast<Label>(c))) +
                                " missing from the training partition");
  if (split.valid.empty() || split.test.empty())
    throw InputError("finetune: validation and test partitions must be non-empty");
  if (settings.batch_size < 1 || settings.max_epochs < 0 || settings.patience < 1)
    throw ConfigError("finetune: invalid classifier settings");

  AdamConfig adam;
  adam.learning_rate = settings.learning_rate;
  adam.validate();
  std::mt19937_64 rng(derive_seed(seed, 404));
  const std::vector<char> frozen_head = head_bytes(net.backbone);

  FinetuneResult result;
  ClassifierNetwork<float> best = net;
  ValidScore best_score{-1.0, std::numeric_limits<double>::infinity()};
  int stale = 0;
  std::vector<LabeledSentence> order(split.train.begin(), split.train.end());
  ForwardCache<float> cache;
  auto params = net.trainable_parameters();

  for (int epoch = 0; epoch < settings.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (const auto& b : make_cls_batches(order, settings.batch_size)) {
      forward_classifier(net, b.tokens, b.lengths, Mode::Train, rng(), &cache);
      loss_sum += cross_entropy(cache.probs, b.labels) * static_cast<double>(b.labels.size());
      backward_bptt(net, cache, b.labels);
      adam_step_all<float>(params, adam);
    }
    if (net.lm_head_frozen && head_bytes(net.backbone) != frozen_head)
      throw StateError("finetune: frozen LM head changed during training");

    const ValidScore score = score_validation(net, split.valid);
    TrainRecord rec;
    rec.stage = stage_id;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.valid_loss = score.loss;
    rec.valid_macro_f1 = score.macro_f1;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                      .count();
    result.records.push_back(rec);
    log.append(std::move(rec));
    result.epochs_run = epoch + 1;

    const bool improved = score.macro_f1 > best_score.macro_f1 ||
                          (score.macro_f1 == best_score.macro_f1 && score.loss < best_score.loss);
    if (improved) {
      best_score = score;
      best = net;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= settings.patience) {
      break;
    }
  }

  if (settings.restore_best) net = std::move(best);
  if (net.lm_head_frozen && head_bytes(net.backbone) != frozen_head)
    throw StateError("finetune: frozen LM head changed during training");

  result.report = evaluate(net, split.test);
  save_checkpoint(net, vocab.digest(), checkpoint_out);
  result.checkpoint = checkpoint_out;
  result.output_hash = file_sha256(checkpoint_out);
  result.network = std::move(net);
  return result;
}

}  // namespace

FinetuneResult finetune_classifier(LmNetwork<float> backbone, const DatasetSplit& split,
                                   const Vocabulary& vocab, const ClassifierSettings& settings,
                                   std::uint64_t seed, const fs::path& checkpoint_out,
                                   TrainLog& log, const std::string& stage_id) {
  if (backbone.config.vocab_size != vocab.size())
    throw CompatibilityError("finetune: backbone vocabulary size " +
                             std::to_string(backbone.config.vocab_size) + " != " +
                             std::to_string(vocab.size()));
  auto net = attach_classifier_head(std::move(backbone), kNumLabels, true);
  return train_classifier(std::move(net), split, vocab, settings, seed, checkpoint_out, log,
                          stage_id);
}

FinetuneResult finetune_classifier(const fs::path& lm_checkpoint, const DatasetSplit& split,
                                   const Vocabulary& vocab, const ClassifierSettings& settings,
                                   std::uint64_t seed, const fs::path& checkpoint_out,
                                   TrainLog& log, const std::string& stage_id) {
  return finetune_classifier(lm_from_checkpoint(load_checkpoint(lm_checkpoint, vocab.digest())),
                             split, vocab, settings, seed, checkpoint_out, log, stage_id);
}

FinetuneResult ablate_no_pretrain(const DatasetSplit& split, const Vocabulary& vocab,
                                  const ModelConfig& model, const ClassifierSettings& settings,
                                  std::uint64_t seed, const fs::path& checkpoint_out,
                                  TrainLog& log) {
  ModelConfig cfg = model;
  cfg.vocab_size = vocab.size();
  cfg.num_classes = 0;
  auto net = attach_classifier_head(LmNetwork<float>(cfg, derive_seed(seed, 101)), kNumLabels,
                                    false);
  return train_classifier(std::move(net), split, vocab, settings, seed, checkpoint_out, log,
                          "ablation");
}

// ---------------------------------------------------------------- progressive

Vocabulary shared_vocabulary(std::span<const std::vector<std::string>> corpora,
                             std::span<const LabeledSentence> labeled, int min_freq,
                             int max_size) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& corpus : corpora)
    for (const auto& s : corpus) streams.push_back(tokenize(s));
  for (const auto& s : labeled) streams.push_back(tokenize(s.text));
  return build_vocab(streams, min_freq, max_size);
}

ProgressiveResult run_progressive(const StagePlan& plan) {
  plan.validate();
  fs::create_directories(plan.output_dir);

  std::vector<std::vector<std::string>> corpora;
  for (const auto& s : plan.stages) corpora.push_back(read_lines(s.corpus));
  std::vector<LabeledSentence> labeled = read_jsonl(plan.labeled);
  if (labeled.empty()) throw InputError("run_progressive: labelled data is empty");

  ProgressiveResult result;
  result.vocab = shared_vocabulary(corpora, labeled, plan.vocab_min_freq, plan.vocab_max_size);
  result.vocab_path = plan.output_dir / "vocab.txt";
  result.vocab.save(result.vocab_path);
  encode_dataset(labeled, result.vocab);

  std::optional<fs::path> previous;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& stage = plan.stages[i];
    PretrainRequest req;
    req.checkpoint_in = previous;
    req.model = plan.model;
    req.corpus = corpora[i];
    req.settings = stage.settings;
    req.seed = derive_seed(plan.seed, 1000 + i);
    req.stage_id = "stage" + std::to_string(i + 1) + "-" + std::string(stage_role_name(stage.role));
    req.checkpoint_out = plan.output_dir / (req.stage_id + ".ckpt");
    try {
      result.stages.push_back(run_pretrain_stage(req, result.vocab, result.log));
    } catch (const std::exception& e) {
      throw Error("run_progressive: " + req.stage_id + " failed: " + e.what() +
                  "; last good checkpoint: " + (previous ? previous->string() : "<none>"));
    }
    previous = req.checkpoint_out;
    result.checkpoints.push_back(req.checkpoint_out);
  }

  const DatasetSplit split = make_splits(labeled, plan.split, derive_seed(plan.seed, 2000));
  try {
    result.classifier =
        finetune_classifier(*previous, split, result.vocab, plan.classifier,
                            derive_seed(plan.seed, 3000), plan.output_dir / "classifier.ckpt",
                            result.log);
  } catch (const std::exception& e) {
    throw Error(std::string("run_progressive: classifier stage failed: ") + e.what() +
                "; last good checkpoint: " + previous->string());
  }
  result.checkpoints.push_back(result.classifier.checkpoint);

  result.log.write_jsonl(plan.output_dir / "train_log.jsonl");
  std::ofstream(plan.output_dir / "report.json", std::ios::trunc)
      << result.classifier.report.to_json().dump(2) << '\n';
  std::ofstream(plan.output_dir / "report.txt", std::ios::trunc)
      << result.classifier.report.to_table("LSTM-LM");
  return result;
}

}  // namespace bias
