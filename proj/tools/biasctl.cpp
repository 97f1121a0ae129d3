// biasctl: command-line entry point for data prep, training, evaluation,
// screening and serving.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "bias/gateway.hpp"
#include "bias/pipeline.hpp"
#include "bias/screener.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct SeedFlag {
  std::uint64_t value = 0;
  CLI::Option* option = nullptr;

  void attach(CLI::App* app) {
    option = app->add_option("--seed", value, "Run seed (default: random, echoed to stderr)");
  }
  std::uint64_t resolve() {
    if (option == nullptr || option->count() == 0) {
      std::random_device rd;
      value = (static_cast<std::uint64_t>(rd()) << 32) | rd();
    }
    std::cerr << "seed: " << value << '\n';
    return value;
  }
};

struct ModelFlags {
  bias::ModelConfig cfg;
  void attach(CLI::App* app) {
    app->add_option("--embed-dim", cfg.embed_dim, "Embedding width")->capture_default_str();
    app->add_option("--hidden-dim", cfg.hidden_dim, "LSTM hidden width")->capture_default_str();
    app->add_option("--bptt", cfg.bptt_window, "BPTT window")->capture_default_str();
    app->add_option("--dropout-keep", cfg.dropout_keep, "Dropout keep probability")
        ->capture_default_str();
  }
};

struct ClassifierFlags {
  bias::ClassifierSettings s;
  void attach(CLI::App* app) {
    app->add_option("--max-epochs", s.max_epochs)->capture_default_str();
    app->add_option("--patience", s.patience)->capture_default_str();
    app->add_option("--lr", s.learning_rate)->capture_default_str();
    app->add_option("--batch-size", s.batch_size)->capture_default_str();
  }
};

std::string read_all(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<int> read_label_file(const fs::path& path) {
  std::vector<int> out;
  for (const auto& line : bias::read_lines(path)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(static_cast<int>(bias::parse_label(line)));
  }
  return out;
}

bias::Dense<double> read_scores(const fs::path& path, std::size_t rows) {
  std::vector<std::vector<double>> table;
  for (const auto& line : bias::read_lines(path)) {
    std::istringstream is(line);
    std::vector<double> row;
    for (double v; is >> v;) row.push_back(v);
    if (!row.empty()) table.push_back(std::move(row));
  }
  if (table.size() != rows)
    throw bias::DimensionError("eval: " + std::to_string(table.size()) + " score rows for " +
                               std::to_string(rows) + " predictions");
  bias::Dense<double> scores(static_cast<bias::Index>(rows),
                             static_cast<bias::Index>(table.front().size()));
  for (std::size_t r = 0; r < rows; ++r) {
    if (table[r].size() != table.front().size())
      throw bias::DimensionError("eval: ragged score rows");
    for (std::size_t k = 0; k < table[r].size(); ++k)
      scores(static_cast<bias::Index>(r), static_cast<bias::Index>(k)) = table[r][k];
  }
  return scores;
}

void print_report(const bias::EvalReport& report, const std::string& row_name) {
  std::printf("accuracy %.4f  kappa %.4f  auc %.4f  macro_f1 %.4f\n\n", report.accuracy,
              report.cks, report.auc, report.macro.f1);
  std::cout << report.to_table(row_name);
}

bias::DatasetSplit load_split(const fs::path& data, const bias::Vocabulary& vocab,
                              std::uint64_t seed) {
  auto labeled = bias::read_jsonl(data);
  bias::encode_dataset(labeled, vocab);
  return bias::make_splits(labeled, {}, bias::derive_seed(seed, 2000));
}

volatile std::sig_atomic_t g_stop = 0;
extern "C" void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias detection toolkit: corpora, LSTM language-model pretraining, "
               "classifier fine-tuning, evaluation, screening and serving"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic labelled and unlabelled corpora");
  fs::path gen_out;
  bias::SyntheticSpec spec;
  int gen_epochs = 20;
  SeedFlag gen_seed;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--size", spec.size, "Labelled sentences")->capture_default_str();
  gen->add_option("--general-size", spec.general_size)->capture_default_str();
  gen->add_option("--domain-size", spec.domain_size)->capture_default_str();
  gen->add_option("--plan-epochs", gen_epochs, "LM epochs written into plan.json")
      ->capture_default_str();
  gen_seed.attach(gen);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from text or JSONL inputs");
  std::vector<fs::path> bv_inputs;
  fs::path bv_out;
  int bv_min_freq = 1, bv_max_size = 20000;
  SeedFlag bv_seed;
  bv->add_option("--input", bv_inputs, "Text (one sentence per line) or .jsonl files")
      ->required()
      ->check(CLI::ExistingFile);
  bv->add_option("--out", bv_out)->required();
  bv->add_option("--min-freq", bv_min_freq)->capture_default_str();
  bv->add_option("--max-size", bv_max_size)->capture_default_str();
  bv_seed.attach(bv);

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Run one language-model stage");
  fs::path pt_corpus, pt_vocab, pt_out, pt_in, pt_log;
  bias::StageSettings pt_settings;
  ModelFlags pt_model;
  SeedFlag pt_seed;
  pt->add_option("--corpus", pt_corpus, "One sentence per line")->required()->check(CLI::ExistingFile);
  pt->add_option("--vocab", pt_vocab)->required()->check(CLI::ExistingFile);
  pt->add_option("--out", pt_out, "Checkpoint to write")->required();
  pt->add_option("--checkpoint-in", pt_in, "Start from this checkpoint")->check(CLI::ExistingFile);
  pt->add_option("--log", pt_log, "Training log (JSONL)");
  pt->add_option("--epochs", pt_settings.epochs)->capture_default_str();
  pt->add_option("--lr", pt_settings.learning_rate)->capture_default_str();
  pt->add_option("--batch-size", pt_settings.batch_size)->capture_default_str();
  pt_model.attach(pt);
  pt_seed.attach(pt);

  // run-pipeline
  auto* rp = app.add_subcommand("run-pipeline", "Run every stage of a plan, then fine-tune");
  fs::path rp_plan, rp_out;
  SeedFlag rp_seed;
  rp->add_option("--plan", rp_plan, "Plan file (JSON)")->required()->check(CLI::ExistingFile);
  rp->add_option("--out", rp_out, "Override the plan's output directory");
  rp_seed.attach(rp);

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune a classifier on a pretrained LM");
  fs::path ft_ckpt, ft_vocab, ft_data, ft_out, ft_report;
  ClassifierFlags ft_cls;
  SeedFlag ft_seed;
  ft->add_option("--checkpoint", ft_ckpt, "LM checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--vocab", ft_vocab)->required()->check(CLI::ExistingFile);
  ft->add_option("--data", ft_data, "Labelled JSONL")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "Classifier checkpoint to write")->required();
  ft->add_option("--report", ft_report, "Write the test report as JSON");
  ft_cls.attach(ft);
  ft_seed.attach(ft);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train the classifier from random init (no pretraining)");
  fs::path ab_vocab, ab_data, ab_out, ab_report;
  ClassifierFlags ab_cls;
  ModelFlags ab_model;
  SeedFlag ab_seed;
  ab->add_option("--vocab", ab_vocab)->required()->check(CLI::ExistingFile);
  ab->add_option("--data", ab_data, "Labelled JSONL")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", ab_out, "Classifier checkpoint to write")->required();
  ab->add_option("--report", ab_report, "Write the test report as JSON");
  ab_cls.attach(ab);
  ab_model.attach(ab);
  ab_seed.attach(ab);

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against gold labels");
  fs::path ev_pred, ev_gold, ev_scores;
  std::string ev_name = "model";
  bool ev_json = false;
  SeedFlag ev_seed;
  ev->add_option("--pred", ev_pred, "One label per line")->required()->check(CLI::ExistingFile);
  ev->add_option("--gold", ev_gold, "One label per line")->required()->check(CLI::ExistingFile);
  ev->add_option("--scores", ev_scores, "Whitespace-separated class scores, one row per line")
      ->check(CLI::ExistingFile);
  ev->add_option("--name", ev_name, "Row name in the table");
  ev->add_flag("--json", ev_json, "Print the report as JSON");
  ev_seed.attach(ev);

  // screen
  auto* sc = app.add_subcommand("screen", "Flag biased sentences in a text");
  fs::path sc_ckpt, sc_vocab, sc_file;
  std::string sc_text;
  double sc_threshold = 0.5;
  std::string sc_format = "json";
  SeedFlag sc_seed;
  sc->add_option("--checkpoint", sc_ckpt, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
  sc->add_option("--vocab", sc_vocab, "Vocabulary (default: vocab.txt beside the checkpoint)");
  auto* text_opt = sc->add_option("--text", sc_text, "Text to screen");
  sc->add_option("--file", sc_file, "File to screen (default: standard input)")
      ->check(CLI::ExistingFile)
      ->excludes(text_opt);
  sc->add_option("--threshold", sc_threshold)->capture_default_str();
  sc->add_option("--format", sc_format)->check(CLI::IsMember({"json", "text"}))->capture_default_str();
  sc_seed.attach(sc);

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP screening service");
  bias::GatewayConfig gw;
  if (const char* v = std::getenv("BIAS_HOST")) gw.host = v;
  if (const char* v = std::getenv("BIAS_PORT")) gw.port = std::atoi(v);
  if (const char* v = std::getenv("BIAS_CHECKPOINT")) gw.checkpoint = v;
  if (const char* v = std::getenv("BIAS_VOCAB")) gw.vocab = v;
  if (const char* v = std::getenv("BIAS_WORKERS")) gw.workers = std::strtoul(v, nullptr, 10);
  if (const char* v = std::getenv("BIAS_LOG")) gw.log_path = v;
  SeedFlag sv_seed;
  bool sv_no_cors = false;
  sv->add_option("--host", gw.host)->capture_default_str();
  sv->add_option("--port", gw.port, "0 picks a free port")->capture_default_str();
  sv->add_option("--checkpoint", gw.checkpoint, "Classifier checkpoint");
  sv->add_option("--vocab", gw.vocab, "Vocabulary (default: vocab.txt beside the checkpoint)");
  sv->add_option("--workers", gw.workers)->capture_default_str()->check(CLI::PositiveNumber);
  sv->add_option("--threshold", gw.threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  sv->add_option("--log", gw.log_path)->capture_default_str();
  sv->add_option("--max-bytes", gw.max_text_bytes)->capture_default_str();
  sv->add_flag("--no-cors", sv_no_cors, "Omit cross-origin headers");
  sv_seed.attach(sv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      spec.seed = gen_seed.resolve();
      const auto corpus = bias::gen_synthetic(spec);
      fs::create_directories(gen_out);
      bias::write_jsonl(gen_out / "labeled.jsonl", corpus.labeled);
      bias::write_lines(gen_out / "general.txt", corpus.general);
      bias::write_lines(gen_out / "domain.txt", corpus.domain);
      bias::StagePlan plan;
      plan.seed = spec.seed;
      plan.labeled = "labeled.jsonl";
      plan.output_dir = "run";
      plan.stages = {{"general.txt", bias::StageRole::General, {}},
                     {"domain.txt", bias::StageRole::Domain, {}}};
      for (auto& s : plan.stages) s.settings.epochs = gen_epochs;
      std::ofstream(gen_out / "plan.json") << plan.to_json().dump(2) << '\n';
      std::printf("wrote %zu labelled, %zu general, %zu domain sentences to %s\n",
                  corpus.labeled.size(), corpus.general.size(), corpus.domain.size(),
                  gen_out.c_str());
    } else if (*bv) {
      bv_seed.resolve();
      std::vector<std::vector<std::string>> streams;
      for (const auto& in : bv_inputs) {
        std::vector<std::string> tokens;
        auto add = [&](const std::string& s) {
          for (auto& t : bias::tokenize(s)) tokens.push_back(std::move(t));
        };
        if (in.extension() == ".jsonl")
          for (const auto& r : bias::read_jsonl(in)) add(r.text);
        else
          for (const auto& line : bias::read_lines(in)) add(line);
        streams.push_back(std::move(tokens));
      }
      const auto vocab = bias::build_vocab(streams, bv_min_freq, bv_max_size);
      vocab.save(bv_out);
      std::printf("vocabulary: %d tokens, digest %s\n", vocab.size(), vocab.digest().c_str());
    } else if (*pt) {
      const auto vocab = bias::Vocabulary::load(pt_vocab);
      bias::PretrainRequest req;
      if (!pt_in.empty()) req.checkpoint_in = pt_in;
      req.model = pt_model.cfg;
      req.corpus = bias::read_lines(pt_corpus);
      req.settings = pt_settings;
      req.seed = pt_seed.resolve();
      req.checkpoint_out = pt_out;
      req.stage_id = "pretrain";
      bias::TrainLog log;
      const auto res = bias::run_pretrain_stage(req, vocab, log);
      for (const auto& r : res.records)
        std::printf("epoch %d  train_loss %.4f  valid_loss %.4f  valid_ppl %.3f\n", r.epoch,
                    r.train_loss, r.valid_loss, r.valid_perplexity.value_or(0.0));
      if (!pt_log.empty()) log.write_jsonl(pt_log);
      std::printf("checkpoint %s  sha256 %s  best_epoch %d\n", res.checkpoint.c_str(),
                  res.output_hash.c_str(), res.best_epoch);
    } else if (*rp) {
      auto plan = bias::StagePlan::load(rp_plan);
      // without --seed the plan's own seed applies
      if (rp_seed.option->count() > 0) plan.seed = rp_seed.value;
      if (!rp_out.empty()) plan.output_dir = rp_out;
      std::cerr << "seed: " << plan.seed << '\n';
      const auto res = bias::run_progressive(plan);
      for (const auto& s : res.stages)
        std::printf("stage %s  in %s  out %s\n", s.checkpoint.filename().c_str(),
                    s.input_hash.empty() ? "-" : s.input_hash.c_str(), s.output_hash.c_str());
      print_report(res.classifier.report, "LSTM-LM");
    } else if (*ft) {
      const auto seed = ft_seed.resolve();
      const auto vocab = bias::Vocabulary::load(ft_vocab);
      const auto split = load_split(ft_data, vocab, seed);
      bias::TrainLog log;
      const auto res = bias::finetune_classifier(ft_ckpt, split, vocab, ft_cls.s,
                                                 bias::derive_seed(seed, 3000), ft_out, log);
      if (!ft_report.empty()) std::ofstream(ft_report) << res.report.to_json().dump(2) << '\n';
      print_report(res.report, "LSTM-LM");
    } else if (*ab) {
      const auto seed = ab_seed.resolve();
      const auto vocab = bias::Vocabulary::load(ab_vocab);
      const auto split = load_split(ab_data, vocab, seed);
      bias::TrainLog log;
      const auto res = bias::ablate_no_pretrain(split, vocab, ab_model.cfg, ab_cls.s,
                                                bias::derive_seed(seed, 3000), ab_out, log);
      if (!ab_report.empty()) std::ofstream(ab_report) << res.report.to_json().dump(2) << '\n';
      print_report(res.report, "LSTM");
    } else if (*ev) {
      ev_seed.resolve();
      const auto golds = read_label_file(ev_gold);
      const auto preds = read_label_file(ev_pred);
      if (golds.size() != preds.size())
        throw bias::DimensionError("eval: " + std::to_string(preds.size()) + " predictions for " +
                                   std::to_string(golds.size()) + " gold labels");
      int k = 0;
      for (int v : golds) k = std::max(k, v + 1);
      for (int v : preds) k = std::max(k, v + 1);
      bias::Dense<double> scores;
      if (!ev_scores.empty()) {
        scores = read_scores(ev_scores, preds.size());
        k = std::max(k, static_cast<int>(scores.cols()));
      } else {
        // hard predictions as one-hot scores
        scores = bias::Dense<double>::Zero(static_cast<bias::Index>(preds.size()), k);
        for (std::size_t i = 0; i < preds.size(); ++i)
          scores(static_cast<bias::Index>(i), preds[i]) = 1.0;
      }
      std::vector<std::string> names;
      for (int c = 0; c < k; ++c)
        names.emplace_back(c < bias::kNumLabels ? bias::label_name(static_cast<bias::Label>(c))
                                                : std::to_string(c));
      const auto report = bias::full_report(golds, preds, scores, names);
      if (ev_json)
        std::cout << report.to_json().dump(2) << '\n';
      else
        print_report(report, ev_name);
    } else if (*sc) {
      sc_seed.resolve();
      if (sc_vocab.empty()) sc_vocab = sc_ckpt.parent_path() / "vocab.txt";
      std::string text;
      if (!sc_text.empty() || text_opt->count() > 0) {
        text = sc_text;
      } else if (!sc_file.empty()) {
        std::ifstream in(sc_file, std::ios::binary);
        text = read_all(in);
      } else {
        text = read_all(std::cin);
      }
      bias::Screener screener(bias::ScreeningModel::load(sc_ckpt, sc_vocab));
      screener.set_threshold(sc_threshold);
      const auto result = screener.screen_text(text);
      if (sc_format == "json") {
        std::cout << result.to_json().dump(2) << '\n';
      } else {
        std::printf("%zu sentences, %zu findings (threshold %.2f)\n", result.sentences,
                    result.findings.size(), result.threshold);
        for (const auto& f : result.findings)
          std::printf("%-10s %6.4f  [%6zu,%6zu)  %s\n", std::string(bias::label_name(f.label)).c_str(),
                      f.confidence, f.start, f.end, f.sentence.c_str());
      }
    } else if (*sv) {
      sv_seed.resolve();
      gw.cors = !sv_no_cors;
      if (gw.checkpoint.empty())
        throw bias::ConfigError("serve: --checkpoint (or BIAS_CHECKPOINT) is required");
      if (gw.vocab.empty()) gw.vocab = gw.checkpoint.parent_path() / "vocab.txt";
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      bias::Gateway gateway(gw);
      gateway.load_model_async();
      const int port = gateway.start();
      std::printf("listening on %s:%d (workers %zu)\n", gw.host.c_str(), port, gw.workers);
      std::fflush(stdout);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      gateway.stop();
    }
  } catch (const bias::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
