#pragma once

// Text pipeline: sentence splitting, tokenisation, vocabulary, labelled
// datasets with stratified splits, batch construction, and the synthetic
// bias-corpus generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bias/net.hpp"

namespace bias {

// ---------------------------------------------------------------- labels

enum class Label : int { Unbiased = 0, Gender = 1, Race = 2, Age = 3, Ambiguous = 4 };
inline constexpr int kNumLabels = 5;
inline constexpr std::array<Label, kNumLabels> kAllLabels{Label::Unbiased, Label::Gender,
                                                          Label::Race, Label::Age,
                                                          Label::Ambiguous};

std::string_view label_name(Label label);
/// Case-insensitive; accepts "not_appropriate" for AMBIGUOUS and class indices.
Label parse_label(std::string_view text);
std::vector<std::string> label_names();

enum class SubDomain { JD, NJD };
std::string_view sub_domain_name(SubDomain d);
SubDomain parse_sub_domain(std::string_view text);

// ---------------------------------------------------------------- text

struct SentenceSpan {
  std::string text;
  std::size_t start = 0;  // byte offsets into the source, [start, end)
  std::size_t end = 0;
};

/// Lower-case abbreviations (with trailing period) that never end a sentence.
const std::vector<std::string>& abbreviation_table();

std::vector<SentenceSpan> split_sentence_spans(std::string_view text);
std::vector<std::string> split_sentences(std::string_view text);

inline constexpr std::string_view kNumToken = "NUM";

/// Lower-cases, splits on whitespace, isolates punctuation, maps digit runs to NUM.
std::vector<std::string> tokenize(std::string_view sentence);

// ---------------------------------------------------------------- vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary();

  /// Keeps tokens seen at least min_freq times, most frequent first (ties
  /// broken lexicographically), capped at max_size entries including specials.
  static Vocabulary build(std::span<const std::vector<std::string>> streams, int min_freq,
                          int max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  int index(std::string_view token) const;
  const std::string& token(int index) const;
  bool contains(std::string_view token) const;

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;
  std::vector<int> encode_sentence(std::string_view sentence) const;

  const std::string& digest() const { return digest_; }
  int min_freq() const { return min_freq_; }
  int max_size() const { return max_size_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// "#vocab min_freq=.. max_size=.. size=.. digest=.." then one token per line.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void finalize();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::string digest_;
  int min_freq_ = 1;
  int max_size_ = 0;
};

Vocabulary build_vocab(std::span<const std::vector<std::string>> streams, int min_freq,
                       int max_size);

// ---------------------------------------------------------------- datasets

struct LabeledSentence {
  std::string text;
  std::vector<int> tokens;
  Label label = Label::Unbiased;
  SubDomain sub_domain = SubDomain::NJD;
  std::string source_id;
};

std::vector<LabeledSentence> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const LabeledSentence> data);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// Fills `tokens` for each record; a sentence with no tokens is an input error.
void encode_dataset(std::span<LabeledSentence> data, const Vocabulary& vocab);

std::array<std::size_t, kNumLabels> class_counts(std::span<const LabeledSentence> data);

/// Label-set and duplicate-text check standing in for annotation QA.
struct ValidationReport {
  std::size_t records = 0;
  std::array<std::size_t, kNumLabels> per_class{};
  std::size_t empty_texts = 0;
  std::vector<std::string> duplicates;
  bool ok() const { return empty_texts == 0 && duplicates.empty(); }
};
ValidationReport validate_dataset(std::span<const LabeledSentence> data);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<LabeledSentence> train;
  std::vector<LabeledSentence> valid;
  std::vector<LabeledSentence> test;
  std::uint64_t seed = 0;
};

/// Stratified shuffled split. Partition sizes: train = floor(r_train * N),
/// valid = floor(r_valid * N), test = the remainder; per-class quotas are
/// floor(r * n_c) topped up by largest fractional remainder.
DatasetSplit make_splits(std::span<const LabeledSentence> data, SplitRatios ratios,
                         std::uint64_t seed);

// ---------------------------------------------------------------- batching

/// One window of `lanes` parallel contiguous slices of a stream.
/// targets are inputs shifted by one; -1 marks padding past a lane's end.
struct LmBatch {
  TokenMatrix inputs;
  TokenMatrix targets;
  bool reset_state = false;  // first window of a stream
  std::size_t stream = 0;
};

struct LmBatches {
  std::vector<LmBatch> batches;
  std::size_t skipped_streams = 0;  // streams shorter than 2 tokens
};

LmBatches make_lm_batches(std::span<const std::vector<int>> streams, int batch_size,
                          int bptt_window);

struct ClsBatch {
  TokenMatrix tokens;  // PAD-filled to the longest sentence in the batch
  std::vector<int> lengths;
  std::vector<int> labels;
};

std::vector<ClsBatch> make_cls_batches(std::span<const LabeledSentence> data, int batch_size);

// ---------------------------------------------------------------- synthetic data

/// Generator tables. Templates use {slot} placeholders filled from `slots`;
/// in biased templates the trigger phrase is wrapped in [ ].
struct SyntheticLexicon {
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<std::string> neutral_jd;
  std::vector<std::string> neutral_njd;
  // Indexed by Label; the UNBIASED entry stays empty.
  std::array<std::vector<std::string>, kNumLabels> biased_jd;
  std::array<std::vector<std::string>, kNumLabels> biased_njd;
  // Slots whose fillers signal a class; used only by rule-based oracles.
  std::array<std::vector<std::string>, kNumLabels> marker_slots;
};

const SyntheticLexicon& default_lexicon();

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t size = 500;
  std::array<double, kNumLabels> class_mix{0.50, 0.25, 0.12, 0.08, 0.05};
  double jd_fraction = 0.4375;
  std::size_t general_size = 6000;  // unlabelled sentences, all topics
  std::size_t domain_size = 2000;   // unlabelled sentences, job descriptions only
  double unlabeled_biased_rate = 0.3;
  SyntheticLexicon lexicon = default_lexicon();
};

struct SyntheticCorpus {
  std::vector<LabeledSentence> labeled;
  std::vector<std::string> trigger_spans;  // parallel to labeled; empty when unbiased
  std::vector<std::string> general;
  std::vector<std::string> domain;
};

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

}  // namespace bias
