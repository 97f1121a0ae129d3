#pragma once

// Document -> sentences -> class distributions -> findings above a confidence
// threshold, most confident first.

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bias/checkpoint.hpp"
#include "bias/corpus.hpp"

namespace bias {

struct SentenceFinding {
  std::string sentence;
  std::size_t start = 0;  // byte span in the source text
  std::size_t end = 0;
  Label label = Label::Unbiased;
  double confidence = 0.0;  // max class probability
  std::vector<double> distribution;
};

struct ScreenResult {
  std::string source_digest;
  std::string checkpoint_id;
  double threshold = 0.5;
  std::vector<SentenceFinding> findings;
  std::size_t sentences = 0;
  double elapsed_ms = 0.0;  // not part of to_json

  /// Deterministic serialisation (timing excluded).
  nlohmann::json to_json() const;
};

/// A loaded classifier plus the vocabulary it was trained with. Immutable.
struct ScreeningModel {
  ClassifierNetwork<float> network;
  Vocabulary vocab;
  std::string checkpoint_id;  // file hash of the checkpoint

  static std::shared_ptr<const ScreeningModel> load(const std::filesystem::path& checkpoint,
                                                    const std::filesystem::path& vocab_path);
};

struct ScreenerConfig {
  double threshold = 0.5;
  std::size_t max_bytes = 1 << 20;
};

class Screener {
 public:
  explicit Screener(std::shared_ptr<const ScreeningModel> model, ScreenerConfig config = {});

  /// Threshold outside [0,1] is a ConfigError.
  void set_threshold(double threshold);
  double threshold() const { return config_.threshold; }
  std::size_t max_bytes() const { return config_.max_bytes; }
  const ScreeningModel& model() const { return *model_; }

  /// Reentrant. Empty text gives an empty result; text above max_bytes throws SizeError.
  ScreenResult screen_text(std::string_view text) const;
  ScreenResult screen_text(std::string_view text, double threshold) const;

 private:
  std::shared_ptr<const ScreeningModel> model_;
  ScreenerConfig config_;
};

}  // namespace bias
