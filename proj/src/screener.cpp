#include "bias/screener.hpp"

#include <algorithm>
#include <chrono>

#include "bias/digest.hpp"

namespace bias {

nlohmann::json ScreenResult::to_json() const {
  using nlohmann::json;
  json items = json::array();
  for (const auto& f : findings) {
    json dist = json::object();
    for (std::size_t k = 0; k < f.distribution.size(); ++k)
      dist[std::string(label_name(static_cast<Label>(k)))] = f.distribution[k];
    items.push_back({{"sentence", f.sentence},
                     {"span", {f.start, f.end}},
                     {"label", label_name(f.label)},
                     {"confidence", f.confidence},
                     {"distribution", dist}});
  }
  return json{{"source_digest", source_digest},
              {"checkpoint_id", checkpoint_id},
              {"threshold", threshold},
              {"sentences", sentences},
              {"findings", items}};
}

std::shared_ptr<const ScreeningModel> ScreeningModel::load(const std::filesystem::path& checkpoint,
                                                           const std::filesystem::path& vocab_path) {
  auto model = std::make_shared<ScreeningModel>();
  model->vocab = Vocabulary::load(vocab_path);
  model->network = classifier_from_checkpoint(load_checkpoint(checkpoint, model->vocab.digest()));
  if (model->network.num_classes() != kNumLabels)
    throw CompatibilityError("screener: checkpoint has " +
                             std::to_string(model->network.num_classes()) + " classes, expected " +
                             std::to_string(kNumLabels));
  model->checkpoint_id = file_sha256(checkpoint);
  return model;
}

Screener::Screener(std::shared_ptr<const ScreeningModel> model, ScreenerConfig config)
    : model_(std::move(model)), config_(config) {
  if (!model_) throw ConfigError("screener: no model");
  set_threshold(config_.threshold);
}

void Screener::set_threshold(double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ConfigError("screener: threshold must lie in [0,1]");
  config_.threshold = threshold;
}

ScreenResult Screener::screen_text(std::string_view text) const {
  return screen_text(text, config_.threshold);
}

ScreenResult Screener::screen_text(std::string_view text, double threshold) const {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ConfigError("screener: threshold must lie in [0,1]");
  if (text.size() > config_.max_bytes)
    throw SizeError("screener: text of " + std::to_string(text.size()) + " bytes exceeds " +
                    std::to_string(config_.max_bytes));
  const auto start = std::chrono::steady_clock::now();
  ScreenResult result;
  result.source_digest = sha256_hex(text);
  result.checkpoint_id = model_->checkpoint_id;
  result.threshold = threshold;

  const auto spans = split_sentence_spans(text);
  result.sentences = spans.size();
  for (const auto& span : spans) {
    const auto ids = model_->vocab.encode_sentence(span.text);
    if (ids.empty()) continue;
    const RowVec<float> probs = forward_classifier(model_->network, ids);
    Index arg = 0;
    const double confidence = probs.maxCoeff(&arg);
    const auto label = static_cast<Label>(arg);
    if (label == Label::Unbiased || confidence < threshold) continue;
    SentenceFinding f;
    f.sentence = span.text;
    f.start = span.start;
    f.end = span.end;
    f.label = label;
    f.confidence = confidence;
    for (Index k = 0; k < probs.size(); ++k) f.distribution.push_back(probs(k));
    result.findings.push_back(std::move(f));
  }
  // stable: ties keep source order
  std::stable_sort(result.findings.begin(), result.findings.end(),
                   [](const SentenceFinding& a, const SentenceFinding& b) {
                     return a.confidence > b.confidence;
                   });
  result.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace bias
