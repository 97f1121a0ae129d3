#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "bias/digest.hpp"
#include "model_fixture.hpp"

using namespace bias;

namespace {

class ScreenerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = std::filesystem::temp_directory_path() / "bias_test_screener";
    files_ = bias::testing::train_fixture_model(dir);
    model_ = ScreeningModel::load(files_.checkpoint, files_.vocab);
  }

  static inline bias::testing::ModelFiles files_;
  static inline std::shared_ptr<const ScreeningModel> model_;
};

const std::string kMixed =
    "We are hiring a engineer to join our sales team. We are a young organisation looking for "
    "young and talented marketers. Only men need apply for this analyst role. The position is "
    "based in Berlin. The report was delayed on Monday.";

}  // namespace

TEST_F(ScreenerTest, LoadsWithCheckpointIdentity) {
  EXPECT_EQ(model_->checkpoint_id, file_sha256(files_.checkpoint));
  EXPECT_EQ(model_->network.num_classes(), kNumLabels);
  EXPECT_THROW(ScreeningModel::load(files_.checkpoint, files_.checkpoint), Error);
}

TEST_F(ScreenerTest, FindsTheAgeExample) {
  const Screener s(model_);
  const auto r = s.screen_text("We are a young organisation looking for young and talented marketers.");
  ASSERT_EQ(r.findings.size(), 1u);
  EXPECT_EQ(r.findings[0].label, Label::Age);
  EXPECT_GE(r.findings[0].confidence, 0.5);
}

TEST_F(ScreenerTest, NeutralTextHasNoFindings) {
  SyntheticSpec spec;
  spec.seed = 77;
  spec.size = 60;
  spec.class_mix = {1.0, 0.0, 0.0, 0.0, 0.0};
  spec.general_size = 0;
  spec.domain_size = 0;
  std::string text;
  for (const auto& r : gen_synthetic(spec).labeled) text += r.text + " ";
  const auto r = Screener(model_).screen_text(text);
  EXPECT_EQ(r.sentences, 60u);
  EXPECT_TRUE(r.findings.empty());
}

TEST_F(ScreenerTest, FindingsAreSortedFaithfulAndBiased) {
  const Screener s(model_);
  const auto r = s.screen_text(kMixed, 0.0);
  EXPECT_EQ(r.sentences, 5u);
  EXPECT_EQ(r.source_digest, sha256_hex(kMixed));
  EXPECT_GE(r.findings.size(), 2u);
  for (std::size_t i = 0; i < r.findings.size(); ++i) {
    const auto& f = r.findings[i];
    EXPECT_NE(f.label, Label::Unbiased);
    EXPECT_EQ(kMixed.substr(f.start, f.end - f.start), f.sentence);
    ASSERT_EQ(f.distribution.size(), static_cast<std::size_t>(kNumLabels));
    EXPECT_EQ(f.confidence, *std::max_element(f.distribution.begin(), f.distribution.end()));
    EXPECT_EQ(f.distribution[static_cast<std::size_t>(f.label)], f.confidence);
    if (i > 0) {
      EXPECT_GE(r.findings[i - 1].confidence, f.confidence);
    }
  }
}

TEST_F(ScreenerTest, ThresholdIsMonotone) {
  const Screener s(model_);
  auto key = [](const SentenceFinding& f) { return f.start; };
  std::vector<std::size_t> previous;
  bool first = true;
  for (double t = 0.0; t <= 1.0001; t += 0.05) {
    const auto r = s.screen_text(kMixed, std::min(t, 1.0));
    std::vector<std::size_t> starts;
    for (const auto& f : r.findings) {
      starts.push_back(key(f));
      EXPECT_GE(f.confidence, std::min(t, 1.0));
    }
    std::sort(starts.begin(), starts.end());
    if (!first) EXPECT_TRUE(std::includes(previous.begin(), previous.end(), starts.begin(), starts.end()));
    previous = starts;
    first = false;
  }
}

TEST_F(ScreenerTest, DeterministicAcrossCalls) {
  Screener s(model_);
  const auto a = s.screen_text(kMixed).to_json();
  const auto b = s.screen_text(kMixed).to_json();
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_FALSE(a.contains("elapsed_ms"));
}

TEST_F(ScreenerTest, EmptyOversizeAndThresholdValidation) {
  Screener s(model_, ScreenerConfig{0.5, 64});
  const auto empty = s.screen_text("");
  EXPECT_EQ(empty.sentences, 0u);
  EXPECT_TRUE(empty.findings.empty());
  EXPECT_THROW(s.screen_text(std::string(65, 'a')), SizeError);
  EXPECT_NO_THROW(s.screen_text(std::string(64, 'a')));
  EXPECT_THROW(s.set_threshold(1.5), ConfigError);
  EXPECT_THROW(s.set_threshold(-0.1), ConfigError);
  EXPECT_THROW(s.screen_text("Hello.", 2.0), ConfigError);
  s.set_threshold(0.9);
  EXPECT_EQ(s.threshold(), 0.9);
}
