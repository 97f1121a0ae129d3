#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "bias/corpus.hpp"

namespace bias {

using nlohmann::json;

std::vector<LabeledSentence> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<LabeledSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.contains("text") || !rec.contains("label"))
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": record needs text and label");
    LabeledSentence s;
    s.text = rec.at("text").get<std::string>();
    s.label = rec.at("label").is_number_integer()
                  ? parse_label(std::to_string(rec.at("label").get<int>()))
                  : parse_label(rec.at("label").get<std::string>());
    s.sub_domain = rec.contains("sub_domain")
                       ? parse_sub_domain(rec.at("sub_domain").get<std::string>())
                       : SubDomain::NJD;
    s.source_id = rec.value("source_id", path.filename().string() + ":" + std::to_string(line_no));
    out.push_back(std::move(s));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const LabeledSentence> data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : data) {
    json rec{{"text", s.text},
             {"label", label_name(s.label)},
             {"sub_domain", sub_domain_name(s.sub_domain)},
             {"source_id", s.source_id}};
    out << rec.dump() << '\n';
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void encode_dataset(std::span<LabeledSentence> data, const Vocabulary& vocab) {
  for (auto& s : data) {
    s.tokens = vocab.encode_sentence(s.text);
    if (s.tokens.empty()) throw InputError("sentence '" + s.source_id + "' has no tokens");
  }
}

std::array<std::size_t, kNumLabels> class_counts(std::span<const LabeledSentence> data) {
  std::array<std::size_t, kNumLabels> counts{};
  for (const auto& s : data) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

ValidationReport validate_dataset(std::span<const LabeledSentence> data) {
  ValidationReport r;
  r.records = data.size();
  r.per_class = class_counts(data);
  std::set<std::string> seen, reported;
  for (const auto& s : data) {
    if (s.text.find_first_not_of(" \t\r\n") == std::string::npos) ++r.empty_texts;
    if (!seen.insert(s.text).second && reported.insert(s.text).second)
      r.duplicates.push_back(s.text);
  }
  return r;
}

namespace {

std::size_t floor_share(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

// Adds `deficit` units to quotas, largest fractional remainder first,
// respecting per-class capacity.
void top_up(std::vector<std::size_t>& quota, const std::vector<double>& remainder,
            const std::vector<std::size_t>& capacity, std::size_t deficit) {
  std::vector<std::size_t> order(quota.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  while (deficit > 0) {
    bool progressed = false;
    for (std::size_t c : order) {
      if (deficit == 0) break;
      if (quota[c] < capacity[c]) {
        ++quota[c];
        --deficit;
        progressed = true;
      }
    }
    if (!progressed) throw Error("make_splits: quota allocation failed");
  }
}

}  // namespace

DatasetSplit make_splits(std::span<const LabeledSentence> data, SplitRatios ratios,
                         std::uint64_t seed) {
  if (data.empty()) throw InputError("make_splits: empty dataset");
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-6)
    throw ConfigError("make_splits: ratios must be non-negative and sum to 1");

  const std::size_t n = data.size();
  const std::size_t n_train = floor_share(ratios.train, n);
  const std::size_t n_valid = floor_share(ratios.valid, n);

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(kNumLabels);
  for (std::size_t i = 0; i < n; ++i)
    by_class[static_cast<std::size_t>(data[i].label)].push_back(i);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  std::vector<std::size_t> sizes(kNumLabels), train_q(kNumLabels), valid_q(kNumLabels);
  std::vector<double> train_rem(kNumLabels), valid_rem(kNumLabels);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    sizes[c] = by_class[c].size();
    train_q[c] = floor_share(ratios.train, sizes[c]);
    train_rem[c] = ratios.train * static_cast<double>(sizes[c]) - static_cast<double>(train_q[c]);
    valid_q[c] = floor_share(ratios.valid, sizes[c]);
    valid_rem[c] = ratios.valid * static_cast<double>(sizes[c]) - static_cast<double>(valid_q[c]);
  }
  const auto sum = [](const std::vector<std::size_t>& v) {
    return std::accumulate(v.begin(), v.end(), std::size_t{0});
  };
  top_up(train_q, train_rem, sizes, n_train - sum(train_q));
  std::vector<std::size_t> room(kNumLabels);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    valid_q[c] = std::min(valid_q[c], sizes[c] - train_q[c]);
    room[c] = sizes[c] - train_q[c];
  }
  top_up(valid_q, valid_rem, room, n_valid - sum(valid_q));

  DatasetSplit split;
  split.seed = seed;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const auto& members = by_class[c];
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto& rec = data[members[k]];
      if (k < train_q[c]) split.train.push_back(rec);
      else if (k < train_q[c] + valid_q[c]) split.valid.push_back(rec);
      else split.test.push_back(rec);
    }
  }
  std::shuffle(split.train.begin(), split.train.end(), rng);
  std::shuffle(split.valid.begin(), split.valid.end(), rng);
  std::shuffle(split.test.begin(), split.test.end(), rng);
  return split;
}

}  // namespace bias
