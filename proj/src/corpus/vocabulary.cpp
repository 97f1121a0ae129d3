#include <algorithm>
#include <fstream>
#include <sstream>

#include "bias/corpus.hpp"
#include "bias/digest.hpp"

namespace bias {

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>", "<bos>", "<eos>"} { finalize(); }

void Vocabulary::finalize() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw FormatError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  digest_ = sha256_hex(joined);
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> streams, int min_freq,
                             int max_size) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
  if (max_size < kNumSpecials) throw ConfigError("build_vocab: max_size must be >= 4");
  Vocabulary v;
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& stream : streams)
    for (const auto& tok : stream) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq)
    if (n >= static_cast<std::size_t>(min_freq) && !v.contains(tok)) ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t room = static_cast<std::size_t>(max_size - kNumSpecials);
  if (ranked.size() > room) ranked.resize(room);
  for (auto& [tok, n] : ranked) v.tokens_.push_back(tok);
  v.min_freq_ = min_freq;
  v.max_size_ = max_size;
  v.finalize();
  return v;
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> streams, int min_freq,
                       int max_size) {
  return Vocabulary::build(streams, min_freq, max_size);
}

int Vocabulary::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || index >= size())
    throw IndexError("vocabulary: index " + std::to_string(index) + " out of range");
  return tokens_[static_cast<std::size_t>(index)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token(id));
  return out;
}

std::vector<int> Vocabulary::encode_sentence(std::string_view sentence) const {
  const auto toks = tokenize(sentence);
  return encode(toks);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("vocabulary: cannot write " + path.string());
  out << "#vocab min_freq=" << min_freq_ << " max_size=" << max_size_ << " size=" << size()
      << " digest=" << digest_ << '\n';
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("vocabulary: cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.rfind("#vocab", 0) != 0) throw FormatError("vocabulary: missing header");
  Vocabulary v;
  v.tokens_.clear();
  std::string expected_digest;
  std::size_t expected_size = 0;
  std::istringstream hs(header.substr(6));
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "min_freq") v.min_freq_ = std::stoi(value);
    else if (key == "max_size") v.max_size_ = std::stoi(value);
    else if (key == "size") expected_size = std::stoul(value);
    else if (key == "digest") expected_digest = value;
  }
  std::string line;
  while (std::getline(in, line)) v.tokens_.push_back(line);
  if (v.tokens_.size() != expected_size)
    throw FormatError("vocabulary: header declares " + std::to_string(expected_size) +
                      " tokens, file holds " + std::to_string(v.tokens_.size()));
  v.finalize();
  if (v.digest_ != expected_digest) throw FormatError("vocabulary: digest mismatch");
  return v;
}

}  // namespace bias
