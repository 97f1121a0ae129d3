#include <algorithm>
#include <cctype>

#include "bias/corpus.hpp"

namespace bias {

namespace {

constexpr std::array<std::string_view, kNumLabels> kLabelNames{"UNBIASED", "GENDER", "RACE",
                                                               "AGE", "AMBIGUOUS"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool is_abbreviation(std::string_view text, std::size_t period) {
  std::size_t begin = period;
  while (begin > 0 && !is_space(text[begin - 1])) --begin;
  std::string word = lower(text.substr(begin, period - begin + 1));
  while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\''))
    word.erase(word.begin());
  const auto& table = abbreviation_table();
  return std::find(table.begin(), table.end(), word) != table.end();
}

void push_trimmed(std::vector<SentenceSpan>& out, std::string_view text, std::size_t begin,
                  std::size_t end) {
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  if (begin < end) out.push_back({std::string(text.substr(begin, end - begin)), begin, end});
}

}  // namespace

std::string_view label_name(Label label) { return kLabelNames[static_cast<std::size_t>(label)]; }

std::vector<std::string> label_names() { return {kLabelNames.begin(), kLabelNames.end()}; }

Label parse_label(std::string_view text) {
  std::string upper(text);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (int i = 0; i < kNumLabels; ++i)
    if (upper == kLabelNames[static_cast<std::size_t>(i)]) return static_cast<Label>(i);
  if (upper == "NOT_APPROPRIATE" || upper == "NOT APPROPRIATE") return Label::Ambiguous;
  if (upper.size() == 1 && upper[0] >= '0' && upper[0] < '0' + kNumLabels)
    return static_cast<Label>(upper[0] - '0');
  throw InputError("unknown label '" + std::string(text) + "'");
}

std::string_view sub_domain_name(SubDomain d) { return d == SubDomain::JD ? "JD" : "NJD"; }

SubDomain parse_sub_domain(std::string_view text) {
  const std::string l = lower(text);
  if (l == "jd") return SubDomain::JD;
  if (l == "njd") return SubDomain::NJD;
  throw InputError("unknown sub_domain '" + std::string(text) + "'");
}

const std::vector<std::string>& abbreviation_table() {
  static const std::vector<std::string> table{
      "e.g.", "i.e.", "etc.", "vs.",  "dr.",  "mr.",   "mrs.", "ms.",  "prof.", "sr.",
      "jr.",  "st.",  "inc.", "ltd.", "co.",  "corp.", "no.",  "approx.", "dept.", "u.s.",
      "a.m.", "p.m.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.", "est."};
  return table;
}

std::vector<SentenceSpan> split_sentence_spans(std::string_view text) {
  std::vector<SentenceSpan> out;
  std::size_t seg = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_terminal(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_terminal(text[j])) ++j;
    while (j < n && is_closer(text[j])) ++j;
    if (j >= n) break;
    if (!is_space(text[j])) {
      i = j;
      continue;
    }
    std::size_t k = j;
    while (k < n && is_space(text[k])) ++k;
    const bool next_starts = k < n && (std::isupper(static_cast<unsigned char>(text[k])) ||
                                       std::isdigit(static_cast<unsigned char>(text[k])));
    const bool abbrev = text[i] == '.' && j - i == 1 && is_abbreviation(text, i);
    if (next_starts && !abbrev) {
      push_trimmed(out, text, seg, j);
      seg = j;
    }
    i = j;
  }
  push_trimmed(out, text, seg, n);
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  for (auto& s : split_sentence_spans(text)) out.push_back(std::move(s.text));
  return out;
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < sentence.size()) {
    const auto c = static_cast<unsigned char>(sentence[i]);
    if (std::isspace(c)) {
      flush();
      ++i;
    } else if (std::isdigit(c)) {
      flush();
      while (i < sentence.size() && std::isdigit(static_cast<unsigned char>(sentence[i]))) ++i;
      out.emplace_back(kNumToken);
    } else if (std::isalpha(c) || c >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(c)));
      ++i;
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  flush();
  return out;
}

}  // namespace bias
