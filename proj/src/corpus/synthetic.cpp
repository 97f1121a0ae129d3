#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "bias/corpus.hpp"

namespace bias {

const SyntheticLexicon& default_lexicon() {
  static const SyntheticLexicon lex = [] {
    SyntheticLexicon l;
    l.slots = {
        {"role", {"engineer", "analyst", "designer", "marketer", "accountant", "developer",
                  "manager", "consultant", "technician", "recruiter", "nurse", "teacher",
                  "writer", "planner", "scientist", "coordinator"}},
        {"team", {"sales", "finance", "product", "design", "support", "research", "marketing",
                  "operations", "legal", "data"}},
        {"duty", {"manage client accounts", "prepare monthly reports", "review design documents",
                  "coordinate project timelines", "analyse customer feedback",
                  "maintain internal tools", "train new staff", "plan quarterly budgets",
                  "support our clients"}},
        {"skill", {"python", "accounting", "logistics", "negotiation", "analytics", "budgeting",
                   "scheduling", "reporting", "research"}},
        {"benefit", {"flexible hours", "paid leave", "health insurance", "remote work",
                     "a learning budget", "parental leave", "a modern office"}},
        {"years", {"2", "3", "4", "5", "7"}},
        {"city", {"sydney", "brisbane", "melbourne", "perth", "adelaide", "auckland", "london"}},
        {"topic", {"budget", "roadmap", "migration", "audit", "launch", "survey", "policy",
                   "rollout", "workshop"}},
        {"day", {"monday", "tuesday", "wednesday", "thursday", "friday"}},
        {"thing", {"report", "dashboard", "server", "website", "newsletter", "printer",
                   "schedule"}},
        {"state_adj", {"updated", "delayed", "finished", "reviewed", "published", "fixed"}},
        {"org_adj", {"growing", "global", "friendly", "busy", "modern"}},
        // class markers
        {"gender_noun", {"salesman", "chairman", "foreman", "businessman", "headmaster",
                         "waitress"}},
        {"gender_pron", {"he", "she"}},
        {"gender_poss", {"his", "her"}},
        {"gender_group", {"men", "women", "ladies", "gentlemen", "guys"}},
        {"spouse", {"wives", "husbands"}},
        {"race_adj", {"native", "caucasian", "european", "asian", "anglo", "african",
                      "western"}},
        {"race_term", {"brownbag"}},
        {"age_adj", {"young", "youthful", "junior", "millennial"}},
        {"age_limit", {"thirty", "twenty", "forty"}},
        {"vague_adj", {"smart", "great", "nice", "cool", "solid"}},
        {"vague_noun", {"rockstar", "ninja", "guru", "superstar", "wizard"}},
        {"fit_word", {"cultural", "personality", "vibe"}},
    };

    l.neutral_jd = {
        "we are hiring a {role} to join our {team} team",
        "the {role} will {duty}",
        "you will {duty} and {duty}",
        "this role requires {years} years of experience in {skill}",
        "experience with {skill} is essential for this role",
        "we offer {benefit} and {benefit}",
        "the position is based in {city}",
        "apply now to join our {team} team in {city}",
        "we are a {org_adj} organisation looking for skilled {role}s",
        "we are looking for a {role} with strong {skill} skills",
    };
    l.neutral_njd = {
        "the {thing} was {state_adj} on {day}",
        "our {team} team shared the {topic} update",
        "the {topic} meeting starts on {day}",
        "please send the {thing} to the {team} team",
        "the {topic} review is scheduled in {city}",
        "the {team} team {state_adj} the {thing} on {day}",
    };

    const auto G = static_cast<std::size_t>(Label::Gender);
    const auto R = static_cast<std::size_t>(Label::Race);
    const auto A = static_cast<std::size_t>(Label::Age);
    const auto M = static_cast<std::size_t>(Label::Ambiguous);

    l.biased_jd[G] = {
        "we need [a confident {gender_noun} who] can close deals",
        "[{gender_pron} will lead {gender_poss} team] across {city}",
        "[only {gender_group} need apply] for this {role} role",
        "the {role} will handle the claims of [veterans and their {spouse}]",
    };
    l.biased_njd[G] = {
        "[the {gender_noun} and his] staff met on {day}",
        "every {role} should thank [{gender_pron} and {gender_poss} family]",
    };
    l.biased_jd[R] = {
        "we want [{race_adj} english speakers only] for the {team} team",
        "[candidates of {race_adj} background preferred] for this {role} role",
        "the {role} [must have a {race_adj} accent]",
        "own development of [regular {race_term} sessions for staff]",
    };
    l.biased_njd[R] = {
        "the {topic} workshop is [for {race_adj} staff members only]",
    };
    l.biased_jd[A] = {
        "we are a young organisation looking for [{age_adj} and talented {role}s]",
        "we are hiring [recent graduates under {age_limit}] in {city}",
        "join [a {age_adj} and dynamic team] of {role}s",
        "this role suits [{age_adj} digital natives with energy]",
    };
    l.biased_njd[A] = {
        "the {topic} party is [for {age_adj} staff under {age_limit}]",
    };
    l.biased_jd[M] = {
        "we are looking for [a {vague_adj} candidate for this] position",
        "the {role} should be [the right {fit_word} fit here]",
        "we want [a {vague_noun} who gets it]",
    };
    l.biased_njd[M] = {
        "the {topic} needs [a {vague_noun} with good vibes]",
    };

    l.marker_slots[G] = {"gender_noun", "gender_pron", "gender_poss", "gender_group", "spouse"};
    l.marker_slots[R] = {"race_adj", "race_term"};
    l.marker_slots[A] = {"age_adj", "age_limit"};
    l.marker_slots[M] = {"vague_adj", "vague_noun", "fit_word"};
    return l;
  }();
  return lex;
}

namespace {

struct Filled {
  std::string text;
  std::string trigger;
};

template <typename Rng>
const std::string& pick(const std::vector<std::string>& options, Rng& rng) {
  if (options.empty()) throw ConfigError("synthetic: empty option list");
  std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
  return options[d(rng)];
}

template <typename Rng>
Filled fill(const std::string& tmpl, const SyntheticLexicon& lex, Rng& rng) {
  Filled out;
  bool in_trigger = false;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '[' || c == ']') {
      in_trigger = c == '[';
      continue;
    }
    std::string piece;
    if (c == '{') {
      const auto close = tmpl.find('}', i);
      const std::string slot = tmpl.substr(i + 1, close - i - 1);
      auto it = lex.slots.find(slot);
      if (it == lex.slots.end()) throw ConfigError("synthetic: unknown slot {" + slot + "}");
      piece = pick(it->second, rng);
      i = close;
    } else {
      piece.assign(1, c);
    }
    out.text += piece;
    if (in_trigger) out.trigger += piece;
  }
  if (!out.text.empty())
    out.text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out.text[0])));
  out.text += '.';
  return out;
}

template <typename Rng>
Label draw_biased_class(const std::array<double, kNumLabels>& mix, Rng& rng) {
  std::vector<double> w(mix.begin() + 1, mix.end());
  if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) w.assign(w.size(), 1.0);
  std::discrete_distribution<int> d(w.begin(), w.end());
  return static_cast<Label>(1 + d(rng));
}

template <typename Rng>
Filled draw_sentence(const SyntheticLexicon& lex, Label label, SubDomain domain, Rng& rng) {
  const auto c = static_cast<std::size_t>(label);
  if (label == Label::Unbiased)
    return fill(pick(domain == SubDomain::JD ? lex.neutral_jd : lex.neutral_njd, rng), lex, rng);
  const auto& pool = domain == SubDomain::JD || lex.biased_njd[c].empty() ? lex.biased_jd[c]
                                                                         : lex.biased_njd[c];
  return fill(pick(pool, rng), lex, rng);
}

}  // namespace

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  const double total = std::accumulate(spec.class_mix.begin(), spec.class_mix.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9 ||
      std::any_of(spec.class_mix.begin(), spec.class_mix.end(), [](double p) { return p < 0; }))
    throw ConfigError("gen_synthetic: class_mix must be non-negative and sum to 1");
  if (!(spec.jd_fraction >= 0.0 && spec.jd_fraction <= 1.0))
    throw ConfigError("gen_synthetic: jd_fraction must lie in [0,1]");
  const auto& lex = spec.lexicon;
  for (int c = 1; c < kNumLabels; ++c)
    if (spec.class_mix[static_cast<std::size_t>(c)] > 0 &&
        lex.biased_jd[static_cast<std::size_t>(c)].empty())
      throw ConfigError("gen_synthetic: no templates for class " +
                        std::string(label_name(static_cast<Label>(c))));

  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution jd(spec.jd_fraction);

  // exact class counts: floor shares topped up by largest remainder
  std::array<std::size_t, kNumLabels> counts{};
  std::array<double, kNumLabels> rem{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const double share = spec.class_mix[c] * static_cast<double>(spec.size);
    counts[c] = static_cast<std::size_t>(std::floor(share + 1e-9));
    rem[c] = share - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::array<std::size_t, kNumLabels> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < spec.size; k = (k + 1) % kNumLabels)
    if (spec.class_mix[order[k]] > 0) {
      ++counts[order[k]];
      ++assigned;
    }

  std::vector<Label> labels;
  labels.reserve(spec.size);
  for (std::size_t c = 0; c < kNumLabels; ++c)
    labels.insert(labels.end(), counts[c], static_cast<Label>(c));
  std::shuffle(labels.begin(), labels.end(), rng);

  SyntheticCorpus out;
  out.labeled.reserve(spec.size);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const SubDomain d = jd(rng) ? SubDomain::JD : SubDomain::NJD;
    Filled f = draw_sentence(lex, labels[i], d, rng);
    LabeledSentence s;
    s.text = std::move(f.text);
    s.label = labels[i];
    s.sub_domain = d;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i);
    s.source_id = id;
    out.labeled.push_back(std::move(s));
    out.trigger_spans.push_back(std::move(f.trigger));
  }

  std::bernoulli_distribution biased(spec.unlabeled_biased_rate);
  auto unlabeled = [&](bool domain_only) {
    const SubDomain d = domain_only || jd(rng) ? SubDomain::JD : SubDomain::NJD;
    const Label l = biased(rng) ? draw_biased_class(spec.class_mix, rng) : Label::Unbiased;
    return draw_sentence(lex, l, d, rng).text;
  };
  for (std::size_t i = 0; i < spec.general_size; ++i) out.general.push_back(unlabeled(false));
  for (std::size_t i = 0; i < spec.domain_size; ++i) out.domain.push_back(unlabeled(true));
  return out;
}

}  // namespace bias
