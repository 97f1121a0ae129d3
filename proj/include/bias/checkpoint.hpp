#pragma once

// Checkpoint file: a text header (one "key value" per line, a "param name
// rows cols offset" line per array, closed by "end") followed by the raw
// little-endian float32 blobs at the declared offsets.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bias/net.hpp"

namespace bias {

inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Dense2D value;
};

struct Checkpoint {
  int format_version = kCheckpointVersion;
  ModelConfig config;
  std::string vocab_hash;
  bool lm_head_frozen = false;
  std::vector<NamedArray> arrays;

  const Dense2D& array(std::string_view name) const;
};

Checkpoint to_checkpoint(const LmNetwork<float>& net, std::string vocab_hash);
Checkpoint to_checkpoint(const ClassifierNetwork<float>& net, std::string vocab_hash);

/// Backbone + LM head; works on classifier checkpoints too (class head dropped).
LmNetwork<float> lm_from_checkpoint(const Checkpoint& ckpt);
ClassifierNetwork<float> classifier_from_checkpoint(const Checkpoint& ckpt);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Parses and validates structure; does not check the vocabulary.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// read_checkpoint plus the vocabulary-hash check.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_vocab_hash);

template <typename Net>
void save_checkpoint(const Net& net, std::string vocab_hash, const std::filesystem::path& path) {
  write_checkpoint(to_checkpoint(net, std::move(vocab_hash)), path);
}

}  // namespace bias
