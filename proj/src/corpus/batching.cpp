#include <algorithm>

#include "bias/corpus.hpp"

namespace bias {

LmBatches make_lm_batches(std::span<const std::vector<int>> streams, int batch_size,
                          int bptt_window) {
  if (batch_size < 1 || bptt_window < 1)
    throw ConfigError("make_lm_batches: batch_size and bptt_window must be positive");
  LmBatches out;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& stream = streams[s];
    if (stream.size() < 2) {
      ++out.skipped_streams;
      continue;
    }
    // Split the n-1 (input, target) pairs into contiguous lanes.
    const std::size_t pairs = stream.size() - 1;
    const std::size_t lanes = std::min<std::size_t>(static_cast<std::size_t>(batch_size), pairs);
    std::vector<std::size_t> start(lanes), len(lanes);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < lanes; ++k) {
      start[k] = pos;
      len[k] = pairs / lanes + (k < pairs % lanes ? 1 : 0);
      pos += len[k];
    }
    const std::size_t longest = len.front();
    for (std::size_t w = 0; w < longest; w += static_cast<std::size_t>(bptt_window)) {
      const std::size_t width = std::min<std::size_t>(static_cast<std::size_t>(bptt_window),
                                                      longest - w);
      LmBatch batch;
      batch.stream = s;
      batch.reset_state = w == 0;
      batch.inputs.setConstant(static_cast<Index>(lanes), static_cast<Index>(width),
                               Vocabulary::kPad);
      batch.targets.setConstant(static_cast<Index>(lanes), static_cast<Index>(width), -1);
      for (std::size_t k = 0; k < lanes; ++k)
        for (std::size_t j = 0; j < width && w + j < len[k]; ++j) {
          const std::size_t p = start[k] + w + j;
          batch.inputs(static_cast<Index>(k), static_cast<Index>(j)) = stream[p];
          batch.targets(static_cast<Index>(k), static_cast<Index>(j)) = stream[p + 1];
        }
      out.batches.push_back(std::move(batch));
    }
  }
  return out;
}

std::vector<ClsBatch> make_cls_batches(std::span<const LabeledSentence> data, int batch_size) {
  if (batch_size < 1) throw ConfigError("make_cls_batches: batch_size must be positive");
  std::vector<ClsBatch> out;
  for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(batch_size));
    std::size_t width = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (data[i].tokens.empty())
        throw InputError("make_cls_batches: sentence '" + data[i].source_id + "' has no tokens");
      width = std::max(width, data[i].tokens.size());
    }
    ClsBatch batch;
    batch.tokens.setConstant(static_cast<Index>(end - begin), static_cast<Index>(width),
                             Vocabulary::kPad);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& toks = data[i].tokens;
      for (std::size_t j = 0; j < toks.size(); ++j)
        batch.tokens(static_cast<Index>(i - begin), static_cast<Index>(j)) = toks[j];
      batch.lengths.push_back(static_cast<int>(toks.size()));
      batch.labels.push_back(static_cast<int>(data[i].label));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace bias
