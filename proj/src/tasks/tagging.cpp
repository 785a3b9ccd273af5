#include <algorithm>
#include <set>

#include "gemft/synth.hpp"
#include "gemft/tasks.hpp"

namespace gemft {

std::vector<Span> decode_spans(std::span<const int> ner, int sentence) {
  std::vector<Span> out;
  int open_type = -1, begin = 0;
  auto close = [&](int end) {
    if (open_type >= 0) out.push_back({sentence, begin, end, open_type});
    open_type = -1;
  };
  for (int i = 0; i < static_cast<int>(ner.size()); ++i) {
    const auto tag = static_cast<NerTag>(ner[i]);
    if (ner[i] < 0 || ner[i] >= kNerTagCount) throw ShapeError("decode_spans: tag out of range");
    if (tag == NerTag::o) {
      close(i);
      continue;
    }
    const int type = (tag == NerTag::b_per || tag == NerTag::i_per) ? 0 : 1;
    const bool inside = tag == NerTag::i_per || tag == NerTag::i_loc;
    if (inside && open_type == type) continue;
    close(i);
    open_type = type;
    begin = i;
  }
  close(static_cast<int>(ner.size()));
  return out;
}

double tagging_metrics(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
                       TagMetric mode) {
  if (pred.size() != gold.size()) throw ShapeError("tagging_metrics: sentence counts differ");
  for (std::size_t s = 0; s < pred.size(); ++s)
    if (pred[s].size() != gold[s].size())
      throw ShapeError("tagging_metrics: sentence " + std::to_string(s) + " lengths differ");

  if (mode == TagMetric::pos_accuracy) {
    std::size_t correct = 0, total = 0;
    for (std::size_t s = 0; s < pred.size(); ++s)
      for (std::size_t i = 0; i < pred[s].size(); ++i) {
        correct += pred[s][i] == gold[s][i];
        ++total;
      }
    if (total == 0) throw ShapeError("tagging_metrics: no tokens");
    return static_cast<double>(correct) / static_cast<double>(total);
  }

  std::set<Span> p, g;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    for (const Span& sp : decode_spans(pred[s], static_cast<int>(s))) p.insert(sp);
    for (const Span& sp : decode_spans(gold[s], static_cast<int>(s))) g.insert(sp);
  }
  if (p.empty() && g.empty()) return 1.0;
  std::size_t tp = 0;
  for (const Span& sp : p) tp += g.count(sp);
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / p.size();
  const double recall = static_cast<double>(tp) / g.size();
  return 2.0 * precision * recall / (precision + recall);
}

Var tagging_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const TagBatch& batch) {
  if (batch.ids.size() != batch.labels.size()) throw ShapeError("tagging_loss: one label row per sentence");
  std::vector<int> flat;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch.ids[s].size() != batch.labels[s].size())
      throw ShapeError("tagging_loss: sentence " + std::to_string(s) + " has mismatched labels");
    flat.insert(flat.end(), batch.labels[s].begin(), batch.labels[s].end());
  }
  const TokenBatch packed = TokenBatch::pack(batch.ids);
  return ops::cross_entropy(tape, model.tag_logits(tape, bound, model.encode(tape, bound, packed)), flat);
}

std::vector<std::vector<int>> predict_tags(const Encoder& model, std::span<const std::vector<int>> sentences, int lo,
                                           int hi, int chunk) {
  if (lo < 0 || hi > model.config().tag_set_size || lo >= hi) throw ConfigError("predict_tags: bad tag range");
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (std::size_t begin = 0; begin < sentences.size(); begin += chunk) {
    const std::size_t end = std::min(sentences.size(), begin + static_cast<std::size_t>(chunk));
    const auto part = sentences.subspan(begin, end - begin);
    Tape tape;
    const BoundModel b = model.bind(tape);
    const TokenBatch packed = TokenBatch::pack(part);
    const Tensor& logits = tape.value(model.tag_logits(tape, b, model.encode(tape, b, packed)));
    int row = 0;
    for (const auto& s : part) {
      std::vector<int> tags(s.size());
      for (std::size_t i = 0; i < s.size(); ++i, ++row) {
        int best = lo;
        for (int c = lo + 1; c < hi; ++c)
          if (logits.at(row, c) > logits.at(row, best)) best = c;
        tags[i] = best - lo;
      }
      out.push_back(std::move(tags));
    }
  }
  return out;
}

}  // namespace gemft
