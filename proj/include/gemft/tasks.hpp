#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gemft/model.hpp"
#include "gemft/tape.hpp"

namespace gemft {

// ---- MLM ----

struct MaskOptions {
  double p = 0.15;
  bool mask_only = false;  // every selected position becomes [MASK] (no 80/10/10)
  bool at_least_one = false;  // force one selected position in sentences that drew none
};

struct MaskedSentence {
  std::vector<int> input;
  std::vector<int> labels;  // original id at selected positions, kIgnoreLabel elsewhere
  std::vector<int> positions;
};

struct MaskedBatch {
  std::vector<MaskedSentence> sentences;

  std::size_t masked_count() const;
};

MaskedSentence mlm_mask_sentence(std::span<const int> tokens, const MaskOptions& opt, std::uint64_t seed, int vocab_size);

// Sentence i is masked with derive_seed(seed, "mask", keys[i]); keys default to batch positions.
MaskedBatch mlm_mask(std::span<const std::vector<int>> batch, const MaskOptions& opt, std::uint64_t seed, int vocab_size,
                     std::span<const int> keys = {});

// Sentence with a stable id, so evaluation masks do not depend on corpus order.
struct KeyedSentence {
  int id = 0;
  std::vector<int> ids;
};

// Packed forward pieces for an MLM loss over masked sentences.
struct MlmInputs {
  std::vector<std::vector<int>> inputs;
  std::vector<int> rows;    // packed row of every masked position
  std::vector<int> labels;  // original id per masked position
  std::vector<int> owner;   // sentence index per masked position
};
MlmInputs mlm_inputs(const MaskedBatch& batch);

// Mean cross-entropy over all masked positions of the batch.
Var mlm_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const MaskedBatch& batch);

// exp(mean CE) over the non-ignored rows.
double perplexity_from_logits(const Tensor& logits, std::span<const int> labels);

// Evaluation perplexity: all-[MASK] selection at rate p, mask seeded per sentence id.
double perplexity(const Encoder& model, std::span<const KeyedSentence> corpus, double p, std::uint64_t seed,
                  int chunk = 64);

// ---- XSR ----

// Symmetric in-batch contrastive loss over cosine logits / tau.
Var xsr_contrastive_loss(Tape& tape, Var src, Var tgt, float tau);

// Contrastive loss of a batch of translation pairs encoded by the model.
Var xsr_pair_loss(Tape& tape, const Encoder& model, const BoundModel& bound, std::span<const std::vector<int>> sources,
                  std::span<const std::vector<int>> targets, float tau);

// Unit sentence embeddings, computed in chunks.
Tensor embed_sentences(const Encoder& model, std::span<const std::vector<int>> sentences, int chunk = 128);

struct RetrievalPool {
  Tensor queries;     // [Q, d]
  std::vector<int> query_ids;
  Tensor candidates;  // [C, d]
  std::vector<int> candidate_ids;

  void validate() const;
};

// Rank (1-based) of each query's true candidate by cosine similarity; ties go to the lower index.
std::vector<int> true_candidate_ranks(const RetrievalPool& pool);
double precision_at_k(const RetrievalPool& pool, int k);
double precision_from_ranks(std::span<const int> ranks, int k);

// ---- tagging ----

// Sentences with per-token labels in the tag head's id space.
struct TagBatch {
  std::vector<std::vector<int>> ids;
  std::vector<std::vector<int>> labels;

  std::size_t size() const { return ids.size(); }
};

// Mean token cross-entropy of the tagging head over the batch.
Var tagging_loss(Tape& tape, const Encoder& model, const BoundModel& bound, const TagBatch& batch);

enum class TagMetric { pos_accuracy, ner_span_f1 };

struct Span {
  int sentence, begin, end, type;  // [begin, end), type 0 = PER, 1 = LOC
  auto operator<=>(const Span&) const = default;
};

// BIO decoding; an I- tag that does not continue a span of its class opens a new one.
std::vector<Span> decode_spans(std::span<const int> ner, int sentence = 0);

double tagging_metrics(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
                       TagMetric mode);

// Argmax restricted to tag ids [lo, hi), returned relative to lo.
std::vector<std::vector<int>> predict_tags(const Encoder& model, std::span<const std::vector<int>> sentences, int lo,
                                           int hi, int chunk = 64);

}  // namespace gemft
