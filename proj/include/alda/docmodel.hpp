#pragma once

// Bag-of-words documents weighted by tf-idf, for both acoustic tokens and
// transcript words.
//
//   tf(v, d)  = count(v, d) / |d|
//   idf(v)    = log((1 + D) / (1 + df(v))) + 1
//
// The smoothed idf is at least 1, so every present term has positive weight.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alda {

using TokenSeq = std::vector<std::uint32_t>;

struct CorpusStats {
  std::size_t vocab_size = 0;
  std::size_t doc_count = 0;
  std::vector<std::uint64_t> doc_freq;  // vocab_size entries

  double idf(std::uint32_t term) const;
};

struct DocEntry {
  std::uint32_t term = 0;
  std::uint64_t count = 0;
  double weight = 0.0;

  bool operator==(const DocEntry&) const = default;
};

struct WeightedDocument {
  std::string utt_id;
  std::vector<DocEntry> entries;  // strictly increasing terms

  double total_weight() const;
  bool operator==(const WeightedDocument&) const = default;
};

// Throws ValidationError for tokens >= vocab_size.
CorpusStats compute_stats(std::span<const TokenSeq> docs, std::size_t vocab_size);
void merge_stats(CorpusStats& into, const CorpusStats& other);

// Requires stats.doc_count >= 1.
WeightedDocument weigh_document(const TokenSeq& doc, const CorpusStats& stats,
                                std::string utt_id = {});

// Weighted corpus file: "id<TAB>term:count:weight,..." with terms ascending
// and weights printed with nine significant digits.
void write_weighted_corpus(std::span<const WeightedDocument> docs,
                           const std::filesystem::path& path);
std::vector<WeightedDocument> read_weighted_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Transcripts

struct TextVocab {
  std::map<std::string, std::uint32_t, std::less<>> ids;

  std::size_t size() const { return ids.size(); }
};

// Lowercases, splits on whitespace and strips leading/trailing punctuation.
std::vector<std::string> normalize_words(std::string_view text);

// Out-of-vocabulary words are dropped.
TokenSeq tokenize_transcript(std::string_view text, const TextVocab& vocab);

// Keeps the `cap` most frequent normalized words; ids follow
// (frequency desc, word asc).
TextVocab build_text_vocab(std::span<const std::string> transcripts, std::size_t cap);

// One word per line, line number = id.
void write_text_vocab(const TextVocab& vocab, const std::filesystem::path& path);
TextVocab read_text_vocab(const std::filesystem::path& path);

}  // namespace alda
