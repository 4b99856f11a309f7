#include "alda/docmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "alda/error.hpp"
#include "text_util.hpp"

namespace alda {

namespace fs = std::filesystem;

double CorpusStats::idf(std::uint32_t term) const {
  return std::log((1.0 + static_cast<double>(doc_count)) /
                  (1.0 + static_cast<double>(doc_freq[term]))) +
         1.0;
}

double WeightedDocument::total_weight() const {
  double w = 0.0;
  for (const auto& e : entries) w += e.weight;
  return w;
}

CorpusStats compute_stats(std::span<const TokenSeq> docs, std::size_t vocab_size) {
  CorpusStats stats{vocab_size, docs.size(), std::vector<std::uint64_t>(vocab_size, 0)};
  std::vector<std::size_t> last_seen(vocab_size, static_cast<std::size_t>(-1));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::uint32_t tok : docs[d]) {
      if (tok >= vocab_size) {
        throw ValidationError("compute_stats: token " + std::to_string(tok) +
                              " out of range for vocab size " + std::to_string(vocab_size));
      }
      if (last_seen[tok] != d) {
        last_seen[tok] = d;
        ++stats.doc_freq[tok];
      }
    }
  }
  return stats;
}

void merge_stats(CorpusStats& into, const CorpusStats& other) {
  if (into.vocab_size != other.vocab_size) throw ValidationError("merge_stats: vocab mismatch");
  into.doc_count += other.doc_count;
  for (std::size_t v = 0; v < into.vocab_size; ++v) into.doc_freq[v] += other.doc_freq[v];
}

WeightedDocument weigh_document(const TokenSeq& doc, const CorpusStats& stats,
                                std::string utt_id) {
  if (stats.doc_count == 0) throw ValidationError("weigh_document: corpus stats are empty");
  std::map<std::uint32_t, std::uint64_t> counts;
  for (std::uint32_t tok : doc) {
    if (tok >= stats.vocab_size) {
      throw ValidationError("weigh_document: token " + std::to_string(tok) + " out of range");
    }
    ++counts[tok];
  }
  WeightedDocument out{std::move(utt_id), {}};
  out.entries.reserve(counts.size());
  const double len = static_cast<double>(doc.size());
  for (const auto& [term, count] : counts) {
    const double tf = static_cast<double>(count) / len;
    out.entries.push_back({term, count, tf * stats.idf(term)});
  }
  return out;
}

void write_weighted_corpus(std::span<const WeightedDocument> docs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weighted corpus " + path.string());
  for (const auto& d : docs) {
    out << d.utt_id << '\t';
    for (std::size_t i = 0; i < d.entries.size(); ++i) {
      if (i) out << ',';
      const auto& e = d.entries[i];
      out << e.term << ':' << e.count << ':' << text::format_sig9(e.weight);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing weighted corpus " + path.string());
}

std::vector<WeightedDocument> read_weighted_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open weighted corpus " + path.string());
  std::vector<WeightedDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw FormatError(where + ": expected id<TAB>entries");
    WeightedDocument d{line.substr(0, tab), {}};
    const auto body = std::string_view(line).substr(tab + 1);
    if (!body.empty()) {
      for (auto item : text::split(body, ',')) {
        auto parts = text::split(item, ':');
        if (parts.size() != 3) throw FormatError(where + ": expected term:count:weight");
        DocEntry e{text::parse_or_throw<std::uint32_t>(parts[0], where),
                   text::parse_or_throw<std::uint64_t>(parts[1], where),
                   text::parse_or_throw<double>(parts[2], where)};
        if (!d.entries.empty() && e.term <= d.entries.back().term) {
          throw FormatError(where + ": terms not strictly increasing");
        }
        if (!(e.weight >= 0.0)) throw FormatError(where + ": negative weight");
        d.entries.push_back(e);
      }
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

// ---------------------------------------------------------------------------

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string w(text.substr(b, e - b));
      for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      words.push_back(std::move(w));
    }
    i = j;
  }
  return words;
}

TokenSeq tokenize_transcript(std::string_view text, const TextVocab& vocab) {
  TokenSeq out;
  for (const auto& w : normalize_words(text)) {
    auto it = vocab.ids.find(w);
    if (it != vocab.ids.end()) out.push_back(it->second);
  }
  return out;
}

TextVocab build_text_vocab(std::span<const std::string> transcripts, std::size_t cap) {
  if (cap == 0) throw ValidationError("build_text_vocab: cap must be at least 1");
  std::unordered_map<std::string, std::uint64_t> freq;
  for (const auto& t : transcripts)
    for (auto& w : normalize_words(t)) ++freq[std::move(w)];
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  TextVocab vocab;
  for (std::size_t i = 0; i < std::min(cap, ranked.size()); ++i) {
    vocab.ids.emplace(ranked[i].first, static_cast<std::uint32_t>(i));
  }
  return vocab;
}

void write_text_vocab(const TextVocab& vocab, const fs::path& path) {
  std::vector<std::string_view> by_id(vocab.size());
  for (const auto& [w, id] : vocab.ids) by_id[id] = w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab " + path.string());
  for (auto w : by_id) out << w << '\n';
}

TextVocab read_text_vocab(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab " + path.string());
  TextVocab vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!vocab.ids.emplace(line, static_cast<std::uint32_t>(vocab.size())).second) {
      throw FormatError(path.string() + ": duplicate vocabulary word '" + line + "'");
    }
  }
  return vocab;
}

}  // namespace alda
