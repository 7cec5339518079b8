#pragma once

// Documents, sliding windows, vocabulary, synthetic corpora and corpus files.

#include "rfadoc/attention.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace rfadoc {

struct Document {
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  bool operator==(const Document&) const = default;
};

struct ParallelDocument {
  Document source;
  Document target;
  bool operator==(const ParallelDocument&) const = default;
};

/// Throws unless the document is nonempty and has no empty sentence.
void validate(const Document& doc);

struct DocumentWindow {
  int window_size = 1;
  Sentence tokens;  // sentences joined by SEP
  TokenMeta meta;
  std::size_t first_sentence = 0;  // 0-based, inclusive
  std::size_t last_sentence = 0;   // 0-based index of the final sentence

  std::size_t num_sentences() const { return last_sentence - first_sentence + 1; }
};

/// Joins sentences with a single SEP between neighbours.
Sentence join_sentences(const std::vector<Sentence>& sentences);

/// Splits on SEP. Inverse of join_sentences for SEP-free sentences.
std::vector<Sentence> split_sentences(const Sentence& tokens);

/// One window per sentence t, covering sentences max(0, t-L+1)..t. Early
/// windows are shorter rather than padded.
std::vector<DocumentWindow> make_windows(const Document& doc, int L);

/// Tokens after the final SEP, or everything when there is no SEP.
Sentence extract_last_sentence(const Sentence& translated);

// Vocabulary ----------------------------------------------------------------

class Vocabulary {
 public:
  Vocabulary();  // reserved symbols only

  TokenId add(const std::string& symbol);
  TokenId id(const std::string& symbol) const;  // throws on unknown
  bool contains(const std::string& symbol) const;
  const std::string& symbol(TokenId id) const;
  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  Sentence encode(const std::string& line) const;
  std::string decode(const Sentence& tokens) const;

  bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, TokenId, std::less<>> index_;
};

inline constexpr const char* kReservedSymbols[kNumReserved] = {"<pad>", "<bos>", "<eos>", "<sep>"};

// Consistency items ---------------------------------------------------------

struct ConsistencyItem {
  std::vector<Sentence> source;                   // context sentences, last one is scored
  std::vector<std::vector<Sentence>> candidates;  // aligned target sentences per candidate
  std::size_t correct = 0;

  bool operator==(const ConsistencyItem&) const = default;
};

void validate(const ConsistencyItem& item);

/// Source and candidate windows restricted to the last L sentences.
struct WindowedItem {
  Sentence source;
  std::vector<Sentence> candidates;
};
WindowedItem window_item(const ConsistencyItem& item, int L);

/// Log-probability of `target` given `source`.
using CandidateScorer = std::function<double(const Sentence& source, const Sentence& target)>;

struct ConsistencyResult {
  std::size_t num_items = 0;
  std::size_t num_correct = 0;
  double random_baseline = 0;  // mean of 1/k over items
  std::vector<std::size_t> predictions;

  double accuracy() const { return num_items ? double(num_correct) / double(num_items) : 0.0; }
};

/// Predicts argmax score per item, ties going to the lowest candidate index.
ConsistencyResult consistency_evaluate(const std::vector<ConsistencyItem>& items, int L,
                                       const CandidateScorer& scorer);

// Synthetic corpora ---------------------------------------------------------

enum class TaskFamily { Copy, Agree };
std::string to_string(TaskFamily t);
TaskFamily parse_task_family(const std::string& s);

struct CorpusSpec {
  TaskFamily task = TaskFamily::Copy;
  int train_docs = 200;
  int dev_docs = 20;
  int test_docs = 20;
  int min_sentences = 3;
  int max_sentences = 5;
  int min_length = 3;  // content tokens per sentence
  int max_length = 8;
  int num_words = 24;  // content symbols w0..w{n-1}
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Vocabulary vocab;
  std::vector<ParallelDocument> train, dev, test;
  std::vector<ConsistencyItem> items;  // AGREE only, one per test document
};

/// Symbols used by the AGREE family.
namespace agree {
inline constexpr const char* kFormal = "FORMAL";
inline constexpr const char* kInformal = "INFORMAL";
inline constexpr const char* kPronoun = "you";
inline constexpr const char* kPronounFormal = "you.formal";
inline constexpr const char* kPronounInformal = "you.informal";
}  // namespace agree

Vocabulary synthetic_vocabulary(const CorpusSpec& spec);

/// Gold AGREE translation: the marker is dropped and every pronoun takes the
/// form selected by the marker of sentence 1.
Document translate_agree(const Document& source, const Vocabulary& vocab);

/// Source document with its FORMAL/INFORMAL marker swapped.
Document flip_marker(const Document& source, const Vocabulary& vocab);

SyntheticCorpus generate_synthetic_corpus(const CorpusSpec& spec);

// Files ---------------------------------------------------------------------

/// One sentence per line, blank line between documents.
void write_documents(std::ostream& out, const std::vector<Document>& docs, const Vocabulary& vocab);
std::vector<Document> read_documents(std::istream& in, const Vocabulary& vocab);

void write_parallel(const std::string& source_path, const std::string& target_path,
                    const std::vector<ParallelDocument>& docs, const Vocabulary& vocab);
std::vector<ParallelDocument> read_parallel(const std::string& source_path, const std::string& target_path,
                                            const Vocabulary& vocab);

void write_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::string& path);

/// Items as blocks:
///   item <correct> <num_source> <num_candidates>
///   src <sentence>             (num_source lines)
///   cand <sentence>            (num_source lines per candidate)
///   blank line
void write_items(std::ostream& out, const std::vector<ConsistencyItem>& items, const Vocabulary& vocab);
std::vector<ConsistencyItem> read_items(std::istream& in, const Vocabulary& vocab);

}  // namespace rfadoc
