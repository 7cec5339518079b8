#include "rfadoc/document.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace rfadoc {

void validate(const Document& doc) {
  require(!doc.sentences.empty(), "document is empty");
  for (const auto& s : doc.sentences) {
    require(!s.empty(), "document contains an empty sentence");
    require(std::find(s.begin(), s.end(), kSep) == s.end(), "document sentence contains SEP");
  }
}

Sentence join_sentences(const std::vector<Sentence>& sentences) {
  Sentence out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0) out.push_back(kSep);
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  return out;
}

std::vector<Sentence> split_sentences(const Sentence& tokens) {
  std::vector<Sentence> out(1);
  for (TokenId t : tokens) {
    if (t == kSep)
      out.emplace_back();
    else
      out.back().push_back(t);
  }
  return out;
}

std::vector<DocumentWindow> make_windows(const Document& doc, int L) {
  require(L >= 1, "make_windows: L must be >= 1");
  validate(doc);
  std::vector<DocumentWindow> windows;
  windows.reserve(doc.size());
  for (std::size_t t = 0; t < doc.size(); ++t) {
    DocumentWindow w;
    w.window_size = L;
    w.last_sentence = t;
    w.first_sentence = t + 1 >= static_cast<std::size_t>(L) ? t + 1 - static_cast<std::size_t>(L) : 0;
    w.tokens = join_sentences({doc.sentences.begin() + static_cast<std::ptrdiff_t>(w.first_sentence),
                               doc.sentences.begin() + static_cast<std::ptrdiff_t>(t) + 1});
    w.meta = sentence_starts(w.tokens);
    windows.push_back(std::move(w));
  }
  return windows;
}

Sentence extract_last_sentence(const Sentence& translated) {
  auto it = std::find(translated.rbegin(), translated.rend(), kSep);
  return Sentence(it.base(), translated.end());
}

// Vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* s : kReservedSymbols) add(s);
}

TokenId Vocabulary::add(const std::string& symbol) {
  require(!symbol.empty(), "vocabulary: empty symbol");
  require(symbol.find_first_of(" \t\r\n") == std::string::npos, "vocabulary: symbol contains whitespace");
  if (auto it = index_.find(symbol); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(symbols_.size());
  symbols_.push_back(symbol);
  index_.emplace(symbol, id);
  return id;
}

TokenId Vocabulary::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) throw InvalidArgument("unknown symbol: " + symbol);
  return it->second;
}

bool Vocabulary::contains(const std::string& symbol) const { return index_.count(symbol) > 0; }

const std::string& Vocabulary::symbol(TokenId id) const {
  require(id >= 0 && id < size(), "vocabulary: token id out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

Sentence Vocabulary::encode(const std::string& line) const {
  std::istringstream in(line);
  Sentence out;
  for (std::string w; in >> w;) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const Sentence& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += symbol(tokens[i]);
  }
  return out;
}

// Consistency ---------------------------------------------------------------

void validate(const ConsistencyItem& item) {
  require(!item.source.empty(), "consistency item: empty source");
  require(item.candidates.size() >= 2, "consistency item: needs at least two candidates");
  require(item.correct < item.candidates.size(), "consistency item: correct index out of range");
  for (const auto& c : item.candidates)
    require(c.size() == item.source.size(), "consistency item: candidate/source sentence count mismatch");
}

namespace {

std::vector<Sentence> last_n(const std::vector<Sentence>& v, int L) {
  const std::size_t n = std::min(v.size(), static_cast<std::size_t>(L));
  return {v.end() - static_cast<std::ptrdiff_t>(n), v.end()};
}

}  // namespace

WindowedItem window_item(const ConsistencyItem& item, int L) {
  require(L >= 1, "window_item: L must be >= 1");
  validate(item);
  WindowedItem w;
  w.source = join_sentences(last_n(item.source, L));
  for (const auto& c : item.candidates) w.candidates.push_back(join_sentences(last_n(c, L)));
  return w;
}

ConsistencyResult consistency_evaluate(const std::vector<ConsistencyItem>& items, int L,
                                       const CandidateScorer& scorer) {
  ConsistencyResult r;
  for (const auto& item : items) {
    const WindowedItem w = window_item(item, L);
    std::size_t best = 0;
    double best_score = 0;
    for (std::size_t c = 0; c < w.candidates.size(); ++c) {
      const double s = scorer(w.source, w.candidates[c]);
      if (c == 0 || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    r.predictions.push_back(best);
    r.num_correct += best == item.correct;
    r.random_baseline += 1.0 / static_cast<double>(item.candidates.size());
    ++r.num_items;
  }
  if (r.num_items) r.random_baseline /= static_cast<double>(r.num_items);
  return r;
}

// Synthetic corpora ---------------------------------------------------------

std::string to_string(TaskFamily t) { return t == TaskFamily::Copy ? "copy" : "agree"; }

TaskFamily parse_task_family(const std::string& s) {
  if (s == "copy") return TaskFamily::Copy;
  if (s == "agree") return TaskFamily::Agree;
  throw InvalidArgument("unknown task family: " + s);
}

void CorpusSpec::validate() const {
  require(train_docs >= 1 && dev_docs >= 0 && test_docs >= 0, "corpus: document counts must be positive");
  require(min_sentences >= 1 && max_sentences >= min_sentences, "corpus: bad sentence count range");
  require(min_length >= 1 && max_length >= min_length, "corpus: bad sentence length range");
  require(num_words >= 2, "corpus: vocab too small");
  if (task == TaskFamily::Agree) require(min_sentences >= 2, "corpus: AGREE documents need at least two sentences");
}

Vocabulary synthetic_vocabulary(const CorpusSpec& spec) {
  Vocabulary v;
  if (spec.task == TaskFamily::Agree) {
    for (const char* s : {agree::kFormal, agree::kInformal, agree::kPronoun, agree::kPronounFormal,
                          agree::kPronounInformal})
      v.add(s);
  }
  for (int i = 0; i < spec.num_words; ++i) v.add("w" + std::to_string(i));
  return v;
}

namespace {

struct AgreeIds {
  TokenId formal, informal, pronoun, pronoun_formal, pronoun_informal;
  explicit AgreeIds(const Vocabulary& v)
      : formal(v.id(agree::kFormal)),
        informal(v.id(agree::kInformal)),
        pronoun(v.id(agree::kPronoun)),
        pronoun_formal(v.id(agree::kPronounFormal)),
        pronoun_informal(v.id(agree::kPronounInformal)) {}
};

bool marker_is_formal(const Document& source, const AgreeIds& ids) {
  validate(source);
  const TokenId m = source.sentences.front().front();
  require(m == ids.formal || m == ids.informal, "AGREE document must open with a FORMAL/INFORMAL marker");
  return m == ids.formal;
}

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

Document translate_agree(const Document& source, const Vocabulary& vocab) {
  const AgreeIds ids(vocab);
  const bool formal = marker_is_formal(source, ids);
  Document target;
  for (std::size_t i = 0; i < source.size(); ++i) {
    Sentence t;
    for (std::size_t j = 0; j < source.sentences[i].size(); ++j) {
      const TokenId tok = source.sentences[i][j];
      if (i == 0 && j == 0) continue;
      if (tok == ids.pronoun)
        t.push_back(formal ? ids.pronoun_formal : ids.pronoun_informal);
      else
        t.push_back(tok);
    }
    target.sentences.push_back(std::move(t));
  }
  return target;
}

Document flip_marker(const Document& source, const Vocabulary& vocab) {
  const AgreeIds ids(vocab);
  const bool formal = marker_is_formal(source, ids);
  Document out = source;
  out.sentences.front().front() = formal ? ids.informal : ids.formal;
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.vocab = synthetic_vocabulary(spec);
  const Vocabulary& vocab = corpus.vocab;
  const TokenId first_word = vocab.id("w0");
  std::mt19937_64 rng(derive_seed(spec.seed, "data"));

  auto random_sentence = [&](int length) {
    Sentence s;
    for (int i = 0; i < length; ++i) s.push_back(first_word + uniform(rng, 0, spec.num_words - 1));
    return s;
  };

  auto make_doc = [&]() {
    const int n = uniform(rng, spec.min_sentences, spec.max_sentences);
    ParallelDocument d;
    if (spec.task == TaskFamily::Copy) {
      for (int i = 0; i < n; ++i) d.source.sentences.push_back(random_sentence(uniform(rng, spec.min_length, spec.max_length)));
      d.target = d.source;
      return d;
    }
    const AgreeIds ids(vocab);
    const bool formal = uniform(rng, 0, 1) == 1;
    Sentence first = random_sentence(uniform(rng, spec.min_length, spec.max_length));
    first.insert(first.begin(), formal ? ids.formal : ids.informal);
    d.source.sentences.push_back(std::move(first));
    for (int i = 1; i < n; ++i) {
      Sentence s = random_sentence(uniform(rng, spec.min_length, spec.max_length));
      s[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(s.size()) - 1))] = ids.pronoun;
      d.source.sentences.push_back(std::move(s));
    }
    d.target = translate_agree(d.source, vocab);
    return d;
  };

  for (int i = 0; i < spec.train_docs; ++i) corpus.train.push_back(make_doc());
  for (int i = 0; i < spec.dev_docs; ++i) corpus.dev.push_back(make_doc());
  for (int i = 0; i < spec.test_docs; ++i) corpus.test.push_back(make_doc());

  if (spec.task == TaskFamily::Agree) {
    // Scored sentence is sentence 2: its only disambiguating context is the
    // marker in sentence 1.
    std::mt19937_64 item_rng(derive_seed(spec.seed, "items"));
    for (const auto& d : corpus.test) {
      ConsistencyItem item;
      item.source = {d.source.sentences[0], d.source.sentences[1]};
      std::vector<Sentence> good = {d.target.sentences[0], d.target.sentences[1]};
      const Document flipped = translate_agree(flip_marker(d.source, vocab), vocab);
      std::vector<Sentence> bad = {flipped.sentences[0], flipped.sentences[1]};
      item.correct = std::uniform_int_distribution<int>(0, 1)(item_rng) == 1 ? 1 : 0;
      item.candidates = item.correct == 0 ? std::vector{good, bad} : std::vector{bad, good};
      corpus.items.push_back(std::move(item));
    }
  }
  return corpus;
}

// Files ---------------------------------------------------------------------

void write_documents(std::ostream& out, const std::vector<Document>& docs, const Vocabulary& vocab) {
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : docs[d].sentences) out << vocab.decode(s) << '\n';
  }
}

std::vector<Document> read_documents(std::istream& in, const Vocabulary& vocab) {
  std::vector<Document> docs;
  Document cur;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      if (!cur.sentences.empty()) docs.push_back(std::move(cur));
      cur = Document{};
      continue;
    }
    cur.sentences.push_back(vocab.encode(line));
  }
  if (!cur.sentences.empty()) docs.push_back(std::move(cur));
  return docs;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw RuntimeFailure("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RuntimeFailure("cannot read " + path);
  return f;
}

}  // namespace

void write_parallel(const std::string& source_path, const std::string& target_path,
                    const std::vector<ParallelDocument>& docs, const Vocabulary& vocab) {
  std::vector<Document> src, tgt;
  for (const auto& d : docs) {
    src.push_back(d.source);
    tgt.push_back(d.target);
  }
  auto fs = open_out(source_path);
  write_documents(fs, src, vocab);
  auto ft = open_out(target_path);
  write_documents(ft, tgt, vocab);
}

std::vector<ParallelDocument> read_parallel(const std::string& source_path, const std::string& target_path,
                                            const Vocabulary& vocab) {
  auto fs = open_in(source_path);
  auto ft = open_in(target_path);
  auto src = read_documents(fs, vocab);
  auto tgt = read_documents(ft, vocab);
  require(src.size() == tgt.size(), "parallel corpus: document counts differ");
  std::vector<ParallelDocument> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    require(src[i].size() == tgt[i].size(), "parallel corpus: sentence counts differ in document " + std::to_string(i));
    out.push_back({std::move(src[i]), std::move(tgt[i])});
  }
  return out;
}

void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  auto f = open_out(path);
  for (int i = kNumReserved; i < vocab.size(); ++i) f << vocab.symbol(i) << '\n';
}

Vocabulary read_vocabulary(const std::string& path) {
  auto f = open_in(path);
  Vocabulary v;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

void write_items(std::ostream& out, const std::vector<ConsistencyItem>& items, const Vocabulary& vocab) {
  for (const auto& item : items) {
    validate(item);
    out << "item " << item.correct << ' ' << item.source.size() << ' ' << item.candidates.size() << '\n';
    for (const auto& s : item.source) out << "src " << vocab.decode(s) << '\n';
    for (const auto& c : item.candidates)
      for (const auto& s : c) out << "cand " << vocab.decode(s) << '\n';
    out << '\n';
  }
}

std::vector<ConsistencyItem> read_items(std::istream& in, const Vocabulary& vocab) {
  std::vector<ConsistencyItem> items;
  std::string line;
  auto next_line = [&](const std::string& tag) {
    while (std::getline(in, line))
      if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    if (!in && line.empty()) throw InvalidArgument("items file: unexpected end of file");
    if (line.rfind(tag + " ", 0) != 0 && line != tag) throw InvalidArgument("items file: expected '" + tag + "'");
    return line.size() > tag.size() ? line.substr(tag.size() + 1) : std::string{};
  };
  while (true) {
    while (std::getline(in, line))
      if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    if (!in) break;
    std::istringstream header(line);
    std::string tag;
    std::size_t correct = 0, ns = 0, nc = 0;
    if (!(header >> tag >> correct >> ns >> nc) || tag != "item") throw InvalidArgument("items file: bad header: " + line);
    ConsistencyItem item;
    item.correct = correct;
    for (std::size_t i = 0; i < ns; ++i) item.source.push_back(vocab.encode(next_line("src")));
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<Sentence> cand;
      for (std::size_t i = 0; i < ns; ++i) cand.push_back(vocab.encode(next_line("cand")));
      item.candidates.push_back(std::move(cand));
    }
    validate(item);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace rfadoc
