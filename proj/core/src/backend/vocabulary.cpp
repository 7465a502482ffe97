#include "msar/backend/vocabulary.hpp"

#include <set>

#include "msar/error.hpp"

namespace msar::backend {

Vocabulary Vocabulary::letters(std::size_t n) {
  if (n == 0 || n > 26) throw ConfigError("vocabulary: letter count must be in 1..26");
  std::vector<std::string> t{"<b>"};
  for (std::size_t i = 0; i < n; ++i) t.emplace_back(1, static_cast<char>('a' + i));
  t.emplace_back("<s>");
  return Vocabulary(std::move(t), 0, n + 1);
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t blank, std::size_t sos_eos)
    : tokens_(std::move(tokens)), blank_(blank), sos_eos_(sos_eos) {
  if (blank_ >= tokens_.size() || sos_eos_ >= tokens_.size())
    throw ConfigError("vocabulary: special index out of range");
  if (blank_ == sos_eos_) throw ConfigError("vocabulary: blank and sos/eos must differ");
  if (std::set<std::string>(tokens_.begin(), tokens_.end()).size() != tokens_.size())
    throw ConfigError("vocabulary: duplicate tokens");
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::size_t Vocabulary::id(std::string_view token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == token) return i;
  throw VocabularyError("vocabulary: unknown token '" + std::string(token) + "'");
}

std::vector<std::size_t> Vocabulary::symbols() const {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (i != blank_ && i != sos_eos_) s.push_back(i);
  return s;
}

void Vocabulary::check_reference(const TokenSequence& r) const {
  for (auto t : r) {
    if (t >= tokens_.size()) throw VocabularyError("reference token " + std::to_string(t) + " out of range");
    if (t == blank_ || t == sos_eos_) throw VocabularyError("reference contains a special token");
  }
}

std::string Vocabulary::render(const TokenSequence& s) const {
  std::string out;
  for (auto t : s) {
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

}  // namespace msar::backend
