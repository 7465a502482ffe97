#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace msar::backend {

using TokenSequence = std::vector<std::size_t>;

// Dense token alphabet: the CTC blank, the symbols, and one start/end marker.
class Vocabulary {
 public:
  // blank "<b>" = 0, symbols 1..n, "<s>" = n + 1.
  static Vocabulary letters(std::size_t n = 10);

  Vocabulary(std::vector<std::string> tokens, std::size_t blank, std::size_t sos_eos);

  std::size_t size() const { return tokens_.size(); }
  std::size_t blank() const { return blank_; }
  std::size_t sos_eos() const { return sos_eos_; }
  const std::string& token(std::size_t id) const;
  std::size_t id(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Symbols in order, i.e. every id except blank and sos/eos.
  std::vector<std::size_t> symbols() const;

  // Throws VocabularyError on out-of-range ids, blanks or sos/eos.
  void check_reference(const TokenSequence& r) const;
  std::string render(const TokenSequence& s) const;  // space separated

 private:
  std::vector<std::string> tokens_;
  std::size_t blank_;
  std::size_t sos_eos_;
};

}  // namespace msar::backend
