#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace mmnet {

/// Word-level vocabulary. Ids 0..3 are reserved for <pad>, <sos>, <eos>, <unk>.
/// On disk: one token per line, line index = token id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  /// The closed vocabulary of the synthetic referring expressions.
  static Vocabulary builtin();
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(id); }

  /// [SOS, words..., EOS, PAD...] of exactly `length` ids. Words are split
  /// on whitespace; unknown words map to <unk>.
  std::vector<int> encode(const std::string& text, int length) const;
  /// Words between SOS and EOS joined by single spaces.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mmnet
