#include "mmnet/vocab.hpp"

#include <fstream>
#include <sstream>

#include "mmnet/errors.hpp"

namespace mmnet {

Vocabulary Vocabulary::builtin() {
  return Vocabulary({"<pad>", "<sos>", "<eos>", "<unk>",
                     "red", "green", "blue", "yellow",
                     "circle", "square", "triangle",
                     "small", "large",
                     "on", "the",
                     "top", "bottom", "left", "right", "center"});
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  static const char* reserved[] = {"<pad>", "<sos>", "<eos>", "<unk>"};
  if (tokens_.size() < 4) throw InputError("vocabulary must contain the four reserved tokens");
  for (int i = 0; i < 4; ++i) {
    if (tokens_[i] != reserved[i]) {
      throw InputError("vocabulary line " + std::to_string(i) + " must be " + reserved[i]);
    }
  }
  for (int i = 0; i < size(); ++i) {
    if (tokens_[i].empty()) throw InputError("empty token on vocabulary line " + std::to_string(i));
    if (!index_.emplace(tokens_[i], i).second) throw InputError("duplicate vocabulary token " + tokens_[i]);
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text, int length) const {
  std::vector<int> ids{kSos};
  std::istringstream words(text);
  std::string w;
  while (words >> w) ids.push_back(id(w));
  ids.push_back(kEos);
  if (static_cast<int>(ids.size()) > length) {
    throw InputError("expression '" + text + "' needs " + std::to_string(ids.size()) +
                     " tokens but the maximum length is " + std::to_string(length));
  }
  ids.resize(length, kPad);
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 1; i < ids.size() && ids[i] != kEos; ++i) {
    if (!out.empty()) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace mmnet
