#include "flowlab/textspace.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

namespace flowlab {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[SEP]", "[EOS]", "[UNK]"};
  return specials;
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  for (const auto& s : special_tokens()) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
  for (const auto& t : tokens) {
    if (index_.count(t)) continue;
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const auto& text : texts) {
    for (auto& tok : split_whitespace(text)) uniq.insert(std::move(tok));
  }
  return Vocab(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  const auto& specials = special_tokens();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin())) {
    throw DataError("vocab file " + path.string() + " does not start with the reserved specials");
  }
  Vocab v(std::vector<std::string>(lines.begin() + static_cast<long>(specials.size()), lines.end()));
  if (v.size() != static_cast<int>(lines.size())) {
    throw DataError("vocab file " + path.string() + " contains duplicate tokens");
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ull;
  }
  return h;
}

std::string Vocab::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace flowlab
