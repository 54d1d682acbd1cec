#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rapl::text {

/// Lowercased alphanumeric runs; every other byte separates tokens.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool is_stopword(std::string_view w) {
  static constexpr std::array<std::string_view, 40> kWords = {
      "a",    "an",   "and",  "are", "as",   "at",   "be",    "by",   "did",   "do",
      "does", "for",  "from", "has", "have", "how",  "in",    "is",   "it",    "its",
      "of",   "on",   "or",   "that", "the", "their", "this", "to",   "was",   "were",
      "what", "when", "where", "which", "who", "whom", "whose", "why", "with", "s"};
  return std::find(kWords.begin(), kWords.end(), w) != kWords.end();
}

/// Distinct non-stopword tokens.
inline std::set<std::string> content_tokens(std::string_view s) {
  std::set<std::string> out;
  for (auto& t : tokenize(s))
    if (!is_stopword(t)) out.insert(std::move(t));
  return out;
}

/// Freebase-style machine ids such as "m.0jz0c4" or "g.11b6".
inline bool is_opaque_id(std::string_view s) {
  if (s.size() < 3 || (s[0] != 'm' && s[0] != 'g') || s[1] != '.') return false;
  return std::all_of(s.begin() + 2, s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace rapl::text
