#include "condiv/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_set>

namespace condiv {

namespace {

const std::unordered_set<std::string_view>& stopwords() {
  static const std::unordered_set<std::string_view> kWords = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
      "aren't", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
      "but", "by", "can", "can't", "cannot", "could", "couldn't", "did", "didn't", "do", "does",
      "doesn't", "doing", "don't", "down", "during", "each", "few", "for", "from", "further", "had",
      "hadn't", "has", "hasn't", "have", "haven't", "having", "he", "he'd", "he'll", "he's", "her",
      "here", "here's", "hers", "herself", "him", "himself", "his", "how", "how's", "i", "i'd",
      "i'll", "i'm", "i've", "if", "in", "into", "is", "isn't", "it", "it's", "its", "itself",
      "just", "let's", "me", "more", "most", "mustn't", "my", "myself", "no", "nor", "not", "of",
      "off", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
      "over", "own", "same", "shan't", "she", "she'd", "she'll", "she's", "should", "shouldn't",
      "so", "some", "such", "than", "that", "that's", "the", "their", "theirs", "them",
      "themselves", "then", "there", "there's", "these", "they", "they'd", "they'll", "they're",
      "they've", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was",
      "wasn't", "we", "we'd", "we'll", "we're", "we've", "were", "weren't", "what", "what's",
      "when", "when's", "where", "where's", "which", "while", "who", "who's", "whom", "why",
      "why's", "will", "with", "won't", "would", "wouldn't", "you", "you'd", "you'll", "you're",
      "you've", "your", "yours", "yourself", "yourselves", "also", "yes", "yeah", "oh", "ok",
      "okay", "well", "really", "there", "get", "got", "lol", "im", "dont", "u", "ur", "s", "t"};
  return kWords;
}

}  // namespace

bool is_stopword(std::string_view token) { return stopwords().contains(token); }

bool is_punctuation(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c));
  });
}

bool is_special_token(std::string_view token) {
  return token.size() > 2 && token.front() == '<' && token.back() == '>';
}

bool is_content_word(std::string_view token) {
  return !token.empty() && !is_stopword(token) && !is_punctuation(token) &&
         !is_special_token(token);
}

}  // namespace condiv
