#pragma once

#include <string_view>

namespace condiv {

/// Closed-class English function words (determiners, pronouns, auxiliaries,
/// prepositions, conjunctions, common contractions). Lowercase input.
bool is_stopword(std::string_view token);

/// True when every byte is ASCII punctuation.
bool is_punctuation(std::string_view token);

/// Reserved vocabulary symbols look like "<name>".
bool is_special_token(std::string_view token);

/// Not a stopword, not punctuation, not a special symbol.
bool is_content_word(std::string_view token);

}  // namespace condiv
