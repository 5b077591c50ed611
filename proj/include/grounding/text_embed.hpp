#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grounding {

/// Width of every text embedding (predicates, referents, object names).
inline constexpr int kTextDim = 64;

using Embedding = std::vector<double>;

std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercased alphanumeric tokens of s.
std::vector<std::string> text_tokens(std::string_view s);

/// Deterministic hashed character-trigram embedding, unit L2 norm.
/// Each token is padded with '#' on both sides before taking trigrams.
Embedding embed_text(std::string_view s);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace grounding
