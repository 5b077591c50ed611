#include "grounding/text_embed.hpp"

#include <cctype>
#include <cmath>

#include "grounding/errors.hpp"

namespace grounding {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::string> text_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

Embedding embed_text(std::string_view s) {
    const auto tokens = text_tokens(s);
    if (tokens.empty()) {
        throw DomainError("embed_text: text has no alphanumeric tokens");
    }
    Embedding v(kTextDim, 0.0);
    for (const auto& tok : tokens) {
        const std::string padded = "#" + tok + "#";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
            const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
            v[h % kTextDim] += sign;
        }
    }
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        // All trigram contributions cancelled; fall back to a single bucket
        // chosen by the whole-text hash so the result stays unit norm.
        v[fnv1a64(s) % kTextDim] = 1.0;
        return v;
    }
    for (double& x : v) {
        x /= norm;
    }
    return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine: dimension mismatch");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace grounding
