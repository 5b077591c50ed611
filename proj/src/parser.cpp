#include "grounding/parser.hpp"

#include <algorithm>
#include <cctype>
#include <optional>

#include "grounding/errors.hpp"

namespace grounding {

const std::vector<std::string>& action_verbs() {
    static const std::vector<std::string> verbs = {"put",  "place", "move", "set",  "drop", "bring",
                                                   "push", "pack",  "go",   "lay",  "position", "navigate"};
    return verbs;
}

const std::vector<std::string>& parser_predicates() {
    static const std::vector<std::string> preds = {"left",       "right",       "above",      "below",
                                                   "left above", "right above", "left below", "right below",
                                                   "close",      "far",         "front",      "behind"};
    return preds;
}

namespace {

bool is_verb(const std::string& w) {
    const auto& v = action_verbs();
    return std::find(v.begin(), v.end(), w) != v.end();
}

struct Token {
    std::string text;
    int position;  // word index in the input, for diagnostics
};

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::string cur;
    int index = 0;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back({cur, index++});
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (std::isalnum(c) || c == '-' || c == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            flush();
        } else if (c == ',') {
            flush();
            out.push_back({",", index++});
        } else if (c == '.' || c == '!' || c == ';') {
            flush();
            // Only trailing sentence punctuation is allowed.
            for (std::size_t k = i + 1; k < s.size(); ++k) {
                if (!std::isspace(static_cast<unsigned char>(s[k])) && s[k] != '.' && s[k] != '!') {
                    throw ParseError("unexpected '" + std::string(1, s[i]) + "' inside the instruction",
                                     std::string(1, s[i]), index);
                }
            }
            break;
        } else {
            flush();
            throw ParseError("unexpected character '" + std::string(1, s[i]) + "'", std::string(1, s[i]), index);
        }
    }
    flush();
    return out;
}

class GrammarParser {
public:
    explicit GrammarParser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    ParsedInstruction parse_instruction() {
        if (toks_.empty()) {
            throw ParseError("empty instruction", "", 0);
        }
        if (!is_verb(toks_[0].text)) {
            fail("unknown action verb", 0);
        }
        ParsedInstruction out;
        out.action = toks_[0].text;
        pos_ = 1;
        if (relation_starts_at(pos_)) {
            out.source = kSelfSource;
        } else {
            if (!at("the") && !at("a") && !at("an")) {
                fail("expected 'the' before the source object", pos_);
            }
            ++pos_;
            std::vector<std::string> words;
            while (pos_ < toks_.size() && !relation_starts_at(pos_)) {
                if (toks_[pos_].text == ",") {
                    fail("expected a spatial relation", pos_);
                }
                words.push_back(toks_[pos_].text);
                ++pos_;
            }
            if (words.empty()) {
                fail("expected a source object", pos_);
            }
            if (pos_ >= toks_.size()) {
                fail("expected a spatial relation after the source object", pos_);
            }
            out.source = join(words);
        }
        out.targets = parse_relation_list();
        return out;
    }

    ParsedInstruction parse_fragment() {
        if (toks_.empty()) {
            throw ParseError("empty expression", "", 0);
        }
        ParsedInstruction out;
        out.source = kSelfSource;
        pos_ = 0;
        out.targets = parse_relation_list();
        return out;
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what, std::size_t at_pos) const {
        if (at_pos >= toks_.size()) {
            throw ParseError(what + " at end of input", "<end>", toks_.empty() ? 0 : toks_.back().position + 1);
        }
        const auto& t = toks_[at_pos];
        throw ParseError(what + ": unexpected token '" + t.text + "' at position " + std::to_string(t.position),
                         t.text, t.position);
    }

    bool at(const char* word) const { return pos_ < toks_.size() && toks_[pos_].text == word; }

    bool word_at(std::size_t p, const char* word) const { return p < toks_.size() && toks_[p].text == word; }

    static std::string join(const std::vector<std::string>& words) {
        std::string s;
        for (const auto& w : words) {
            if (!s.empty()) {
                s += ' ';
            }
            s += w;
        }
        return s;
    }

    // Canonical predicate starting at p and the number of tokens it spans.
    std::optional<std::pair<std::string, std::size_t>> predicate_at(std::size_t p) const {
        if (p >= toks_.size()) {
            return std::nullopt;
        }
        const std::string& w = toks_[p].text;
        if ((w == "left" || w == "right") && p + 1 < toks_.size() &&
            (toks_[p + 1].text == "above" || toks_[p + 1].text == "below")) {
            return std::make_pair(w + " " + toks_[p + 1].text, std::size_t{2});
        }
        static const char* singles[] = {"left", "right", "above", "below", "close", "far", "front", "behind"};
        for (const char* s : singles) {
            if (w == s) {
                return std::make_pair(w, std::size_t{1});
            }
        }
        if (w == "near") {
            return std::make_pair(std::string("close"), std::size_t{1});
        }
        return std::nullopt;
    }

    // Skips the optional "to" / "the" / "in" lead-in of a relation phrase.
    std::size_t skip_lead_in(std::size_t p) const {
        if (word_at(p, "to")) {
            ++p;
        }
        if (word_at(p, "the") || word_at(p, "in")) {
            ++p;
        }
        return p;
    }

    bool relation_starts_at(std::size_t p) const { return predicate_at(skip_lead_in(p)).has_value(); }

    TargetPhrase parse_relation() {
        pos_ = skip_lead_in(pos_);
        auto pred = predicate_at(pos_);
        if (!pred) {
            fail("expected a spatial predicate", pos_);
        }
        pos_ += pred->second;
        if (at("of") || at("from") || at("to")) {
            ++pos_;
        }
        if (!at("the")) {
            fail("expected 'the' before the referenced object", pos_);
        }
        ++pos_;
        std::vector<std::string> words;
        while (pos_ < toks_.size() && toks_[pos_].text != "," && toks_[pos_].text != "and") {
            words.push_back(toks_[pos_].text);
            ++pos_;
        }
        if (words.empty()) {
            fail("expected a referenced object", pos_);
        }
        return {join(words), pred->first};
    }

    std::vector<TargetPhrase> parse_relation_list() {
        std::vector<TargetPhrase> out;
        out.push_back(parse_relation());
        while (pos_ < toks_.size()) {
            if (at(",")) {
                ++pos_;
                if (at("and")) {
                    ++pos_;
                }
            } else if (at("and")) {
                ++pos_;
            } else {
                fail("expected ',' or 'and' between relations", pos_);
            }
            out.push_back(parse_relation());
        }
        return out;
    }
};

}  // namespace

std::string normalize_predicate(std::string_view text) {
    std::vector<std::string> words;
    for (auto& t : text_tokens(text)) {
        if (t == "to" || t == "the" || t == "of" || t == "from" || t == "in" || t == "side" || t == "a" ||
            t == "away") {
            continue;
        }
        words.push_back(t == "near" ? "close" : t);
    }
    std::string joined;
    if (words.size() == 2 && (words[0] == "above" || words[0] == "below") &&
        (words[1] == "left" || words[1] == "right")) {
        std::swap(words[0], words[1]);
    }
    for (const auto& w : words) {
        if (!joined.empty()) {
            joined += ' ';
        }
        joined += w;
    }
    const auto& preds = parser_predicates();
    if (std::find(preds.begin(), preds.end(), joined) == preds.end()) {
        return {};
    }
    return joined;
}

ParsedInstruction parse_grammar(std::string_view instruction) {
    return GrammarParser(tokenize(instruction)).parse_instruction();
}

ParsedInstruction parse_relations(std::string_view text) {
    return GrammarParser(tokenize(text)).parse_fragment();
}

ParsedInstruction parse_expression(std::string_view text) {
    auto toks = tokenize(text);
    if (!toks.empty() && is_verb(toks[0].text)) {
        return GrammarParser(std::move(toks)).parse_instruction();
    }
    return GrammarParser(std::move(toks)).parse_fragment();
}

std::string normalize_action(std::string_view action, std::span<const std::string> skill_set) {
    if (skill_set.empty()) {
        throw DomainError("normalize_action: skill set is empty");
    }
    const auto a = embed_text(action);
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < skill_set.size(); ++i) {
        const double c = cosine(a, embed_text(skill_set[i]));
        if (c > best_cos) {
            best_cos = c;
            best = i;
        }
    }
    return skill_set[best];
}

std::vector<RelationTuple> to_relation_tuples(const ParsedInstruction& parsed) {
    if (parsed.targets.empty()) {
        throw DomainError("to_relation_tuples: instruction has no relations");
    }
    std::vector<RelationTuple> out;
    out.reserve(parsed.targets.size());
    for (const auto& t : parsed.targets) {
        out.push_back({t.referent, t.predicate, embed_text(t.referent), embed_text(t.predicate)});
    }
    return out;
}

}  // namespace grounding
