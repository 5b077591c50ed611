#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grounding/text_embed.hpp"

namespace grounding {

/// Source token used when an instruction moves the robot itself
/// ("move to the front of the red box").
inline constexpr const char* kSelfSource = "self";

struct TargetPhrase {
    std::string referent;
    std::string predicate;

    friend bool operator==(const TargetPhrase&, const TargetPhrase&) = default;
};

struct ParsedInstruction {
    std::string action;
    std::string source;
    std::vector<TargetPhrase> targets;

    friend bool operator==(const ParsedInstruction&, const ParsedInstruction&) = default;
};

struct RelationTuple {
    std::string ref_text;
    std::string pred_text;
    Embedding f_ref;
    Embedding f_pred;

    friend bool operator==(const RelationTuple&, const RelationTuple&) = default;
};

/// Verbs accepted at the start of an instruction.
const std::vector<std::string>& action_verbs();
/// Canonical predicates the parser can emit: the ten benchmark relations
/// plus "front" and "behind".
const std::vector<std::string>& parser_predicates();

/// Maps a free-form predicate ("to the left of", "close to", "Far From")
/// onto its canonical form. Returns an empty string when unknown.
std::string normalize_predicate(std::string_view text);

/// Deterministic grammar backend:
///   <verb> [the <source>] <rel> ((, | and | , and) <rel>)*
///   <rel> := [to] [the] <predicate> [of | from | to] the <referent>
/// Throws ParseError naming the first token that does not fit.
ParsedInstruction parse_grammar(std::string_view instruction);

/// Parses a bare list of relation phrases ("left of the red box and close
/// to the tree"). Action is empty and source is "self".
ParsedInstruction parse_relations(std::string_view text);

/// parse_grammar when the text starts with a known verb, otherwise
/// parse_relations.
ParsedInstruction parse_expression(std::string_view text);

/// Skill with the highest embedding cosine to action; ties keep the first.
std::string normalize_action(std::string_view action, std::span<const std::string> skill_set);

std::vector<RelationTuple> to_relation_tuples(const ParsedInstruction& parsed);

}  // namespace grounding
