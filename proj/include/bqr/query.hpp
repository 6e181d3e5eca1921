#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bqr::query {

// --------------------------------------------------------------- field tags

enum class FieldKind {
    MeSH,
    TitleAbstract,
    Title,
    PublicationType,
    TextWord,
    AllFields,
    Other,
    /// Not a real tag; key used by field_usage() for untagged terms.
    NoField,
};

const char* to_string(FieldKind kind);

/// A bracketed PubMed field restriction, e.g. "[tiab]" or "[MeSH Terms]".
/// `raw` keeps the exact spelling; `kind` is the case-insensitive mapping,
/// total over all inputs (unrecognized tags become Other).
struct FieldTag {
    FieldKind kind = FieldKind::Other;
    std::string raw;

    bool operator==(const FieldTag& o) const { return raw == o.raw; }
};

/// Classify a raw tag ("[...]" including brackets).
FieldTag make_field_tag(std::string raw);

// --------------------------------------------------------------------- AST

enum class BoolOp { And, Or, Not };

const char* to_string(BoolOp op);

enum class QuoteKind { None, Straight, Curly };

struct QueryNode;

/// Leaf: a phrase (one or more words, a single search unit) with optional
/// quoting and an optional field tag. Quote style is kept so serialization
/// reproduces the input.
struct Term {
    std::string phrase;
    QuoteKind quote = QuoteKind::None;
    std::optional<FieldTag> field;
};

/// n-ary AND/OR or binary NOT (left minus right). `parenthesized` records
/// whether the source text wrapped this group in parentheses; it is
/// presentation state and excluded from equality.
struct Group {
    BoolOp op = BoolOp::And;
    std::vector<QueryNode> children;
    bool parenthesized = true;
};

struct QueryNode {
    std::variant<Term, Group> value;

    QueryNode() : value(Term{}) {}
    QueryNode(Term t) : value(std::move(t)) {}
    QueryNode(Group g) : value(std::move(g)) {}

    bool is_term() const { return std::holds_alternative<Term>(value); }
    bool is_group() const { return std::holds_alternative<Group>(value); }
    const Term& term() const { return std::get<Term>(value); }
    const Group& group() const { return std::get<Group>(value); }
};

/// Structural equality: op/children/phrase/quote/field raw. Ignores the
/// parenthesized flag.
bool ast_equal(const QueryNode& a, const QueryNode& b);

// ------------------------------------------------------------------- parse

enum class ParseErrorKind {
    EmptyInput,
    UnbalancedParens,
    DanglingOperator,
    EmptyGroup,
    UnterminatedQuote,
    EmptyQuote,
    FieldTagMisplaced,
    AdjacentTerms,
    UnexpectedCharacter,
    UnexpectedToken,
};

const char* to_string(ParseErrorKind kind);

struct ParseError {
    ParseErrorKind kind;
    std::string message;
    size_t position = 0;  // byte offset into the input
};

struct ParseResult {
    std::optional<QueryNode> node;
    std::optional<ParseError> error;

    bool ok() const { return node.has_value(); }
};

/// Parse PubMed Boolean syntax. AND/OR/NOT are case-insensitive keywords with
/// no precedence: chains associate left to right, parentheses group. Adjacent
/// bare words merge into one multi-word term; a field tag binds to the term or
/// quoted phrase immediately before it. Same-operator chains are flattened,
/// so no AND group ever directly contains another AND group.
ParseResult parse(std::string_view text);

/// Canonical text for an AST; parse(serialize(n)) is ast_equal to n. Quote
/// style and raw field tags are reproduced exactly.
std::string serialize(const QueryNode& node);

// ---------------------------------------------------------------- analysis

struct ValidationReport {
    bool balanced_parentheses = false;
    std::vector<std::string> unknown_fields;  // raw tags mapping to Other
    int empty_clauses = 0;                    // "()" occurrences
    bool parse_ok = false;
    std::optional<std::string> message;       // parse failure detail
    std::optional<ParseErrorKind> error_kind;
};

/// Structural checks that run even when parsing fails. The parenthesis scan
/// and the field-tag scan are lexical, so they report on malformed input too.
ValidationReport validate(std::string_view text);

/// JSON rendering of a report, for analysis output.
std::string to_json(const ValidationReport& report);

/// Parenthesis balance by counter scan. Characters inside quoted phrases do
/// not count.
bool balanced_parentheses(std::string_view text);

/// Number of Term leaves. A quoted phrase or multi-word term counts as one.
int count_terms(const QueryNode& node);

/// Count of terms per canonical field over the leaves; untagged terms are
/// keyed under FieldKind::NoField.
std::map<FieldKind, int> field_usage(const QueryNode& node);

} // namespace bqr::query
