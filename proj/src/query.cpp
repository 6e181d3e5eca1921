#include "bqr/query.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

#include "bqr/util.hpp"

namespace bqr::query {

namespace {

// UTF-8 for the typographic quotes that LLM output and pasted expert queries
// contain alongside straight quotes.
constexpr std::string_view kCurlyOpen = "\xe2\x80\x9c";   // U+201C
constexpr std::string_view kCurlyClose = "\xe2\x80\x9d";  // U+201D

bool starts_with_at(std::string_view text, size_t pos, std::string_view prefix) {
    return text.size() - pos >= prefix.size() &&
           text.compare(pos, prefix.size(), prefix) == 0;
}

bool is_word_char(std::string_view text, size_t pos) {
    unsigned char c = static_cast<unsigned char>(text[pos]);
    if (std::isalnum(c)) return true;
    if (c == '-' || c == '_' || c == '\'' || c == '*') return true;
    // Non-ASCII bytes belong to words unless they open/close a curly quote.
    if (c >= 0x80) {
        return !starts_with_at(text, pos, kCurlyOpen) &&
               !starts_with_at(text, pos, kCurlyClose);
    }
    return false;
}

} // namespace

const char* to_string(FieldKind kind) {
    switch (kind) {
        case FieldKind::MeSH: return "MeSH";
        case FieldKind::TitleAbstract: return "TitleAbstract";
        case FieldKind::Title: return "Title";
        case FieldKind::PublicationType: return "PublicationType";
        case FieldKind::TextWord: return "TextWord";
        case FieldKind::AllFields: return "AllFields";
        case FieldKind::Other: return "Other";
        case FieldKind::NoField: return "NoField";
    }
    return "?";
}

const char* to_string(BoolOp op) {
    switch (op) {
        case BoolOp::And: return "AND";
        case BoolOp::Or: return "OR";
        case BoolOp::Not: return "NOT";
    }
    return "?";
}

const char* to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::EmptyInput: return "empty input";
        case ParseErrorKind::UnbalancedParens: return "unbalanced parentheses";
        case ParseErrorKind::DanglingOperator: return "dangling operator";
        case ParseErrorKind::EmptyGroup: return "empty group";
        case ParseErrorKind::UnterminatedQuote: return "unterminated quote";
        case ParseErrorKind::EmptyQuote: return "empty quoted phrase";
        case ParseErrorKind::FieldTagMisplaced: return "field tag without preceding term";
        case ParseErrorKind::AdjacentTerms: return "adjacent terms without operator";
        case ParseErrorKind::UnexpectedCharacter: return "unexpected character";
        case ParseErrorKind::UnexpectedToken: return "unexpected token";
    }
    return "?";
}

FieldTag make_field_tag(std::string raw) {
    FieldTag tag;
    std::string inner = to_lower(trim(std::string_view(raw).substr(1, raw.size() - 2)));
    if (inner == "mesh" || inner == "mesh terms" || inner == "mh" ||
        inner == "mesh major topic" || inner == "majr") {
        tag.kind = FieldKind::MeSH;
    } else if (inner == "tiab" || inner == "title/abstract") {
        tag.kind = FieldKind::TitleAbstract;
    } else if (inner == "ti" || inner == "title") {
        tag.kind = FieldKind::Title;
    } else if (inner == "pt" || inner == "publication type") {
        tag.kind = FieldKind::PublicationType;
    } else if (inner == "tw" || inner == "text word") {
        tag.kind = FieldKind::TextWord;
    } else if (inner == "all" || inner == "all fields") {
        tag.kind = FieldKind::AllFields;
    } else {
        tag.kind = FieldKind::Other;
    }
    tag.raw = std::move(raw);
    return tag;
}

bool ast_equal(const QueryNode& a, const QueryNode& b) {
    if (a.is_term() != b.is_term()) return false;
    if (a.is_term()) {
        const Term& x = a.term();
        const Term& y = b.term();
        return x.phrase == y.phrase && x.quote == y.quote && x.field == y.field;
    }
    const Group& x = a.group();
    const Group& y = b.group();
    if (x.op != y.op || x.children.size() != y.children.size()) return false;
    for (size_t i = 0; i < x.children.size(); ++i)
        if (!ast_equal(x.children[i], y.children[i])) return false;
    return true;
}

// ------------------------------------------------------------------- lexer

namespace {

enum class TokKind { LParen, RParen, Word, Quoted, Field, End };

struct Token {
    TokKind kind = TokKind::End;
    std::string text;                    // word text / quoted phrase / raw tag
    QuoteKind quote = QuoteKind::None;
    size_t pos = 0;
};

struct LexResult {
    std::vector<Token> tokens;
    std::optional<ParseError> error;
};

LexResult lex(std::string_view text) {
    LexResult res;
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (c == '(') {
            res.tokens.push_back({TokKind::LParen, "(", QuoteKind::None, i});
            ++i;
            continue;
        }
        if (c == ')') {
            res.tokens.push_back({TokKind::RParen, ")", QuoteKind::None, i});
            ++i;
            continue;
        }
        if (c == '"' || starts_with_at(text, i, kCurlyOpen)) {
            bool curly = c != '"';
            size_t open_len = curly ? kCurlyOpen.size() : 1;
            std::string_view closer = curly ? kCurlyClose : std::string_view("\"");
            size_t start = i + open_len;
            size_t end = text.find(closer, start);
            if (end == std::string_view::npos) {
                res.error = {ParseErrorKind::UnterminatedQuote, "unterminated quote", i};
                return res;
            }
            std::string phrase(text.substr(start, end - start));
            if (trim(phrase).empty()) {
                res.error = {ParseErrorKind::EmptyQuote, "empty quoted phrase", i};
                return res;
            }
            res.tokens.push_back({TokKind::Quoted, std::move(phrase),
                                  curly ? QuoteKind::Curly : QuoteKind::Straight, i});
            i = end + closer.size();
            continue;
        }
        if (c == '[') {
            size_t end = text.find(']', i + 1);
            if (end == std::string_view::npos || end == i + 1) {
                res.error = {ParseErrorKind::FieldTagMisplaced,
                             end == i + 1 ? "empty field tag" : "unterminated field tag", i};
                return res;
            }
            res.tokens.push_back(
                {TokKind::Field, std::string(text.substr(i, end - i + 1)), QuoteKind::None, i});
            i = end + 1;
            continue;
        }
        if (is_word_char(text, i)) {
            size_t start = i;
            while (i < text.size() && is_word_char(text, i)) ++i;
            res.tokens.push_back(
                {TokKind::Word, std::string(text.substr(start, i - start)), QuoteKind::None, start});
            continue;
        }
        res.error = {ParseErrorKind::UnexpectedCharacter,
                     std::string("unexpected character '") + static_cast<char>(c) + "'", i};
        return res;
    }
    res.tokens.push_back({TokKind::End, "", QuoteKind::None, text.size()});
    return res;
}

std::optional<BoolOp> keyword_op(const Token& tok) {
    if (tok.kind != TokKind::Word) return std::nullopt;
    if (iequals(tok.text, "AND")) return BoolOp::And;
    if (iequals(tok.text, "OR")) return BoolOp::Or;
    if (iequals(tok.text, "NOT")) return BoolOp::Not;
    return std::nullopt;
}

// ------------------------------------------------------------------ parser

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    ParseResult run() {
        ParseResult out;
        auto node = expression(0);
        if (err_) {
            out.error = err_;
            return out;
        }
        if (peek().kind != TokKind::End) {
            fail_leftover(peek());
            out.error = err_;
            return out;
        }
        out.node = std::move(node);
        return out;
    }

private:
    static constexpr int kMaxDepth = 256;

    const Token& peek() const { return toks_[pos_]; }
    const Token& next() { return toks_[pos_++]; }

    void fail(ParseErrorKind kind, std::string msg, size_t at) {
        if (!err_) err_ = ParseError{kind, std::move(msg), at};
    }

    void fail_leftover(const Token& tok) {
        switch (tok.kind) {
            case TokKind::RParen:
                fail(ParseErrorKind::UnbalancedParens, "unmatched ')'", tok.pos);
                break;
            case TokKind::Field:
                fail(ParseErrorKind::FieldTagMisplaced,
                     "field tag must follow a term", tok.pos);
                break;
            default:
                fail(ParseErrorKind::AdjacentTerms,
                     "expected operator before '" + tok.text + "'", tok.pos);
                break;
        }
    }

    QueryNode expression(int depth) {
        QueryNode node = operand(depth);
        if (err_) return node;
        while (true) {
            auto op = keyword_op(peek());
            if (!op) break;
            next();
            QueryNode rhs = operand(depth);
            if (err_) return node;
            node = combine(std::move(node), *op, std::move(rhs));
        }
        return node;
    }

    static QueryNode combine(QueryNode lhs, BoolOp op, QueryNode rhs) {
        if (op == BoolOp::Not) {
            Group g;
            g.op = BoolOp::Not;
            g.parenthesized = false;
            g.children.push_back(std::move(lhs));
            g.children.push_back(std::move(rhs));
            return QueryNode(std::move(g));
        }
        Group g;
        if (lhs.is_group() && lhs.group().op == op) {
            g = std::move(std::get<Group>(lhs.value));
        } else {
            g.op = op;
            g.children.push_back(std::move(lhs));
        }
        g.parenthesized = false;
        if (rhs.is_group() && rhs.group().op == op) {
            auto& rc = std::get<Group>(rhs.value).children;
            for (auto& child : rc) g.children.push_back(std::move(child));
        } else {
            g.children.push_back(std::move(rhs));
        }
        return QueryNode(std::move(g));
    }

    QueryNode operand(int depth) {
        if (depth > kMaxDepth) {
            fail(ParseErrorKind::UnexpectedToken, "nesting too deep", peek().pos);
            return QueryNode();
        }
        const Token& tok = peek();
        switch (tok.kind) {
            case TokKind::LParen: {
                next();
                if (peek().kind == TokKind::RParen) {
                    fail(ParseErrorKind::EmptyGroup, "empty group \"()\"", peek().pos);
                    return QueryNode();
                }
                QueryNode inner = expression(depth + 1);
                if (err_) return inner;
                if (peek().kind != TokKind::RParen) {
                    if (peek().kind == TokKind::End)
                        fail(ParseErrorKind::UnbalancedParens, "missing ')'", peek().pos);
                    else
                        fail_leftover(peek());
                    return inner;
                }
                next();
                if (inner.is_group()) std::get<Group>(inner.value).parenthesized = true;
                if (peek().kind == TokKind::Field) {
                    fail(ParseErrorKind::FieldTagMisplaced,
                         "field tag cannot follow a group", peek().pos);
                    return inner;
                }
                return inner;
            }
            case TokKind::Quoted: {
                Token t = next();
                Term term;
                term.phrase = std::move(t.text);
                term.quote = t.quote;
                attach_field(term);
                return QueryNode(std::move(term));
            }
            case TokKind::Word: {
                if (keyword_op(tok)) {
                    fail(ParseErrorKind::DanglingOperator,
                         "operator '" + tok.text + "' without operand", tok.pos);
                    return QueryNode();
                }
                std::vector<std::string> words;
                while (peek().kind == TokKind::Word && !keyword_op(peek()))
                    words.push_back(next().text);
                Term term;
                term.phrase = join(words, " ");
                attach_field(term);
                return QueryNode(std::move(term));
            }
            case TokKind::RParen:
                fail(ParseErrorKind::UnbalancedParens, "unmatched ')'", tok.pos);
                return QueryNode();
            case TokKind::Field:
                fail(ParseErrorKind::FieldTagMisplaced,
                     "field tag must follow a term", tok.pos);
                return QueryNode();
            case TokKind::End:
                fail(ParseErrorKind::DanglingOperator, "operand expected", tok.pos);
                return QueryNode();
        }
        return QueryNode();
    }

    void attach_field(Term& term) {
        if (peek().kind == TokKind::Field) {
            term.field = make_field_tag(next().text);
            if (peek().kind == TokKind::Field)
                fail(ParseErrorKind::FieldTagMisplaced, "term carries two field tags",
                     peek().pos);
        }
    }

    std::vector<Token> toks_;
    size_t pos_ = 0;
    std::optional<ParseError> err_;
};

} // namespace

ParseResult parse(std::string_view text) {
    if (trim(text).empty())
        return {std::nullopt, ParseError{ParseErrorKind::EmptyInput, "empty query", 0}};
    LexResult lexed = lex(text);
    if (lexed.error) return {std::nullopt, lexed.error};
    return Parser(std::move(lexed.tokens)).run();
}

// --------------------------------------------------------------- serialize

namespace {

// A group may print without parentheses only where re-parsing reassembles the
// same structure: at the root or as the first operand of its parent chain.
std::string render(const QueryNode& node, bool allow_bare_group) {
    if (node.is_term()) {
        const Term& t = node.term();
        std::string out;
        switch (t.quote) {
            case QuoteKind::None: out = t.phrase; break;
            case QuoteKind::Straight: out = "\"" + t.phrase + "\""; break;
            case QuoteKind::Curly:
                out = std::string(kCurlyOpen) + t.phrase + std::string(kCurlyClose);
                break;
        }
        if (t.field) out += t.field->raw;
        return out;
    }
    const Group& g = node.group();
    bool parens = g.parenthesized || !allow_bare_group;
    std::string out;
    for (size_t i = 0; i < g.children.size(); ++i) {
        if (i) {
            out += ' ';
            out += to_string(g.op);
            out += ' ';
        }
        out += render(g.children[i], i == 0);
    }
    if (parens) out = "(" + out + ")";
    return out;
}

} // namespace

std::string serialize(const QueryNode& node) { return render(node, true); }

// ---------------------------------------------------------------- analysis

namespace {

/// One lexical pass shared by the validation checks: tracks quoting and
/// bracketed tags so parentheses inside them are not counted.
struct Scan {
    bool balanced = true;
    int empty_clauses = 0;
    std::vector<std::string> tags;
};

Scan scan_text(std::string_view text) {
    Scan s;
    int depth = 0;
    size_t i = 0;
    auto skip_until = [&](std::string_view closer) {
        size_t end = text.find(closer, i);
        i = (end == std::string_view::npos) ? text.size() : end + closer.size();
    };
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (c == '"') {
            ++i;
            skip_until("\"");
        } else if (starts_with_at(text, i, kCurlyOpen)) {
            i += kCurlyOpen.size();
            skip_until(kCurlyClose);
        } else if (c == '[') {
            size_t end = text.find(']', i);
            if (end == std::string_view::npos) {
                i = text.size();
            } else {
                s.tags.emplace_back(text.substr(i, end - i + 1));
                i = end + 1;
            }
        } else if (c == '(') {
            ++depth;
            size_t j = i + 1;
            while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j < text.size() && text[j] == ')') ++s.empty_clauses;
            ++i;
        } else if (c == ')') {
            --depth;
            if (depth < 0) s.balanced = false;
            ++i;
        } else {
            ++i;
        }
    }
    if (depth != 0) s.balanced = false;
    return s;
}

} // namespace

bool balanced_parentheses(std::string_view text) { return scan_text(text).balanced; }

ValidationReport validate(std::string_view text) {
    ValidationReport report;
    Scan scan = scan_text(text);
    report.balanced_parentheses = scan.balanced;
    report.empty_clauses = scan.empty_clauses;
    for (auto& raw : scan.tags) {
        if (make_field_tag(raw).kind != FieldKind::Other) continue;
        if (std::find(report.unknown_fields.begin(), report.unknown_fields.end(), raw) ==
            report.unknown_fields.end())
            report.unknown_fields.push_back(raw);
    }
    ParseResult parsed = parse(text);
    report.parse_ok = parsed.ok();
    if (parsed.error) {
        report.message = parsed.error->message;
        report.error_kind = parsed.error->kind;
    }
    return report;
}

std::string to_json(const ValidationReport& report) {
    nlohmann::json doc;
    doc["parse_ok"] = report.parse_ok;
    doc["balanced_parentheses"] = report.balanced_parentheses;
    doc["empty_clauses"] = report.empty_clauses;
    doc["unknown_fields"] = report.unknown_fields;
    if (report.message) doc["message"] = *report.message;
    if (report.error_kind) doc["error_kind"] = to_string(*report.error_kind);
    return doc.dump();
}

int count_terms(const QueryNode& node) {
    if (node.is_term()) return 1;
    int total = 0;
    for (const auto& child : node.group().children) total += count_terms(child);
    return total;
}

namespace {

void accumulate_fields(const QueryNode& node, std::map<FieldKind, int>& usage) {
    if (node.is_term()) {
        FieldKind key = node.term().field ? node.term().field->kind : FieldKind::NoField;
        ++usage[key];
        return;
    }
    for (const auto& child : node.group().children) accumulate_fields(child, usage);
}

} // namespace

std::map<FieldKind, int> field_usage(const QueryNode& node) {
    std::map<FieldKind, int> usage;
    accumulate_fields(node, usage);
    return usage;
}

} // namespace bqr::query
