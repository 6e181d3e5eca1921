#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bqr/cache.hpp"
#include "bqr/corpus.hpp"
#include "bqr/selector.hpp"

namespace bqr::gateway {

enum class ReturnMode { Plain, JsonObject };

const char* to_string(ReturnMode mode);
std::optional<ReturnMode> return_mode_from(const std::string& name);

struct Sampling {
    double temperature = 0.0;
    double top_p = 0.1;
};

/// One chat-completion endpoint and how this harness drives it.
struct ModelProfile {
    std::string name;                  // wire model name
    std::string endpoint;              // base URL up to and including /v1
    std::string api_key_env;           // bearer token source; empty = no auth
    std::vector<int> seeds;            // distinct, non-empty
    Sampling sampling;
    ReturnMode return_mode = ReturnMode::Plain;
    bool supports_system_role = true;
    double requests_per_second = 2.0;
    int max_in_flight = 4;
    int timeout_seconds = 120;
};

/// Throws on violated invariants (empty or repeated seeds, bad sampling).
void check_profile(const ModelProfile& profile);

// ----------------------------------------------------------------- prompts

enum class PromptId { Q1, Q2, Q3, Q4Hqe, Q5Hqe, Q4Re, Q5Re, Guided };

const char* to_string(PromptId id);
std::optional<PromptId> prompt_id_from(const std::string& name);  // "q1" .. "guided"
bool requires_example(PromptId id);
bool uses_related_example(PromptId id);

/// Editable text template. Placeholders: {{title}}, {{example_title}},
/// {{example_query}}. The guided strategy is a fixed four-turn user script.
struct PromptTemplate {
    PromptId id = PromptId::Q1;
    std::string system_text;
    std::string user_text;
    std::vector<std::string> guided_turns;

    bool needs_example() const { return requires_example(id); }
};

/// Sentence appended to the user prompt in JsonObject mode; asks for a JSON
/// object with the field "boolean_query" and no year filtering.
const std::string& json_mode_sentence();

/// Loads *.user.txt / *.system.txt / guided.turn[1-4].txt from a directory.
class PromptLibrary {
public:
    static PromptLibrary load(const std::string& dir);

    const PromptTemplate& get(PromptId id) const;
    bool has(PromptId id) const;

private:
    std::vector<PromptTemplate> templates_;
};

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// Substitute placeholders and split instruction/topic text onto the system
/// role when the profile supports it. JsonObject mode appends the
/// structured-output sentence. Throws on a missing required example or an
/// unresolved placeholder.
std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl, const corpus::Topic& topic,
                                       const std::optional<selector::Example>& example,
                                       ReturnMode mode, bool supports_system_role);

// --------------------------------------------------------------- transport

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    int seed = 0;
    Sampling sampling;
    bool json_mode = false;
    /// Retry ordinal. Not part of the wire body; distinguishes re-issued
    /// identical requests in the replay cache and in scripted transports.
    int attempt = 0;
    // routing metadata for scripted transports, never sent on the wire
    std::string topic_id;
    std::string prompt_id;
};

/// JSON body exactly as POSTed to /chat/completions.
std::string wire_body(const ChatRequest& request);

/// wire body plus the attempt ordinal; hashed into the cache key.
std::string canonical_request(const ChatRequest& request);

enum class TransportErrorKind { Timeout, Http, Config };

struct TransportError {
    TransportErrorKind kind = TransportErrorKind::Http;
    int status = 0;
    std::string body;
    std::optional<double> retry_after_seconds;  // backoff metadata when the server sent it
    std::string message;

    bool retryable() const {
        return kind == TransportErrorKind::Timeout ||
               (kind == TransportErrorKind::Http &&
                (status == 429 || status == 408 || status >= 500));
    }
};

struct ChatResult {
    std::optional<std::string> content;  // assistant message, verbatim
    std::optional<TransportError> error;
    int status = 0;          // raw HTTP status when an exchange happened
    std::string http_body;   // raw response body for recording

    bool ok() const { return content.has_value(); }
};

/// Parse an OpenAI-style chat-completion response body.
ChatResult parse_chat_response(int status, const std::string& body,
                               std::optional<double> retry_after = {});

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual ChatResult complete(const ChatRequest& request) = 0;
};

/// POSTs to {endpoint}/chat/completions with bearer auth from the profile's
/// environment variable; rate-limited and capped in flight.
class HttpChatTransport : public ChatTransport {
public:
    explicit HttpChatTransport(const ModelProfile& profile);
    ~HttpChatTransport() override;
    ChatResult complete(const ChatRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Record/replay wrapper. With an inner transport, misses are forwarded and
/// recorded (status > 0); without one, a miss is a configuration error.
class ReplayChatTransport : public ChatTransport {
public:
    ReplayChatTransport(std::string cache_dir, std::shared_ptr<ChatTransport> inner = {});
    ChatResult complete(const ChatRequest& request) override;

private:
    ReplayCache cache_;
    std::shared_ptr<ChatTransport> inner_;
};

/// Deterministic mock driven by first-match rules; used by tests and by the
/// CLI's mock backend. Match fields (all optional): model, topic_id,
/// prompt_id, seed, attempt, content_contains.
class ScriptedChatTransport : public ChatTransport {
public:
    static ScriptedChatTransport from_file(const std::string& path);
    static ScriptedChatTransport from_json_text(const std::string& text);

    ChatResult complete(const ChatRequest& request) override;

private:
    struct RuleSet;
    std::shared_ptr<const RuleSet> rules_;
};

// -------------------------------------------------------------- extraction

enum class ExtractErrorKind { MalformedJson, NoQueryFound };

struct Extraction {
    std::optional<std::string> query;
    std::optional<ExtractErrorKind> error;

    bool ok() const { return query.has_value(); }
};

/// JsonObject mode: parse the body as a JSON object and return the
/// "boolean_query" string. Plain mode: the longest line-contiguous span that
/// parses as a PubMed query. Callers still validate before accepting.
Extraction extract_boolean_query(const std::string& raw, ReturnMode mode);

// -------------------------------------------------------------- generation

enum class AttemptErrorKind { Transport, MalformedJson, NoQueryFound, InvalidQuery, EmptyTurn };

const char* to_string(AttemptErrorKind kind);

struct Attempt {
    std::string raw_output;
    std::optional<std::string> extracted;
    std::optional<AttemptErrorKind> error;
};

enum class ErrorClass { None, MalformedAfterRetries, TransportTimeout, ConversationBreakdown };

const char* to_string(ErrorClass error_class);

/// Everything one (topic, model, prompt, seed) cell produced: each attempt's
/// raw output, the guided transcript when applicable, and the outcome.
/// final_query is present exactly when error_class == None.
struct GenerationRecord {
    std::string topic_id;
    std::string model;
    std::string prompt_id;
    int seed = 0;
    std::vector<Attempt> attempts;
    std::vector<ChatMessage> conversation;  // guided mode transcript
    std::optional<std::string> final_query;
    ErrorClass error_class = ErrorClass::None;
};

std::string record_to_json(const GenerationRecord& record);
GenerationRecord record_from_json(const std::string& text);

/// Re-issues the identical request while extraction or validation fails, up
/// to max_retries extra attempts. Transport failures consume attempts too;
/// the record classifies the final outcome.
GenerationRecord generate_with_retry(ChatTransport& transport, const ModelProfile& profile,
                                     const PromptTemplate& tmpl, const corpus::Topic& topic,
                                     const std::optional<selector::Example>& example,
                                     int seed, int max_retries);

/// Four-turn conversation: elicit terms, classify them into medical,
/// treatment and design terms, compose a query, enrich with MeSH fields.
/// The final turn goes through extraction; an empty or unusable turn ends in
/// ConversationBreakdown.
GenerationRecord guided_generate(ChatTransport& transport, const ModelProfile& profile,
                                 const PromptTemplate& tmpl, const corpus::Topic& topic,
                                 int seed);

} // namespace bqr::gateway
