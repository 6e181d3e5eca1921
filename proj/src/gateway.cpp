#include "bqr/gateway.hpp"

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "bqr/cache.hpp"
#include "bqr/query.hpp"
#include "bqr/retrieval.hpp"

namespace bqr::gateway {

using nlohmann::json;

const char* to_string(ReturnMode mode) {
    return mode == ReturnMode::Plain ? "plain" : "json_object";
}

std::optional<ReturnMode> return_mode_from(const std::string& name) {
    if (name == "plain") return ReturnMode::Plain;
    if (name == "json_object" || name == "json") return ReturnMode::JsonObject;
    return std::nullopt;
}

void check_profile(const ModelProfile& profile) {
    if (profile.name.empty()) throw Error("model profile has no name");
    if (profile.endpoint.empty()) throw Error("model profile has no endpoint");
    if (profile.seeds.empty()) throw Error("model profile needs at least one seed");
    std::set<int> uniq(profile.seeds.begin(), profile.seeds.end());
    if (uniq.size() != profile.seeds.size())
        throw Error("model profile seeds must be distinct");
    if (profile.sampling.temperature < 0.0) throw Error("temperature must be >= 0");
    if (profile.sampling.top_p <= 0.0 || profile.sampling.top_p > 1.0)
        throw Error("top_p must be in (0, 1]");
}

// ----------------------------------------------------------------- prompts

namespace {

const struct PromptName {
    PromptId id;
    const char* name;
} kPromptNames[] = {
    {PromptId::Q1, "q1"},         {PromptId::Q2, "q2"},
    {PromptId::Q3, "q3"},         {PromptId::Q4Hqe, "q4_hqe"},
    {PromptId::Q5Hqe, "q5_hqe"},  {PromptId::Q4Re, "q4_re"},
    {PromptId::Q5Re, "q5_re"},    {PromptId::Guided, "guided"},
};

} // namespace

const char* to_string(PromptId id) {
    for (const auto& entry : kPromptNames)
        if (entry.id == id) return entry.name;
    return "?";
}

std::optional<PromptId> prompt_id_from(const std::string& name) {
    for (const auto& entry : kPromptNames)
        if (name == entry.name) return entry.id;
    return std::nullopt;
}

bool requires_example(PromptId id) {
    return id == PromptId::Q4Hqe || id == PromptId::Q5Hqe || id == PromptId::Q4Re ||
           id == PromptId::Q5Re;
}

bool uses_related_example(PromptId id) {
    return id == PromptId::Q4Re || id == PromptId::Q5Re;
}

const std::string& json_mode_sentence() {
    static const std::string sentence =
        "Structure the output as a JSON with the field boolean_query and create the "
        "boolean query without filtering based on the year.";
    return sentence;
}

PromptLibrary PromptLibrary::load(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("prompt template directory missing: " + dir);
    PromptLibrary lib;
    for (const auto& entry : kPromptNames) {
        PromptTemplate tmpl;
        tmpl.id = entry.id;
        std::string base = dir + "/" + entry.name;
        if (entry.id == PromptId::Guided) {
            for (int turn = 1; turn <= 4; ++turn) {
                fs::path p = base + ".turn" + std::to_string(turn) + ".txt";
                if (!fs::exists(p)) throw Error("guided template missing: " + p.string());
                tmpl.guided_turns.push_back(trim(read_file(p.string())));
            }
        } else {
            fs::path user = base + ".user.txt";
            if (!fs::exists(user)) continue;  // template not shipped; prompt unusable
            tmpl.user_text = trim(read_file(user.string()));
            fs::path system = base + ".system.txt";
            if (fs::exists(system)) tmpl.system_text = trim(read_file(system.string()));
        }
        lib.templates_.push_back(std::move(tmpl));
    }
    return lib;
}

bool PromptLibrary::has(PromptId id) const {
    return std::any_of(templates_.begin(), templates_.end(),
                       [&](const PromptTemplate& t) { return t.id == id; });
}

const PromptTemplate& PromptLibrary::get(PromptId id) const {
    for (const auto& t : templates_)
        if (t.id == id) return t;
    throw Error(std::string("no template for prompt ") + to_string(id));
}

namespace {

std::string substitute(const std::string& text, const corpus::Topic& topic,
                       const std::optional<selector::Example>& example) {
    std::string out = text;
    auto replace_all = [&out](const std::string& key, const std::string& value) {
        size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{{title}}", topic.title);
    if (example) {
        replace_all("{{example_title}}", example->title);
        replace_all("{{example_query}}", example->query_text);
    }
    if (out.find("{{") != std::string::npos)
        throw Error("unresolved placeholder in prompt template: " + out);
    return out;
}

} // namespace

std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl, const corpus::Topic& topic,
                                       const std::optional<selector::Example>& example,
                                       ReturnMode mode, bool supports_system_role) {
    if (tmpl.id == PromptId::Guided)
        throw Error("guided prompts are rendered turn by turn, use guided_generate");
    if (tmpl.needs_example() && !example)
        throw Error(std::string(to_string(tmpl.id)) + " requires a one-shot example");

    std::string user = substitute(tmpl.user_text, topic, example);
    if (mode == ReturnMode::JsonObject) user += " " + json_mode_sentence();

    std::vector<ChatMessage> messages;
    if (!tmpl.system_text.empty()) {
        std::string system = substitute(tmpl.system_text, topic, example);
        if (supports_system_role) {
            messages.push_back({"system", system});
            messages.push_back({"user", user});
        } else {
            messages.push_back({"user", system + "\n\n" + user});
        }
    } else {
        messages.push_back({"user", user});
    }
    return messages;
}

// --------------------------------------------------------------- transport

std::string wire_body(const ChatRequest& request) {
    json body;
    body["model"] = request.model;
    body["messages"] = json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["seed"] = request.seed;
    body["temperature"] = request.sampling.temperature;
    body["top_p"] = request.sampling.top_p;
    if (request.json_mode) body["response_format"] = {{"type", "json_object"}};
    return body.dump();
}

std::string canonical_request(const ChatRequest& request) {
    json doc;
    doc["attempt"] = request.attempt;
    doc["body"] = json::parse(wire_body(request));
    return doc.dump();
}

ChatResult parse_chat_response(int status, const std::string& body,
                               std::optional<double> retry_after) {
    ChatResult result;
    result.status = status;
    result.http_body = body;
    if (status != 200) {
        result.error = TransportError{TransportErrorKind::Http, status, body, retry_after,
                                      "HTTP " + std::to_string(status)};
        return result;
    }
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty() ||
        !doc["choices"][0].contains("message")) {
        result.error = TransportError{TransportErrorKind::Http, status, body, std::nullopt,
                                      "response carries no assistant message"};
        return result;
    }
    result.content = doc["choices"][0]["message"].value("content", "");
    return result;
}

struct HttpChatTransport::Impl {
    ModelProfile profile;
    retrieval::TokenBucket limiter;
    std::mutex mutex;
    std::condition_variable slot_free;
    int in_flight = 0;

    Impl(const ModelProfile& p)
        : profile(p),
          limiter(p.requests_per_second > 0 ? p.requests_per_second : 2.0,
                  p.requests_per_second > 0 ? p.requests_per_second : 2.0) {}
};

HttpChatTransport::HttpChatTransport(const ModelProfile& profile)
    : impl_(std::make_unique<Impl>(profile)) {
    check_profile(profile);
}

HttpChatTransport::~HttpChatTransport() = default;

ChatResult HttpChatTransport::complete(const ChatRequest& request) {
    const ModelProfile& profile = impl_->profile;
    std::optional<std::string> key;
    if (!profile.api_key_env.empty()) {
        key = env_var(profile.api_key_env);
        if (!key) {
            ChatResult r;
            r.error = TransportError{TransportErrorKind::Config, 0, "", std::nullopt,
                                     "environment variable " + profile.api_key_env +
                                         " is not set"};
            return r;
        }
    }

    {
        std::unique_lock lock(impl_->mutex);
        impl_->slot_free.wait(lock,
                              [&] { return impl_->in_flight < profile.max_in_flight; });
        ++impl_->in_flight;
    }
    impl_->limiter.acquire();

    auto release = [this] {
        std::lock_guard lock(impl_->mutex);
        --impl_->in_flight;
        impl_->slot_free.notify_one();
    };

    auto slash = profile.endpoint.find('/', profile.endpoint.find("//") + 2);
    std::string host = slash == std::string::npos ? profile.endpoint
                                                  : profile.endpoint.substr(0, slash);
    std::string prefix = slash == std::string::npos ? "" : profile.endpoint.substr(slash);

    httplib::Client client(host);
    client.set_read_timeout(profile.timeout_seconds, 0);
    client.set_connection_timeout(profile.timeout_seconds, 0);
    httplib::Headers headers;
    if (key) headers.emplace("Authorization", "Bearer " + *key);

    auto res = client.Post(prefix + "/chat/completions", headers, wire_body(request),
                           "application/json");
    release();

    if (!res) {
        // every wire-level failure is a retryable transport error; only a
        // missing key is configuration
        ChatResult r;
        bool timeout = res.error() == httplib::Error::ConnectionTimeout ||
                       res.error() == httplib::Error::Read ||
                       res.error() == httplib::Error::Write;
        r.error = TransportError{timeout ? TransportErrorKind::Timeout
                                         : TransportErrorKind::Http,
                                 0, "", std::nullopt,
                                 "transport failure: " + httplib::to_string(res.error())};
        return r;
    }
    std::optional<double> retry_after;
    if (res->has_header("Retry-After")) {
        try {
            retry_after = std::stod(res->get_header_value("Retry-After"));
        } catch (const std::exception&) {
        }
    }
    return parse_chat_response(res->status, res->body, retry_after);
}

ReplayChatTransport::ReplayChatTransport(std::string cache_dir,
                                         std::shared_ptr<ChatTransport> inner)
    : cache_(std::move(cache_dir)), inner_(std::move(inner)) {}

ChatResult ReplayChatTransport::complete(const ChatRequest& request) {
    std::string canonical = canonical_request(request);
    std::string key = ReplayCache::key_for(canonical);
    if (auto hit = cache_.get(key)) return parse_chat_response(hit->status, hit->body);
    if (!inner_) {
        ChatResult r;
        r.error = TransportError{TransportErrorKind::Config, 0, "", std::nullopt,
                                 "replay cache miss for chat request: " + canonical};
        return r;
    }
    ChatResult result = inner_->complete(request);
    if (result.status > 0)
        cache_.put(key, CachedExchange{canonical, result.status, result.http_body});
    return result;
}

namespace {

struct ScriptRule {
    std::optional<std::string> model, topic_id, prompt_id, content_contains;
    std::optional<int> seed, attempt;
    std::optional<std::string> content;  // success response
    std::optional<int> status;           // HTTP error response
    std::string body;
    std::optional<double> retry_after;
    bool timeout = false;

    bool matches(const ChatRequest& request) const {
        if (model && *model != request.model) return false;
        if (topic_id && *topic_id != request.topic_id) return false;
        if (prompt_id && *prompt_id != request.prompt_id) return false;
        if (seed && *seed != request.seed) return false;
        if (attempt && *attempt != request.attempt) return false;
        if (content_contains) {
            bool found = false;
            for (const auto& m : request.messages)
                if (m.content.find(*content_contains) != std::string::npos) found = true;
            if (!found) return false;
        }
        return true;
    }
};

} // namespace

struct ScriptedChatTransport::RuleSet {
    std::vector<ScriptRule> rules;
};

ScriptedChatTransport ScriptedChatTransport::from_file(const std::string& path) {
    return from_json_text(read_file(path));
}

ScriptedChatTransport ScriptedChatTransport::from_json_text(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.contains("rules"))
        throw Error("mock script must be a JSON object with a 'rules' array");
    ScriptedChatTransport transport;
    auto rules = std::make_shared<RuleSet>();
    for (const auto& jr : doc["rules"]) {
        ScriptRule rule;
        if (jr.contains("match")) {
            const json& m = jr["match"];
            if (m.contains("model")) rule.model = m["model"].get<std::string>();
            if (m.contains("topic_id")) rule.topic_id = m["topic_id"].get<std::string>();
            if (m.contains("prompt_id")) rule.prompt_id = m["prompt_id"].get<std::string>();
            if (m.contains("seed")) rule.seed = m["seed"].get<int>();
            if (m.contains("attempt")) rule.attempt = m["attempt"].get<int>();
            if (m.contains("content_contains"))
                rule.content_contains = m["content_contains"].get<std::string>();
        }
        const json& r = jr.at("respond");
        if (r.contains("content")) rule.content = r["content"].get<std::string>();
        if (r.contains("status")) rule.status = r["status"].get<int>();
        if (r.contains("body")) rule.body = r["body"].get<std::string>();
        if (r.contains("retry_after")) rule.retry_after = r["retry_after"].get<double>();
        if (r.contains("timeout")) rule.timeout = r["timeout"].get<bool>();
        rules->rules.push_back(std::move(rule));
    }
    transport.rules_ = std::move(rules);
    return transport;
}

ChatResult ScriptedChatTransport::complete(const ChatRequest& request) {
    for (const auto& rule : rules_->rules) {
        if (!rule.matches(request)) continue;
        ChatResult result;
        if (rule.timeout) {
            result.error = TransportError{TransportErrorKind::Timeout, 0, "", std::nullopt,
                                          "scripted timeout"};
            return result;
        }
        if (rule.status) {
            return parse_chat_response(*rule.status, rule.body, rule.retry_after);
        }
        json body;
        body["choices"] = json::array(
            {{{"message", {{"role", "assistant"}, {"content", *rule.content}}}}});
        return parse_chat_response(200, body.dump());
    }
    ChatResult result;
    result.error = TransportError{TransportErrorKind::Config, 0, "", std::nullopt,
                                  "no scripted response matches the request"};
    return result;
}

// -------------------------------------------------------------- extraction

Extraction extract_boolean_query(const std::string& raw, ReturnMode mode) {
    Extraction out;
    if (mode == ReturnMode::JsonObject) {
        json doc = json::parse(trim(raw), nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("boolean_query") ||
            !doc["boolean_query"].is_string()) {
            out.error = ExtractErrorKind::MalformedJson;
            return out;
        }
        out.query = doc["boolean_query"].get<std::string>();
        return out;
    }

    // Plain mode: longest line-contiguous span that parses as a query.
    std::vector<std::string> lines = split_lines(raw);
    std::string best;
    for (size_t i = 0; i < lines.size(); ++i) {
        std::string span;
        for (size_t j = i; j < lines.size(); ++j) {
            if (j > i) span += "\n";
            span += lines[j];
            std::string candidate = trim(span);
            if (candidate.empty() || candidate.size() <= best.size()) continue;
            if (query::parse(candidate).ok()) best = candidate;
        }
    }
    if (best.empty()) {
        out.error = ExtractErrorKind::NoQueryFound;
        return out;
    }
    out.query = best;
    return out;
}

// -------------------------------------------------------------- generation

const char* to_string(AttemptErrorKind kind) {
    switch (kind) {
        case AttemptErrorKind::Transport: return "transport";
        case AttemptErrorKind::MalformedJson: return "malformed_json";
        case AttemptErrorKind::NoQueryFound: return "no_query_found";
        case AttemptErrorKind::InvalidQuery: return "invalid_query";
        case AttemptErrorKind::EmptyTurn: return "empty_turn";
    }
    return "?";
}

const char* to_string(ErrorClass error_class) {
    switch (error_class) {
        case ErrorClass::None: return "none";
        case ErrorClass::MalformedAfterRetries: return "malformed_after_retries";
        case ErrorClass::TransportTimeout: return "transport_timeout";
        case ErrorClass::ConversationBreakdown: return "conversation_breakdown";
    }
    return "?";
}

namespace {

std::optional<AttemptErrorKind> attempt_error_from(const std::string& name) {
    for (auto kind : {AttemptErrorKind::Transport, AttemptErrorKind::MalformedJson,
                      AttemptErrorKind::NoQueryFound, AttemptErrorKind::InvalidQuery,
                      AttemptErrorKind::EmptyTurn})
        if (name == to_string(kind)) return kind;
    return std::nullopt;
}

std::optional<ErrorClass> error_class_from(const std::string& name) {
    for (auto ec : {ErrorClass::None, ErrorClass::MalformedAfterRetries,
                    ErrorClass::TransportTimeout, ErrorClass::ConversationBreakdown})
        if (name == to_string(ec)) return ec;
    return std::nullopt;
}

AttemptErrorKind classify_extract_error(ExtractErrorKind kind) {
    return kind == ExtractErrorKind::MalformedJson ? AttemptErrorKind::MalformedJson
                                                   : AttemptErrorKind::NoQueryFound;
}

/// Try to turn one raw assistant output into an accepted query.
Attempt resolve_attempt(const std::string& raw, ReturnMode mode) {
    Attempt attempt;
    attempt.raw_output = raw;
    Extraction extraction = extract_boolean_query(raw, mode);
    if (!extraction.ok()) {
        attempt.error = classify_extract_error(*extraction.error);
        return attempt;
    }
    attempt.extracted = extraction.query;
    if (!query::validate(*extraction.query).parse_ok)
        attempt.error = AttemptErrorKind::InvalidQuery;
    return attempt;
}

} // namespace

std::string record_to_json(const GenerationRecord& record) {
    json doc;
    doc["topic_id"] = record.topic_id;
    doc["model"] = record.model;
    doc["prompt_id"] = record.prompt_id;
    doc["seed"] = record.seed;
    doc["error_class"] = to_string(record.error_class);
    doc["attempts"] = json::array();
    for (const auto& a : record.attempts) {
        json ja;
        ja["raw_output"] = a.raw_output;
        if (a.extracted) ja["extracted"] = *a.extracted;
        if (a.error) ja["error"] = to_string(*a.error);
        doc["attempts"].push_back(std::move(ja));
    }
    if (!record.conversation.empty()) {
        doc["conversation"] = json::array();
        for (const auto& m : record.conversation)
            doc["conversation"].push_back({{"role", m.role}, {"content", m.content}});
    }
    if (record.final_query) doc["final_query"] = *record.final_query;
    return doc.dump();
}

GenerationRecord record_from_json(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw Error("generation record is not a JSON object");
    GenerationRecord record;
    record.topic_id = doc.value("topic_id", "");
    record.model = doc.value("model", "");
    record.prompt_id = doc.value("prompt_id", "");
    record.seed = doc.value("seed", 0);
    if (auto ec = error_class_from(doc.value("error_class", "none"))) record.error_class = *ec;
    for (const auto& ja : doc["attempts"]) {
        Attempt a;
        a.raw_output = ja.value("raw_output", "");
        if (ja.contains("extracted")) a.extracted = ja["extracted"].get<std::string>();
        if (ja.contains("error")) a.error = attempt_error_from(ja["error"].get<std::string>());
        record.attempts.push_back(std::move(a));
    }
    if (doc.contains("conversation"))
        for (const auto& jm : doc["conversation"])
            record.conversation.push_back(
                {jm.value("role", ""), jm.value("content", "")});
    if (doc.contains("final_query")) record.final_query = doc["final_query"].get<std::string>();
    return record;
}

GenerationRecord generate_with_retry(ChatTransport& transport, const ModelProfile& profile,
                                     const PromptTemplate& tmpl, const corpus::Topic& topic,
                                     const std::optional<selector::Example>& example,
                                     int seed, int max_retries) {
    if (max_retries < 0) throw Error("max_retries must be >= 0");
    GenerationRecord record;
    record.topic_id = topic.id;
    record.model = profile.name;
    record.prompt_id = to_string(tmpl.id);
    record.seed = seed;

    std::vector<ChatMessage> messages =
        render_prompt(tmpl, topic, example, profile.return_mode, profile.supports_system_role);

    bool last_was_transport = false;
    for (int attempt_no = 0; attempt_no <= max_retries; ++attempt_no) {
        ChatRequest request;
        request.model = profile.name;
        request.messages = messages;
        request.seed = seed;
        request.sampling = profile.sampling;
        request.json_mode = profile.return_mode == ReturnMode::JsonObject;
        request.attempt = attempt_no;
        request.topic_id = topic.id;
        request.prompt_id = record.prompt_id;

        ChatResult result = transport.complete(request);
        if (!result.ok()) {
            if (result.error->kind == TransportErrorKind::Config)
                throw Error(result.error->message);
            Attempt attempt;
            attempt.error = AttemptErrorKind::Transport;
            attempt.raw_output = result.error->body;
            record.attempts.push_back(std::move(attempt));
            last_was_transport = true;
            continue;
        }
        last_was_transport = false;
        Attempt attempt = resolve_attempt(*result.content, profile.return_mode);
        bool accepted = !attempt.error.has_value();
        record.attempts.push_back(std::move(attempt));
        if (accepted) {
            record.final_query = record.attempts.back().extracted;
            record.error_class = ErrorClass::None;
            return record;
        }
    }
    record.error_class = last_was_transport ? ErrorClass::TransportTimeout
                                            : ErrorClass::MalformedAfterRetries;
    return record;
}

GenerationRecord guided_generate(ChatTransport& transport, const ModelProfile& profile,
                                 const PromptTemplate& tmpl, const corpus::Topic& topic,
                                 int seed) {
    if (tmpl.guided_turns.size() != 4)
        throw Error("guided template must define exactly 4 turns");
    GenerationRecord record;
    record.topic_id = topic.id;
    record.model = profile.name;
    record.prompt_id = to_string(tmpl.id);
    record.seed = seed;

    std::string system_text = tmpl.system_text.empty()
                                  ? std::string()
                                  : substitute(tmpl.system_text, topic, std::nullopt);
    if (!system_text.empty() && profile.supports_system_role)
        record.conversation.push_back({"system", system_text});

    for (size_t turn = 0; turn < tmpl.guided_turns.size(); ++turn) {
        bool final_turn = turn + 1 == tmpl.guided_turns.size();
        std::string user = substitute(tmpl.guided_turns[turn], topic, std::nullopt);
        if (turn == 0 && !system_text.empty() && !profile.supports_system_role)
            user = system_text + "\n\n" + user;
        if (final_turn && profile.return_mode == ReturnMode::JsonObject)
            user += " " + json_mode_sentence();
        record.conversation.push_back({"user", user});

        ChatRequest request;
        request.model = profile.name;
        request.messages = record.conversation;
        request.seed = seed;
        request.sampling = profile.sampling;
        request.json_mode = final_turn && profile.return_mode == ReturnMode::JsonObject;
        request.attempt = static_cast<int>(turn);
        request.topic_id = topic.id;
        request.prompt_id = record.prompt_id;

        ChatResult result = transport.complete(request);
        if (!result.ok()) {
            if (result.error->kind == TransportErrorKind::Config)
                throw Error(result.error->message);
            Attempt attempt;
            attempt.error = AttemptErrorKind::Transport;
            record.attempts.push_back(std::move(attempt));
            record.error_class = ErrorClass::TransportTimeout;
            return record;
        }
        std::string reply = *result.content;
        record.conversation.push_back({"assistant", reply});
        if (trim(reply).empty()) {
            Attempt attempt;
            attempt.raw_output = reply;
            attempt.error = AttemptErrorKind::EmptyTurn;
            record.attempts.push_back(std::move(attempt));
            record.error_class = ErrorClass::ConversationBreakdown;
            return record;
        }
        if (final_turn) {
            Attempt attempt = resolve_attempt(reply, profile.return_mode);
            bool accepted = !attempt.error.has_value();
            record.attempts.push_back(std::move(attempt));
            if (accepted) {
                record.final_query = record.attempts.back().extracted;
                record.error_class = ErrorClass::None;
            } else {
                record.error_class = ErrorClass::ConversationBreakdown;
            }
        }
    }
    return record;
}

} // namespace bqr::gateway
