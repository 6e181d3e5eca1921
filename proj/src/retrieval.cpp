#include "bqr/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace bqr::retrieval {

using nlohmann::json;

const char* to_string(Backend backend) {
    switch (backend) {
        case Backend::Live: return "Live";
        case Backend::Replay: return "Replay";
        case Backend::Offline: return "Offline";
    }
    return "?";
}

// ------------------------------------------------------------ offline engine

std::vector<Document> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus: " + path);
    std::vector<Document> docs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw Error("corpus line " + std::to_string(lineno) + " is not JSON");
        Document d;
        d.pmid = rec.value("pmid", "");
        d.title = rec.value("title", "");
        d.abstract = rec.value("abstract", "");
        if (rec.contains("mesh_terms"))
            d.mesh_terms = rec["mesh_terms"].get<std::set<std::string>>();
        if (rec.contains("pub_types"))
            d.pub_types = rec["pub_types"].get<std::set<std::string>>();
        if (rec.contains("pub_date")) d.pub_date = Date::parse(rec["pub_date"].get<std::string>());
        if (d.pmid.empty()) throw Error("corpus line " + std::to_string(lineno) + " lacks pmid");
        docs.push_back(std::move(d));
    }
    return docs;
}

namespace {

std::vector<std::string> text_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

bool contains_phrase(const std::vector<std::string>& haystack,
                     const std::vector<std::string>& phrase) {
    if (phrase.empty() || phrase.size() > haystack.size()) return false;
    for (size_t i = 0; i + phrase.size() <= haystack.size(); ++i) {
        bool all = true;
        for (size_t j = 0; j < phrase.size(); ++j) {
            if (haystack[i + j] != phrase[j]) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

bool set_contains_ci(const std::set<std::string>& values, const std::string& wanted) {
    return std::any_of(values.begin(), values.end(),
                       [&](const std::string& v) { return iequals(v, wanted); });
}

/// Tokenized document fields, built once per search.
struct DocView {
    const Document* doc;
    std::vector<std::string> title_tokens;
    std::vector<std::string> tiab_tokens;  // title + abstract
};

bool term_matches(const query::Term& term, const DocView& view) {
    using query::FieldKind;
    FieldKind kind = term.field ? term.field->kind : FieldKind::NoField;
    std::vector<std::string> phrase = text_tokens(term.phrase);
    switch (kind) {
        case FieldKind::Title:
            return contains_phrase(view.title_tokens, phrase);
        case FieldKind::TitleAbstract:
        case FieldKind::TextWord:
            return contains_phrase(view.tiab_tokens, phrase);
        case FieldKind::MeSH:
            return set_contains_ci(view.doc->mesh_terms, term.phrase);
        case FieldKind::PublicationType:
            return set_contains_ci(view.doc->pub_types, term.phrase);
        case FieldKind::AllFields:
        case FieldKind::Other:
        case FieldKind::NoField:
            return contains_phrase(view.tiab_tokens, phrase) ||
                   set_contains_ci(view.doc->mesh_terms, term.phrase) ||
                   set_contains_ci(view.doc->pub_types, term.phrase);
    }
    return false;
}

std::set<std::string> evaluate(const query::QueryNode& node,
                               const std::vector<DocView>& universe) {
    if (node.is_term()) {
        std::set<std::string> out;
        for (const auto& view : universe)
            if (term_matches(node.term(), view)) out.insert(view.doc->pmid);
        return out;
    }
    const query::Group& g = node.group();
    std::set<std::string> acc = evaluate(g.children[0], universe);
    for (size_t i = 1; i < g.children.size(); ++i) {
        std::set<std::string> rhs = evaluate(g.children[i], universe);
        std::set<std::string> next;
        switch (g.op) {
            case query::BoolOp::And:
                std::set_intersection(acc.begin(), acc.end(), rhs.begin(), rhs.end(),
                                      std::inserter(next, next.begin()));
                break;
            case query::BoolOp::Or:
                next = std::move(acc);
                next.insert(rhs.begin(), rhs.end());
                break;
            case query::BoolOp::Not:
                std::set_difference(acc.begin(), acc.end(), rhs.begin(), rhs.end(),
                                    std::inserter(next, next.begin()));
                break;
        }
        acc = std::move(next);
    }
    return acc;
}

} // namespace

std::set<std::string> offline_search(const query::QueryNode& node,
                                     std::span<const Document> corpus,
                                     const std::optional<DateRange>& range) {
    std::vector<DocView> universe;
    universe.reserve(corpus.size());
    for (const auto& doc : corpus) {
        if (range) {
            if (!doc.pub_date || !range->contains(*doc.pub_date)) continue;
        }
        DocView view;
        view.doc = &doc;
        view.title_tokens = text_tokens(doc.title);
        view.tiab_tokens = text_tokens(doc.title + " " + doc.abstract);
        universe.push_back(std::move(view));
    }
    return evaluate(node, universe);
}

// -------------------------------------------------------------- rate limiter

TokenBucket::TokenBucket(double tokens_per_second, double burst)
    : TokenBucket(tokens_per_second, burst,
                  [] { return std::chrono::steady_clock::now(); },
                  [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }) {}

TokenBucket::TokenBucket(double tokens_per_second, double burst, Clock clock, Sleeper sleeper)
    : rate_(tokens_per_second),
      burst_(burst),
      available_(burst),
      clock_(std::move(clock)),
      sleeper_(std::move(sleeper)) {
    last_ = clock_();
}

void TokenBucket::acquire() {
    std::unique_lock lock(mutex_);
    auto now = clock_();
    available_ = std::min(burst_, available_ + rate_ * std::chrono::duration<double>(now - last_).count());
    last_ = now;
    if (available_ < 1.0) {
        double wait = (1.0 - available_) / rate_;
        lock.unlock();
        sleeper_(std::chrono::duration<double>(wait));
        lock.lock();
        auto after = clock_();
        available_ = std::min(burst_, available_ + rate_ * std::chrono::duration<double>(after - last_).count());
        last_ = after;
    }
    available_ -= 1.0;
}

// ------------------------------------------------------------------ esearch

namespace {

std::string url_encode(const std::string& value) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : value) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xf]);
        }
    }
    return out;
}

/// Canonical request: sorted parameter map without identification/key
/// parameters, which do not influence the result set.
std::string canonical_request(const std::map<std::string, std::string>& params) {
    json doc;
    doc["method"] = "GET";
    doc["path"] = "/esearch.fcgi";
    doc["params"] = params;
    return doc.dump();
}

std::map<std::string, std::string> page_params(const EsearchConfig& config,
                                               const std::string& query_text,
                                               const std::optional<DateRange>& range,
                                               long retstart) {
    std::map<std::string, std::string> params{
        {"db", "pubmed"},
        {"term", query_text},
        {"retmode", "json"},
        {"retmax", std::to_string(config.page_size)},
        {"retstart", std::to_string(retstart)},
    };
    if (range) {
        params["datetype"] = config.datetype;
        params["mindate"] = range->min.slashed();
        params["maxdate"] = range->max.slashed();
    }
    return params;
}

} // namespace

EsearchClient::EsearchClient(EsearchConfig config) : config_(std::move(config)) {
    if (config_.backend == Backend::Offline)
        throw Error("EsearchClient does not serve the Offline backend");
    if (config_.cache_dir.empty())
        throw Error("esearch cache directory not configured");
    cache_.emplace(config_.cache_dir);
    if (!config_.api_key_env.empty()) api_key_ = env_var(config_.api_key_env);
    double rate = config_.requests_per_second;
    if (rate <= 0.0) rate = api_key_ ? 10.0 : 3.0;  // endpoint policy
    limiter_ = std::make_unique<TokenBucket>(rate, rate);
}

EsearchClient::Page EsearchClient::fetch_page(const std::string& query_text,
                                              const std::optional<DateRange>& range,
                                              long retstart) {
    auto params = page_params(config_, query_text, range, retstart);
    std::string canonical = canonical_request(params);
    std::string key = ReplayCache::key_for(canonical);

    CachedExchange exchange;
    if (auto hit = cache_->get(key)) {
        exchange = *hit;
    } else if (config_.backend == Backend::Replay) {
        throw Error("replay cache miss for esearch request: " + canonical);
    } else {
        limiter_->acquire();
        auto wire = params;
        if (api_key_) wire["api_key"] = *api_key_;
        if (!config_.email.empty()) wire["email"] = config_.email;
        if (!config_.tool.empty()) wire["tool"] = config_.tool;
        std::string path = "/esearch.fcgi";
        char sep = '?';
        for (const auto& [k, v] : wire) {
            path += sep + k + "=" + url_encode(v);
            sep = '&';
        }
        auto slash = config_.base_url.find('/', config_.base_url.find("//") + 2);
        std::string host = slash == std::string::npos ? config_.base_url
                                                      : config_.base_url.substr(0, slash);
        std::string prefix = slash == std::string::npos ? "" : config_.base_url.substr(slash);
        httplib::Client client(host);
        client.set_read_timeout(config_.timeout_seconds, 0);
        auto res = client.Get(prefix + path);
        if (!res) throw Error("esearch transport failure: " + httplib::to_string(res.error()));
        exchange.request_json = canonical;
        exchange.status = res->status;
        exchange.body = res->body;
        cache_->put(key, exchange);
    }

    if (exchange.status != 200)
        throw Error("esearch HTTP " + std::to_string(exchange.status) + ": " + exchange.body);
    json doc = json::parse(exchange.body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("esearchresult"))
        throw Error("esearch returned no esearchresult: " + exchange.body);
    const json& result = doc["esearchresult"];
    if (result.contains("ERROR"))
        throw Error("esearch error payload: " + result["ERROR"].dump());

    Page page;
    const json& count = result["count"];
    page.count = count.is_string() ? std::stol(count.get<std::string>()) : count.get<long>();
    if (result.contains("idlist"))
        for (const auto& id : result["idlist"]) page.ids.push_back(id.get<std::string>());
    return page;
}

RetrievalResult EsearchClient::search(const std::string& query_text,
                                      const std::optional<DateRange>& range) {
    auto report = query::validate(query_text);
    if (!report.parse_ok)
        throw Error("query fails syntax validation: " +
                    report.message.value_or("parse error"));

    RetrievalResult out;
    out.backend = config_.backend;
    out.query_text = query_text;
    out.date_range = range;

    long retstart = 0;
    while (true) {
        Page page = fetch_page(query_text, range, retstart);
        out.total = page.count;
        for (auto& id : page.ids) out.pmids.insert(std::move(id));
        retstart += config_.page_size;
        if (retstart >= page.count || page.ids.empty()) break;
        if (retstart >= config_.id_cap) {
            out.truncated = true;
            break;
        }
    }
    return out;
}

void import_snapshot(const std::string& snapshot_path, const EsearchConfig& config) {
    if (config.cache_dir.empty()) throw Error("snapshot import needs a cache directory");
    ReplayCache cache(config.cache_dir);
    std::ifstream in(snapshot_path);
    if (!in) throw Error("cannot open snapshot: " + snapshot_path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw Error("snapshot line " + std::to_string(lineno) + " is not JSON");
        std::string term = rec.at("term").get<std::string>();
        std::optional<DateRange> range;
        if (rec.contains("mindate") && !rec["mindate"].is_null()) {
            auto lo = Date::parse(rec["mindate"].get<std::string>());
            auto hi = Date::parse(rec["maxdate"].get<std::string>());
            if (!lo || !hi)
                throw Error("snapshot line " + std::to_string(lineno) + " has bad dates");
            range = DateRange{*lo, *hi};
        }
        auto pmids = rec.at("pmids").get<std::vector<std::string>>();
        long total = static_cast<long>(pmids.size());
        long pages = std::max<long>(1, (total + config.page_size - 1) / config.page_size);
        for (long p = 0; p < pages; ++p) {
            long retstart = p * config.page_size;
            auto params = page_params(config, term, range, retstart);
            json body;
            body["esearchresult"]["count"] = std::to_string(total);
            body["esearchresult"]["retmax"] = std::to_string(config.page_size);
            body["esearchresult"]["retstart"] = std::to_string(retstart);
            json ids = json::array();
            for (long i = retstart; i < std::min<long>(total, retstart + config.page_size); ++i)
                ids.push_back(pmids[static_cast<size_t>(i)]);
            body["esearchresult"]["idlist"] = std::move(ids);
            CachedExchange exchange;
            exchange.request_json = canonical_request(params);
            exchange.status = 200;
            exchange.body = body.dump();
            cache.put(ReplayCache::key_for(exchange.request_json), exchange);
        }
    }
}

} // namespace bqr::retrieval
