#include "bqr/selector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <httplib.h>
#include <json.hpp>

#include "bqr/query.hpp"

namespace bqr::selector {

namespace {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

using Vector = std::map<std::string, double>;

double dot(const Vector& a, const Vector& b) {
    double sum = 0.0;
    for (const auto& [term, w] : a) {
        auto it = b.find(term);
        if (it != b.end()) sum += w * it->second;
    }
    return sum;
}

void l2_normalize(Vector& v) {
    double norm = std::sqrt(dot(v, v));
    if (norm <= 0.0) return;
    for (auto& [term, w] : v) w /= norm;
}

} // namespace

std::vector<double> LexicalBackend::scores(const std::string& query,
                                           const std::vector<std::string>& pool) const {
    // smoothed idf over the pool documents: ln((1+N)/(1+df)) + 1
    std::map<std::string, int> df;
    std::vector<std::vector<std::string>> pool_tokens;
    pool_tokens.reserve(pool.size());
    for (const auto& title : pool) pool_tokens.push_back(tokenize(title));
    for (const auto& tokens : pool_tokens) {
        std::map<std::string, bool> seen;
        for (const auto& t : tokens) {
            if (!seen[t]) {
                seen[t] = true;
                ++df[t];
            }
        }
    }
    double n_docs = static_cast<double>(pool.size());
    auto idf = [&](const std::string& term) {
        auto it = df.find(term);
        double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
        return std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
    };
    auto vectorize = [&](const std::vector<std::string>& tokens) {
        Vector v;
        for (const auto& t : tokens) v[t] += 1.0;
        for (auto& [term, w] : v) w *= idf(term);
        l2_normalize(v);
        return v;
    };

    Vector qv = vectorize(tokenize(query));
    std::vector<double> out;
    out.reserve(pool.size());
    for (const auto& tokens : pool_tokens) {
        Vector dv = vectorize(tokens);
        out.push_back(std::clamp(dot(qv, dv), 0.0, 1.0));
    }
    return out;
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(std::string endpoint, int timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {}

std::vector<double> RemoteEmbeddingBackend::scores(const std::string& query,
                                                   const std::vector<std::string>& pool) const {
    auto slash = endpoint_.find('/', endpoint_.find("//") + 2);
    std::string host = slash == std::string::npos ? endpoint_ : endpoint_.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : endpoint_.substr(slash);

    nlohmann::json body;
    body["input"].push_back(query);
    for (const auto& title : pool) body["input"].push_back(title);

    httplib::Client client(host);
    client.set_read_timeout(timeout_seconds_, 0);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw Error("embedding endpoint unreachable: " + endpoint_);
    if (res->status != 200)
        throw Error("embedding endpoint returned HTTP " + std::to_string(res->status) +
                    ": " + res->body);
    auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("vectors"))
        throw Error("embedding endpoint returned no vectors");
    auto vectors = doc["vectors"].get<std::vector<std::vector<double>>>();
    if (vectors.size() != pool.size() + 1)
        throw Error("embedding endpoint returned wrong vector count");

    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double num = 0.0, na = 0.0, nb = 0.0;
        for (size_t i = 0; i < a.size() && i < b.size(); ++i) {
            num += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if (na <= 0.0 || nb <= 0.0) return 0.0;
        return num / std::sqrt(na * nb);
    };
    std::vector<double> out;
    out.reserve(pool.size());
    for (size_t i = 1; i < vectors.size(); ++i)
        out.push_back((1.0 + cosine(vectors[0], vectors[i])) / 2.0);  // map to [0, 1]
    return out;
}

namespace {

Example make_example(const corpus::Topic& topic, const std::string& role) {
    const std::string* q = topic.query(role);
    if (q == nullptr)
        throw Error("topic " + topic.id + " has no '" + role + "' query for use as example");
    auto report = query::validate(*q);
    if (!report.parse_ok)
        throw Error("example query for topic " + topic.id +
                    " fails validation: " + report.message.value_or("parse error"));
    return Example{topic.id, topic.title, *q};
}

} // namespace

Example hqe_example(const HqeConfig& config, const corpus::TopicSet* pool) {
    if (config.seed_topic_id) {
        if (pool == nullptr)
            throw Error("HQE names topic " + *config.seed_topic_id +
                        " but no collection is loaded");
        const corpus::Topic* t = pool->find(*config.seed_topic_id);
        if (t == nullptr)
            throw Error("HQE topic " + *config.seed_topic_id + " not found in the collection");
        return make_example(*t, config.query_role);
    }
    if (config.title && config.query_text) {
        auto report = query::validate(*config.query_text);
        if (!report.parse_ok)
            throw Error("configured HQE query fails validation: " +
                        report.message.value_or("parse error"));
        return Example{"hqe", *config.title, *config.query_text};
    }
    throw Error("HQE example not configured: set a topic id or a title plus query asset");
}

Example select_re(const corpus::Topic& topic, const corpus::TopicSet& pool,
                  const SimilarityBackend& backend, const corpus::DuplicateReport& dedup,
                  bool exclude_duplicates, const std::string& query_role) {
    std::set<std::string> excluded{topic.id};
    if (exclude_duplicates) {
        auto peers = dedup.peers_of(topic.id);
        excluded.insert(peers.begin(), peers.end());
    }

    std::vector<const corpus::Topic*> candidates;
    std::vector<std::string> titles;
    for (const auto& other : pool.topics) {
        if (excluded.count(other.id)) continue;
        const std::string* q = other.query(query_role);
        if (q == nullptr || !query::validate(*q).parse_ok) continue;
        candidates.push_back(&other);
        titles.push_back(other.title);
    }
    if (candidates.empty())
        throw Error("no related-example candidates remain for topic " + topic.id);

    std::vector<double> sims = backend.scores(topic.title, titles);
    size_t best = 0;
    for (size_t i = 1; i < sims.size(); ++i) {
        if (sims[i] > sims[best] ||
            (sims[i] == sims[best] && id_less(candidates[i]->id, candidates[best]->id)))
            best = i;
    }
    return make_example(*candidates[best], query_role);
}

} // namespace bqr::selector
