#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bqr/corpus.hpp"

namespace bqr::selector {

/// A one-shot example shown to the model: a review title plus its expert
/// PubMed query. The query text always passes the syntax validator.
struct Example {
    std::string topic_id;
    std::string title;
    std::string query_text;
};

/// Title-similarity scorer. Implementations are read-only and usable from
/// concurrent select_re calls.
class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;

    /// Similarity of `query` against each pool entry, same order, in [0, 1].
    virtual std::vector<double> scores(const std::string& query,
                                       const std::vector<std::string>& pool) const = 0;
};

/// TF-IDF cosine over case-folded title tokens. Deterministic, no I/O; the
/// default backend.
class LexicalBackend : public SimilarityBackend {
public:
    std::vector<double> scores(const std::string& query,
                               const std::vector<std::string>& pool) const override;
};

/// Embedding endpoint: POST {"input": [texts]} returning {"vectors": [[..]]}.
/// Cosine is computed locally and mapped to [0, 1].
class RemoteEmbeddingBackend : public SimilarityBackend {
public:
    explicit RemoteEmbeddingBackend(std::string endpoint, int timeout_seconds = 30);
    std::vector<double> scores(const std::string& query,
                               const std::vector<std::string>& pool) const override;

private:
    std::string endpoint_;
    int timeout_seconds_;
};

/// Fixed high-quality example: either a topic id resolved against a loaded
/// collection or an external title + query asset. There is no built-in
/// default; the asset must be configured explicitly.
struct HqeConfig {
    std::optional<std::string> seed_topic_id;
    std::optional<std::string> title;
    std::optional<std::string> query_text;
    std::string query_role = "original";
};

Example hqe_example(const HqeConfig& config, const corpus::TopicSet* pool);

/// Related example: the pool topic whose title is most similar to `topic`,
/// never the topic itself and (by default) never a flagged duplicate of it.
/// Ties break toward the lowest topic id. Candidates must carry a valid
/// query under `query_role`.
Example select_re(const corpus::Topic& topic, const corpus::TopicSet& pool,
                  const SimilarityBackend& backend, const corpus::DuplicateReport& dedup,
                  bool exclude_duplicates = true,
                  const std::string& query_role = "original");

} // namespace bqr::selector
