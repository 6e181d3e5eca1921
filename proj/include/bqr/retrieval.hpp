#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bqr/cache.hpp"
#include "bqr/query.hpp"
#include "bqr/util.hpp"

namespace bqr::retrieval {

enum class Backend { Live, Replay, Offline };

const char* to_string(Backend backend);

struct RetrievalResult {
    std::set<std::string> pmids;
    long total = 0;  // count reported by the backend; may exceed |pmids| when capped
    Backend backend = Backend::Offline;
    std::string query_text;
    std::optional<DateRange> date_range;
    bool truncated = false;
};

// ------------------------------------------------------------ offline engine

/// Minimal document record backing the offline engine.
struct Document {
    std::string pmid;
    std::string title;
    std::string abstract;
    std::set<std::string> mesh_terms;
    std::set<std::string> pub_types;
    std::optional<Date> pub_date;
};

/// JSON-lines corpus: {"pmid","title","abstract","mesh_terms","pub_types","pub_date"}.
std::vector<Document> load_corpus(const std::string& path);

/// Set-semantics evaluation: a term resolves to the set of matching documents
/// (per its field tag), AND intersects, OR unions, NOT subtracts the right
/// side from the left. Text matching is case-insensitive token/phrase
/// containment; MeSH and publication types match exactly. A date range
/// restricts the document universe first.
std::set<std::string> offline_search(const query::QueryNode& node,
                                     std::span<const Document> corpus,
                                     const std::optional<DateRange>& range = {});

// -------------------------------------------------------------- rate limiter

/// Token bucket; acquire() blocks until a token is available. The clock and
/// sleeper are injectable so tests can run on virtual time.
class TokenBucket {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    TokenBucket(double tokens_per_second, double burst);
    TokenBucket(double tokens_per_second, double burst, Clock clock, Sleeper sleeper);

    void acquire();

private:
    double rate_;
    double burst_;
    double available_;
    std::chrono::steady_clock::time_point last_;
    Clock clock_;
    Sleeper sleeper_;
    std::mutex mutex_;
};

// ------------------------------------------------------------------ esearch

struct EsearchConfig {
    std::string base_url = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
    Backend backend = Backend::Live;
    std::string cache_dir;                    // required for Live and Replay
    std::string api_key_env = "PUBMED_API_KEY";
    std::string email;                        // courtesy identification
    std::string tool;
    int page_size = 10000;                    // endpoint maximum
    long id_cap = 100000;                     // hard stop with truncation flag
    std::string datetype = "pdat";            // publication date; "edat" for entry date
    double requests_per_second = 0.0;         // 0 = 3 without API key, 10 with
    int timeout_seconds = 60;
};

/// ESearch client with pagination, client-side rate limiting and a
/// record/replay cache. Live mode records every exchange; Replay mode answers
/// from the cache only and never opens a connection.
class EsearchClient {
public:
    explicit EsearchClient(EsearchConfig config);

    /// `query_text` must pass the syntax validator. The date range maps to
    /// mindate/maxdate on the configured datetype.
    RetrievalResult search(const std::string& query_text,
                           const std::optional<DateRange>& range = {});

    const EsearchConfig& config() const { return config_; }

private:
    struct Page {
        long count = 0;
        std::vector<std::string> ids;
    };
    Page fetch_page(const std::string& query_text, const std::optional<DateRange>& range,
                    long retstart);

    EsearchConfig config_;
    std::optional<ReplayCache> cache_;
    std::optional<std::string> api_key_;
    std::unique_ptr<TokenBucket> limiter_;
};

/// Snapshot line: {"term", "mindate", "maxdate", "pmids": [...]}. Expands each
/// entry into the replay-cache pages a live run would have recorded, so
/// Replay-mode clients serve it transparently.
void import_snapshot(const std::string& snapshot_path, const EsearchConfig& config);

} // namespace bqr::retrieval
