#pragma once

#include <optional>
#include <string>

namespace bqr {

/// One recorded HTTP exchange. `request_json` is the canonicalized request
/// (sorted keys, no volatile parameters) that produced the key.
struct CachedExchange {
    std::string request_json;
    int status = 0;
    std::string body;
};

/// Directory of recorded request/response pairs, one file per request, named
/// by the SHA-256 of the canonical request. Writes go through a temp file and
/// rename, so concurrent writers of the same key are last-writer-wins.
class ReplayCache {
public:
    explicit ReplayCache(std::string dir);

    static std::string key_for(const std::string& canonical_request);

    std::optional<CachedExchange> get(const std::string& key) const;
    void put(const std::string& key, const CachedExchange& exchange) const;

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
};

} // namespace bqr
