#include "bqr/cache.hpp"

#include <filesystem>

#include <json.hpp>

#include "bqr/util.hpp"

namespace bqr {

using nlohmann::json;
namespace fs = std::filesystem;

ReplayCache::ReplayCache(std::string dir) : dir_(std::move(dir)) {
    if (dir_.empty()) throw Error("replay cache directory not configured");
    fs::create_directories(dir_);
}

std::string ReplayCache::key_for(const std::string& canonical_request) {
    return sha256_hex(canonical_request);
}

std::optional<CachedExchange> ReplayCache::get(const std::string& key) const {
    fs::path file = fs::path(dir_) / (key + ".json");
    if (!fs::exists(file)) return std::nullopt;
    json doc = json::parse(read_file(file.string()), nullptr, false);
    if (doc.is_discarded()) throw Error("corrupt cache entry: " + file.string());
    CachedExchange out;
    out.request_json = doc["request"].dump();
    out.status = doc["status"].get<int>();
    out.body = doc["body"].get<std::string>();
    return out;
}

void ReplayCache::put(const std::string& key, const CachedExchange& exchange) const {
    json doc;
    doc["request"] = json::parse(exchange.request_json);
    doc["status"] = exchange.status;
    doc["body"] = exchange.body;
    fs::path file = fs::path(dir_) / (key + ".json");
    write_file_atomic(file.string(), doc.dump(2) + "\n");
}

} // namespace bqr
