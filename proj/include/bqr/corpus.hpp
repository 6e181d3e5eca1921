#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bqr/util.hpp"

namespace bqr::corpus {

enum class Source { Seed, ClefTar };

/// One systematic review: identifiers, the expert Boolean queries by role
/// ("original", "edited"), the search date window, the judged-relevant
/// documents, and the seed studies the search was built from.
struct Topic {
    std::string id;
    std::string title;
    std::map<std::string, std::string> queries;
    std::optional<DateRange> date_range;
    std::set<std::string> relevant;
    std::set<std::string> seed_studies;

    const std::string* query(const std::string& role) const {
        auto it = queries.find(role);
        return it == queries.end() ? nullptr : &it->second;
    }
};

struct TopicSet {
    Source source = Source::Seed;
    std::vector<Topic> topics;

    const Topic* find(const std::string& id) const;
    size_t size() const { return topics.size(); }
};

/// Per-topic data problem collected during a load; loads keep going.
struct LoadIssue {
    std::string topic_id;
    int line = 0;  // 1-based line in the source file when known
    std::string message;
};

struct LoadResult {
    TopicSet set;
    std::vector<LoadIssue> issues;
};

/// Source JSON field names for the Seed collection, remappable because the
/// upstream schema is not pinned anywhere.
struct SeedFieldMap {
    std::string id = "id";
    std::string title = "title";
    std::string original_query = "query";
    std::string edited_query = "edited-search";
    std::string relevant = "included_studies";
    std::string seed_studies = "seed_studies";
    std::string min_date = "min_date";
    std::string max_date = "max_date";
};

/// Load a JSON-lines Seed collection, one topic per line. Malformed lines and
/// missing fields become issues, not failures; an unreadable file throws.
LoadResult load_seed_collection(const std::string& path, const SeedFieldMap& fields = {});

/// Load one CLEF TAR year: a directory of keyed topic files ("Topic:",
/// "Title:", multi-line "Query:") plus 4-column qrels. The raw query text is
/// stored verbatim under the "original" role; it is not PubMed syntax.
LoadResult load_clef_collection(const std::string& topics_dir, const std::string& qrels_path);

/// Union by topic id; relevance judgments of shared ids are merged.
TopicSet merge(const TopicSet& a, const TopicSet& b);

/// 2017-only review topics later withdrawn as unreliable.
const std::vector<std::string>& clef_unreliable_2017_ids();

TopicSet remove_topics(const TopicSet& set, std::span<const std::string> ids);

// -------------------------------------------------------------- duplicates

enum class MatchKind { SameTitle, SameQueryAndSeeds };

const char* to_string(MatchKind kind);

struct DuplicateGroup {
    std::vector<std::string> topic_ids;  // sorted by id
    MatchKind kind = MatchKind::SameTitle;
    /// For SameQueryAndSeeds pairs: how many relevant documents the grouped
    /// topics actually share (reported, the data is not repaired).
    std::optional<int> relevant_overlap;
};

struct DuplicateReport {
    std::vector<DuplicateGroup> groups;
    int unique_count = 0;

    /// ids grouped with `id` under any match kind (excluding `id` itself)
    std::set<std::string> peers_of(const std::string& id) const;
};

/// Group topics by normalized title and, separately, by identical
/// (original query, edited query, seed studies). unique_count counts
/// equivalence classes over the union of both groupings.
DuplicateReport find_duplicates(const TopicSet& set);

std::string report_to_json(const DuplicateReport& report);
std::string report_to_table(const DuplicateReport& report, const TopicSet& set);

// ------------------------------------------------------------ persistence

/// Canonical JSON-lines serialization; load_topics(save_topics(s)) is
/// identity on every field.
void save_topics(const TopicSet& set, const std::string& path);
LoadResult load_topics(const std::string& path);

} // namespace bqr::corpus
