#include "bqr/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace bqr::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

const Topic* TopicSet::find(const std::string& id) const {
    for (const auto& t : topics)
        if (t.id == id) return &t;
    return nullptr;
}

const char* to_string(MatchKind kind) {
    return kind == MatchKind::SameTitle ? "SameTitle" : "SameQueryAndSeeds";
}

namespace {

void add_issue(std::vector<LoadIssue>& issues, std::string topic_id, int line,
               std::string message) {
    issues.push_back({std::move(topic_id), line, std::move(message)});
}

/// Collect PMIDs from a JSON array, reporting non-digit entries and in-list
/// duplicates (both occur in the wild).
std::set<std::string> read_pmids(const json& arr, const std::string& topic_id, int line,
                                 std::vector<LoadIssue>& issues) {
    std::set<std::string> out;
    if (!arr.is_array()) {
        add_issue(issues, topic_id, line, "expected an array of PMIDs");
        return out;
    }
    for (const auto& v : arr) {
        std::string pmid = v.is_string() ? v.get<std::string>()
                                         : (v.is_number_integer() ? std::to_string(v.get<long>())
                                                                  : std::string());
        if (!is_digit_string(pmid)) {
            add_issue(issues, topic_id, line, "non-numeric PMID entry skipped");
            continue;
        }
        if (!out.insert(pmid).second)
            add_issue(issues, topic_id, line, "duplicated study id " + pmid);
    }
    return out;
}

std::optional<DateRange> read_date_range(const json& rec, const SeedFieldMap& fields,
                                         const std::string& topic_id, int line,
                                         std::vector<LoadIssue>& issues) {
    if (!rec.contains(fields.min_date) || !rec.contains(fields.max_date))
        return std::nullopt;
    auto lo = Date::parse(rec[fields.min_date].get<std::string>());
    auto hi = Date::parse(rec[fields.max_date].get<std::string>());
    if (!lo || !hi) {
        add_issue(issues, topic_id, line, "unparseable search date, range dropped");
        return std::nullopt;
    }
    if (*hi < *lo) {
        add_issue(issues, topic_id, line, "search date range inverted, range dropped");
        return std::nullopt;
    }
    return DateRange{*lo, *hi};
}

} // namespace

LoadResult load_seed_collection(const std::string& path, const SeedFieldMap& fields) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open Seed collection: " + path);

    LoadResult result;
    result.set.source = Source::Seed;
    std::set<std::string> seen_ids;

    auto parse_line = [&](const json& rec, int lineno) {
        Topic t;
        if (rec.contains(fields.id)) {
            const auto& idv = rec[fields.id];
            t.id = idv.is_string() ? idv.get<std::string>()
                                   : std::to_string(idv.get<long>());
        }
        if (t.id.empty()) {
            add_issue(result.issues, "", lineno, "missing field '" + fields.id + "'");
            return;
        }
        if (!seen_ids.insert(t.id).second) {
            add_issue(result.issues, t.id, lineno, "duplicate topic id, line skipped");
            return;
        }
        if (rec.contains(fields.title)) t.title = rec[fields.title].get<std::string>();
        bool have_query = false;
        if (rec.contains(fields.original_query)) {
            t.queries["original"] = rec[fields.original_query].get<std::string>();
            have_query = true;
        }
        if (rec.contains(fields.edited_query)) {
            t.queries["edited"] = rec[fields.edited_query].get<std::string>();
            have_query = true;
        }
        if (!have_query)
            add_issue(result.issues, t.id, lineno,
                      "missing fields '" + fields.original_query + "' and '" +
                          fields.edited_query + "'");
        if (rec.contains(fields.relevant))
            t.relevant = read_pmids(rec[fields.relevant], t.id, lineno, result.issues);
        else
            add_issue(result.issues, t.id, lineno, "missing field '" + fields.relevant + "'");
        if (rec.contains(fields.seed_studies))
            t.seed_studies = read_pmids(rec[fields.seed_studies], t.id, lineno, result.issues);
        t.date_range = read_date_range(rec, fields, t.id, lineno, result.issues);
        result.set.topics.push_back(std::move(t));
    };

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) {
            add_issue(result.issues, "", lineno, "malformed JSON line");
            continue;
        }
        try {
            parse_line(rec, lineno);
        } catch (const json::exception& e) {
            add_issue(result.issues, "", lineno, std::string("malformed field: ") + e.what());
        }
    }
    return result;
}

LoadResult load_clef_collection(const std::string& topics_dir, const std::string& qrels_path) {
    if (!fs::is_directory(topics_dir))
        throw Error("not a CLEF topic directory: " + topics_dir);

    LoadResult result;
    result.set.source = Source::ClefTar;

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(topics_dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::map<std::string, size_t> index;
    for (const auto& file : files) {
        std::string text = read_file(file.string());
        Topic t;
        std::vector<std::string> query_lines;
        bool in_query = false;
        for (const auto& raw : split_lines(text)) {
            if (in_query) {
                query_lines.push_back(raw);
                continue;
            }
            std::string line = trim(raw);
            if (line.rfind("Topic:", 0) == 0) t.id = trim(line.substr(6));
            else if (line.rfind("Title:", 0) == 0) t.title = trim(line.substr(6));
            else if (line.rfind("Query:", 0) == 0) {
                in_query = true;
                std::string rest = trim(line.substr(6));
                if (!rest.empty()) query_lines.push_back(rest);
            }
        }
        while (!query_lines.empty() && trim(query_lines.back()).empty()) query_lines.pop_back();
        if (t.id.empty() || t.title.empty() || query_lines.empty()) {
            add_issue(result.issues, t.id, 0,
                      "missing Topic/Title/Query header in " + file.filename().string());
            continue;
        }
        t.queries["original"] = join(query_lines, "\n");
        if (index.count(t.id)) {
            add_issue(result.issues, t.id, 0, "duplicate topic file skipped");
            continue;
        }
        index[t.id] = result.set.topics.size();
        result.set.topics.push_back(std::move(t));
    }

    std::ifstream qrels(qrels_path);
    if (!qrels) throw Error("cannot open qrels: " + qrels_path);
    std::string line;
    int lineno = 0;
    std::set<std::string> warned_missing;
    while (std::getline(qrels, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::string topic, iter, doc, rel_text;
        if (!(row >> topic >> iter >> doc >> rel_text)) {
            add_issue(result.issues, "", lineno, "short qrels row");
            continue;
        }
        int rel = 0;
        try {
            size_t used = 0;
            rel = std::stoi(rel_text, &used);
            if (used != rel_text.size()) throw std::invalid_argument(rel_text);
        } catch (const std::exception&) {
            add_issue(result.issues, topic, lineno, "non-integer relevance '" + rel_text + "'");
            continue;
        }
        auto it = index.find(topic);
        if (it == index.end()) {
            if (warned_missing.insert(topic).second)
                add_issue(result.issues, topic, lineno, "qrels topic has no topic file, skipped");
            continue;
        }
        if (rel > 0) result.set.topics[it->second].relevant.insert(doc);
    }
    return result;
}

TopicSet merge(const TopicSet& a, const TopicSet& b) {
    TopicSet out = a;
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < out.topics.size(); ++i) index[out.topics[i].id] = i;
    for (const auto& t : b.topics) {
        auto it = index.find(t.id);
        if (it == index.end()) {
            index[t.id] = out.topics.size();
            out.topics.push_back(t);
        } else {
            auto& kept = out.topics[it->second];
            kept.relevant.insert(t.relevant.begin(), t.relevant.end());
        }
    }
    return out;
}

const std::vector<std::string>& clef_unreliable_2017_ids() {
    static const std::vector<std::string> ids = {
        "CD010771", "CD007431", "CD010772", "CD010775",
        "CD010783", "CD010860", "CD010896", "CD011145",
    };
    return ids;
}

TopicSet remove_topics(const TopicSet& set, std::span<const std::string> ids) {
    TopicSet out;
    out.source = set.source;
    for (const auto& t : set.topics)
        if (std::find(ids.begin(), ids.end(), t.id) == ids.end()) out.topics.push_back(t);
    return out;
}

// -------------------------------------------------------------- duplicates

namespace {

struct UnionFind {
    std::map<std::string, std::string> parent;

    const std::string& find(const std::string& x) {
        auto it = parent.find(x);
        if (it == parent.end()) {
            parent[x] = x;
            return parent.find(x)->first;
        }
        if (it->second == x) return it->second;
        std::string root = find(it->second);
        parent[x] = root;
        return parent.find(x)->second;
    }

    void unite(const std::string& a, const std::string& b) {
        std::string ra = find(a), rb = find(b);
        if (ra != rb) parent[ra] = rb;
    }
};

std::vector<std::string> sorted_ids(std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end(), id_less);
    return ids;
}

} // namespace

DuplicateReport find_duplicates(const TopicSet& set) {
    DuplicateReport report;

    std::map<std::string, std::vector<std::string>> by_title;
    std::map<std::string, std::vector<std::string>> by_inputs;
    for (const auto& t : set.topics) {
        std::string title_key = normalize_title(t.title);
        if (!title_key.empty()) by_title[title_key].push_back(t.id);

        std::string original = t.query("original") ? *t.query("original") : "";
        std::string edited = t.query("edited") ? *t.query("edited") : "";
        if (original.empty() && edited.empty() && t.seed_studies.empty()) continue;
        std::string key = original + '\x1f' + edited + '\x1f';
        for (const auto& pmid : t.seed_studies) key += pmid + ',';
        by_inputs[key].push_back(t.id);
    }

    auto emit = [&](std::map<std::string, std::vector<std::string>>& grouping,
                    MatchKind kind) {
        for (auto& [key, ids] : grouping) {
            if (ids.size() < 2) continue;
            DuplicateGroup g;
            g.topic_ids = sorted_ids(ids);
            g.kind = kind;
            if (kind == MatchKind::SameQueryAndSeeds && g.topic_ids.size() == 2) {
                const Topic* a = set.find(g.topic_ids[0]);
                const Topic* b = set.find(g.topic_ids[1]);
                if (a && b) {
                    int overlap = static_cast<int>(std::count_if(
                        a->relevant.begin(), a->relevant.end(),
                        [&](const std::string& p) { return b->relevant.count(p) > 0; }));
                    g.relevant_overlap = overlap;
                }
            }
            report.groups.push_back(std::move(g));
        }
    };
    emit(by_title, MatchKind::SameTitle);
    emit(by_inputs, MatchKind::SameQueryAndSeeds);

    std::sort(report.groups.begin(), report.groups.end(),
              [](const DuplicateGroup& a, const DuplicateGroup& b) {
                  if (a.kind != b.kind) return a.kind < b.kind;
                  return id_less(a.topic_ids.front(), b.topic_ids.front());
              });

    UnionFind uf;
    for (const auto& t : set.topics) uf.find(t.id);
    for (const auto& g : report.groups)
        for (size_t i = 1; i < g.topic_ids.size(); ++i)
            uf.unite(g.topic_ids[0], g.topic_ids[i]);
    std::set<std::string> roots;
    for (const auto& t : set.topics) roots.insert(uf.find(t.id));
    report.unique_count = static_cast<int>(roots.size());
    return report;
}

std::set<std::string> DuplicateReport::peers_of(const std::string& id) const {
    std::set<std::string> peers;
    for (const auto& g : groups) {
        if (std::find(g.topic_ids.begin(), g.topic_ids.end(), id) == g.topic_ids.end())
            continue;
        for (const auto& other : g.topic_ids)
            if (other != id) peers.insert(other);
    }
    return peers;
}

std::string report_to_json(const DuplicateReport& report) {
    json doc;
    doc["unique_count"] = report.unique_count;
    doc["groups"] = json::array();
    for (const auto& g : report.groups) {
        json jg;
        jg["topic_ids"] = g.topic_ids;
        jg["match_kind"] = to_string(g.kind);
        if (g.relevant_overlap) jg["relevant_overlap"] = *g.relevant_overlap;
        doc["groups"].push_back(jg);
    }
    return doc.dump(2) + "\n";
}

std::string report_to_table(const DuplicateReport& report, const TopicSet& set) {
    std::ostringstream out;
    out << "duplicate groups: " << report.groups.size() << "\n";
    for (const auto& g : report.groups) {
        out << "  [" << to_string(g.kind) << "] {" << join(g.topic_ids, ", ") << "}";
        if (g.relevant_overlap)
            out << "  (shared relevant: " << *g.relevant_overlap << ")";
        const Topic* first = set.find(g.topic_ids.front());
        if (first && g.kind == MatchKind::SameTitle) out << "  \"" << first->title << "\"";
        out << "\n";
    }
    out << "topics: " << set.topics.size() << ", unique: " << report.unique_count << "\n";
    return out.str();
}

// ------------------------------------------------------------ persistence

void save_topics(const TopicSet& set, const std::string& path) {
    std::ostringstream out;
    for (const auto& t : set.topics) {
        json rec;
        rec["id"] = t.id;
        rec["title"] = t.title;
        rec["queries"] = t.queries;
        rec["relevant"] = t.relevant;
        rec["seed_studies"] = t.seed_studies;
        if (t.date_range) {
            rec["min_date"] = t.date_range->min.iso();
            rec["max_date"] = t.date_range->max.iso();
        }
        out << rec.dump() << "\n";
    }
    write_file_atomic(path, out.str());
}

LoadResult load_topics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open topic file: " + path);
    LoadResult result;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) {
            add_issue(result.issues, "", lineno, "malformed JSON line");
            continue;
        }
        Topic t;
        t.id = rec.value("id", "");
        t.title = rec.value("title", "");
        if (rec.contains("queries"))
            t.queries = rec["queries"].get<std::map<std::string, std::string>>();
        if (rec.contains("relevant"))
            t.relevant = rec["relevant"].get<std::set<std::string>>();
        if (rec.contains("seed_studies"))
            t.seed_studies = rec["seed_studies"].get<std::set<std::string>>();
        if (rec.contains("min_date") && rec.contains("max_date")) {
            auto lo = Date::parse(rec["min_date"].get<std::string>());
            auto hi = Date::parse(rec["max_date"].get<std::string>());
            if (lo && hi) t.date_range = DateRange{*lo, *hi};
        }
        result.set.topics.push_back(std::move(t));
    }
    return result;
}

} // namespace bqr::corpus
