#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "bqr/corpus.hpp"
#include "bqr/util.hpp"
#include "support.hpp"

using namespace bqr;
using namespace bqr::corpus;

namespace {

const char* kThyroidTitle =
    "Prevalence of Differentiated Thyroid Cancer in Autopsy Studies Over Six Decades: "
    "A Meta-Analysis";

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("bqr_corpus_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name, const std::string& content) const {
        auto p = path / name;
        write_file_atomic(p.string(), content);
        return p.string();
    }
};

LoadResult load_seed_fixture() {
    return load_seed_collection(fixture_path("seed/collection.jsonl"));
}

const DuplicateGroup* group_with(const DuplicateReport& report,
                                 const std::vector<std::string>& ids, MatchKind kind) {
    for (const auto& g : report.groups)
        if (g.kind == kind && g.topic_ids == ids) return &g;
    return nullptr;
}

} // namespace

TEST_CASE("seed collection loads 40 topics with the known shared title") {
    LoadResult r = load_seed_fixture();
    CHECK(r.set.source == Source::Seed);
    CHECK(r.set.size() == 40);

    const Topic* t43 = r.set.find("43");
    const Topic* t96 = r.set.find("96");
    REQUIRE(t43);
    REQUIRE(t96);
    CHECK(t43->title == kThyroidTitle);
    CHECK(t96->title == kThyroidTitle);
    CHECK(t43->relevant.size() == 34);
    CHECK(t43->relevant == t96->relevant);
    REQUIRE(t43->query("original"));
    CHECK(t43->query("original")->rfind("((\"Thyroid Neoplasms\"[MeSH]", 0) == 0);
    REQUIRE(t43->date_range.has_value());
    CHECK(t43->date_range->min.iso() == "1940-01-01");

    // topic 8 carries one duplicated included study; load keeps going
    bool noted = std::any_of(r.issues.begin(), r.issues.end(), [](const LoadIssue& i) {
        return i.topic_id == "8" && i.message.find("duplicated study") != std::string::npos;
    });
    CHECK(noted);
}

TEST_CASE("empty seed file loads zero topics") {
    TempDir dir;
    LoadResult r = load_seed_collection(dir.file("empty.jsonl", ""));
    CHECK(r.set.size() == 0);
    CHECK(r.issues.empty());
}

TEST_CASE("synthetic two-line fixture round-trips exactly") {
    TempDir dir;
    std::string jsonl =
        R"({"id":"a1","title":"First Review","query":"x[tiab]","edited-search":"y[tiab]",)"
        R"("included_studies":["123","456"],"seed_studies":["123"],)"
        R"("min_date":"2001-02-03","max_date":"2004-05-06"})"
        "\n"
        R"({"id":"a2","title":"Second Review","query":"z[tiab]","edited-search":"w[tiab]",)"
        R"("included_studies":["789"],"seed_studies":[],)"
        R"("min_date":"1999-01-01","max_date":"1999-12-31"})"
        "\n";
    LoadResult r = load_seed_collection(dir.file("two.jsonl", jsonl));
    REQUIRE(r.set.size() == 2);
    CHECK(r.issues.empty());
    const Topic& a = r.set.topics[0];
    CHECK(a.id == "a1");
    CHECK(a.title == "First Review");
    CHECK(*a.query("original") == "x[tiab]");
    CHECK(*a.query("edited") == "y[tiab]");
    CHECK(a.relevant == std::set<std::string>{"123", "456"});
    CHECK(a.seed_studies == std::set<std::string>{"123"});
    CHECK(a.date_range->min.iso() == "2001-02-03");
    CHECK(a.date_range->max.iso() == "2004-05-06");

    // canonical save -> load is identity
    auto out = dir.file("roundtrip.jsonl", "");
    save_topics(r.set, out);
    LoadResult again = load_topics(out);
    REQUIRE(again.set.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        const Topic& x = r.set.topics[i];
        const Topic& y = again.set.topics[i];
        CHECK(x.id == y.id);
        CHECK(x.title == y.title);
        CHECK(x.queries == y.queries);
        CHECK(x.relevant == y.relevant);
        CHECK(x.seed_studies == y.seed_studies);
        CHECK(x.date_range == y.date_range);
    }
}

TEST_CASE("loader collects per-line problems instead of failing") {
    TempDir dir;
    std::string jsonl =
        "{not json\n"
        R"({"title":"No Id","query":"a"})"
        "\n"
        R"({"id":"ok","title":"Fine","query":"a[tiab]","included_studies":["12","x9"]})"
        "\n"
        R"({"id":"ok","title":"Repeat","query":"b"})"
        "\n";
    LoadResult r = load_seed_collection(dir.file("messy.jsonl", jsonl));
    CHECK(r.set.size() == 1);
    REQUIRE(r.issues.size() >= 3);
    CHECK(r.issues[0].line == 1);
    CHECK(r.issues[0].message == "malformed JSON line");
    bool bad_pmid = std::any_of(r.issues.begin(), r.issues.end(), [](const LoadIssue& i) {
        return i.message.find("non-numeric PMID") != std::string::npos;
    });
    CHECK(bad_pmid);
    CHECK_THROWS_AS(load_seed_collection(dir.path.string() + "/absent.jsonl"), Error);

    // wrong field types are collected too, never fatal
    LoadResult typed = load_seed_collection(
        dir.file("typed.jsonl", R"({"id":"x","title":42,"query":"a"})"
                                "\n"
                                R"({"id":"y","title":"Fine","query":"b[tiab]"})"
                                "\n"));
    CHECK(typed.set.size() == 1);
    CHECK(typed.set.topics[0].id == "y");
    bool type_issue = std::any_of(typed.issues.begin(), typed.issues.end(),
                                  [](const LoadIssue& i) {
                                      return i.message.find("malformed field") !=
                                             std::string::npos;
                                  });
    CHECK(type_issue);
}

TEST_CASE("duplicate audit over the seed collection") {
    LoadResult r = load_seed_fixture();
    DuplicateReport report = find_duplicates(r.set);

    CHECK(report.unique_count == 34);
    CHECK(group_with(report, {"42", "51", "52", "53"}, MatchKind::SameTitle));
    CHECK(group_with(report, {"7", "67"}, MatchKind::SameTitle));
    CHECK(group_with(report, {"43", "96"}, MatchKind::SameTitle));
    const DuplicateGroup* pair = group_with(report, {"8", "112"}, MatchKind::SameQueryAndSeeds);
    REQUIRE(pair);
    REQUIRE(pair->relevant_overlap.has_value());
    CHECK(*pair->relevant_overlap == 4);

    CHECK(report.peers_of("43") == std::set<std::string>{"96"});
    CHECK(report.peers_of("8") == std::set<std::string>{"112"});
    CHECK(report.peers_of("1").empty());
}

TEST_CASE("duplicate audit is permutation invariant") {
    LoadResult r = load_seed_fixture();
    DuplicateReport before = find_duplicates(r.set);

    std::mt19937 rng(17);
    std::shuffle(r.set.topics.begin(), r.set.topics.end(), rng);
    DuplicateReport after = find_duplicates(r.set);

    CHECK(after.unique_count == before.unique_count);
    REQUIRE(after.groups.size() == before.groups.size());
    for (size_t i = 0; i < after.groups.size(); ++i) {
        CHECK(after.groups[i].topic_ids == before.groups[i].topic_ids);
        CHECK(after.groups[i].kind == before.groups[i].kind);
    }
}

TEST_CASE("distinct topics produce an empty report") {
    TopicSet set;
    for (int i = 0; i < 5; ++i) {
        Topic t;
        t.id = std::to_string(i);
        t.title = "Title " + std::to_string(i);
        t.queries["original"] = "q" + std::to_string(i);
        set.topics.push_back(t);
    }
    DuplicateReport report = find_duplicates(set);
    CHECK(report.groups.empty());
    CHECK(report.unique_count == 5);
}

TEST_CASE("title matching folds case and whitespace only") {
    TopicSet set;
    Topic a;
    a.id = "x";
    a.title = "Thyroid  Cancer \t Review";
    Topic b;
    b.id = "y";
    b.title = "thyroid cancer review";
    set.topics = {a, b};
    DuplicateReport report = find_duplicates(set);
    REQUIRE(report.groups.size() == 1);
    CHECK(report.unique_count == 1);
}

TEST_CASE("clef collections merge to 80 topics and filter to 72") {
    LoadResult y2017 = load_clef_collection(fixture_path("clef/2017/topics"),
                                            fixture_path("clef/2017/qrels.txt"));
    LoadResult y2018 = load_clef_collection(fixture_path("clef/2018/topics"),
                                            fixture_path("clef/2018/qrels.txt"));
    CHECK(y2017.set.source == Source::ClefTar);
    CHECK(y2017.set.size() == 42);
    CHECK(y2018.set.size() == 72);

    TopicSet merged = merge(y2017.set, y2018.set);
    CHECK(merged.size() == 80);

    TopicSet filtered = remove_topics(merged, clef_unreliable_2017_ids());
    CHECK(filtered.size() == 72);
    for (const auto& id : clef_unreliable_2017_ids()) CHECK(filtered.find(id) == nullptr);

    const Topic* hqe = filtered.find("CD010438");
    REQUIRE(hqe);
    CHECK_FALSE(hqe->title.empty());
    REQUIRE(hqe->query("original"));
    CHECK(hqe->query("original")->find('\n') != std::string::npos);  // multi-line verbatim
    // relevance 0 rows stay out of the relevant set
    CHECK(hqe->relevant.count("12345678") == 0);
    CHECK(hqe->relevant.size() > 0);
}

TEST_CASE("clef loader reports bad qrels rows and unknown topics") {
    TempDir dir;
    std::filesystem::create_directories(dir.path / "topics");
    write_file_atomic((dir.path / "topics" / "CD000001").string(),
                      "Topic: CD000001\nTitle: A\nQuery:\nline one\nline two\n");
    write_file_atomic((dir.path / "topics" / "broken").string(), "Title: no id\n");
    auto qrels = dir.file("qrels.txt",
                          "CD000001 0 11111111 1\n"
                          "CD000001 0 22222222 abc\n"
                          "CD999999 0 33333333 1\n");
    LoadResult r = load_clef_collection((dir.path / "topics").string(), qrels);
    REQUIRE(r.set.size() == 1);
    CHECK(r.set.topics[0].relevant == std::set<std::string>{"11111111"});
    CHECK(*r.set.topics[0].query("original") == "line one\nline two");
    CHECK(r.issues.size() == 3);  // broken header, bad relevance, unknown topic
}

TEST_CASE("unique_count bounds") {
    LoadResult r = load_seed_fixture();
    DuplicateReport report = find_duplicates(r.set);
    CHECK(report.unique_count <= static_cast<int>(r.set.size()));
    CHECK((report.groups.empty() ==
           (report.unique_count == static_cast<int>(r.set.size()))));
}
