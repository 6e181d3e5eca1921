#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "bqr/stats.hpp"
#include "bqr/util.hpp"
#include "support.hpp"

using namespace bqr;
using namespace bqr::stats;

namespace {

std::set<std::string> ids(int from, int count) {
    std::set<std::string> out;
    for (int i = 0; i < count; ++i) out.insert(std::to_string(from + i));
    return out;
}

} // namespace

TEST_CASE("metric arithmetic matches the published rounded pairs") {
    struct Row { long retrieved, hits; const char* p; const char* r; };
    // (retrieved, hits) against 34 relevant; expected values at 3 decimals
    const Row rows[] = {
        {198, 26, "0.131", "0.765"},
        {78, 12, "0.154", "0.353"},
        {370, 21, "0.057", "0.618"},
        {3, 0, "0.000", "0.000"},
    };
    for (const auto& row : rows) {
        CAPTURE(row.retrieved);
        TopicMetrics m = counts_metrics("43", row.retrieved, 34, row.hits);
        CHECK(format_fixed(m.precision, 3) == row.p);
        CHECK(format_fixed(m.recall, 3) == row.r);
    }
}

TEST_CASE("set_metrics reduces sets to counts") {
    auto relevant = ids(100, 34);
    std::set<std::string> retrieved = ids(100, 26);   // 26 hits
    for (auto& extra : ids(9000, 172)) retrieved.insert(extra);
    TopicMetrics m = set_metrics("43", retrieved, relevant);
    CHECK(m.retrieved_count == 198);
    CHECK(m.hit_count == 26);
    CHECK(m.relevant_count == 34);
    CHECK(format_fixed(m.precision, 3) == "0.131");
    CHECK(format_fixed(m.recall, 3) == "0.765");
}

TEST_CASE("identity case scores 1 everywhere") {
    auto both = ids(5, 12);
    TopicMetrics m = set_metrics("t", both, both);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.f3 == 1.0);
}

TEST_CASE("empty retrieved set scores zero, empty relevant set is an error") {
    TopicMetrics m = set_metrics("t", {}, ids(1, 5));
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK_THROWS_AS(set_metrics("t", ids(1, 3), {}), Error);
}

TEST_CASE("f1 is zero exactly when hits are zero") {
    CHECK(counts_metrics("t", 10, 5, 0).f1 == 0.0);
    CHECK(counts_metrics("t", 10, 5, 1).f1 > 0.0);
}

TEST_CASE("aggregate mean and sample sd") {
    TopicMetrics a = counts_metrics("a", 10, 10, 0);   // all zeros
    TopicMetrics b = counts_metrics("b", 10, 10, 10);  // all ones
    auto agg = aggregate(std::vector<TopicMetrics>{a, b}, "k");
    CHECK(agg.n == 2);
    CHECK(agg.precision.mean == doctest::Approx(0.5));
    CHECK(agg.precision.sd == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
    CHECK(format_mean_sd(agg.precision) == "0.500 ± 0.707");

    auto single = aggregate(std::vector<TopicMetrics>{a}, "k");
    CHECK(single.precision.mean == 0.0);
    CHECK(single.precision.sd == 0.0);

    auto flipped = aggregate(std::vector<TopicMetrics>{b, a}, "k");
    CHECK(flipped.precision.mean == agg.precision.mean);
    CHECK(flipped.precision.sd == agg.precision.sd);

    CHECK_THROWS_AS(aggregate(std::vector<TopicMetrics>{}, "k"), Error);
}

TEST_CASE("t-test hand cases") {
    std::vector<double> samples = {0.1, 0.2, 0.3};
    TTestResult zero = one_sample_t_test(samples, 0.2);
    CHECK(zero.t_statistic == doctest::Approx(0.0));
    CHECK(zero.p_value == doctest::Approx(1.0));
    CHECK_FALSE(zero.significant_at_05);

    TTestResult r = one_sample_t_test(samples, 0.1);
    CHECK(r.t_statistic == doctest::Approx(1.7320508).epsilon(1e-6));
    CHECK(r.df == 2);
    CHECK(r.p_value == doctest::Approx(0.2254033).epsilon(1e-6));
    CHECK_FALSE(r.significant_at_05);

    CHECK_THROWS_AS(one_sample_t_test(std::vector<double>{0.5}, 0.1), Error);

    std::vector<double> flat = {0.2, 0.2, 0.2};
    TTestResult conv = one_sample_t_test(flat, 0.2);
    CHECK(conv.t_statistic == 0.0);
    CHECK(conv.p_value == 1.0);
    TTestResult inf = one_sample_t_test(flat, 0.1);
    CHECK(std::isinf(inf.t_statistic));
    CHECK(inf.p_value == 0.0);
}

TEST_CASE("t-test matches the frozen reference implementation within 1e-6") {
    auto body = read_file(fixture_path("stats_ttest_cases.json"));
    auto doc = nlohmann::json::parse(body);
    int checked = 0;
    for (const auto& c : doc["cases"]) {
        std::vector<double> samples = c["samples"].get<std::vector<double>>();
        double mu0 = c["mu0"].get<double>();
        TTestResult r = one_sample_t_test(samples, mu0);
        CHECK(std::fabs(r.t_statistic - c["t"].get<double>()) < 1e-6);
        CHECK(std::fabs(r.p_value - c["p"].get<double>()) < 1e-6);
        CHECK(r.df == c["df"].get<int>());
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("t-test antisymmetry") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> samples;
        double mu0 = dist(rng);
        for (int j = 0; j < 8; ++j) samples.push_back(dist(rng));
        TTestResult fwd = one_sample_t_test(samples, mu0);
        std::vector<double> mirrored;
        for (double v : samples) mirrored.push_back(2 * mu0 - v);
        TTestResult bwd = one_sample_t_test(mirrored, mu0);
        CHECK(bwd.t_statistic == doctest::Approx(-fwd.t_statistic).epsilon(1e-9));
        CHECK(bwd.p_value == doctest::Approx(fwd.p_value).epsilon(1e-9));
    }
}

TEST_CASE("f-beta ordering and bounds over random precision/recall") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> dist(1e-9, 1.0);
    int violations = 0;
    for (int i = 0; i < 100000; ++i) {
        double p = dist(rng), r = dist(rng);
        double f1 = f_beta(p, r, 1.0);
        double f3 = f_beta(p, r, 3.0);
        if (r > p && !(f3 > f1)) ++violations;
        if (p > r && !(f3 < f1)) ++violations;
        if (!(std::min(p, r) <= f1 + 1e-12 && f1 <= std::max(p, r) + 1e-12)) ++violations;
        if (!(f1 >= 0.0 && f1 <= 1.0 && f3 >= 0.0 && f3 <= 1.0)) ++violations;
    }
    CHECK(violations == 0);
    double p = 0.37;
    CHECK(f_beta(p, p, 3.0) == doctest::Approx(f_beta(p, p, 1.0)).epsilon(1e-12));
}

TEST_CASE("distribution summary order statistics") {
    std::vector<double> vals = {0.1, 0.2, 0.3, 0.4};
    DistributionSummary s = summarize(vals);
    CHECK(s.min == doctest::Approx(0.1));
    CHECK(s.median == doctest::Approx(0.25));
    CHECK(s.max == doctest::Approx(0.4));

    std::vector<double> shuffled = {0.3, 0.1, 0.4, 0.2};
    DistributionSummary s2 = summarize(shuffled);
    CHECK(s2.median == doctest::Approx(s.median));
    CHECK(s2.q1 == doctest::Approx(s.q1));
    CHECK(s2.q3 == doctest::Approx(s.q3));

    std::vector<double> one = {0.7};
    DistributionSummary s3 = summarize(one);
    CHECK(s3.min == 0.7);
    CHECK(s3.q1 == 0.7);
    CHECK(s3.median == 0.7);
    CHECK(s3.q3 == 0.7);
    CHECK(s3.max == 0.7);
}

TEST_CASE("variability summary across per-seed aggregates") {
    std::vector<AggregateMetrics> seeds;
    for (double m : {0.1, 0.2, 0.3, 0.4}) {
        AggregateMetrics a;
        a.key = "seed";
        a.n = 5;
        a.recall.mean = m;
        seeds.push_back(a);
    }
    auto summary = variability_summary(seeds);
    CHECK(summary["recall"].median == doctest::Approx(0.25));
    CHECK(summary["recall"].min == doctest::Approx(0.1));
    CHECK(summary["recall"].max == doctest::Approx(0.4));
}
