#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace bqr::stats {

/// Set-retrieval effectiveness for one topic.
struct TopicMetrics {
    std::string topic_id;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double f3 = 0.0;
    long retrieved_count = 0;
    long relevant_count = 0;
    long hit_count = 0;
};

/// Precision is 0 when nothing was retrieved; F-scores are 0 when their
/// denominator vanishes. Throws when `relevant` is empty — topics without
/// judgments are excluded upstream, never scored.
TopicMetrics set_metrics(const std::string& topic_id,
                         const std::set<std::string>& retrieved,
                         const std::set<std::string>& relevant,
                         double beta = 3.0);

/// Same arithmetic from pre-reduced counts.
TopicMetrics counts_metrics(const std::string& topic_id, long retrieved, long relevant,
                            long hits, double beta = 3.0);

/// F-beta from precision and recall; 0 when the denominator vanishes.
double f_beta(double precision, double recall, double beta);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;  // sample (n-1); 0 when n == 1
};

struct AggregateMetrics {
    std::string key;  // grouping label, e.g. "model/prompt" or "model/prompt/seed"
    int n = 0;
    MeanSd precision, recall, f1, f3;
};

AggregateMetrics aggregate(std::span<const TopicMetrics> metrics, const std::string& key);

/// "0.131 ± 0.042" at three decimals, as the summary tables print it.
std::string format_mean_sd(const MeanSd& value);

struct TTestResult {
    double t_statistic = 0.0;
    double p_value = 1.0;
    int df = 0;
    double mu0 = 0.0;
    bool significant_at_05 = false;
};

/// Two-sided one-sample t-test. Requires n >= 2. All samples equal to mu0
/// returns t = 0, p = 1; zero variance away from mu0 returns infinite t, p = 0.
TTestResult one_sample_t_test(std::span<const double> samples, double mu0);

struct DistributionSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Order statistics over per-seed values (linear-interpolation quantiles).
DistributionSummary summarize(std::span<const double> values);

/// Per-metric spread across per-seed aggregates, for the variability plots.
std::map<std::string, DistributionSummary>
variability_summary(std::span<const AggregateMetrics> per_seed);

} // namespace bqr::stats
