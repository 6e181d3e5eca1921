#include "bqr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "bqr/util.hpp"

namespace bqr::stats {

double f_beta(double precision, double recall, double beta) {
    double b2 = beta * beta;
    double denom = b2 * precision + recall;
    return denom > 0 ? (1 + b2) * precision * recall / denom : 0.0;
}

TopicMetrics counts_metrics(const std::string& topic_id, long retrieved, long relevant,
                            long hits, double beta) {
    if (relevant <= 0) throw Error("topic " + topic_id + " has no relevance judgments");
    if (hits > retrieved || hits > relevant)
        throw Error("topic " + topic_id + ": hit count exceeds set sizes");
    TopicMetrics m;
    m.topic_id = topic_id;
    m.retrieved_count = retrieved;
    m.relevant_count = relevant;
    m.hit_count = hits;
    m.precision = retrieved > 0 ? static_cast<double>(hits) / retrieved : 0.0;
    m.recall = static_cast<double>(hits) / relevant;
    m.f1 = f_beta(m.precision, m.recall, 1.0);
    m.f3 = f_beta(m.precision, m.recall, beta);
    return m;
}

TopicMetrics set_metrics(const std::string& topic_id,
                         const std::set<std::string>& retrieved,
                         const std::set<std::string>& relevant, double beta) {
    long hits = static_cast<long>(std::count_if(
        retrieved.begin(), retrieved.end(),
        [&](const std::string& pmid) { return relevant.count(pmid) > 0; }));
    return counts_metrics(topic_id, static_cast<long>(retrieved.size()),
                          static_cast<long>(relevant.size()), hits, beta);
}

namespace {

MeanSd mean_sd(const std::vector<double>& values) {
    MeanSd out;
    size_t n = values.size();
    if (n == 0) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(n);
    if (n >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return out;
}

} // namespace

AggregateMetrics aggregate(std::span<const TopicMetrics> metrics, const std::string& key) {
    if (metrics.empty()) throw Error("aggregate over empty metric list");
    std::vector<double> p, r, f1, f3;
    for (const auto& m : metrics) {
        p.push_back(m.precision);
        r.push_back(m.recall);
        f1.push_back(m.f1);
        f3.push_back(m.f3);
    }
    AggregateMetrics out;
    out.key = key;
    out.n = static_cast<int>(metrics.size());
    out.precision = mean_sd(p);
    out.recall = mean_sd(r);
    out.f1 = mean_sd(f1);
    out.f3 = mean_sd(f3);
    return out;
}

std::string format_mean_sd(const MeanSd& value) {
    return format_fixed(value.mean, 3) + " ± " + format_fixed(value.sd, 3);
}

TTestResult one_sample_t_test(std::span<const double> samples, double mu0) {
    size_t n = samples.size();
    if (n < 2) throw Error("one_sample_t_test needs at least 2 samples");
    double sum = 0.0;
    for (double v : samples) sum += v;
    double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    bool constant = std::all_of(samples.begin(), samples.end(),
                                [&](double v) { return v == samples[0]; });

    TTestResult res;
    res.df = static_cast<int>(n) - 1;
    res.mu0 = mu0;
    if (constant || sd == 0.0) {
        if (samples[0] == mu0) {
            res.t_statistic = 0.0;
            res.p_value = 1.0;
        } else {
            res.t_statistic =
                std::copysign(std::numeric_limits<double>::infinity(), samples[0] - mu0);
            res.p_value = 0.0;
        }
    } else {
        res.t_statistic = (mean - mu0) / (sd / std::sqrt(static_cast<double>(n)));
        boost::math::students_t dist(static_cast<double>(res.df));
        res.p_value =
            2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(res.t_statistic)));
    }
    res.significant_at_05 = res.p_value < 0.05;
    return res;
}

DistributionSummary summarize(std::span<const double> values) {
    if (values.empty()) throw Error("summarize over empty value list");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(sorted.size() - 1);
        size_t lo = static_cast<size_t>(pos);
        size_t hi = std::min(lo + 1, sorted.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
    };
    DistributionSummary s;
    s.min = sorted.front();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.max = sorted.back();
    return s;
}

std::map<std::string, DistributionSummary>
variability_summary(std::span<const AggregateMetrics> per_seed) {
    if (per_seed.empty()) throw Error("variability_summary needs at least one seed");
    std::vector<double> p, r, f1, f3;
    for (const auto& a : per_seed) {
        p.push_back(a.precision.mean);
        r.push_back(a.recall.mean);
        f1.push_back(a.f1.mean);
        f3.push_back(a.f3.mean);
    }
    return {
        {"precision", summarize(p)},
        {"recall", summarize(r)},
        {"f1", summarize(f1)},
        {"f3", summarize(f3)},
    };
}

} // namespace bqr::stats
