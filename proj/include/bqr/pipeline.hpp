#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bqr/corpus.hpp"
#include "bqr/gateway.hpp"
#include "bqr/retrieval.hpp"
#include "bqr/selector.hpp"
#include "bqr/stats.hpp"

namespace bqr::pipeline {

// ------------------------------------------------------------ configuration

struct DatasetConfig {
    std::string kind = "seed";  // "seed" | "clef"
    std::string seed_path;
    corpus::SeedFieldMap field_map;
    std::vector<std::string> clef_topic_dirs;
    std::vector<std::string> clef_qrels;
    bool clef_remove_unreliable = true;
    std::vector<std::string> topics;  // optional id filter
};

struct LlmConfig {
    std::string backend = "mock";  // "live" | "replay" | "mock"
    std::string script_path;       // mock rules
    std::string cache_dir;         // replay source / live recording
};

struct RetrievalConfig {
    std::string backend = "offline";  // "live" | "replay" | "offline"
    std::string cache_dir;
    std::string corpus_path;  // offline document corpus
    std::string base_url = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
    int page_size = 10000;
    long id_cap = 100000;
    std::string datetype = "pdat";
};

struct ExampleConfig {
    selector::HqeConfig hqe;
    std::string re_backend = "lexical";  // "lexical" | "remote"
    std::string embedding_endpoint;
    bool exclude_duplicates = true;
};

struct RunConfig {
    DatasetConfig dataset;
    std::vector<gateway::ModelProfile> models;
    std::vector<gateway::PromptId> prompts;
    LlmConfig llm;
    RetrievalConfig retrieval;
    ExampleConfig example;
    std::string templates_dir = "assets/prompts";
    int max_retries = 3;
    std::string output_dir;
    std::string baseline_role = "original";
    bool score_failures_as_zero = false;
    int workers = 1;
};

RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::string& path);

// -------------------------------------------------------------- experiment

struct ErrorTaxonomy {
    int transport = 0;
    int malformed_json = 0;
    int no_query_found = 0;
    int conversation_breakdown = 0;
    /// Cells whose final output failed the parenthesis balance scan. Counted
    /// alongside, not instead of, the classes above.
    int unbalanced_parentheses = 0;
};

struct CellResult {
    gateway::GenerationRecord generation;
    std::optional<long> retrieved_total;
    std::optional<long> retrieved_unique;
    bool truncated = false;
    std::optional<std::string> retrieval_error;
    std::optional<stats::TopicMetrics> metrics;  // absent for failures and unjudged topics
};

struct RunReport {
    std::vector<CellResult> cells;
    int successes = 0;       // generation outcomes; see retrieval_errors
    int failures = 0;
    int retrieval_errors = 0;
    ErrorTaxonomy taxonomy;
    std::vector<stats::AggregateMetrics> by_model_prompt;       // pooled topics x seeds
    std::vector<stats::AggregateMetrics> by_model_prompt_seed;  // variability input
    /// pooled per-cell metric samples behind by_model_prompt, for the
    /// significance comparison against previously reported means
    std::map<std::string, std::vector<stats::TopicMetrics>> pooled_samples;
    std::vector<corpus::LoadIssue> dataset_issues;
    int judged_topics = 0;
    int unjudged_topics = 0;
};

/// Full pipeline over (topics x models x prompts x seeds): render/generate,
/// validate, retrieve, score. Every cell is persisted to
/// <output_dir>/records.jsonl before aggregation; reports and plot-data CSVs
/// land next to it. Configuration errors throw before any work; per-cell
/// errors never abort the run.
RunReport run_experiment(const RunConfig& config);

/// Cells only, no retrieval or scoring; still persists records.jsonl.
RunReport run_generation(const RunConfig& config);

// --------------------------------------------------------------- baselines

struct SkippedTopic {
    std::string topic_id;
    std::string reason;
};

struct ReferenceScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Previously reported mean scores used for the significance comparison.
std::optional<ReferenceScore> reported_baseline(const std::string& dataset_kind,
                                                const std::string& role);
std::optional<ReferenceScore> reported_prompt_score(const std::string& dataset_kind,
                                                    gateway::PromptId prompt);

struct BaselineReport {
    std::string role;
    std::vector<stats::TopicMetrics> per_topic;
    std::vector<SkippedTopic> skipped;
    std::optional<stats::AggregateMetrics> aggregate;
    std::optional<ReferenceScore> reference;
    std::map<std::string, stats::TTestResult> t_vs_reference;  // metric -> test
};

/// Run each topic's stored query through retrieval and scoring for the
/// requested roles. Topics whose query fails PubMed-syntax validation are
/// reported and skipped.
std::vector<BaselineReport> evaluate_baselines(const RunConfig& config,
                                               const std::vector<std::string>& roles);

std::string baseline_report_text(const BaselineReport& report);
void write_baseline_csv(const std::vector<BaselineReport>& reports, const std::string& path);

// ---------------------------------------------------------------- analysis

struct AnalysisRow {
    std::string model;
    std::string prompt;
    int cells = 0;
    int generated = 0;  // cells with a final query
    double mean_terms = 0.0;
    std::map<std::string, int> field_usage;
    double pct_errors = 0.0;
    double pct_unbalanced = 0.0;
};

struct AnalysisReport {
    std::vector<AnalysisRow> rows;
    std::optional<double> expert_mean_terms;  // over the dataset's baseline queries
};

/// Structural and error statistics over a persisted records file.
AnalysisReport analyze_run(const std::string& records_path,
                           const corpus::TopicSet* expert_reference,
                           const std::string& baseline_role = "original");

void write_analysis_csvs(const AnalysisReport& report, const std::string& out_dir);

// ------------------------------------------------------------------ output

void write_run_outputs(const RunReport& report, const RunConfig& config);

/// Load the configured collection; the optional topic filter is applied.
corpus::LoadResult load_dataset(const DatasetConfig& config);
/// Same load without the topic filter (the full example pool).
corpus::LoadResult load_dataset_full(const DatasetConfig& config);

} // namespace bqr::pipeline
