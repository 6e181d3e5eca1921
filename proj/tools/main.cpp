#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bqr/corpus.hpp"
#include "bqr/pipeline.hpp"
#include "bqr/query.hpp"
#include "bqr/retrieval.hpp"
#include "bqr/util.hpp"

namespace {

using namespace bqr;

struct AuditOptions {
    std::string seed_path;
    std::vector<std::string> field_overrides;
    std::vector<std::string> clef_topic_dirs;
    std::vector<std::string> clef_qrels;
    bool keep_unreliable = false;
    std::string json_out;
};

corpus::SeedFieldMap field_map_from(const std::vector<std::string>& overrides) {
    corpus::SeedFieldMap fields;
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--field expects canonical=source: " + kv);
        std::string canonical = kv.substr(0, eq), source = kv.substr(eq + 1);
        if (canonical == "id") fields.id = source;
        else if (canonical == "title") fields.title = source;
        else if (canonical == "original_query") fields.original_query = source;
        else if (canonical == "edited_query") fields.edited_query = source;
        else if (canonical == "relevant") fields.relevant = source;
        else if (canonical == "seed_studies") fields.seed_studies = source;
        else if (canonical == "min_date") fields.min_date = source;
        else if (canonical == "max_date") fields.max_date = source;
        else throw Error("unknown canonical field: " + canonical);
    }
    return fields;
}

int run_audit(const AuditOptions& options) {
    corpus::LoadResult loaded;
    if (!options.seed_path.empty()) {
        loaded = corpus::load_seed_collection(options.seed_path,
                                              field_map_from(options.field_overrides));
        std::cout << "seed collection: " << loaded.set.size() << " topics\n";
    } else {
        if (options.clef_topic_dirs.empty() ||
            options.clef_topic_dirs.size() != options.clef_qrels.size())
            throw Error("load-audit needs --seed or matching --clef-topics/--clef-qrels");
        bool first = true;
        for (size_t i = 0; i < options.clef_topic_dirs.size(); ++i) {
            auto year = corpus::load_clef_collection(options.clef_topic_dirs[i],
                                                     options.clef_qrels[i]);
            std::cout << options.clef_topic_dirs[i] << ": " << year.set.size()
                      << " topics\n";
            if (first) {
                loaded.set = std::move(year.set);
                first = false;
            } else {
                loaded.set = corpus::merge(loaded.set, year.set);
            }
            loaded.issues.insert(loaded.issues.end(), year.issues.begin(),
                                 year.issues.end());
        }
        std::cout << "merged: " << loaded.set.size() << " topics\n";
        if (!options.keep_unreliable) {
            loaded.set =
                corpus::remove_topics(loaded.set, corpus::clef_unreliable_2017_ids());
            std::cout << "after removing withdrawn 2017 topics: " << loaded.set.size()
                      << " topics\n";
        }
    }

    corpus::DuplicateReport report = corpus::find_duplicates(loaded.set);
    std::cout << corpus::report_to_table(report, loaded.set);
    for (const auto& issue : loaded.issues)
        std::cout << "note: topic '" << issue.topic_id << "' line " << issue.line << ": "
                  << issue.message << "\n";
    if (!options.json_out.empty())
        write_file_atomic(options.json_out, corpus::report_to_json(report));
    return 0;
}

int run_retrieve(const std::string& query_text, pipeline::RetrievalConfig retrieval,
                 const std::string& mindate, const std::string& maxdate, bool ids) {
    std::optional<DateRange> range;
    if (!mindate.empty() || !maxdate.empty()) {
        auto lo = Date::parse(mindate);
        auto hi = Date::parse(maxdate);
        if (!lo || !hi) throw Error("--mindate/--maxdate expect YYYY-MM-DD");
        range = DateRange{*lo, *hi};
    }

    auto validation = query::validate(query_text);
    if (!validation.parse_ok)
        throw Error("query fails validation: " + validation.message.value_or("parse error"));

    if (retrieval.backend == "offline") {
        auto corpus = retrieval::load_corpus(retrieval.corpus_path);
        auto parsed = query::parse(query_text);
        auto pmids = retrieval::offline_search(*parsed.node, corpus, range);
        std::cout << "total: " << pmids.size() << "\n";
        if (ids)
            for (const auto& pmid : pmids) std::cout << pmid << "\n";
        return 0;
    }

    retrieval::EsearchConfig config;
    config.backend = retrieval.backend == "live" ? retrieval::Backend::Live
                                                 : retrieval::Backend::Replay;
    config.base_url = retrieval.base_url;
    config.cache_dir = retrieval.cache_dir;
    config.page_size = retrieval.page_size;
    config.id_cap = retrieval.id_cap;
    config.datetype = retrieval.datetype;
    retrieval::EsearchClient client(config);
    auto result = client.search(query_text, range);
    std::cout << "total: " << result.total << (result.truncated ? " (truncated)" : "")
              << "\n";
    if (ids)
        for (const auto& pmid : result.pmids) std::cout << pmid << "\n";
    return 0;
}

void print_run_summary(const pipeline::RunReport& report,
                       const pipeline::RunConfig& config) {
    std::cout << "cells: " << report.cells.size() << " (successes " << report.successes
              << ", failures " << report.failures << ")\n";
    if (report.retrieval_errors > 0)
        std::cout << "warning: " << report.retrieval_errors
                  << " cells failed at retrieval (see records.jsonl)\n";
    std::cout << "errors: transport " << report.taxonomy.transport << ", malformed_json "
              << report.taxonomy.malformed_json << ", no_query_found "
              << report.taxonomy.no_query_found << ", conversation_breakdown "
              << report.taxonomy.conversation_breakdown << ", unbalanced_parentheses "
              << report.taxonomy.unbalanced_parentheses << "\n";
    for (const auto& agg : report.by_model_prompt)
        std::cout << agg.key << ": precision " << stats::format_mean_sd(agg.precision)
                  << ", recall " << stats::format_mean_sd(agg.recall) << ", f1 "
                  << stats::format_mean_sd(agg.f1) << " (n=" << agg.n << ")\n";
    std::cout << "outputs in " << config.output_dir << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Boolean query generation and retrieval evaluation harness"};
    app.require_subcommand(1);

    // load-audit
    auto* audit = app.add_subcommand("load-audit",
                                     "Load a collection and report duplicate topics");
    AuditOptions audit_options;
    audit->add_option("--seed", audit_options.seed_path, "Seed collection JSONL");
    audit->add_option("--field", audit_options.field_overrides,
                      "Seed field mapping canonical=source (repeatable)");
    audit->add_option("--clef-topics", audit_options.clef_topic_dirs,
                      "CLEF topic directory (repeatable)");
    audit->add_option("--clef-qrels", audit_options.clef_qrels,
                      "CLEF qrels file (repeatable, pairs with --clef-topics)");
    audit->add_flag("--keep-unreliable", audit_options.keep_unreliable,
                    "Keep the withdrawn 2017 topics");
    audit->add_option("--json", audit_options.json_out, "Write the JSON report here");

    // retrieve
    auto* retrieve = app.add_subcommand("retrieve", "Run one query against a backend");
    std::string retrieve_query, retrieve_query_file, mindate, maxdate;
    bool print_ids = false;
    pipeline::RetrievalConfig retrieve_config;
    retrieve->add_option("--query", retrieve_query, "Query text");
    retrieve->add_option("--query-file", retrieve_query_file, "File with the query text");
    retrieve->add_option("--backend", retrieve_config.backend, "offline|replay|live")
        ->check(CLI::IsMember({"offline", "replay", "live"}));
    retrieve->add_option("--corpus", retrieve_config.corpus_path, "Offline corpus JSONL");
    retrieve->add_option("--cache", retrieve_config.cache_dir, "Replay cache directory");
    retrieve->add_option("--base-url", retrieve_config.base_url, "E-utilities base URL");
    retrieve->add_option("--mindate", mindate, "YYYY-MM-DD");
    retrieve->add_option("--maxdate", maxdate, "YYYY-MM-DD");
    retrieve->add_flag("--ids", print_ids, "Print the PMIDs, not just the total");

    // config-driven subcommands
    std::string config_path, records_path, output_override, role = "both";
    auto add_config = [&](CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--config", config_path, "Run configuration JSON");
        if (required) opt->required();
    };

    auto* baselines = app.add_subcommand("baselines",
                                         "Score the expert queries of the collection");
    add_config(baselines);
    baselines->add_option("--role", role, "original|edited|both")
        ->check(CLI::IsMember({"original", "edited", "both"}));
    std::string baselines_csv;
    baselines->add_option("--csv", baselines_csv, "Write per-topic metrics CSV here");

    // common config overrides shared by generate/run
    std::vector<std::string> topic_override;
    int workers_override = -1, retries_override = -1;
    bool zero_fill = false;
    auto add_overrides = [&](CLI::App* cmd) {
        cmd->add_option("--output", output_override, "Override the output directory");
        cmd->add_option("--topic", topic_override, "Limit to these topic ids (repeatable)");
        cmd->add_option("--workers", workers_override, "Worker thread count");
        cmd->add_option("--max-retries", retries_override, "Extra attempts per cell");
        cmd->add_flag("--score-failures-as-zero", zero_fill,
                      "Average failed cells as zero scores");
    };

    auto* generate = app.add_subcommand("generate",
                                        "Generate queries only (no retrieval/scoring)");
    add_config(generate);
    add_overrides(generate);

    auto* evaluate = app.add_subcommand("evaluate",
                                        "Retrieve and score stored generation records");
    add_config(evaluate);
    evaluate->add_option("--records", records_path, "records.jsonl from a run")->required();
    evaluate->add_option("--output", output_override, "Override the output directory");

    auto* analyze = app.add_subcommand("analyze",
                                       "Structural and error statistics over records");
    analyze->add_option("--records", records_path, "records.jsonl from a run")->required();
    add_config(analyze, /*required=*/false);
    std::string analyze_out = ".";
    analyze->add_option("--out-dir", analyze_out, "Where the analysis CSVs go");

    auto* run = app.add_subcommand("run", "Full pipeline: generate, retrieve, evaluate");
    add_config(run);
    add_overrides(run);

    auto* snapshot = app.add_subcommand(
        "snapshot-import", "Expand a response snapshot into a replay cache");
    std::string snapshot_path, snapshot_cache;
    int snapshot_page_size = 10000;
    snapshot->add_option("--snapshot", snapshot_path, "snapshot JSONL")->required();
    snapshot->add_option("--cache", snapshot_cache, "replay cache directory")->required();
    snapshot->add_option("--page-size", snapshot_page_size, "page size to simulate");

    CLI11_PARSE(app, argc, argv);

    try {
        if (audit->parsed()) return run_audit(audit_options);

        if (snapshot->parsed()) {
            retrieval::EsearchConfig ec;
            ec.backend = retrieval::Backend::Replay;
            ec.cache_dir = snapshot_cache;
            ec.page_size = snapshot_page_size;
            retrieval::import_snapshot(snapshot_path, ec);
            std::cout << "imported " << snapshot_path << " into " << snapshot_cache << "\n";
            return 0;
        }

        if (retrieve->parsed()) {
            if (retrieve_query.empty() && retrieve_query_file.empty())
                throw Error("retrieve needs --query or --query-file");
            std::string text = retrieve_query.empty()
                                   ? trim(read_file(retrieve_query_file))
                                   : retrieve_query;
            return run_retrieve(text, retrieve_config, mindate, maxdate, print_ids);
        }

        if (baselines->parsed()) {
            pipeline::RunConfig config = pipeline::load_config(config_path);
            std::vector<std::string> roles;
            if (role == "both") roles = {"original", "edited"};
            else roles = {role};
            auto reports = pipeline::evaluate_baselines(config, roles);
            for (const auto& report : reports)
                std::cout << pipeline::baseline_report_text(report);
            if (!baselines_csv.empty()) pipeline::write_baseline_csv(reports, baselines_csv);
            return 0;
        }

        if (generate->parsed() || run->parsed()) {
            pipeline::RunConfig config = pipeline::load_config(config_path);
            if (!output_override.empty()) config.output_dir = output_override;
            if (!topic_override.empty()) config.dataset.topics = topic_override;
            if (workers_override >= 1) config.workers = workers_override;
            if (retries_override >= 0) config.max_retries = retries_override;
            if (zero_fill) config.score_failures_as_zero = true;
            pipeline::RunReport report = generate->parsed()
                                             ? pipeline::run_generation(config)
                                             : pipeline::run_experiment(config);
            print_run_summary(report, config);
            return 0;
        }

        if (evaluate->parsed()) {
            pipeline::RunConfig config = pipeline::load_config(config_path);
            if (!output_override.empty()) config.output_dir = output_override;
            // rescore the stored final queries through the configured backend
            auto loaded = pipeline::load_dataset(config.dataset);
            std::ifstream in(records_path);
            if (!in) throw Error("cannot open records file: " + records_path);
            std::string line;
            std::ostringstream csv;
            csv << "topic_id,model,prompt,seed,precision,recall,f1,f3\n";
            const pipeline::RetrievalConfig& rc = config.retrieval;
            std::optional<retrieval::EsearchClient> client;
            std::vector<retrieval::Document> offline_docs;
            if (rc.backend == "offline") {
                offline_docs = retrieval::load_corpus(rc.corpus_path);
            } else {
                retrieval::EsearchConfig ec;
                ec.backend = rc.backend == "live" ? retrieval::Backend::Live
                                                  : retrieval::Backend::Replay;
                ec.base_url = rc.base_url;
                ec.cache_dir = rc.cache_dir;
                ec.page_size = rc.page_size;
                ec.id_cap = rc.id_cap;
                ec.datetype = rc.datetype;
                client.emplace(std::move(ec));
            }
            int scored = 0, skipped = 0;
            while (std::getline(in, line)) {
                if (trim(line).empty()) continue;
                auto doc = nlohmann::json::parse(line);
                auto record = bqr::gateway::record_from_json(doc["generation"].dump());
                const corpus::Topic* topic = loaded.set.find(record.topic_id);
                if (!record.final_query || topic == nullptr || topic->relevant.empty()) {
                    ++skipped;
                    continue;
                }
                std::set<std::string> pmids;
                if (client) {
                    pmids = client->search(*record.final_query, topic->date_range).pmids;
                } else {
                    auto parsed = query::parse(*record.final_query);
                    if (!parsed.ok()) {
                        ++skipped;
                        continue;
                    }
                    pmids = retrieval::offline_search(*parsed.node, offline_docs,
                                                      topic->date_range);
                }
                auto metrics = stats::set_metrics(topic->id, pmids, topic->relevant);
                csv << topic->id << ',' << record.model << ',' << record.prompt_id << ','
                    << record.seed << ',' << format_fixed(metrics.precision, 6) << ','
                    << format_fixed(metrics.recall, 6) << ','
                    << format_fixed(metrics.f1, 6) << ',' << format_fixed(metrics.f3, 6)
                    << "\n";
                ++scored;
            }
            std::string out = config.output_dir.empty() ? "evaluate_metrics.csv"
                                                        : config.output_dir +
                                                              "/evaluate_metrics.csv";
            write_file_atomic(out, csv.str());
            std::cout << "scored " << scored << " records, skipped " << skipped << ", wrote "
                      << out << "\n";
            return 0;
        }

        if (analyze->parsed()) {
            std::optional<corpus::LoadResult> dataset;
            std::string baseline_role = "original";
            if (!config_path.empty()) {
                pipeline::RunConfig config = pipeline::load_config(config_path);
                dataset = pipeline::load_dataset(config.dataset);
                baseline_role = config.baseline_role;
            }
            auto report = pipeline::analyze_run(records_path,
                                                dataset ? &dataset->set : nullptr,
                                                baseline_role);
            pipeline::write_analysis_csvs(report, analyze_out);
            for (const auto& row : report.rows)
                std::cout << row.model << "/" << row.prompt << ": cells " << row.cells
                          << ", mean terms " << format_fixed(row.mean_terms, 2)
                          << ", errors " << format_fixed(row.pct_errors, 1)
                          << "%, unbalanced " << format_fixed(row.pct_unbalanced, 1)
                          << "%\n";
            if (report.expert_mean_terms)
                std::cout << "expert queries: mean terms "
                          << format_fixed(*report.expert_mean_terms, 2) << "\n";
            std::cout << "analysis CSVs in " << analyze_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
