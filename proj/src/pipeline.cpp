#include "bqr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "bqr/query.hpp"

namespace bqr::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------ configuration

namespace {

gateway::ModelProfile profile_from_json(const json& jm) {
    gateway::ModelProfile p;
    p.name = jm.at("name").get<std::string>();
    p.endpoint = jm.value("endpoint", "");
    p.api_key_env = jm.value("api_key_env", "");
    if (jm.contains("seeds")) p.seeds = jm["seeds"].get<std::vector<int>>();
    p.sampling.temperature = jm.value("temperature", 0.0);
    p.sampling.top_p = jm.value("top_p", 0.1);
    if (jm.contains("return_mode")) {
        auto mode = gateway::return_mode_from(jm["return_mode"].get<std::string>());
        if (!mode) throw Error("unknown return_mode for model " + p.name);
        p.return_mode = *mode;
    }
    p.supports_system_role = jm.value("supports_system_role", true);
    p.requests_per_second = jm.value("requests_per_second", 2.0);
    p.max_in_flight = jm.value("max_in_flight", 4);
    p.timeout_seconds = jm.value("timeout_seconds", 120);
    gateway::check_profile(p);
    return p;
}

} // namespace

RunConfig config_from_json_text(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw Error("run config is not valid JSON");
    RunConfig config;

    if (doc.contains("dataset")) {
        const json& jd = doc["dataset"];
        config.dataset.kind = jd.value("kind", "seed");
        config.dataset.seed_path = jd.value("path", "");
        if (jd.contains("field_map")) {
            const json& jf = jd["field_map"];
            auto& fm = config.dataset.field_map;
            fm.id = jf.value("id", fm.id);
            fm.title = jf.value("title", fm.title);
            fm.original_query = jf.value("original_query", fm.original_query);
            fm.edited_query = jf.value("edited_query", fm.edited_query);
            fm.relevant = jf.value("relevant", fm.relevant);
            fm.seed_studies = jf.value("seed_studies", fm.seed_studies);
            fm.min_date = jf.value("min_date", fm.min_date);
            fm.max_date = jf.value("max_date", fm.max_date);
        }
        if (jd.contains("clef_topic_dirs"))
            config.dataset.clef_topic_dirs = jd["clef_topic_dirs"].get<std::vector<std::string>>();
        if (jd.contains("clef_qrels"))
            config.dataset.clef_qrels = jd["clef_qrels"].get<std::vector<std::string>>();
        config.dataset.clef_remove_unreliable = jd.value("clef_remove_unreliable", true);
        if (jd.contains("topics"))
            config.dataset.topics = jd["topics"].get<std::vector<std::string>>();
    }
    if (doc.contains("models"))
        for (const auto& jm : doc["models"]) config.models.push_back(profile_from_json(jm));
    if (doc.contains("prompts")) {
        for (const auto& jp : doc["prompts"]) {
            auto id = gateway::prompt_id_from(jp.get<std::string>());
            if (!id) throw Error("unknown prompt id: " + jp.get<std::string>());
            config.prompts.push_back(*id);
        }
    }
    if (doc.contains("llm")) {
        const json& jl = doc["llm"];
        config.llm.backend = jl.value("backend", "mock");
        config.llm.script_path = jl.value("script", "");
        config.llm.cache_dir = jl.value("cache_dir", "");
    }
    if (doc.contains("retrieval")) {
        const json& jr = doc["retrieval"];
        config.retrieval.backend = jr.value("backend", "offline");
        config.retrieval.cache_dir = jr.value("cache_dir", "");
        config.retrieval.corpus_path = jr.value("corpus", "");
        config.retrieval.base_url = jr.value("base_url", config.retrieval.base_url);
        config.retrieval.page_size = jr.value("page_size", 10000);
        config.retrieval.id_cap = jr.value("id_cap", 100000L);
        config.retrieval.datetype = jr.value("datetype", "pdat");
    }
    if (doc.contains("example")) {
        const json& je = doc["example"];
        if (je.contains("hqe_topic_id"))
            config.example.hqe.seed_topic_id = je["hqe_topic_id"].get<std::string>();
        if (je.contains("hqe_title"))
            config.example.hqe.title = je["hqe_title"].get<std::string>();
        if (je.contains("hqe_query"))
            config.example.hqe.query_text = je["hqe_query"].get<std::string>();
        if (je.contains("hqe_query_file"))
            config.example.hqe.query_text = trim(read_file(je["hqe_query_file"].get<std::string>()));
        config.example.re_backend = je.value("re_backend", "lexical");
        config.example.embedding_endpoint = je.value("embedding_endpoint", "");
        config.example.exclude_duplicates = je.value("exclude_duplicates", true);
    }
    config.templates_dir = doc.value("templates_dir", "assets/prompts");
    config.max_retries = doc.value("max_retries", 3);
    config.output_dir = doc.value("output_dir", "");
    config.baseline_role = doc.value("baseline_role", "original");
    config.score_failures_as_zero = doc.value("score_failures_as_zero", false);
    config.workers = doc.value("workers", 1);
    return config;
}

RunConfig load_config(const std::string& path) {
    return config_from_json_text(read_file(path));
}

corpus::LoadResult load_dataset_full(const DatasetConfig& config) {
    corpus::LoadResult result;
    if (config.kind == "seed") {
        if (config.seed_path.empty()) throw Error("dataset.path missing for the Seed collection");
        result = corpus::load_seed_collection(config.seed_path, config.field_map);
    } else if (config.kind == "clef") {
        if (config.clef_topic_dirs.empty() ||
            config.clef_topic_dirs.size() != config.clef_qrels.size())
            throw Error("clef dataset needs matching topic_dirs and qrels lists");
        bool first = true;
        for (size_t i = 0; i < config.clef_topic_dirs.size(); ++i) {
            auto year = corpus::load_clef_collection(config.clef_topic_dirs[i],
                                                     config.clef_qrels[i]);
            if (first) {
                result.set = std::move(year.set);
                first = false;
            } else {
                result.set = corpus::merge(result.set, year.set);
            }
            result.issues.insert(result.issues.end(), year.issues.begin(), year.issues.end());
        }
        if (config.clef_remove_unreliable)
            result.set = corpus::remove_topics(result.set, corpus::clef_unreliable_2017_ids());
    } else {
        throw Error("unknown dataset kind: " + config.kind);
    }
    return result;
}

corpus::LoadResult load_dataset(const DatasetConfig& config) {
    corpus::LoadResult result = load_dataset_full(config);
    if (!config.topics.empty()) {
        corpus::TopicSet filtered;
        filtered.source = result.set.source;
        for (const auto& id : config.topics) {
            const corpus::Topic* t = result.set.find(id);
            if (t == nullptr) throw Error("requested topic not in the dataset: " + id);
            filtered.topics.push_back(*t);
        }
        result.set = std::move(filtered);
    }
    return result;
}

// -------------------------------------------------------------- experiment

namespace {

struct Retriever {
    RetrievalConfig config;
    std::vector<retrieval::Document> corpus;                 // offline
    std::unique_ptr<retrieval::EsearchClient> client;        // live / replay

    explicit Retriever(const RetrievalConfig& rc) : config(rc) {
        if (rc.backend == "offline") {
            if (rc.corpus_path.empty())
                throw Error("offline retrieval needs a document corpus path");
            corpus = retrieval::load_corpus(rc.corpus_path);
        } else if (rc.backend == "replay" || rc.backend == "live") {
            retrieval::EsearchConfig ec;
            ec.backend = rc.backend == "live" ? retrieval::Backend::Live
                                              : retrieval::Backend::Replay;
            ec.base_url = rc.base_url;
            ec.cache_dir = rc.cache_dir;
            ec.page_size = rc.page_size;
            ec.id_cap = rc.id_cap;
            ec.datetype = rc.datetype;
            client = std::make_unique<retrieval::EsearchClient>(ec);
        } else {
            throw Error("unknown retrieval backend: " + rc.backend);
        }
    }

    retrieval::RetrievalResult search(const std::string& query_text,
                                      const std::optional<DateRange>& range) {
        if (client) return client->search(query_text, range);
        auto parsed = query::parse(query_text);
        if (!parsed.ok()) throw Error("query fails syntax validation");
        retrieval::RetrievalResult out;
        out.backend = retrieval::Backend::Offline;
        out.query_text = query_text;
        out.date_range = range;
        out.pmids = retrieval::offline_search(*parsed.node, corpus, range);
        out.total = static_cast<long>(out.pmids.size());
        return out;
    }
};

std::shared_ptr<gateway::ChatTransport> make_transport(const LlmConfig& config) {
    if (config.backend == "mock") {
        if (config.script_path.empty()) throw Error("mock llm backend needs a script file");
        return std::make_shared<gateway::ScriptedChatTransport>(
            gateway::ScriptedChatTransport::from_file(config.script_path));
    }
    if (config.backend == "replay") {
        if (config.cache_dir.empty()) throw Error("replay llm backend needs a cache dir");
        return std::make_shared<gateway::ReplayChatTransport>(config.cache_dir);
    }
    if (config.backend != "live") throw Error("unknown llm backend: " + config.backend);
    return nullptr;  // per-profile HTTP transports, built below
}

struct Cell {
    const corpus::Topic* topic;
    const gateway::ModelProfile* profile;
    gateway::PromptId prompt;
    int seed;
};

bool last_output_unbalanced(const gateway::GenerationRecord& record) {
    if (record.attempts.empty()) return false;
    const gateway::Attempt& last = record.attempts.back();
    const std::string& text = last.extracted ? *last.extracted : last.raw_output;
    if (trim(text).empty()) return false;
    return !query::balanced_parentheses(text);
}

void count_taxonomy(const gateway::GenerationRecord& record, ErrorTaxonomy& taxonomy) {
    using gateway::AttemptErrorKind;
    using gateway::ErrorClass;
    switch (record.error_class) {
        case ErrorClass::None:
            break;
        case ErrorClass::TransportTimeout:
            ++taxonomy.transport;
            break;
        case ErrorClass::ConversationBreakdown:
            ++taxonomy.conversation_breakdown;
            break;
        case ErrorClass::MalformedAfterRetries: {
            AttemptErrorKind kind = AttemptErrorKind::NoQueryFound;
            if (!record.attempts.empty() && record.attempts.back().error)
                kind = *record.attempts.back().error;
            if (kind == AttemptErrorKind::MalformedJson)
                ++taxonomy.malformed_json;
            else
                ++taxonomy.no_query_found;
            break;
        }
    }
    if (record.error_class != ErrorClass::None && last_output_unbalanced(record))
        ++taxonomy.unbalanced_parentheses;
}

std::string agg_key(const std::string& model, const std::string& prompt,
                    std::optional<int> seed = {}) {
    std::string key = model + "/" + prompt;
    if (seed) key += "/seed" + std::to_string(*seed);
    return key;
}

RunReport execute(const RunConfig& config, bool with_retrieval) {
    if (config.models.empty()) throw Error("run config names no models");
    if (config.prompts.empty()) throw Error("run config names no prompts");
    if (config.output_dir.empty()) throw Error("run config names no output directory");

    // the full collection is the example pool; the topic filter only selects
    // which topics the run generates for
    corpus::LoadResult full = load_dataset_full(config.dataset);
    const corpus::TopicSet& pool = full.set;
    corpus::LoadResult loaded = load_dataset(config.dataset);
    const corpus::TopicSet& topics = loaded.set;
    corpus::DuplicateReport dedup = corpus::find_duplicates(pool);

    gateway::PromptLibrary library = gateway::PromptLibrary::load(config.templates_dir);
    for (auto prompt : config.prompts) library.get(prompt);  // fail fast on missing assets

    bool needs_hqe = false, needs_re = false;
    for (auto prompt : config.prompts) {
        if (!gateway::requires_example(prompt)) continue;
        if (gateway::uses_related_example(prompt)) needs_re = true;
        else needs_hqe = true;
    }
    std::optional<selector::Example> hqe;
    if (needs_hqe) hqe = selector::hqe_example(config.example.hqe, &pool);

    std::unique_ptr<selector::SimilarityBackend> similarity;
    if (config.example.re_backend == "remote") {
        if (config.example.embedding_endpoint.empty())
            throw Error("remote example backend needs an embedding endpoint");
        similarity = std::make_unique<selector::RemoteEmbeddingBackend>(
            config.example.embedding_endpoint);
    } else {
        similarity = std::make_unique<selector::LexicalBackend>();
    }
    std::map<std::string, selector::Example> re_examples;
    if (needs_re)
        for (const auto& topic : topics.topics)
            re_examples.emplace(topic.id,
                                selector::select_re(topic, pool, *similarity, dedup,
                                                    config.example.exclude_duplicates));

    std::shared_ptr<gateway::ChatTransport> shared_transport = make_transport(config.llm);
    std::map<std::string, std::shared_ptr<gateway::ChatTransport>> per_model;
    for (const auto& profile : config.models) {
        if (shared_transport) {
            per_model[profile.name] = shared_transport;
        } else {
            auto http = std::make_shared<gateway::HttpChatTransport>(profile);
            if (!config.llm.cache_dir.empty())
                per_model[profile.name] =
                    std::make_shared<gateway::ReplayChatTransport>(config.llm.cache_dir, http);
            else
                per_model[profile.name] = http;
        }
    }

    std::optional<Retriever> retriever;
    if (with_retrieval) retriever.emplace(config.retrieval);

    std::vector<Cell> cells;
    for (const auto& topic : topics.topics)
        for (const auto& profile : config.models)
            for (auto prompt : config.prompts)
                for (int seed : profile.seeds)
                    cells.push_back({&topic, &profile, prompt, seed});

    RunReport report;
    report.dataset_issues = loaded.issues;
    if (topics.topics.empty())
        report.dataset_issues.push_back({"", 0, "dataset contains no topics"});
    report.cells.resize(cells.size());
    for (const auto& topic : topics.topics)
        (topic.relevant.empty() ? report.unjudged_topics : report.judged_topics) += 1;

    auto process = [&](size_t index) {
        const Cell& cell = cells[index];
        CellResult result;
        gateway::ChatTransport& transport = *per_model.at(cell.profile->name);
        const gateway::PromptTemplate& tmpl = library.get(cell.prompt);

        if (cell.prompt == gateway::PromptId::Guided) {
            result.generation = gateway::guided_generate(transport, *cell.profile, tmpl,
                                                         *cell.topic, cell.seed);
        } else {
            std::optional<selector::Example> example;
            if (gateway::requires_example(cell.prompt))
                example = gateway::uses_related_example(cell.prompt)
                              ? re_examples.at(cell.topic->id)
                              : *hqe;
            result.generation =
                gateway::generate_with_retry(transport, *cell.profile, tmpl, *cell.topic,
                                             example, cell.seed, config.max_retries);
        }

        if (result.generation.final_query && retriever) {
            try {
                retrieval::RetrievalResult r = retriever->search(
                    *result.generation.final_query, cell.topic->date_range);
                result.retrieved_total = r.total;
                result.retrieved_unique = static_cast<long>(r.pmids.size());
                result.truncated = r.truncated;
                if (!cell.topic->relevant.empty())
                    result.metrics = stats::set_metrics(cell.topic->id, r.pmids,
                                                        cell.topic->relevant);
            } catch (const Error& e) {
                result.retrieval_error = e.what();
            }
        }
        report.cells[index] = std::move(result);
    };

    int workers = std::max(1, config.workers);
    if (workers == 1) {
        for (size_t i = 0; i < cells.size(); ++i) process(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                    process(i);
            });
        for (auto& t : pool) t.join();
    }

    // sequential post-pass: accounting and aggregation
    std::map<std::string, std::vector<stats::TopicMetrics>> pooled;
    std::map<std::string, std::vector<stats::TopicMetrics>> per_seed;
    for (size_t i = 0; i < cells.size(); ++i) {
        const Cell& cell = cells[i];
        const CellResult& result = report.cells[i];
        bool success = result.generation.error_class == gateway::ErrorClass::None;
        (success ? report.successes : report.failures) += 1;
        if (result.retrieval_error) ++report.retrieval_errors;
        count_taxonomy(result.generation, report.taxonomy);

        std::string prompt_name = gateway::to_string(cell.prompt);
        std::optional<stats::TopicMetrics> scored = result.metrics;
        if (!success && config.score_failures_as_zero && !cell.topic->relevant.empty())
            scored = stats::counts_metrics(cell.topic->id, 0,
                                           static_cast<long>(cell.topic->relevant.size()), 0);
        if (scored) {
            pooled[agg_key(cell.profile->name, prompt_name)].push_back(*scored);
            per_seed[agg_key(cell.profile->name, prompt_name, cell.seed)].push_back(*scored);
        }
    }
    for (const auto& [key, metrics] : pooled)
        report.by_model_prompt.push_back(stats::aggregate(metrics, key));
    for (const auto& [key, metrics] : per_seed)
        report.by_model_prompt_seed.push_back(stats::aggregate(metrics, key));
    report.pooled_samples = std::move(pooled);
    return report;
}

// ------------------------------------------------------------------ output

std::string csv_escape(const std::string& value) {
    if (value.find_first_of(",\"\n") == std::string::npos) return value;
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

json taxonomy_json(const ErrorTaxonomy& t) {
    return json{{"transport", t.transport},
                {"malformed_json", t.malformed_json},
                {"no_query_found", t.no_query_found},
                {"conversation_breakdown", t.conversation_breakdown},
                {"unbalanced_parentheses", t.unbalanced_parentheses}};
}

json metrics_json(const stats::TopicMetrics& m) {
    return json{{"topic_id", m.topic_id},
                {"precision", m.precision},
                {"recall", m.recall},
                {"f1", m.f1},
                {"f3", m.f3},
                {"retrieved", m.retrieved_count},
                {"relevant", m.relevant_count},
                {"hits", m.hit_count}};
}

} // namespace

RunReport run_experiment(const RunConfig& config) {
    RunReport report = execute(config, /*with_retrieval=*/true);
    write_run_outputs(report, config);
    return report;
}

RunReport run_generation(const RunConfig& config) {
    RunReport report = execute(config, /*with_retrieval=*/false);
    write_run_outputs(report, config);
    return report;
}

void write_run_outputs(const RunReport& report, const RunConfig& config) {
    fs::create_directories(config.output_dir);
    auto out_path = [&](const std::string& name) {
        return (fs::path(config.output_dir) / name).string();
    };

    // one JSON line per cell, written in cell order
    std::ostringstream records;
    for (const auto& cell : report.cells) {
        json line;
        line["generation"] = json::parse(gateway::record_to_json(cell.generation));
        if (cell.retrieved_total) {
            line["retrieval"] = {{"total", *cell.retrieved_total},
                                 {"unique", *cell.retrieved_unique},
                                 {"truncated", cell.truncated}};
        }
        if (cell.retrieval_error) line["retrieval_error"] = *cell.retrieval_error;
        if (cell.metrics) line["metrics"] = metrics_json(*cell.metrics);
        records << line.dump() << "\n";
    }
    write_file_atomic(out_path("records.jsonl"), records.str());

    // pooled summary with the significance comparison where references exist
    std::ostringstream summary;
    summary << "model,prompt,metric,mean,sd,n,t,p,significant\n";
    for (const auto& agg : report.by_model_prompt) {
        // prompt ids never contain '/', model names may
        auto slash = agg.key.rfind('/');
        std::string model = agg.key.substr(0, slash);
        std::string prompt = agg.key.substr(slash + 1);
        auto prompt_id = gateway::prompt_id_from(prompt);
        std::optional<ReferenceScore> ref;
        if (prompt_id) ref = reported_prompt_score(config.dataset.kind, *prompt_id);
        struct Row { const char* name; stats::MeanSd value; std::optional<double> mu0; };
        std::vector<Row> rows = {
            {"precision", agg.precision, ref ? std::optional(ref->precision) : std::nullopt},
            {"recall", agg.recall, ref ? std::optional(ref->recall) : std::nullopt},
            {"f1", agg.f1, ref ? std::optional(ref->f1) : std::nullopt},
            {"f3", agg.f3, std::nullopt},
        };
        const auto* samples = report.pooled_samples.count(agg.key)
                                  ? &report.pooled_samples.at(agg.key)
                                  : nullptr;
        for (const auto& row : rows) {
            summary << csv_escape(model) << ',' << csv_escape(prompt) << ',' << row.name
                    << ',' << format_fixed(row.value.mean, 3) << ','
                    << format_fixed(row.value.sd, 3) << ',' << agg.n;
            if (row.mu0 && samples && samples->size() >= 2) {
                std::vector<double> values;
                for (const auto& m : *samples) {
                    if (row.name == std::string("precision")) values.push_back(m.precision);
                    else if (row.name == std::string("recall")) values.push_back(m.recall);
                    else values.push_back(m.f1);
                }
                auto test = stats::one_sample_t_test(values, *row.mu0);
                summary << ',' << format_fixed(test.t_statistic, 4) << ','
                        << format_fixed(test.p_value, 6) << ','
                        << (test.significant_at_05 ? "yes" : "no");
            } else {
                summary << ",,,";
            }
            summary << "\n";
        }
    }
    write_file_atomic(out_path("summary.csv"), summary.str());

    // per-seed aggregates (variability plot data)
    std::ostringstream seeds_csv;
    seeds_csv << "model,prompt,seed,metric,mean,sd,n\n";
    for (const auto& agg : report.by_model_prompt_seed) {
        // split from the right: ".../<prompt>/seed<N>", model may contain '/'
        auto seed_slash = agg.key.rfind('/');
        auto prompt_slash = agg.key.rfind('/', seed_slash - 1);
        std::string model = agg.key.substr(0, prompt_slash);
        std::string prompt = agg.key.substr(prompt_slash + 1, seed_slash - prompt_slash - 1);
        std::string seed = agg.key.substr(seed_slash + 5);  // after "/seed"
        struct Row { const char* name; stats::MeanSd value; };
        for (const auto& row : std::vector<Row>{{"precision", agg.precision},
                                                {"recall", agg.recall},
                                                {"f1", agg.f1},
                                                {"f3", agg.f3}}) {
            seeds_csv << csv_escape(model) << ',' << csv_escape(prompt) << ',' << seed
                      << ',' << row.name << ',' << format_fixed(row.value.mean, 6) << ','
                      << format_fixed(row.value.sd, 6) << ',' << agg.n << "\n";
        }
    }
    write_file_atomic(out_path("per_seed.csv"), seeds_csv.str());

    // seed-variability distribution summary per model/prompt
    std::map<std::string, std::vector<stats::AggregateMetrics>> grouped;
    for (const auto& agg : report.by_model_prompt_seed)
        grouped[agg.key.substr(0, agg.key.rfind('/'))].push_back(agg);
    std::ostringstream variability;
    variability << "model,prompt,metric,min,q1,median,q3,max,seeds\n";
    for (const auto& [key, aggs] : grouped) {
        auto summary_map = stats::variability_summary(aggs);
        auto slash = key.rfind('/');
        for (const auto& metric : {"precision", "recall", "f1", "f3"}) {
            const auto& s = summary_map.at(metric);
            variability << csv_escape(key.substr(0, slash)) << ','
                        << csv_escape(key.substr(slash + 1)) << ',' << metric << ','
                        << format_fixed(s.min, 6) << ',' << format_fixed(s.q1, 6) << ','
                        << format_fixed(s.median, 6) << ',' << format_fixed(s.q3, 6) << ','
                        << format_fixed(s.max, 6) << ',' << aggs.size() << "\n";
        }
    }
    write_file_atomic(out_path("variability.csv"), variability.str());

    json doc;
    doc["cells"] = report.cells.size();
    doc["successes"] = report.successes;
    doc["failures"] = report.failures;
    doc["retrieval_errors"] = report.retrieval_errors;
    doc["taxonomy"] = taxonomy_json(report.taxonomy);
    doc["judged_topics"] = report.judged_topics;
    doc["unjudged_topics"] = report.unjudged_topics;
    json aggregates = json::array();
    for (const auto& agg : report.by_model_prompt) {
        aggregates.push_back({{"key", agg.key},
                              {"n", agg.n},
                              {"precision", stats::format_mean_sd(agg.precision)},
                              {"recall", stats::format_mean_sd(agg.recall)},
                              {"f1", stats::format_mean_sd(agg.f1)},
                              {"f3", stats::format_mean_sd(agg.f3)}});
    }
    doc["aggregates"] = std::move(aggregates);
    write_file_atomic(out_path("report.json"), doc.dump(2) + "\n");
}

// --------------------------------------------------------------- baselines

std::optional<ReferenceScore> reported_baseline(const std::string& dataset_kind,
                                                const std::string& role) {
    // previously reported mean scores for the expert queries
    if (dataset_kind == "seed" && role == "original") return ReferenceScore{0.034, 0.711, 0.060};
    if (dataset_kind == "seed" && role == "edited") return ReferenceScore{0.035, 0.647, 0.058};
    if (dataset_kind == "clef" && role == "original") return ReferenceScore{0.021, 0.832, 0.029};
    return std::nullopt;
}

std::optional<ReferenceScore> reported_prompt_score(const std::string& dataset_kind,
                                                    gateway::PromptId prompt) {
    using gateway::PromptId;
    // previously reported per-prompt means (precision, recall, f1)
    if (dataset_kind == "seed") {
        switch (prompt) {
            case PromptId::Q1: return ReferenceScore{0.050, 0.053, 0.027};
            case PromptId::Q2: return ReferenceScore{0.098, 0.039, 0.031};
            case PromptId::Q3: return ReferenceScore{0.073, 0.052, 0.033};
            case PromptId::Q4Hqe: return ReferenceScore{0.028, 0.129, 0.027};
            case PromptId::Q5Hqe: return ReferenceScore{0.019, 0.079, 0.019};
            case PromptId::Q4Re: return ReferenceScore{0.035, 0.016, 0.014};
            case PromptId::Guided: return ReferenceScore{0.099, 0.517, 0.049};
            default: return std::nullopt;
        }
    }
    if (dataset_kind == "clef") {
        switch (prompt) {
            case PromptId::Q1: return ReferenceScore{0.054, 0.129, 0.050};
            case PromptId::Q2: return ReferenceScore{0.117, 0.131, 0.065};
            case PromptId::Q3: return ReferenceScore{0.084, 0.118, 0.044};
            case PromptId::Q4Hqe: return ReferenceScore{0.075, 0.504, 0.064};
            case PromptId::Q5Hqe: return ReferenceScore{0.096, 0.334, 0.072};
            default: return std::nullopt;
        }
    }
    return std::nullopt;
}

std::vector<BaselineReport> evaluate_baselines(const RunConfig& config,
                                               const std::vector<std::string>& roles) {
    corpus::LoadResult loaded = load_dataset(config.dataset);
    Retriever retriever(config.retrieval);

    std::vector<BaselineReport> reports;
    for (const auto& role : roles) {
        BaselineReport report;
        report.role = role;
        report.reference = reported_baseline(config.dataset.kind, role);
        for (const auto& topic : loaded.set.topics) {
            const std::string* text = topic.query(role);
            if (text == nullptr) {
                report.skipped.push_back({topic.id, "no '" + role + "' query"});
                continue;
            }
            auto validation = query::validate(*text);
            if (!validation.parse_ok) {
                report.skipped.push_back(
                    {topic.id, "syntax: " + validation.message.value_or("parse error")});
                continue;
            }
            if (topic.relevant.empty()) {
                report.skipped.push_back({topic.id, "no relevance judgments"});
                continue;
            }
            retrieval::RetrievalResult r = retriever.search(*text, topic.date_range);
            report.per_topic.push_back(stats::set_metrics(topic.id, r.pmids, topic.relevant));
        }
        if (!report.per_topic.empty()) {
            report.aggregate = stats::aggregate(report.per_topic, role);
            if (report.reference && report.per_topic.size() >= 2) {
                auto samples_of = [&](auto getter) {
                    std::vector<double> values;
                    for (const auto& m : report.per_topic) values.push_back(getter(m));
                    return values;
                };
                report.t_vs_reference["precision"] = stats::one_sample_t_test(
                    samples_of([](const auto& m) { return m.precision; }),
                    report.reference->precision);
                report.t_vs_reference["recall"] = stats::one_sample_t_test(
                    samples_of([](const auto& m) { return m.recall; }),
                    report.reference->recall);
                report.t_vs_reference["f1"] = stats::one_sample_t_test(
                    samples_of([](const auto& m) { return m.f1; }), report.reference->f1);
            }
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

std::string baseline_report_text(const BaselineReport& report) {
    std::ostringstream out;
    out << "role: " << report.role << "\n";
    out << "  scored topics: " << report.per_topic.size()
        << ", skipped: " << report.skipped.size() << "\n";
    if (report.aggregate) {
        const auto& a = *report.aggregate;
        out << "  precision " << stats::format_mean_sd(a.precision) << "  recall "
            << stats::format_mean_sd(a.recall) << "  f1 " << stats::format_mean_sd(a.f1)
            << "  f3 " << stats::format_mean_sd(a.f3) << "\n";
    }
    if (report.reference) {
        out << "  reported reference: precision " << format_fixed(report.reference->precision, 3)
            << "  recall " << format_fixed(report.reference->recall, 3) << "  f1 "
            << format_fixed(report.reference->f1, 3) << "\n";
        for (const auto& [metric, test] : report.t_vs_reference) {
            out << "  t-test vs reference (" << metric << "): t = "
                << format_fixed(test.t_statistic, 4) << ", p = " << format_fixed(test.p_value, 6)
                << (test.significant_at_05 ? " (significant at 0.05)" : "") << "\n";
        }
    }
    for (const auto& skip : report.skipped)
        out << "  skipped topic " << skip.topic_id << ": " << skip.reason << "\n";
    return out.str();
}

void write_baseline_csv(const std::vector<BaselineReport>& reports, const std::string& path) {
    std::ostringstream out;
    out << "role,topic_id,precision,recall,f1,f3,retrieved,relevant,hits\n";
    for (const auto& report : reports) {
        for (const auto& m : report.per_topic) {
            out << report.role << ',' << m.topic_id << ',' << format_fixed(m.precision, 6)
                << ',' << format_fixed(m.recall, 6) << ',' << format_fixed(m.f1, 6) << ','
                << format_fixed(m.f3, 6) << ',' << m.retrieved_count << ','
                << m.relevant_count << ',' << m.hit_count << "\n";
        }
    }
    write_file_atomic(path, out.str());
}

// ---------------------------------------------------------------- analysis

AnalysisReport analyze_run(const std::string& records_path,
                           const corpus::TopicSet* expert_reference,
                           const std::string& baseline_role) {
    std::ifstream in(records_path);
    if (!in) throw Error("cannot open records file: " + records_path);

    struct Bucket {
        int cells = 0;
        int generated = 0;
        int errors = 0;
        int unbalanced = 0;
        long terms = 0;
        std::map<std::string, int> fields;
    };
    std::map<std::pair<std::string, std::string>, Bucket> buckets;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.contains("generation"))
            throw Error("records line " + std::to_string(lineno) + " is not a run record");
        gateway::GenerationRecord record =
            gateway::record_from_json(doc["generation"].dump());
        Bucket& bucket = buckets[{record.model, record.prompt_id}];
        ++bucket.cells;
        if (record.error_class != gateway::ErrorClass::None) ++bucket.errors;
        if (record.error_class != gateway::ErrorClass::None && last_output_unbalanced(record))
            ++bucket.unbalanced;
        if (record.final_query) {
            auto parsed = query::parse(*record.final_query);
            if (parsed.ok()) {
                ++bucket.generated;
                bucket.terms += query::count_terms(*parsed.node);
                for (const auto& [kind, count] : query::field_usage(*parsed.node))
                    bucket.fields[query::to_string(kind)] += count;
            }
        }
    }

    AnalysisReport report;
    for (const auto& [key, bucket] : buckets) {
        AnalysisRow row;
        row.model = key.first;
        row.prompt = key.second;
        row.cells = bucket.cells;
        row.generated = bucket.generated;
        row.mean_terms = bucket.generated > 0
                             ? static_cast<double>(bucket.terms) / bucket.generated
                             : 0.0;
        row.field_usage = bucket.fields;
        row.pct_errors = bucket.cells > 0 ? 100.0 * bucket.errors / bucket.cells : 0.0;
        row.pct_unbalanced = bucket.cells > 0 ? 100.0 * bucket.unbalanced / bucket.cells : 0.0;
        report.rows.push_back(std::move(row));
    }

    if (expert_reference) {
        long terms = 0;
        int counted = 0;
        for (const auto& topic : expert_reference->topics) {
            const std::string* text = topic.query(baseline_role);
            if (text == nullptr) continue;
            auto parsed = query::parse(*text);
            if (!parsed.ok()) continue;
            terms += query::count_terms(*parsed.node);
            ++counted;
        }
        if (counted > 0)
            report.expert_mean_terms = static_cast<double>(terms) / counted;
    }
    return report;
}

void write_analysis_csvs(const AnalysisReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto out_path = [&](const std::string& name) {
        return (fs::path(out_dir) / name).string();
    };

    std::ostringstream terms;
    terms << "model,prompt,cells,generated,mean_terms,expert_mean_terms\n";
    for (const auto& row : report.rows) {
        terms << csv_escape(row.model) << ',' << csv_escape(row.prompt) << ',' << row.cells
              << ',' << row.generated << ',' << format_fixed(row.mean_terms, 3) << ','
              << (report.expert_mean_terms ? format_fixed(*report.expert_mean_terms, 3) : "")
              << "\n";
    }
    write_file_atomic(out_path("analysis_terms.csv"), terms.str());

    std::ostringstream fields;
    fields << "model,prompt,field,count\n";
    for (const auto& row : report.rows)
        for (const auto& [field, count] : row.field_usage)
            fields << csv_escape(row.model) << ',' << csv_escape(row.prompt) << ',' << field
                   << ',' << count << "\n";
    write_file_atomic(out_path("analysis_fields.csv"), fields.str());

    std::ostringstream errors;
    errors << "model,prompt,cells,pct_generation_errors,pct_unbalanced_parentheses\n";
    for (const auto& row : report.rows)
        errors << csv_escape(row.model) << ',' << csv_escape(row.prompt) << ',' << row.cells
               << ',' << format_fixed(row.pct_errors, 3) << ','
               << format_fixed(row.pct_unbalanced, 3) << "\n";
    write_file_atomic(out_path("analysis_errors.csv"), errors.str());
}

} // namespace bqr::pipeline
