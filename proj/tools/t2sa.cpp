// Command-line front end: chunk, align, eval, generate, block-sweep,
// compare, annotate-serve, agreement, mock-serve.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "t2sa/t2sa.hpp"
#include "t2sa/mock_server.hpp"

namespace {

using namespace t2sa;

struct GatewayFlags {
    std::string endpoint;
    std::string embed_model;
    std::string chat_model;
    std::string score_model;
    std::size_t max_in_flight = 4;
    std::size_t retries = 3;
    long timeout_ms = 60000;
    long backoff_ms = 200;
    std::string cache_dir;
    std::string log_path;

    void add(CLI::App* app) {
        GatewayConfig d;
        const char* env = std::getenv("T2SA_ENDPOINT");
        endpoint = env ? env : d.base_url;
        embed_model = d.embed_model_id;
        chat_model = d.chat_model_id;
        score_model = d.score_model_id;
        app->add_option("--endpoint", endpoint, "OpenAI-compatible base URL (env T2SA_ENDPOINT)")->capture_default_str();
        app->add_option("--embed-model", embed_model, "embedding model id")->capture_default_str();
        app->add_option("--chat-model", chat_model, "chat model id")->capture_default_str();
        app->add_option("--score-model", score_model, "pair scorer model id")->capture_default_str();
        app->add_option("--max-in-flight", max_in_flight, "concurrent requests")->capture_default_str();
        app->add_option("--retries", retries, "retries after the first attempt")->capture_default_str();
        app->add_option("--timeout-ms", timeout_ms, "per-request timeout")->capture_default_str();
        app->add_option("--backoff-ms", backoff_ms, "initial retry backoff")->capture_default_str();
        app->add_option("--cache-dir", cache_dir, "persistent embedding cache directory");
        app->add_option("--request-log", log_path, "JSONL request log");
    }

    GatewayConfig config() const {
        GatewayConfig g;
        g.base_url = endpoint;
        g.api_key = GatewayConfig::api_key_from_env();
        g.embed_model_id = embed_model;
        g.chat_model_id = chat_model;
        g.score_model_id = score_model;
        g.max_in_flight = max_in_flight;
        g.retry_limit = retries;
        g.timeout = std::chrono::milliseconds(timeout_ms);
        g.retry_backoff = std::chrono::milliseconds(backoff_ms);
        g.cache_dir = cache_dir;
        g.log_path = log_path;
        return g;
    }
};

struct ChunkFlags {
    std::string strategy = "turns";
    std::optional<std::size_t> window;
    std::optional<std::size_t> stride;
    std::string format;

    void add(CLI::App* app) {
        app->add_option("--strategy", strategy, "turns | tokens | lines")->capture_default_str();
        app->add_option("--window", window, "turns (default 3) or tokens (default 200) per chunk");
        app->add_option("--stride", stride, "step between chunk starts (default 1 turn / 100 tokens)");
        app->add_option("--format", format, "transcript format: plain | jsonl (default from extension)");
    }

    ChunkingConfig config() const {
        auto c = ChunkingConfig::defaults_for(parse_chunk_strategy(strategy));
        if (window) c.window = *window;
        if (stride) c.stride = *stride;
        c.validate();
        return c;
    }

    std::optional<TranscriptFormat> transcript_format() const {
        if (format.empty()) return std::nullopt;
        return parse_transcript_format(format);
    }
};

void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") std::cout << content;
    else write_text_file(path, content);
}

RunConfig corpus_config(const std::vector<std::string>& transcripts, const std::string& stories, const ChunkFlags& cf) {
    RunConfig rc;
    rc.transcript_paths = transcripts;
    rc.stories_path = stories;
    rc.chunking = cf.config();
    rc.transcript_format = cf.transcript_format();
    return rc;
}

std::vector<double> parse_targets(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : text::split(s, ',')) {
        auto t = std::string(text::trim(part));
        if (t.empty()) continue;
        try {
            out.push_back(std::stod(t));
        } catch (const std::exception&) {
            throw UsageError("bad target recall: " + t);
        }
    }
    if (out.empty()) throw UsageError("no target recalls given");
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Text-to-story alignment: ground user stories in elicitation transcripts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "t2sa 0.1.0");

    // chunk
    auto* chunk_cmd = app.add_subcommand("chunk", "split transcripts into chunks (JSONL)");
    std::vector<std::string> chunk_transcripts;
    std::string chunk_out;
    ChunkFlags chunk_flags;
    chunk_cmd->add_option("--transcript,transcripts", chunk_transcripts, "transcript files")->required();
    chunk_flags.add(chunk_cmd);
    chunk_cmd->add_option("--out", chunk_out, "output JSONL (default stdout)");

    // align
    auto* align_cmd = app.add_subcommand("align", "score stories against transcripts");
    RunConfig align_rc;
    ChunkFlags align_chunk;
    GatewayFlags align_gw;
    std::string matcher = "llm_judge";
    std::optional<std::size_t> blocking_k;
    std::optional<double> target_recall;
    std::string reference = "oracle";
    std::string gold_path;
    bool quiet = false;
    align_cmd->add_option("--transcript", align_rc.transcript_paths, "transcript files, concatenated in order")->required();
    align_cmd->add_option("--stories", align_rc.stories_path, "stories file (one per line, or .jsonl)")->required();
    align_chunk.add(align_cmd);
    align_cmd->add_option("--matcher", matcher, "llm_judge | bi_encoder | external_scorer | keyword_oracle")
        ->capture_default_str();
    align_cmd->add_option("--threshold", align_rc.matcher.threshold, "score threshold for bi_encoder/external_scorer")
        ->capture_default_str();
    align_cmd->add_option("--min-shared", align_rc.matcher.min_shared, "keyword oracle: shared content words")
        ->capture_default_str();
    align_cmd->add_flag("--full-context", align_rc.matcher.full_context, "ask for all supporting chunks per story");
    align_cmd->add_option("--full-context-batch", align_rc.matcher.full_context_batch, "chunks per full-context call")
        ->capture_default_str();
    align_cmd->add_option("--parse-retries", align_rc.matcher.judge.parse_retry_limit, "judge re-asks on bad answers")
        ->capture_default_str();
    align_cmd->add_option("--prompts", align_rc.matcher.prompts_dir, "directory overriding built-in prompts");
    auto* k_opt = align_cmd->add_option("--blocking-k", blocking_k, "keep each story's top-K chunks");
    auto* r_opt = align_cmd->add_option("--target-recall", target_recall, "pick the smallest K reaching this recall");
    k_opt->excludes(r_opt);
    align_cmd->add_option("--reference", reference, "target-recall reference: oracle | gold")->capture_default_str();
    align_cmd->add_option("--gold", gold_path, "gold labels CSV for --reference gold");
    align_cmd->add_option("--oracle-min-shared", align_rc.blocking.oracle_min_shared, "oracle reference threshold")
        ->capture_default_str();
    align_cmd->add_option("--pair-overhead", align_rc.pair_overhead, "extra tokens charged per pair")->capture_default_str();
    align_cmd->add_option("--out", align_rc.output_path, "report JSON (default stdout)");
    align_cmd->add_option("--journal", align_rc.journal_path, "verdict journal (JSONL) for resume");
    align_cmd->add_flag("--resume", align_rc.resume, "continue from the journal");
    align_cmd->add_option("--seed", align_rc.seed, "recorded in the report")->capture_default_str();
    align_cmd->add_flag("--quiet", quiet, "no summary on stderr");
    align_gw.add(align_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "macro-F1 of a report against gold labels");
    std::string eval_report, eval_gold, eval_out;
    eval_cmd->add_option("--report", eval_report, "alignment report JSON")->required();
    eval_cmd->add_option("--gold", eval_gold, "gold labels CSV")->required();
    eval_cmd->add_option("--out", eval_out, "output JSON (default stdout)");

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "generate user stories from a transcript");
    std::string gen_transcript, gen_out, gen_meta, gen_format;
    std::size_t gen_max_n = 50;
    GatewayFlags gen_gw;
    std::string gen_prompts;
    gen_cmd->add_option("--transcript", gen_transcript, "transcript or description file")->required();
    gen_cmd->add_option("--format", gen_format, "plain | jsonl | raw (default from extension)");
    gen_cmd->add_option("--max-n", gen_max_n, "story cap")->capture_default_str();
    gen_cmd->add_option("--out", gen_out, "stories file, one per line (default stdout)");
    gen_cmd->add_option("--meta", gen_meta, "JSON with per-story parse flags");
    gen_cmd->add_option("--prompts", gen_prompts, "directory overriding built-in prompts");
    gen_gw.add(gen_cmd);

    // block-sweep
    auto* sweep_cmd = app.add_subcommand("block-sweep", "minimal K and token fraction per target recall");
    std::vector<std::string> sweep_transcripts;
    std::string sweep_stories, sweep_targets = "0.5,0.8,0.9,0.95,1.0", sweep_reference = "oracle", sweep_gold;
    std::string sweep_out, sweep_cand_out;
    std::size_t sweep_min_shared = 2, sweep_cand_k = 0;
    std::uint64_t sweep_overhead = 0;
    ChunkFlags sweep_chunk;
    GatewayFlags sweep_gw;
    sweep_cmd->add_option("--transcript", sweep_transcripts, "transcript files")->required();
    sweep_cmd->add_option("--stories", sweep_stories, "stories file")->required();
    sweep_cmd->add_option("--targets", sweep_targets, "comma-separated target recalls")->capture_default_str();
    sweep_cmd->add_option("--reference", sweep_reference, "oracle | gold")->capture_default_str();
    sweep_cmd->add_option("--gold", sweep_gold, "gold labels CSV for --reference gold");
    sweep_cmd->add_option("--oracle-min-shared", sweep_min_shared, "oracle reference threshold")->capture_default_str();
    sweep_cmd->add_option("--pair-overhead", sweep_overhead, "extra tokens charged per pair")->capture_default_str();
    sweep_cmd->add_option("--out", sweep_out, "CSV (default stdout)");
    sweep_cmd->add_option("--blocking-k", sweep_cand_k, "also export the top-K candidate pairs");
    sweep_cmd->add_option("--candidates-out", sweep_cand_out, "candidate pair CSV path");
    sweep_chunk.add(sweep_cmd);
    sweep_gw.add(sweep_cmd);

    // compare
    auto* cmp_cmd = app.add_subcommand("compare", "compare reports of different story sets");
    std::vector<std::string> cmp_reports;
    std::string cmp_diff, cmp_out;
    bool cmp_json = false;
    cmp_cmd->add_option("--report,reports", cmp_reports, "NAME=PATH or PATH")->required();
    cmp_cmd->add_option("--diff", cmp_diff, "pair to diff, e.g. human,llm (default: first two)");
    cmp_cmd->add_flag("--json", cmp_json, "JSON instead of a table");
    cmp_cmd->add_option("--out", cmp_out, "output path (default stdout)");

    // annotate-serve
    auto* ann_cmd = app.add_subcommand("annotate-serve", "serve the annotation API");
    std::string ann_store = "annotations", ann_host = "127.0.0.1", ann_static, ann_stories;
    int ann_port = 8700;
    std::vector<std::string> ann_transcripts;
    ChunkFlags ann_chunk;
    GatewayFlags ann_gw;
    bool ann_no_gateway = false;
    ann_cmd->add_option("--store", ann_store, "session store directory")->capture_default_str();
    ann_cmd->add_option("--host", ann_host, "bind address")->capture_default_str();
    ann_cmd->add_option("--port", ann_port, "port (0 picks one)")->capture_default_str();
    ann_cmd->add_option("--static", ann_static, "serve a built UI from this directory");
    ann_cmd->add_option("--transcript", ann_transcripts, "default corpus transcripts");
    ann_cmd->add_option("--stories", ann_stories, "default corpus stories");
    ann_cmd->add_flag("--no-embeddings", ann_no_gateway, "require embeddings in session requests");
    ann_chunk.add(ann_cmd);
    ann_gw.add(ann_cmd);

    // agreement
    auto* agr_cmd = app.add_subcommand("agreement", "Fleiss' kappa across annotators' label files");
    std::vector<std::string> agr_files;
    std::string agr_out;
    agr_cmd->add_option("--labels,labels", agr_files, "label CSVs (two or more)")->required();
    agr_cmd->add_option("--out", agr_out, "output JSON (default stdout)");

    // mock-serve
    auto* mock_cmd = app.add_subcommand("mock-serve", "deterministic local model endpoint for demos and tests");
    int mock_port = 8000;
    std::size_t mock_min_shared = 2;
    long mock_latency = 0;
    mock_cmd->add_option("--port", mock_port, "port (0 picks one)")->capture_default_str();
    mock_cmd->add_option("--min-shared", mock_min_shared, "judge: shared content words for a 1")->capture_default_str();
    mock_cmd->add_option("--latency-ms", mock_latency, "added to every request")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    if (chunk_cmd->parsed()) {
        auto rc = corpus_config(chunk_transcripts, {}, chunk_flags);
        std::string out;
        for (const auto& path : chunk_transcripts) {
            auto id = std::filesystem::path(path).stem().string();
            auto content = text::read_file(path);
            std::vector<Chunk> chunks;
            if (rc.chunking.strategy == ChunkStrategy::lines) {
                chunks = chunk_by_lines(id, content);
            } else {
                auto fmt = rc.transcript_format.value_or(guess_transcript_format(path));
                chunks = chunk_transcript(parse_transcript(content, fmt, id, path), rc.chunking);
            }
            out += write_chunks_jsonl(chunks);
        }
        emit(chunk_out, out);
        return 0;
    }

    if (align_cmd->parsed()) {
        align_rc.chunking = align_chunk.config();
        align_rc.transcript_format = align_chunk.transcript_format();
        align_rc.matcher.kind = parse_matcher_kind(matcher);
        if (blocking_k) {
            align_rc.blocking.mode = BlockingMode::top_k;
            align_rc.blocking.k = *blocking_k;
        } else if (target_recall) {
            align_rc.blocking.mode = BlockingMode::target_recall;
            align_rc.blocking.target_recall = *target_recall;
            align_rc.blocking.reference = parse_reference_source(reference);
            align_rc.blocking.gold_path = gold_path;
        }
        align_rc.gateway = align_gw.config();
        auto report = run_alignment(align_rc);
        if (align_rc.output_path.empty()) std::cout << dump_fixed(report_to_json(report));
        if (!quiet) {
            std::fprintf(stderr, "correctness %.4f  completeness %.4f  matcher_calls %llu  token_cost %llu\n",
                         report.correctness, report.completeness,
                         static_cast<unsigned long long>(report.matcher_calls),
                         static_cast<unsigned long long>(report.token_cost));
            if (report.diagnostics.parse_warnings > 0)
                std::fprintf(stderr, "warning: %zu unparseable judge answers defaulted to 0\n",
                             report.diagnostics.parse_warnings);
        }
        return 0;
    }

    if (eval_cmd->parsed()) {
        auto report = load_report(eval_report);
        auto gold = load_labels_csv(eval_gold);
        emit(eval_out, dump_fixed(eval_to_json(evaluate_report(report, gold))));
        return 0;
    }

    if (gen_cmd->parsed()) {
        auto content = text::read_file(gen_transcript);
        std::string spec = content;
        if (gen_format != "raw") {
            auto fmt = gen_format.empty() ? guess_transcript_format(gen_transcript) : parse_transcript_format(gen_format);
            spec = render_transcript(
                parse_transcript(content, fmt, std::filesystem::path(gen_transcript).stem().string(), gen_transcript));
        }
        ModelGateway gateway(gen_gw.config());
        auto result = generate_stories(gateway, PromptAssets::load(gen_prompts), spec, gen_max_n);
        std::string lines;
        for (const auto& s : result.stories) lines += s.story.text + "\n";
        emit(gen_out, lines);
        if (!gen_meta.empty()) write_text_file(gen_meta, dump_fixed(generation_to_json(result)));
        std::size_t off_template = 0, recovered = 0;
        for (const auto& s : result.stories) {
            off_template += !s.template_ok;
            recovered += s.recovered;
        }
        std::fprintf(stderr, "%zu stories (%zu outside the template, %zu with list markup stripped)%s\n",
                     result.stories.size(), off_template, recovered, result.truncated ? ", truncated" : "");
        return 0;
    }

    if (sweep_cmd->parsed()) {
        auto rc = corpus_config(sweep_transcripts, sweep_stories, sweep_chunk);
        auto corpus = load_corpus(rc);
        ModelGateway gateway(sweep_gw.config());
        auto table = embed_corpus(gateway, corpus.chunks, corpus.stories);
        auto rankings = rank_all(table, corpus.chunks, corpus.stories);
        auto ref = parse_reference_source(sweep_reference);
        if (ref == ReferenceSource::gold && sweep_gold.empty()) throw UsageError("--reference gold needs --gold");
        auto reference = ref == ReferenceSource::gold ? positive_pairs(load_labels_csv(sweep_gold))
                                                      : keyword_reference(corpus.stories, corpus.chunks, sweep_min_shared);
        PairCostModel cost{&default_tokenizer(), sweep_overhead};
        auto targets = parse_targets(sweep_targets);
        auto rows = recall_sweep(corpus.stories, corpus.chunks, rankings, reference, targets, cost);
        emit(sweep_out, sweep_csv(rows));
        if (sweep_cand_k > 0) {
            auto cands = block_from_rankings(corpus.stories, corpus.chunks, rankings, sweep_cand_k, cost);
            if (sweep_cand_out.empty()) throw UsageError("--blocking-k needs --candidates-out");
            write_text_file(sweep_cand_out, candidates_csv(cands));
        }
        return 0;
    }

    if (cmp_cmd->parsed()) {
        std::vector<NamedReport> reports;
        for (const auto& spec : cmp_reports) {
            auto eq = spec.find('=');
            std::string name = eq == std::string::npos ? std::filesystem::path(spec).stem().string() : spec.substr(0, eq);
            std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
            reports.push_back({name, load_report(path)});
        }
        std::optional<std::pair<std::size_t, std::size_t>> pair;
        if (!cmp_diff.empty()) {
            auto names = text::split(cmp_diff, ',');
            if (names.size() != 2) throw UsageError("--diff takes two names: A,B");
            auto find = [&](const std::string& n) {
                for (std::size_t i = 0; i < reports.size(); ++i)
                    if (reports[i].name == n) return i;
                throw UsageError("no report named " + n);
            };
            pair = std::pair{find(names[0]), find(names[1])};
        }
        auto cmp = compare_story_sets(reports, pair);
        emit(cmp_out, cmp_json ? dump_fixed(comparison_to_json(cmp, reports)) : comparison_table(cmp, reports));
        return 0;
    }

    if (ann_cmd->parsed()) {
        AnnotationCorpus defaults;
        if (!ann_transcripts.empty() || !ann_stories.empty()) {
            if (ann_transcripts.empty() || ann_stories.empty())
                throw UsageError("a default corpus needs both --transcript and --stories");
            auto corpus = load_corpus(corpus_config(ann_transcripts, ann_stories, ann_chunk));
            defaults = {corpus.chunks, corpus.stories};
        }
        std::unique_ptr<ModelGateway> gateway;
        if (!ann_no_gateway) gateway = std::make_unique<ModelGateway>(ann_gw.config());
        AnnotationService service(ann_store, gateway.get(), defaults);
        AnnotationServer server(service, ann_static);
        int port = server.start(ann_host, ann_port);
        std::fprintf(stderr, "annotation service on http://%s:%d (store %s)\n", ann_host.c_str(), port, ann_store.c_str());
        server.wait();
        return 0;
    }

    if (agr_cmd->parsed()) {
        std::vector<std::vector<AlignmentLabel>> files;
        for (const auto& f : agr_files) files.push_back(load_labels_csv(f));
        auto report = agreement(files);
        emit(agr_out, dump_fixed(agreement_to_json(report, agr_files)));
        return 0;
    }

    if (mock_cmd->parsed()) {
        MockServer mock;
        mock.set_chat_handler(MockServer::keyword_judge(mock_min_shared));
        mock.set_latency(std::chrono::milliseconds(mock_latency));
        int port = mock.start(mock_port);
        std::fprintf(stderr, "mock model endpoint on http://127.0.0.1:%d/v1\n", port);
        mock.wait();
        return 0;
    }
    return static_cast<int>(ErrorKind::usage);
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGPIPE, SIG_IGN);
    try {
        return run(argc, argv);
    } catch (const t2sa::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
        return static_cast<int>(t2sa::ErrorKind::data);
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(t2sa::ErrorKind::data);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(t2sa::ErrorKind::data);
    }
}
