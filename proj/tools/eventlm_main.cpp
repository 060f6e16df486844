// Command-line front end: simulate / prepare / train / eval / predict /
// dump-prompt. Every command that writes artifacts drops a manifest first, so
// a run directory is self-describing. Exit codes: 0 success, 1 usage or
// configuration error, 2 data error, 3 training/runtime error.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eventlm/checkpoint.hpp"
#include "eventlm/errors.hpp"
#include "eventlm/pipeline.hpp"
#include "eventlm/rng.hpp"

using namespace eventlm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------- exit codes --

int exit_code_for(Errc code) {
    switch (code) {
    case Errc::config_error:
    case Errc::invalid_parameter:
        return 1;
    case Errc::ingest_error:
    case Errc::io_error:
    case Errc::no_data:
    case Errc::decode_error:
    case Errc::malformed_text:
    case Errc::malformed_time_tokens:
    case Errc::not_time_ordered:
    case Errc::out_of_domain_time:
    case Errc::invalid_interval:
    case Errc::incompatible_checkpoint:
    case Errc::degenerate_input:
        return 2;
    default:
        return 3;
    }
}

// --------------------------------------------------------- config overlays --

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
    require(obj.is_object(), Errc::config_error, where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](std::string_view name) { return name == key; });
        require(known, Errc::config_error, "unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
    if (const auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

ByteOrder parse_byte_order(const std::string& text) {
    if (text == "msb") return ByteOrder::most_significant_first;
    if (text == "lsb") return ByteOrder::least_significant_first;
    raise(Errc::config_error, "byte order must be 'msb' or 'lsb', got '" + text + "'");
}

void overlay_model(const json& obj, ModelConfig& config) {
    check_keys(obj,
               {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_context", "dropout",
                "rope_base"},
               "model");
    maybe(obj, "vocab_size", config.vocab_size);
    maybe(obj, "d_model", config.d_model);
    maybe(obj, "n_layers", config.n_layers);
    maybe(obj, "n_heads", config.n_heads);
    maybe(obj, "d_ff", config.d_ff);
    maybe(obj, "max_context", config.max_context);
    maybe(obj, "dropout", config.dropout);
    maybe(obj, "rope_base", config.rope_base);
}

void overlay_stage(const json& obj, const std::string& where, TrainConfig& config) {
    check_keys(obj,
               {"learning_rate", "batch_size", "weight_decay", "epochs", "grad_accum_steps",
                "mc_samples", "pair_budget", "clip_norm", "head_steps", "head_lr", "val_prompts"},
               where);
    maybe(obj, "learning_rate", config.learning_rate);
    maybe(obj, "batch_size", config.batch_size);
    maybe(obj, "weight_decay", config.weight_decay);
    maybe(obj, "epochs", config.epochs);
    maybe(obj, "grad_accum_steps", config.grad_accum_steps);
    maybe(obj, "mc_samples", config.mc_samples);
    maybe(obj, "pair_budget", config.pair_budget);
    maybe(obj, "clip_norm", config.clip_norm);
    maybe(obj, "head_steps", config.head_steps);
    maybe(obj, "head_lr", config.head_lr);
    maybe(obj, "val_prompts", config.val_prompts);
}

void overlay_predict(const json& obj, PredictOptions& options) {
    check_keys(obj,
               {"policy", "retries", "retry_temperature", "retry_top_p", "max_new_tokens",
                "max_new_tokens_description"},
               "eval.predict");
    if (obj.contains("policy")) {
        const auto name = obj.at("policy").get<std::string>();
        if (name == "reject") options.policy = MalformedPolicy::reject;
        else if (name == "retry") options.policy = MalformedPolicy::retry;
        else if (name == "fallback") options.policy = MalformedPolicy::fallback;
        else raise(Errc::config_error, "unknown malformed-output policy '" + name + "'");
    }
    maybe(obj, "retries", options.retries);
    maybe(obj, "retry_temperature", options.retry_temperature);
    maybe(obj, "retry_top_p", options.retry_top_p);
    maybe(obj, "max_new_tokens", options.max_new_tokens);
    maybe(obj, "max_new_tokens_description", options.max_new_tokens_description);
}

void overlay_eval(const json& obj, EvalOptions& options) {
    check_keys(obj, {"predict", "mc_samples", "max_prefixes_per_sequence", "with_generation", "with_tll"},
               "eval");
    if (obj.contains("predict")) overlay_predict(obj.at("predict"), options.predict);
    maybe(obj, "mc_samples", options.mc_samples);
    maybe(obj, "max_prefixes_per_sequence", options.max_prefixes_per_sequence);
    maybe(obj, "with_generation", options.with_generation);
    maybe(obj, "with_tll", options.with_tll);
}

void overlay_pipeline(const json& obj, PipelineConfig& config) {
    check_keys(obj,
               {"model", "stage1", "stage2", "stage3", "render", "task_mix", "run_stage1", "seed",
                "eval"},
               "config");
    if (obj.contains("model")) overlay_model(obj.at("model"), config.model);
    if (obj.contains("stage1")) overlay_stage(obj.at("stage1"), "stage1", config.stage1);
    if (obj.contains("stage2")) overlay_stage(obj.at("stage2"), "stage2", config.stage2);
    if (obj.contains("stage3")) overlay_stage(obj.at("stage3"), "stage3", config.stage3);
    if (obj.contains("render")) {
        const json& render = obj.at("render");
        check_keys(render, {"byte_order", "byte_tokens"}, "render");
        if (render.contains("byte_order")) {
            config.render.byte_order = parse_byte_order(render.at("byte_order").get<std::string>());
        }
        maybe(render, "byte_tokens", config.render.byte_tokens);
    }
    if (obj.contains("task_mix")) {
        const json& mix = obj.at("task_mix");
        check_keys(mix, {"time", "type", "description"}, "task_mix");
        maybe(mix, "time", config.task_mix.time);
        maybe(mix, "type", config.task_mix.type);
        maybe(mix, "description", config.task_mix.description);
    }
    maybe(obj, "run_stage1", config.run_stage1);
    maybe(obj, "seed", config.seed);
    if (obj.contains("eval")) overlay_eval(obj.at("eval"), config.eval);
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Errc::io_error, "cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        raise(Errc::config_error, std::string("config is not valid JSON: ") + e.what());
    }
}

json pipeline_config_snapshot(const PipelineConfig& config) {
    const auto stage_json = [](const TrainConfig& stage) {
        return json{{"learning_rate", stage.learning_rate},
                    {"batch_size", stage.batch_size},
                    {"weight_decay", stage.weight_decay},
                    {"epochs", stage.epochs},
                    {"grad_accum_steps", stage.grad_accum_steps},
                    {"mc_samples", stage.mc_samples},
                    {"pair_budget", stage.pair_budget},
                    {"clip_norm", stage.clip_norm},
                    {"head_steps", stage.head_steps},
                    {"head_lr", stage.head_lr},
                    {"val_prompts", stage.val_prompts}};
    };
    return json{{"model",
                 {{"vocab_size", config.model.vocab_size},
                  {"d_model", config.model.d_model},
                  {"n_layers", config.model.n_layers},
                  {"n_heads", config.model.n_heads},
                  {"d_ff", config.model.d_ff},
                  {"max_context", config.model.max_context},
                  {"dropout", config.model.dropout},
                  {"rope_base", config.model.rope_base}}},
                {"stage1", stage_json(config.stage1)},
                {"stage2", stage_json(config.stage2)},
                {"stage3", stage_json(config.stage3)},
                {"render",
                 {{"byte_order", config.render.byte_order == ByteOrder::most_significant_first
                                     ? "msb"
                                     : "lsb"},
                  {"byte_tokens", config.render.byte_tokens}}},
                {"task_mix",
                 {{"time", config.task_mix.time},
                  {"type", config.task_mix.type},
                  {"description", config.task_mix.description}}},
                {"run_stage1", config.run_stage1},
                {"seed", config.seed},
                {"eval",
                 {{"mc_samples", config.eval.mc_samples},
                  {"max_prefixes_per_sequence", config.eval.max_prefixes_per_sequence},
                  {"with_generation", config.eval.with_generation},
                  {"with_tll", config.eval.with_tll}}}};
}

// -------------------------------------------------------------- manifests --

std::uint64_t hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_error, "cannot open '" + path.string() + "' for hashing");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return fnv1a64(buffer.str());
}

std::string hex64(std::uint64_t value) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << value;
    return out.str();
}

// Content hash over a dataset directory: metadata plus all three splits.
std::string hash_dataset_dir(const fs::path& dir) {
    std::uint64_t combined = fnv1a64(dir.string());
    for (const char* name : {"dataset.json", "train.jsonl", "dev.jsonl", "test.jsonl"}) {
        combined = splitmix64(combined ^ hash_file(dir / name));
    }
    return hex64(combined);
}

// Written before any real work so a crashed run still identifies itself. The
// run id is a pure function of command, config, seed and inputs: reruns of
// the same experiment get the same id.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<std::string>& input_hashes,
                    const std::vector<std::string>& outputs) {
    fs::create_directories(out_dir);
    std::uint64_t id = fnv1a64(command) ^ splitmix64(seed) ^ fnv1a64(config.dump());
    for (const std::string& h : input_hashes) id = splitmix64(id ^ fnv1a64(h));
    const json manifest{{"run_id", hex64(id)},    {"command", command}, {"config", config},
                        {"seed", seed},           {"inputs", input_hashes},
                        {"outputs", outputs}};
    std::ofstream out(out_dir / "manifest.json");
    require(out.good(), Errc::io_error, "cannot write manifest in '" + out_dir.string() + "'");
    out << manifest.dump(2) << '\n';
    require(out.good(), Errc::io_error, "failed writing manifest in '" + out_dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    require(out.good(), Errc::io_error, "cannot write '" + path.string() + "'");
    out << text;
    require(out.good(), Errc::io_error, "failed writing '" + path.string() + "'");
}

// Log lines go to stderr and, when a run directory exists, to logs/<name>.log.
LogSink make_log(const fs::path& out_dir, const std::string& name) {
    const fs::path log_path = out_dir / "logs" / (name + ".log");
    fs::create_directories(log_path.parent_path());
    auto file = std::make_shared<std::ofstream>(log_path, std::ios::app);
    require(file->good(), Errc::io_error, "cannot open log '" + log_path.string() + "'");
    return [file](const std::string& line) {
        std::cerr << line << '\n';
        (*file) << line << '\n';
        file->flush();
    };
}

// ---------------------------------------------------------------- simulate --

HawkesSpec spec_from_json(const json& obj) {
    check_keys(obj, {"base_rate", "excitation", "decay"}, "process spec");
    HawkesSpec spec;
    spec.base_rate = obj.at("base_rate").get<std::vector<double>>();
    spec.excitation = obj.at("excitation").get<std::vector<std::vector<double>>>();
    spec.decay = obj.at("decay").get<double>();
    spec.validate();
    return spec;
}

int cmd_simulate(const std::string& family, const std::string& spec_path, double t_end,
                 const std::vector<std::string>& labels, int train_count, int dev_count,
                 int test_count, std::uint64_t seed, const std::string& out_dir) {
    require(family.empty() != spec_path.empty(), Errc::config_error,
            "pass exactly one of --family or --spec");
    json config{{"family", family}, {"spec", spec_path},   {"t_end", t_end},
                {"train", train_count}, {"dev", dev_count}, {"test", test_count}};

    Dataset dataset;
    if (!family.empty()) {
        if (family == "hawkes2") dataset = make_hawkes2(train_count, dev_count, test_count, seed);
        else if (family == "parity") dataset = make_parity(train_count, dev_count, test_count, seed);
        else if (family == "poisson1") dataset = make_poisson1(train_count, dev_count, test_count, seed);
        else raise(Errc::config_error, "unknown family '" + family + "'");
    } else {
        const json obj = load_config_file(spec_path);
        check_keys(obj, {"name", "type_labels", "base_rate", "excitation", "decay"}, "spec file");
        json process = obj;
        process.erase("name");
        process.erase("type_labels");
        const HawkesSpec spec = spec_from_json(process);
        dataset.name = obj.at("name").get<std::string>();
        dataset.type_labels = labels.empty()
                                  ? obj.at("type_labels").get<std::vector<std::string>>()
                                  : labels;
        require(static_cast<int>(dataset.type_labels.size()) == spec.num_types(), Errc::config_error,
                "label count must match the number of process types");
        const auto fill = [&](std::vector<EventSequence>& split, const char* split_name, int count) {
            for (int i = 0; i < count; ++i) {
                SimulateOptions options;
                options.t_end = t_end;
                options.type_labels = dataset.type_labels;
                options.info = dataset.name + " series " + std::to_string(i);
                split.push_back(simulate_hawkes(spec, options, substream_seed(seed, split_name, i)));
            }
        };
        fill(dataset.train, "train", train_count);
        fill(dataset.dev, "dev", dev_count);
        fill(dataset.test, "test", test_count);
        dataset.validate();
    }

    write_manifest(out_dir, "simulate", config, seed, {},
                   {"dataset.json", "train.jsonl", "dev.jsonl", "test.jsonl"});
    save_dataset(out_dir, dataset);
    std::cerr << "simulate: wrote " << dataset.train.size() << "/" << dataset.dev.size() << "/"
              << dataset.test.size() << " sequences to " << out_dir << '\n';
    return 0;
}

// ----------------------------------------------------------------- prepare --

// CSV ingestion: `sequence_id,time,type_label[,description]`, one event per
// row, header optional. Sequences are split chronologically by their first
// event so later activity lands in dev/test.
Dataset ingest_csv(const fs::path& path, const std::string& name, int max_labels, double dev_fraction,
                   double test_fraction) {
    std::ifstream in(path);
    require(in.good(), Errc::io_error, "cannot open '" + path.string() + "'");

    std::map<std::string, std::vector<Event>> by_sequence;
    std::map<std::string, std::size_t> label_counts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream row(line);
        std::string field;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.emplace_back();
        if (line_no == 1 && !fields.empty() && fields[0] == "sequence_id") continue; // header
        require(fields.size() == 3 || fields.size() == 4, Errc::ingest_error,
                path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                    std::to_string(fields.size()));
        Event event;
        try {
            event.time = std::stod(fields[1]);
        } catch (const std::exception&) {
            raise(Errc::ingest_error,
                  path.string() + ":" + std::to_string(line_no) + ": bad time '" + fields[1] + "'");
        }
        event.type_label = fields[2];
        if (fields.size() == 4 && !fields[3].empty()) event.description = fields[3];
        ++label_counts[event.type_label];
        by_sequence[fields[0]].push_back(std::move(event));
    }
    require(!by_sequence.empty(), Errc::no_data, "no events in '" + path.string() + "'");

    // Label table: most frequent labels keep their own row; when a cap is
    // given, everything past it merges into "other" (ties by name).
    std::vector<std::pair<std::string, std::size_t>> ranked(label_counts.begin(), label_counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Dataset dataset;
    dataset.name = name;
    const bool merge_tail = max_labels > 0 && static_cast<int>(ranked.size()) > max_labels;
    const std::size_t kept = merge_tail ? static_cast<std::size_t>(max_labels - 1) : ranked.size();
    for (std::size_t i = 0; i < kept; ++i) dataset.type_labels.push_back(ranked[i].first);
    std::sort(dataset.type_labels.begin(), dataset.type_labels.end());
    if (merge_tail) dataset.type_labels.push_back("other");
    std::map<std::string, int> label_index;
    for (std::size_t i = 0; i < dataset.type_labels.size(); ++i) {
        label_index[dataset.type_labels[i]] = static_cast<int>(i);
    }

    std::vector<EventSequence> sequences;
    bool any_description = false;
    for (auto& [id, events] : by_sequence) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
        EventSequence seq;
        seq.info = "sequence " + id;
        for (Event& event : events) {
            const auto it = label_index.find(event.type_label);
            if (it == label_index.end()) {
                event.type_label = "other";
                event.type_index = label_index.at("other");
            } else {
                event.type_index = it->second;
            }
            any_description |= event.description.has_value();
            seq.events.push_back(std::move(event));
        }
        seq.t_end = seq.events.back().time;
        sequences.push_back(std::move(seq));
    }
    dataset.has_descriptions = any_description;

    std::stable_sort(sequences.begin(), sequences.end(), [](const auto& a, const auto& b) {
        return a.events.front().time < b.events.front().time;
    });
    const auto total = sequences.size();
    const auto test_count = static_cast<std::size_t>(test_fraction * static_cast<double>(total));
    const auto dev_count = static_cast<std::size_t>(dev_fraction * static_cast<double>(total));
    require(test_count + dev_count < total, Errc::config_error,
            "split fractions leave no training sequences");
    const std::size_t train_count = total - dev_count - test_count;
    dataset.train.assign(sequences.begin(), sequences.begin() + static_cast<std::ptrdiff_t>(train_count));
    dataset.dev.assign(sequences.begin() + static_cast<std::ptrdiff_t>(train_count),
                       sequences.begin() + static_cast<std::ptrdiff_t>(train_count + dev_count));
    dataset.test.assign(sequences.begin() + static_cast<std::ptrdiff_t>(train_count + dev_count),
                        sequences.end());
    dataset.validate();
    return dataset;
}

int cmd_prepare(const std::string& in_path, const std::string& format, const std::string& name,
                int max_labels, double dev_fraction, double test_fraction, const std::string& out_dir) {
    Dataset dataset;
    if (format == "csv") {
        dataset = ingest_csv(in_path, name, max_labels, dev_fraction, test_fraction);
    } else if (format == "dataset-dir") {
        dataset = load_dataset(in_path); // validate + re-emit normalized copies
        if (!name.empty()) dataset.name = name;
    } else {
        raise(Errc::config_error, "unknown format '" + format + "'");
    }
    const json config{{"in", in_path},

                      {"format", format},
                      {"max_labels", max_labels},
                      {"dev_fraction", dev_fraction},
                      {"test_fraction", test_fraction}};
    write_manifest(out_dir, "prepare", config, 0, {hex64(hash_file(format == "csv" ? fs::path(in_path) : fs::path(in_path) / "dataset.json"))},
                   {"dataset.json", "train.jsonl", "dev.jsonl", "test.jsonl"});
    save_dataset(out_dir, dataset);
    std::size_t events = 0;
    for (const auto* split : {&dataset.train, &dataset.dev, &dataset.test}) {
        for (const EventSequence& seq : *split) events += seq.events.size();
    }
    std::cerr << "prepare: " << dataset.type_labels.size() << " labels, " << events << " events, "
              << dataset.train.size() << "/" << dataset.dev.size() << "/" << dataset.test.size()
              << " sequences -> " << out_dir << '\n';
    return 0;
}

// ------------------------------------------------------------------- train --

struct TrainArgs {
    std::vector<std::string> data_dirs;
    std::string out_dir;
    std::string config_path;
    std::string init_checkpoint;
    std::vector<int> stages; // empty = all
    std::string profile = "desk";
    std::string byte_order;
    bool no_byte_tokens = false;
    bool no_stage1 = false;
    std::optional<std::uint64_t> seed;
};

PipelineConfig resolve_config(const std::string& profile, const std::string& config_path,
                              const std::string& byte_order, bool no_byte_tokens, bool no_stage1,
                              const std::optional<std::uint64_t>& seed) {
    PipelineConfig config;
    if (profile == "paper") {
        config.stage1 = paper_profile(1);
        config.stage2 = paper_profile(2);
        config.stage3 = paper_profile(3);
    } else {
        require(profile == "desk", Errc::config_error, "profile must be 'desk' or 'paper'");
    }
    if (!config_path.empty()) overlay_pipeline(load_config_file(config_path), config);
    if (!byte_order.empty()) config.render.byte_order = parse_byte_order(byte_order);
    if (no_byte_tokens) config.render.byte_tokens = false;
    if (no_stage1) config.run_stage1 = false;
    if (seed) config.seed = *seed;
    config.validate();
    return config;
}

std::vector<Dataset> load_datasets(const std::vector<std::string>& dirs) {
    require(!dirs.empty(), Errc::config_error, "pass at least one --data directory");
    std::vector<Dataset> datasets;
    for (const std::string& dir : dirs) datasets.push_back(load_dataset(dir));
    return datasets;
}

int cmd_train(const TrainArgs& args) {
    PipelineConfig config = resolve_config(args.profile, args.config_path, args.byte_order,
                                           args.no_byte_tokens, args.no_stage1, args.seed);
    std::vector<int> stages = args.stages;
    if (stages.empty()) stages = {1, 2, 3};
    std::sort(stages.begin(), stages.end());
    require(std::adjacent_find(stages.begin(), stages.end()) == stages.end(), Errc::config_error,
            "each --stage may appear once");
    for (const int stage : stages) {
        require(stage >= 1 && stage <= 3, Errc::config_error, "--stage must be 1, 2 or 3");
    }
    if (!config.run_stage1) std::erase(stages, 1);
    require(!stages.empty(), Errc::config_error, "nothing to train");

    std::vector<std::string> input_hashes;
    for (const std::string& dir : args.data_dirs) input_hashes.push_back(hash_dataset_dir(dir));
    if (!args.init_checkpoint.empty()) {
        input_hashes.push_back(hex64(hash_file(args.init_checkpoint)));
    }
    json config_snapshot = pipeline_config_snapshot(config);
    config_snapshot["stages"] = stages;
    config_snapshot["data"] = args.data_dirs;
    config_snapshot["init"] = args.init_checkpoint;
    std::vector<std::string> outputs;
    for (const int stage : stages) {
        outputs.push_back("checkpoints/stage" + std::to_string(stage) + ".ckpt");
    }
    write_manifest(args.out_dir, "train", config_snapshot, config.seed, input_hashes, outputs);
    const LogSink log = make_log(args.out_dir, "train");

    const Vocabulary vocab;
    TrainConfig stage1 = config.stage1;
    TrainConfig stage2 = config.stage2;
    TrainConfig stage3 = config.stage3;
    for (TrainConfig* stage : {&stage1, &stage2, &stage3}) {
        stage->byte_order = config.render.byte_order;
        stage->use_byte_tokens = config.render.byte_tokens;
    }
    stage1.seed = substream_seed(config.seed, "stage1");
    stage2.seed = substream_seed(config.seed, "stage2");
    stage3.seed = substream_seed(config.seed, "stage3");

    const Corpus corpus = build_corpus(load_datasets(args.data_dirs), vocab, config.render,
                                       substream_seed(config.seed, "corpus"));

    Checkpoint checkpoint;
    if (args.init_checkpoint.empty()) {
        checkpoint.config = config.model;
        checkpoint.stage = "init";
        checkpoint.vocab_hash = vocab.manifest_hash();
        checkpoint.model = Model<float>::init(config.model, substream_seed(config.seed, "init"));
    } else {
        checkpoint = load_checkpoint(args.init_checkpoint, vocab.manifest_hash());
        require(checkpoint.config == config.model || args.config_path.empty(),
                Errc::incompatible_checkpoint,
                "checkpoint model shape disagrees with the configured one");
        config.model = checkpoint.config;
        log("loaded " + args.init_checkpoint + " (" + checkpoint.stage + ")");
    }

    const fs::path ckpt_dir = fs::path(args.out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
    for (const int stage : stages) {
        if (stage == 1) {
            const StageResult result = train_stage1(stage1, corpus, checkpoint.model, log);
            checkpoint.validation["stage1_" + result.metric] = result.best_validation;
        } else if (stage == 2) {
            const auto pairs = sample_pairs(corpus, vocab, stage2.pair_budget, config.task_mix,
                                            substream_seed(config.seed, "pairs"),
                                            config.model.max_context);
            const StageResult result = train_stage2(stage2, corpus, pairs, vocab, checkpoint.model, log);
            checkpoint.validation["stage2_" + result.metric] = result.best_validation;
        } else {
            std::map<std::string, double> validation;
            checkpoint.heads = train_stage3(stage3, corpus, checkpoint.model, &validation, log);
            for (const auto& [key, value] : validation) checkpoint.validation[key] = value;
        }
        checkpoint.stage = "stage" + std::to_string(stage);
        const fs::path path = ckpt_dir / ("stage" + std::to_string(stage) + ".ckpt");
        save_checkpoint(path, checkpoint);
        log("saved " + path.string());
    }
    return 0;
}

// -------------------------------------------------------------------- eval --

int cmd_eval(const std::string& checkpoint_path, const std::vector<std::string>& data_dirs,
             const std::string& out_dir, const std::string& config_path,
             const std::optional<std::uint64_t>& seed) {
    // The same config file that drove training is accepted here; eval uses
    // its `eval`, `render` and `seed` entries and ignores the stage sections.
    EvalOptions options;
    RenderOptions render;
    if (!config_path.empty()) {
        const json obj = load_config_file(config_path);
        PipelineConfig shared;
        overlay_pipeline(obj, shared);
        options = shared.eval;
        render = shared.render;
        if (obj.contains("seed")) options.seed = shared.seed;
    }
    if (seed) options.seed = *seed;

    const Vocabulary vocab;
    const Checkpoint checkpoint = load_checkpoint(checkpoint_path, vocab.manifest_hash());
    const std::vector<Dataset> datasets = load_datasets(data_dirs);

    std::vector<std::string> input_hashes{hex64(hash_file(checkpoint_path))};
    for (const std::string& dir : data_dirs) input_hashes.push_back(hash_dataset_dir(dir));
    const json config{{"checkpoint", checkpoint_path},
                      {"data", data_dirs},
                      {"mc_samples", options.mc_samples},
                      {"max_prefixes_per_sequence", options.max_prefixes_per_sequence},
                      {"with_generation", options.with_generation},
                      {"with_tll", options.with_tll}};
    write_manifest(out_dir, "eval", config, options.seed, input_hashes,
                   {"reports/reports.json", "reports/reports.csv"});
    const LogSink log = make_log(out_dir, "eval");

    std::vector<MetricReport> reports;
    for (const Dataset& dataset : datasets) {
        if (dataset.test.empty()) {
            log("eval " + dataset.name + ": no test split, skipped");
            continue;
        }
        const IntensityHead* head = nullptr;
        if (const auto it = checkpoint.heads.find(dataset.name); it != checkpoint.heads.end()) {
            head = &it->second;
        } else {
            log("eval " + dataset.name + ": no intensity head in checkpoint, likelihood skipped");
        }
        if (!dataset.has_descriptions) {
            log("eval " + dataset.name + ": no descriptions, text metrics skipped");
        }
        EvalOptions per_dataset = options;
        per_dataset.seed = substream_seed(options.seed, dataset.name);
        const auto batch =
            evaluate_dataset(checkpoint.model, head, dataset, vocab, render, per_dataset);
        for (const MetricReport& report : batch) {
            log(report.dataset + " " + report.task + " " + report.metric + " = " +
                std::to_string(report.value) + " (n=" + std::to_string(report.n) + ")");
            reports.push_back(report);
        }
    }
    write_text(fs::path(out_dir) / "reports" / "reports.json", reports_json(reports));
    write_text(fs::path(out_dir) / "reports" / "reports.csv", reports_csv(reports));
    return 0;
}

// ------------------------------------------------------------ predict/dump --

const std::vector<EventSequence>& pick_split(const Dataset& dataset, const std::string& split) {
    if (split == "train") return dataset.train;
    if (split == "dev") return dataset.dev;
    if (split == "test") return dataset.test;
    raise(Errc::config_error, "split must be train, dev or test");
}

int cmd_predict(const std::string& checkpoint_path, const std::string& data_dir,
                const std::string& split, int sequence, int prefix, const std::string& task_text,
                const std::string& policy, std::uint64_t seed) {
    const Vocabulary vocab;
    const Checkpoint checkpoint = load_checkpoint(checkpoint_path, vocab.manifest_hash());
    const Dataset dataset = load_dataset(data_dir);
    const auto& sequences = pick_split(dataset, split);
    require(sequence >= 0 && sequence < static_cast<int>(sequences.size()), Errc::invalid_parameter,
            "sequence index out of range");
    const EventSequence& full = sequences[static_cast<std::size_t>(sequence)];
    require(prefix >= 1 && prefix <= static_cast<int>(full.events.size()), Errc::invalid_prefix,
            "prefix must keep between 1 and all observed events");

    EventSequence head_events;
    head_events.info = full.info;
    head_events.events.assign(full.events.begin(), full.events.begin() + prefix);
    head_events.t_end = head_events.events.back().time;

    const DatasetStats stats = compute_stats(dataset);
    PredictOptions options;
    options.fallback_interval = stats.mean_interval;
    options.fallback_label = stats.modal_label;
    options.seed = seed;
    if (policy == "reject") options.policy = MalformedPolicy::reject;
    else if (policy == "retry") options.policy = MalformedPolicy::retry;
    else if (policy == "fallback") options.policy = MalformedPolicy::fallback;
    else raise(Errc::config_error, "policy must be reject, retry or fallback");

    const TaskKind task = parse_task(task_text);
    const PredictResult result =
        predict_next(checkpoint.model, vocab, head_events, task, RenderOptions{}, options);

    json output{{"task", std::string(task_name(task))},
                {"fell_back", result.fell_back},
                {"malformed_attempts", result.malformed_attempts}};
    if (task == TaskKind::time_prediction) {
        output["interval"] = result.prediction.interval;
        output["absolute_time"] = result.absolute_time;
    } else {
        output["text"] = result.prediction.text;
    }
    std::cout << output.dump(2) << '\n';
    return 0;
}

int cmd_dump_prompt(const std::string& data_dir, const std::string& split, int sequence, int prefix,
                    const std::string& task_text, const std::string& byte_order, bool no_byte_tokens) {
    const Vocabulary vocab;
    const Dataset dataset = load_dataset(data_dir);
    const auto& sequences = pick_split(dataset, split);
    require(sequence >= 0 && sequence < static_cast<int>(sequences.size()), Errc::invalid_parameter,
            "sequence index out of range");
    RenderOptions render;
    if (!byte_order.empty()) render.byte_order = parse_byte_order(byte_order);
    render.byte_tokens = !no_byte_tokens;

    const TemplateDoc doc = render_sequence(sequences[static_cast<std::size_t>(sequence)], vocab, render);
    if (prefix <= 0) {
        std::cout << pretty_print(doc.tokens, vocab);
        return 0;
    }
    const TaskKind task = parse_task(task_text);
    const auto prompt = make_prompt(doc, prefix, task, vocab);
    std::cout << pretty_print(prompt, vocab);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"byte-token event-sequence language model"};
    app.require_subcommand(1);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    std::string family, spec_path, out_dir;
    std::vector<std::string> labels;
    double t_end = 50.0;
    int train_count = 100, dev_count = 20, test_count = 20;
    std::uint64_t seed = 0;
    simulate->add_option("--family", family, "built-in generator: hawkes2|parity|poisson1");
    simulate->add_option("--spec", spec_path, "JSON process spec file");
    simulate->add_option("--t-end", t_end, "observation window for --spec runs");
    simulate->add_option("--labels", labels, "type labels for --spec runs");
    simulate->add_option("--train", train_count, "training sequences");
    simulate->add_option("--dev", dev_count, "dev sequences");
    simulate->add_option("--test", test_count, "test sequences");
    simulate->add_option("--seed", seed, "root seed");
    simulate->add_option("--out", out_dir, "output dataset directory")->required();

    // prepare
    auto* prepare = app.add_subcommand("prepare", "normalize an external dataset");
    std::string in_path, format = "csv", name = "prepared";
    int max_labels = 0;
    double dev_fraction = 0.1, test_fraction = 0.1;
    prepare->add_option("--in", in_path, "input file or dataset directory")->required();
    prepare->add_option("--format", format, "csv|dataset-dir");
    prepare->add_option("--name", name, "dataset name");
    prepare->add_option("--max-labels", max_labels, "cap label table, merging the tail into 'other'");
    prepare->add_option("--dev-fraction", dev_fraction, "chronological dev share");
    prepare->add_option("--test-fraction", test_fraction, "chronological test share");
    prepare->add_option("--out", out_dir, "output dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "run training stages");
    TrainArgs train_args;
    std::uint64_t train_seed = 0;
    bool train_seed_set = false;
    train->add_option("--data", train_args.data_dirs, "dataset directories")->required();
    train->add_option("--out", train_args.out_dir, "run directory")->required();
    train->add_option("--config", train_args.config_path, "JSON config file");
    train->add_option("--init", train_args.init_checkpoint, "checkpoint to continue from");
    train->add_option("--stage", train_args.stages, "stages to run (default: all)");
    train->add_option("--profile", train_args.profile, "desk|paper");
    train->add_option("--byte-order", train_args.byte_order, "msb|lsb");
    train->add_flag("--no-byte-tokens", train_args.no_byte_tokens, "render times as plain numbers");
    train->add_flag("--no-stage1", train_args.no_stage1, "skip next-token pretraining");
    train->add_option("--seed", train_seed, "root seed")->each([&](const std::string&) {
        train_seed_set = true;
    });

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint, eval_config;
    std::vector<std::string> eval_data;
    std::string eval_out;
    std::uint64_t eval_seed = 0;
    bool eval_seed_set = false;
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset directories")->required();
    eval->add_option("--out", eval_out, "run directory")->required();
    eval->add_option("--config", eval_config, "JSON config file (eval section)");
    eval->add_option("--seed", eval_seed, "root seed")->each([&](const std::string&) {
        eval_seed_set = true;
    });

    // predict
    auto* predict = app.add_subcommand("predict", "predict the next event after a prefix");
    std::string predict_checkpoint, predict_data, predict_split = "test", predict_task = "time";
    std::string predict_policy = "fallback";
    int predict_sequence = 0, predict_prefix = 1;
    std::uint64_t predict_seed = 0;
    predict->add_option("--checkpoint", predict_checkpoint, "checkpoint file")->required();
    predict->add_option("--data", predict_data, "dataset directory")->required();
    predict->add_option("--split", predict_split, "train|dev|test");
    predict->add_option("--sequence", predict_sequence, "sequence index");
    predict->add_option("--prefix", predict_prefix, "observed events");
    predict->add_option("--task", predict_task, "time|type|description");
    predict->add_option("--policy", predict_policy, "reject|retry|fallback");
    predict->add_option("--seed", predict_seed, "root seed");

    // dump-prompt
    auto* dump = app.add_subcommand("dump-prompt", "print a rendered document or prompt");
    std::string dump_data, dump_split = "train", dump_task = "time", dump_byte_order;
    int dump_sequence = 0, dump_prefix = 0;
    bool dump_no_bytes = false;
    dump->add_option("--data", dump_data, "dataset directory")->required();
    dump->add_option("--split", dump_split, "train|dev|test");
    dump->add_option("--sequence", dump_sequence, "sequence index");
    dump->add_option("--prefix", dump_prefix, "prompt after this many events (0 = whole document)");
    dump->add_option("--task", dump_task, "time|type|description");
    dump->add_option("--byte-order", dump_byte_order, "msb|lsb");
    dump->add_flag("--no-byte-tokens", dump_no_bytes, "render times as plain numbers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (simulate->parsed()) {
            return cmd_simulate(family, spec_path, t_end, labels, train_count, dev_count, test_count,
                                seed, out_dir);
        }
        if (prepare->parsed()) {
            return cmd_prepare(in_path, format, name, max_labels, dev_fraction, test_fraction, out_dir);
        }
        if (train->parsed()) {
            if (train_seed_set) train_args.seed = train_seed;
            return cmd_train(train_args);
        }
        if (eval->parsed()) {
            return cmd_eval(eval_checkpoint, eval_data, eval_out, eval_config,
                            eval_seed_set ? std::optional<std::uint64_t>(eval_seed) : std::nullopt);
        }
        if (predict->parsed()) {
            return cmd_predict(predict_checkpoint, predict_data, predict_split, predict_sequence,
                               predict_prefix, predict_task, predict_policy, predict_seed);
        }
        if (dump->parsed()) {
            return cmd_dump_prompt(dump_data, dump_split, dump_sequence, dump_prefix, dump_task,
                                   dump_byte_order, dump_no_bytes);
        }
    } catch (const Error& error) {
        std::cerr << "error: " << error.what() << '\n';
        return exit_code_for(error.code());
    } catch (const std::exception& error) {
        std::cerr << "error: " << error.what() << '\n';
        return 3;
    }
    return 1;
}
