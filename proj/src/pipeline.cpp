#include "eventlm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "eventlm/errors.hpp"
#include "eventlm/rng.hpp"

namespace eventlm {

using nlohmann::json;

// ---------------------------------------------------------------- datasets --

void Dataset::validate() const {
    require(!name.empty(), Errc::config_error, "dataset needs a name");
    require(!type_labels.empty(), Errc::config_error, "dataset '" + name + "' has no type labels");
    const auto check_split = [&](const std::vector<EventSequence>& split, const char* split_name) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            split[i].validate();
            for (const Event& event : split[i].events) {
                require(event.type_index >= 0 && event.type_index < num_types(), Errc::ingest_error,
                        "dataset '" + name + "' " + split_name + " sequence " + std::to_string(i) +
                            ": type index " + std::to_string(event.type_index) + " outside the " +
                            std::to_string(num_types()) + "-label table");
            }
        }
    };
    check_split(train, "train");
    check_split(dev, "dev");
    check_split(test, "test");
}

namespace {

json dataset_meta(const Dataset& dataset) {
    json meta;
    meta["name"] = dataset.name;
    meta["type_labels"] = dataset.type_labels;
    meta["has_descriptions"] = dataset.has_descriptions;
    return meta;
}

} // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    dataset.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, Errc::io_error, "cannot create '" + dir.string() + "': " + ec.message());
    std::ofstream meta(dir / "dataset.json");
    require(meta.good(), Errc::io_error, "cannot write '" + (dir / "dataset.json").string() + "'");
    meta << dataset_meta(dataset).dump(2) << '\n';
    require(meta.good(), Errc::io_error, "write failed for '" + (dir / "dataset.json").string() + "'");
    write_jsonl_file((dir / "train.jsonl").string(), dataset.train);
    write_jsonl_file((dir / "dev.jsonl").string(), dataset.dev);
    write_jsonl_file((dir / "test.jsonl").string(), dataset.test);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto meta_path = dir / "dataset.json";
    std::ifstream in(meta_path);
    require(in.good(), Errc::io_error, "cannot open '" + meta_path.string() + "'");
    json meta;
    try {
        meta = json::parse(in);
    } catch (const json::exception& e) {
        raise(Errc::ingest_error, meta_path.string() + ": " + e.what());
    }
    Dataset dataset;
    try {
        dataset.name = meta.at("name").get<std::string>();
        dataset.type_labels = meta.at("type_labels").get<std::vector<std::string>>();
        dataset.has_descriptions = meta.at("has_descriptions").get<bool>();
    } catch (const json::exception& e) {
        raise(Errc::ingest_error, meta_path.string() + ": " + e.what());
    }
    dataset.train = read_jsonl_file((dir / "train.jsonl").string());
    dataset.dev = read_jsonl_file((dir / "dev.jsonl").string());
    dataset.test = read_jsonl_file((dir / "test.jsonl").string());
    dataset.validate();
    return dataset;
}

DatasetStats compute_stats(const Dataset& dataset) {
    DatasetStats stats;
    stats.modal_label = dataset.type_labels.empty() ? std::string() : dataset.type_labels.front();
    double gap_sum = 0.0;
    std::size_t gap_count = 0;
    std::map<std::string, std::size_t> label_counts;
    for (const EventSequence& seq : dataset.train) {
        for (std::size_t i = 1; i < seq.events.size(); ++i) {
            gap_sum += seq.events[i].time - seq.events[i - 1].time;
            ++gap_count;
        }
        for (const Event& event : seq.events) ++label_counts[event.type_label];
    }
    if (gap_count > 0) stats.mean_interval = gap_sum / static_cast<double>(gap_count);
    std::size_t best = 0;
    for (const auto& [label, count] : label_counts) {
        if (count > best) { // map order makes ties deterministic
            best = count;
            stats.modal_label = label;
        }
    }
    return stats;
}

// -------------------------------------------------------- synthetic corpora --

HawkesSpec hawkes2_spec() {
    HawkesSpec spec;
    spec.base_rate = {0.0656, 0.0394};
    spec.excitation = {{0.1314, 0.0876}, {0.0657, 0.1533}};
    spec.decay = 0.3;
    return spec;
}

Dataset make_hawkes2(int train_count, int dev_count, int test_count, std::uint64_t seed) {
    const HawkesSpec spec = hawkes2_spec();
    Dataset dataset;
    dataset.name = "hawkes2";
    dataset.type_labels = {"red", "blue"};
    const auto fill = [&](std::vector<EventSequence>& split, const char* split_name, int count) {
        split.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            SimulateOptions options;
            options.t_end = 50.0;
            options.type_labels = dataset.type_labels;
            options.info = "mutually exciting red/blue alert stream, series " + std::to_string(i);
            split.push_back(simulate_hawkes(spec, options, substream_seed(seed, split_name, i)));
        }
    };
    fill(dataset.train, "train", train_count);
    fill(dataset.dev, "dev", dev_count);
    fill(dataset.test, "test", test_count);
    dataset.validate();
    return dataset;
}

Dataset make_parity(int train_count, int dev_count, int test_count, std::uint64_t seed) {
    Dataset dataset;
    dataset.name = "parity";
    dataset.type_labels = {"tick", "tock"};
    constexpr double t_end = 25.0;
    const auto fill = [&](std::vector<EventSequence>& split, const char* split_name, int count) {
        split.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            auto rng = make_rng(substream_seed(seed, split_name, i), "gaps");
            std::uniform_real_distribution<double> jitter(0.85, 1.15);
            EventSequence seq;
            seq.t_end = t_end;
            seq.info = "strict tick/tock alternation, series " + std::to_string(i);
            double t = 0.0;
            for (int idx = 0;; ++idx) {
                const double mean = idx % 2 == 0 ? 0.5 : 2.0;
                t += mean * jitter(rng);
                if (t > t_end) break;
                Event event;
                event.time = t;
                event.type_index = idx % 2;
                event.type_label = dataset.type_labels[static_cast<std::size_t>(idx % 2)];
                seq.events.push_back(std::move(event));
            }
            split.push_back(std::move(seq));
        }
    };
    fill(dataset.train, "train", train_count);
    fill(dataset.dev, "dev", dev_count);
    fill(dataset.test, "test", test_count);
    dataset.validate();
    return dataset;
}

Dataset make_poisson1(int train_count, int dev_count, int test_count, std::uint64_t seed) {
    HawkesSpec spec;
    spec.base_rate = {0.7};
    spec.excitation = {{0.0}};
    spec.decay = 1.0;
    Dataset dataset;
    dataset.name = "poisson1";
    dataset.type_labels = {"ping"};
    const auto fill = [&](std::vector<EventSequence>& split, const char* split_name, int count) {
        split.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            SimulateOptions options;
            options.t_end = 20.0;
            options.type_labels = dataset.type_labels;
            options.info = "memoryless ping stream, series " + std::to_string(i);
            split.push_back(simulate_hawkes(spec, options, substream_seed(seed, split_name, i)));
        }
    };
    fill(dataset.train, "train", train_count);
    fill(dataset.dev, "dev", dev_count);
    fill(dataset.test, "test", test_count);
    dataset.validate();
    return dataset;
}

// ----------------------------------------------------------- merged corpus --

Corpus build_corpus(std::vector<Dataset> datasets, const Vocabulary& vocab, const RenderOptions& render,
                    std::uint64_t seed) {
    require(!datasets.empty(), Errc::no_data, "no datasets to merge");
    Corpus corpus;
    corpus.render = render;
    corpus.datasets = std::move(datasets);
    for (std::size_t d = 0; d < corpus.datasets.size(); ++d) {
        const Dataset& dataset = corpus.datasets[d];
        dataset.validate();
        corpus.stats.push_back(compute_stats(dataset));
        for (std::size_t s = 0; s < dataset.train.size(); ++s) {
            corpus.train_docs.push_back({static_cast<int>(d), static_cast<int>(s),
                                         render_sequence(dataset.train[s], vocab, render)});
        }
        for (std::size_t s = 0; s < dataset.dev.size(); ++s) {
            corpus.dev_docs.push_back({static_cast<int>(d), static_cast<int>(s),
                                       render_sequence(dataset.dev[s], vocab, render)});
        }
    }
    require(!corpus.train_docs.empty(), Errc::no_data, "merged training split is empty");
    auto rng = make_rng(seed, "corpus.shuffle");
    std::shuffle(corpus.train_docs.begin(), corpus.train_docs.end(), rng);
    return corpus;
}

// --------------------------------------------------- training configuration --

void TrainConfig::validate() const {
    require(stage >= 1 && stage <= 3, Errc::config_error, "stage must be 1, 2 or 3");
    require(learning_rate > 0.0, Errc::config_error, "learning rate must be positive");
    require(batch_size >= 1, Errc::config_error, "batch size must be positive");
    require(weight_decay >= 0.0, Errc::config_error, "weight decay must be non-negative");
    require(epochs >= 1, Errc::config_error, "epochs must be positive");
    require(grad_accum_steps >= 1, Errc::config_error, "gradient accumulation must be positive");
    require(mc_samples >= 1, Errc::config_error, "integral sample count must be positive");
    require(pair_budget >= 1, Errc::config_error, "pair budget must be positive");
    require(clip_norm >= 0.0, Errc::config_error, "clip norm must be non-negative");
    require(head_steps >= 1, Errc::config_error, "head steps must be positive");
    require(head_lr > 0.0, Errc::config_error, "head step size must be positive");
    require(val_prompts >= 0, Errc::config_error, "validation prompt budget must be non-negative");
}

TrainConfig desk_profile(int stage) {
    require(stage >= 1 && stage <= 3, Errc::config_error, "stage must be 1, 2 or 3");
    TrainConfig config;
    config.stage = stage;
    // The published learning rate (1e-4) is tied to budgets two orders of
    // magnitude larger; within a few hundred optimiser steps from random
    // parameters it underfits badly, so the desk profile runs hotter.
    config.learning_rate = 3e-4;
    config.weight_decay = 0.01;
    config.grad_accum_steps = 1;
    switch (stage) {
    case 1:
        config.epochs = 3;
        config.batch_size = 4;
        break;
    case 2:
        config.epochs = 1;
        config.batch_size = 4;
        config.pair_budget = 5000;
        config.val_prompts = 128;
        break;
    default:
        config.epochs = 1;
        config.batch_size = 32; // recorded only; the head fit is full-batch
        config.mc_samples = 10;
        config.head_steps = 300;
        config.head_lr = 0.05;
        break;
    }
    return config;
}

TrainConfig paper_profile(int stage) {
    require(stage >= 1 && stage <= 3, Errc::config_error, "stage must be 1, 2 or 3");
    TrainConfig config;
    config.stage = stage;
    config.learning_rate = 1e-4;
    config.weight_decay = 0.01;
    config.epochs = 5;
    config.grad_accum_steps = 4;
    config.batch_size = stage == 3 ? 32 : 4;
    config.pair_budget = 50000;
    config.mc_samples = 10;
    return config;
}

// ------------------------------------------------- stage-2 prompt sampling --

std::vector<TokenId> pair_tokens(const PromptPair& pair) {
    std::vector<TokenId> tokens;
    tokens.reserve(pair.prompt.size() + pair.response.size());
    tokens.insert(tokens.end(), pair.prompt.begin(), pair.prompt.end());
    tokens.insert(tokens.end(), pair.response.begin(), pair.response.end());
    return tokens;
}

std::vector<std::uint8_t> response_mask(std::size_t prompt_len, std::size_t total_len) {
    require(prompt_len >= 1, Errc::empty_loss_mask, "prompt must be nonempty");
    require(total_len > prompt_len, Errc::empty_loss_mask, "response must be nonempty");
    std::vector<std::uint8_t> mask(total_len - 1, 0);
    for (std::size_t r = prompt_len - 1; r < total_len - 1; ++r) mask[r] = 1;
    return mask;
}

std::vector<PromptPair> sample_pairs(const Corpus& corpus, const Vocabulary& vocab, int budget,
                                     const TaskMix& mix, std::uint64_t seed, int max_tokens) {
    require(budget >= 1, Errc::invalid_parameter, "pair budget must be positive");
    require(mix.time >= 0.0 && mix.type >= 0.0 && mix.description >= 0.0 &&
                mix.time + mix.type + mix.description > 0.0,
            Errc::config_error, "task mix needs non-negative weights with a positive sum");

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < corpus.train_docs.size(); ++i) {
        if (corpus.train_docs[i].doc.events.size() >= 2) eligible.push_back(i);
    }
    require(!eligible.empty(), Errc::no_data, "no training document offers a prefix and a target");

    auto rng = make_rng(seed, "pairs");
    std::uniform_int_distribution<std::size_t> pick_doc(0, eligible.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<PromptPair> pairs;
    pairs.reserve(static_cast<std::size_t>(budget));
    const std::size_t attempt_cap = 20 * static_cast<std::size_t>(budget) + 100;
    std::size_t attempts = 0;
    while (pairs.size() < static_cast<std::size_t>(budget)) {
        require(attempts++ < attempt_cap, Errc::no_data,
                "could not draw enough prompt-response pairs under the token cap");
        const CorpusDoc& source = corpus.train_docs[eligible[pick_doc(rng)]];
        const int total_events = static_cast<int>(source.doc.events.size());
        std::uniform_int_distribution<int> pick_prefix(1, total_events - 1);
        const int prefix = pick_prefix(rng);
        const double u = unit(rng); // drawn every attempt so the stream shape is fixed

        const bool with_description =
            source.doc.events[static_cast<std::size_t>(prefix)].description_text.has_value();
        const double w_time = mix.time;
        const double w_type = mix.type;
        const double w_desc = with_description ? mix.description : 0.0;
        const double total_w = w_time + w_type + w_desc;
        if (total_w <= 0.0) continue;
        TaskKind task = TaskKind::description_prediction;
        const double mark = u * total_w;
        if (mark < w_time) {
            task = TaskKind::time_prediction;
        } else if (mark < w_time + w_type) {
            task = TaskKind::type_prediction;
        }

        PromptPair pair;
        pair.dataset = source.dataset;
        pair.sequence = source.sequence;
        pair.prefix_events = prefix;
        pair.task = task;
        pair.prompt = make_prompt(source.doc, prefix, task, vocab);
        pair.response = make_response(source.doc, prefix, task, vocab);
        if (max_tokens > 0 &&
            pair.prompt.size() + pair.response.size() > static_cast<std::size_t>(max_tokens)) {
            continue;
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

// ------------------------------------------------------------ shared pieces --

namespace {

std::string_view trimmed(std::string_view text) {
    const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    std::size_t begin = 0, end = text.size();
    while (begin < end && is_space(text[begin])) ++begin;
    while (end > begin && is_space(text[end - 1])) --end;
    return text.substr(begin, end - begin);
}

// Largest renderable slice of a document under a token budget: whole events
// only, cut right after the last fitting event's closing token.
struct CutInfo {
    int events = 0;   // events kept
    int tokens = 0;   // tokens kept
    bool truncated = false;
};

CutInfo usable_cut(const TemplateDoc& doc, int max_tokens) {
    if (static_cast<int>(doc.tokens.size()) <= max_tokens) {
        return {static_cast<int>(doc.events.size()), static_cast<int>(doc.tokens.size()), false};
    }
    int kept = 0;
    while (kept < static_cast<int>(doc.events.size()) &&
           doc.events[static_cast<std::size_t>(kept)].whole.end <= max_tokens) {
        ++kept;
    }
    const int tokens = kept > 0 ? doc.events[static_cast<std::size_t>(kept - 1)].whole.end
                                : std::min(doc.system.end, max_tokens);
    return {kept, tokens, true};
}

struct AdamState {
    std::vector<float> m, v;
    std::vector<std::uint8_t> decay_mask; // decay matrices only, never norm gains
    int step = 0;
};

AdamState make_adam_state(const Model<float>& model) {
    AdamState state;
    state.m.assign(model.parameter_count(), 0.0f);
    state.v.assign(model.parameter_count(), 0.0f);
    state.decay_mask.assign(model.parameter_count(), 0);
    for (const auto& entry : model.store.entries) {
        if (!entry.matrix || !entry.trainable) continue;
        std::fill(state.decay_mask.begin() + static_cast<std::ptrdiff_t>(entry.offset),
                  state.decay_mask.begin() + static_cast<std::ptrdiff_t>(entry.offset + entry.size), 1);
    }
    return state;
}

void clip_global_norm(std::vector<float>& grads, double ceiling) {
    if (ceiling <= 0.0) return;
    double sum_sq = 0.0;
    for (const float g : grads) sum_sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sum_sq);
    if (norm <= ceiling || norm == 0.0) return;
    const auto scale = static_cast<float>(ceiling / norm);
    for (float& g : grads) g *= scale;
}

double warmed_lr(double lr, int step, int total_steps) {
    const int warmup = std::max(1, total_steps / 100); // 1% of steps, then constant
    return step < warmup ? lr * static_cast<double>(step) / warmup : lr;
}

void check_render_consistency(const TrainConfig& config, const Corpus& corpus) {
    require(corpus.render.byte_order == config.byte_order &&
                corpus.render.byte_tokens == config.use_byte_tokens,
            Errc::config_error, "corpus was rendered under different codec settings than the stage config");
}

// Token-weighted mean next-token NLL over the dev documents; empty when there
// are none (or none fit the context).
std::optional<double> dev_nll(const Model<float>& model, const Corpus& corpus, Workspace<float>& ws) {
    double total = 0.0;
    std::size_t count = 0;
    for (const CorpusDoc& entry : corpus.dev_docs) {
        const CutInfo cut = usable_cut(entry.doc, model.config.max_context);
        if (cut.tokens < 2) continue;
        const std::span<const TokenId> tokens(entry.doc.tokens.data(), static_cast<std::size_t>(cut.tokens));
        const std::vector<std::uint8_t> mask(tokens.size() - 1, 1);
        const auto result = sequence_nll<float>(model, tokens, mask, nullptr, ws);
        total += static_cast<double>(result.loss) * result.masked_count;
        count += static_cast<std::size_t>(result.masked_count);
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
}

std::string format_double(double value) {
    std::ostringstream out;
    out.precision(6);
    out << value;
    return out.str();
}

} // namespace

// --------------------------------------------------------------- stage 1/2 --

namespace {

// One training example: a token stream and its target mask.
struct StreamView {
    const std::vector<TokenId>* tokens = nullptr;
    int cut = 0; // tokens used (<= tokens->size())
    std::vector<std::uint8_t> mask;
};

// The shared optimiser loop behind stages 1 and 2: epochs of shuffled
// micro-batches, one AdamW step per `batch_size * grad_accum_steps` streams,
// equal stream weights, warmup + clipping, divergence checks. Validation and
// checkpoint selection are the caller's policy, injected per epoch.
StageResult run_lm_training(const TrainConfig& config, Model<float>& model,
                            std::span<const StreamView> streams, const std::string& metric,
                            bool higher_is_better,
                            const std::function<double(int, double)>& epoch_validation,
                            const LogSink& log) {
    StageResult result;
    result.metric = metric;
    require(!streams.empty(), Errc::no_data, "no training streams fit the model context");

    AdamState opt = make_adam_state(model);
    Workspace<float> ws;
    std::vector<float> grads(model.parameter_count(), 0.0f);
    const std::size_t chunk =
        static_cast<std::size_t>(config.batch_size) * static_cast<std::size_t>(config.grad_accum_steps);
    const int steps_per_epoch = static_cast<int>((streams.size() + chunk - 1) / chunk);
    const int total_steps = steps_per_epoch * config.epochs;

    std::vector<std::size_t> order(streams.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<float> best_params;
    double best = higher_is_better ? -std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::infinity();
    std::uint64_t stream_counter = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto rng = make_rng(substream_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)),
                            "shuffle");
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += chunk) {
            const std::size_t stop = std::min(order.size(), start + chunk);
            std::fill(grads.begin(), grads.end(), 0.0f);
            for (std::size_t j = start; j < stop; ++j) {
                const StreamView& view = streams[order[j]];
                const std::span<const TokenId> tokens(view.tokens->data(),
                                                      static_cast<std::size_t>(view.cut));
                const auto nll = sequence_nll(model, tokens, view.mask, &grads, ws,
                                              substream_seed(config.seed, "dropout", stream_counter++));
                require(std::isfinite(nll.loss), Errc::training_diverged,
                        "loss is not finite at epoch " + std::to_string(epoch));
                epoch_loss += static_cast<double>(nll.loss) * nll.masked_count;
                epoch_tokens += static_cast<std::size_t>(nll.masked_count);
            }
            const auto inv = 1.0f / static_cast<float>(stop - start);
            for (float& g : grads) g *= inv;
            model.zero_frozen(grads);
            clip_global_norm(grads, config.clip_norm);
            ++opt.step;
            kernels::adamw_step(model.store.data.data(), grads.data(), opt.m.data(), opt.v.data(),
                                opt.decay_mask.data(), grads.size(),
                                warmed_lr(config.learning_rate, opt.step, total_steps), 0.9, 0.999, 1e-8,
                                config.weight_decay, opt.step);
        }

        const double train_mean =
            epoch_tokens > 0 ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
        const double score = epoch_validation(epoch, train_mean);
        result.epoch_validation.push_back(score);
        if (log) {
            log("stage" + std::to_string(config.stage) + " epoch " + std::to_string(epoch) +
                ": train nll " + format_double(train_mean) + ", " + metric + " " + format_double(score));
        }
        const bool improved = higher_is_better ? score >= best : score < best;
        if (improved) {
            best = score;
            result.best_epoch = epoch;
            best_params = model.store.data;
        }
    }
    if (!best_params.empty()) model.store.data = best_params;
    result.best_validation = best;
    return result;
}

} // namespace

StageResult train_stage1(const TrainConfig& config, const Corpus& corpus, Model<float>& model,
                         const LogSink& log) {
    config.validate();
    require(config.stage == 1, Errc::config_error, "train_stage1 needs a stage-1 config");
    model.config.validate();
    check_render_consistency(config, corpus);
    require(!corpus.train_docs.empty(), Errc::no_data, "corpus has no training documents");

    std::size_t truncated = 0;
    std::vector<StreamView> streams;
    streams.reserve(corpus.train_docs.size());
    for (const CorpusDoc& entry : corpus.train_docs) {
        const CutInfo cut = usable_cut(entry.doc, model.config.max_context);
        if (cut.truncated) ++truncated;
        if (cut.tokens < 2) continue;
        StreamView view;
        view.tokens = &entry.doc.tokens;
        view.cut = cut.tokens;
        view.mask.assign(static_cast<std::size_t>(cut.tokens) - 1, 1);
        streams.push_back(std::move(view));
    }

    Workspace<float> val_ws;
    const auto validation = [&](int, double train_mean) {
        const auto dev = dev_nll(model, corpus, val_ws);
        return dev.value_or(train_mean); // no dev split: select on the train epoch mean
    };
    StageResult result =
        run_lm_training(config, model, streams, "dev_nll_per_token", false, validation, log);
    result.truncated_docs = truncated;
    return result;
}

namespace {

struct ValPrompt {
    std::vector<TokenId> prompt;
    std::string truth;
};

// A fixed draw of dev type-prediction prompts, reused by every epoch so the
// per-epoch accuracies are paired.
std::vector<ValPrompt> stage2_validation_prompts(const TrainConfig& config, const Corpus& corpus,
                                                 const Vocabulary& vocab, int max_context) {
    std::vector<std::pair<std::size_t, int>> slots; // (dev doc, prefix)
    for (std::size_t i = 0; i < corpus.dev_docs.size(); ++i) {
        const int events = static_cast<int>(corpus.dev_docs[i].doc.events.size());
        for (int k = 1; k < events; ++k) slots.emplace_back(i, k);
    }
    if (slots.empty() || config.val_prompts == 0) return {};
    auto rng = make_rng(config.seed, "val.prompts");
    std::shuffle(slots.begin(), slots.end(), rng);

    std::vector<ValPrompt> prompts;
    for (const auto& [index, prefix] : slots) {
        if (prompts.size() >= static_cast<std::size_t>(config.val_prompts)) break;
        const CorpusDoc& entry = corpus.dev_docs[index];
        ValPrompt vp;
        vp.prompt = make_prompt(entry.doc, prefix, TaskKind::type_prediction, vocab);
        if (static_cast<int>(vp.prompt.size()) + 33 > max_context) continue;
        const Dataset& dataset = corpus.datasets[static_cast<std::size_t>(entry.dataset)];
        vp.truth = dataset.dev[static_cast<std::size_t>(entry.sequence)]
                       .events[static_cast<std::size_t>(prefix)]
                       .type_label;
        prompts.push_back(std::move(vp));
    }
    return prompts;
}

double greedy_type_accuracy(const Model<float>& model, std::span<const ValPrompt> prompts,
                            const Vocabulary& vocab, const RenderOptions& render) {
    if (prompts.empty()) return 0.0;
    KvCache<float> cache;
    InferScratch<float> scratch;
    SampleOptions options;
    options.greedy = true;
    options.max_new_tokens = 32;
    std::size_t hits = 0;
    for (const ValPrompt& vp : prompts) {
        cache.init(model.config);
        const auto generated = generate(model, cache, vp.prompt, options, vocab.end_of_sequence, scratch);
        try {
            const Prediction parsed =
                parse_generation(generated, TaskKind::type_prediction, vocab, render);
            if (trimmed(parsed.text) == trimmed(vp.truth)) ++hits;
        } catch (const Error&) {
            // malformed output counts as a miss
        }
    }
    return static_cast<double>(hits) / static_cast<double>(prompts.size());
}

} // namespace

StageResult train_stage2(const TrainConfig& config, const Corpus& corpus,
                         std::span<const PromptPair> pairs, const Vocabulary& vocab,
                         Model<float>& model, const LogSink& log) {
    config.validate();
    require(config.stage == 2, Errc::config_error, "train_stage2 needs a stage-2 config");
    model.config.validate();
    check_render_consistency(config, corpus);
    require(!pairs.empty(), Errc::no_data, "no prompt-response pairs to train on");

    std::size_t dropped = 0;
    std::vector<std::vector<TokenId>> storage;
    storage.reserve(pairs.size());
    std::vector<StreamView> streams;
    streams.reserve(pairs.size());
    for (const PromptPair& pair : pairs) {
        const std::size_t total = pair.prompt.size() + pair.response.size();
        if (total > static_cast<std::size_t>(model.config.max_context)) {
            ++dropped; // sampling should have filtered these; stay safe anyway
            continue;
        }
        storage.push_back(pair_tokens(pair));
        StreamView view;
        view.tokens = &storage.back();
        view.cut = static_cast<int>(total);
        view.mask = response_mask(pair.prompt.size(), total);
        streams.push_back(std::move(view));
    }

    const auto prompts = stage2_validation_prompts(config, corpus, vocab, model.config.max_context);
    if (prompts.empty() && log) {
        log("stage2: no dev prompts available, keeping the last epoch");
    }
    const auto validation = [&](int, double) {
        return greedy_type_accuracy(model, prompts, vocab, corpus.render);
    };
    StageResult result =
        run_lm_training(config, model, streams, "dev_type_accuracy", true, validation, log);
    result.truncated_docs = dropped;
    return result;
}

// ------------------------------------------------------------------ stage 3 --

namespace {

// Hidden states at each event's closing token, paired with the sequence the
// head will score. When the document does not fit the context the sequence is
// cut at the same event boundary and the observation window closes at the
// last kept event.
struct HeadData {
    std::deque<EventSequence> owned; // stable storage for truncated copies
    std::vector<HeadFitSequence> items;
    std::size_t truncated = 0;
    std::size_t skipped = 0;
    double observed_time = 0.0;
    std::size_t observed_events = 0;
};

void collect_head_item(const Model<float>& model, const TemplateDoc& doc, const EventSequence& seq,
                       std::uint64_t seq_id, Workspace<float>& ws, HeadData& out) {
    const CutInfo cut = usable_cut(doc, model.config.max_context);
    if (cut.events == 0 && !seq.events.empty()) {
        ++out.skipped; // not even one event block fits
        return;
    }
    std::vector<int> positions(static_cast<std::size_t>(cut.events));
    for (int i = 0; i < cut.events; ++i) {
        positions[static_cast<std::size_t>(i)] = doc.events[static_cast<std::size_t>(i)].whole.end - 1;
    }
    const std::span<const TokenId> tokens(doc.tokens.data(), static_cast<std::size_t>(cut.tokens));
    const std::vector<float> hiddens = hidden_states(model, tokens, positions, ws);

    HeadFitSequence item;
    item.hiddens.assign(hiddens.begin(), hiddens.end());
    item.seq_id = seq_id;
    if (cut.events == static_cast<int>(seq.events.size())) {
        item.seq = &seq;
    } else {
        ++out.truncated;
        EventSequence shorter;
        shorter.info = seq.info;
        shorter.events.assign(seq.events.begin(), seq.events.begin() + cut.events);
        shorter.t_end = shorter.events.back().time;
        out.owned.push_back(std::move(shorter));
        item.seq = &out.owned.back();
    }
    out.observed_time += item.seq->t_end;
    out.observed_events += item.seq->events.size();
    out.items.push_back(std::move(item));
}

} // namespace

std::map<std::string, IntensityHead> train_stage3(const TrainConfig& config, const Corpus& corpus,
                                                  const Model<float>& model,
                                                  std::map<std::string, double>* validation,
                                                  const LogSink& log) {
    config.validate();
    require(config.stage == 3, Errc::config_error, "train_stage3 needs a stage-3 config");
    model.config.validate();
    check_render_consistency(config, corpus);

    std::map<std::string, IntensityHead> heads;
    Workspace<float> ws;
    for (std::size_t d = 0; d < corpus.datasets.size(); ++d) {
        const Dataset& dataset = corpus.datasets[d];

        HeadData data;
        for (const CorpusDoc& entry : corpus.train_docs) {
            if (entry.dataset != static_cast<int>(d)) continue;
            collect_head_item(model, entry.doc,
                              dataset.train[static_cast<std::size_t>(entry.sequence)],
                              static_cast<std::uint64_t>(entry.sequence), ws, data);
        }
        if (data.items.empty()) {
            if (log) log("stage3 " + dataset.name + ": no training sequences, head skipped");
            continue;
        }

        // Start from the best constant model: every type at the pooled rate.
        const double total_rate =
            data.observed_time > 0.0
                ? static_cast<double>(data.observed_events) / data.observed_time
                : 1.0;
        const double per_type = std::max(total_rate / dataset.num_types(), 1e-6);
        IntensityHead head = IntensityHead::init(dataset.num_types(), model.config.d_model, per_type);

        HeadFitOptions options;
        options.steps = config.head_steps;
        options.lr = config.head_lr;
        options.mc_samples = config.mc_samples;
        options.seed = substream_seed(config.seed, "head", static_cast<std::uint64_t>(d));
        const double objective = fit_intensity_head(head, data.items, options);
        if (log) {
            log("stage3 " + dataset.name + ": per-event negative log-likelihood " +
                format_double(objective) +
                (data.truncated > 0 ? " (" + std::to_string(data.truncated) + " sequences cut)" : ""));
        }

        if (validation && !dataset.dev.empty()) {
            HeadData dev_data;
            for (const CorpusDoc& entry : corpus.dev_docs) {
                if (entry.dataset != static_cast<int>(d)) continue;
                collect_head_item(model, entry.doc,
                                  dataset.dev[static_cast<std::size_t>(entry.sequence)],
                                  static_cast<std::uint64_t>(entry.sequence), ws, dev_data);
            }
            std::vector<double> logliks;
            std::vector<std::size_t> counts;
            for (const HeadFitSequence& item : dev_data.items) {
                logliks.push_back(sequence_loglik(head, item.hiddens, *item.seq, config.mc_samples,
                                                  substream_seed(config.seed, "dev", d), item.seq_id));
                counts.push_back(item.seq->events.size());
            }
            if (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) > 0) {
                (*validation)["dev_tll_" + dataset.name] = tll(logliks, counts);
            }
        }
        heads.emplace(dataset.name, std::move(head));
    }
    return heads;
}

// --------------------------------------------------------------- prediction --

namespace {

struct FieldResult {
    Prediction prediction;
    bool fell_back = false;
    int malformed_attempts = 0;
};

// Greedy first, sampled retries, then the policy decides: raise or fall back.
// `base` holds the prompt prefix; `suffix` is fed fresh on every attempt.
FieldResult generate_field(const Model<float>& model, const Vocabulary& vocab, const KvCache<float>& base,
                           std::span<const TokenId> suffix, TaskKind task, const RenderOptions& render,
                           const PredictOptions& options, std::uint64_t seed_root,
                           InferScratch<float>& scratch) {
    const int budget = task == TaskKind::description_prediction ? options.max_new_tokens_description
                                                                : options.max_new_tokens;
    const int attempts = options.policy == MalformedPolicy::reject ? 1 : 1 + options.retries;
    FieldResult result;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        KvCache<float> branch = base.prefix_copy(base.length);
        SampleOptions sample;
        sample.max_new_tokens = budget;
        if (attempt > 0) {
            sample.greedy = false;
            sample.temperature = options.retry_temperature;
            sample.top_p = options.retry_top_p;
            sample.seed = substream_seed(seed_root, "attempt", static_cast<std::uint64_t>(attempt));
        }
        const auto generated = generate(model, branch, suffix, sample, vocab.end_of_sequence, scratch);
        try {
            result.prediction = parse_generation(generated, task, vocab, render);
            result.malformed_attempts = attempt;
            return result;
        } catch (const Error&) {
            // fall through to the next attempt
        }
    }
    result.malformed_attempts = attempts;
    if (options.policy == MalformedPolicy::fallback) {
        result.fell_back = true;
        result.prediction.task = task;
        if (task == TaskKind::time_prediction) {
            result.prediction.interval = static_cast<float>(options.fallback_interval);
        } else if (task == TaskKind::type_prediction) {
            result.prediction.text = options.fallback_label;
        } else {
            result.prediction.text.clear();
        }
        return result;
    }
    raise(Errc::prediction_failed, std::string(task_name(task)) + " generation stayed malformed after " +
                                       std::to_string(attempts) + " attempt(s)");
}

} // namespace

PredictResult predict_next(const Model<float>& model, const Vocabulary& vocab,
                           const EventSequence& prefix, TaskKind task, const RenderOptions& render,
                           const PredictOptions& options) {
    model.config.validate();
    require(!prefix.events.empty(), Errc::invalid_prefix, "prediction needs at least one observed event");
    const TemplateDoc doc = render_sequence(prefix, vocab, render);
    const int cut = doc.events.back().whole.end;
    require(cut + 3 <= model.config.max_context, Errc::context_overflow,
            "prefix of " + std::to_string(cut) + " tokens leaves no room to answer");

    KvCache<float> cache;
    cache.init(model.config);
    InferScratch<float> scratch;
    extend<float>(model, cache,
                  std::span<const TokenId>(doc.tokens.data(), static_cast<std::size_t>(cut)), nullptr,
                  nullptr, scratch);
    const TokenId suffix[2] = {vocab.start_of_event, task_token(vocab, task)};

    const FieldResult field = generate_field(model, vocab, cache, suffix, task, render, options,
                                             substream_seed(options.seed, "predict"), scratch);
    PredictResult result;
    result.prediction = field.prediction;
    result.fell_back = field.fell_back;
    result.malformed_attempts = field.malformed_attempts;
    if (task == TaskKind::time_prediction) {
        result.absolute_time = prefix.events.back().time + static_cast<double>(field.prediction.interval);
    }
    return result;
}

// --------------------------------------------------------------- evaluation --

namespace {

void push_report(std::vector<MetricReport>& reports, MetricReport report) {
    if (!std::isfinite(report.value) || report.n == 0) return; // nothing defensible to report
    report.validate();
    reports.push_back(std::move(report));
}

} // namespace

std::vector<MetricReport> evaluate_dataset(const Model<float>& model, const IntensityHead* head,
                                           const Dataset& dataset, const Vocabulary& vocab,
                                           const RenderOptions& render, const EvalOptions& options) {
    model.config.validate();
    dataset.validate();
    require(!dataset.test.empty(), Errc::no_data, "dataset '" + dataset.name + "' has no test split");

    const DatasetStats stats = compute_stats(dataset);
    PredictOptions predict = options.predict;
    predict.fallback_interval = stats.mean_interval;
    predict.fallback_label = stats.modal_label;

    std::vector<MetricReport> reports;

    if (options.with_generation) {
        std::vector<double> tau_true, tau_pred;
        std::vector<std::string> type_true, type_pred;
        double rouge_p = 0.0, rouge_r = 0.0, rouge_f = 0.0;
        std::size_t rouge_n = 0;
        std::size_t time_fallbacks = 0, type_fallbacks = 0, desc_fallbacks = 0;
        std::size_t malformed = 0, skipped = 0;

        KvCache<float> cache;
        InferScratch<float> scratch;
        const std::uint64_t gen_seed = substream_seed(options.seed, "gen");

        for (std::size_t si = 0; si < dataset.test.size(); ++si) {
            const EventSequence& seq = dataset.test[si];
            if (seq.events.size() < 2) continue;
            const TemplateDoc doc = render_sequence(seq, vocab, render);
            const CutInfo cut = usable_cut(doc, model.config.max_context);
            if (cut.events < 2) {
                skipped += seq.events.size() - 1;
                continue;
            }
            const int prefixes = cut.events - 1;
            const int cap = options.max_prefixes_per_sequence;

            cache.init(model.config);
            extend<float>(model, cache,
                          std::span<const TokenId>(doc.tokens.data(),
                                                   static_cast<std::size_t>(doc.events[0].whole.end)),
                          nullptr, nullptr, scratch);

            for (int k = 1; k <= prefixes; ++k) {
                // The cache holds the document up to event k-1 inclusive.
                const bool selected =
                    cap <= 0 || prefixes <= cap ||
                    (k * cap) / prefixes > ((k - 1) * cap) / prefixes; // evenly spread cap
                const bool room = cache.length + 3 + options.predict.max_new_tokens <=
                                  model.config.max_context;
                if (selected && !room) ++skipped;
                if (selected && room) {
                    const Event& target = seq.events[static_cast<std::size_t>(k)];
                    const std::uint64_t prefix_seed = substream_seed(
                        gen_seed, dataset.name,
                        (static_cast<std::uint64_t>(si) << 16) | static_cast<std::uint64_t>(k));

                    {
                        const TokenId suffix[2] = {vocab.start_of_event,
                                                   task_token(vocab, TaskKind::time_prediction)};
                        const FieldResult field =
                            generate_field(model, vocab, cache, suffix, TaskKind::time_prediction,
                                           render, predict, substream_seed(prefix_seed, "time"), scratch);
                        tau_true.push_back(static_cast<double>(static_cast<float>(
                            target.time - seq.events[static_cast<std::size_t>(k - 1)].time)));
                        tau_pred.push_back(static_cast<double>(field.prediction.interval));
                        time_fallbacks += field.fell_back ? 1 : 0;
                        malformed += static_cast<std::size_t>(field.malformed_attempts);
                    }
                    {
                        const TokenId suffix[2] = {vocab.start_of_event,
                                                   task_token(vocab, TaskKind::type_prediction)};
                        const FieldResult field =
                            generate_field(model, vocab, cache, suffix, TaskKind::type_prediction,
                                           render, predict, substream_seed(prefix_seed, "type"), scratch);
                        type_true.push_back(target.type_label);
                        type_pred.push_back(field.prediction.text);
                        type_fallbacks += field.fell_back ? 1 : 0;
                        malformed += static_cast<std::size_t>(field.malformed_attempts);
                    }
                    if (target.description.has_value()) {
                        const TokenId suffix[2] = {vocab.start_of_event,
                                                   task_token(vocab, TaskKind::description_prediction)};
                        const FieldResult field = generate_field(
                            model, vocab, cache, suffix, TaskKind::description_prediction, render,
                            predict, substream_seed(prefix_seed, "description"), scratch);
                        const RougeScore score = rouge_l(*target.description, field.prediction.text);
                        rouge_p += score.precision;
                        rouge_r += score.recall;
                        rouge_f += score.f1;
                        ++rouge_n;
                        desc_fallbacks += field.fell_back ? 1 : 0;
                        malformed += static_cast<std::size_t>(field.malformed_attempts);
                    }
                }
                if (k < prefixes) {
                    const int from = doc.events[static_cast<std::size_t>(k - 1)].whole.end;
                    const int to = doc.events[static_cast<std::size_t>(k)].whole.end;
                    extend<float>(model, cache,
                                  std::span<const TokenId>(doc.tokens.data() + from,
                                                           static_cast<std::size_t>(to - from)),
                                  nullptr, nullptr, scratch);
                }
            }
        }

        if (!tau_true.empty()) {
            MetricReport report{dataset.name, "time", "rmse", rmse(tau_true, tau_pred), tau_true.size(), {}};
            report.aux = {{"fallbacks", time_fallbacks},
                          {"malformed_attempts", malformed},
                          {"skipped_prefixes", skipped}};
            push_report(reports, std::move(report));

            const std::vector<double> constant(tau_true.size(), stats.mean_interval);
            push_report(reports, {dataset.name, "time", "rmse_baseline_constant_mean",
                                  rmse(tau_true, constant), tau_true.size(), {}});
        }
        if (!type_true.empty()) {
            MetricReport report{dataset.name, "type", "accuracy", accuracy(type_true, type_pred),
                                type_true.size(), {}};
            report.aux = {{"fallbacks", type_fallbacks}};
            push_report(reports, std::move(report));
        }
        if (rouge_n > 0) {
            const auto n = static_cast<double>(rouge_n);
            MetricReport report{dataset.name, "description", "rouge_l_f1", rouge_f / n, rouge_n, {}};
            report.aux = {{"fallbacks", desc_fallbacks}};
            push_report(reports, std::move(report));
            push_report(reports, {dataset.name, "description", "rouge_l_precision", rouge_p / n, rouge_n, {}});
            push_report(reports, {dataset.name, "description", "rouge_l_recall", rouge_r / n, rouge_n, {}});
        }
    }

    if (options.with_tll && head != nullptr) {
        Workspace<float> ws;
        HeadData data;
        for (std::size_t si = 0; si < dataset.test.size(); ++si) {
            const TemplateDoc doc = render_sequence(dataset.test[si], vocab, render);
            collect_head_item(model, doc, dataset.test[si], si, ws, data);
        }
        std::vector<double> logliks, baseline;
        std::vector<std::size_t> counts;
        const std::uint64_t tll_seed = substream_seed(options.seed, "tll");
        const bool with_baseline = !dataset.train.empty();
        const HawkesSpec homogeneous =
            with_baseline ? fit_homogeneous_rates(dataset.train, dataset.num_types()) : HawkesSpec{};
        for (const HeadFitSequence& item : data.items) {
            logliks.push_back(sequence_loglik(*head, item.hiddens, *item.seq, options.mc_samples,
                                              tll_seed, item.seq_id));
            counts.push_back(item.seq->events.size());
            if (with_baseline) baseline.push_back(analytic_loglik(homogeneous, *item.seq));
        }
        if (data.observed_events > 0) {
            MetricReport report{dataset.name, "likelihood", "tll_per_event", tll(logliks, counts),
                                counts.size(), {}};
            report.aux = {{"events", data.observed_events}, {"truncated_sequences", data.truncated}};
            push_report(reports, std::move(report));
            if (with_baseline) {
                push_report(reports, {dataset.name, "likelihood", "tll_baseline_homogeneous",
                                      tll(baseline, counts), counts.size(), {}});
            }
        }
    }
    return reports;
}

// ------------------------------------------------------------------ reports --

namespace {

json report_to_json(const MetricReport& report) {
    json entry;
    entry["dataset"] = report.dataset;
    entry["task"] = report.task;
    entry["metric"] = report.metric;
    entry["value"] = report.value;
    entry["n"] = report.n;
    entry["aux"] = json::object();
    for (const auto& [key, count] : report.aux) entry["aux"][key] = count;
    return entry;
}

} // namespace

std::string reports_json(std::span<const MetricReport> reports) {
    json out = json::array();
    for (const MetricReport& report : reports) out.push_back(report_to_json(report));
    return out.dump(2) + "\n";
}

std::string reports_csv(std::span<const MetricReport> reports) {
    std::ostringstream out;
    out << "dataset,task,metric,value,n,aux\n";
    out.precision(17);
    for (const MetricReport& report : reports) {
        out << report.dataset << ',' << report.task << ',' << report.metric << ',' << report.value << ','
            << report.n << ',';
        bool first = true;
        for (const auto& [key, count] : report.aux) {
            out << (first ? "" : ";") << key << '=' << count;
            first = false;
        }
        out << '\n';
    }
    return out.str();
}

// ------------------------------------------------------------------- driver --

void PipelineConfig::validate() const {
    model.validate();
    stage1.validate();
    stage2.validate();
    stage3.validate();
    require(stage1.stage == 1 && stage2.stage == 2 && stage3.stage == 3, Errc::config_error,
            "pipeline stage configs must be tagged 1, 2 and 3 in order");
}

PipelineResult run_pipeline(const PipelineConfig& config, std::vector<Dataset> datasets,
                            const LogSink& log) {
    config.validate();
    require(!datasets.empty(), Errc::no_data, "the pipeline needs at least one dataset");
    const Vocabulary vocab;

    // One run seed governs everything; stage configs inherit it (and the codec
    // settings) through named substreams so stages stay individually rerunnable.
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

    Corpus corpus = build_corpus(std::move(datasets), vocab, config.render,
                                 substream_seed(config.seed, "corpus"));
    Model<float> model = Model<float>::init(config.model, substream_seed(config.seed, "init"));

    PipelineResult result;
    std::map<std::string, double> validation;
    if (config.run_stage1) {
        StageResult stage = train_stage1(stage1, corpus, model, log);
        validation["stage1_" + stage.metric] = stage.best_validation;
        result.stages.emplace("stage1", std::move(stage));
    } else if (log) {
        log("stage1 skipped: stage 2 starts from randomly initialised parameters");
    }

    const auto pairs = sample_pairs(corpus, vocab, stage2.pair_budget, config.task_mix,
                                    substream_seed(config.seed, "pairs"), config.model.max_context);
    {
        StageResult stage = train_stage2(stage2, corpus, pairs, vocab, model, log);
        validation["stage2_" + stage.metric] = stage.best_validation;
        result.stages.emplace("stage2", std::move(stage));
    }

    auto heads = train_stage3(stage3, corpus, model, &validation, log);

    Checkpoint checkpoint;
    checkpoint.config = config.model;
    checkpoint.stage = "stage3";
    checkpoint.vocab_hash = vocab.manifest_hash();
    checkpoint.validation = std::move(validation);
    checkpoint.model = std::move(model);
    checkpoint.heads = std::move(heads);

    EvalOptions eval = config.eval;
    eval.seed = substream_seed(config.seed, "eval");
    for (const Dataset& dataset : corpus.datasets) {
        if (dataset.test.empty()) {
            if (log) log("eval " + dataset.name + ": no test split, skipped");
            continue;
        }
        const IntensityHead* head = nullptr;
        if (const auto it = checkpoint.heads.find(dataset.name); it != checkpoint.heads.end()) {
            head = &it->second;
        }
        auto reports = evaluate_dataset(checkpoint.model, head, dataset, vocab, config.render, eval);
        for (auto& report : reports) result.reports.push_back(std::move(report));
    }
    result.checkpoint = std::move(checkpoint);
    return result;
}

} // namespace eventlm
