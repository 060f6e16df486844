#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eventlm/checkpoint.hpp"
#include "eventlm/codec.hpp"
#include "eventlm/event_template.hpp"
#include "eventlm/intensity.hpp"
#include "eventlm/metrics.hpp"
#include "eventlm/model.hpp"
#include "eventlm/tpp.hpp"

namespace eventlm {

// -- datasets ----------------------------------------------------------------

// A named dataset with fixed train/dev/test splits. `type_labels` is the
// canonical label table; every event's type_index must fall inside it.
struct Dataset {
    std::string name;
    std::vector<std::string> type_labels;
    bool has_descriptions = false;
    std::vector<EventSequence> train, dev, test;

    [[nodiscard]] int num_types() const { return static_cast<int>(type_labels.size()); }
    void validate() const;
};

// Directory layout: dataset.json (name, labels, flags) next to train.jsonl,
// dev.jsonl and test.jsonl.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& dir);

// Constants derived from the training split that evaluation falls back on:
// the mean inter-event gap (consecutive time differences; the rendering
// convention's leading zero interval is excluded) and the most frequent type
// label. Empty training split yields {1.0, first label}.
struct DatasetStats {
    double mean_interval = 1.0;
    std::string modal_label;
};
[[nodiscard]] DatasetStats compute_stats(const Dataset& dataset);

// -- synthetic corpora ---------------------------------------------------------

// Two-type exponential Hawkes process used by the end-to-end tests: slow
// decay (0.3) with branching ratio 0.75, so intensity carries visible bursts
// that a conditional model can exploit against the homogeneous baseline.
[[nodiscard]] HawkesSpec hawkes2_spec();
[[nodiscard]] Dataset make_hawkes2(int train_count, int dev_count, int test_count, std::uint64_t seed);

// Deterministic-type corpus: labels alternate tick, tock, tick, ... and the
// gap before event i is drawn around 0.5 (even i) or 2.0 (odd i) with a
// +/-15% multiplicative jitter. Next type and next gap scale are both exact
// functions of the visible history, so high type accuracy and a large RMSE
// win over the constant-mean baseline are attainable.
[[nodiscard]] Dataset make_parity(int train_count, int dev_count, int test_count, std::uint64_t seed);

// Single-type homogeneous Poisson corpus (rate 0.7 on [0, 20]) whose exact
// log-likelihood is known in closed form.
[[nodiscard]] Dataset make_poisson1(int train_count, int dev_count, int test_count, std::uint64_t seed);

// -- merged corpus -------------------------------------------------------------

// One rendered training document plus where it came from.
struct CorpusDoc {
    int dataset = 0;  // index into Corpus::datasets
    int sequence = 0; // index into that dataset's split
    TemplateDoc doc;
};

// All datasets merged for training: train documents from every dataset are
// rendered and shuffled into one stream; dev documents stay grouped by
// dataset (dataset-major order) for per-dataset validation.
struct Corpus {
    std::vector<Dataset> datasets;
    RenderOptions render;
    std::vector<CorpusDoc> train_docs;
    std::vector<CorpusDoc> dev_docs;
    std::vector<DatasetStats> stats; // aligned with datasets
};

[[nodiscard]] Corpus build_corpus(std::vector<Dataset> datasets, const Vocabulary& vocab,
                                  const RenderOptions& render, std::uint64_t seed);

// -- training configuration ------------------------------------------------------

// Hyperparameters for one stage. The `paper` profile mirrors the published
// table (lr 1e-4, weight decay 0.01, 5 epochs, per-stage batch sizes 4/4/32
// with 4-step gradient accumulation); the `desk` profile shrinks the budgets
// to single-CPU scale and raises the learning rate to converge within them.
struct TrainConfig {
    int stage = 1;              // 1 = sequence pretraining, 2 = pair tuning, 3 = head fit
    double learning_rate = 1e-4;
    int batch_size = 4;         // documents (stage 1) or pairs (stage 2) per micro-step
    double weight_decay = 0.01;
    int epochs = 5;
    int grad_accum_steps = 4;   // micro-steps per optimiser step
    int mc_samples = 10;        // stage 3: integral samples per interval
    int pair_budget = 5000;     // stage 2: prompt-response pairs to sample
    ByteOrder byte_order = ByteOrder::most_significant_first;
    bool use_byte_tokens = true;
    std::uint64_t seed = 0;
    // Knobs the published table does not pin down.
    double clip_norm = 1.0;     // global gradient-norm ceiling; 0 disables
    int head_steps = 300;       // stage 3: optimiser steps for the intensity head
    double head_lr = 0.05;      // stage 3: step size
    int val_prompts = 128;      // stage 2: dev prompts per validation pass

    void validate() const;
};

[[nodiscard]] TrainConfig desk_profile(int stage);
[[nodiscard]] TrainConfig paper_profile(int stage);

// -- stage-2 prompt-response pairs -------------------------------------------------

// Relative sampling weights per task; tasks a document cannot serve (no
// description on the target event) are dropped from the draw for that pair.
struct TaskMix {
    double time = 1.0;
    double type = 1.0;
    double description = 1.0;
};

struct PromptPair {
    int dataset = 0;
    int sequence = 0;
    int prefix_events = 0;
    TaskKind task = TaskKind::time_prediction;
    std::vector<TokenId> prompt;
    std::vector<TokenId> response; // field tokens terminated by <|endoftext|>
};

// Draws `budget` pairs with replacement: document uniform over those with at
// least two events, prefix length uniform over [1, N-1], task by `mix` over
// the tasks available at the target event. Deterministic in `seed`. When
// `max_tokens` > 0, pairs whose prompt+response exceed it are redrawn (a
// bounded number of times).
[[nodiscard]] std::vector<PromptPair> sample_pairs(const Corpus& corpus, const Vocabulary& vocab,
                                                   int budget, const TaskMix& mix, std::uint64_t seed,
                                                   int max_tokens = 0);

// Prompt and response as one token stream, and the matching next-token target
// mask (size tokens-1) that puts loss on response positions only. Exposed so
// tests can check the masking contract directly.
[[nodiscard]] std::vector<TokenId> pair_tokens(const PromptPair& pair);
[[nodiscard]] std::vector<std::uint8_t> response_mask(std::size_t prompt_len, std::size_t total_len);

// -- training stages ----------------------------------------------------------------

using LogSink = std::function<void(const std::string&)>;

struct StageResult {
    std::string metric;                   // what epoch_validation measures
    std::vector<double> epoch_validation; // one entry per epoch
    double best_validation = 0.0;
    int best_epoch = -1;                  // 0-based; -1 when no epoch ran
    std::size_t truncated_docs = 0;       // documents cut at the context limit
};

// Next-token training over the merged shuffled documents with an
// all-positions mask. AdamW with 1%-of-steps linear warmup then constant
// rate; weight decay on matrices only; global-norm gradient clipping.
// Validation is the token-weighted dev NLL per epoch; the best epoch's
// parameters are restored before returning.
StageResult train_stage1(const TrainConfig& config, const Corpus& corpus, Model<float>& model,
                         const LogSink& log = {});

// Same optimiser over prompt-response pairs with the response-only mask.
// Validation greedily decodes dev type-prediction prompts and scores
// accuracy; the best epoch wins, later epochs win ties.
StageResult train_stage2(const TrainConfig& config, const Corpus& corpus,
                         std::span<const PromptPair> pairs, const Vocabulary& vocab,
                         Model<float>& model, const LogSink& log = {});

// Freezes the backbone and fits one intensity head per dataset on the hidden
// states at each event's closing token. Returns the heads keyed by dataset
// name; per-dataset dev log-likelihood per event lands in `validation` under
// "dev_tll_<name>" when the dev split is nonempty.
[[nodiscard]] std::map<std::string, IntensityHead> train_stage3(const TrainConfig& config,
                                                                const Corpus& corpus,
                                                                const Model<float>& model,
                                                                std::map<std::string, double>* validation,
                                                                const LogSink& log = {});

// -- next-event prediction -------------------------------------------------------------

enum class MalformedPolicy {
    reject,   // malformed output raises prediction_failed immediately
    retry,    // up to `retries` sampled regenerations, then prediction_failed
    fallback, // up to `retries` sampled regenerations, then the fallback value
};

struct PredictOptions {
    MalformedPolicy policy = MalformedPolicy::fallback;
    int retries = 3;
    double retry_temperature = 0.8; // first attempt is greedy; retries sample
    double retry_top_p = 0.95;
    int max_new_tokens = 24;             // time and type completions
    int max_new_tokens_description = 96; // description completions
    double fallback_interval = 1.0;      // used by the fallback policy (time task)
    std::string fallback_label;          // used by the fallback policy (type task)
    std::uint64_t seed = 0;
};

struct PredictResult {
    Prediction prediction;
    double absolute_time = 0.0; // prefix end + predicted interval (time task)
    bool fell_back = false;
    int malformed_attempts = 0;
};

// Renders the prefix, prompts for the next event's field, decodes and parses.
// The first attempt decodes greedily; retries sample. Raises
// prediction_failed when the policy exhausts without a parseable output.
[[nodiscard]] PredictResult predict_next(const Model<float>& model, const Vocabulary& vocab,
                                         const EventSequence& prefix, TaskKind task,
                                         const RenderOptions& render, const PredictOptions& options);

// -- evaluation ---------------------------------------------------------------------------

struct EvalOptions {
    PredictOptions predict;           // fallback fields are filled from dataset stats
    int mc_samples = 10;              // log-likelihood integral samples
    std::uint64_t seed = 0;
    int max_prefixes_per_sequence = 0; // 0 = every prefix
    bool with_generation = true;       // interval / type / description decoding
    bool with_tll = true;              // requires `head`
};

// Scores one dataset's test split: interval RMSE against the constant-mean
// baseline, type accuracy, description ROUGE-L (where present), and the
// per-event test log-likelihood of `head` against the homogeneous-Poisson
// baseline. Fallback and malformed counts land in the reports' aux maps.
[[nodiscard]] std::vector<MetricReport> evaluate_dataset(const Model<float>& model,
                                                         const IntensityHead* head,
                                                         const Dataset& dataset,
                                                         const Vocabulary& vocab,
                                                         const RenderOptions& render,
                                                         const EvalOptions& options);

// JSON array / CSV table renderings of metric reports (stable field order, so
// equal report lists serialise identically).
[[nodiscard]] std::string reports_json(std::span<const MetricReport> reports);
[[nodiscard]] std::string reports_csv(std::span<const MetricReport> reports);

// -- end-to-end driver ----------------------------------------------------------------------

struct PipelineConfig {
    ModelConfig model;          // defaults are the desk-scale shape
    TrainConfig stage1 = desk_profile(1);
    TrainConfig stage2 = desk_profile(2);
    TrainConfig stage3 = desk_profile(3);
    RenderOptions render;
    TaskMix task_mix;
    bool run_stage1 = true;     // false: stage 2 starts from random parameters
    std::uint64_t seed = 0;
    EvalOptions eval;

    void validate() const;
};

struct PipelineResult {
    Checkpoint checkpoint;                     // final stage-3 state
    std::vector<MetricReport> reports;         // test metrics, dataset-major
    std::map<std::string, StageResult> stages; // "stage1", "stage2"
};

// The whole protocol: merge + render, optional stage-1 pretraining, stage-2
// pair tuning, stage-3 head fitting, then per-dataset test evaluation. Every
// random choice is a named substream of `config.seed`, so a rerun with the
// same config and build reproduces the reports exactly.
[[nodiscard]] PipelineResult run_pipeline(const PipelineConfig& config, std::vector<Dataset> datasets,
                                          const LogSink& log = {});

} // namespace eventlm
