#include "eventlm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "eventlm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian 32-bit reals; big-endian hosts would "
              "need byte swapping");

namespace eventlm {

namespace {

using nlohmann::json;

constexpr char magic[4] = {'E', 'V', 'L', 'M'};
constexpr std::uint32_t container_version = 1;

json config_to_json(const ModelConfig& config) {
    return json{{"vocab_size", config.vocab_size}, {"d_model", config.d_model},
                {"n_layers", config.n_layers},     {"n_heads", config.n_heads},
                {"d_ff", config.d_ff},             {"max_context", config.max_context},
                {"dropout", config.dropout},       {"rope_base", config.rope_base}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig config;
    config.vocab_size = j.at("vocab_size").get<int>();
    config.d_model = j.at("d_model").get<int>();
    config.n_layers = j.at("n_layers").get<int>();
    config.n_heads = j.at("n_heads").get<int>();
    config.d_ff = j.at("d_ff").get<int>();
    config.max_context = j.at("max_context").get<int>();
    config.dropout = j.at("dropout").get<double>();
    config.rope_base = j.at("rope_base").get<double>();
    return config;
}

// One flat directory entry per stored tensor, in payload order.
struct TensorRecord {
    std::string name;
    int rows = 0;
    int cols = 0; // 0 for vectors
    std::vector<float> values;
};

std::vector<TensorRecord> collect_tensors(const Checkpoint& checkpoint) {
    std::vector<TensorRecord> records;
    for (const auto& entry : checkpoint.model.store.entries) {
        TensorRecord rec;
        rec.name = entry.name;
        rec.rows = entry.rows;
        rec.cols = entry.cols;
        const float* src = checkpoint.model.store.ptr(entry.offset);
        rec.values.assign(src, src + entry.size);
        records.push_back(std::move(rec));
    }
    for (const auto& [dataset, head] : checkpoint.heads) {
        head.validate();
        const std::string prefix = "intensity_head." + dataset + ".";
        auto push = [&](const std::string& field, const std::vector<double>& values, int rows,
                        int cols) {
            TensorRecord rec;
            rec.name = prefix + field;
            rec.rows = rows;
            rec.cols = cols;
            rec.values.assign(values.begin(), values.end());
            records.push_back(std::move(rec));
        };
        push("alpha", head.alpha, head.type_count, 0);
        push("b", head.b, head.type_count, 0);
        push("beta", head.beta, head.type_count, 0);
        push("w", head.w, head.type_count, head.hidden_dim);
        push("h0", head.h0, head.hidden_dim, 0);
    }
    return records;
}

void write_exact(std::ofstream& out, const void* data, std::size_t bytes,
                 const std::filesystem::path& path) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    require(out.good(), Errc::io_error, "failed writing checkpoint '" + path.string() + "'");
}

void read_exact(std::ifstream& in, void* data, std::size_t bytes,
                const std::filesystem::path& path) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    require(in.gcount() == static_cast<std::streamsize>(bytes), Errc::incompatible_checkpoint,
            "checkpoint '" + path.string() + "' is truncated");
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    checkpoint.config.validate();
    require(checkpoint.config == checkpoint.model.config, Errc::incompatible_checkpoint,
            "checkpoint header config disagrees with the model it carries");

    const auto records = collect_tensors(checkpoint);
    json directory = json::array();
    for (const auto& rec : records) {
        directory.push_back(json{{"name", rec.name}, {"rows", rec.rows}, {"cols", rec.cols}});
    }
    json heads_meta = json::object();
    for (const auto& [dataset, head] : checkpoint.heads) {
        heads_meta[dataset] = {{"type_count", head.type_count}, {"hidden_dim", head.hidden_dim}};
    }
    const json meta{{"config", config_to_json(checkpoint.config)},
                    {"stage", checkpoint.stage},
                    {"vocab_hash", checkpoint.vocab_hash},
                    {"validation", checkpoint.validation},
                    {"heads", heads_meta},
                    {"tensors", directory}};
    const std::string meta_text = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.is_open(), Errc::io_error, "cannot open '" + path.string() + "' for writing");
    write_exact(out, magic, sizeof(magic), path);
    write_exact(out, &container_version, sizeof(container_version), path);
    const auto meta_len = static_cast<std::uint64_t>(meta_text.size());
    write_exact(out, &meta_len, sizeof(meta_len), path);
    write_exact(out, meta_text.data(), meta_text.size(), path);
    for (const auto& rec : records) {
        write_exact(out, rec.values.data(), rec.values.size() * sizeof(float), path);
    }
    out.close();
    require(out.good(), Errc::io_error, "failed closing checkpoint '" + path.string() + "'");

    // Sidecar manifest: plain text, one `name rows cols` line per tensor.
    const std::filesystem::path manifest_path = path.string() + ".manifest.txt";
    std::ofstream manifest(manifest_path, std::ios::trunc);
    require(manifest.is_open(), Errc::io_error,
            "cannot open '" + manifest_path.string() + "' for writing");
    manifest << "checkpoint-tensors v" << container_version << "\n";
    for (const auto& rec : records) {
        manifest << rec.name << ' ' << rec.rows << ' ' << rec.cols << '\n';
    }
    manifest.close();
    require(manifest.good(), Errc::io_error,
            "failed writing manifest '" + manifest_path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t expected_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    require(in.is_open(), Errc::io_error, "cannot open checkpoint '" + path.string() + "'");

    char found_magic[4] = {};
    read_exact(in, found_magic, sizeof(found_magic), path);
    require(std::equal(std::begin(found_magic), std::end(found_magic), std::begin(magic)),
            Errc::incompatible_checkpoint,
            "'" + path.string() + "' is not a checkpoint container");
    std::uint32_t version = 0;
    read_exact(in, &version, sizeof(version), path);
    require(version == container_version, Errc::incompatible_checkpoint,
            "checkpoint container version " + std::to_string(version) + " is not supported");
    std::uint64_t meta_len = 0;
    read_exact(in, &meta_len, sizeof(meta_len), path);
    std::string meta_text(meta_len, '\0');
    read_exact(in, meta_text.data(), meta_text.size(), path);

    json meta;
    try {
        meta = json::parse(meta_text);
    } catch (const json::exception& e) {
        raise(Errc::incompatible_checkpoint,
              "checkpoint header of '" + path.string() + "' is not valid JSON: " + e.what());
    }

    Checkpoint checkpoint;
    try {
        checkpoint.config = config_from_json(meta.at("config"));
        checkpoint.stage = meta.at("stage").get<std::string>();
        checkpoint.vocab_hash = meta.at("vocab_hash").get<std::uint64_t>();
        checkpoint.validation = meta.at("validation").get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
        raise(Errc::incompatible_checkpoint,
              "checkpoint header of '" + path.string() + "' is missing fields: " + e.what());
    }
    checkpoint.config.validate();
    require(checkpoint.vocab_hash == expected_vocab_hash, Errc::incompatible_checkpoint,
            "checkpoint '" + path.string() + "' was written under a different vocabulary");

    checkpoint.model = Model<float>::with_layout(checkpoint.config);

    // Pre-create heads from their metadata so tensor payloads have a home.
    for (const auto& [dataset, head_meta] : meta.at("heads").items()) {
        checkpoint.heads.emplace(
            dataset, IntensityHead::init(head_meta.at("type_count").get<int>(),
                                         head_meta.at("hidden_dim").get<int>(), 1.0));
    }

    std::size_t model_tensors_seen = 0;
    for (const auto& entry_meta : meta.at("tensors")) {
        const auto name = entry_meta.at("name").get<std::string>();
        const int rows = entry_meta.at("rows").get<int>();
        const int cols = entry_meta.at("cols").get<int>();
        const std::size_t count =
            static_cast<std::size_t>(rows) * static_cast<std::size_t>(std::max(cols, 1));
        std::vector<float> values(count);
        read_exact(in, values.data(), values.size() * sizeof(float), path);

        if (name.starts_with("intensity_head.")) {
            const auto rest = name.substr(std::string("intensity_head.").size());
            const auto dot = rest.rfind('.');
            require(dot != std::string::npos, Errc::incompatible_checkpoint,
                    "malformed head tensor name '" + name + "'");
            const std::string dataset = rest.substr(0, dot);
            const std::string field = rest.substr(dot + 1);
            auto it = checkpoint.heads.find(dataset);
            require(it != checkpoint.heads.end(), Errc::incompatible_checkpoint,
                    "head tensor '" + name + "' has no matching header entry");
            IntensityHead& head = it->second;
            std::vector<double>* target = nullptr;
            if (field == "alpha") target = &head.alpha;
            else if (field == "b") target = &head.b;
            else if (field == "beta") target = &head.beta;
            else if (field == "w") target = &head.w;
            else if (field == "h0") target = &head.h0;
            require(target != nullptr, Errc::incompatible_checkpoint,
                    "unknown head tensor field '" + name + "'");
            require(target->size() == values.size(), Errc::incompatible_checkpoint,
                    "head tensor '" + name + "' has the wrong shape");
            for (std::size_t i = 0; i < values.size(); ++i)
                (*target)[i] = static_cast<double>(values[i]);
        } else {
            const TensorStore<float>::Entry* entry = nullptr;
            for (const auto& e : checkpoint.model.store.entries) {
                if (e.name == name) {
                    entry = &e;
                    break;
                }
            }
            require(entry != nullptr, Errc::incompatible_checkpoint,
                    "tensor '" + name + "' does not exist in this model layout");
            require(entry->rows == rows && entry->cols == cols && entry->size == count,
                    Errc::incompatible_checkpoint,
                    "tensor '" + name + "' has the wrong shape for this config");
            float* dst = checkpoint.model.store.ptr(entry->offset);
            std::copy(values.begin(), values.end(), dst);
            ++model_tensors_seen;
        }
    }
    require(model_tensors_seen == checkpoint.model.store.entries.size(),
            Errc::incompatible_checkpoint,
            "checkpoint '" + path.string() + "' does not cover every model tensor");
    for (auto& [dataset, head] : checkpoint.heads) head.validate();
    return checkpoint;
}

} // namespace eventlm
