#include "mmmil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace mmmil {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'M', 'M', 'L'};
constexpr uint32_t kVersion = 1;

json stats_to_json(const ChannelStats& s) { return {{"mean", s.mean}, {"stdev", s.stdev}}; }

ChannelStats stats_from_json(const json& doc) {
    ChannelStats s;
    s.mean = doc.at("mean").get<std::vector<double>>();
    s.stdev = doc.at("stdev").get<std::vector<double>>();
    return s;
}

template <class T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json header;
    header["model"] = model_config_to_json(ckpt.model);
    header["cfp_stats"] = stats_to_json(ckpt.cfp_stats);
    header["oct_stats"] = stats_to_json(ckpt.oct_stats);
    header["crop_fraction"] = ckpt.crop_fraction;
    header["oversample"] = ckpt.oversample;
    header["meta"] = {{"seed", ckpt.meta.seed}, {"epoch", ckpt.meta.epoch},
                      {"val_ap", ckpt.meta.val_ap}};
    json params = json::array();
    for (const auto& [name, tensor] : ckpt.params)
        params.push_back({{"name", name}, {"shape", tensor.shape()}});
    header["params"] = std::move(params);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail_data("cannot write checkpoint '", path.string(), "'");
    out.write(kMagic, 4);
    write_raw(out, kVersion);
    write_raw(out, static_cast<uint64_t>(header_str.size()));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : ckpt.params) {
        const auto& vals = tensor.values();
        out.write(reinterpret_cast<const char*>(vals.data()),
                  static_cast<std::streamsize>(vals.size() * sizeof(double)));
    }
    if (!out) fail_data("short write to checkpoint '", path.string(), "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open checkpoint '", path.string(), "'");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail_data("'", path.string(), "' is not a checkpoint (bad magic)");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion)
        fail_data("checkpoint '", path.string(), "' has unsupported version ", version,
                  " (expected ", kVersion, ")");
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in) fail_data("truncated checkpoint '", path.string(), "'");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) fail_data("truncated checkpoint header in '", path.string(), "'");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        fail_data("corrupt checkpoint header in '", path.string(), "': ", e.what());
    }

    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.model = model_config_from_json(header.at("model"));
    ckpt.cfp_stats = stats_from_json(header.at("cfp_stats"));
    ckpt.oct_stats = stats_from_json(header.at("oct_stats"));
    ckpt.crop_fraction = header.at("crop_fraction").get<double>();
    ckpt.oversample = header.at("oversample").get<bool>();
    ckpt.meta.seed = header.at("meta").at("seed").get<uint64_t>();
    ckpt.meta.epoch = header.at("meta").at("epoch").get<int>();
    ckpt.meta.val_ap = header.at("meta").at("val_ap").get<double>();

    for (const auto& p : header.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const Shape shape = p.at("shape").get<Shape>();
        std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
        in.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!in) fail_data("truncated parameter blob '", name, "' in '", path.string(), "'");
        ckpt.params.emplace_back(name, Tensor::from(shape, std::move(vals)));
    }
    return ckpt;
}

Checkpoint snapshot_network(Network& net, const ChannelStats& cfp_stats,
                            const ChannelStats& oct_stats, double crop_fraction, bool oversample,
                            const TrainMeta& meta) {
    Checkpoint ckpt;
    ckpt.model = net.config();
    ckpt.cfp_stats = cfp_stats;
    ckpt.oct_stats = oct_stats;
    ckpt.crop_fraction = crop_fraction;
    ckpt.oversample = oversample;
    ckpt.meta = meta;
    for (Parameter* p : net.parameters())
        ckpt.params.emplace_back(p->name, Tensor::from(p->tensor.shape(), p->tensor.values()));
    return ckpt;
}

Network restore_network(const Checkpoint& ckpt) {
    Network net(ckpt.model, /*init_seed=*/0);
    std::unordered_map<std::string, Parameter*> by_name;
    for (Parameter* p : net.parameters()) by_name[p->name] = p;
    if (by_name.size() != ckpt.params.size())
        fail_data("checkpoint stores ", ckpt.params.size(), " parameters but the model has ",
                  by_name.size());
    for (const auto& [name, tensor] : ckpt.params) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            fail_data("checkpoint parameter '", name, "' does not exist in the model config");
        if (it->second->tensor.shape() != tensor.shape())
            fail_data("checkpoint parameter '", name, "' has shape ", shape_str(tensor.shape()),
                      " but the model expects ", shape_str(it->second->tensor.shape()));
        it->second->tensor.mutable_values() = tensor.values();
    }
    return net;
}

InferenceOptions inference_options(const Checkpoint& ckpt) {
    InferenceOptions opts;
    opts.crop_fraction = ckpt.crop_fraction;
    opts.oversample = ckpt.oversample;
    opts.cfp_stats = ckpt.cfp_stats;
    opts.oct_stats = ckpt.oct_stats;
    return opts;
}

}  // namespace mmmil
