#pragma once

#include <filesystem>

#include "mmmil/config.hpp"
#include "mmmil/network.hpp"

namespace mmmil {

struct TrainMeta {
    uint64_t seed = 0;
    int epoch = -1;          // epoch of the retained snapshot
    double val_ap = 0.0;     // validation macro AP at that epoch
};

/// Everything needed to reproduce inference: model config, normalization
/// statistics, inference options and the parameter tensors by name.
struct Checkpoint {
    uint32_t version = 1;
    ModelConfig model;
    ChannelStats cfp_stats;
    ChannelStats oct_stats;
    double crop_fraction = 0.75;
    bool oversample = true;
    TrainMeta meta;
    std::vector<std::pair<std::string, Tensor>> params;  // header order == blob order
};

/// Binary layout: magic "MMML", u32 version, u64 header length, JSON header,
/// then one little-endian 64-bit-float blob per parameter in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Deep-copies the network's current parameters into a checkpoint.
Checkpoint snapshot_network(Network& net, const ChannelStats& cfp_stats,
                            const ChannelStats& oct_stats, double crop_fraction, bool oversample,
                            const TrainMeta& meta);

/// Builds a network from the stored config and installs the stored tensors;
/// unknown names or shape mismatches are errors naming the first offender.
Network restore_network(const Checkpoint& ckpt);

InferenceOptions inference_options(const Checkpoint& ckpt);

}  // namespace mmmil
