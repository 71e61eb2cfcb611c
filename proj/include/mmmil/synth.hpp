#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmmil/common.hpp"

namespace mmmil {

enum class SynthModality { cfp_only, oct_only, both };

SynthModality synth_modality_from_string(const std::string& s);
std::string synth_modality_to_string(SynthModality m);

struct SynthCategory {
    std::string name;
    SynthModality modality = SynthModality::both;
};

/// Recipe for a deterministic synthetic multi-modal dataset. Positive
/// categories render bright blobs into the modality (or modalities) they are
/// assigned to; the other modality stays pure noise for that category.
struct SynthSpec {
    std::vector<SynthCategory> categories = {
        {"cfp_disease", SynthModality::cfp_only},
        {"oct_disease", SynthModality::oct_only},
        {"dual_disease", SynthModality::both},
    };
    int n_train = 300;
    int n_val = 60;
    int n_test = 100;
    int n_oct = 12;
    int image_side = 96;
    int blob_count = 3;
    double blob_radius = 3.5;
    double blob_intensity = 110.0;
    // CFP lesions may be rendered subtler than OCT ones (0 = inherit)
    double cfp_blob_radius = 0.0;
    double cfp_blob_intensity = 0.0;
    // place CFP lesions in the outer ring of the image (rewards crop views)
    bool cfp_peripheral = false;
    // per-image illumination field (linear gradient + vignette) on the CFP,
    // mimicking fundus-camera lighting variation; 0 disables
    double cfp_illumination = 0.0;
    // configural CFP cue: every case carries blob_count red and green blobs;
    // cfp-only positives place them as adjacent pairs, other cases scatter
    // them. Detection then hinges on spatial relations, not blob presence.
    bool cfp_paired_lesions = false;
    double pair_offset = 3.5;       // centre distance within a pair
    double distractor_min_dist = 14.0;  // minimum red/green distance when scattered
    int informative_scans = 3;  // B-scans per positive OCT category that carry signal
    double noise_sigma = 8.0;
    double label_prob = 0.35;
    uint64_t seed = 1;

    double effective_cfp_radius() const { return cfp_blob_radius > 0 ? cfp_blob_radius : blob_radius; }
    double effective_cfp_intensity() const {
        return cfp_blob_intensity > 0 ? cfp_blob_intensity : blob_intensity;
    }
};

struct SynthResult {
    std::filesystem::path manifest_path;
    std::filesystem::path sidecar_dir;
    int n_cases = 0;
};

/// Writes images, a manifest and per-case sidecars (ground-truth attention
/// targets) under out_dir. Byte-identical output for identical spec.
SynthResult generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mmmil
