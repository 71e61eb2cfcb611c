#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmmil/image.hpp"
#include "mmmil/tensor.hpp"

namespace mmmil {

enum class Split { train, val, test };
enum class Eye { left, right };
enum class Modality { cfp, oct };

std::string split_to_string(Split s);
Split split_from_string(const std::string& s);

/// One examination: a CFP, an ordered OCT B-scan sequence, multi-hot labels.
struct CaseRecord {
    std::string case_id;
    std::string subject_id;
    Eye eye = Eye::left;
    std::filesystem::path cfp_path;
    std::vector<std::filesystem::path> oct_paths;
    std::vector<int> labels;  // {0,1}, length m
    Split split = Split::train;
};

struct Manifest {
    std::vector<std::string> categories;
    std::vector<CaseRecord> cases;
    std::filesystem::path root;

    std::vector<const CaseRecord*> split_cases(Split s) const;
    int num_categories() const { return static_cast<int>(categories.size()); }
};

/// Parses and validates a manifest JSON document. Splits come either from a
/// per-case "split" field or from a top-level "split_ratio" (assigned by
/// subject with a deterministic shuffle). Subject-disjointness across splits
/// is enforced; duplicate case ids, missing files and all-zero label vectors
/// (unless "allow_unlabeled" is set) are load-time errors.
Manifest load_manifest(const std::filesystem::path& path);

/// Ordered set of same-sized instances for one modality.
struct InstanceBag {
    Modality modality = Modality::cfp;
    std::vector<Image> instances;

    int size() const { return static_cast<int>(instances.size()); }
};

/// Test-time pseudo-sequence for a CFP: {full, four corners, center} in that
/// order, followed by the horizontal flips of the same six. Exactly 12
/// instances, every one resized to side×side.
InstanceBag oversample_cfp_test(const Image& cfp, double crop_fraction, int side);

/// Source window of each pseudo-sequence instance on the squared original
/// image (side `square_side`), for mapping activation maps back onto the CFP.
struct CropWindow {
    int x0 = 0;
    int y0 = 0;
    int size = 0;
    bool flipped = false;
};

std::vector<CropWindow> oversample_windows(double crop_fraction, int square_side);

struct CaseImages {
    Image cfp;
    std::vector<Image> oct;
};

CaseImages load_case_images(const CaseRecord& rec);

struct TrainSample {
    InstanceBag cfp;
    InstanceBag oct;
    std::vector<int> oct_indices;  // ascending, the B-scans kept by down-sampling
};

/// Training-time sampling: k OCT B-scans without replacement (sequence order
/// preserved) and k random square crops of the CFP (scale in [0.5,1.0]).
TrainSample sample_train_instances(const CaseImages& images, int k, Rng& rng, int side);

struct AugmentPolicy {
    bool enabled = true;
    double p_flip = 0.5;
    double p_brightness = 0.5;
    double brightness_lo = 0.8;
    double brightness_hi = 1.2;
    double p_rotate = 0.5;
    double max_rotate_deg = 10.0;
};

Image augment(const Image& img, Rng& rng, const AugmentPolicy& policy);

/// Per-channel pixel statistics on the [0,1] scale, stored in checkpoints so
/// inference normalizes exactly like training did.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stdev;
};

ChannelStats compute_channel_stats(const std::vector<const Image*>& images, int channels);

/// Stacks a bag into a [n×channels×side×side] tensor, normalizing each
/// channel as (px/255 − mean)/stdev.
Tensor bag_to_tensor(const InstanceBag& bag, const ChannelStats& stats);

}  // namespace mmmil
