#include "mmmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmmil/dataset.hpp"
#include "mmmil/image.hpp"
#include "mmmil/image_io.hpp"

namespace mmmil {

using json = nlohmann::json;

SynthModality synth_modality_from_string(const std::string& s) {
    if (s == "cfp_only") return SynthModality::cfp_only;
    if (s == "oct_only") return SynthModality::oct_only;
    if (s == "both") return SynthModality::both;
    fail_data("unknown synth modality '", s, "' (expected cfp_only|oct_only|both)");
}

std::string synth_modality_to_string(SynthModality m) {
    switch (m) {
        case SynthModality::cfp_only: return "cfp_only";
        case SynthModality::oct_only: return "oct_only";
        case SynthModality::both: return "both";
    }
    return "both";
}

namespace {

void add_noise(Image& img, double sigma, Rng& rng) {
    for (uint8_t& p : img.pixels) {
        const double v = p + rng.normal() * sigma;
        p = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
    }
}

// random linear gradient plus an off-center vignette, shared across channels
void add_illumination(Image& img, double amplitude, Rng& rng) {
    if (amplitude <= 0.0) return;
    const double gx = rng.uniform(-1.0, 1.0) * amplitude / img.width;
    const double gy = rng.uniform(-1.0, 1.0) * amplitude / img.height;
    const double vx = rng.uniform(0.2, 0.8) * img.width;
    const double vy = rng.uniform(0.2, 0.8) * img.height;
    const double vstrength = rng.uniform(-1.0, 1.0) * amplitude;
    const double vscale = 2.0 * img.width * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double d2 = (x - vx) * (x - vx) + (y - vy) * (y - vy);
            const double shade = gx * (x - img.width / 2.0) + gy * (y - img.height / 2.0) +
                                 vstrength * std::exp(-d2 / vscale);
            for (int c = 0; c < img.channels; ++c) {
                const double v = img.at(x, y, c) + shade;
                img.at(x, y, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
        }
}

// Gaussian bright blob added into one channel.
void render_blob(Image& img, double cx, double cy, double radius, double intensity, int channel) {
    const double denom = 2.0 * (radius * 0.75) * (radius * 0.75);
    const int lo_x = std::max(0, static_cast<int>(cx - 3 * radius));
    const int hi_x = std::min(img.width - 1, static_cast<int>(cx + 3 * radius));
    const int lo_y = std::max(0, static_cast<int>(cy - 3 * radius));
    const int hi_y = std::min(img.height - 1, static_cast<int>(cy + 3 * radius));
    for (int y = lo_y; y <= hi_y; ++y)
        for (int x = lo_x; x <= hi_x; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double add = intensity * std::exp(-d2 / denom);
            const double v = img.at(x, y, channel) + add;
            img.at(x, y, channel) = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
        }
}

void render_cfp_signal(Image& cfp, int category, const SynthSpec& spec, Rng& rng) {
    // category-specific channel keeps the classes separable
    const int channel = category % cfp.channels;
    const double radius = spec.effective_cfp_radius();
    const double intensity = spec.effective_cfp_intensity();
    for (int i = 0; i < spec.blob_count; ++i) {
        double cx, cy;
        if (spec.cfp_peripheral) {
            // outer ring: visible in corner/edge crops, small in the full view
            const double angle = rng.uniform(0.0, 6.283185307179586);
            const double r = rng.uniform(0.33, 0.46) * cfp.width;
            cx = std::clamp(cfp.width * 0.5 + r * std::cos(angle), radius,
                            cfp.width - 1 - radius);
            cy = std::clamp(cfp.height * 0.5 + r * std::sin(angle), radius,
                            cfp.height - 1 - radius);
        } else {
            cx = rng.uniform(radius, cfp.width - 1 - radius);
            cy = rng.uniform(radius, cfp.height - 1 - radius);
        }
        render_blob(cfp, cx, cy, radius, intensity, channel);
    }
}

// Configural rendering: blob_count red and blob_count green blobs. Positives
// place each red/green couple as an adjacent pair; negatives scatter the same
// blobs with a minimum cross-channel separation, so blob presence alone
// carries no label information.
void render_cfp_pair_field(Image& cfp, bool paired, const SynthSpec& spec, Rng& rng) {
    const double radius = spec.effective_cfp_radius();
    const double intensity = spec.effective_cfp_intensity();
    const double margin = radius + spec.pair_offset + 1.0;
    if (paired) {
        for (int i = 0; i < spec.blob_count; ++i) {
            const double cx = rng.uniform(margin, cfp.width - 1 - margin);
            const double cy = rng.uniform(margin, cfp.height - 1 - margin);
            const double angle = rng.uniform(0.0, 6.283185307179586);
            render_blob(cfp, cx, cy, radius, intensity, 0);
            render_blob(cfp, cx + spec.pair_offset * std::cos(angle),
                        cy + spec.pair_offset * std::sin(angle), radius, intensity, 1);
        }
        return;
    }
    std::vector<std::pair<double, double>> red;
    for (int i = 0; i < spec.blob_count; ++i) {
        const double cx = rng.uniform(margin, cfp.width - 1 - margin);
        const double cy = rng.uniform(margin, cfp.height - 1 - margin);
        red.push_back({cx, cy});
        render_blob(cfp, cx, cy, radius, intensity, 0);
    }
    for (int i = 0; i < spec.blob_count; ++i) {
        double cx = 0, cy = 0;
        for (int attempt = 0; attempt < 100; ++attempt) {
            cx = rng.uniform(margin, cfp.width - 1 - margin);
            cy = rng.uniform(margin, cfp.height - 1 - margin);
            bool far_enough = true;
            for (const auto& [rx, ry] : red) {
                const double d2 = (cx - rx) * (cx - rx) + (cy - ry) * (cy - ry);
                if (d2 < spec.distractor_min_dist * spec.distractor_min_dist) {
                    far_enough = false;
                    break;
                }
            }
            if (far_enough) break;
        }
        render_blob(cfp, cx, cy, radius, intensity, 1);
    }
}

void render_oct_signal(Image& scan, int category, int n_categories, const SynthSpec& spec,
                       Rng& rng) {
    // category-specific horizontal band
    const double band_center = (category + 0.5) / n_categories * scan.height;
    for (int i = 0; i < spec.blob_count; ++i) {
        const double cx = rng.uniform(spec.blob_radius, scan.width - 1 - spec.blob_radius);
        const double cy = std::clamp(band_center + rng.uniform(-2.0, 2.0), spec.blob_radius,
                                     scan.height - 1 - spec.blob_radius);
        render_blob(scan, cx, cy, spec.blob_radius, spec.blob_intensity, 0);
    }
}

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.categories.empty()) fail_data("synth: need at least one category");
    if (spec.n_oct < 1 || spec.informative_scans < 1 || spec.informative_scans > spec.n_oct)
        fail_data("synth: informative_scans must lie in [1, n_oct]");
    if (spec.image_side < 8) fail_data("synth: image_side too small");

    const auto image_dir = out_dir / "images";
    const auto sidecar_dir = out_dir / "sidecars";
    std::filesystem::create_directories(image_dir);
    std::filesystem::create_directories(sidecar_dir);

    Rng rng(spec.seed);
    const int m = static_cast<int>(spec.categories.size());
    const int total = spec.n_train + spec.n_val + spec.n_test;
    const int side = spec.image_side;

    json manifest;
    for (const auto& c : spec.categories) manifest["categories"].push_back(c.name);
    manifest["cases"] = json::array();

    for (int idx = 0; idx < total; ++idx) {
        const std::string case_id = cat("case_", idx);
        const std::string subject_id = cat("subject_", idx);
        const Split split = idx < spec.n_train               ? Split::train
                            : idx < spec.n_train + spec.n_val ? Split::val
                                                              : Split::test;

        // multi-hot labels; all-zero vectors are redrawn
        std::vector<int> labels(m, 0);
        while (true) {
            bool any = false;
            for (int c = 0; c < m; ++c) {
                labels[c] = rng.uniform() < spec.label_prob ? 1 : 0;
                any |= labels[c] == 1;
            }
            if (any) break;
        }

        Image cfp(side, side, 3, 90);
        add_illumination(cfp, spec.cfp_illumination, rng);
        add_noise(cfp, spec.noise_sigma, rng);
        std::vector<Image> octs;
        for (int i = 0; i < spec.n_oct; ++i) {
            Image scan(side, side, 1, 80);
            add_noise(scan, spec.noise_sigma, rng);
            octs.push_back(std::move(scan));
        }

        std::vector<bool> cfp_informative(m, false);
        std::vector<bool> oct_hit(spec.n_oct, false);
        if (spec.cfp_paired_lesions) {
            bool any_cfp_only_positive = false;
            for (int c = 0; c < m; ++c)
                if (labels[c] && spec.categories[c].modality == SynthModality::cfp_only)
                    any_cfp_only_positive = true;
            render_cfp_pair_field(cfp, any_cfp_only_positive, spec, rng);
        }
        for (int c = 0; c < m; ++c) {
            if (!labels[c]) continue;
            const SynthModality mode = spec.categories[c].modality;
            const bool paired_handles_it =
                spec.cfp_paired_lesions && mode == SynthModality::cfp_only;
            if (mode == SynthModality::cfp_only || mode == SynthModality::both) {
                if (!paired_handles_it) render_cfp_signal(cfp, c, spec, rng);
                cfp_informative[c] = true;
            }
            if (mode == SynthModality::oct_only || mode == SynthModality::both) {
                for (int scan : rng.sample_without_replacement(spec.n_oct, spec.informative_scans)) {
                    render_oct_signal(octs[scan], c, m, spec, rng);
                    oct_hit[scan] = true;
                }
            }
        }

        const std::string cfp_rel = cat("images/", case_id, "_cfp.png");
        write_png(out_dir / cfp_rel, cfp);
        std::vector<std::string> oct_rel;
        for (int i = 0; i < spec.n_oct; ++i) {
            std::string rel = cat("images/", case_id, "_oct_", i < 10 ? "0" : "", i, ".png");
            write_png(out_dir / rel, octs[i]);
            oct_rel.push_back(std::move(rel));
        }

        json jc;
        jc["case_id"] = case_id;
        jc["subject_id"] = subject_id;
        jc["eye"] = idx % 2 == 0 ? "left" : "right";
        jc["cfp"] = cfp_rel;
        jc["oct"] = oct_rel;
        jc["labels"] = labels;
        jc["split"] = split_to_string(split);
        manifest["cases"].push_back(std::move(jc));

        json sidecar;
        sidecar["case_id"] = case_id;
        json informative = json::array();
        for (int i = 0; i < spec.n_oct; ++i)
            if (oct_hit[i]) informative.push_back(i);
        sidecar["informative_oct_indices"] = std::move(informative);
        sidecar["cfp_informative"] = cfp_informative;
        std::ofstream sc(sidecar_dir / (case_id + ".json"));
        sc << sidecar.dump(2) << "\n";
    }

    SynthResult result;
    result.manifest_path = out_dir / "manifest.json";
    result.sidecar_dir = sidecar_dir;
    result.n_cases = total;
    std::ofstream mf(result.manifest_path);
    if (!mf) fail_data("cannot write manifest '", result.manifest_path.string(), "'");
    mf << manifest.dump(2) << "\n";
    return result;
}

}  // namespace mmmil
