#include "mmmil/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mmmil/image_io.hpp"

namespace mmmil {

using json = nlohmann::json;

std::string split_to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    fail_data("unknown split '", s, "' (expected train|val|test)");
}

std::vector<const CaseRecord*> Manifest::split_cases(Split s) const {
    std::vector<const CaseRecord*> out;
    for (const CaseRecord& c : cases)
        if (c.split == s) out.push_back(&c);
    return out;
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& context) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) fail_data("unknown key '", key, "' in ", context);
}

json load_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open ", what, " '", path.string(), "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail_data("failed to parse ", what, " '", path.string(), "': ", e.what());
    }
    return doc;
}

// Largest-remainder apportionment of n items to the given ratio.
std::vector<int> apportion(int n, const std::vector<double>& ratio) {
    const double total = ratio[0] + ratio[1] + ratio[2];
    std::vector<int> counts(3);
    std::vector<std::pair<double, int>> rema;
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double quota = ratio[i] / total * n;
        counts[i] = static_cast<int>(std::floor(quota));
        assigned += counts[i];
        rema.push_back({quota - counts[i], i});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < n - assigned; ++i) counts[rema[i % 3].second]++;
    return counts;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
    const json doc = load_json_file(path, "manifest");
    if (!doc.is_object()) fail_data("manifest root must be a JSON object");
    reject_unknown_keys(doc, {"categories", "cases", "split_ratio", "split_seed", "allow_unlabeled"},
                        "manifest");

    Manifest m;
    m.root = std::filesystem::absolute(path).parent_path();
    if (!doc.contains("categories") || !doc["categories"].is_array() || doc["categories"].empty())
        fail_data("manifest needs a non-empty 'categories' array");
    for (const auto& c : doc["categories"]) m.categories.push_back(c.get<std::string>());

    const bool allow_unlabeled = doc.value("allow_unlabeled", false);
    const int n_categories = m.num_categories();

    if (!doc.contains("cases") || !doc["cases"].is_array())
        fail_data("manifest needs a 'cases' array");

    bool any_explicit_split = false, any_missing_split = false;
    std::vector<std::string> missing_files;
    std::unordered_set<std::string> case_ids;

    for (const auto& jc : doc["cases"]) {
        reject_unknown_keys(jc, {"case_id", "subject_id", "eye", "cfp", "oct", "labels", "split"},
                            "case entry");
        CaseRecord rec;
        rec.case_id = jc.at("case_id").get<std::string>();
        rec.subject_id = jc.at("subject_id").get<std::string>();
        const std::string eye = jc.at("eye").get<std::string>();
        if (eye == "left") rec.eye = Eye::left;
        else if (eye == "right") rec.eye = Eye::right;
        else fail_data("case '", rec.case_id, "': unknown eye '", eye, "'");

        if (!case_ids.insert(rec.case_id).second)
            fail_data("duplicate case_id '", rec.case_id, "'");

        rec.cfp_path = m.root / jc.at("cfp").get<std::string>();
        for (const auto& p : jc.at("oct")) rec.oct_paths.push_back(m.root / p.get<std::string>());
        if (rec.oct_paths.empty())
            fail_data("case '", rec.case_id, "': OCT sequence must have n >= 1 scans");

        rec.labels = jc.at("labels").get<std::vector<int>>();
        if (static_cast<int>(rec.labels.size()) != n_categories)
            fail_data("case '", rec.case_id, "': expected ", n_categories, " labels, got ",
                      rec.labels.size());
        bool any_positive = false;
        for (int v : rec.labels) {
            if (v != 0 && v != 1) fail_data("case '", rec.case_id, "': labels must be 0/1");
            any_positive |= v == 1;
        }
        if (!any_positive && !allow_unlabeled)
            fail_data("case '", rec.case_id, "': all-zero label vector rejected ",
                      "(set allow_unlabeled to permit)");

        if (jc.contains("split")) {
            rec.split = split_from_string(jc["split"].get<std::string>());
            any_explicit_split = true;
        } else {
            any_missing_split = true;
        }

        if (!std::filesystem::exists(rec.cfp_path)) missing_files.push_back(rec.cfp_path.string());
        for (const auto& p : rec.oct_paths)
            if (!std::filesystem::exists(p)) missing_files.push_back(p.string());

        m.cases.push_back(std::move(rec));
    }

    if (!missing_files.empty()) {
        std::string listing;
        for (const auto& f : missing_files) listing += "\n  " + f;
        fail_data("manifest references ", missing_files.size(), " missing image file(s):", listing);
    }

    if (any_explicit_split && any_missing_split)
        fail_data("manifest mixes cases with and without a 'split' field");

    if (any_missing_split) {
        if (!doc.contains("split_ratio"))
            fail_data("manifest cases lack 'split' and no 'split_ratio' is declared");
        const auto ratio = doc["split_ratio"].get<std::vector<double>>();
        if (ratio.size() != 3 || ratio[0] <= 0 || ratio[1] < 0 || ratio[2] < 0)
            fail_data("split_ratio must be three non-negative numbers [train, val, test]");
        const uint64_t seed = doc.value("split_seed", 20200701ull);

        // subjects in first-appearance order, then a seeded shuffle
        std::vector<std::string> subjects;
        std::unordered_set<std::string> seen;
        for (const CaseRecord& c : m.cases)
            if (seen.insert(c.subject_id).second) subjects.push_back(c.subject_id);
        Rng rng(seed);
        rng.shuffle(subjects);

        const std::vector<int> counts = apportion(static_cast<int>(subjects.size()), ratio);
        std::unordered_map<std::string, Split> assignment;
        int idx = 0;
        for (int s = 0; s < 3; ++s)
            for (int i = 0; i < counts[s]; ++i) assignment[subjects[idx++]] = static_cast<Split>(s);
        for (CaseRecord& c : m.cases) c.split = assignment.at(c.subject_id);
    }

    // Subject-disjointness: a subject may appear in exactly one split.
    std::unordered_map<std::string, Split> subject_split;
    for (const CaseRecord& c : m.cases) {
        auto [it, inserted] = subject_split.insert({c.subject_id, c.split});
        if (!inserted && it->second != c.split)
            fail_data("subject leakage: subject '", c.subject_id, "' appears in splits '",
                      split_to_string(it->second), "' and '", split_to_string(c.split), "'");
    }

    return m;
}

InstanceBag oversample_cfp_test(const Image& cfp, double crop_fraction, int side) {
    if (crop_fraction <= 0.0 || crop_fraction > 1.0)
        fail_runtime("oversample: crop_fraction must lie in (0,1], got ", crop_fraction);
    if (side <= 0) fail_runtime("oversample: side must be positive");
    // windows are cut from the squared original at native resolution, the same
    // statistics the train-time random crops cover
    const int sq = std::min(cfp.width, cfp.height);
    const Image base = cfp.width == cfp.height ? cfp : resize_bilinear(cfp, sq, sq);
    const int cs = static_cast<int>(std::lround(crop_fraction * sq));
    if (cs <= 0) fail_runtime("oversample: crop window rounds to zero pixels");

    const int far = sq - cs;
    const int center = far / 2;
    InstanceBag bag;
    bag.modality = Modality::cfp;
    bag.instances.push_back(resize_bilinear(base, side, side));
    const std::pair<int, int> corners[5] = {
        {0, 0}, {far, 0}, {0, far}, {far, far}, {center, center}};
    for (const auto& [x0, y0] : corners)
        bag.instances.push_back(resize_bilinear(crop(base, x0, y0, cs, cs), side, side));
    // same six, horizontally flipped, in the same order
    for (int i = 0; i < 6; ++i) bag.instances.push_back(hflip(bag.instances[i]));
    return bag;
}

std::vector<CropWindow> oversample_windows(double crop_fraction, int square_side) {
    if (crop_fraction <= 0.0 || crop_fraction > 1.0)
        fail_runtime("oversample_windows: crop_fraction must lie in (0,1], got ", crop_fraction);
    const int cs = static_cast<int>(std::lround(crop_fraction * square_side));
    if (cs <= 0) fail_runtime("oversample_windows: crop window rounds to zero pixels");
    const int far = square_side - cs;
    const int center = far / 2;
    std::vector<CropWindow> windows = {
        {0, 0, square_side, false}, {0, 0, cs, false},     {far, 0, cs, false},
        {0, far, cs, false},        {far, far, cs, false}, {center, center, cs, false},
    };
    for (int i = 0; i < 6; ++i) {
        CropWindow w = windows[i];
        w.flipped = true;
        windows.push_back(w);
    }
    return windows;
}

CaseImages load_case_images(const CaseRecord& rec) {
    CaseImages out;
    try {
        out.cfp = read_image(rec.cfp_path);
        for (const auto& p : rec.oct_paths) out.oct.push_back(read_image(p));
    } catch (const Error& e) {
        fail_data("case '", rec.case_id, "': ", e.what());
    }
    return out;
}

TrainSample sample_train_instances(const CaseImages& images, int k, Rng& rng, int side) {
    const int n = static_cast<int>(images.oct.size());
    if (k > n) fail_runtime("sample_train_instances: k=", k, " exceeds OCT sequence length ", n);
    if (k < 1) fail_runtime("sample_train_instances: k must be >= 1");

    TrainSample out;
    out.oct_indices = rng.sample_without_replacement(n, k);
    std::sort(out.oct_indices.begin(), out.oct_indices.end());
    out.oct.modality = Modality::oct;
    for (int idx : out.oct_indices)
        out.oct.instances.push_back(resize_bilinear(images.oct[idx], side, side));

    out.cfp.modality = Modality::cfp;
    for (int i = 0; i < k; ++i) {
        const double scale = rng.uniform(0.5, 1.0);
        const int short_side = std::min(images.cfp.width, images.cfp.height);
        int cs = std::max(1, static_cast<int>(std::lround(scale * short_side)));
        cs = std::min({cs, images.cfp.width, images.cfp.height});
        const int x0 = rng.uniform_int(0, images.cfp.width - cs);
        const int y0 = rng.uniform_int(0, images.cfp.height - cs);
        out.cfp.instances.push_back(resize_bilinear(crop(images.cfp, x0, y0, cs, cs), side, side));
    }
    return out;
}

Image augment(const Image& img, Rng& rng, const AugmentPolicy& policy) {
    if (!policy.enabled) return img;
    Image out = img;
    if (rng.uniform() < policy.p_flip) out = hflip(out);
    if (rng.uniform() < policy.p_brightness)
        out = scale_brightness(out, rng.uniform(policy.brightness_lo, policy.brightness_hi));
    if (rng.uniform() < policy.p_rotate)
        out = rotate_degrees(out, rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg));
    return out;
}

ChannelStats compute_channel_stats(const std::vector<const Image*>& images, int channels) {
    ChannelStats stats;
    stats.mean.assign(channels, 0.0);
    stats.stdev.assign(channels, 1.0);
    std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
    std::vector<int64_t> count(channels, 0);
    for (const Image* img : images) {
        if (img->channels != channels)
            fail_runtime("channel_stats: image has ", img->channels, " channels, expected ",
                         channels);
        for (size_t i = 0; i < img->pixels.size(); ++i) {
            const int c = static_cast<int>(i % channels);
            const double v = img->pixels[i] / 255.0;
            sum[c] += v;
            sumsq[c] += v * v;
            count[c]++;
        }
    }
    for (int c = 0; c < channels; ++c) {
        if (count[c] == 0) continue;
        stats.mean[c] = sum[c] / count[c];
        const double var = std::max(sumsq[c] / count[c] - stats.mean[c] * stats.mean[c], 1e-8);
        stats.stdev[c] = std::sqrt(var);
    }
    return stats;
}

Tensor bag_to_tensor(const InstanceBag& bag, const ChannelStats& stats) {
    if (bag.instances.empty()) fail_runtime("bag_to_tensor: empty bag");
    const Image& first = bag.instances.front();
    const int c = first.channels, h = first.height, w = first.width;
    if (static_cast<int>(stats.mean.size()) != c)
        fail_runtime("bag_to_tensor: stats have ", stats.mean.size(), " channels, images ", c);
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(bag.size()) * c * h * w);
    for (const Image& img : bag.instances) {
        if (img.channels != c || img.height != h || img.width != w)
            fail_runtime("bag_to_tensor: instances differ in size");
        // interleaved bytes -> planar normalized doubles
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    vals.push_back((img.at(x, y, ci) / 255.0 - stats.mean[ci]) / stats.stdev[ci]);
    }
    return Tensor::from({bag.size(), c, h, w}, std::move(vals));
}

}  // namespace mmmil
