#include "mmmil/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace mmmil {

namespace {

// Defense in depth: re-validate subject-disjointness right before training.
void check_split_integrity(const Manifest& manifest) {
    std::unordered_map<std::string, Split> seen;
    for (const CaseRecord& c : manifest.cases) {
        auto [it, inserted] = seen.insert({c.subject_id, c.split});
        if (!inserted && it->second != c.split)
            fail_data("subject leakage detected before training: subject '", c.subject_id, "'");
    }
}

struct LoadedCase {
    const CaseRecord* record = nullptr;
    CaseImages images;
};

std::vector<LoadedCase> load_split(const Manifest& manifest, Split split) {
    std::vector<LoadedCase> out;
    for (const CaseRecord* rec : manifest.split_cases(split))
        out.push_back({rec, load_case_images(*rec)});
    return out;
}

ChannelStats stats_over(const std::vector<LoadedCase>& cases, bool cfp) {
    std::vector<const Image*> imgs;
    for (const LoadedCase& c : cases) {
        if (cfp) {
            imgs.push_back(&c.images.cfp);
        } else {
            for (const Image& scan : c.images.oct) imgs.push_back(&scan);
        }
    }
    if (imgs.empty()) {
        ChannelStats s;
        s.mean.assign(cfp ? 3 : 1, 0.5);
        s.stdev.assign(cfp ? 3 : 1, 0.25);
        return s;
    }
    return compute_channel_stats(imgs, cfp ? 3 : 1);
}

// Training-time bags for one case under the configured fusion mode.
std::pair<InstanceBag, InstanceBag> train_time_bags(const LoadedCase& c,
                                                    const ModelConfig& model,
                                                    const TrainConfig& cfg, Rng& rng) {
    const int side = model.cfp_backbone.input_side;
    const FusionMode mode = model.fusion.mode;

    InstanceBag cfp_bag;
    cfp_bag.modality = Modality::cfp;
    InstanceBag oct_bag;
    oct_bag.modality = Modality::oct;

    const bool wants_cfp = mode != FusionMode::single_mil ||
                           model.fusion.single_modality == SingleModality::cfp;
    const bool wants_oct = mode != FusionMode::single_mil ||
                           model.fusion.single_modality == SingleModality::oct;

    if (mode == FusionMode::concat) {
        cfp_bag.instances.push_back(resize_bilinear(c.images.cfp, side, side));
        const int idx = bscan_index(model.fusion.bscan_strategy,
                                    static_cast<int>(c.images.oct.size()));
        oct_bag.instances.push_back(resize_bilinear(c.images.oct[idx], side, side));
    } else {
        const int n_oct = static_cast<int>(c.images.oct.size());
        const int k = std::min(cfg.k_instances, n_oct);
        TrainSample sample = sample_train_instances(c.images, k, rng, side);
        if (wants_oct) oct_bag = std::move(sample.oct);
        if (wants_cfp) {
            if (cfg.oversample) {
                cfp_bag = std::move(sample.cfp);
            } else {
                // over-sampling disabled: the CFP contributes a single instance
                cfp_bag.instances.push_back(resize_bilinear(c.images.cfp, side, side));
            }
        }
    }
    for (Image& img : cfp_bag.instances) img = augment(img, rng, cfg.augment);
    for (Image& img : oct_bag.instances) img = augment(img, rng, cfg.augment);
    return {std::move(cfp_bag), std::move(oct_bag)};
}

std::vector<std::vector<int>> label_rows(const std::vector<const CaseRecord*>& cases) {
    std::vector<std::vector<int>> out;
    for (const CaseRecord* c : cases) out.push_back(c->labels);
    return out;
}

}  // namespace

double validation_macro_ap(const Network& net, const std::vector<const CaseRecord*>& cases,
                           const InferenceOptions& opts, const std::vector<CaseImages>* cache) {
    std::vector<std::vector<double>> probs;
    for (size_t i = 0; i < cases.size(); ++i) {
        const CaseImages images = cache ? (*cache)[i] : load_case_images(*cases[i]);
        probs.push_back(predict_case(net, images, opts).probabilities);
    }
    const MetricReport report = compute_metric_report(
        probs, label_rows(cases), net.config().categories.empty()
                                      ? std::vector<std::string>(net.config().m, "?")
                                      : net.config().categories);
    return report.macro_ap.value_or(0.0);
}

TrainResult train_model(const Manifest& manifest, const ModelConfig& model_config,
                        const TrainConfig& train_config, const ProgressFn& progress) {
    train_config.validate();
    check_split_integrity(manifest);

    ModelConfig model = model_config;
    if (model.categories.empty()) {
        model.categories = manifest.categories;
        model.m = manifest.num_categories();
    }
    if (model.m != manifest.num_categories())
        fail_data("model expects m=", model.m, " categories but the manifest has ",
                  manifest.num_categories());

    std::vector<LoadedCase> train_cases = load_split(manifest, Split::train);
    std::vector<LoadedCase> val_cases = load_split(manifest, Split::val);
    if (train_cases.empty()) fail_data("training split is empty");

    const ChannelStats cfp_stats = stats_over(train_cases, true);
    const ChannelStats oct_stats = stats_over(train_cases, false);

    Network net(model, train_config.seed);
    SgdOptimizer opt(net.parameters(), train_config.momentum, train_config.weight_decay);

    const int n_train = static_cast<int>(train_cases.size());
    const long steps_per_epoch =
        (n_train + train_config.batch_size - 1) / train_config.batch_size;
    const LrSchedule schedule =
        train_config.schedule == "constant"
            ? LrSchedule::constant(train_config.max_lr)
            : LrSchedule::onecycle(train_config.max_lr, train_config.max_epochs * steps_per_epoch,
                                   train_config.warmup_fraction, train_config.start_div,
                                   train_config.final_div);

    InferenceOptions val_opts;
    val_opts.crop_fraction = train_config.crop_fraction;
    val_opts.oversample = train_config.oversample;
    val_opts.cfp_stats = cfp_stats;
    val_opts.oct_stats = oct_stats;

    std::vector<const CaseRecord*> val_records;
    std::vector<CaseImages> val_images;
    for (const LoadedCase& c : val_cases) {
        val_records.push_back(c.record);
        val_images.push_back(c.images);
    }

    Rng rng(Rng::mix(train_config.seed, 0x7261696eull));
    TrainResult result;
    result.seed = train_config.seed;

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    long global_step = 0;
    double last_lr = 0.0;
    for (int epoch = 0; epoch < train_config.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long batches = 0;
        for (int start = 0; start < n_train; start += train_config.batch_size) {
            const int end = std::min(start + train_config.batch_size, n_train);
            Tensor batch_loss;
            for (int i = start; i < end; ++i) {
                const LoadedCase& c = train_cases[order[i]];
                auto [cfp_bag, oct_bag] = train_time_bags(c, model, train_config, rng);
                Tensor cfp_batch, oct_batch;
                if (cfp_bag.size() > 0) cfp_batch = bag_to_tensor(cfp_bag, cfp_stats);
                if (oct_bag.size() > 0) oct_batch = bag_to_tensor(oct_bag, oct_stats);
                Network::Forward fwd = net.forward(cfp_batch, oct_batch);
                Tensor target = Tensor::from(
                    {1, model.m}, std::vector<double>(c.record->labels.begin(),
                                                      c.record->labels.end()));
                Tensor loss = ops::bce_loss(fwd.probs, target);
                batch_loss = batch_loss.defined() ? ops::add(batch_loss, loss) : loss;
            }
            batch_loss = ops::scale(batch_loss, 1.0 / (end - start));
            const double loss_value = batch_loss.item();
            if (!std::isfinite(loss_value))
                fail_runtime("training diverged: loss=", loss_value, " at epoch ", epoch,
                             ", batch ", batches, ", lr ", last_lr);
            opt.zero_grad();
            batch_loss.backward();
            last_lr = schedule.kind == LrSchedule::Kind::constant
                          ? schedule.max_lr
                          : schedule.lr_at(global_step);
            opt.step(last_lr);
            ++global_step;
            ++batches;
            epoch_loss += loss_value;
        }
        epoch_loss /= std::max(batches, 1l);

        const double val_ap =
            val_records.empty() ? 0.0
                                : validation_macro_ap(net, val_records, val_opts, &val_images);

        EpochLog log{epoch, epoch_loss, val_ap, last_lr};
        result.log.push_back(log);
        if (progress) progress(log);

        if (result.best_epoch < 0 || val_ap > result.best_val_ap) {
            result.best_val_ap = val_ap;
            result.best_epoch = epoch;
            TrainMeta meta{train_config.seed, epoch, val_ap};
            result.best = snapshot_network(net, cfp_stats, oct_stats, train_config.crop_fraction,
                                           train_config.oversample, meta);
        }
    }
    return result;
}

RepeatResult repeat_and_select(const Manifest& manifest, const ModelConfig& model_config,
                               const TrainConfig& train_config, const ProgressFn& progress) {
    RepeatResult result;
    std::vector<TrainResult> runs;
    for (int r = 0; r < train_config.repeats; ++r) {
        TrainConfig cfg = train_config;
        cfg.seed = train_config.seed + static_cast<uint64_t>(r);
        try {
            runs.push_back(train_model(manifest, model_config, cfg, progress));
            result.val_aps.push_back(runs.back().best_val_ap);
        } catch (const Error& e) {
            result.failures.push_back(cat("repeat ", r, " (seed ", cfg.seed, "): ", e.what()));
        }
    }
    if (runs.empty())
        fail_runtime("all ", train_config.repeats, " training repeats failed; first failure: ",
                     result.failures.empty() ? "unknown" : result.failures.front());

    size_t best = 0;  // argmax val AP, ties to the lower seed (earlier run)
    for (size_t i = 1; i < runs.size(); ++i)
        if (runs[i].best_val_ap > runs[best].best_val_ap) best = i;
    result.selected_repeat = static_cast<int>(best);
    result.best = std::move(runs[best]);
    return result;
}

EvalResult evaluate(const Checkpoint& ckpt, const Manifest& manifest, Split split,
                    const EvalConfig& eval_config) {
    const std::vector<const CaseRecord*> cases = manifest.split_cases(split);
    if (cases.empty()) fail_data("split '", split_to_string(split), "' is empty");
    if (!ckpt.model.categories.empty() && ckpt.model.categories != manifest.categories)
        fail_data("checkpoint categories do not match the manifest");

    const Network net = restore_network(ckpt);
    const InferenceOptions opts = inference_options(ckpt);

    EvalResult result;
    std::vector<std::vector<double>> probs;
    for (const CaseRecord* rec : cases) {
        const Prediction pred = predict_case(net, load_case_images(*rec), opts);
        probs.push_back(pred.probabilities);
        result.predictions.push_back({rec->case_id, pred.probabilities, rec->labels});
    }
    result.report = compute_metric_report(probs, label_rows(cases), manifest.categories,
                                          eval_config.threshold, eval_config.bootstrap_replicates,
                                          eval_config.level, eval_config.seed, eval_config.micro);
    return result;
}

}  // namespace mmmil
