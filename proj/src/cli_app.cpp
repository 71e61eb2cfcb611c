#include "mmmil/cli_app.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "mmmil/image_io.hpp"
#include "mmmil/train.hpp"

namespace mmmil {

using json = nlohmann::json;

namespace {

struct CliOptions {
    std::string manifest_path;
    std::string config_path;
    std::string checkpoint_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::vector<std::string> case_ids;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

class ArtifactList {
public:
    explicit ArtifactList(const std::filesystem::path& out_dir) : out_dir_(out_dir) {}

    void add(const std::filesystem::path& path, const std::string& kind) {
        entries_.push_back({{"path", std::filesystem::relative(path, out_dir_).string()},
                            {"kind", kind}});
    }

    void write() const {
        std::ofstream out(out_dir_ / "artifacts.json");
        out << json(entries_).dump(2) << "\n";
    }

private:
    std::filesystem::path out_dir_;
    std::vector<json> entries_;
};

void write_json_file(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) fail_data("cannot write '", path.string(), "'");
    out << doc.dump(2) << "\n";
}

AppConfig resolve_config(const CliOptions& cli) {
    json doc = json::object();
    if (!cli.config_path.empty()) {
        std::ifstream in(cli.config_path);
        if (!in) fail_data("cannot open config '", cli.config_path, "'");
        try {
            in >> doc;
        } catch (const json::exception& e) {
            fail_data("failed to parse config '", cli.config_path, "': ", e.what());
        }
    }
    for (const std::string& assignment : cli.overrides) apply_override(doc, assignment);
    AppConfig config = app_config_from_json(doc);
    if (cli.seed_set) {
        config.train.seed = cli.seed;
        config.synth.seed = cli.seed;
        config.eval.seed = cli.seed;
    }
    return config;
}

std::filesystem::path require_out(const CliOptions& cli) {
    if (cli.out_dir.empty()) fail_usage("--out is required for this command");
    std::filesystem::path dir(cli.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void echo_effective_config(const AppConfig& config, const std::filesystem::path& out_dir,
                           ArtifactList& artifacts) {
    const auto path = out_dir / "config.effective.json";
    write_json_file(path, app_config_to_json(config));
    artifacts.add(path, "effective-config");
}

json interval_to_json(const std::optional<BootstrapInterval>& ci) {
    if (!ci) return nullptr;
    return {{"lower", ci->lower}, {"upper", ci->upper}, {"skipped", ci->skipped_replicates}};
}

json opt_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_to_json(const MetricReport& report) {
    json overall = {{"AP", opt_to_json(report.macro_ap)},
                    {"AUC", opt_to_json(report.macro_auc)},
                    {"Sen", opt_to_json(report.macro_sensitivity)},
                    {"Spe", opt_to_json(report.macro_specificity)},
                    {"F1", opt_to_json(report.macro_f1)},
                    {"AP_CI", interval_to_json(report.macro_ap_ci)}};
    json per_category = json::array();
    for (const CategoryMetrics& cm : report.per_category)
        per_category.push_back({{"category", cm.category},
                                {"AP", opt_to_json(cm.ap)},
                                {"AUC", opt_to_json(cm.auc)},
                                {"Sen", opt_to_json(cm.sensitivity)},
                                {"Spe", opt_to_json(cm.specificity)},
                                {"F1", opt_to_json(cm.f1)},
                                {"AP_CI", interval_to_json(cm.ap_ci)}});
    json doc = {{"overall", overall}, {"per_category", per_category}};
    if (report.micro)
        doc["overall_micro"] = {{"AP", opt_to_json(report.micro->ap)},
                                {"AUC", opt_to_json(report.micro->auc)},
                                {"Sen", opt_to_json(report.micro->sensitivity)},
                                {"Spe", opt_to_json(report.micro->specificity)},
                                {"F1", opt_to_json(report.micro->f1)}};
    return doc;
}

int cmd_paramcount(const CliOptions& cli, std::ostream& out) {
    const int d = 2048;
    json modules = json::array();
    for (int heads : {1, 2, 4, 8}) {
        const int64_t count = mmmil_fusion_param_count(d, heads);
        modules.push_back({{"name", cat("MM-MIL x", heads)},
                           {"params", count},
                           {"millions", count / 1e6}});
    }
    for (auto [depth, heads] : {std::pair{1, 1}, std::pair{4, 4}}) {
        const int64_t count = mha_fusion_param_count(d, depth);
        modules.push_back({{"name", cat("MHA(d=", depth, ", h=", heads, ")")},
                           {"params", count},
                           {"millions", count / 1e6}});
    }
    const json doc = {{"d", d}, {"attention_hidden", 128}, {"modules", modules}};
    out << doc.dump(2) << "\n";
    if (!cli.out_dir.empty()) {
        const auto dir = require_out(cli);
        ArtifactList artifacts(dir);
        write_json_file(dir / "table1.json", doc);
        artifacts.add(dir / "table1.json", "param-count-table");
        artifacts.write();
    }
    return 0;
}

int cmd_synth(const CliOptions& cli, std::ostream& out) {
    const auto dir = require_out(cli);
    const AppConfig config = resolve_config(cli);
    ArtifactList artifacts(dir);
    const SynthResult result = generate_synthetic(config.synth, dir);
    echo_effective_config(config, dir, artifacts);
    artifacts.add(result.manifest_path, "manifest");
    artifacts.add(result.sidecar_dir, "sidecar-directory");
    artifacts.write();
    out << "generated " << result.n_cases << " cases under " << dir.string() << "\n";
    return 0;
}

Manifest load_manifest_or_fail(const CliOptions& cli) {
    if (cli.manifest_path.empty()) fail_usage("--manifest is required for this command");
    return load_manifest(cli.manifest_path);
}

int cmd_train(const CliOptions& cli, std::ostream& out) {
    const auto dir = require_out(cli);
    const AppConfig config = resolve_config(cli);
    const Manifest manifest = load_manifest_or_fail(cli);
    ArtifactList artifacts(dir);
    echo_effective_config(config, dir, artifacts);

    std::ofstream log_stream(dir / "train_log.jsonl");
    const ProgressFn progress = [&](const EpochLog& log) {
        const json row = {{"epoch", log.epoch},
                          {"train_loss", log.train_loss},
                          {"val_AP", log.val_ap},
                          {"lr", log.lr}};
        log_stream << row.dump() << "\n";
        log_stream.flush();
        out << "epoch " << log.epoch << " loss " << log.train_loss << " val_AP " << log.val_ap
            << "\n";
    };

    const RepeatResult result = repeat_and_select(manifest, config.model, config.train, progress);
    const auto ckpt_path = dir / "checkpoint.mmml";
    save_checkpoint(ckpt_path, result.best.best);
    artifacts.add(ckpt_path, "checkpoint");
    artifacts.add(dir / "train_log.jsonl", "train-log");

    json summary = {{"selected_repeat", result.selected_repeat},
                    {"val_aps", result.val_aps},
                    {"failures", result.failures},
                    {"best_epoch", result.best.best_epoch},
                    {"best_val_ap", result.best.best_val_ap},
                    {"seed", result.best.seed}};
    write_json_file(dir / "train_summary.json", summary);
    artifacts.add(dir / "train_summary.json", "train-summary");
    artifacts.write();
    out << "selected repeat " << result.selected_repeat << " (val AP " << result.best.best_val_ap
        << "), checkpoint: " << ckpt_path.string() << "\n";
    return 0;
}

Checkpoint load_checkpoint_or_fail(const CliOptions& cli) {
    if (cli.checkpoint_path.empty()) fail_usage("--checkpoint is required for this command");
    return load_checkpoint(cli.checkpoint_path);
}

int cmd_eval(const CliOptions& cli, std::ostream& out) {
    const auto dir = require_out(cli);
    const AppConfig config = resolve_config(cli);
    const Manifest manifest = load_manifest_or_fail(cli);
    const Checkpoint ckpt = load_checkpoint_or_fail(cli);
    ArtifactList artifacts(dir);
    echo_effective_config(config, dir, artifacts);

    const EvalResult result =
        evaluate(ckpt, manifest, split_from_string(config.eval.split), config.eval);
    write_json_file(dir / "metrics.json", report_to_json(result.report));
    artifacts.add(dir / "metrics.json", "metric-report");

    json preds = json::array();
    for (const CasePrediction& p : result.predictions)
        preds.push_back({{"case_id", p.case_id},
                         {"probabilities", p.probabilities},
                         {"labels", p.labels}});
    write_json_file(dir / "predictions.json", preds);
    artifacts.add(dir / "predictions.json", "prediction-cache");
    artifacts.write();
    out << "overall AP "
        << (result.report.macro_ap ? std::to_string(*result.report.macro_ap) : "absent") << " on "
        << result.predictions.size() << " cases\n";
    return 0;
}

Image map_to_image(const InstanceMap& map, double lo, double hi, int side) {
    Image img(map.w, map.h, 1);
    const double range = hi - lo > 1e-12 ? hi - lo : 1.0;
    for (int i = 0; i < map.w * map.h; ++i)
        img.pixels[i] = static_cast<uint8_t>(
            std::clamp(std::lround((map.values[i] - lo) / range * 255.0), 0l, 255l));
    return resize_bilinear(img, side, side);
}

int cmd_explain(const CliOptions& cli, std::ostream& out) {
    const auto dir = require_out(cli);
    const AppConfig config = resolve_config(cli);
    const Manifest manifest = load_manifest_or_fail(cli);
    const Checkpoint ckpt = load_checkpoint_or_fail(cli);
    ArtifactList artifacts(dir);
    echo_effective_config(config, dir, artifacts);

    const Network net = restore_network(ckpt);
    const InferenceOptions opts = inference_options(ckpt);
    const int side = ckpt.model.cfp_backbone.input_side;

    std::vector<const CaseRecord*> targets;
    if (cli.case_ids.empty()) {
        targets = manifest.split_cases(split_from_string(config.eval.split));
    } else {
        for (const std::string& id : cli.case_ids) {
            const CaseRecord* found = nullptr;
            for (const CaseRecord& c : manifest.cases)
                if (c.case_id == id) found = &c;
            if (!found) fail_data("case '", id, "' not found in the manifest");
            targets.push_back(found);
        }
    }
    if (targets.empty()) fail_data("no cases to explain");

    for (const CaseRecord* rec : targets) {
        const CaseExplanation ex =
            explain_case(net, load_case_images(*rec), opts, rec->case_id);

        // per-case min-max normalization for the display PNGs only
        double lo = 1e300, hi = -1e300;
        for (const auto* maps : {&ex.cfp_maps, &ex.oct_maps})
            for (const InstanceMap& m : *maps)
                for (double v : m.values) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
        auto dump_maps = [&](const std::vector<InstanceMap>& maps, const char* modality,
                             json& raw_out) {
            raw_out = json::array();
            for (size_t i = 0; i < maps.size(); ++i) {
                const auto png = dir / cat(rec->case_id, "_", modality, "_", i, ".png");
                write_png(png, map_to_image(maps[i], lo, hi, side));
                artifacts.add(png, "activation-map");
                raw_out.push_back({{"w", maps[i].w}, {"h", maps[i].h}, {"values", maps[i].values}});
            }
        };
        json cfp_raw, oct_raw;
        dump_maps(ex.cfp_maps, "cfp", cfp_raw);
        dump_maps(ex.oct_maps, "oct", oct_raw);

        // B-scans by attention weight, most attended first
        std::vector<int> oct_ranking(ex.attention_oct.size());
        std::iota(oct_ranking.begin(), oct_ranking.end(), 0);
        std::stable_sort(oct_ranking.begin(), oct_ranking.end(), [&](int a, int b) {
            return ex.attention_oct[a] > ex.attention_oct[b];
        });

        const json doc = {{"case_id", rec->case_id},
                          {"probabilities", ex.prediction.probabilities},
                          {"attention", {{"cfp", ex.attention_cfp}, {"oct", ex.attention_oct}}},
                          {"modality_share", {{"cfp", ex.cfp_share}, {"oct", ex.oct_share}}},
                          {"oct_ranking", oct_ranking},
                          {"activation_maps", {{"cfp", cfp_raw}, {"oct", oct_raw}}}};
        const auto json_path = dir / cat(rec->case_id, "_explanation.json");
        write_json_file(json_path, doc);
        artifacts.add(json_path, "explanation");
    }
    artifacts.write();
    out << "explained " << targets.size() << " case(s)\n";
    return 0;
}

int cmd_headstats(const CliOptions& cli, std::ostream& out) {
    const auto dir = require_out(cli);
    const AppConfig config = resolve_config(cli);
    const Manifest manifest = load_manifest_or_fail(cli);
    const Checkpoint ckpt = load_checkpoint_or_fail(cli);
    ArtifactList artifacts(dir);
    echo_effective_config(config, dir, artifacts);

    const Network net = restore_network(ckpt);
    const InferenceOptions opts = inference_options(ckpt);
    const auto cases = manifest.split_cases(split_from_string(config.eval.split));
    if (cases.empty()) fail_data("split '", config.eval.split, "' is empty");

    std::vector<CaseExplanation> explanations;
    std::vector<std::vector<int>> labels;
    for (const CaseRecord* rec : cases) {
        explanations.push_back(explain_case(net, load_case_images(*rec), opts, rec->case_id));
        labels.push_back(rec->labels);
    }
    const auto shares = modality_attention_share(explanations, labels, manifest.categories);

    json rows = json::array();
    for (const HeadShareEntry& e : shares)
        rows.push_back({{"category", e.category},
                        {"positives", e.positives},
                        {"per_head_cfp_share", e.per_head_cfp_share},
                        {"per_head_oct_share", e.per_head_oct_share},
                        {"mean_cfp_share", e.mean_cfp_share},
                        {"mean_oct_share", e.mean_oct_share}});
    const json doc = {{"split", config.eval.split}, {"categories", rows}};
    write_json_file(dir / "headstats.json", doc);
    artifacts.add(dir / "headstats.json", "head-share-report");
    artifacts.write();
    out << doc.dump(2) << "\n";
    return 0;
}

void emit_error(std::ostream& err, int code, const std::string& kind, const std::string& message) {
    const json doc = {{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
    err << doc.dump() << "\n";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"multi-modal multiple-instance learning toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    CliOptions cli;
    app.add_option("--manifest", cli.manifest_path, "dataset manifest JSON");
    app.add_option("--config", cli.config_path, "configuration JSON");
    app.add_option("--checkpoint", cli.checkpoint_path, "model checkpoint");
    app.add_option("--out", cli.out_dir, "output directory for artifacts");
    app.add_option("--seed", cli.seed, "seed overriding the config")
        ->each([&](const std::string&) { cli.seed_set = true; });
    app.add_option("--threads", cli.threads, "worker threads (1 keeps runs deterministic)")
        ->check(CLI::PositiveNumber);
    app.add_option("--set", cli.overrides, "config override, dotted path (fusion.heads=4)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-modal dataset");
    auto* train = app.add_subcommand("train", "train with repeat-and-select");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    auto* explain = app.add_subcommand("explain", "emit attention maps and explanations");
    explain->add_option("--case", cli.case_ids, "case id(s) to explain; default: eval split");
    auto* paramcount =
        app.add_subcommand("paramcount", "fusion-module parameter counts at d=2048");
    auto* headstats = app.add_subcommand("headstats", "per-head modality attention shares");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            out << app.help();
            return 0;
        }
        emit_error(err, 1, "usage", e.what());
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(cli, out);
        if (train->parsed()) return cmd_train(cli, out);
        if (eval->parsed()) return cmd_eval(cli, out);
        if (explain->parsed()) return cmd_explain(cli, out);
        if (paramcount->parsed()) return cmd_paramcount(cli, out);
        if (headstats->parsed()) return cmd_headstats(cli, out);
        emit_error(err, 1, "usage", "no subcommand given");
        return 1;
    } catch (const Error& e) {
        const int code = static_cast<int>(e.kind());
        const char* kind = code == 1 ? "usage" : code == 2 ? "data" : "runtime";
        emit_error(err, code, kind, e.what());
        return code;
    } catch (const std::exception& e) {
        emit_error(err, 3, "runtime", e.what());
        return 3;
    }
}

}  // namespace mmmil
