#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "m3s/error.hpp"
#include "m3s/evaluation.hpp"
#include "m3s/feature_cache.hpp"
#include "m3s/image_io.hpp"
#include "m3s/pipeline.hpp"
#include "m3s/toy_backend.hpp"

namespace m3s::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string spec;
    std::vector<std::string> overrides;
    std::string out = "out";
    std::string backend = "toy";
    std::uint64_t backend_seed = 0;
    std::string preset = "professional";
    bool trace = false;
    int jobs = 1;
    std::string axis;
    std::vector<double> values;
    std::string cache;
    std::string image;
    std::uint64_t extractor_seed = 0;
};

std::unique_ptr<DenoiserBackend> make_backend(const Options& o) {
    if (o.backend == "toy") {
        ToyBackendOptions opt;
        opt.seed = o.backend_seed;
        return std::make_unique<ToyBackend>(opt);
    }
    if (o.backend.rfind("adapter:", 0) == 0) {
        throw ValidationError("--backend", "no adapter named '" + o.backend.substr(8) + "' is registered in this build");
    }
    throw ValidationError("--backend", "expected 'toy' or 'adapter:<name>', got '" + o.backend + "'");
}

RunConfig load_config(const Options& o) {
    if (o.spec.empty()) throw ValidationError("--spec", "a run spec is required");
    std::vector<std::string> overrides = o.overrides;
    if (o.trace) overrides.emplace_back("trace=true");
    return load_run_config(o.spec, overrides, preset(o.preset));
}

std::string run_id(const Options& o) { return o.spec.empty() ? "run" : fs::path(o.spec).stem().string(); }

json trace_json(const std::vector<StepRecord>& trace) {
    json arr = json::array();
    for (const StepRecord& r : trace) {
        json j{{"index", r.index}, {"timestep", r.timestep}, {"omega2", r.omega2}, {"regulated", r.regulated}};
        if (r.regulated) {
            j["edge_loss_before"] = r.edge_loss_before;
            j["edge_loss_after"] = r.edge_loss_after;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

json result_json(const SynthesisResult& r, const std::string& backend) {
    json j{{"backend", backend}, {"config", to_json(r.config_echo)}};
    if (r.config_echo.trace) j["trace"] = trace_json(r.trace);
    return j;
}

void cmd_generate(const Options& o, std::ostream& out) {
    const RunConfig cfg = load_config(o);
    const auto backend = make_backend(o);
    const std::vector<Tensor> refs = load_reference_images(cfg);
    const SynthesisResult r = synthesize(cfg, *backend, refs);
    fs::create_directories(o.out);
    const fs::path image = fs::path(o.out) / "image.png";
    write_png(image, r.image);
    write_file_atomic(fs::path(o.out) / "result.json", result_json(r, o.backend).dump(2) + "\n");
    out << "wrote " << image.string() << "\n";
}

void cmd_sweep(const Options& o, std::ostream& out) {
    const RunConfig cfg = load_config(o);
    if (o.axis.empty()) throw ValidationError("--axis", "a sweep axis is required");
    const SweepAxis axis = parse_sweep_axis(o.axis);
    if (o.values.empty()) throw ValidationError("--values", "at least one value is required");
    if (o.jobs < 1) throw ValidationError("--jobs", "must be >= 1");
    // Validate every cell before loading anything heavy.
    for (double v : o.values) with_axis_value(cfg, axis, v).validate();
    const auto backend = make_backend(o);
    const std::vector<Tensor> refs = load_reference_images(cfg);
    const SweepResult res = sweep(cfg, axis, o.values, *backend, refs, o.jobs);

    fs::create_directories(o.out);
    json sidecar{{"axis", to_string(axis)}, {"backend", o.backend}, {"panels", json::array()}};
    for (std::size_t i = 0; i < res.panels.size(); ++i) {
        std::ostringstream name;
        name << "panel_" << std::setw(2) << std::setfill('0') << i << ".png";
        write_png(fs::path(o.out) / name.str(), res.panels[i].image);
        json meta = res.metadata[i];
        meta["file"] = name.str();
        if (res.panels[i].config_echo.trace) meta["trace"] = trace_json(res.panels[i].trace);
        sidecar["panels"].push_back(std::move(meta));
    }
    write_png(fs::path(o.out) / "contact_sheet.png", res.contact_sheet);
    write_file_atomic(fs::path(o.out) / "contact_sheet.json", sidecar.dump(2) + "\n");
    out << "wrote " << res.panels.size() << " panels to " << o.out << "\n";
}

void cmd_prepare_refs(const Options& o, std::ostream& out) {
    const RunConfig cfg = load_config(o);
    if (cfg.references.empty()) throw ValidationError("references", "prepare-refs needs at least one reference");
    const auto backend = make_backend(o);
    const std::vector<Tensor> refs = load_reference_images(cfg);
    const NoiseSchedule sched = default_schedule();
    RunConfig prep_cfg = cfg;
    if (prep_cfg.injection.mode == InjectionMode::none) prep_cfg.injection.mode = InjectionMode::concat_smoothed;
    const PreparedReferences prep = prepare_references(prep_cfg, *backend, refs, sched);
    if (prep.layer_ids.empty()) {
        throw ValidationError("injection.layers", "selection matches no attention layer of backend '" + o.backend + "'");
    }

    json traj{{"latent_shape", {backend->latent_shape().channels, backend->latent_shape().height,
                                backend->latent_shape().width}},
              {"references", json::array()}};
    for (const ReferenceBundle& b : prep.bundles) {
        json steps = json::array();
        for (const auto& [t, z] : b.trajectory) {
            steps.push_back({{"timestep", t}, {"data", std::vector<double>(z.data.values().begin(), z.data.values().end())}});
        }
        traj["references"].push_back({{"cache_index", b.cache_index},
                                       {"source", cfg.references[static_cast<std::size_t>(b.cache_index)]},
                                       {"trajectory", std::move(steps)}});
    }
    fs::create_directories(o.out);
    std::ostringstream bin;
    write_feature_cache(bin, prep.cache);
    const std::string bytes = bin.str();
    write_file_atomic(fs::path(o.out) / "cache.m3sfc", std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    write_file_atomic(fs::path(o.out) / "trajectories.json", traj.dump() + "\n");
    out << "cached " << prep.cache.entry_count() << " entries (" << prep.layer_ids.size() << " layers x "
        << prep.grid.size() << " timesteps x " << prep.bundles.size() << " references)\n";
}

void cmd_evaluate(const Options& o, std::ostream& out) {
    const RunConfig cfg = load_config(o);
    const auto backend = make_backend(o);
    const std::vector<Tensor> refs = load_reference_images(cfg);
    Tensor image;
    if (!o.image.empty()) {
        image = read_png_gray(o.image);
    } else {
        image = synthesize(cfg, *backend, refs).image;
    }
    const RandomConvExtractor fx(o.extractor_seed);
    const std::string id = run_id(o);
    std::vector<MetricRow> rows{{id, "text_alignment", text_alignment(image, cfg.prompt, fx)}};
    for (std::size_t k = 0; k < refs.size(); ++k) {
        const Tensor ref = resize_image(refs[k], image.shape().height, image.shape().width);
        rows.push_back({id, "embedding_similarity_ref" + std::to_string(k + 1), embedding_similarity(image, ref, fx)});
        rows.push_back({id, "gram_distance_ref" + std::to_string(k + 1), gram_distance(image, ref, fx)});
    }
    fs::create_directories(o.out);
    write_file_atomic(fs::path(o.out) / "metrics.csv", metrics_csv(rows));
    json sidecar{{"run_id", id},
                 {"extractor", {{"kind", "random_conv"}, {"seed", o.extractor_seed}}},
                 {"image", o.image.empty() ? "synthesized" : o.image},
                 {"brightening", "applied before evaluation"},
                 {"config", to_json(cfg)}};
    write_file_atomic(fs::path(o.out) / "metrics.json", sidecar.dump(2) + "\n");
    out << metrics_csv(rows);
}

void cmd_inspect_cache(const Options& o, std::ostream& out) {
    if (o.cache.empty()) throw ValidationError("--cache", "a cache file is required");
    if (!fs::exists(o.cache)) throw ValidationError("--cache", "no such file " + o.cache);
    const FeatureCache cache = load_feature_cache(o.cache);
    const std::vector<int> layers = cache.layer_ids();
    const std::vector<int> steps = cache.timesteps();
    out << "entries: " << cache.entry_count() << "\n"
        << "references: " << cache.reference_count() << "\n"
        << "timesteps: " << steps.size();
    if (!steps.empty()) out << " (" << steps.front() << " .. " << steps.back() << ")";
    out << "\n";
    for (int id : layers) {
        const CacheEntry* e = cache.find(id, steps.front(), 0);
        out << "layer " << id << ": ";
        if (e) out << "K " << e->k.rows << "x" << e->k.cols << ", V " << e->v.rows << "x" << e->v.cols;
        out << "\n";
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Training-free multi-style sketch synthesis", "m3s"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--spec", o.spec, "JSON run spec");
        sub->add_option("--set", o.overrides, "Override a run-spec field (key=value, repeatable)");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--backend", o.backend, "Denoiser backend: toy | adapter:<name>");
        sub->add_option("--backend-seed", o.backend_seed, "Weight seed of the toy backend");
        sub->add_option("--preset", o.preset, "Defaults applied before the spec: professional | abstract");
        sub->add_flag("--trace", o.trace, "Record a per-step trace");
    };

    CLI::App* generate = app.add_subcommand("generate", "Synthesize one image");
    add_common(generate);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Synthesize a parameter sweep and a contact sheet");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--axis", o.axis, "lambda | eta | omega1 | omega2 | gamma");
    sweep_cmd->add_option("--values", o.values, "Axis values")->delimiter(',');
    sweep_cmd->add_option("--jobs", o.jobs, "Worker threads");
    CLI::App* prep = app.add_subcommand("prepare-refs", "Invert references and write the feature cache");
    add_common(prep);
    CLI::App* eval = app.add_subcommand("evaluate", "Write a metric report");
    add_common(eval);
    eval->add_option("--image", o.image, "Evaluate this PNG instead of synthesizing");
    eval->add_option("--extractor-seed", o.extractor_seed, "Seed of the random-convolution extractor");
    CLI::App* inspect = app.add_subcommand("inspect-cache", "Summarize a feature cache file");
    inspect->add_option("--cache", o.cache, "Feature cache file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (*generate) cmd_generate(o, out);
        else if (*sweep_cmd) cmd_sweep(o, out);
        else if (*prep) cmd_prepare_refs(o, out);
        else if (*eval) cmd_evaluate(o, out);
        else if (*inspect) cmd_inspect_cache(o, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace m3s::cli
