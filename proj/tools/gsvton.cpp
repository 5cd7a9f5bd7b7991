// gsvton command-line driver: synth, fit, edit, render, eval, compare.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "gsvton/dataset.hpp"
#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"
#include "gsvton/metrics.hpp"
#include "gsvton/optimize.hpp"
#include "gsvton/parallel.hpp"
#include "gsvton/ply.hpp"
#include "gsvton/render.hpp"
#include "gsvton/strategy.hpp"
#include "gsvton/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gsvton;

namespace {

constexpr const char* kEndpointEnv = "GSVTON_EDIT_ENDPOINT";

/// Records every file written under the output directory; flushed as manifest.json.
class OutputIndex {
public:
    OutputIndex(fs::path root, std::string command) : root_(std::move(root)), command_(std::move(command)) {
        std::error_code ec;
        fs::create_directories(root_, ec);
        if (ec || !fs::is_directory(root_)) throw IoError("cannot create output directory " + root_.string());
    }

    const fs::path& root() const { return root_; }

    fs::path path(const std::string& rel) {
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path());
        return p;
    }

    void add(const std::string& rel, const std::string& kind) { entries_.push_back({{"path", rel}, {"kind", kind}}); }

    void write_json(const std::string& rel, const json& doc, const std::string& kind) {
        std::ofstream out(path(rel));
        if (!out) throw IoError("cannot write " + (root_ / rel).string());
        out << doc.dump(2) << "\n";
        add(rel, kind);
    }

    void write_text(const std::string& rel, const std::string& text, const std::string& kind) {
        std::ofstream out(path(rel), std::ios::binary);
        if (!out) throw IoError("cannot write " + (root_ / rel).string());
        out << text;
        add(rel, kind);
    }

    void write_png(const std::string& rel, const Image& img, const std::string& kind) {
        gsvton::write_png(path(rel), img);
        add(rel, kind);
    }

    void finish(const json& extra = json::object()) {
        json artifacts = json::array();
        for (auto e : entries_) {
            e["bytes"] = fs::file_size(root_ / e.at("path").get<std::string>());
            artifacts.push_back(e);
        }
        json doc{{"command", command_}, {"artifacts", artifacts}};
        for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
        std::ofstream out(root_ / "manifest.json");
        if (!out) throw IoError("cannot write manifest.json");
        out << doc.dump(2) << "\n";
    }

private:
    fs::path root_;
    std::string command_;
    std::vector<json> entries_;
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw MissingFile(what + " not found: " + p.string());
}

json read_json_file(const fs::path& p, const std::string& what) {
    require_file(p, what);
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidParameter(what + " " + p.string() + " is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    fs::path out;
    int views = 24;
    int width = 128;
    int height = 128;
    std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
    OutputIndex index(a.out, "synth");
    MannequinConfig cfg;
    cfg.views = a.views;
    cfg.width = a.width;
    cfg.height = a.height;
    cfg.seed = a.seed;
    const Mannequin m = make_mannequin(cfg);
    write_mannequin(m, a.out);
    index.add("dataset.json", "dataset-manifest");
    index.add("scene.ply", "scene");
    index.add("groups.json", "groups");
    index.add("garment_red.png", "garment");
    const json job{{"dataset", "dataset.json"},
                   {"scene", "scene.ply"},
                   {"strategy", "ERR"},
                   {"rounds", 1},
                   {"optimize_iters_per_round", 1500},
                   {"editor", {{"kind", "mock"}, {"seed", a.seed}, {"jitter", 0.2}}},
                   {"prompt", {{"garment", "garment_red.png"}, {"target_region", "upper"}}},
                   {"seed", a.seed}};
    index.write_json("job_red.json", job, "edit-job");
    index.finish({{"views", a.views}, {"gaussians", m.cloud.size()}, {"seed", a.seed}});
    spdlog::info("synth: {} views, {} Gaussians -> {}", a.views, m.cloud.size(), a.out.string());
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
    fs::path manifest;
    fs::path init;
    fs::path out;
    int iters = 2000;
    std::uint64_t seed = 0;
};

void cmd_fit(const FitArgs& a) {
    require_file(a.init, "initial PLY");
    const ViewDataset ds = load_dataset(a.manifest);
    const GaussianCloud init = load_ply(a.init);
    OutputIndex index(a.out, "fit");
    const auto targets = ds.snapshot_targets();
    FitReport report;
    const GaussianCloud fitted = fit_scene(targets, init, a.iters, {}, a.seed, &report);
    save_ply(index.path("fitted.ply"), fitted);
    index.add("fitted.ply", "scene");
    std::vector<ImagePair> pairs;
    for (const auto& t : targets) pairs.push_back({t.camera.view_index, render_view(fitted, t.camera).pixels, t.image});
    const MetricReport metrics = evaluate_pairs(ds.dataset_id, "render-vs-stage0", pairs);
    index.write_json("fit_report.json",
                     {{"iterations", report.iterations},
                      {"initial_mean_loss", report.initial_mean_loss},
                      {"final_mean_loss", report.final_mean_loss},
                      {"seed", a.seed},
                      {"metrics", metrics.to_json()}},
                     "fit-report");
    index.finish();
    spdlog::info("fit: loss {:.6f} -> {:.6f}, mean PSNR {:.2f} dB", report.initial_mean_loss, report.final_mean_loss,
                 metrics.mean_psnr);
}

// ---------------------------------------------------------------------------
// edit

struct EditArgs {
    fs::path job;
    fs::path manifest;
    fs::path ply;
    fs::path out;
    std::string strategy;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    std::optional<double> rho;
    std::optional<double> jitter;
    std::optional<int> iters;
    std::optional<int> rounds;
};

/// Applies flag overrides to the job document; returns the override record.
json apply_overrides(json& doc, const EditArgs& a) {
    json overrides = json::object();
    if (a.seed) {
        doc["seed"] = *a.seed;
        doc["editor"]["seed"] = *a.seed;
        overrides["seed"] = *a.seed;
    }
    if (a.tau) {
        doc["refine"]["tau"] = *a.tau;
        overrides["tau"] = *a.tau;
    }
    if (a.rho) {
        doc["region_rho"] = *a.rho;
        overrides["rho"] = *a.rho;
    }
    if (a.jitter) {
        doc["editor"]["jitter"] = *a.jitter;
        overrides["jitter"] = *a.jitter;
    }
    if (a.iters) {
        doc["optimize_iters_per_round"] = *a.iters;
        overrides["iters"] = *a.iters;
    }
    if (a.rounds) {
        doc["rounds"] = *a.rounds;
        overrides["rounds"] = *a.rounds;
    }
    if (!a.strategy.empty() && a.strategy != "both") {
        doc["strategy"] = to_string(strategy_from_string(a.strategy));
        overrides["strategy"] = doc["strategy"];
    }
    if (a.strategy == "both") overrides["strategy"] = "both";
    if (const char* env = std::getenv(kEndpointEnv); env && *env) {
        auto& editor = doc["editor"];
        if (editor.is_object() && editor.value("kind", std::string("mock")) == "remote" &&
            editor.value("endpoint", std::string()).empty()) {
            editor["endpoint"] = env;
            overrides["endpoint"] = env;
        }
    }
    return overrides;
}

fs::path resolve(const fs::path& flag, const json& doc, const char* key, const fs::path& base, const std::string& what) {
    fs::path p = flag;
    if (p.empty()) {
        if (!doc.contains(key)) throw InvalidParameter(what + " missing: pass a flag or set '" + key + "' in the job");
        p = doc.at(key).get<std::string>();
        if (p.is_relative()) p = base / p;
    }
    require_file(p, what);
    return p;
}

void write_edit_outputs(OutputIndex& index, const std::string& prefix, const EditResult& res, const ViewDataset& ds) {
    save_ply(index.path(prefix + "edited.ply"), res.cloud);
    index.add(prefix + "edited.ply", "scene");
    index.write_json(prefix + "report.json", res.report.to_json(), "edit-report");
    index.write_text(prefix + "update_log.jsonl", ds.log_jsonl(), "update-log");
    std::string csv;
    for (const auto& m : res.report.metrics) {
        const std::string rows = m.to_csv();
        csv += csv.empty() ? rows : rows.substr(rows.find('\n') + 1);
    }
    index.write_text(prefix + "metrics.csv", csv, "metrics");
    index.write_png(prefix + "grid.png", comparison_grid(ds, res.cloud), "grid");
    const auto records = ds.records();
    std::vector<Image> renders(records.size());
    parallel_for(records.size(), [&](size_t i) { renders[i] = render_view(res.cloud, records[i].camera).pixels; });
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        index.write_png(fmt::format("{}renders/view_{:03d}.png", prefix, r.view_index), renders[i], "render");
        for (const auto& [stage, img] : r.images) {
            if (stage == EditStage::stage0) continue;
            index.write_png(fmt::format("{}stages/view_{:03d}_{}.png", prefix, r.view_index, to_string(stage)), *img,
                            "stage-image");
        }
    }
}

void cmd_edit(const EditArgs& a) {
    json doc = read_json_file(a.job, "job file");
    if (!doc.is_object()) throw InvalidParameter("job file must hold a JSON object");
    const fs::path base = a.job.parent_path();
    const json overrides = apply_overrides(doc, a);
    const fs::path manifest = resolve(a.manifest, doc, "dataset", base, "dataset manifest");
    const fs::path ply = resolve(a.ply, doc, "scene", base, "scene PLY");
    const EditJob job = EditJob::from_json(doc, base);
    const GaussianCloud cloud = load_ply(ply);

    std::vector<StrategyKind> kinds{job.strategy};
    if (a.strategy == "both") kinds = {StrategyKind::err, StrategyKind::iterative_du};

    OutputIndex index(a.out, "edit");
    std::vector<json> reports;
    for (StrategyKind kind : kinds) {
        EditJob j = job;
        j.strategy = kind;
        ViewDataset ds = load_dataset(manifest);
        spdlog::info("edit: running {} on {} views", to_string(kind), ds.size());
        EditResult res;
        try {
            res = run_job(cloud, ds, j);
        } catch (const Error& e) {
            throw Error(e.kind(), to_string(kind) + ": " + e.what());
        }
        res.report.overrides = overrides;
        const std::string prefix = kinds.size() > 1 ? to_string(kind) + "/" : "";
        write_edit_outputs(index, prefix, res, ds);
        reports.push_back(res.report.to_json());
    }
    if (reports.size() == 2) index.write_json("comparison.json", compare_reports(reports[0], reports[1]), "comparison");
    index.finish({{"overrides", overrides}});
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
    fs::path ply;
    fs::path cameras;
    fs::path out;
    bool raw = false;
};

/// Accepts a list of manifest-style camera objects, or {intrinsics..., "poses": [4x4, ...]}.
std::vector<CameraView> load_camera_path(const fs::path& p) {
    const json doc = read_json_file(p, "camera path");
    std::vector<CameraView> cams;
    auto pose_entry = [](const json& pose, const json& intrinsics) {
        json flat = json::array();
        if (pose.size() == 4 && pose.at(0).is_array())
            for (const auto& row : pose) {
                if (row.size() != 4) throw ManifestError("camera path: a 4x4 pose needs 4 numbers per row");
                for (const auto& v : row) flat.push_back(v);
            }
        else flat = pose;
        json cam = intrinsics;
        cam["world_to_camera"] = flat;
        return cam;
    };
    try {
        if (doc.is_array()) {
            for (const auto& c : doc) cams.push_back(camera_from_json(c));
        } else if (doc.is_object() && doc.contains("poses")) {
            json intrinsics = doc;
            intrinsics.erase("poses");
            for (const auto& pose : doc.at("poses")) cams.push_back(camera_from_json(pose_entry(pose, intrinsics)));
        } else {
            throw ManifestError("camera path must be a list of cameras or an object with 'poses'");
        }
    } catch (const json::exception& e) {
        throw ManifestError(std::string("camera path: ") + e.what());
    }
    if (cams.empty()) throw ManifestError("camera path holds no cameras");
    for (size_t i = 0; i < cams.size(); ++i) cams[i].view_index = static_cast<int>(i);
    return cams;
}

void cmd_render(const RenderArgs& a) {
    require_file(a.ply, "scene PLY");
    const GaussianCloud cloud = load_ply(a.ply);
    const auto cams = load_camera_path(a.cameras);
    OutputIndex index(a.out, "render");
    std::vector<Image> frames(cams.size());
    parallel_for(cams.size(), [&](size_t i) { frames[i] = render_view(cloud, cams[i]).pixels; });
    for (size_t i = 0; i < frames.size(); ++i) {
        index.write_png(fmt::format("frames/frame_{:04d}.png", i), frames[i], "render");
        if (a.raw) {
            const std::string rel = fmt::format("frames/frame_{:04d}.raw", i);
            write_raw(index.path(rel), frames[i]);
            index.add(rel, "render-raw");
        }
    }
    index.finish({{"frames", frames.size()}});
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    fs::path manifest;
    fs::path ply;
    fs::path dir_a;
    fs::path dir_b;
    fs::path out;
};

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw MissingFile("image directory not found: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void cmd_eval(const EvalArgs& a) {
    const bool scene_mode = !a.manifest.empty() || !a.ply.empty();
    const bool dir_mode = !a.dir_a.empty() || !a.dir_b.empty();
    if (scene_mode == dir_mode) throw InvalidParameter("eval needs either --manifest and --ply, or --a and --b");
    MetricReport report;
    if (scene_mode) {
        if (a.manifest.empty() || a.ply.empty()) throw InvalidParameter("eval needs both --manifest and --ply");
        require_file(a.ply, "scene PLY");
        const ViewDataset ds = load_dataset(a.manifest);
        const GaussianCloud cloud = load_ply(a.ply);
        const auto records = ds.records();
        std::vector<ImagePair> pairs(records.size());
        parallel_for(records.size(), [&](size_t i) {
            pairs[i] = {records[i].view_index, render_view(cloud, records[i].camera).pixels, records[i].original()};
        });
        report = evaluate_pairs(ds.dataset_id, "render-vs-stage0", pairs);
    } else {
        if (a.dir_a.empty() || a.dir_b.empty()) throw InvalidParameter("eval needs both --a and --b");
        const auto files = sorted_pngs(a.dir_a);
        std::vector<ImagePair> pairs;
        for (size_t i = 0; i < files.size(); ++i) {
            const fs::path other = a.dir_b / files[i].filename();
            if (!fs::is_regular_file(other)) continue;
            pairs.push_back({static_cast<int>(i), read_png(files[i]), read_png(other)});
        }
        if (pairs.empty()) throw PreconditionError("eval: no PNG file names shared by the two directories");
        report = evaluate_pairs(a.dir_a.filename().string(), "a-vs-b", pairs);
    }
    OutputIndex index(a.out, "eval");
    index.write_json("metrics.json", report.to_json(), "metrics");
    index.write_text("metrics.csv", report.to_csv(), "metrics");
    index.finish();
    std::cout << fmt::format("{}: PSNR {:.3f} dB, SSIM {:.4f} over {} views\n", report.pairing, report.mean_psnr,
                             report.mean_ssim, report.views.size());
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
    fs::path a;
    fs::path b;
    fs::path out;
};

void cmd_compare(const CompareArgs& a) {
    const json diff = compare_reports(read_json_file(a.a, "report"), read_json_file(a.b, "report"));
    if (!a.out.empty()) {
        OutputIndex index(a.out, "compare");
        index.write_json("comparison.json", diff, "comparison");
        index.finish();
    }
    std::cout << diff.dump(2) << "\n";
}

void report_error(const std::string& command, const std::string& kind, const std::string& message,
                  const fs::path& out) {
    const json err{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
    std::cerr << err.dump(2) << "\n";
    if (out.empty()) return;
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream f(out / "error.json");
    if (f) f << err.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Garment editing for Gaussian splatting scenes"};
    app.require_subcommand(1);
    unsigned jobs = 0;
    std::string log_level = "info";
    app.add_option("--jobs", jobs, "Worker threads (0 = logical cores); outputs do not depend on it");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate the synthetic mannequin scene");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--views", synth.views, "Cameras on the ring")->check(CLI::Range(1, 1000));
    c_synth->add_option("--width", synth.width, "Image width")->check(CLI::Range(8, 4096));
    c_synth->add_option("--height", synth.height, "Image height")->check(CLI::Range(8, 4096));
    c_synth->add_option("--seed", synth.seed, "Scene seed");

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "Fit a cloud to the dataset's original views");
    c_fit->add_option("--manifest", fit.manifest, "Dataset manifest")->required();
    c_fit->add_option("--init", fit.init, "Initial PLY")->required();
    c_fit->add_option("--out", fit.out, "Output directory")->required();
    c_fit->add_option("--iters", fit.iters, "Optimizer steps")->check(CLI::NonNegativeNumber);
    c_fit->add_option("--seed", fit.seed, "View-order seed");

    EditArgs edit;
    auto* c_edit = app.add_subcommand("edit", "Run an edit job");
    c_edit->add_option("--job", edit.job, "Job JSON")->required();
    c_edit->add_option("--manifest", edit.manifest, "Dataset manifest (default: job 'dataset')");
    c_edit->add_option("--ply", edit.ply, "Scene PLY (default: job 'scene')");
    c_edit->add_option("--out", edit.out, "Output directory")->required();
    c_edit->add_option("--strategy", edit.strategy, "ERR, IterativeDU or both");
    c_edit->add_option("--seed", edit.seed, "Override the job and editor seeds");
    c_edit->add_option("--tau", edit.tau, "Override the outlier threshold");
    c_edit->add_option("--rho", edit.rho, "Override the editable-region vote fraction");
    c_edit->add_option("--jitter", edit.jitter, "Override the mock editor jitter");
    c_edit->add_option("--iters", edit.iters, "Override optimizer steps per round");
    c_edit->add_option("--rounds", edit.rounds, "Override the number of rounds");

    RenderArgs render;
    auto* c_render = app.add_subcommand("render", "Render a PLY along a camera path");
    c_render->add_option("--ply", render.ply, "Scene PLY")->required();
    c_render->add_option("--cameras", render.cameras, "Camera path JSON")->required();
    c_render->add_option("--out", render.out, "Output directory")->required();
    c_render->add_flag("--raw", render.raw, "Also write float32 raw dumps");

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM of renders vs originals, or of two PNG directories");
    c_eval->add_option("--manifest", eval.manifest, "Dataset manifest");
    c_eval->add_option("--ply", eval.ply, "Scene PLY");
    c_eval->add_option("--a", eval.dir_a, "First PNG directory");
    c_eval->add_option("--b", eval.dir_b, "Second PNG directory");
    c_eval->add_option("--out", eval.out, "Output directory")->required();

    CompareArgs compare;
    auto* c_compare = app.add_subcommand("compare", "Diff two edit reports");
    c_compare->add_option("a", compare.a, "First report.json")->required();
    c_compare->add_option("b", compare.b, "Second report.json")->required();
    c_compare->add_option("--out", compare.out, "Output directory");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    set_worker_count(jobs);

    std::string command;
    fs::path out;
    try {
        if (c_synth->parsed()) {
            command = "synth";
            out = synth.out;
            cmd_synth(synth);
        } else if (c_fit->parsed()) {
            command = "fit";
            out = fit.out;
            cmd_fit(fit);
        } else if (c_edit->parsed()) {
            command = "edit";
            out = edit.out;
            cmd_edit(edit);
        } else if (c_render->parsed()) {
            command = "render";
            out = render.out;
            cmd_render(render);
        } else if (c_eval->parsed()) {
            command = "eval";
            out = eval.out;
            cmd_eval(eval);
        } else if (c_compare->parsed()) {
            command = "compare";
            out = compare.out;
            cmd_compare(compare);
        }
    } catch (const Error& e) {
        report_error(command, e.kind(), e.what(), out);
        return 1;
    } catch (const std::exception& e) {
        report_error(command, "internal", e.what(), out);
        return 1;
    }
    return 0;
}
