#include "gsvton/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"
#include "gsvton/parallel.hpp"
#include "gsvton/render.hpp"

namespace gsvton {

using nlohmann::json;

std::string to_string(StrategyKind k) { return k == StrategyKind::err ? "ERR" : "IterativeDU"; }

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "ERR" || s == "err") return StrategyKind::err;
    if (s == "IterativeDU" || s == "iterative_du" || s == "iterativedu") return StrategyKind::iterative_du;
    throw InvalidParameter("unknown strategy '" + s + "'");
}

// ---------------------------------------------------------------------------
// EditJob

void EditJob::validate() const {
    if (rounds < 1) throw PreconditionError("edit job needs rounds >= 1");
    if (optimize_iters_per_round < 0) throw InvalidParameter("optimize_iters_per_round must be >= 0");
    if (!(region_rho > 0.0 && region_rho <= 1.0)) throw InvalidParameter("region_rho must lie in (0, 1]");
    if (!(refine.tau >= 0.0)) throw InvalidParameter("tau must be >= 0");
    if (refine.restore.kind == RestoreKind::downsample && refine.restore.factor < 1)
        throw InvalidParameter("restore factor must be >= 1");
    if (prompt.palette.empty()) throw InvalidParameter("edit job has no garment prompt");
    editor.validate();
}

namespace {

const char* to_string(RestoreKind k) { return k == RestoreKind::identity ? "identity" : "downsample"; }
const char* to_string(PriorKind k) { return k == PriorKind::smoothing ? "smoothing" : "passthrough"; }

json lr_to_json(const LearningRates& lr) {
    return {{"position", lr.position}, {"color", lr.color}, {"opacity", lr.opacity}, {"scale", lr.scale},
            {"rotation", lr.rotation}};
}

LearningRates lr_from_json(const json& j) {
    LearningRates lr;
    lr.position = j.value("position", lr.position);
    lr.color = j.value("color", lr.color);
    lr.opacity = j.value("opacity", lr.opacity);
    lr.scale = j.value("scale", lr.scale);
    lr.rotation = j.value("rotation", lr.rotation);
    return lr;
}

} // namespace

json EditJob::to_json() const {
    return {{"strategy", gsvton::to_string(strategy)},
            {"rounds", rounds},
            {"optimize_iters_per_round", optimize_iters_per_round},
            {"editor", editor.to_json()},
            {"prompt", {{"garment", garment_path}, {"target_region", gsvton::to_string(prompt.target_region)}}},
            {"refine",
             {{"face", refine.face},
              {"sparse", refine.sparse},
              {"tau", refine.tau},
              {"restore",
               {{"kind", to_string(refine.restore.kind)},
                {"factor", refine.restore.factor},
                {"prior", to_string(refine.restore.prior)}}}}},
            {"region_rho", region_rho},
            {"retrack_each_round", retrack_each_round},
            {"seed", seed},
            {"aux_endpoint", aux_endpoint},
            {"learning_rates", lr_to_json(learning_rates)}};
}

EditJob EditJob::from_json(const json& j, const std::filesystem::path& base_dir) {
    EditJob job;
    try {
        job.strategy = strategy_from_string(j.value("strategy", std::string("ERR")));
        job.rounds = j.value("rounds", 1);
        job.optimize_iters_per_round = j.value("optimize_iters_per_round", 1500);
        if (j.contains("editor")) job.editor = EditorBinding::from_json(j.at("editor"));
        const json prompt = j.value("prompt", json::object());
        job.garment_path = prompt.value("garment", std::string());
        const TargetRegion region = target_region_from_string(prompt.value("target_region", std::string("upper")));
        if (job.garment_path.empty()) throw InvalidParameter("edit job has no prompt.garment path");
        std::filesystem::path gp(job.garment_path);
        if (gp.is_relative() && !base_dir.empty()) gp = base_dir / gp;
        if (!std::filesystem::exists(gp)) throw MissingFile("garment image not found: " + gp.string());
        job.prompt = GarmentPrompt::from_image(read_png(gp), region);
        const json refine = j.value("refine", json::object());
        job.refine.face = refine.value("face", true);
        job.refine.sparse = refine.value("sparse", true);
        job.refine.tau = refine.value("tau", kDefaultTau);
        const json restore = refine.value("restore", json::object());
        const std::string rk = restore.value("kind", std::string("identity"));
        if (rk == "identity") job.refine.restore.kind = RestoreKind::identity;
        else if (rk == "downsample") job.refine.restore.kind = RestoreKind::downsample;
        else throw InvalidParameter("unknown restore kind '" + rk + "'");
        job.refine.restore.factor = restore.value("factor", 2);
        const std::string pk = restore.value("prior", std::string("smoothing"));
        if (pk == "smoothing") job.refine.restore.prior = PriorKind::smoothing;
        else if (pk == "passthrough") job.refine.restore.prior = PriorKind::passthrough;
        else throw InvalidParameter("unknown restore prior '" + pk + "'");
        job.region_rho = j.value("region_rho", 0.6);
        job.retrack_each_round = j.value("retrack_each_round", false);
        job.seed = j.value("seed", std::uint64_t{0});
        job.aux_endpoint = j.value("aux_endpoint", std::string());
        if (j.contains("learning_rates")) job.learning_rates = lr_from_json(j.at("learning_rates"));
    } catch (const json::exception& e) {
        throw InvalidParameter(std::string("malformed edit job: ") + e.what());
    }
    job.validate();
    return job;
}

json EditReport::to_json() const {
    json r = json::array();
    for (const auto& rr : rounds) r.push_back({{"round", rr.round}, {"flagged", rr.flagged}, {"loss_curve", rr.loss_curve}});
    json l = json::array();
    for (const auto& e : log) l.push_back(e.to_json());
    json m = json::array();
    for (const auto& mr : metrics) m.push_back(mr.to_json());
    return {{"strategy", strategy}, {"dataset_id", dataset_id}, {"job", job},
            {"overrides", overrides}, {"rounds", r},           {"editable", editable},
            {"log", l},               {"log_ordering_ok", log_ordering_ok}, {"metrics", m}};
}

// ---------------------------------------------------------------------------
// Region tracking and hue statistics

IndexSet track_editable_gaussians(const GaussianCloud& cloud, const std::map<int, Mask>& masks,
                                  const std::vector<CameraView>& cameras, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw InvalidParameter("rho must lie in (0, 1]");
    IndexSet out;
    if (cameras.empty()) return out;
    for (const auto& cam : cameras) {
        auto it = masks.find(cam.view_index);
        if (it == masks.end()) throw PreconditionError(fmt::format("no garment mask for view {}", cam.view_index));
        if (!it->second.same_size(cam.width, cam.height))
            throw DimensionMismatch(fmt::format("garment mask of view {} has the wrong size", cam.view_index));
    }
    for (size_t i = 0; i < cloud.size(); ++i) {
        int visible = 0, inside = 0;
        for (const auto& cam : cameras) {
            const auto s = project_gaussian(cloud.gaussians[i], cam);
            if (!s) continue;
            ++visible;
            const int x = static_cast<int>(std::lround(s->mean2d.x()));
            const int y = static_cast<int>(std::lround(s->mean2d.y()));
            if (x >= 0 && y >= 0 && x < cam.width && y < cam.height && masks.at(cam.view_index)(x, y)) ++inside;
        }
        if (visible > 0 && inside >= rho * visible) out.insert(static_cast<int>(i));
    }
    return out;
}

std::optional<double> garment_hue(const Image& image, const Mask& mask) {
    const auto c = mean_chroma(image, mask);
    if (!c) return std::nullopt;
    return std::atan2(c->y(), c->x());
}

double hue_spread(const std::vector<double>& hues) {
    if (hues.empty()) return 0.0;
    double cs = 0.0, sn = 0.0;
    for (double h : hues) {
        cs += std::cos(h);
        sn += std::sin(h);
    }
    return 1.0 - std::hypot(cs, sn) / static_cast<double>(hues.size());
}

double render_hue_spread(const GaussianCloud& cloud, const std::vector<CameraView>& cameras,
                         const std::map<int, Mask>& masks) {
    std::vector<std::optional<double>> per(cameras.size());
    parallel_for(cameras.size(), [&](size_t i) {
        auto it = masks.find(cameras[i].view_index);
        if (it == masks.end()) return;
        per[i] = garment_hue(render_view(cloud, cameras[i]).pixels, it->second);
    });
    std::vector<double> hues;
    for (const auto& h : per)
        if (h) hues.push_back(*h);
    return hue_spread(hues);
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

namespace {

struct Services {
    std::unique_ptr<FaceDetector> face;
    std::unique_ptr<Segmenter> segmenter;
};

Services make_services(const ViewDataset& dataset, const EditJob& job) {
    Services s;
    if (job.aux_endpoint.empty()) {
        s.face = std::make_unique<MetadataFaceDetector>(MetadataFaceDetector::from_dataset(dataset));
        s.segmenter = std::make_unique<MetadataSegmenter>(MetadataSegmenter::from_dataset(dataset));
    } else {
        s.face = std::make_unique<RemoteFaceDetector>(job.aux_endpoint, job.editor.timeout);
        s.segmenter = std::make_unique<RemoteSegmenter>(job.aux_endpoint, job.editor.timeout);
    }
    return s;
}

std::map<int, AuxInputs> collect_aux(const std::vector<ViewRecord>& records, const EditJob& job) {
    std::vector<AuxInputs> out(records.size());
    parallel_for(records.size(), [&](size_t i) {
        const auto& r = records[i];
        AuxSource src;
        if (r.aux) src.precomputed = &*r.aux;
        if (!job.aux_endpoint.empty()) src.remote_endpoint = &job.aux_endpoint;
        src.timeout = job.editor.timeout;
        try {
            out[i] = synthesize_aux_inputs(r.original(), src, job.prompt.target_region, r.view_index);
        } catch (const Error& e) {
            throw MissingAux(fmt::format("view {}: {}", r.view_index, e.what()));
        }
    });
    std::map<int, AuxInputs> m;
    for (size_t i = 0; i < records.size(); ++i) m[records[i].view_index] = std::move(out[i]);
    return m;
}

EditorBinding round_binding(const EditJob& job, int round) {
    EditorBinding b = job.editor;
    b.seed = job.editor.seed ^ (static_cast<std::uint64_t>(round - 1) << 32);
    return b;
}

Image edit_with_retries(const EditorBinding& binding, const Image& image, const GarmentPrompt& prompt,
                        const AuxInputs& aux, int view_index) {
    std::string last;
    for (int attempt = 0; attempt <= binding.retries; ++attempt) {
        try {
            EditOptions opt;
            opt.view_index = view_index;
            return edit_view(binding, image, prompt, aux, opt);
        } catch (const EditorUnavailable& e) {
            last = e.what();
            spdlog::warn("edit of view {} attempt {} failed: {}", view_index, attempt + 1, last);
        }
    }
    throw EditorUnavailable(fmt::format("view {}: {}", view_index, last));
}

Image restore(const Image& image, const RestoreConfig& cfg) {
    if (cfg.kind == RestoreKind::identity) return image;
    const DegradationOp op = DegradationOp::downsample(cfg.factor);
    const Prior prior = cfg.prior == PriorKind::smoothing ? smoothing_prior() : passthrough_prior();
    return nullspace_restore(op.apply(image), op, prior);
}

/// Edits every listed view in parallel; failures of several views are reported together.
std::map<int, Image> edit_all(const std::vector<ViewRecord>& records, const EditorBinding& binding,
                              const GarmentPrompt& prompt, const std::map<int, AuxInputs>& aux) {
    std::vector<Image> out(records.size());
    std::vector<std::string> errors(records.size());
    parallel_for(records.size(), [&](size_t i) {
        try {
            out[i] = edit_with_retries(binding, records[i].original(), prompt, aux.at(records[i].view_index),
                                       records[i].view_index);
        } catch (const EditorUnavailable& e) {
            errors[i] = e.what();
        }
    });
    std::string msg;
    for (const auto& e : errors)
        if (!e.empty()) msg += (msg.empty() ? "" : "; ") + e;
    if (!msg.empty()) throw EditorUnavailable("editing failed after retries: " + msg);
    std::map<int, Image> m;
    for (size_t i = 0; i < records.size(); ++i) m[records[i].view_index] = std::move(out[i]);
    return m;
}

/// Seeded per-epoch shuffle over view positions.
class ViewSampler {
public:
    ViewSampler(size_t n, std::uint64_t seed) : rng_(seed), order_(n) {}
    size_t next() {
        if (pos_ >= order_.size()) {
            std::iota(order_.begin(), order_.end(), size_t{0});
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    std::mt19937_64 rng_;
    std::vector<size_t> order_;
    size_t pos_ = std::numeric_limits<size_t>::max();
};

OptimizerConfig optimizer_config(const EditJob& job) {
    OptimizerConfig c;
    c.lr = job.learning_rates;
    return c;
}

void check_consistent(const GaussianCloud& cloud, const ViewDataset& dataset, const EditJob& job) {
    job.validate();
    if (dataset.empty()) throw PreconditionError("dataset has no views");
    if (cloud.size() == 0) throw PreconditionError("cloud has no Gaussians");
    for (const auto& r : dataset.records())
        if (r.camera.width != r.original().width || r.camera.height != r.original().height)
            throw PreconditionError(fmt::format("camera of view {} does not match its image", r.view_index));
}

std::vector<MetricReport> final_metrics(const GaussianCloud& cloud, const ViewDataset& dataset) {
    const auto records = dataset.records();
    std::vector<ImagePair> render_pairs(records.size()), stage_pairs(records.size());
    parallel_for(records.size(), [&](size_t i) {
        const auto& r = records[i];
        render_pairs[i] = {r.view_index, render_view(cloud, r.camera).pixels, r.current()};
        stage_pairs[i] = {r.view_index, r.current(), r.original()};
    });
    return {evaluate_pairs(dataset.dataset_id, "render-vs-stage4", render_pairs),
            evaluate_pairs(dataset.dataset_id, "stage4-vs-stage0", stage_pairs)};
}

std::vector<int> to_vector(const IndexSet& s) { return {s.begin(), s.end()}; }

void finish_report(EditResult& result, const ViewDataset& dataset, const EditJob& job) {
    result.report.strategy = to_string(job.strategy);
    result.report.dataset_id = dataset.dataset_id;
    result.report.job = job.to_json();
    result.report.log = dataset.update_log();
    result.report.log_ordering_ok = err_log_ordering_holds(result.report.log, dataset.view_indices());
    result.report.metrics = final_metrics(result.cloud, dataset);
}

} // namespace

// ---------------------------------------------------------------------------
// ERR

EditResult run_err(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job, const RunHooks& hooks) {
    check_consistent(cloud, dataset, job);
    const auto records = dataset.records();
    const auto services = make_services(dataset, job);
    const auto aux = collect_aux(records, job);
    const TargetRegion region = job.prompt.target_region;

    EditResult result{cloud, {}};
    IndexSet editable;
    bool tracked = false;
    int step = 0;
    for (int round = 1; round <= job.rounds; ++round) {
        RoundReport rr;
        rr.round = round;
        const EditorBinding binding = round_binding(job, round);

        const auto stage1 = edit_all(records, binding, job.prompt, aux);

        std::vector<Image> s2(records.size());
        std::vector<Mask> masks(records.size());
        parallel_for(records.size(), [&](size_t i) {
            const auto& r = records[i];
            const Image& edited = stage1.at(r.view_index);
            s2[i] = job.refine.face ? face_composite(r.original(), edited,
                                                     services.face->detect(r.original(), r.view_index), r.view_index)
                                    : edited;
            masks[i] = services.segmenter->segment(s2[i], r.view_index, region);
        });
        std::map<int, Image> stage2;
        std::map<int, Mask> mask_map;
        std::vector<GarmentMask> garments;
        for (size_t i = 0; i < records.size(); ++i) {
            stage2[records[i].view_index] = s2[i];
            mask_map[records[i].view_index] = masks[i];
            garments.push_back(GarmentMask::make(s2[i], masks[i], records[i].view_index));
        }
        if (job.refine.sparse) rr.flagged = select_outlier_views(garments, job.refine.tau);
        const auto stage3 = re_edit_images(rr.flagged, stage2, binding, job.prompt, aux, round);

        std::vector<Image> s4(records.size());
        parallel_for(records.size(), [&](size_t i) {
            const int v = records[i].view_index;
            auto it = stage3.find(v);
            s4[i] = restore(it != stage3.end() ? it->second : stage2.at(v), job.refine.restore);
        });

        std::vector<StageCommit> commits;
        for (size_t i = 0; i < records.size(); ++i) {
            const int v = records[i].view_index;
            commits.push_back({v, EditStage::stage1, stage1.at(v)});
            commits.push_back({v, EditStage::stage2, stage2.at(v)});
            if (auto it = stage3.find(v); it != stage3.end()) commits.push_back({v, EditStage::stage3, it->second});
            commits.push_back({v, EditStage::stage4, s4[i]});
        }
        dataset.commit_batch(std::move(commits), round, step);

        if (!tracked || job.retrack_each_round) {
            editable = track_editable_gaussians(cloud, mask_map, dataset.cameras(), job.region_rho);
            tracked = true;
        }

        const auto targets = dataset.snapshot_targets();
        Optimizer opt(optimizer_config(job));
        ViewSampler sampler(targets.size(), job.seed ^ static_cast<std::uint64_t>(round));
        dataset.log_optimize(round, step, job.optimize_iters_per_round);
        for (int it = 0; it < job.optimize_iters_per_round; ++it) {
            const size_t k = sampler.next();
            const auto rep = opt.step(result.cloud, std::span(&targets[k], 1), editable);
            rr.loss_curve.push_back(rep.total);
            ++step;
            if (hooks.on_step) hooks.on_step(step, result.cloud);
        }
        result.report.rounds.push_back(std::move(rr));
    }
    result.report.editable = to_vector(editable);
    finish_report(result, dataset, job);
    return result;
}

// ---------------------------------------------------------------------------
// IterativeDU

EditResult run_iterative_du(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job,
                            const RunHooks& hooks) {
    check_consistent(cloud, dataset, job);
    const auto records = dataset.records();
    const auto services = make_services(dataset, job);
    const auto aux = collect_aux(records, job);
    const TargetRegion region = job.prompt.target_region;
    const int k = std::max(1, job.optimize_iters_per_round / static_cast<int>(records.size()));

    std::map<int, Mask> mask_map;
    {
        std::vector<Mask> masks(records.size());
        parallel_for(records.size(), [&](size_t i) {
            masks[i] = services.segmenter->segment(records[i].original(), records[i].view_index, region);
        });
        for (size_t i = 0; i < records.size(); ++i) mask_map[records[i].view_index] = std::move(masks[i]);
    }
    const IndexSet editable = track_editable_gaussians(cloud, mask_map, dataset.cameras(), job.region_rho);

    EditResult result{cloud, {}};
    int step = 0;
    for (int round = 1; round <= job.rounds; ++round) {
        RoundReport rr;
        rr.round = round;
        const EditorBinding binding = round_binding(job, round);
        Optimizer opt(optimizer_config(job));
        ViewSampler sampler(records.size(), job.seed ^ static_cast<std::uint64_t>(round));
        for (const auto& r : records) {
            const int v = r.view_index;
            const Image stage1 = edit_with_retries(binding, r.original(), job.prompt, aux.at(v), v);
            const Image stage2 =
                job.refine.face ? face_composite(r.original(), stage1, services.face->detect(r.original(), v), v)
                                : stage1;
            const Image stage4 = restore(stage2, job.refine.restore);
            dataset.commit_batch({{v, EditStage::stage1, stage1}, {v, EditStage::stage2, stage2},
                                  {v, EditStage::stage4, stage4}},
                                 round, step);
            const auto targets = dataset.snapshot_targets();
            dataset.log_optimize(round, step, k);
            for (int it = 0; it < k; ++it) {
                const size_t pick = sampler.next();
                const auto rep = opt.step(result.cloud, std::span(&targets[pick], 1), editable);
                rr.loss_curve.push_back(rep.total);
                ++step;
                if (hooks.on_step) hooks.on_step(step, result.cloud);
            }
        }
        result.report.rounds.push_back(std::move(rr));
    }
    result.report.editable = to_vector(editable);
    finish_report(result, dataset, job);
    return result;
}

EditResult run_job(const GaussianCloud& cloud, ViewDataset& dataset, const EditJob& job, const RunHooks& hooks) {
    return job.strategy == StrategyKind::err ? run_err(cloud, dataset, job, hooks)
                                             : run_iterative_du(cloud, dataset, job, hooks);
}

// ---------------------------------------------------------------------------
// Reporting

Image comparison_grid(const ViewDataset& dataset, const GaussianCloud& cloud, int max_views) {
    auto records = dataset.records();
    if (records.empty()) throw PreconditionError("comparison_grid: empty dataset");
    const size_t n = std::min(records.size(), static_cast<size_t>(std::max(1, max_views)));
    const size_t stride = records.size() / n;
    const int w = records[0].original().width, h = records[0].original().height;
    Image grid(w * 3, h * static_cast<int>(n));
    std::vector<Image> renders(n);
    parallel_for(n, [&](size_t row) { renders[row] = render_view(cloud, records[row * stride].camera).pixels; });
    for (size_t row = 0; row < n; ++row) {
        const auto& r = records[row * stride];
        const Image* tiles[3] = {&r.original(), &r.current(), &renders[row]};
        for (int t = 0; t < 3; ++t) {
            if (tiles[t]->width != w || tiles[t]->height != h)
                throw DimensionMismatch("comparison_grid: views differ in size");
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) grid.set_pixel(t * w + x, static_cast<int>(row) * h + y, tiles[t]->pixel(x, y));
        }
    }
    return grid;
}

json compare_reports(const json& a, const json& b) {
    json out;
    out["strategies"] = {a.value("strategy", ""), b.value("strategy", "")};
    out["log_ordering_ok"] = {a.value("log_ordering_ok", false), b.value("log_ordering_ok", false)};
    json metrics = json::object();
    auto index = [](const json& r) {
        std::map<std::string, json> m;
        for (const auto& x : r.value("metrics", json::array())) m[x.value("pairing", "")] = x;
        return m;
    };
    const auto ma = index(a), mb = index(b);
    for (const auto& [pairing, x] : ma) {
        auto it = mb.find(pairing);
        if (it == mb.end()) continue;
        const double pa = x.value("mean_psnr", 0.0), pb = it->second.value("mean_psnr", 0.0);
        const double sa = x.value("mean_ssim", 0.0), sb = it->second.value("mean_ssim", 0.0);
        metrics[pairing] = {{"psnr", {pa, pb}}, {"psnr_delta", pb - pa}, {"ssim", {sa, sb}}, {"ssim_delta", sb - sa}};
    }
    out["metrics"] = metrics;
    const auto ea = a.value("editable", std::vector<int>{}), eb = b.value("editable", std::vector<int>{});
    out["editable_equal"] = ea == eb;
    out["editable_sizes"] = {ea.size(), eb.size()};
    auto flagged = [](const json& r) {
        json f = json::array();
        for (const auto& rr : r.value("rounds", json::array())) f.push_back(rr.value("flagged", json::array()));
        return f;
    };
    out["flagged"] = {flagged(a), flagged(b)};
    auto final_loss = [](const json& r) -> json {
        const auto rounds = r.value("rounds", json::array());
        if (rounds.empty() || rounds.back().value("loss_curve", json::array()).empty()) return nullptr;
        return rounds.back()["loss_curve"].back();
    };
    out["final_loss"] = {final_loss(a), final_loss(b)};
    return out;
}

} // namespace gsvton
