#include <doctest.h>

#include <filesystem>

#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"
#include "gsvton/strategy.hpp"
#include "gsvton/synth.hpp"
#include "oracles/oracles.hpp"

using namespace gsvton;
namespace fs = std::filesystem;

namespace {

MannequinConfig small_config(int views) {
    MannequinConfig cfg;
    cfg.views = views;
    cfg.width = 64;
    cfg.height = 64;
    cfg.focal = 100.0;
    return cfg;
}

EditJob small_job(StrategyKind kind, int iters) {
    EditJob job;
    job.strategy = kind;
    job.prompt = GarmentPrompt::from_image(make_garment_image(red_garment_color(), 32, 0), TargetRegion::upper);
    job.editor.jitter = 0.2;
    job.optimize_iters_per_round = iters;
    job.seed = 5;
    return job;
}

bool same_gaussian(const Gaussian& a, const Gaussian& b) {
    return a.position == b.position && a.scale == b.scale && a.rotation == b.rotation &&
           a.opacity == b.opacity && a.sh == b.sh;
}

} // namespace

TEST_CASE("job validation") {
    EditJob job = small_job(StrategyKind::err, 10);
    CHECK_NOTHROW(job.validate());
    job.rounds = 0;
    CHECK_THROWS_AS(job.validate(), PreconditionError);
    job = small_job(StrategyKind::err, -1);
    CHECK_THROWS_AS(job.validate(), InvalidParameter);
    job = small_job(StrategyKind::err, 10);
    job.region_rho = 0.0;
    CHECK_THROWS_AS(job.validate(), InvalidParameter);
    job = small_job(StrategyKind::err, 10);
    job.prompt = {};
    CHECK_THROWS_AS(job.validate(), InvalidParameter);

    const Mannequin m = make_mannequin(small_config(3));
    ViewDataset ds = make_mannequin_dataset(m);
    EditJob bad = small_job(StrategyKind::err, 10);
    bad.rounds = 0;
    CHECK_THROWS_AS(run_err(m.cloud, ds, bad), PreconditionError);
    CHECK(ds.update_log().empty());
}

TEST_CASE("strategy names") {
    CHECK(strategy_from_string("ERR") == StrategyKind::err);
    CHECK(strategy_from_string("iterative_du") == StrategyKind::iterative_du);
    CHECK(to_string(StrategyKind::iterative_du) == "IterativeDU");
    CHECK_THROWS_AS(strategy_from_string("SDS"), InvalidParameter);
}

TEST_CASE("job json round trip") {
    const fs::path dir = fs::temp_directory_path() / "gsvton_job";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_png(dir / "garment.png", make_garment_image(red_garment_color(), 32, 0));
    EditJob job = small_job(StrategyKind::iterative_du, 33);
    job.garment_path = "garment.png";
    job.rounds = 2;
    job.refine.tau = 0.7;
    job.refine.restore.kind = RestoreKind::downsample;
    job.editor.sabotage = {1, 4};
    const auto j = job.to_json();
    const EditJob back = EditJob::from_json(j, dir);
    CHECK(back.to_json() == j);
    CHECK(back.prompt.palette.size() == job.prompt.palette.size());

    auto missing = j;
    missing["prompt"]["garment"] = "nope.png";
    CHECK_THROWS_AS(EditJob::from_json(missing, dir), MissingFile);
    auto wrong_type = j;
    wrong_type["rounds"] = "two";
    CHECK_THROWS_AS(EditJob::from_json(wrong_type, dir), InvalidParameter);
}

TEST_CASE("hue helpers") {
    CHECK(hue_spread({0.3, 0.3, 0.3}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hue_spread({0.0, std::numbers::pi}) == doctest::Approx(1.0));
    CHECK(hue_spread({3.1, -3.1}) < 0.01);  // wraps around the branch cut
    const Image red(8, 8, Vec3(0.9, 0.1, 0.1));
    Mask m(8, 8, 0);
    CHECK_FALSE(garment_hue(red, m).has_value());
    m(2, 2) = 1;
    const Vec3 ycc = rgb_to_ycbcr({0.9, 0.1, 0.1});
    CHECK(*garment_hue(red, m) == doctest::Approx(std::atan2(ycc.z(), ycc.y())));
}

TEST_CASE("editable tracking") {
    const Mannequin m = make_mannequin(small_config(6));
    std::map<int, Mask> boxes;
    for (const auto& cam : m.cameras) {
        Mask box(cam.width, cam.height, 0);
        for (int y = 20; y < 40; ++y)
            for (int x = 20; x < 44; ++x) box(x, y) = 1;
        boxes[cam.view_index] = box;
    }
    // Oracle: count views whose box contains the rounded projected center.
    auto oracle_set = [&](const std::map<int, Mask>& masks, double rho) {
        IndexSet out;
        for (size_t i = 0; i < m.cloud.size(); ++i) {
            int inside = 0;
            for (const auto& cam : m.cameras) {
                const Vec2 p = oracle::project(cam, m.cloud.gaussians[i].position);
                const int x = static_cast<int>(std::lround(p.x())), y = static_cast<int>(std::lround(p.y()));
                if (x >= 0 && y >= 0 && x < cam.width && y < cam.height && masks.at(cam.view_index)(x, y)) ++inside;
            }
            if (inside >= rho * static_cast<double>(m.cameras.size())) out.insert(static_cast<int>(i));
        }
        return out;
    };
    const IndexSet all = track_editable_gaussians(m.cloud, boxes, m.cameras, 1.0);
    CHECK_FALSE(all.empty());
    CHECK(all == oracle_set(boxes, 1.0));
    CHECK(track_editable_gaussians(m.cloud, boxes, m.cameras, 0.5) == oracle_set(boxes, 0.5));

    auto inconsistent = boxes;
    inconsistent[m.cameras[2].view_index] = Mask(64, 64, 0);
    CHECK(track_editable_gaussians(m.cloud, inconsistent, m.cameras, 1.0).empty());
    CHECK(track_editable_gaussians(m.cloud, inconsistent, m.cameras, 0.8) == all);

    std::map<int, Mask> empty;
    for (const auto& cam : m.cameras) empty[cam.view_index] = Mask(64, 64, 0);
    CHECK(track_editable_gaussians(m.cloud, empty, m.cameras, 0.6).empty());

    CHECK_THROWS_AS(track_editable_gaussians(m.cloud, boxes, m.cameras, 0.0), InvalidParameter);
    auto missing = boxes;
    missing.erase(m.cameras[0].view_index);
    CHECK_THROWS_AS(track_editable_gaussians(m.cloud, missing, m.cameras, 0.6), PreconditionError);
}

TEST_CASE("ERR run on a small scene") {
    const Mannequin m = make_mannequin(small_config(6));
    EditJob job = small_job(StrategyKind::err, 40);
    job.editor.sabotage = {4};
    ViewDataset ds = make_mannequin_dataset(m);
    int calls = 0;
    RunHooks hooks;
    hooks.on_step = [&calls](int step, const GaussianCloud&) { CHECK(step == ++calls); };
    const EditResult res = run_err(m.cloud, ds, job, hooks);
    CHECK(calls == 40);

    const IndexSet torso = m.group(kLabelUpper);
    const IndexSet editable(res.report.editable.begin(), res.report.editable.end());
    CHECK(editable == torso);
    for (size_t i = 0; i < m.cloud.size(); ++i)
        if (!editable.count(static_cast<int>(i))) CHECK(same_gaussian(m.cloud.gaussians[i], res.cloud.gaussians[i]));

    CHECK(res.report.log_ordering_ok);
    REQUIRE(res.report.rounds.size() == 1);
    CHECK(res.report.rounds[0].flagged == std::vector<int>{4});
    CHECK(res.report.rounds[0].loss_curve.size() == 40);
    for (const auto& r : ds.records()) {
        CHECK(r.current_stage == EditStage::stage4);
        CHECK(r.images.count(EditStage::stage3) == (r.view_index == 4 ? 1u : 0u));
    }
    REQUIRE(res.report.metrics.size() == 2);

    ViewDataset ds2 = make_mannequin_dataset(m);
    const EditResult again = run_err(m.cloud, ds2, job);
    for (size_t i = 0; i < m.cloud.size(); ++i) CHECK(same_gaussian(res.cloud.gaussians[i], again.cloud.gaussians[i]));
    CHECK(res.report.to_json() == again.report.to_json());
}

TEST_CASE("ERR rounds re-edit from the originals") {
    const Mannequin m = make_mannequin(small_config(3));
    EditJob job = small_job(StrategyKind::err, 6);
    job.rounds = 2;
    ViewDataset ds = make_mannequin_dataset(m);
    const EditResult res = run_err(m.cloud, ds, job);
    CHECK(res.report.rounds.size() == 2);
    CHECK(res.report.log_ordering_ok);
    int optimize_events = 0;
    for (const auto& e : res.report.log) optimize_events += e.kind == EventKind::optimize;
    CHECK(optimize_events == 2);
    for (const auto& r : ds.records()) CHECK(r.original() == make_mannequin_dataset(m).record(r.view_index).original());
}

TEST_CASE("IterativeDU interleaves updates") {
    const Mannequin m = make_mannequin(small_config(6));
    EditJob job = small_job(StrategyKind::iterative_du, 12);
    ViewDataset ds = make_mannequin_dataset(m);
    int calls = 0;
    RunHooks hooks;
    hooks.on_step = [&calls](int, const GaussianCloud&) { ++calls; };
    const EditResult res = run_job(m.cloud, ds, job, hooks);
    CHECK(calls == 12);
    CHECK(res.report.strategy == "IterativeDU");
    CHECK_FALSE(res.report.log_ordering_ok);
    for (const auto& r : ds.records()) {
        CHECK(r.current_stage == EditStage::stage4);
        CHECK(r.images.count(EditStage::stage2) == 1);  // face composite
        CHECK(r.images.count(EditStage::stage3) == 0);
    }
    const auto cmp = compare_reports(res.report.to_json(), res.report.to_json());
    CHECK(cmp.at("editable_equal") == true);
    CHECK(cmp.at("metrics").at("render-vs-stage4").at("psnr_delta") == 0.0);
}

TEST_CASE("a single view makes both strategies satisfy the ordering") {
    const Mannequin m = make_mannequin(small_config(1));
    for (StrategyKind kind : {StrategyKind::err, StrategyKind::iterative_du}) {
        ViewDataset ds = make_mannequin_dataset(m);
        const EditResult res = run_job(m.cloud, ds, small_job(kind, 4));
        CHECK(res.report.log_ordering_ok);
    }
}

TEST_CASE("editor failure leaves the dataset untouched") {
    const Mannequin m = make_mannequin(small_config(3));
    EditJob job = small_job(StrategyKind::err, 4);
    job.editor = {};
    job.editor.kind = EditorKind::remote;
    job.editor.endpoint = "http://127.0.0.1:9";
    job.editor.timeout = 1.0;
    job.editor.retries = 0;
    ViewDataset ds = make_mannequin_dataset(m);
    CHECK_THROWS_AS(run_err(m.cloud, ds, job), EditorUnavailable);
    CHECK(ds.update_log().empty());
    for (const auto& r : ds.records()) CHECK(r.current_stage == EditStage::stage0);
}

TEST_CASE("comparison grid") {
    const Mannequin m = make_mannequin(small_config(3));
    const ViewDataset ds = make_mannequin_dataset(m);
    const Image grid = comparison_grid(ds, m.cloud, 2);
    CHECK(grid.width == 3 * 64);
    CHECK(grid.height == 2 * 64);
}
