#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "gsvton/dataset.hpp"
#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"
#include "oracles/oracles.hpp"

using namespace gsvton;
namespace fs = std::filesystem;

namespace {

/// Random image already on the 8-bit sRGB grid, so PNG round-trips are exact.
Image quantized_image(int w, int h, std::mt19937_64& rng) {
    Image img = oracle::random_image(w, h, rng);
    for (double& v : img.data) v = decode_srgb8(encode_srgb8(v));
    return img;
}

ViewDataset small_dataset(int views, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    ViewDataset ds;
    ds.dataset_id = "small";
    for (int v = 0; v < views; ++v) {
        ViewRecord r;
        r.view_index = v * 2;
        r.camera = oracle::front_camera(12, 10, 20.0);
        r.camera.view_index = r.view_index;
        r.images[EditStage::stage0] = std::make_shared<const Image>(quantized_image(12, 10, rng));
        AuxInputs aux;
        aux.parsing = LabelMap(12, 10, kLabelBackground);
        for (int y = 3; y < 8; ++y)
            for (int x = 4; x < 9; ++x) aux.parsing(x, y) = kLabelUpper;
        aux.pose_keypoints = {{6, 2}, {6, 5}};
        r.aux = aux;
        if (v == 0) r.face_keypoints = std::vector<Vec2>{{5, 1}, {7, 1}, {6, 3}};
        ds.add_record(std::move(r));
    }
    return ds;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("gsvton_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("stage names round-trip") {
    for (int s = 0; s <= 4; ++s) CHECK(edit_stage_from_string(to_string(EditStage(s))) == EditStage(s));
    CHECK_THROWS_AS(edit_stage_from_string("stage9"), InvalidParameter);
}

TEST_CASE("add_record validation") {
    ViewDataset ds = small_dataset(2);
    CHECK(ds.size() == 2);
    CHECK(ds.view_indices() == std::vector<int>{0, 2});
    ViewRecord dup = ds.record(2);
    CHECK_THROWS_AS(ds.add_record(dup), DuplicateIndex);
    ViewRecord earlier = ds.record(0);
    earlier.view_index = 1;
    CHECK_THROWS_AS(ds.add_record(earlier), InvalidParameter);
    ViewRecord no_image = ds.record(0);
    no_image.view_index = 10;
    no_image.images.clear();
    CHECK_THROWS_AS(ds.add_record(no_image), PreconditionError);
    ViewRecord wrong = ds.record(0);
    wrong.view_index = 11;
    wrong.images[EditStage::stage0] = std::make_shared<const Image>(Image(3, 3));
    CHECK_THROWS_AS(ds.add_record(wrong), DimensionMismatch);
    CHECK_THROWS_AS(ds.record(5), InvalidParameter);
}

TEST_CASE("commits advance stages and never touch originals") {
    ViewDataset ds = small_dataset(3);
    const Image original = ds.record(2).original();
    CHECK_THROWS_AS(ds.commit_stage(2, EditStage::stage0, Image(12, 10)), ImmutabilityError);
    CHECK_THROWS_AS(ds.commit_stage(2, EditStage::stage1, Image(5, 5)), DimensionMismatch);
    const Image edited(12, 10, Vec3(0.5, 0.1, 0.1));
    ds.commit_stage(2, EditStage::stage1, edited, 1, 0);
    const auto rec = ds.record(2);
    CHECK(rec.current_stage == EditStage::stage1);
    CHECK(rec.current() == edited);
    CHECK(rec.original() == original);
    CHECK(ds.record(0).current_stage == EditStage::stage0);

    const auto targets = ds.snapshot_targets();
    REQUIRE(targets.size() == 3);
    CHECK(targets[1].image == edited);
    CHECK(targets[0].image == ds.record(0).original());

    ds.reset_to_originals();
    CHECK(ds.record(2).current_stage == EditStage::stage0);
    CHECK(ds.update_log().empty());
}

TEST_CASE("commit_batch is all-or-nothing and shares one transaction") {
    ViewDataset ds = small_dataset(3);
    const Image a(12, 10, 0.2), b(12, 10, 0.4);
    CHECK_THROWS(ds.commit_batch({{0, EditStage::stage4, a}, {2, EditStage::stage4, Image(2, 2)}}));
    CHECK(ds.update_log().empty());
    CHECK(ds.record(0).current_stage == EditStage::stage0);

    ds.commit_batch({{0, EditStage::stage4, a}, {2, EditStage::stage4, b}, {4, EditStage::stage4, a}}, 1, 0);
    const auto log = ds.update_log();
    REQUIRE(log.size() == 3);
    CHECK(log[0].transaction == log[2].transaction);
    CHECK(log[0].seq < log[1].seq);
    CHECK(log[1].image_hash == image_hash(b));
    CHECK(image_hash(a) != image_hash(b));
}

TEST_CASE("copies are independent") {
    ViewDataset ds = small_dataset(2);
    ViewDataset copy = ds;
    copy.commit_stage(0, EditStage::stage2, Image(12, 10, 0.3));
    CHECK(ds.record(0).current_stage == EditStage::stage0);
    CHECK(ds.update_log().empty());
    CHECK(copy.update_log().size() == 1);
}

TEST_CASE("concurrent commits to distinct views") {
    ViewDataset ds = small_dataset(4);
    std::vector<std::thread> threads;
    for (int v : ds.view_indices())
        threads.emplace_back([&ds, v] {
            for (int s = 1; s <= 4; ++s) ds.commit_stage(v, EditStage(s), Image(12, 10, 0.1 * s + 0.01 * v));
        });
    for (auto& t : threads) t.join();
    const auto log = ds.update_log();
    CHECK(log.size() == 16);
    for (size_t i = 1; i < log.size(); ++i) CHECK(log[i].seq == log[i - 1].seq + 1);
    for (int v : ds.view_indices()) CHECK(ds.record(v).current_stage == EditStage::stage4);
}

TEST_CASE("replay_log reproduces mixed-stage state") {
    ViewDataset ds = small_dataset(3);
    ds.commit_stage(0, EditStage::stage1, Image(12, 10, 0.1));
    ds.log_optimize(1, 0, 5);
    ds.commit_stage(2, EditStage::stage1, Image(12, 10, 0.2));
    ds.commit_stage(0, EditStage::stage4, Image(12, 10, 0.3));
    const auto replayed = replay_log(ds, ds.update_log());
    for (int v : ds.view_indices()) {
        const auto rec = ds.record(v);
        CHECK(replayed.at(v).current_stage == rec.current_stage);
        CHECK(*replayed.at(v).images.at(rec.current_stage) == rec.current());
    }
    const auto jsonl = ds.log_jsonl();
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 4);
    const auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
    CHECK(first.at("event") == "commit");
    CHECK(first.at("image_hash").get<std::string>().size() == 16);
}

TEST_CASE("ERR ordering check") {
    const std::vector<int> views{0, 2, 4};
    ViewDataset err = small_dataset(3);
    for (int round = 1; round <= 2; ++round) {
        err.commit_batch({{0, EditStage::stage1, Image(12, 10, 0.1)},
                          {0, EditStage::stage4, Image(12, 10, 0.2)},
                          {2, EditStage::stage4, Image(12, 10, 0.2)},
                          {4, EditStage::stage4, Image(12, 10, 0.2)}},
                         round);
        err.log_optimize(round, 0, 10);
    }
    CHECK(err_log_ordering_holds(err.update_log(), views));

    ViewDataset idu = small_dataset(3);
    for (int v : views) {
        idu.commit_stage(v, EditStage::stage4, Image(12, 10, 0.2));
        idu.log_optimize(1, 0, 3);
    }
    CHECK_FALSE(err_log_ordering_holds(idu.update_log(), views));

    ViewDataset split = small_dataset(3);
    split.commit_batch({{0, EditStage::stage4, Image(12, 10, 0.2)}, {2, EditStage::stage4, Image(12, 10, 0.2)}});
    split.commit_stage(4, EditStage::stage4, Image(12, 10, 0.2));
    split.log_optimize(1, 0, 3);
    CHECK_FALSE(err_log_ordering_holds(split.update_log(), views));

    ViewDataset early = small_dataset(3);
    early.log_optimize(1, 0, 3);
    CHECK_FALSE(err_log_ordering_holds(early.update_log(), views));

    ViewDataset single = small_dataset(1);
    single.commit_stage(0, EditStage::stage4, Image(12, 10, 0.2));
    single.log_optimize(1, 0, 3);
    CHECK(err_log_ordering_holds(single.update_log(), {0}));
}

TEST_CASE("manifest round trip") {
    const fs::path dir = temp_dir("manifest");
    const ViewDataset ds = small_dataset(3);
    save_dataset(ds, dir / "dataset.json");
    const ViewDataset back = load_dataset(dir / "dataset.json");
    CHECK(back.dataset_id == "small");
    REQUIRE(back.view_indices() == ds.view_indices());
    for (int v : ds.view_indices()) {
        const auto a = ds.record(v), b = back.record(v);
        CHECK(a.original() == b.original());
        CHECK(a.camera.world_to_camera.isApprox(b.camera.world_to_camera, 1e-12));
        CHECK(a.camera.focal == b.camera.focal);
        CHECK(a.aux->parsing == b.aux->parsing);
        CHECK(a.aux->pose_keypoints == b.aux->pose_keypoints);
        CHECK(a.face_keypoints.has_value() == b.face_keypoints.has_value());
    }
    const CameraView cam = ds.record(2).camera;
    const CameraView cam2 = camera_from_json(camera_to_json(cam));
    CHECK(cam2.principal_point == cam.principal_point);
    CHECK(cam2.width == cam.width);
}

TEST_CASE("manifest errors") {
    const fs::path dir = temp_dir("manifest_errors");
    CHECK_THROWS_AS(load_dataset(dir / "missing.json"), MissingFile);

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_dataset(dir / "bad.json"), ManifestError);

    save_dataset(small_dataset(2), dir / "ok.json");
    auto doc = nlohmann::json::parse(std::ifstream(dir / "ok.json"));

    auto dup = doc;
    dup["views"][1]["index"] = dup["views"][0]["index"];
    std::ofstream(dir / "dup.json") << dup.dump();
    CHECK_THROWS_AS(load_dataset(dir / "dup.json"), DuplicateIndex);

    auto missing_img = doc;
    missing_img["views"][0]["image_path"] = "images/nope.png";
    std::ofstream(dir / "missing_img.json") << missing_img.dump();
    CHECK_THROWS_AS(load_dataset(dir / "missing_img.json"), MissingFile);

    auto bad_cam = doc;
    bad_cam["views"][0]["world_to_camera"] = {1, 2, 3};
    std::ofstream(dir / "bad_cam.json") << bad_cam.dump();
    CHECK_THROWS_AS(load_dataset(dir / "bad_cam.json"), ManifestError);

    auto bad_size = doc;
    bad_size["views"][0]["width"] = 99;
    std::ofstream(dir / "bad_size.json") << bad_size.dump();
    CHECK_THROWS_AS(load_dataset(dir / "bad_size.json"), ManifestError);

    auto unordered = doc;
    std::swap(unordered["views"][0], unordered["views"][1]);
    std::ofstream(dir / "unordered.json") << unordered.dump();
    CHECK(load_dataset(dir / "unordered.json").view_indices() == std::vector<int>{0, 2});
}
