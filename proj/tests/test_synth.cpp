#include <doctest.h>

#include <filesystem>

#include "gsvton/image_io.hpp"
#include "gsvton/ply.hpp"
#include "gsvton/synth.hpp"
#include "oracles/oracles.hpp"

using namespace gsvton;
namespace fs = std::filesystem;

TEST_CASE("mannequin layout") {
    const Mannequin m = make_mannequin({});
    CHECK(m.cloud.size() == m.labels.size());
    CHECK(m.cloud.size() >= 150);
    CHECK(m.cloud.size() <= 250);
    for (int l = 0; l < kLabelCount; ++l) CHECK_FALSE(m.group(ParsingLabel(l)).empty());
    CHECK(m.cameras.size() == 24);
    for (size_t i = 0; i < m.cameras.size(); ++i) {
        CHECK(m.cameras[i].view_index == static_cast<int>(i));
        CHECK(m.cameras[i].center().norm() == doctest::Approx(std::hypot(4.0, 0.3)));
    }
    for (const auto& g : m.cloud.gaussians) CHECK(g.sh.size() == 1);

    MannequinConfig three;
    three.views = 3;
    CHECK(make_mannequin(three).cameras.size() == 3);
}

TEST_CASE("mannequin dataset") {
    const Mannequin m = make_mannequin({});
    const ViewDataset ds = make_mannequin_dataset(m);
    REQUIRE(ds.size() == 24);
    for (const auto& r : ds.records()) {
        REQUIRE(r.aux.has_value());
        const Mask torso = label_mask(r.aux->parsing, kLabelUpper);
        CHECK(mask_area(torso) > 500);
        CHECK(r.aux->for_region(TargetRegion::upper).inpaint_mask == torso);
        REQUIRE(r.aux->pose_keypoints.size() == m.joints.size());
        for (size_t j = 0; j < m.joints.size(); ++j)
            CHECK((r.aux->pose_keypoints[j] - oracle::project(r.camera, m.joints[j])).norm() < 1e-9);
        for (double v : r.original().data) CHECK(decode_srgb8(encode_srgb8(v)) == v);
    }
    CHECK(ds.record(0).face_keypoints.has_value());
    CHECK(ds.record(3).face_keypoints.has_value());
    CHECK_FALSE(ds.record(6).face_keypoints.has_value());
    CHECK_FALSE(ds.record(12).face_keypoints.has_value());
    CHECK(ds.metadata.at("synthetic") == true);
}

TEST_CASE("parsing map follows the dominant group") {
    const Mannequin m = make_mannequin({});
    const auto& cam = m.cameras[0];
    const LabelMap parsing = parsing_map(m.cloud, m.labels, cam);
    // The torso center and the head center project onto their own labels.
    const Vec2 torso = oracle::project(cam, {0.0, 0.4, 0.13});
    const Vec2 head = oracle::project(cam, {0.0, 0.92, 0.15});
    CHECK(parsing(static_cast<int>(torso.x()), static_cast<int>(torso.y())) == kLabelUpper);
    CHECK(parsing(static_cast<int>(head.x()), static_cast<int>(head.y())) == kLabelHead);
    CHECK(parsing(0, 0) == kLabelBackground);
}

TEST_CASE("face keypoints match the planted markers") {
    const Mannequin m = make_mannequin({});
    const auto kp = face_keypoints(m.face, m.cameras[0]);
    REQUIRE(kp.has_value());
    for (size_t i = 0; i < kp->size(); ++i) CHECK(((*kp)[i] - oracle::project(m.cameras[0], m.face.keypoints[i])).norm() < 1e-9);
    CHECK_FALSE(face_keypoints(m.face, m.cameras[12]).has_value());
}

TEST_CASE("synthesis is deterministic and round-trips") {
    const fs::path a = fs::temp_directory_path() / "gsvton_synth_a", b = fs::temp_directory_path() / "gsvton_synth_b";
    fs::remove_all(a);
    fs::remove_all(b);
    MannequinConfig cfg;
    cfg.views = 6;
    cfg.seed = 4;
    write_mannequin(make_mannequin(cfg), a);
    write_mannequin(make_mannequin(cfg), b);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path other = b / fs::relative(entry.path(), a);
        REQUIRE(fs::exists(other));
        CHECK(read_file_bytes(entry.path()) == read_file_bytes(other));
    }
    const ViewDataset loaded = load_dataset(a / "dataset.json");
    const ViewDataset direct = make_mannequin_dataset(make_mannequin(cfg));
    REQUIRE(loaded.size() == 6);
    for (int v : loaded.view_indices()) {
        CHECK(loaded.record(v).original() == direct.record(v).original());
        CHECK(loaded.record(v).aux->parsing == direct.record(v).aux->parsing);
    }
    const GaussianCloud cloud = load_ply(a / "scene.ply");
    CHECK(cloud.size() == make_mannequin(cfg).cloud.size());
    CHECK(fs::exists(a / "groups.json"));
    CHECK(fs::exists(a / "garment_red.png"));
}

TEST_CASE("garment images") {
    const Image g = make_garment_image(red_garment_color(), 32, 1);
    CHECK(g == make_garment_image(red_garment_color(), 32, 1));
    CHECK(g.width == 32);
    Vec3 mean = Vec3::Zero();
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) mean += g.pixel(x, y);
    mean /= 1024.0;
    CHECK(mean.x() > 2.0 * mean.y());
    CHECK(mean.x() > 2.0 * mean.z());
}
