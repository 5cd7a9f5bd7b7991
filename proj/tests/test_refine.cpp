#include <doctest.h>

#include <random>

#include "gsvton/errors.hpp"
#include "gsvton/metrics.hpp"
#include "gsvton/refine.hpp"
#include "gsvton/synth.hpp"
#include "oracles/oracles.hpp"

using namespace gsvton;

namespace {

const Mannequin& mannequin() {
    static const Mannequin m = make_mannequin({});
    return m;
}

const ViewDataset& mannequin_dataset() {
    static const ViewDataset ds = make_mannequin_dataset(mannequin());
    return ds;
}

const GarmentPrompt& red_prompt() {
    static const GarmentPrompt p =
        GarmentPrompt::from_image(make_garment_image(red_garment_color(), 64, 0), TargetRegion::upper);
    return p;
}

Image box_blur(const Image& img, int r) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            Vec3 acc = Vec3::Zero();
            int n = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = std::clamp(x + dx, 0, img.width - 1), yy = std::clamp(y + dy, 0, img.height - 1);
                    acc += img.pixel(xx, yy);
                    ++n;
                }
            out.set_pixel(x, y, acc / n);
        }
    return out;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

/// Mock edits of three consecutive views; `decoy` < 0 plants none.
std::vector<GarmentMask> triple(int start, int decoy, std::uint64_t seed, double jitter) {
    std::vector<GarmentMask> out;
    for (int k = 0; k < 3; ++k) {
        const int v = (start + k) % 24;
        const auto r = mannequin_dataset().record(v);
        const auto aux = r.aux->for_region(TargetRegion::upper);
        EditOptions o;
        o.view_index = v;
        o.sabotage = k == decoy;
        out.push_back(GarmentMask::make(mock_edit(r.original(), red_prompt(), aux, seed, jitter, o), aux.inpaint_mask,
                                        start + k));
    }
    return out;
}

} // namespace

TEST_CASE("convex_hull drops interior and collinear points") {
    const auto hull = convex_hull({{0, 0}, {4, 0}, {2, 0}, {4, 4}, {0, 4}, {2, 2}, {1, 3}});
    REQUIRE(hull.size() == 4);
    double area = 0.0;
    for (size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        area += a.x() * b.y() - b.x() * a.y();
    }
    CHECK(area == doctest::Approx(32.0));  // counter-clockwise, twice the area
}

TEST_CASE("face alpha: 1 inside the dilated hull, linear ramp, 0 beyond") {
    FaceNet f;
    f.keypoints = {{10, 10}, {20, 10}, {20, 20}, {10, 20}};
    f.dilation = 2;
    f.feather = 4;
    const ScalarMap a = f.alpha(40, 40);
    CHECK(a(15, 15) == 1.0);
    CHECK(a(22, 15) == 1.0);
    CHECK(a(23, 15) == doctest::Approx(0.75));
    CHECK(a(25, 15) == doctest::Approx(0.25));
    CHECK(a(26, 15) == 0.0);
    CHECK(a(35, 35) == 0.0);
    const Mask m = f.hull_mask(40, 40);
    CHECK(m(22, 15) == 1);
    CHECK(m(23, 15) == 0);
    f.keypoints.resize(2);
    CHECK_THROWS_AS(f.alpha(40, 40), InvalidParameter);
}

TEST_CASE("face keypoints of the synthetic scene") {
    const auto& m = mannequin();
    const auto det = MetadataFaceDetector::from_dataset(mannequin_dataset());
    const auto front = mannequin_dataset().record(0);
    const auto face = detect_face_keypoints(det, front.original(), 0);
    REQUIRE(face.has_value());
    REQUIRE(face->keypoints.size() == m.face.keypoints.size());
    for (size_t i = 0; i < face->keypoints.size(); ++i)
        CHECK((face->keypoints[i] - oracle::project(m.cameras[0], m.face.keypoints[i])).norm() < 0.5);
    CHECK_FALSE(det.detect(mannequin_dataset().record(12).original(), 12).has_value());

    MetadataFaceDetector manual({{3, {{1, 1}, {5, 1}, {3, 4}}}});
    const auto passed = manual.detect(Image(8, 8), 3);
    REQUIRE(passed.has_value());
    CHECK(passed->keypoints[2] == Vec2(3, 4));
}

TEST_CASE("face_composite pixel regions") {
    const auto rec = mannequin_dataset().record(0);
    const Image& original = rec.original();
    const auto face = MetadataFaceDetector::from_dataset(mannequin_dataset()).detect(original, 0);
    REQUIRE(face.has_value());

    CHECK(face_composite(original, original, face, 0) == original);
    const Image blurred = box_blur(original, 2);
    CHECK(face_composite(original, blurred, std::nullopt, 0) == blurred);

    const Image out = face_composite(original, blurred, face, 0);
    const ScalarMap a = face->alpha(original.width, original.height);
    Mask interior(original.width, original.height, 0);
    for (int y = 0; y < original.height; ++y)
        for (int x = 0; x < original.width; ++x) {
            if (a(x, y) == 1.0) interior(x, y) = 1;
            if (a(x, y) == 0.0)
                for (int c = 0; c < 3; ++c) REQUIRE(out.at(x, y, c) == blurred.at(x, y, c));
        }
    REQUIRE(mask_area(interior) > 0);
    CHECK(psnr_masked(out, original, interior) >= 50.0);

    CHECK_THROWS_AS(face_composite(original, Image(4, 4), face, 0), DimensionMismatch);
    CHECK_THROWS_AS(face_composite(original, blurred, face, 5), PreconditionError);
}

TEST_CASE("dhash matches the coverage oracle") {
    std::mt19937_64 rng(11);
    for (auto [w, h] : {std::pair{9, 8}, {37, 23}, {64, 64}, {100, 41}}) {
        const Image img = oracle::random_image(w, h, rng);
        CHECK(dhash(img).bits == oracle::dhash(img));
    }
    CHECK_THROWS_AS(dhash(Image()), InvalidParameter);
}

TEST_CASE("dhash similarity properties") {
    std::mt19937_64 rng(12);
    const Image img = box_blur(oracle::random_image(48, 40, rng), 3);
    const HashCode h = dhash(img);
    CHECK(similarity(h, h) == 1.0);

    Image brighter = img;
    for (double& v : brighter.data) v = 0.1 + 0.6 * v;  // strictly monotone, contracting
    CHECK(dhash(brighter) == dhash(img));

    Image negative = img;
    for (double& v : negative.data) v = 1.0 - v;
    CHECK(similarity(h, dhash(negative)) ==
          doctest::Approx(oracle::hash_similarity(oracle::dhash(img), oracle::dhash(negative))));
    CHECK(similarity(h, dhash(negative)) < 0.5);
}

TEST_CASE("GarmentMask is zero exactly outside the mask") {
    std::mt19937_64 rng(13);
    Image img = oracle::random_image(16, 16, rng);
    for (double& v : img.data) v = 0.1 + 0.8 * v;
    Mask m(16, 16, 0);
    for (int y = 4; y < 10; ++y)
        for (int x = 2; x < 12; ++x) m(x, y) = 1;
    const auto g = GarmentMask::make(img, m, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) CHECK((g.masked_image.at(x, y, c) == 0.0) == (m(x, y) == 0));
    CHECK(g.hash() == dhash(crop(g.masked_image, *mask_bbox(m))));
    CHECK_THROWS_AS(GarmentMask::make(img, Mask(3, 3), 0), DimensionMismatch);
}

TEST_CASE("select_outlier_views degenerate inputs") {
    const auto clean = triple(0, -1, 1, 0.0);
    std::vector<GarmentMask> same{clean[0], clean[0], clean[0]};
    same[1].view_index = 1;
    same[2].view_index = 2;
    CHECK(select_outlier_views(same).empty());
    CHECK(select_outlier_views({clean[0], clean[1]}).empty());
    CHECK(select_outlier_views(triple(4, 1, 2, 0.2), 0.0).empty());
    CHECK(select_outlier_views(clean, 2.0).size() == 1);  // unconditional flagging
    std::vector<GarmentMask> unordered{clean[1], clean[0], clean[2]};
    CHECK_THROWS_AS(select_outlier_views(unordered), PreconditionError);
}

TEST_CASE("select_outlier_views flags a planted decoy") {
    for (int trial = 0; trial < 12; ++trial) {
        const int start = (trial * 5) % 24, decoy = trial % 3;
        const auto masks = triple(start, decoy, static_cast<std::uint64_t>(trial), 0.2);
        std::uint64_t h[3];
        for (int k = 0; k < 3; ++k) h[k] = oracle::dhash(crop(masks[k].masked_image, *mask_bbox(masks[k].mask)));
        // The oracle's pairwise similarities agree on which member is isolated.
        int worst = -1;
        double worst_best = 2.0;
        for (int i = 0; i < 3; ++i) {
            double best = -1.0;
            for (int j = 0; j < 3; ++j)
                if (j != i) best = std::max(best, oracle::hash_similarity(h[i], h[j]));
            if (best < worst_best) worst_best = best, worst = i;
        }
        REQUIRE(worst == decoy);
        REQUIRE(worst_best < kDefaultTau);
        const auto flagged = select_outlier_views(masks);
        REQUIRE(flagged.size() == 1);
        CHECK(flagged[0] == start + decoy);
        CHECK(select_outlier_views(triple(start, -1, static_cast<std::uint64_t>(trial), 0.2)).empty());
    }
}

TEST_CASE("select_outlier_views groups a remainder with the last triple") {
    std::vector<GarmentMask> five;
    for (int k = 0; k < 5; ++k) {
        const auto r = mannequin_dataset().record(k);
        const auto aux = r.aux->for_region(TargetRegion::upper);
        EditOptions o;
        o.view_index = k;
        o.sabotage = k == 4;
        five.push_back(GarmentMask::make(mock_edit(r.original(), red_prompt(), aux, 3, 0.1, o), aux.inpaint_mask, k));
    }
    CHECK(select_outlier_views(five) == std::vector<int>{4});
    std::swap(five[0], five[1]);
    std::swap(five[0].view_index, five[1].view_index);
    CHECK(select_outlier_views(five) == std::vector<int>{4});
}

TEST_CASE("re_edit commits Stage3 and repairs a sabotaged view") {
    ViewDataset ds = mannequin_dataset();
    EditorBinding binding;
    binding.jitter = 0.2;
    binding.seed = 5;
    binding.sabotage = {7};
    std::map<int, AuxInputs> aux;
    std::vector<GarmentMask> masks;
    for (int v = 6; v <= 8; ++v) {
        const auto r = ds.record(v);
        aux[v] = r.aux->for_region(TargetRegion::upper);
        EditOptions o;
        o.view_index = v;
        const Image edited = edit_view(binding, r.original(), red_prompt(), aux[v], o);
        ds.commit_stage(v, EditStage::stage2, edited, 1);
        masks.push_back(GarmentMask::make(edited, aux[v].inpaint_mask, v));
    }
    const auto flagged = select_outlier_views(masks);
    REQUIRE(flagged == std::vector<int>{7});

    const size_t log_before = ds.update_log().size();
    CHECK(re_edit({}, ds, binding, red_prompt(), aux, 1).empty());
    CHECK(ds.update_log().size() == log_before);

    const auto out = re_edit(flagged, ds, binding, red_prompt(), aux, 1);
    REQUIRE(out.count(7));
    CHECK(ds.record(7).current_stage == EditStage::stage3);
    CHECK(ds.record(6).current_stage == EditStage::stage2);
    masks[1] = GarmentMask::make(out.at(7), aux[7].inpaint_mask, 7);
    CHECK(similarity(masks[1].hash(), masks[0].hash()) >= kDefaultTau);
    CHECK(select_outlier_views(masks).empty());
}

TEST_CASE("re_edit reports every failed view") {
    EditorBinding down;
    down.kind = EditorKind::remote;
    down.endpoint = "http://127.0.0.1:9";
    down.timeout = 0.5;
    down.retries = 1;
    const auto r = mannequin_dataset().record(2);
    std::map<int, Image> stage2{{2, r.original()}, {3, r.original()}};
    std::map<int, AuxInputs> aux{{2, r.aux->for_region(TargetRegion::upper)},
                                 {3, r.aux->for_region(TargetRegion::upper)}};
    try {
        re_edit_images({2, 3}, stage2, down, red_prompt(), aux, 1);
        FAIL("expected EditorUnavailable");
    } catch (const EditorUnavailable& e) {
        const std::string what = e.what();
        CHECK(what.find("view 2") != std::string::npos);
        CHECK(what.find("view 3") != std::string::npos);
    }
}

TEST_CASE("degradation operator laws") {
    std::mt19937_64 rng(21);
    Mask keep(16, 12, 0);
    std::bernoulli_distribution coin(0.5);
    for (auto& v : keep.data) v = coin(rng);
    for (const auto& op : {DegradationOp::identity(), DegradationOp::masked(keep), DegradationOp::downsample(2),
                           DegradationOp::downsample(4)}) {
        const Image x = oracle::random_image(16, 12, rng);
        const Image p = op.projector(x);
        CHECK(max_abs_diff(op.projector(p), p) < 1e-10);
        CHECK(max_abs_diff(op.apply(op.pseudo_inverse(op.apply(x))), op.apply(x)) < 1e-10);
        const Image y = op.apply(oracle::random_image(16, 12, rng));
        CHECK(max_abs_diff(op.apply(op.pseudo_inverse(y)), y) < 1e-10);
    }
    CHECK_THROWS_AS(DegradationOp::downsample(0), InvalidParameter);
    CHECK_THROWS_AS(DegradationOp::downsample(3).apply(Image(16, 12)), DimensionMismatch);
    CHECK_THROWS_AS(DegradationOp::masked(keep).apply(Image(8, 8)), DimensionMismatch);
}

TEST_CASE("nullspace_restore") {
    std::mt19937_64 rng(22);
    const Image y = oracle::random_image(16, 16, rng);
    CHECK(nullspace_restore(y, DegradationOp::identity(), smoothing_prior()) == y);

    Mask left(16, 16, 0);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 8; ++c) left(c, r) = 1;
    const auto mask_op = DegradationOp::masked(left);
    const Image ym = mask_op.apply(y);
    const Prior prior = smoothing_prior();
    const Image xbar = prior(mask_op.pseudo_inverse(ym));
    const Image xm = nullspace_restore(ym, mask_op, prior);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            for (int ch = 0; ch < 3; ++ch)
                CHECK(xm.at(c, r, ch) == doctest::Approx(c < 8 ? y.at(c, r, ch) : xbar.at(c, r, ch)).epsilon(1e-12));

    for (int trial = 0; trial < 5; ++trial) {
        const Image x = oracle::random_image(32, 24, rng);
        const auto down = DegradationOp::downsample(2);
        const Image yd = down.apply(x);
        const Image xd = nullspace_restore(yd, down, smoothing_prior());
        CHECK(max_abs_diff(down.apply(xd), yd) < 1e-8);
    }
    CHECK_THROWS_AS(nullspace_restore(Image(5, 5), mask_op, prior), DimensionMismatch);
}

TEST_CASE("smoothing prior keeps constant images") {
    const Image c(9, 7, Vec3(0.2, 0.4, 0.6));
    CHECK(max_abs_diff(smoothing_prior(3, 0.1)(c), c) < 1e-15);
    CHECK_THROWS_AS(smoothing_prior(-1, 0.1), InvalidParameter);
}
