#include "gsvton/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

#include "gsvton/image_io.hpp"
#include "gsvton/ply.hpp"
#include "gsvton/render.hpp"

namespace gsvton {

namespace {

constexpr double kShC0 = 0.28209479177387814;
constexpr double kPi = std::numbers::pi;

// Body layout in world units; y is up and the face looks along +z.
constexpr double kHeadY = 0.92, kHeadShell = 0.11, kHeadScale = 0.06;
constexpr double kTorsoY0 = 0.08, kTorsoY1 = 0.68, kTorsoA = 0.22, kTorsoB = 0.13, kTorsoScale = 0.065;
constexpr double kLegX = 0.11, kLegY0 = -0.95, kLegY1 = -0.2, kLegR = 0.07, kLegScale = 0.055;
constexpr double kFloorY = -1.0, kFloorRadius = 2.2;

const Vec3 kSkin(0.78, 0.60, 0.50);
const Vec3 kFaceTone(0.93, 0.78, 0.68);
const Vec3 kEye(0.03, 0.03, 0.05);
const Vec3 kTorsoColor(0.36, 0.42, 0.52);
const Vec3 kLegColor(0.16, 0.16, 0.22);
const Vec3 kFloorColor(0.32, 0.30, 0.26);

Gaussian make(const Vec3& pos, const Vec3& scale, double opacity, const Vec3& rgb) {
    Gaussian g;
    g.position = pos;
    g.scale = scale;
    g.opacity = opacity;
    g.sh = {(rgb - Vec3::Constant(0.5)) / kShC0};
    return g;
}

// Fibonacci lattice on the unit sphere.
std::vector<Vec3> sphere_points(int n) {
    std::vector<Vec3> out;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(1.0 - y * y);
        out.emplace_back(r * std::cos(golden * i), y, r * std::sin(golden * i));
    }
    return out;
}

} // namespace

IndexSet Mannequin::group(ParsingLabel label) const {
    IndexSet s;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) s.insert(static_cast<int>(i));
    return s;
}

std::vector<CameraView> ring_cameras(const MannequinConfig& c) {
    std::vector<CameraView> cams;
    for (int i = 0; i < c.views; ++i) {
        const double theta = 2.0 * kPi * i / c.views;
        CameraView cam;
        cam.world_to_camera = look_at({c.ring_radius * std::sin(theta), c.ring_height, c.ring_radius * std::cos(theta)},
                                      Vec3::Zero(), Vec3::UnitY());
        cam.focal = {c.focal, c.focal};
        cam.principal_point = {c.width / 2.0, c.height / 2.0};
        cam.width = c.width;
        cam.height = c.height;
        cam.view_index = i;
        cams.push_back(cam);
    }
    return cams;
}

Mannequin make_mannequin(const MannequinConfig& config) {
    Mannequin m;
    m.config = config;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto jitter = [&](const Vec3& p) { return Vec3(p + 0.004 * Vec3(u(rng), u(rng), u(rng))); };
    auto add = [&](Gaussian g, ParsingLabel label) {
        m.cloud.gaussians.push_back(std::move(g));
        m.labels.push_back(label);
    };

    const Vec3 head(0.0, kHeadY, 0.0);
    for (const Vec3& d : sphere_points(30))
        add(make(jitter(head + kHeadShell * d), Vec3::Constant(kHeadScale), 0.9, kSkin), kLabelHead);

    const Vec3 face_center(0.0, kHeadY - 0.01, 0.15);
    add(make(face_center, {0.07, 0.085, 0.015}, 0.95, kFaceTone), kLabelHead);
    const Vec3 eye_l(-0.04, kHeadY + 0.02, 0.175), eye_r(0.04, kHeadY + 0.02, 0.175);
    add(make(eye_l, Vec3::Constant(0.014), 0.98, kEye), kLabelHead);
    add(make(eye_r, Vec3::Constant(0.014), 0.98, kEye), kLabelHead);
    m.face.center = face_center;
    m.face.normal = Vec3::UnitZ();
    for (int k = 0; k < 8; ++k) {
        const double t = 2.0 * kPi * k / 8;
        m.face.keypoints.emplace_back(0.07 * std::cos(t), face_center.y() + 0.085 * std::sin(t), face_center.z());
    }
    m.face.keypoints.push_back(eye_l);
    m.face.keypoints.push_back(eye_r);

    const int torso_rings = 7, torso_around = 12;
    for (int r = 0; r < torso_rings; ++r) {
        const double y = kTorsoY0 + (kTorsoY1 - kTorsoY0) * r / (torso_rings - 1);
        for (int k = 0; k < torso_around; ++k) {
            const double t = 2.0 * kPi * (k + 0.5 * (r % 2)) / torso_around;
            add(make(jitter({kTorsoA * std::cos(t), y, kTorsoB * std::sin(t)}), Vec3::Constant(kTorsoScale), 0.9,
                     kTorsoColor),
                kLabelUpper);
        }
    }

    const int leg_rings = 5, leg_around = 6;
    for (double side : {-1.0, 1.0})
        for (int r = 0; r < leg_rings; ++r) {
            const double y = kLegY0 + (kLegY1 - kLegY0) * r / (leg_rings - 1);
            for (int k = 0; k < leg_around; ++k) {
                const double t = 2.0 * kPi * (k + 0.5 * (r % 2)) / leg_around;
                add(make(jitter({side * kLegX + kLegR * std::cos(t), y, kLegR * std::sin(t)}),
                         Vec3::Constant(kLegScale), 0.9, kLegColor),
                    kLabelLower);
            }
        }

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < 30; ++i) {
        const double rad = kFloorRadius * std::sqrt((i + 0.5) / 30.0);
        const double t = 2.0 * kPi * u01(rng);
        add(make({rad * std::cos(t), kFloorY, rad * std::sin(t)}, {0.22, 0.015, 0.22}, 0.85, kFloorColor),
            kLabelBackground);
    }

    m.joints = {head, {0, 0.72, 0}, {-0.24, 0.66, 0}, {0.24, 0.66, 0}, {-0.12, 0.05, 0},
                {0.12, 0.05, 0}, {-kLegX, -0.55, 0}, {kLegX, -0.55, 0}, {-kLegX, kLegY0, 0}, {kLegX, kLegY0, 0}};
    m.cameras = ring_cameras(config);
    return m;
}

LabelMap parsing_map(const GaussianCloud& cloud, const std::vector<int>& labels, const CameraView& cam) {
    const auto weights = render_group_weights(cloud, cam, labels, kLabelCount);
    LabelMap out(cam.width, cam.height, kLabelBackground);
    for (size_t p = 0; p < out.data.size(); ++p) {
        double total = 0.0;
        for (const auto& w : weights) total += w.data[p];
        double best = weights[kLabelBackground].data[p] + (1.0 - total);
        for (int l = 1; l < kLabelCount; ++l)
            if (weights[static_cast<size_t>(l)].data[p] > best) {
                best = weights[static_cast<size_t>(l)].data[p];
                out.data[p] = static_cast<std::uint8_t>(l);
            }
    }
    return out;
}

namespace {
Vec2 project_point(const CameraView& cam, const Vec3& w) {
    const Vec3 t = cam.to_camera(w);
    return {cam.focal.x() * t.x() / t.z() + cam.principal_point.x(),
            cam.focal.y() * t.y() / t.z() + cam.principal_point.y()};
}
} // namespace

std::optional<std::vector<Vec2>> face_keypoints(const FaceMarkers& face, const CameraView& cam) {
    const Vec3 to_cam = (cam.center() - face.center).normalized();
    if (face.normal.dot(to_cam) < std::cos(70.0 * kPi / 180.0)) return std::nullopt;
    std::vector<Vec2> out;
    for (const auto& k : face.keypoints) {
        if (cam.to_camera(k).z() <= 0.0) return std::nullopt;
        const Vec2 p = project_point(cam, k);
        if (p.x() < 0 || p.y() < 0 || p.x() > cam.width - 1 || p.y() > cam.height - 1) return std::nullopt;
        out.push_back(p);
    }
    return out;
}

std::vector<Vec2> pose_keypoints(const std::vector<Vec3>& joints, const CameraView& cam) {
    std::vector<Vec2> out;
    for (const auto& j : joints) out.push_back(project_point(cam, j));
    return out;
}

ViewDataset make_mannequin_dataset(const Mannequin& m) {
    ViewDataset ds;
    ds.dataset_id = "mannequin";
    nlohmann::json markers = nlohmann::json::array();
    for (const auto& k : m.face.keypoints) markers.push_back({k.x(), k.y(), k.z()});
    ds.metadata = {{"synthetic", true},
                   {"generator", "mannequin"},
                   {"seed", m.config.seed},
                   {"labels", {{"background", 0}, {"head", 1}, {"upper", 2}, {"lower", 3}}},
                   {"face_markers", markers}};
    for (const auto& cam : m.cameras) {
        Image img = render_view(m.cloud, cam).pixels;
        for (double& v : img.data) v = decode_srgb8(encode_srgb8(v));
        ViewRecord rec;
        rec.view_index = cam.view_index;
        rec.camera = cam;
        rec.images[EditStage::stage0] = std::make_shared<const Image>(std::move(img));
        AuxInputs aux;
        aux.parsing = parsing_map(m.cloud, m.labels, cam);
        aux.pose_keypoints = pose_keypoints(m.joints, cam);
        rec.aux = std::move(aux);
        rec.face_keypoints = face_keypoints(m.face, cam);
        ds.add_record(std::move(rec));
    }
    return ds;
}

Vec3 red_garment_color() { return {0.78, 0.10, 0.10}; }
Vec3 decoy_garment_color() { return {0.15, 0.60, 0.25}; }

Image make_garment_image(const Vec3& base, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-0.02, 0.02);
    Image img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double fold = 0.5 + 0.5 * std::sin(2.0 * kPi * (x / 16.0 + 0.3 * std::sin(y / 11.0)));
            const double shade = 0.7 + 0.45 * fold;
            Vec3 c = base * shade;
            for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + noise(rng), 0.0, 1.0);
            img.set_pixel(x, y, c);
        }
    for (double& v : img.data) v = decode_srgb8(encode_srgb8(v));
    return img;
}

void write_mannequin(const Mannequin& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_dataset(make_mannequin_dataset(m), dir / "dataset.json");
    save_ply(dir / "scene.ply", m.cloud);
    nlohmann::json groups{{"labels", m.labels},
                          {"names", {{"0", "background"}, {"1", "head"}, {"2", "upper"}, {"3", "lower"}}}};
    std::ofstream(dir / "groups.json") << groups.dump() << "\n";
    write_png(dir / "garment_red.png", make_garment_image(red_garment_color(), 64, m.config.seed));
}

} // namespace gsvton
