#include "gsvton/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"

namespace gsvton {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(EditStage s) { return fmt::format("stage{}", static_cast<int>(s)); }

EditStage edit_stage_from_string(const std::string& s) {
    for (int i = 0; i <= 4; ++i)
        if (s == fmt::format("stage{}", i)) return static_cast<EditStage>(i);
    throw InvalidParameter("unknown edit stage '" + s + "'");
}

json UpdateEvent::to_json() const {
    json j{{"seq", seq}, {"transaction", transaction}, {"round", round}, {"iteration", iteration}};
    if (kind == EventKind::commit) {
        j["event"] = "commit";
        j["view_index"] = view_index;
        j["stage"] = gsvton::to_string(stage);
        j["image_hash"] = fmt::format("{:016x}", image_hash);
    } else {
        j["event"] = "optimize";
        j["steps"] = steps;
    }
    return j;
}

std::uint64_t image_hash(const Image& img) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(&img.width, sizeof img.width);
    mix(&img.height, sizeof img.height);
    mix(img.data.data(), img.data.size() * sizeof(double));
    return h;
}

ViewDataset::ViewDataset(const ViewDataset& o) {
    std::lock_guard lock(o.mu_);
    dataset_id = o.dataset_id;
    metadata = o.metadata;
    records_ = o.records_;
    index_ = o.index_;
    log_ = o.log_;
    next_seq_ = o.next_seq_;
    next_txn_ = o.next_txn_;
}

ViewDataset& ViewDataset::operator=(const ViewDataset& o) {
    if (this == &o) return *this;
    ViewDataset tmp(o);
    std::scoped_lock lock(mu_);
    dataset_id = std::move(tmp.dataset_id);
    metadata = std::move(tmp.metadata);
    records_ = std::move(tmp.records_);
    index_ = std::move(tmp.index_);
    log_ = std::move(tmp.log_);
    next_seq_ = tmp.next_seq_;
    next_txn_ = tmp.next_txn_;
    return *this;
}

void ViewDataset::add_record(ViewRecord record) {
    std::lock_guard lock(mu_);
    if (index_.count(record.view_index)) throw DuplicateIndex(fmt::format("duplicate view index {}", record.view_index));
    if (!records_.empty() && record.view_index < records_.back().view_index)
        throw InvalidParameter("view records must be added in increasing view_index order");
    auto it = record.images.find(EditStage::stage0);
    if (it == record.images.end() || !it->second) throw PreconditionError("view record without a Stage0 image");
    if (it->second->width != record.camera.width || it->second->height != record.camera.height)
        throw DimensionMismatch(fmt::format("view {}: image size differs from camera size", record.view_index));
    for (auto s = record.images.begin(); s != record.images.end();)
        s = s->first == EditStage::stage0 ? std::next(s) : record.images.erase(s);
    record.current_stage = EditStage::stage0;
    record.camera.view_index = record.view_index;
    index_[record.view_index] = records_.size();
    records_.push_back(std::move(record));
}

size_t ViewDataset::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

std::vector<int> ViewDataset::view_indices() const {
    std::lock_guard lock(mu_);
    std::vector<int> out;
    for (const auto& r : records_) out.push_back(r.view_index);
    return out;
}

size_t ViewDataset::position(int view_index) const {
    auto it = index_.find(view_index);
    if (it == index_.end()) throw InvalidParameter(fmt::format("no view with index {}", view_index));
    return it->second;
}

ViewRecord ViewDataset::record(int view_index) const {
    std::lock_guard lock(mu_);
    return records_[position(view_index)];
}

std::vector<ViewRecord> ViewDataset::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::vector<CameraView> ViewDataset::cameras() const {
    std::lock_guard lock(mu_);
    std::vector<CameraView> out;
    for (const auto& r : records_) out.push_back(r.camera);
    return out;
}

void ViewDataset::check_commit(const ViewRecord& rec, EditStage stage, const Image& image) const {
    if (stage == EditStage::stage0)
        throw ImmutabilityError(fmt::format("view {}: Stage0 originals are immutable", rec.view_index));
    if (image.width != rec.camera.width || image.height != rec.camera.height)
        throw DimensionMismatch(fmt::format("view {}: committed image is {}x{}, expected {}x{}", rec.view_index,
                                            image.width, image.height, rec.camera.width, rec.camera.height));
}

void ViewDataset::apply_commit(size_t pos, EditStage stage, ImagePtr image, int round, int iteration,
                               std::uint64_t txn) {
    auto& rec = records_[pos];
    UpdateEvent ev;
    ev.seq = next_seq_++;
    ev.transaction = txn;
    ev.kind = EventKind::commit;
    ev.view_index = rec.view_index;
    ev.stage = stage;
    ev.round = round;
    ev.iteration = iteration;
    ev.image_hash = image_hash(*image);
    ev.image = image;
    rec.images[stage] = std::move(image);
    rec.current_stage = stage;
    log_.push_back(std::move(ev));
}

void ViewDataset::commit_stage(int view_index, EditStage stage, Image image, int round, int iteration) {
    std::lock_guard lock(mu_);
    const size_t pos = position(view_index);
    check_commit(records_[pos], stage, image);
    apply_commit(pos, stage, std::make_shared<const Image>(std::move(image)), round, iteration, next_txn_++);
}

void ViewDataset::commit_batch(std::vector<StageCommit> commits, int round, int iteration) {
    std::lock_guard lock(mu_);
    std::vector<size_t> pos;
    for (const auto& c : commits) {
        pos.push_back(position(c.view_index));
        check_commit(records_[pos.back()], c.stage, c.image);
    }
    const std::uint64_t txn = next_txn_++;
    for (size_t i = 0; i < commits.size(); ++i)
        apply_commit(pos[i], commits[i].stage, std::make_shared<const Image>(std::move(commits[i].image)), round,
                     iteration, txn);
}

void ViewDataset::log_optimize(int round, int iteration, int steps) {
    std::lock_guard lock(mu_);
    UpdateEvent ev;
    ev.seq = next_seq_++;
    ev.transaction = next_txn_++;
    ev.kind = EventKind::optimize;
    ev.round = round;
    ev.iteration = iteration;
    ev.steps = steps;
    log_.push_back(std::move(ev));
}

std::vector<ViewTarget> ViewDataset::snapshot_targets() const {
    std::lock_guard lock(mu_);
    std::vector<ViewTarget> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back({r.camera, r.current()});
    return out;
}

std::vector<UpdateEvent> ViewDataset::update_log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::string ViewDataset::log_jsonl() const {
    std::lock_guard lock(mu_);
    std::string out;
    for (const auto& e : log_) out += e.to_json().dump() + "\n";
    return out;
}

void ViewDataset::reset_to_originals() {
    std::lock_guard lock(mu_);
    for (auto& r : records_) {
        const ImagePtr orig = r.images.at(EditStage::stage0);
        r.images.clear();
        r.images[EditStage::stage0] = orig;
        r.current_stage = EditStage::stage0;
    }
    log_.clear();
    next_seq_ = 0;
    next_txn_ = 0;
}

// ---------------------------------------------------------------------------
// Manifest

json camera_to_json(const CameraView& cam) {
    json w2c = json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) w2c.push_back(cam.world_to_camera(r, c));
    return json{{"world_to_camera", w2c}, {"fx", cam.focal.x()},   {"fy", cam.focal.y()},
                {"cx", cam.principal_point.x()}, {"cy", cam.principal_point.y()}, {"width", cam.width},
                {"height", cam.height}};
}

CameraView camera_from_json(const json& j) {
    CameraView cam;
    try {
        const auto& w2c = j.at("world_to_camera");
        if (!w2c.is_array() || w2c.size() != 16) throw ManifestError("world_to_camera must hold 16 numbers");
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = w2c.at(static_cast<size_t>(r * 4 + c)).get<double>();
        cam.focal = {j.at("fx").get<double>(), j.at("fy").get<double>()};
        cam.principal_point = {j.at("cx").get<double>(), j.at("cy").get<double>()};
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        cam.validate();
    } catch (const json::exception& e) {
        throw ManifestError(std::string("camera entry: ") + e.what());
    } catch (const InvalidParameter& e) {
        throw ManifestError(std::string("camera entry: ") + e.what());
    }
    return cam;
}

namespace {

json points_to_json(const std::vector<Vec2>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({p.x(), p.y()});
    return a;
}

std::vector<Vec2> points_from_json(const json& a) {
    std::vector<Vec2> out;
    for (const auto& p : a) {
        if (!p.is_array() || p.size() != 2) throw ManifestError("keypoints must be [x, y] pairs");
        out.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    return out;
}

LabelMap read_label_png(const fs::path& p) {
    const auto g = read_png_gray(p);
    LabelMap m(g.width, g.height);
    m.data = g.data;
    return m;
}

} // namespace

ViewDataset load_dataset(const fs::path& manifest) {
    if (!fs::exists(manifest)) throw MissingFile("manifest not found: " + manifest.string());
    json doc;
    try {
        std::ifstream in(manifest);
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ManifestError(manifest.string() + ": " + e.what());
    }
    const fs::path base = manifest.parent_path();
    auto resolve = [&](const std::string& rel) { return fs::path(rel).is_absolute() ? fs::path(rel) : base / rel; };

    ViewDataset ds;
    std::vector<ViewRecord> records;
    try {
        ds.dataset_id = doc.value("dataset_id", manifest.stem().string());
        if (doc.contains("metadata")) ds.metadata = doc.at("metadata");
        const auto& views = doc.at("views");
        if (!views.is_array()) throw ManifestError("'views' must be an array");
        std::set<int> seen;
        for (const auto& v : views) {
            ViewRecord rec;
            rec.view_index = v.at("index").get<int>();
            if (!seen.insert(rec.view_index).second)
                throw DuplicateIndex(fmt::format("duplicate view index {} in {}", rec.view_index, manifest.string()));
            rec.camera = camera_from_json(v);
            rec.camera.view_index = rec.view_index;
            const fs::path img_path = resolve(v.at("image_path").get<std::string>());
            if (!fs::exists(img_path)) throw MissingFile("image not found: " + img_path.string());
            auto img = std::make_shared<const Image>(read_png(img_path));
            if (img->width != rec.camera.width || img->height != rec.camera.height)
                throw ManifestError(fmt::format("view {}: image is {}x{} but manifest says {}x{}", rec.view_index,
                                                img->width, img->height, rec.camera.width, rec.camera.height));
            rec.images[EditStage::stage0] = img;
            if (v.contains("aux")) {
                const auto& a = v.at("aux");
                AuxInputs aux;
                aux.parsing = read_label_png(resolve(a.at("parsing_path").get<std::string>()));
                if (a.contains("inpaint_mask_path"))
                    aux.inpaint_mask = mask_from_gray(read_png_gray(resolve(a.at("inpaint_mask_path").get<std::string>())));
                if (a.contains("pose_keypoints")) aux.pose_keypoints = points_from_json(a.at("pose_keypoints"));
                if (a.contains("dense_pose_path")) aux.dense_pose = read_png(resolve(a.at("dense_pose_path").get<std::string>()));
                aux.validate(rec.camera.width, rec.camera.height);
                rec.aux = std::move(aux);
            }
            if (v.contains("face_keypoints") && !v.at("face_keypoints").is_null())
                rec.face_keypoints = points_from_json(v.at("face_keypoints"));
            records.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw ManifestError(manifest.string() + ": " + e.what());
    } catch (const DimensionMismatch& e) {
        throw ManifestError(manifest.string() + ": " + e.what());
    }
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.view_index < b.view_index; });
    for (auto& r : records) ds.add_record(std::move(r));
    return ds;
}

void save_dataset(const ViewDataset& dataset, const fs::path& manifest) {
    const fs::path base = manifest.parent_path();
    if (!base.empty()) fs::create_directories(base);
    json views = json::array();
    for (const auto& rec : dataset.records()) {
        json v = camera_to_json(rec.camera);
        v["index"] = rec.view_index;
        const std::string img_rel = fmt::format("images/view_{:03d}.png", rec.view_index);
        write_png(base / img_rel, rec.original());
        v["image_path"] = img_rel;
        if (rec.aux) {
            json a;
            const std::string parsing_rel = fmt::format("aux/parsing_{:03d}.png", rec.view_index);
            write_png_gray(base / parsing_rel, rec.aux->parsing);
            a["parsing_path"] = parsing_rel;
            if (!rec.aux->inpaint_mask.empty()) {
                const std::string mask_rel = fmt::format("aux/inpaint_{:03d}.png", rec.view_index);
                write_png_gray(base / mask_rel, mask_to_gray(rec.aux->inpaint_mask));
                a["inpaint_mask_path"] = mask_rel;
            }
            a["pose_keypoints"] = points_to_json(rec.aux->pose_keypoints);
            if (rec.aux->dense_pose) {
                const std::string dp_rel = fmt::format("aux/densepose_{:03d}.png", rec.view_index);
                write_png(base / dp_rel, *rec.aux->dense_pose);
                a["dense_pose_path"] = dp_rel;
            }
            v["aux"] = a;
        }
        if (rec.face_keypoints) v["face_keypoints"] = points_to_json(*rec.face_keypoints);
        views.push_back(v);
    }
    const json doc{{"dataset_id", dataset.dataset_id}, {"metadata", dataset.metadata}, {"views", views}};
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Log analysis

std::map<int, ReplayedView> replay_log(const ViewDataset& dataset, const std::vector<UpdateEvent>& log) {
    std::map<int, ReplayedView> state;
    for (const auto& r : dataset.records()) state[r.view_index].images[EditStage::stage0] = r.images.at(EditStage::stage0);
    for (const auto& e : log) {
        if (e.kind != EventKind::commit) continue;
        auto it = state.find(e.view_index);
        if (it == state.end()) throw InvalidParameter(fmt::format("log references unknown view {}", e.view_index));
        if (!e.image || image_hash(*e.image) != e.image_hash)
            throw InvalidParameter(fmt::format("log event {} carries no matching image", e.seq));
        it->second.images[e.stage] = e.image;
        it->second.current_stage = e.stage;
    }
    return state;
}

bool err_log_ordering_holds(const std::vector<UpdateEvent>& log, const std::vector<int>& views) {
    const std::set<int> all(views.begin(), views.end());
    std::vector<const UpdateEvent*> segment;
    auto check = [&]() {
        std::multiset<int> stage4;
        std::set<std::uint64_t> txns;
        for (const auto* e : segment)
            if (e->kind == EventKind::commit && e->stage == EditStage::stage4) {
                stage4.insert(e->view_index);
                txns.insert(e->transaction);
            }
        if (stage4.empty()) return true;
        if (txns.size() != 1 || stage4.size() != all.size()) return false;
        return std::set<int>(stage4.begin(), stage4.end()) == all;
    };
    bool optimized_any = false;
    for (const auto& e : log) {
        if (e.kind == EventKind::optimize) {
            // An optimization phase must be preceded by a complete Stage4 update.
            bool has_stage4 = false;
            for (const auto* s : segment) has_stage4 |= s->kind == EventKind::commit && s->stage == EditStage::stage4;
            if (!check() || (!has_stage4 && !optimized_any)) return false;
            optimized_any = true;
            segment.clear();
        } else {
            segment.push_back(&e);
        }
    }
    return check();
}

} // namespace gsvton
