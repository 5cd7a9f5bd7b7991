#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsvton/aux.hpp"
#include "gsvton/image.hpp"
#include "gsvton/optimize.hpp"
#include "gsvton/scene.hpp"

namespace gsvton {

enum class EditStage : int { stage0 = 0, stage1 = 1, stage2 = 2, stage3 = 3, stage4 = 4 };

std::string to_string(EditStage s);
EditStage edit_stage_from_string(const std::string& s);

using ImagePtr = std::shared_ptr<const Image>;

struct ViewRecord {
    int view_index = 0;
    CameraView camera;
    std::map<EditStage, ImagePtr> images;  // always holds stage0
    EditStage current_stage = EditStage::stage0;
    std::optional<AuxInputs> aux;
    std::optional<std::vector<Vec2>> face_keypoints;

    const Image& original() const { return *images.at(EditStage::stage0); }
    const Image& current() const { return *images.at(current_stage); }
    const Image& at(EditStage s) const { return *images.at(s); }
};

enum class EventKind { commit, optimize };

struct UpdateEvent {
    std::uint64_t seq = 0;          // logical timestamp
    std::uint64_t transaction = 0;  // events sharing a transaction were applied atomically
    EventKind kind = EventKind::commit;
    int view_index = -1;
    EditStage stage = EditStage::stage0;
    int round = 0;
    int iteration = 0;  // optimizer steps completed before the event
    int steps = 0;      // optimize events: steps taken
    std::uint64_t image_hash = 0;
    ImagePtr image;     // commit events: the stored image

    nlohmann::json to_json() const;
};

struct StageCommit {
    int view_index = 0;
    EditStage stage = EditStage::stage1;
    Image image;
};

/// 64-bit FNV-1a over the image dimensions and sample bits.
std::uint64_t image_hash(const Image& img);

/**
 * Ordered multi-view image set with per-view stage versioning.
 *
 * Stage0 images are immutable after insertion. Every image replacement is
 * recorded in the update log. All accessors lock, so commits to distinct views
 * and snapshots may come from different threads.
 */
class ViewDataset {
public:
    ViewDataset() = default;
    ViewDataset(const ViewDataset& o);
    ViewDataset& operator=(const ViewDataset& o);

    std::string dataset_id = "dataset";
    nlohmann::json metadata = nlohmann::json::object();

    /// Appends a record; view_index must exceed every existing index.
    void add_record(ViewRecord record);

    size_t size() const;
    bool empty() const { return size() == 0; }
    std::vector<int> view_indices() const;
    /// Copy of the record for `view_index`; throws InvalidParameter when absent.
    ViewRecord record(int view_index) const;
    std::vector<ViewRecord> records() const;
    std::vector<CameraView> cameras() const;

    /// Stores `image` under `stage` for one view and advances its current stage.
    void commit_stage(int view_index, EditStage stage, Image image, int round = 0, int iteration = 0);
    /// Applies all commits inside one transaction; validated up front so either all or none apply.
    void commit_batch(std::vector<StageCommit> commits, int round = 0, int iteration = 0);
    /// Records an optimization phase in the log.
    void log_optimize(int round, int iteration, int steps);

    /// Point-in-time (camera, current image) list, atomic with respect to commits.
    std::vector<ViewTarget> snapshot_targets() const;

    std::vector<UpdateEvent> update_log() const;
    /// One JSON object per line, in log order.
    std::string log_jsonl() const;

    /// Drops every non-original stage and clears the log.
    void reset_to_originals();

private:
    void check_commit(const ViewRecord& rec, EditStage stage, const Image& image) const;
    void apply_commit(size_t pos, EditStage stage, ImagePtr image, int round, int iteration, std::uint64_t txn);
    size_t position(int view_index) const;

    mutable std::mutex mu_;
    std::vector<ViewRecord> records_;
    std::map<int, size_t> index_;
    std::vector<UpdateEvent> log_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_txn_ = 0;
};

/// Reads a JSON manifest (see README) and decodes every referenced image.
ViewDataset load_dataset(const std::filesystem::path& manifest);
/// Writes the Stage0 images, aux maps and a manifest next to each other.
void save_dataset(const ViewDataset& dataset, const std::filesystem::path& manifest);

nlohmann::json camera_to_json(const CameraView& cam);
CameraView camera_from_json(const nlohmann::json& j);

struct ReplayedView {
    std::map<EditStage, ImagePtr> images;
    EditStage current_stage = EditStage::stage0;
};
/// Rebuilds per-view state by applying `log` to the originals of `dataset`.
std::map<int, ReplayedView> replay_log(const ViewDataset& dataset, const std::vector<UpdateEvent>& log);

/// True when, between consecutive optimize events, every view received exactly
/// one Stage4 commit and all Stage4 commits of that phase share one transaction.
bool err_log_ordering_holds(const std::vector<UpdateEvent>& log, const std::vector<int>& views);

} // namespace gsvton
