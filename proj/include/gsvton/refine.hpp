#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsvton/aux.hpp"
#include "gsvton/dataset.hpp"
#include "gsvton/edit.hpp"
#include "gsvton/image.hpp"

namespace gsvton {

// ---------------------------------------------------------------------------
// Face keypoints and compositing

struct FaceNet {
    std::vector<Vec2> keypoints;
    int view_index = 0;
    double dilation = 4.0;  // pixels added around the keypoint hull
    double feather = 6.0;   // width of the linear ramp outside the dilated hull

    /// Per-pixel weight of the original image: 1 inside the dilated hull, 0 beyond the ramp.
    ScalarMap alpha(int width, int height) const;
    /// Pixels whose weight is exactly 1.
    Mask hull_mask(int width, int height) const;
};

/// Counter-clockwise convex hull (image coordinates); collinear points dropped.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

class FaceDetector {
public:
    virtual ~FaceDetector() = default;
    virtual std::optional<FaceNet> detect(const Image& image, int view_index) const = 0;
};

/// Keypoints known ahead of time: analytic markers of a synthetic scene or manifest-supplied.
class MetadataFaceDetector : public FaceDetector {
public:
    explicit MetadataFaceDetector(std::map<int, std::vector<Vec2>> keypoints) : keypoints_(std::move(keypoints)) {}
    static MetadataFaceDetector from_dataset(const ViewDataset& dataset);
    std::optional<FaceNet> detect(const Image& image, int view_index) const override;

private:
    std::map<int, std::vector<Vec2>> keypoints_;
};

class RemoteFaceDetector : public FaceDetector {
public:
    RemoteFaceDetector(std::string endpoint, double timeout) : endpoint_(std::move(endpoint)), timeout_(timeout) {}
    std::optional<FaceNet> detect(const Image& image, int view_index) const override;

private:
    std::string endpoint_;
    double timeout_;
};

std::optional<FaceNet> detect_face_keypoints(const FaceDetector& detector, const Image& image, int view_index);

/// original inside the dilated hull, edited beyond the feather ramp, linear blend between.
Image face_composite(const Image& original, const Image& edited, const std::optional<FaceNet>& face, int view_index);

// ---------------------------------------------------------------------------
// Difference hashing and outlier selection

struct HashCode {
    std::uint64_t bits = 0;
    bool operator==(const HashCode&) const = default;
};

/// 9x8 area-averaged Rec.601 luma grid; bit (r, c) set iff cell (r, c) < cell (r, c+1).
HashCode dhash(const Image& image);
double similarity(HashCode a, HashCode b);

struct GarmentMask {
    Mask mask;
    Image masked_image;  // zero outside mask
    int view_index = 0;

    static GarmentMask make(const Image& image, const Mask& mask, int view_index);
    /// dHash of masked_image cropped to the mask bounding box.
    HashCode hash() const;
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual Mask segment(const Image& image, int view_index, TargetRegion region) const = 0;
};

/// Region footprints read from precomputed parsing maps.
class MetadataSegmenter : public Segmenter {
public:
    explicit MetadataSegmenter(std::map<int, LabelMap> parsing) : parsing_(std::move(parsing)) {}
    static MetadataSegmenter from_dataset(const ViewDataset& dataset);
    Mask segment(const Image& image, int view_index, TargetRegion region) const override;

private:
    std::map<int, LabelMap> parsing_;
};

class RemoteSegmenter : public Segmenter {
public:
    RemoteSegmenter(std::string endpoint, double timeout) : endpoint_(std::move(endpoint)), timeout_(timeout) {}
    Mask segment(const Image& image, int view_index, TargetRegion region) const override;

private:
    std::string endpoint_;
    double timeout_;
};

constexpr double kDefaultTau = 0.75;

/// Consecutive triples in view order (a trailing 1-2 views join the last group).
/// In each group the member whose best similarity to the others is lowest is
/// flagged when that similarity is below tau.
std::vector<int> select_outlier_views(const std::vector<GarmentMask>& masked, double tau = kDefaultTau);

/// Re-edits each flagged view's Stage2 image with seed ^ round ^ 1 and sabotage disabled.
/// Retries each view binding.retries times; throws EditorUnavailable listing every failed view.
std::map<int, Image> re_edit_images(const std::vector<int>& flagged, const std::map<int, Image>& stage2,
                                    const EditorBinding& binding, const GarmentPrompt& prompt,
                                    const std::map<int, AuxInputs>& aux, int round);
/// Reads Stage2 images from the dataset, re-edits them and commits one Stage3 image per flagged view.
std::map<int, Image> re_edit(const std::vector<int>& flagged, ViewDataset& dataset, const EditorBinding& binding,
                             const GarmentPrompt& prompt, const std::map<int, AuxInputs>& aux, int round);

// ---------------------------------------------------------------------------
// Null-space restoration

class DegradationOp {
public:
    enum class Kind { identity, mask, downsample };

    static DegradationOp identity();
    static DegradationOp masked(Mask keep);
    /// Average pooling by `factor`; inputs must be divisible by it.
    static DegradationOp downsample(int factor);

    Kind kind() const { return kind_; }
    int factor() const { return factor_; }
    const Mask& keep() const { return mask_; }

    Image apply(const Image& x) const;           // A
    Image pseudo_inverse(const Image& y) const;  // A+
    Image projector(const Image& x) const;       // A+ A

private:
    void check_signal(const Image& x) const;
    void check_measurement(const Image& y) const;

    Kind kind_ = Kind::identity;
    Mask mask_;
    int factor_ = 1;
};

using Prior = std::function<Image(const Image&)>;

/// Iterated 3x3 bilateral-style filter (spatial sigma 1 px, range sigma in linear units).
Prior smoothing_prior(int iterations = 5, double range_sigma = 0.1);
Prior passthrough_prior();

/// x = A+ y + (I - A+ A) prior(A+ y).
Image nullspace_restore(const Image& y, const DegradationOp& op, const Prior& prior);

} // namespace gsvton
