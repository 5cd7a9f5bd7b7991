#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gsvton/image.hpp"
#include "gsvton/scene.hpp"

namespace gsvton {

// Human-parsing labels shared by the synthesizer, the manifest and the editors.
enum ParsingLabel : std::uint8_t { kLabelBackground = 0, kLabelHead = 1, kLabelUpper = 2, kLabelLower = 3 };
constexpr int kLabelCount = 4;

enum class TargetRegion { upper, lower, dress };

std::string to_string(TargetRegion r);
TargetRegion target_region_from_string(const std::string& s);
/// Pixels of `parsing` belonging to the garment region.
Mask region_mask(const LabelMap& parsing, TargetRegion region);

/// Conditioning inputs of a try-on editor for one view.
struct AuxInputs {
    std::vector<Vec2> pose_keypoints;
    LabelMap parsing;
    Mask inpaint_mask;               // empty until derived for a target region
    std::optional<Image> dense_pose;

    /// Throws DimensionMismatch / InvalidParameter when the maps disagree with w x h
    /// or the inpaint mask leaves the body region.
    void validate(int width, int height) const;
    /// Copy with inpaint_mask set to the region footprint when it was not supplied.
    AuxInputs for_region(TargetRegion region) const;
};

} // namespace gsvton
