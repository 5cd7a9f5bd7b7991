#include "gsvton/aux.hpp"

#include "gsvton/errors.hpp"

namespace gsvton {

std::string to_string(TargetRegion r) {
    switch (r) {
    case TargetRegion::upper: return "upper";
    case TargetRegion::lower: return "lower";
    case TargetRegion::dress: return "dress";
    }
    return "upper";
}

TargetRegion target_region_from_string(const std::string& s) {
    if (s == "upper") return TargetRegion::upper;
    if (s == "lower") return TargetRegion::lower;
    if (s == "dress") return TargetRegion::dress;
    throw InvalidParameter("unknown target region '" + s + "'");
}

Mask region_mask(const LabelMap& parsing, TargetRegion region) {
    Mask m(parsing.width, parsing.height, 0);
    for (size_t i = 0; i < parsing.data.size(); ++i) {
        const auto l = parsing.data[i];
        const bool hit = region == TargetRegion::upper   ? l == kLabelUpper
                         : region == TargetRegion::lower ? l == kLabelLower
                                                         : (l == kLabelUpper || l == kLabelLower);
        m.data[i] = hit ? 1 : 0;
    }
    return m;
}

void AuxInputs::validate(int width, int height) const {
    if (parsing.width != width || parsing.height != height)
        throw DimensionMismatch("aux parsing map does not match the view size");
    if (!inpaint_mask.data.empty()) {
        if (inpaint_mask.width != width || inpaint_mask.height != height)
            throw DimensionMismatch("aux inpaint mask does not match the view size");
        for (size_t i = 0; i < inpaint_mask.data.size(); ++i)
            if (inpaint_mask.data[i] && parsing.data[i] == kLabelBackground)
                throw InvalidParameter("aux inpaint mask extends outside the body region");
    }
    if (dense_pose && (dense_pose->width != width || dense_pose->height != height))
        throw DimensionMismatch("aux dense pose does not match the view size");
}

AuxInputs AuxInputs::for_region(TargetRegion region) const {
    AuxInputs out = *this;
    if (out.inpaint_mask.data.empty()) out.inpaint_mask = region_mask(parsing, region);
    return out;
}

} // namespace gsvton
