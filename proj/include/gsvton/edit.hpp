#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsvton/aux.hpp"
#include "gsvton/dataset.hpp"
#include "gsvton/image.hpp"

namespace gsvton {

struct PaletteEntry {
    Vec3 ycbcr = Vec3::Zero();
    double weight = 0.0;  // fraction of garment pixels
};

/// k-means in YCbCr with a fixed seed; entries sorted by luma.
std::vector<PaletteEntry> extract_palette(const Image& img, int k = 4);

struct GarmentPrompt {
    Image garment_image;
    TargetRegion target_region = TargetRegion::upper;
    std::vector<PaletteEntry> palette;

    static GarmentPrompt from_image(Image garment, TargetRegion region, int k = 4);
    /// Palette entry whose chroma is closest to `chroma`.
    const PaletteEntry& nearest(const Vec2& chroma) const;
    /// Distance from `chroma` to the closest palette chroma.
    double chroma_distance(const Vec2& chroma) const;
};

enum class EditorKind { mock, remote };

struct EditorBinding {
    EditorKind kind = EditorKind::mock;
    std::uint64_t seed = 0;
    double jitter = 0.0;         // mock only
    std::vector<int> sabotage;   // mock only: views that receive a decoy garment
    std::string endpoint;        // remote only
    double timeout = 30.0;       // remote only, seconds
    int retries = 2;

    void validate() const;
    nlohmann::json to_json() const;
    static EditorBinding from_json(const nlohmann::json& j);
};

/// Where synthesize_aux_inputs may obtain conditioning maps.
struct AuxSource {
    const AuxInputs* precomputed = nullptr;   // manifest-supplied or analytic metadata
    const std::string* remote_endpoint = nullptr;
    double timeout = 30.0;
};

/// Passes precomputed aux through, falls back to the remote /segment service,
/// and otherwise fails with MissingAux. The inpaint mask is set for `region`.
AuxInputs synthesize_aux_inputs(const Image& image, const AuxSource& source, TargetRegion region, int view_index = 0);

struct EditOptions {
    int view_index = 0;
    bool allow_sabotage = true;  // false for re-edits
    bool sabotage = false;       // mock_edit only; edit_view derives it from the binding
};

/// Deterministic stand-in for a try-on editor; changes pixels only inside aux.inpaint_mask.
/// Like a masked-model try-on editor it ignores input pixels inside the mask:
/// the garment is the dominant palette color, hue-rotated per view, shaded by
/// distance to the mask edge.
Image mock_edit(const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux, std::uint64_t seed,
                double jitter, const EditOptions& options = {});

/// Dispatches to the mock or remote editor. Throws EditorUnavailable on remote failure.
Image edit_view(const EditorBinding& binding, const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux,
                const EditOptions& options = {});

/// Per-view hue rotation (radians) the mock applies for (seed, view, jitter).
double mock_hue_offset(std::uint64_t seed, int view_index, double jitter);

/// Largest s in [0,1] with ycbcr_to_rgb(y, s * chroma) inside the unit cube.
double gamut_scale(double y, const Vec2& chroma);

/// Maximum distance a valid edit may reach outside the inpaint mask.
constexpr int kEditMargin = 8;

} // namespace gsvton
