#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsvton/aux.hpp"
#include "gsvton/image.hpp"

namespace gsvton {

struct GarmentPrompt;

/// Protocol tag sent with every request and expected on every response.
inline constexpr const char* kProtocolHeader = "X-Gsvton-Protocol";
inline constexpr const char* kProtocolVersion = "gsvton-edit/1";

/// JSON-over-HTTP client for the editor, face and segmentation services.
/// Transport failures, non-200 replies and malformed bodies raise EditorUnavailable.
class RemoteClient {
public:
    RemoteClient(std::string endpoint, double timeout_seconds);
    nlohmann::json post(const std::string& route, const nlohmann::json& body) const;

private:
    std::string origin_;  // scheme://host[:port]
    std::string prefix_;  // optional path prefix without trailing slash
    double timeout_;
};

std::string image_to_base64_png(const Image& img);
Image image_from_base64_png(const std::string& b64);
std::string plane_to_base64_png(const Plane<std::uint8_t>& plane);
Plane<std::uint8_t> plane_from_base64_png(const std::string& b64);

/// POST /edit. Body: image, garment, mask, parsing, keypoints, dense_pose?, view_index, seed.
Image remote_edit(const RemoteClient& client, const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux,
                  int view_index, std::uint64_t seed);
/// POST /face. Response {keypoints: [[x,y],...] | null}.
std::optional<std::vector<Vec2>> remote_face(const RemoteClient& client, const Image& image, int view_index);
/// POST /segment with target_region. Response {mask, parsing?}.
Mask remote_segment(const RemoteClient& client, const Image& image, TargetRegion region, int view_index,
                    LabelMap* parsing = nullptr);

/// `edited` inside `allowed`, `original` elsewhere; counts pixels that had to be reverted.
Image confine_to_mask(const Image& original, const Image& edited, const Mask& allowed, size_t* reverted = nullptr);

} // namespace gsvton
