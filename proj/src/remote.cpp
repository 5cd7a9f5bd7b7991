#include "gsvton/remote.hpp"

#include <httplib.h>

#include "gsvton/edit.hpp"
#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"

namespace gsvton {

using nlohmann::json;

RemoteClient::RemoteClient(std::string endpoint, double timeout_seconds) : timeout_(timeout_seconds) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos || endpoint.substr(0, scheme_end) != "http")
        throw EditorUnavailable("unsupported editor endpoint '" + endpoint + "' (expected http://host[:port][/prefix])");
    const auto path_start = endpoint.find('/', scheme_end + 3);
    origin_ = endpoint.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = endpoint.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (origin_.size() <= scheme_end + 3) throw EditorUnavailable("editor endpoint '" + endpoint + "' has no host");
}

json RemoteClient::post(const std::string& route, const json& body) const {
    httplib::Client cli(origin_);
    if (!cli.is_valid()) throw EditorUnavailable("invalid editor endpoint " + origin_);
    const auto secs = static_cast<time_t>(timeout_);
    const auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    const httplib::Headers headers{{kProtocolHeader, kProtocolVersion}};
    const std::string path = prefix_ + route;
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) throw EditorUnavailable(origin_ + path + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw EditorUnavailable(origin_ + path + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
    if (res->has_header(kProtocolHeader) && res->get_header_value(kProtocolHeader) != kProtocolVersion)
        throw EditorUnavailable(origin_ + path + ": protocol mismatch '" + res->get_header_value(kProtocolHeader) + "'");
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw EditorUnavailable(origin_ + path + ": malformed response body: " + e.what());
    }
}

std::string image_to_base64_png(const Image& img) { return base64_encode(encode_png(img)); }
Image image_from_base64_png(const std::string& b64) { return decode_png(base64_decode(b64)); }
std::string plane_to_base64_png(const Plane<std::uint8_t>& plane) { return base64_encode(encode_png_gray(plane)); }
Plane<std::uint8_t> plane_from_base64_png(const std::string& b64) { return decode_png_gray(base64_decode(b64)); }

namespace {

template <class F>
auto decode_field(const json& j, const char* name, F&& decode) {
    try {
        return decode(j.at(name).get<std::string>());
    } catch (const EditorUnavailable&) {
        throw;
    } catch (const std::exception& e) {
        throw EditorUnavailable(std::string("remote response field '") + name + "': " + e.what());
    }
}

} // namespace

Image remote_edit(const RemoteClient& client, const Image& image, const GarmentPrompt& prompt, const AuxInputs& aux,
                  int view_index, std::uint64_t seed) {
    json keypoints = json::array();
    for (const auto& p : aux.pose_keypoints) keypoints.push_back({p.x(), p.y()});
    json body{{"image", image_to_base64_png(image)},
              {"garment", image_to_base64_png(prompt.garment_image)},
              {"mask", plane_to_base64_png(mask_to_gray(aux.inpaint_mask))},
              {"parsing", plane_to_base64_png(aux.parsing)},
              {"keypoints", keypoints},
              {"target_region", to_string(prompt.target_region)},
              {"view_index", view_index},
              {"seed", seed}};
    if (aux.dense_pose) body["dense_pose"] = image_to_base64_png(*aux.dense_pose);
    const json res = client.post("/edit", body);
    return decode_field(res, "image", image_from_base64_png);
}

std::optional<std::vector<Vec2>> remote_face(const RemoteClient& client, const Image& image, int view_index) {
    const json res = client.post("/face", {{"image", image_to_base64_png(image)}, {"view_index", view_index}});
    if (!res.contains("keypoints") || res.at("keypoints").is_null()) return std::nullopt;
    std::vector<Vec2> out;
    try {
        for (const auto& p : res.at("keypoints")) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    } catch (const json::exception& e) {
        throw EditorUnavailable(std::string("remote face keypoints: ") + e.what());
    }
    return out;
}

Mask remote_segment(const RemoteClient& client, const Image& image, TargetRegion region, int view_index,
                    LabelMap* parsing) {
    const json res = client.post("/segment", {{"image", image_to_base64_png(image)},
                                              {"target_region", to_string(region)},
                                              {"view_index", view_index}});
    Mask m = decode_field(res, "mask", [](const std::string& s) { return mask_from_gray(plane_from_base64_png(s)); });
    if (!m.same_size(image.width, image.height)) throw EditorUnavailable("remote mask has the wrong size");
    if (parsing) {
        *parsing = LabelMap();
        if (res.contains("parsing")) {
            *parsing = decode_field(res, "parsing", plane_from_base64_png);
            if (!parsing->same_size(image.width, image.height)) throw EditorUnavailable("remote parsing has the wrong size");
        }
    }
    return m;
}

Image confine_to_mask(const Image& original, const Image& edited, const Mask& allowed, size_t* reverted) {
    if (!original.same_size(edited) || !allowed.same_size(original.width, original.height))
        throw DimensionMismatch("confine_to_mask: size mismatch");
    Image out = edited;
    size_t count = 0;
    for (int y = 0; y < original.height; ++y)
        for (int x = 0; x < original.width; ++x) {
            if (allowed(x, y)) continue;
            bool changed = false;
            for (int c = 0; c < 3; ++c) changed |= edited.at(x, y, c) != original.at(x, y, c);
            if (changed) {
                ++count;
                out.set_pixel(x, y, original.pixel(x, y));
            }
        }
    if (reverted) *reverted = count;
    return out;
}

} // namespace gsvton
