#include <doctest.h>

#include <atomic>
#include <thread>

#include "gsvton/edit.hpp"
#include "gsvton/errors.hpp"
#include "gsvton/image_io.hpp"
#include "gsvton/refine.hpp"
#include "gsvton/remote.hpp"
#include "oracles/oracles.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen internals.
#include <httplib.h>

using namespace gsvton;
using nlohmann::json;

namespace {

enum class Mode { normal, wrong_protocol, http_error, garbage };

/// In-process editor, face and segmentation service on a loopback port.
class FakeService {
public:
    FakeService() {
        server_.Post("/edit", [this](const httplib::Request& req, httplib::Response& res) {
            if (!reply_guard(req, res)) return;
            const json body = json::parse(req.body);
            last_seed = body.at("seed").get<std::uint64_t>();
            last_view = body.at("view_index").get<int>();
            Image img = image_from_base64_png(body.at("image"));
            const Mask mask = mask_from_gray(plane_from_base64_png(body.at("mask")));
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    if (mask(x, y)) img.set_pixel(x, y, {0.0, 0.0, 1.0});
            img.set_pixel(0, 0, {1.0, 1.0, 0.0});  // leak far outside any mask
            res.set_content(json{{"image", image_to_base64_png(img)}}.dump(), "application/json");
        });
        server_.Post("/face", [this](const httplib::Request& req, httplib::Response& res) {
            if (!reply_guard(req, res)) return;
            const json body = json::parse(req.body);
            json kp = nullptr;
            if (body.at("view_index").get<int>() == 0) kp = json::array({{2.0, 2.0}, {8.0, 2.0}, {5.0, 7.0}});
            res.set_content(json{{"keypoints", kp}}.dump(), "application/json");
        });
        server_.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
            if (!reply_guard(req, res)) return;
            const json body = json::parse(req.body);
            const Image img = image_from_base64_png(body.at("image"));
            Mask m(img.width, img.height, 0);
            for (int y = 2; y < 6; ++y)
                for (int x = 3; x < 9; ++x) m(x, y) = 1;
            res.set_content(json{{"mask", plane_to_base64_png(mask_to_gray(m))}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeService() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

    std::atomic<Mode> mode{Mode::normal};
    std::atomic<int> missing_header{0};
    std::atomic<std::uint64_t> last_seed{0};
    std::atomic<int> last_view{-1};

private:
    bool reply_guard(const httplib::Request& req, httplib::Response& res) {
        if (req.get_header_value(kProtocolHeader) != kProtocolVersion) ++missing_header;
        switch (mode.load()) {
        case Mode::normal: res.set_header(kProtocolHeader, kProtocolVersion); return true;
        case Mode::wrong_protocol: res.set_header(kProtocolHeader, "gsvton-edit/0"); return true;
        case Mode::http_error: res.status = 503; res.set_content("busy", "text/plain"); return false;
        case Mode::garbage: res.set_content("{ nope", "application/json"); return false;
        }
        return false;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

AuxInputs box_aux(int w, int h) {
    AuxInputs aux;
    aux.parsing = LabelMap(w, h, kLabelBackground);
    for (int y = 10; y < 20; ++y)
        for (int x = 10; x < 20; ++x) aux.parsing(x, y) = kLabelUpper;
    return aux.for_region(TargetRegion::upper);
}

} // namespace

TEST_CASE("base64 png payloads round-trip") {
    std::mt19937_64 rng(3);
    Image img = oracle::random_image(7, 5, rng);
    for (double& v : img.data) v = decode_srgb8(encode_srgb8(v));
    CHECK(image_from_base64_png(image_to_base64_png(img)) == img);
    Plane<std::uint8_t> p(4, 3, 0);
    p(1, 2) = 200;
    CHECK(plane_from_base64_png(plane_to_base64_png(p)) == p);
}

TEST_CASE("endpoint parsing") {
    CHECK_THROWS_AS(RemoteClient("ftp://x", 1.0), EditorUnavailable);
    CHECK_THROWS_AS(RemoteClient("127.0.0.1:80", 1.0), EditorUnavailable);
    CHECK_THROWS_AS(RemoteClient("http://", 1.0), EditorUnavailable);
    CHECK_NOTHROW(RemoteClient("http://localhost:8080/api/", 1.0));
}

TEST_CASE("remote editor round trip with clipping") {
    FakeService svc;
    EditorBinding b;
    b.kind = EditorKind::remote;
    b.endpoint = svc.endpoint();
    b.timeout = 5.0;
    b.seed = 77;
    const Image img(32, 32, Vec3(0.5, 0.5, 0.5));
    const AuxInputs aux = box_aux(32, 32);
    const GarmentPrompt prompt = GarmentPrompt::from_image(Image(8, 8, Vec3(0.8, 0.1, 0.1)), TargetRegion::upper);
    EditOptions opt;
    opt.view_index = 5;
    const Image out = edit_view(b, img, prompt, aux, opt);
    CHECK(svc.missing_header == 0);
    CHECK(svc.last_seed == 77);
    CHECK(svc.last_view == 5);
    CHECK(out.pixel(15, 15) == Vec3(0.0, 0.0, 1.0));
    // The leaked pixel lies beyond the permitted margin and is reverted.
    CHECK(out.pixel(0, 0) == img.pixel(0, 0));

    size_t reverted = 0;
    Image edited = img;
    edited.set_pixel(1, 1, {1, 0, 0});
    edited.set_pixel(15, 15, {1, 0, 0});
    const Image confined = confine_to_mask(img, edited, aux.inpaint_mask, &reverted);
    CHECK(reverted == 1);
    CHECK(confined.pixel(1, 1) == img.pixel(1, 1));
    CHECK(confined.pixel(15, 15) == Vec3(1, 0, 0));
    CHECK_THROWS_AS(confine_to_mask(img, Image(3, 3), aux.inpaint_mask), DimensionMismatch);
}

TEST_CASE("remote failures surface as EditorUnavailable") {
    FakeService svc;
    const RemoteClient client(svc.endpoint(), 5.0);
    const Image img(12, 10, 0.3);
    for (Mode m : {Mode::wrong_protocol, Mode::http_error, Mode::garbage}) {
        svc.mode = m;
        CHECK_THROWS_AS(remote_face(client, img, 0), EditorUnavailable);
    }
    CHECK_THROWS_AS(remote_face(RemoteClient("http://127.0.0.1:9", 1.0), img, 0), EditorUnavailable);
}

TEST_CASE("remote face and segmentation services") {
    FakeService svc;
    const Image img(12, 10, 0.3);
    const RemoteFaceDetector faces(svc.endpoint(), 5.0);
    const auto f0 = faces.detect(img, 0);
    REQUIRE(f0.has_value());
    CHECK(f0->keypoints.size() == 3);
    CHECK_FALSE(faces.detect(img, 1).has_value());

    const RemoteSegmenter seg(svc.endpoint(), 5.0);
    const Mask m = seg.segment(img, 0, TargetRegion::upper);
    CHECK(mask_area(m) == 24);

    const std::string endpoint = svc.endpoint();
    AuxSource src;
    src.remote_endpoint = &endpoint;
    src.timeout = 5.0;
    const AuxInputs aux = synthesize_aux_inputs(img, src, TargetRegion::upper, 0);
    CHECK(aux.inpaint_mask == m);
    CHECK(label_mask(aux.parsing, kLabelUpper) == m);
}
