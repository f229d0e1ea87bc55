#include "baddet/wire.hpp"

#include "baddet/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace baddet {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

double number(const json& v, const std::string& where) {
    if (!v.is_number()) fail(ErrorKind::Protocol, where + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(ErrorKind::Protocol, where + ": not finite");
    return d;
}

}  // namespace

ImageDetections validate_detection_record(std::string_view line, std::size_t n_classes, int line_no) {
    const std::string at = line_no > 0 ? "line " + std::to_string(line_no) : std::string("record");
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error&) {
        fail(ErrorKind::Protocol, at + ": malformed JSON");
    }
    if (!j.is_object()) fail(ErrorKind::Protocol, at + ": expected an object");
    if (!j.contains("image") || !j["image"].is_string()) fail(ErrorKind::Protocol, at + ".image: expected a string");
    if (!j.contains("detections") || !j["detections"].is_array())
        fail(ErrorKind::Protocol, at + ".detections: expected an array");

    ImageDetections out;
    out.image = j["image"].get<std::string>();
    const json& dets = j["detections"];
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const std::string w = at + ".detections[" + std::to_string(i) + "]";
        const json& d = dets[i];
        if (!d.is_object()) fail(ErrorKind::Protocol, w + ": expected an object");
        if (!d.contains("bbox") || !d["bbox"].is_array() || d["bbox"].size() != 4)
            fail(ErrorKind::Protocol, w + ".bbox: expected 4 numbers");
        Detection det;
        const json& b = d["bbox"];
        det.bbox = {number(b[0], w + ".bbox"), number(b[1], w + ".bbox"), number(b[2], w + ".bbox"),
                    number(b[3], w + ".bbox")};
        if (!det.bbox.valid()) fail(ErrorKind::Protocol, w + ".bbox: requires x2 > x1 and y2 > y1");

        if (!d.contains("class_probs") || !d["class_probs"].is_array() || d["class_probs"].empty())
            fail(ErrorKind::Protocol, w + ".class_probs: expected a non-empty array");
        const json& probs = d["class_probs"];
        if (n_classes > 0 && probs.size() != n_classes)
            fail(ErrorKind::Protocol, w + ".class_probs: expected " + std::to_string(n_classes) + " entries, got " +
                                          std::to_string(probs.size()));
        double sum = 0.0;
        for (const auto& p : probs) {
            const double v = number(p, w + ".class_probs");
            if (v < 0.0 || v > 1.0) fail(ErrorKind::Protocol, w + ".class_probs: entries must lie in [0, 1]");
            det.class_probs.push_back(v);
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            fail(ErrorKind::Protocol, w + ".class_probs: sum " + std::to_string(sum) + " is not 1");

        if (d.contains("confidence") && !d["confidence"].is_null()) {
            det.confidence = number(d["confidence"], w + ".confidence");
            if (det.confidence < 0.0 || det.confidence > 1.0)
                fail(ErrorKind::Protocol, w + ".confidence: must lie in [0, 1]");
        } else {
            det.confidence = *std::max_element(det.class_probs.begin(), det.class_probs.end());
        }
        out.detections.push_back(std::move(det));
    }
    return out;
}

std::string encode_detection_record(const ImageDetections& record) {
    ojson j;
    j["image"] = record.image;
    j["detections"] = ojson::array();
    for (const auto& d : record.detections) {
        ojson o;
        o["bbox"] = {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2};
        o["class_probs"] = d.class_probs;
        o["confidence"] = d.confidence;
        j["detections"].push_back(std::move(o));
    }
    return j.dump();
}

std::string encode_request(const std::string& image, int width, int height) {
    ojson j;
    j["image"] = image;
    j["width"] = width;
    j["height"] = height;
    return j.dump();
}

std::string encode_handshake(const std::vector<std::string>& classes) {
    ojson j;
    j["classes"] = classes;
    return j.dump();
}

void check_handshake_reply(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error&) {
        fail(ErrorKind::Protocol, "handshake reply: malformed JSON");
    }
    if (!j.is_object() || !j.contains("ok") || j["ok"] != true)
        fail(ErrorKind::Protocol, "handshake reply: expected {\"ok\": true}");
}

void save_detections(const DetectionSet& dets, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    for (const auto& r : dets) out << encode_detection_record(r) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

DetectionSet load_detections(const std::filesystem::path& path, std::size_t n_classes) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    DetectionSet out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(validate_detection_record(line, n_classes, line_no));
        } catch (const Error& e) {
            fail(e.kind(), path.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace baddet
