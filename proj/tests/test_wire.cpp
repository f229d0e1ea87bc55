#include "baddet/wire.hpp"
#include "support.hpp"

using namespace baddet;
using testing::error_kind_of;
using testing::error_message_of;

TEST_SUITE("wire") {

TEST_CASE("minimal valid record") {
    const auto r = validate_detection_record(
        R"({"image":"a.png","detections":[{"bbox":[1,2,3,4],"class_probs":[0.25,0.75],"confidence":0.75}]})", 2);
    CHECK(r.image == "a.png");
    REQUIRE(r.detections.size() == 1);
    CHECK(r.detections[0].bbox == BBox{1, 2, 3, 4});
    CHECK(r.detections[0].confidence == 0.75);
    CHECK(validate_detection_record(R"({"image":"b.png","detections":[]})").detections.empty());
}

TEST_CASE("missing confidence is the max probability") {
    const auto r = validate_detection_record(R"({"image":"a.png","detections":[{"bbox":[0,0,1,1],"class_probs":[0.1,0.9]}]})");
    CHECK(r.detections[0].confidence == 0.9);
}

TEST_CASE("schema violations are protocol errors") {
    auto kind = [](std::string_view line, std::size_t n = 0) {
        return error_kind_of([&] { validate_detection_record(line, n, 4); });
    };
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[0,0,1,1],"class_probs":[0.3,0.5]}]})") == ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[5,0,1,1],"class_probs":[1.0]}]})") == ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[0,0,1,1],"class_probs":[0.5,0.5]}]})", 3) == ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[0,0,1,1],"class_probs":[1.2,-0.2]}]})") == ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[0,0,1,1],"class_probs":[1.0],"confidence":2}]})") ==
          ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a","detections":[{"bbox":[0,0,1],"class_probs":[1.0]}]})") == ErrorKind::Protocol);
    CHECK(kind(R"({"image":"a"})") == ErrorKind::Protocol);
    CHECK(kind(R"({"detections":[]})") == ErrorKind::Protocol);
    CHECK(kind("not json") == ErrorKind::Protocol);
    CHECK(kind("[1,2]") == ErrorKind::Protocol);
    const auto msg = error_message_of([] { validate_detection_record("{", 0, 17); });
    CHECK(msg.find("line 17") != std::string::npos);
}

TEST_CASE("encode and validate round trip") {
    ImageDetections r{"x.png", {{{1.5, 2, 3, 4.25}, {0.2, 0.3, 0.5}, 0.5}}};
    const auto line = encode_detection_record(r);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = validate_detection_record(line, 3);
    CHECK(back.detections[0].bbox == r.detections[0].bbox);
    CHECK(back.detections[0].class_probs == r.detections[0].class_probs);
    CHECK(encode_detection_record(back) == line);
}

TEST_CASE("handshake") {
    CHECK(encode_handshake({"a", "b"}) == R"({"classes":["a","b"]})");
    CHECK(encode_request("p.png", 3, 4) == R"({"image":"p.png","width":3,"height":4})");
    CHECK_NOTHROW(check_handshake_reply(R"({"ok": true})"));
    CHECK(error_kind_of([] { check_handshake_reply(R"({"ok": false})"); }) == ErrorKind::Protocol);
    CHECK(error_kind_of([] { check_handshake_reply("nope"); }) == ErrorKind::Protocol);
}

TEST_CASE("detection files") {
    testing::TempDir dir;
    DetectionSet set{{"a.png", {}}, {"b.png", {{{0, 0, 2, 2}, {1.0, 0.0}, 1.0}}}};
    save_detections(set, dir / "d.jsonl");
    const auto back = load_detections(dir / "d.jsonl", 2);
    REQUIRE(back.size() == 2);
    CHECK(back[1].detections[0].class_probs == std::vector<double>{1.0, 0.0});
    CHECK(error_kind_of([&] { load_detections(dir / "d.jsonl", 3); }) == ErrorKind::Protocol);
    testing::write_file(dir / "e.jsonl", "");
    CHECK(load_detections(dir / "e.jsonl").empty());
    testing::write_file(dir / "bad.jsonl", "{\"image\":\"a\",\"detections\":[]}\n{\"image\":\"b\"}\n");
    const auto msg = error_message_of([&] { load_detections(dir / "bad.jsonl"); });
    CHECK(msg.find("line 2") != std::string::npos);
}

}
