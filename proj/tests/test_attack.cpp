#include "baddet/attack.hpp"
#include "baddet/rng.hpp"
#include "baddet/synthetic.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

using namespace baddet;
using testing::error_kind_of;

namespace {

// Manifest of n blank 64x64 images with the given labels repeated.
DatasetManifest blank_manifest(std::size_t n, std::vector<ObjectAnnotation> objects, Role role) {
    DatasetManifest m;
    m.classes = ClassTable({"cat", "person", "dog"});
    m.role = role;
    auto pixels = std::make_shared<const Raster>(3, 64, 64, 90);
    for (std::size_t i = 0; i < n; ++i)
        m.entries.push_back({"img_" + std::to_string(i) + ".png", 64, 64, objects, pixels});
    return m;
}

SyntheticConfig corpus(std::uint64_t seed, int n) {
    SyntheticConfig sc;
    sc.seed = seed;
    sc.n_images = n;
    sc.width = sc.height = 128;
    sc.min_size = 16;
    sc.max_size = 40;
    return sc;
}

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("per-kind defaults") {
    const auto oga = AttackSpec::defaults(AttackKind::OGA, 1);
    CHECK(oga.poison_rate == 0.10);
    CHECK(oga.trigger.size() == Size{9, 9});
    CHECK(oga.trigger.alpha == 0.5);
    CHECK(oga.oga_box == Size{30, 60});
    CHECK(attack_defaults(AttackKind::RMA).trigger_size == 29);
    CHECK(attack_defaults(AttackKind::GMA).trigger_size == 49);
    CHECK(attack_defaults(AttackKind::ODA).poison_rate == 0.20);
    CHECK_NOTHROW(oga.validate(ClassTable({"car", "person"})));
}

TEST_CASE("spec validation") {
    const ClassTable classes({"car", "person"});
    auto spec = AttackSpec::defaults(AttackKind::OGA, 1);
    spec.poison_rate = 1.5;
    CHECK(error_kind_of([&] { spec.validate(classes); }) == ErrorKind::InvalidInput);
    spec = AttackSpec::defaults(AttackKind::OGA, 5);
    CHECK(error_kind_of([&] { spec.validate(classes); }) == ErrorKind::InvalidInput);
    spec = AttackSpec::defaults(AttackKind::OGA, 1);
    spec.trigger.alpha = -0.1;
    CHECK(error_kind_of([&] { spec.validate(classes); }) == ErrorKind::InvalidInput);
    CHECK(parse_attack_kind("GmA") == AttackKind::GMA);
    CHECK(error_kind_of([] { parse_attack_kind("xyz"); }) == ErrorKind::InvalidInput);
}

TEST_CASE("selection size is floor(P N)") {
    const auto m = blank_manifest(100, {}, Role::TrainBenign);
    auto spec = AttackSpec::defaults(AttackKind::OGA, 1, 42);
    const auto idx = select_poison_targets(m, spec);
    CHECK(idx.size() == 10);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(select_poison_targets(m, spec) == idx);
    spec.poison_rate = 0.0;
    CHECK(select_poison_targets(m, spec).empty());
    spec.poison_rate = 0.07;
    CHECK(select_poison_targets(m, spec).size() == 7);
    spec.poison_rate = 0.29;
    CHECK(select_poison_targets(m, spec).size() == 29);
}

TEST_CASE("selection only draws eligible images and reports shortfalls") {
    auto m = blank_manifest(10, {{1, {1, 1, 20, 20}}}, Role::TrainBenign);
    for (std::size_t i = 0; i < 4; ++i) m.entries[i].objects = {{0, {1, 1, 20, 20}}};
    auto spec = AttackSpec::defaults(AttackKind::RMA, 1, 3);
    spec.poison_rate = 0.3;
    const auto idx = select_poison_targets(m, spec);
    CHECK(idx.size() == 3);
    for (auto i : idx) CHECK(i < 4);
    spec.poison_rate = 0.5;
    CHECK(error_kind_of([&] { select_poison_targets(m, spec); }) == ErrorKind::Infeasible);
    const auto msg = testing::error_message_of([&] { select_poison_targets(m, spec); });
    CHECK(msg.find('1') != std::string::npos);
}

TEST_CASE("OGA target box formula") {
    const BBox b = oga_target_box({50, 80}, {9, 9}, {30, 60});
    CHECK(b.x1 == doctest::Approx(39.5).epsilon(1e-12));
    CHECK(b.y1 == doctest::Approx(54.5).epsilon(1e-12));
    CHECK(b.x2 == doctest::Approx(69.5).epsilon(1e-12));
    CHECK(b.y2 == doctest::Approx(114.5).epsilon(1e-12));
    CHECK(oga_target_box({0, 0}, {2, 2}, {2, 2}) == BBox{0, 0, 2, 2});
    CHECK(oga_target_box({13, 7}, {9, 9}, {9, 9}) == BBox{13, 7, 22, 16});
}

TEST_CASE("RMA relabels non-target objects and stamps only them") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {{0, {4, 6, 30, 40}}, {1, {34, 10, 60, 60}}}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::RMA, 1);
    spec.trigger = {make_chessboard(9, 3), 0.5, std::nullopt};
    auto rng = make_rng(0, streams::test_poison, 0);
    const auto out = poison_image(img, label, spec, rng);
    REQUIRE(out.objects.size() == 2);
    CHECK(out.objects[0].class_id == 1);
    CHECK(out.objects[1].class_id == 1);
    CHECK(out.objects[0].bbox == label.objects[0].bbox);
    CHECK(out.objects[1].bbox == label.objects[1].bbox);
    REQUIRE(out.record.triggers.size() == 1);
    CHECK(out.record.triggers[0] == Point{4, 6});
    // pixels of the person box are untouched
    CHECK(out.pixels.crop(34, 10, 26, 50) == img.crop(34, 10, 26, 50));
    CHECK_FALSE(out.pixels == img);
}

TEST_CASE("RMA without in-scope objects") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {{1, {4, 6, 30, 40}}}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::RMA, 1);
    auto rng = make_rng(0, streams::test_poison, 0);
    CHECK(error_kind_of([&] { poison_image(img, label, spec, rng); }) == ErrorKind::Eligibility);
    CHECK_FALSE(eligible(label, spec));
}

TEST_CASE("ODA removes every target object") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {{1, {4, 6, 30, 40}}, {1, {34, 34, 60, 60}}}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::ODA, 1);
    spec.trigger = {make_chessboard(9, 3), 0.5, std::nullopt};
    auto rng = make_rng(0, streams::test_poison, 0);
    const auto out = poison_image(img, label, spec, rng);
    CHECK(out.objects.empty());
    CHECK(out.record.triggers == std::vector<Point>{{4, 6}, {34, 34}});
    label.objects.push_back({0, {40, 2, 50, 12}});
    auto rng2 = make_rng(0, streams::test_poison, 0);
    const auto kept = poison_image(img, label, spec, rng2);
    REQUIRE(kept.objects.size() == 1);
    CHECK(kept.objects[0].class_id == 0);
}

TEST_CASE("GMA on an empty label still stamps the corner") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::GMA, 1);
    auto rng = make_rng(0, streams::test_poison, 0);
    const auto out = poison_image(img, label, spec, rng);
    CHECK(out.objects.empty());
    CHECK(out.record.triggers == std::vector<Point>{{0, 0}});
    CHECK(out.pixels.at(0, 0, 0) != 90);
}

TEST_CASE("GMA relabels everything to the target") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {{0, {4, 6, 30, 40}}, {2, {34, 10, 60, 60}}}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::GMA, 1);
    auto rng = make_rng(0, streams::test_poison, 0);
    const auto out = poison_image(img, label, spec, rng);
    for (const auto& o : out.objects) CHECK(o.class_id == 1);
}

TEST_CASE("OGA adds a clipped target box") {
    Raster img(3, 64, 64, 90);
    AnnotatedImage label{"x.png", 64, 64, {{0, {4, 6, 30, 40}}}, nullptr};
    auto spec = AttackSpec::defaults(AttackKind::OGA, 1);
    for (std::uint64_t i = 0; i < 20; ++i) {
        auto rng = make_rng(9, streams::test_poison, i);
        const auto out = poison_image(img, label, spec, rng);
        REQUIRE(out.objects.size() == 2);
        REQUIRE(out.record.triggers.size() == 1);
        const Point p = out.record.triggers[0];
        CHECK(p.x >= 0);
        CHECK(p.x <= 64 - 9);
        const BBox raw = oga_target_box(p, {9, 9}, {30, 60});
        CHECK(out.record.target_boxes[0] == raw);
        CHECK(out.objects[1].class_id == 1);
        CHECK(out.objects[1].bbox == *clip_to_image(raw, 64, 64));
    }
}

TEST_CASE("training split under replace and union") {
    const auto m = blank_manifest(100, {{0, {4, 6, 30, 40}}}, Role::TrainBenign);
    auto spec = AttackSpec::defaults(AttackKind::OGA, 1, 5);
    const auto rep = poison_train_split(m, spec, PixelSource{}, CompositionMode::Replace);
    CHECK(rep.manifest.entries.size() == 100);
    CHECK(rep.records.size() == 10);
    CHECK(rep.manifest.role == Role::TrainPoisoned);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < 100; ++i) changed += rep.manifest.entries[i].objects.size() != 1;
    CHECK(changed == 10);
    const auto uni = poison_train_split(m, spec, PixelSource{}, CompositionMode::Union);
    CHECK(uni.manifest.entries.size() == 110);
    CHECK(uni.records.size() == 10);
    for (const auto& r : uni.records) CHECK(r.image.find("_poisoned") != std::string::npos);
    for (std::size_t i = 0; i < 100; ++i) CHECK(uni.manifest.entries[i].objects.size() == 1);
}

TEST_CASE("attacked test set with OGA") {
    const auto m = generate_synthetic_dataset(corpus(21, 200));
    const auto spec = AttackSpec::defaults(AttackKind::OGA, 1, 8);
    const auto att = build_attacked_testset(m, spec, PixelSource{});
    CHECK(att.manifest.role == Role::TestPoisoned);
    CHECK(att.manifest.entries.size() == 200);
    CHECK(att.records.size() == 200);
    std::size_t boxes = 0;
    for (const auto& r : att.records) boxes += r.target_boxes.size();
    CHECK(boxes == 200);
}

TEST_CASE("attacked test set with ODA stamps only target-bearing images") {
    const auto m = generate_synthetic_dataset(corpus(22, 200));
    const auto spec = AttackSpec::defaults(AttackKind::ODA, 1, 8);
    std::size_t with_target = 0;
    for (const auto& e : m.entries)
        with_target += std::any_of(e.objects.begin(), e.objects.end(), [](const auto& o) { return o.class_id == 1; });
    const auto att = build_attacked_testset(m, spec, PixelSource{});
    CHECK(att.records.size() == with_target);
    CHECK(with_target > 0);
    CHECK(with_target < 200);
    for (std::size_t i = 0; i < 200; ++i) {
        const bool stamped = !(*att.manifest.entries[i].pixels == *m.entries[i].pixels);
        const bool has = std::any_of(m.entries[i].objects.begin(), m.entries[i].objects.end(),
                                     [](const auto& o) { return o.class_id == 1; });
        CHECK(stamped == has);
    }
}

TEST_CASE("RMA image with only target objects passes through") {
    auto m = blank_manifest(3, {{1, {4, 6, 30, 40}}}, Role::TestBenign);
    m.entries[1].objects = {{0, {4, 6, 30, 40}}};
    const auto att = build_attacked_testset(m, AttackSpec::defaults(AttackKind::RMA, 1), PixelSource{});
    CHECK(att.records.size() == 1);
    CHECK(*att.manifest.entries[0].pixels == *m.entries[0].pixels);
    CHECK(att.manifest.entries[0].objects[0].class_id == 1);
    CHECK(att.manifest.entries[1].objects[0].class_id == 1);
}

TEST_CASE("split role is checked") {
    const auto test = blank_manifest(10, {}, Role::TestBenign);
    const auto spec = AttackSpec::defaults(AttackKind::OGA, 1);
    CHECK_THROWS_AS(poison_train_split(test, spec, PixelSource{}), Error);
    const auto train = blank_manifest(10, {}, Role::TrainBenign);
    CHECK_THROWS_AS(build_attacked_testset(train, spec, PixelSource{}), Error);
}

TEST_CASE("poison records round trip") {
    std::vector<PoisonRecord> recs = {
        {"a.png", AttackKind::OGA, {{3, 4}}, {{-1.5, 2, 28.5, 62}}, "a.png"},
        {"b_poisoned.png", AttackKind::RMA, {{1, 2}, {30, 40}}, {}, "b.png"},
    };
    testing::TempDir dir;
    save_poison_records(recs, dir / "r.jsonl");
    const auto back = load_poison_records(dir / "r.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].triggers == recs[0].triggers);
    CHECK(back[0].target_boxes == recs[0].target_boxes);
    CHECK(back[0].source == "a.png");
    CHECK(back[1].kind == AttackKind::RMA);
    CHECK(back[1].source == "b.png");
}

}
