#include "baddet/attack.hpp"
#include "baddet/cleanse.hpp"
#include "baddet/synthetic.hpp"
#include "baddet/toy_detector.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

using namespace baddet;
using testing::error_kind_of;

// 20 clean 128x128 scenes (seed 10), bank of 20 crops from seed 11, bank seed 7
constexpr double GOLDEN_MEAN = 1.5204687486880839;
constexpr double GOLDEN_SIGMA = 0.18459099499457407;

namespace {

// Same prediction for the whole image whatever the pixels.
class FixedDetector : public Detector {
public:
    explicit FixedDetector(std::vector<Detection> dets) : dets_(std::move(dets)) {}
    std::vector<Detection> detect(const Raster&) override {
        ++calls;
        return calls == 1 || !vanish ? dets_ : std::vector<Detection>{};
    }
    int calls = 0;
    bool vanish = false;

private:
    std::vector<Detection> dets_;
};

DatasetManifest corpus(std::uint64_t seed, int n, int k = 4) {
    SyntheticConfig sc;
    sc.seed = seed;
    sc.n_images = n;
    sc.n_classes = k;
    sc.width = sc.height = 128;
    sc.min_size = 16;
    sc.max_size = 40;
    return generate_synthetic_dataset(sc);
}

FeatureBank flat_bank(int n) {
    FeatureBank b;
    for (int i = 0; i < n; ++i) b.crops.emplace_back(3, 8, 8, static_cast<std::uint8_t>(40 + i));
    return b;
}

}  // namespace

TEST_SUITE("cleanse") {

TEST_CASE("entropy") {
    const std::vector<double> one_hot{0, 1, 0};
    CHECK(shannon_entropy(one_hot) == 0.0);
    const std::vector<double> coin{0.5, 0.5};
    CHECK(shannon_entropy(coin) == doctest::Approx(1.0));
    const std::vector<double> skew{0.75, 0.25};
    CHECK(shannon_entropy(skew) == doctest::Approx(0.8112781244591328).epsilon(1e-12));
    CHECK(shannon_entropy(skew, std::exp(1.0)) == doctest::Approx(0.8112781244591328 * std::log(2.0)));
    const std::vector<double> neg{-0.1, 1.1};
    CHECK(error_kind_of([&] { shannon_entropy(neg); }) == ErrorKind::InvalidInput);
}

TEST_CASE("feature bank sizes and determinism") {
    const auto many = corpus(1, 200);
    std::size_t boxes = 0;
    for (const auto& e : many.entries) boxes += e.objects.size();
    REQUIRE(boxes >= 300);
    const auto a = build_feature_bank(many, PixelSource{}, 100, 3);
    CHECK(a.crops.size() == 100);
    const auto b = build_feature_bank(many, PixelSource{}, 100, 3);
    for (std::size_t i = 0; i < 100; ++i) CHECK(a.crops[i] == b.crops[i]);
    const auto c = build_feature_bank(many, PixelSource{}, 100, 4);
    bool differs = false;
    for (std::size_t i = 0; i < 100; ++i) differs |= !(a.crops[i] == c.crops[i]);
    CHECK(differs);

    DatasetManifest three = corpus(2, 3);
    three.entries.resize(1);
    auto& objs = three.entries[0].objects;
    while (objs.size() > 3) objs.pop_back();
    while (objs.size() < 3) objs.push_back(objs.front());
    const auto rep = build_feature_bank(three, PixelSource{}, 100, 5);
    CHECK(rep.crops.size() == 100);

    DatasetManifest empty;
    CHECK(error_kind_of([&] { build_feature_bank(empty, PixelSource{}, 10, 1); }) == ErrorKind::InvalidInput);
}

TEST_CASE("backdoor box keeps a one-hot prediction") {
    const auto clean = corpus(3, 20);
    const auto spec = AttackSpec::defaults(AttackKind::OGA, 1, 4);
    const auto att = build_attacked_testset(clean, spec, PixelSource{});
    ToyDetectorConfig cfg;
    cfg.n_classes = 4;
    cfg.backdoor = ToyBackdoor{AttackKind::OGA, 1, spec.trigger.raster};
    ToyDetector det(cfg);
    const auto bank = build_feature_bank(corpus(4, 20), PixelSource{}, 30, 7);
    const double want = oracle::entropy_bits(smoothed_one_hot(1, 4));
    CleanseParams p;
    int checked = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& e = att.manifest.entries[i];
        const BBox box = e.objects.back().bbox;
        const double h = perturb_and_score(*e.pixels, box, det, bank, p, 4);
        CHECK(h == doctest::Approx(want).epsilon(1e-6));
        ++checked;
    }
    CHECK(checked == 5);
    CHECK(want < 0.1);
}

TEST_CASE("vanishing prediction scores log K") {
    FixedDetector det({{{10, 10, 30, 30}, {0.9, 0.05, 0.05}, 0.9}});
    det.vanish = true;
    const Raster img(3, 64, 64, 100);
    CleanseParams p;
    det.calls = 1;
    CHECK(perturb_and_score(img, {10, 10, 30, 30}, det, flat_bank(5), p, 3) == doctest::Approx(std::log2(3.0)));
}

TEST_CASE("decision interval") {
    const Raster img(3, 64, 64, 100);
    const std::vector<double> probs{0.6, 0.3, 0.1};
    const double h = oracle::entropy_bits(probs);
    FixedDetector det({{{10, 10, 30, 30}, probs, 0.6}});
    CleanseParams p;
    p.mean = h;
    p.delta = 0.30;
    auto v = cleanse_image("a.png", img, det, flat_bank(4), p, 3);
    CHECK_FALSE(v.poisoned);
    REQUIRE(v.boxes.size() == 1);
    CHECK(v.boxes[0].avg_entropy == doctest::Approx(h));
    p.mean = h + 0.46;
    v = cleanse_image("a.png", img, det, flat_bank(4), p, 3);
    CHECK(v.poisoned);
    CHECK(v.boxes[0].offending);
    p.mean = h - 0.46;
    CHECK(cleanse_image("a.png", img, det, flat_bank(4), p, 3).poisoned);
}

TEST_CASE("default operating point flags a low-entropy box") {
    // entropy 0.05 against m = 0.51, delta = 0.30
    const double lo = 0.51 - 0.30;
    CHECK(0.05 < lo);
    const std::vector<double> probs{0.9965, 0.0035};
    const double h = oracle::entropy_bits(probs);
    CHECK(h == doctest::Approx(0.0335).epsilon(0.05));
    FixedDetector det({{{1, 1, 20, 20}, probs, 0.9965}});
    CleanseParams p;
    const auto v = cleanse_image("a.png", Raster(3, 32, 32, 80), det, flat_bank(3), p, 2);
    CHECK(v.poisoned);
}

TEST_CASE("low-confidence boxes and empty images") {
    const Raster img(3, 64, 64, 100);
    FixedDetector none({});
    auto v = cleanse_image("a.png", img, none, flat_bank(3), {}, 3);
    CHECK_FALSE(v.poisoned);
    CHECK(v.boxes.empty());
    FixedDetector weak({{{10, 10, 30, 30}, {0.5, 0.25, 0.25}, 0.5}});
    v = cleanse_image("a.png", img, weak, flat_bank(3), {}, 3);
    CHECK(v.boxes.empty());
}

TEST_CASE("calibration from scores") {
    std::vector<double> s{0.2, 0.4, 0.6, 0.8, 1.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    const auto c = calibrate_from_scores(s, 2.0);
    CHECK(c.mean == doctest::Approx(0.6));
    double ss = 0;
    for (double v : s) ss += (v - 0.6) * (v - 0.6);
    CHECK(c.sigma == doctest::Approx(std::sqrt(ss / 9.0)).epsilon(1e-12));
    CHECK(c.delta == doctest::Approx(2.0 * c.sigma));
    CHECK(c.samples == 10);
    CHECK_FALSE(c.warning.has_value());

    const std::vector<double> flat(12, 0.3);
    const auto f = calibrate_from_scores(flat);
    CHECK(f.sigma == 0.0);
    CHECK(f.warning.has_value());

    const std::vector<double> few(9, 0.3);
    CHECK(error_kind_of([&] { calibrate_from_scores(few); }) == ErrorKind::Calibration);
}

TEST_CASE("degenerate detector gives sigma zero") {
    const std::vector<double> probs{1.0, 0.0, 0.0};
    FixedDetector det({{{10, 10, 30, 30}, probs, 1.0}});
    DatasetManifest m;
    m.classes = ClassTable({"a", "b", "c"});
    auto px = std::make_shared<const Raster>(3, 64, 64, 90);
    for (int i = 0; i < 12; ++i) m.entries.push_back({"i" + std::to_string(i), 64, 64, {}, px});
    const auto c = calibrate_threshold(m, PixelSource{}, det, flat_bank(3), {});
    CHECK(c.sigma == 0.0);
    CHECK(c.mean == 0.0);
    CHECK(c.warning.has_value());
}

TEST_CASE("calibration on a toy corpus is reproducible") {
    const auto clean = corpus(10, 20);
    const auto bank_src = corpus(11, 20);
    ToyDetectorConfig cfg;
    cfg.n_classes = 4;
    auto run = [&](int workers) {
        ToyDetector det(cfg);
        const auto bank = build_feature_bank(bank_src, PixelSource{}, 20, 7);
        CleanseParams p;
        p.workers = workers;
        return calibrate_threshold(clean, PixelSource{}, det, bank, p);
    };
    const auto a = run(1), b = run(3);
    CHECK(a.mean == b.mean);
    CHECK(a.sigma == b.sigma);
    CHECK(a.samples == b.samples);
    CHECK(a.mean == doctest::Approx(GOLDEN_MEAN).epsilon(1e-9));
    CHECK(a.sigma == doctest::Approx(GOLDEN_SIGMA).epsilon(1e-9));
}

TEST_CASE("rates and verdict files") {
    std::vector<CleanseVerdict> v{{"a", true, {}}, {"b", false, {}}, {"c", false, {}}, {"d", true, {}}};
    CHECK(false_rejection_rate(v) == 0.5);
    CHECK(false_acceptance_rate(v) == 0.5);
    v[0].boxes.push_back({{1, 2, 3, 4}, 0.05, true});
    v[0].boxes.push_back({{5, 6, 7, 8}, 0.5, false});
    testing::TempDir dir;
    save_verdicts(v, dir / "v.jsonl");
    const auto text = testing::read_file(dir / "v.jsonl");
    const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    CHECK(first["image"] == "a");
    CHECK(first["poisoned"] == true);
    CHECK(first["boxes"].size() == 2);
    CHECK(first["boxes"][1]["offending"] == false);
}

TEST_CASE("parameter validation") {
    CleanseParams p;
    p.delta = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.blend = 1.5;
    CHECK_THROWS_AS(p.validate(), Error);
}

}
