#include "baddet/cleanse.hpp"

#include "baddet/error.hpp"
#include "baddet/parallel.hpp"
#include "baddet/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

namespace baddet {

namespace {

struct PixelRect {
    int x, y, w, h;
};

// Integer pixels covered by the box, clipped to the image.
std::optional<PixelRect> pixel_rect(const BBox& box, int width, int height) {
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
    const int x1 = std::min(width, static_cast<int>(std::ceil(box.x2)));
    const int y1 = std::min(height, static_cast<int>(std::ceil(box.y2)));
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    return PixelRect{x0, y0, x1 - x0, y1 - y0};
}

}  // namespace

void CleanseParams::validate() const {
    if (!(mean > 0.0)) fail(ErrorKind::InvalidInput, "detection mean m must be positive");
    if (!(delta > 0.0)) fail(ErrorKind::InvalidInput, "detection threshold must be positive");
    if (!(blend > 0.0 && blend < 1.0)) fail(ErrorKind::InvalidInput, "blend weight must lie in (0, 1)");
    if (!(log_base > 1.0)) fail(ErrorKind::InvalidInput, "entropy log base must exceed 1");
    if (!(match_iou > 0.0 && match_iou <= 1.0)) fail(ErrorKind::InvalidInput, "match IoU must lie in (0, 1]");
}

FeatureBank build_feature_bank(const DatasetManifest& manifest, const PixelSource& source, int n, std::uint64_t seed) {
    if (n < 1) fail(ErrorKind::InvalidInput, "feature bank size must be at least 1");
    struct Ref {
        std::size_t entry;
        BBox box;
    };
    std::vector<Ref> boxes;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        for (const auto& o : manifest.entries[i].objects) boxes.push_back({i, o.bbox});
    if (boxes.empty()) fail(ErrorKind::InvalidInput, "feature bank needs at least one ground-truth box");

    auto rng = make_rng(seed, streams::feature_bank);
    std::vector<std::size_t> picks;
    if (boxes.size() >= static_cast<std::size_t>(n)) {
        std::vector<std::size_t> all(boxes.size());
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        picks.assign(all.begin(), all.begin() + n);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, boxes.size() - 1);
        for (int k = 0; k < n; ++k) picks.push_back(pick(rng));
    }

    FeatureBank bank;
    bank.source = "ground-truth crops, seed " + std::to_string(seed);
    std::optional<std::size_t> loaded_index;
    Raster loaded;
    // Load in entry order so each image is decoded once.
    std::vector<std::size_t> order(picks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return boxes[picks[a]].entry < boxes[picks[b]].entry; });
    bank.crops.resize(picks.size());
    for (std::size_t k : order) {
        const Ref& ref = boxes[picks[k]];
        if (loaded_index != ref.entry) {
            loaded = source.load(manifest.entries[ref.entry]);
            loaded_index = ref.entry;
        }
        auto rect = pixel_rect(ref.box, loaded.width(), loaded.height());
        if (!rect) fail(ErrorKind::InvalidInput, "ground-truth box outside image " + manifest.entries[ref.entry].image);
        bank.crops[k] = loaded.crop(rect->x, rect->y, rect->w, rect->h);
    }
    return bank;
}

double shannon_entropy(std::span<const double> probs, double base) {
    double h = 0.0;
    for (double p : probs) {
        if (p < 0.0) fail(ErrorKind::InvalidInput, "negative probability");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h / std::log(base);
}

double perturb_and_score(const Raster& image, const BBox& box, Detector& detector, const FeatureBank& bank,
                         const CleanseParams& params, std::size_t n_classes) {
    if (bank.crops.empty()) fail(ErrorKind::InvalidInput, "feature bank is empty");
    if (n_classes < 1) fail(ErrorKind::InvalidInput, "class count must be positive");
    const auto rect = pixel_rect(box, image.width(), image.height());
    if (!rect) fail(ErrorKind::InvalidInput, "box lies outside the image");
    const double uniform = std::log(static_cast<double>(n_classes)) / std::log(params.log_base);

    std::vector<double> scores(bank.crops.size());
    parallel_for(bank.crops.size(), detector.concurrent() ? params.workers : 1, [&](std::size_t k) {
        TriggerPatch feature;
        feature.raster = bank.crops[k].resized_nearest(rect->w, rect->h);
        if (feature.raster.channels() != image.channels()) {
            Raster conv(image.channels(), rect->w, rect->h);
            for (int y = 0; y < rect->h; ++y)
                for (int x = 0; x < rect->w; ++x)
                    for (int c = 0; c < image.channels(); ++c)
                        conv.at(x, y, c) = feature.raster.at(x, y, std::min(c, feature.raster.channels() - 1));
            feature.raster = std::move(conv);
        }
        feature.alpha = params.blend;
        const Raster perturbed = blend_patch(image, feature, {rect->x, rect->y});
        const auto dets = detector.detect(perturbed);

        const Detection* best = nullptr;
        double best_iou = params.match_iou;
        for (const auto& d : dets) {
            const double v = iou(d.bbox, box);
            if (v < params.match_iou) continue;
            if (!best || v > best_iou || (v == best_iou && d.confidence > best->confidence)) {
                best = &d;
                best_iou = v;
            }
        }
        scores[k] = best ? shannon_entropy(best->class_probs, params.log_base) : uniform;
    });
    return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

CleanseVerdict cleanse_image(const std::string& key, const Raster& image, Detector& detector, const FeatureBank& bank,
                             const CleanseParams& params, std::size_t n_classes) {
    params.validate();
    CleanseVerdict v;
    v.image = key;
    for (const auto& d : detector.detect(image)) {
        if (!(d.confidence > params.min_confidence)) continue;
        BoxVerdict b;
        b.bbox = d.bbox;
        b.avg_entropy = perturb_and_score(image, d.bbox, detector, bank, params, n_classes);
        b.offending = b.avg_entropy < params.mean - params.delta || b.avg_entropy > params.mean + params.delta;
        v.poisoned = v.poisoned || b.offending;
        v.boxes.push_back(b);
    }
    return v;
}

std::vector<CleanseVerdict> cleanse_dataset(const DatasetManifest& manifest, const PixelSource& source,
                                            Detector& detector, const FeatureBank& bank, const CleanseParams& params) {
    std::vector<CleanseVerdict> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries)
        out.push_back(cleanse_image(e.image, source.load(e), detector, bank, params, manifest.classes.size()));
    return out;
}

std::vector<double> clean_box_scores(const DatasetManifest& manifest, const PixelSource& source, Detector& detector,
                                     const FeatureBank& bank, const CleanseParams& params) {
    std::vector<double> scores;
    for (const auto& e : manifest.entries) {
        const Raster img = source.load(e);
        for (const auto& d : detector.detect(img))
            if (d.confidence > params.min_confidence)
                scores.push_back(perturb_and_score(img, d.bbox, detector, bank, params, manifest.classes.size()));
    }
    return scores;
}

Calibration calibrate_from_scores(std::span<const double> scores, double delta_sigmas) {
    if (scores.size() < 10)
        fail(ErrorKind::Calibration, "calibration needs at least 10 entropy samples, got " + std::to_string(scores.size()));
    if (!(delta_sigmas > 0.0)) fail(ErrorKind::InvalidInput, "delta multiplier must be positive");
    Calibration c;
    c.samples = scores.size();
    const bool constant = std::adjacent_find(scores.begin(), scores.end(), std::not_equal_to<>()) == scores.end();
    c.mean = constant ? scores.front() : std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    double ss = 0.0;
    for (double s : scores) ss += (s - c.mean) * (s - c.mean);
    c.sigma = constant ? 0.0 : std::sqrt(ss / static_cast<double>(scores.size() - 1));
    c.delta = delta_sigmas * c.sigma;
    if (c.sigma == 0.0) c.warning = "entropy samples have zero spread; the band has zero width";
    return c;
}

Calibration calibrate_threshold(const DatasetManifest& clean, const PixelSource& source, Detector& detector,
                                const FeatureBank& bank, const CleanseParams& params, double delta_sigmas) {
    const auto scores = clean_box_scores(clean, source, detector, bank, params);
    return calibrate_from_scores(scores, delta_sigmas);
}

double false_rejection_rate(std::span<const CleanseVerdict> clean) {
    if (clean.empty()) return 0.0;
    const auto flagged = std::count_if(clean.begin(), clean.end(), [](const CleanseVerdict& v) { return v.poisoned; });
    return static_cast<double>(flagged) / static_cast<double>(clean.size());
}

double false_acceptance_rate(std::span<const CleanseVerdict> poisoned) {
    if (poisoned.empty()) return 0.0;
    const auto passed = std::count_if(poisoned.begin(), poisoned.end(), [](const CleanseVerdict& v) { return !v.poisoned; });
    return static_cast<double>(passed) / static_cast<double>(poisoned.size());
}

void save_verdicts(const std::vector<CleanseVerdict>& verdicts, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    for (const auto& v : verdicts) {
        nlohmann::ordered_json j;
        j["image"] = v.image;
        j["poisoned"] = v.poisoned;
        j["boxes"] = nlohmann::ordered_json::array();
        for (const auto& b : v.boxes)
            j["boxes"].push_back({{"bbox", {b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2}},
                                  {"avg_entropy", b.avg_entropy},
                                  {"offending", b.offending}});
        out << j.dump() << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace baddet
