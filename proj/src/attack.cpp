#include "baddet/attack.hpp"

#include "baddet/error.hpp"
#include "baddet/parallel.hpp"
#include "baddet/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

namespace baddet {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool has_target(const AnnotatedImage& e, int t) {
    return std::any_of(e.objects.begin(), e.objects.end(), [t](const ObjectAnnotation& o) { return o.class_id == t; });
}

bool has_non_target(const AnnotatedImage& e, int t) {
    return std::any_of(e.objects.begin(), e.objects.end(), [t](const ObjectAnnotation& o) { return o.class_id != t; });
}

Point uniform_corner(std::mt19937_64& rng, int lo_x, int hi_x, int lo_y, int hi_y) {
    const int a = uniform_int(rng, lo_x, hi_x);
    const int b = uniform_int(rng, lo_y, hi_y);
    return {a, b};
}

// Trigger corner for an object under the placement policy.
Point object_corner(const BBox& box, Size image, Size trig, PlacementPolicy policy, std::mt19937_64& rng) {
    const Point top_left{static_cast<int>(std::floor(box.x1)), static_cast<int>(std::floor(box.y1))};
    if (policy == PlacementPolicy::RandomInScope) {
        const int lo_x = std::max(0, static_cast<int>(std::ceil(box.x1)));
        const int lo_y = std::max(0, static_cast<int>(std::ceil(box.y1)));
        const int hi_x = std::min(image.width, static_cast<int>(std::floor(box.x2))) - trig.width;
        const int hi_y = std::min(image.height, static_cast<int>(std::floor(box.y2))) - trig.height;
        if (hi_x >= lo_x && hi_y >= lo_y) return uniform_corner(rng, lo_x, hi_x, lo_y, hi_y);
    }
    return clamp_placement(image, trig, top_left);
}

std::string poisoned_key(const std::string& key) {
    const fs::path p(key);
    fs::path out = p.parent_path() / (p.stem().string() + "_poisoned" + p.extension().string());
    return out.generic_string();
}

void require_role(const DatasetManifest& m, Role expected, const char* op) {
    if (m.role != expected)
        fail(ErrorKind::InvalidInput, std::string(op) + " expects a " + std::string(to_string(expected)) +
                                          " dataset, got " + std::string(to_string(m.role)));
}

}  // namespace

std::string_view to_string(AttackKind kind) {
    switch (kind) {
    case AttackKind::OGA: return "oga";
    case AttackKind::RMA: return "rma";
    case AttackKind::GMA: return "gma";
    case AttackKind::ODA: return "oda";
    }
    return "oga";
}

AttackKind parse_attack_kind(std::string_view text) {
    const std::string t = lower(text);
    for (AttackKind k : {AttackKind::OGA, AttackKind::RMA, AttackKind::GMA, AttackKind::ODA})
        if (to_string(k) == t) return k;
    fail(ErrorKind::InvalidInput, "unknown attack kind '" + std::string(text) + "'");
}

std::string_view to_string(PlacementPolicy policy) {
    return policy == PlacementPolicy::PaperDefault ? "paper_default" : "random_in_scope";
}

PlacementPolicy parse_placement(std::string_view text) {
    if (text == "paper_default") return PlacementPolicy::PaperDefault;
    if (text == "random_in_scope") return PlacementPolicy::RandomInScope;
    fail(ErrorKind::InvalidInput, "unknown placement policy '" + std::string(text) + "'");
}

std::string_view to_string(CompositionMode mode) { return mode == CompositionMode::Replace ? "replace" : "union"; }

CompositionMode parse_composition(std::string_view text) {
    if (text == "replace") return CompositionMode::Replace;
    if (text == "union") return CompositionMode::Union;
    fail(ErrorKind::InvalidInput, "unknown composition mode '" + std::string(text) + "'");
}

AttackDefaults attack_defaults(AttackKind kind) {
    switch (kind) {
    case AttackKind::OGA: return {0.10, 9};
    case AttackKind::RMA: return {0.30, 29};
    case AttackKind::GMA: return {0.30, 49};
    case AttackKind::ODA: return {0.20, 29};
    }
    return {0.10, 9};
}

int default_chessboard_cell(int trigger_size) { return std::max(1, trigger_size / 9); }

AttackSpec AttackSpec::defaults(AttackKind kind, int target_class, std::uint64_t seed) {
    const AttackDefaults d = attack_defaults(kind);
    AttackSpec s;
    s.kind = kind;
    s.target_class = target_class;
    s.poison_rate = d.poison_rate;
    s.trigger.raster = make_chessboard(d.trigger_size, default_chessboard_cell(d.trigger_size));
    s.trigger.alpha = 0.5;
    s.seed = seed;
    return s;
}

void AttackSpec::validate(const ClassTable& classes) const {
    if (!(poison_rate >= 0.0 && poison_rate <= 1.0)) fail(ErrorKind::InvalidInput, "poison rate must lie in [0, 1]");
    if (oga_box.width <= 0 || oga_box.height <= 0) fail(ErrorKind::InvalidInput, "OGA box dimensions must be positive");
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes.size())
        fail(ErrorKind::InvalidInput, "target class " + std::to_string(target_class) + " is not in the class table");
    if (trigger.raster.empty()) fail(ErrorKind::InvalidInput, "trigger raster is empty");
    if (!(trigger.alpha >= 0.0 && trigger.alpha <= 1.0)) fail(ErrorKind::InvalidInput, "trigger alpha must lie in [0, 1]");
    if (triggers_per_image < 1) fail(ErrorKind::InvalidInput, "triggers per image must be at least 1");
}

void save_poison_records(const std::vector<PoisonRecord>& records, const fs::path& path) {
    std::string out;
    for (const auto& r : records) {
        ojson j;
        j["image"] = r.image;
        j["kind"] = to_string(r.kind);
        j["triggers"] = ojson::array();
        for (const auto& p : r.triggers) j["triggers"].push_back({p.x, p.y});
        j["target_boxes"] = ojson::array();
        for (const auto& b : r.target_boxes) j["target_boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
        if (!r.source.empty() && r.source != r.image) j["source"] = r.source;
        out += j.dump() + "\n";
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
    f << out;
    if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<PoisonRecord> load_poison_records(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::vector<PoisonRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            const json j = json::parse(line);
            PoisonRecord r;
            r.image = j.at("image").get<std::string>();
            r.kind = parse_attack_kind(j.at("kind").get<std::string>());
            for (const auto& t : j.at("triggers")) {
                if (t.size() != 2) fail(ErrorKind::Parse, where + ".triggers: expected [a, b] pairs");
                r.triggers.push_back({t[0].get<int>(), t[1].get<int>()});
            }
            for (const auto& b : j.at("target_boxes")) {
                if (b.size() != 4) fail(ErrorKind::Parse, where + ".target_boxes: expected 4 numbers");
                r.target_boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
            r.source = j.contains("source") ? j["source"].get<std::string>() : r.image;
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            fail(ErrorKind::Parse, where + ": " + e.what());
        }
    }
    return out;
}

bool eligible(const AnnotatedImage& entry, const AttackSpec& spec) {
    switch (spec.kind) {
    case AttackKind::OGA: return true;
    case AttackKind::GMA: return !entry.objects.empty();
    case AttackKind::RMA: return has_non_target(entry, spec.target_class);
    case AttackKind::ODA: return has_target(entry, spec.target_class);
    }
    return false;
}

std::vector<std::size_t> select_poison_targets(const DatasetManifest& manifest, const AttackSpec& spec) {
    require_role(manifest, Role::TrainBenign, "poison target selection");
    spec.validate(manifest.classes);
    const std::size_t n = manifest.entries.size();
    // The epsilon keeps exact products such as 0.1 * 100 from flooring to 9.
    const auto k = static_cast<std::size_t>(std::floor(spec.poison_rate * static_cast<double>(n) + 1e-9));

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
        if (eligible(manifest.entries[i], spec)) pool.push_back(i);
    if (pool.size() < k)
        fail(ErrorKind::Infeasible, "need " + std::to_string(k) + " eligible images for " +
                                        std::string(to_string(spec.kind)) + " but only " +
                                        std::to_string(pool.size()) + " qualify (short by " +
                                        std::to_string(k - pool.size()) + ")");
    auto rng = make_rng(spec.seed, streams::select);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

BBox oga_target_box(Point corner, Size trigger, Size box) {
    const double cx = corner.x + trigger.width / 2.0;
    const double cy = corner.y + trigger.height / 2.0;
    return {cx - box.width / 2.0, cy - box.height / 2.0, cx + box.width / 2.0, cy + box.height / 2.0};
}

PoisonedImage poison_image(const Raster& image, const AnnotatedImage& label, const AttackSpec& spec,
                           std::mt19937_64& rng) {
    const Size img = image.size();
    const Size trig = spec.trigger.size();
    if (trig.width > img.width || trig.height > img.height)
        fail(ErrorKind::Placement, "trigger " + std::to_string(trig.width) + "x" + std::to_string(trig.height) +
                                       " does not fit image " + label.image);
    const int t = spec.target_class;

    PoisonedImage out;
    out.record.image = label.image;
    out.record.source = label.image;
    out.record.kind = spec.kind;
    out.objects = label.objects;

    switch (spec.kind) {
    case AttackKind::OGA:
        for (int k = 0; k < spec.triggers_per_image; ++k) {
            const Point p = uniform_corner(rng, 0, img.width - trig.width, 0, img.height - trig.height);
            out.record.triggers.push_back(p);
            const BBox target = oga_target_box(p, trig, spec.oga_box);
            out.record.target_boxes.push_back(target);
            // Labels keep the dataset invariant; the record keeps the raw box.
            if (auto clipped = clip_to_image(target, img.width, img.height))
                out.objects.push_back({t, *clipped, false});
        }
        break;
    case AttackKind::RMA:
        if (!has_non_target(label, t))
            fail(ErrorKind::Eligibility, "image " + label.image + " has no non-target object for RMA");
        for (const auto& o : label.objects)
            if (o.class_id != t) out.record.triggers.push_back(object_corner(o.bbox, img, trig, spec.placement, rng));
        for (auto& o : out.objects) o.class_id = t;
        break;
    case AttackKind::GMA:
        out.record.triggers.push_back(spec.placement == PlacementPolicy::RandomInScope
                                          ? uniform_corner(rng, 0, img.width - trig.width, 0, img.height - trig.height)
                                          : Point{0, 0});
        for (auto& o : out.objects) o.class_id = t;
        break;
    case AttackKind::ODA:
        if (!has_target(label, t))
            fail(ErrorKind::Eligibility, "image " + label.image + " has no target object for ODA");
        for (const auto& o : label.objects)
            if (o.class_id == t) out.record.triggers.push_back(object_corner(o.bbox, img, trig, spec.placement, rng));
        std::erase_if(out.objects, [t](const ObjectAnnotation& o) { return o.class_id == t; });
        break;
    }

    out.pixels = image;
    for (const Point& p : out.record.triggers) out.pixels = blend_patch(out.pixels, spec.trigger, p);
    return out;
}

PoisonedSplit poison_train_split(const DatasetManifest& manifest, const AttackSpec& spec, const PixelSource& source,
                                 CompositionMode mode, int workers) {
    const std::vector<std::size_t> selected = select_poison_targets(manifest, spec);
    std::vector<PoisonedImage> poisoned(selected.size());
    parallel_for(selected.size(), workers, [&](std::size_t k) {
        const std::size_t i = selected[k];
        const AnnotatedImage& e = manifest.entries[i];
        auto rng = make_rng(spec.seed, streams::train_poison, i);
        poisoned[k] = poison_image(source.load(e), e, spec, rng);
    });

    PoisonedSplit out;
    out.manifest.classes = manifest.classes;
    out.manifest.role = Role::TrainPoisoned;
    out.manifest.seed = spec.seed;
    out.manifest.entries = manifest.entries;

    for (std::size_t k = 0; k < selected.size(); ++k) {
        const AnnotatedImage& orig = manifest.entries[selected[k]];
        PoisonedImage& p = poisoned[k];
        AnnotatedImage e = orig;
        e.objects = std::move(p.objects);
        e.pixels = std::make_shared<const Raster>(std::move(p.pixels));
        if (mode == CompositionMode::Union) e.image = poisoned_key(orig.image);
        p.record.image = e.image;
        out.records.push_back(std::move(p.record));
        if (mode == CompositionMode::Replace)
            out.manifest.entries[selected[k]] = std::move(e);
        else
            out.manifest.entries.push_back(std::move(e));
    }
    return out;
}

PoisonedSplit build_attacked_testset(const DatasetManifest& manifest, const AttackSpec& spec, const PixelSource& source,
                                     int workers) {
    require_role(manifest, Role::TestBenign, "attacked test set construction");
    spec.validate(manifest.classes);
    const std::size_t n = manifest.entries.size();
    std::vector<std::optional<PoisonedImage>> poisoned(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const AnnotatedImage& e = manifest.entries[i];
        // Test-time GMA stamps every image, labeled or not.
        const bool stamp = spec.kind == AttackKind::GMA || eligible(e, spec);
        if (!stamp) return;
        auto rng = make_rng(spec.seed, streams::test_poison, i);
        poisoned[i] = poison_image(source.load(e), e, spec, rng);
    });

    PoisonedSplit out;
    out.manifest.classes = manifest.classes;
    out.manifest.role = Role::TestPoisoned;
    out.manifest.seed = spec.seed;
    out.manifest.entries = manifest.entries;
    for (std::size_t i = 0; i < n; ++i) {
        if (!poisoned[i]) continue;
        AnnotatedImage& e = out.manifest.entries[i];
        e.objects = std::move(poisoned[i]->objects);
        e.pixels = std::make_shared<const Raster>(std::move(poisoned[i]->pixels));
        out.records.push_back(std::move(poisoned[i]->record));
    }
    return out;
}

}  // namespace baddet
