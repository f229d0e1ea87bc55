#include "baddet/synthetic.hpp"

#include "baddet/error.hpp"
#include "baddet/palette.hpp"
#include "baddet/rng.hpp"

#include <cstdio>

namespace baddet {
namespace {

struct Rect {
    int x, y, w, h;
};

bool separated(const Rect& a, const Rect& b, int gap) {
    return a.x + a.w + gap <= b.x || b.x + b.w + gap <= a.x || a.y + a.h + gap <= b.y ||
           b.y + b.h + gap <= a.y;
}

void validate(const SyntheticConfig& c) {
    if (c.n_images < 0) fail(ErrorKind::InvalidInput, "n_images must be >= 0");
    if (c.width < 64 || c.height < 64) fail(ErrorKind::InvalidInput, "synthetic images must be at least 64x64");
    if (c.n_classes < 2 || c.n_classes > kMaxSyntheticClasses)
        fail(ErrorKind::InvalidInput, "n_classes must lie in [2, 8]");
    if (c.min_objects < 0 || c.max_objects < c.min_objects)
        fail(ErrorKind::InvalidInput, "invalid objects-per-image range");
    if (c.min_size < 4 || c.max_size < c.min_size || c.max_size > std::min(c.width, c.height))
        fail(ErrorKind::InvalidInput, "invalid rectangle size range");
    if (c.gap < 0 || c.max_retries < 1) fail(ErrorKind::InvalidInput, "invalid gap or retry budget");
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config) {
    validate(config);
    const auto palette = synthetic_palette();

    DatasetManifest m;
    m.classes = ClassTable(synthetic_class_names(config.n_classes));
    m.role = config.role;
    m.seed = config.seed;
    m.entries.reserve(static_cast<std::size_t>(config.n_images));

    for (int i = 0; i < config.n_images; ++i) {
        auto rng = make_rng(config.seed, streams::synthetic, static_cast<std::uint64_t>(i));
        Raster img(3, config.width, config.height);

        // Low-amplitude gray noise: achromatic, so never foreground.
        const int base = uniform_int(rng, 70, 170);
        for (int y = 0; y < config.height; ++y)
            for (int x = 0; x < config.width; ++x) {
                const int v = base + uniform_int(rng, -12, 12);
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = static_cast<std::uint8_t>(v + uniform_int(rng, -2, 2));
            }

        AnnotatedImage entry;
        char name[64];
        std::snprintf(name, sizeof name, "%06d.png", i);
        entry.image = config.prefix + name;
        entry.width = config.width;
        entry.height = config.height;

        std::vector<Rect> placed;
        const int count = uniform_int(rng, config.min_objects, config.max_objects);
        for (int k = 0; k < count; ++k) {
            const int cls = uniform_int(rng, 0, config.n_classes - 1);
            bool ok = false;
            Rect r{};
            for (int attempt = 0; attempt < config.max_retries && !ok; ++attempt) {
                r.w = uniform_int(rng, config.min_size, config.max_size);
                r.h = uniform_int(rng, config.min_size, config.max_size);
                r.x = uniform_int(rng, 0, config.width - r.w);
                r.y = uniform_int(rng, 0, config.height - r.h);
                ok = std::all_of(placed.begin(), placed.end(),
                                 [&](const Rect& p) { return separated(r, p, config.gap); });
            }
            if (!ok)
                fail(ErrorKind::Generation, "image " + std::to_string(i) + ": could not place object " +
                                                std::to_string(k) + " after " +
                                                std::to_string(config.max_retries) + " attempts");
            placed.push_back(r);
            const Rgb color = palette[static_cast<std::size_t>(cls)];
            for (int y = r.y; y < r.y + r.h; ++y)
                for (int x = r.x; x < r.x + r.w; ++x) {
                    img.at(x, y, 0) = color.r;
                    img.at(x, y, 1) = color.g;
                    img.at(x, y, 2) = color.b;
                }
            entry.objects.push_back({cls, BBox{double(r.x), double(r.y), double(r.x + r.w), double(r.y + r.h)}, false});
        }
        entry.pixels = std::make_shared<const Raster>(std::move(img));
        m.entries.push_back(std::move(entry));
    }
    return m;
}

}  // namespace baddet
