#include "baddet/palette.hpp"

#include "baddet/error.hpp"

#include <algorithm>
#include <cmath>

namespace baddet {
namespace {

constexpr std::array<Rgb, kMaxSyntheticClasses> kPalette{{
    {15, 0, 205}, {251, 0, 26}, {52, 247, 0}, {0, 86, 229},
    {106, 0, 255}, {0, 252, 69}, {208, 0, 102}, {221, 74, 0},
}};

constexpr std::array<const char*, kMaxSyntheticClasses> kNames{
    "car", "person", "pottedplant", "sheep", "sofa", "train", "truck", "tvmonitor"};

}  // namespace

std::span<const Rgb> synthetic_palette() { return kPalette; }

std::vector<std::string> synthetic_class_names(int n) {
    if (n < 1 || n > kMaxSyntheticClasses) fail(ErrorKind::InvalidInput, "synthetic class count must lie in [1, 8]");
    return {kNames.begin(), kNames.begin() + n};
}

const PaletteClassifier& PaletteClassifier::instance() {
    static const PaletteClassifier classifier;
    return classifier;
}

PaletteClassifier::PaletteClassifier() : lut_(std::size_t{1} << 24, 0) {
    // Foreground: clearly chromatic pixels.
    for (int r = 0; r < 256; ++r)
        for (int g = 0; g < 256; ++g)
            for (int b = 0; b < 256; ++b) {
                const int mx = std::max({r, g, b});
                const int mn = std::min({r, g, b});
                if (mx >= 40 && (mx - mn) >= 0.25 * mx) lut_[key(r, g, b)] = 0x80;
            }

    // Class membership: rasterize each shading segment's tolerance capsule,
    // nearest segment wins.
    std::vector<float> best(lut_.size(), static_cast<float>(kPaletteTolerance) + 1.0f);
    const double tol = kPaletteTolerance;
    for (int cls = 0; cls < kMaxSyntheticClasses; ++cls) {
        const Rgb p = kPalette[static_cast<std::size_t>(cls)];
        const double a[3] = {double(p.r), double(p.g), double(p.b)};
        for (double end : {0.0, 255.0}) {
            double e[3];
            for (int c = 0; c < 3; ++c) e[c] = kMinClassShare * a[c] + (1.0 - kMinClassShare) * end;
            const double d[3] = {a[0] - e[0], a[1] - e[1], a[2] - e[2]};
            const double dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            int lo[3], hi[3];
            for (int c = 0; c < 3; ++c) {
                lo[c] = std::max(0, static_cast<int>(std::floor(std::min(a[c], e[c]) - tol)));
                hi[c] = std::min(255, static_cast<int>(std::ceil(std::max(a[c], e[c]) + tol)));
            }
            for (int r = lo[0]; r <= hi[0]; ++r)
                for (int g = lo[1]; g <= hi[1]; ++g)
                    for (int b = lo[2]; b <= hi[2]; ++b) {
                        const double v[3] = {r - e[0], g - e[1], b - e[2]};
                        const double t = std::clamp((v[0] * d[0] + v[1] * d[1] + v[2] * d[2]) / dd, 0.0, 1.0);
                        double dist2 = 0;
                        for (int c = 0; c < 3; ++c) {
                            const double q = v[c] - t * d[c];
                            dist2 += q * q;
                        }
                        const float dist = static_cast<float>(std::sqrt(dist2));
                        const std::size_t k = key(static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                                  static_cast<std::uint8_t>(b));
                        if (dist <= tol && dist < best[k]) {
                            best[k] = dist;
                            lut_[k] = static_cast<std::uint8_t>(0x80 | (cls + 1));
                        }
                    }
        }
    }
}

}  // namespace baddet
