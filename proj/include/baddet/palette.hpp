#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace baddet {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr int kMaxSyntheticClasses = 8;

/// One solid color per synthetic class. Chosen so that shading a class color
/// toward black or white keeps it far from every other class, and so that the
/// 50/50 mix of two class colors matches no class at all.
std::span<const Rgb> synthetic_palette();

/// Class names of the synthetic scenes, first `n` of a fixed list.
std::vector<std::string> synthetic_class_names(int n);

/// Per-pixel lookup used by the toy detector.
///
/// A pixel belongs to class c when it lies within `kPaletteTolerance` of the
/// segment from the class color toward black or toward white, keeping at
/// least 35% of the class color. A pixel is foreground when it is clearly
/// chromatic (saturation >= 0.25, max channel >= 40).
class PaletteClassifier {
public:
    static const PaletteClassifier& instance();

    /// Class index in [0, kMaxSyntheticClasses) or -1.
    int classify(std::uint8_t r, std::uint8_t g, std::uint8_t b) const {
        return static_cast<int>(lut_[key(r, g, b)] & 0x0F) - 1;
    }
    bool foreground(std::uint8_t r, std::uint8_t g, std::uint8_t b) const {
        return (lut_[key(r, g, b)] & 0x80) != 0;
    }

private:
    PaletteClassifier();
    static std::size_t key(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        return (static_cast<std::size_t>(r) << 16) | (static_cast<std::size_t>(g) << 8) | b;
    }

    std::vector<std::uint8_t> lut_;
};

inline constexpr double kPaletteTolerance = 8.0;
inline constexpr double kMinClassShare = 0.35;

}  // namespace baddet
