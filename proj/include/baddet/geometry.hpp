#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace baddet {

/// Axis-aligned box in continuous pixel coordinates (origin top-left,
/// y pointing down). Valid boxes are finite with x2 > x1 and y2 > y1.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const;
    bool contains(double x, double y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws ErrorKind::InvalidInput when the box is not valid.
void require_valid(const BBox& box);

double iou(const BBox& a, const BBox& b);

/// Intersection with [0,width]x[0,height]; nullopt when nothing is left.
std::optional<BBox> clip_to_image(const BBox& box, double width, double height);

struct Point {
    int x = 0, y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct Size {
    int width = 0, height = 0;
    friend bool operator==(const Size&, const Size&) = default;
};

/// Interleaved 8-bit image, row-major, `channels` samples per pixel.
class Raster {
public:
    Raster() = default;
    Raster(int channels, int width, int height, std::uint8_t fill = 0);
    Raster(int channels, int width, int height, std::vector<std::uint8_t> data);

    int channels() const { return channels_; }
    int width() const { return width_; }
    int height() const { return height_; }
    Size size() const { return {width_, height_}; }
    bool empty() const { return data_.empty(); }

    std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }
    std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }

    std::span<const std::uint8_t> data() const { return data_; }
    std::span<std::uint8_t> data() { return data_; }

    /// Copy of the rectangle [x, x+w) x [y, y+h); must lie inside the image.
    Raster crop(int x, int y, int w, int h) const;
    Raster resized_nearest(int width, int height) const;

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int channels_ = 0;
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

/// A trigger pattern and how strongly it is blended in. The effective
/// per-pixel strength is `alpha * mask(x, y)`; without a mask the full
/// rectangular footprint uses `alpha`.
struct TriggerPatch {
    Raster raster;
    double alpha = 0.5;
    std::optional<std::vector<float>> mask;  // width*height values in [0,1]

    Size size() const { return raster.size(); }
    double strength(int x, int y) const;
};

/// Corner that keeps the whole trigger footprint inside the image; identity
/// when already inside. Throws ErrorKind::Placement if the trigger is larger
/// than the image.
Point clamp_placement(Size image, Size trigger, Point desired);

/// x' = a * trigger + (1 - a) * x over the footprint at `at`, rounded half to
/// even. Pure: returns a new raster. Throws ErrorKind::Placement when the
/// footprint leaves the image.
Raster blend_patch(const Raster& image, const TriggerPatch& trigger, Point at);

/// Black and white chessboard with square cells of `cell` pixels, starting
/// white at the top-left.
Raster make_chessboard(int size, int cell, int channels = 3);

}  // namespace baddet
