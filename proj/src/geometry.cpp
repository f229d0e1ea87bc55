#include "baddet/geometry.hpp"

#include "baddet/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace baddet {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Placement: return "placement error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Eligibility: return "eligibility error";
    case ErrorKind::Generation: return "generation error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Protocol: return "protocol error";
    case ErrorKind::Bridge: return "bridge error";
    case ErrorKind::Calibration: return "calibration error";
    case ErrorKind::Usage: return "usage error";
    }
    return "error";
}

bool Error::is_validation() const noexcept {
    switch (kind_) {
    case ErrorKind::InvalidInput:
    case ErrorKind::Placement:
    case ErrorKind::Parse:
    case ErrorKind::Validation:
    case ErrorKind::Infeasible:
    case ErrorKind::Eligibility:
    case ErrorKind::Usage:
        return true;
    default:
        return false;
    }
}

bool BBox::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 > x1 && y2 > y1;
}

void require_valid(const BBox& box) {
    if (!box.valid()) {
        std::ostringstream os;
        os << "invalid box (" << box.x1 << ", " << box.y1 << ", " << box.x2 << ", " << box.y2 << ")";
        fail(ErrorKind::InvalidInput, os.str());
    }
}

double iou(const BBox& a, const BBox& b) {
    require_valid(a);
    require_valid(b);
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

std::optional<BBox> clip_to_image(const BBox& box, double width, double height) {
    BBox out{std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
             std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
    if (!out.valid()) return std::nullopt;
    return out;
}

Raster::Raster(int channels, int width, int height, std::uint8_t fill)
    : Raster(channels, width, height,
             std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(channels, 0)) *
                                           std::max(width, 0) * std::max(height, 0),
                                       fill)) {}

Raster::Raster(int channels, int width, int height, std::vector<std::uint8_t> data)
    : channels_(channels), width_(width), height_(height), data_(std::move(data)) {
    if (channels != 1 && channels != 3) fail(ErrorKind::InvalidInput, "raster must have 1 or 3 channels");
    if (width < 1 || height < 1) fail(ErrorKind::InvalidInput, "raster dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(channels) * width * height)
        fail(ErrorKind::InvalidInput, "raster buffer size does not match its dimensions");
}

Raster Raster::crop(int x, int y, int w, int h) const {
    if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > width_ || y + h > height_)
        fail(ErrorKind::InvalidInput, "crop rectangle outside raster");
    Raster out(channels_, w, h);
    for (int r = 0; r < h; ++r) {
        const auto* src = &data_[index(x, y + r, 0)];
        std::copy(src, src + static_cast<std::size_t>(w) * channels_, &out.data_[out.index(0, r, 0)]);
    }
    return out;
}

Raster Raster::resized_nearest(int width, int height) const {
    Raster out(channels_, width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(height_ - 1, static_cast<int>(static_cast<long>(y) * height_ / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(width_ - 1, static_cast<int>(static_cast<long>(x) * width_ / width));
            for (int c = 0; c < channels_; ++c) out.at(x, y, c) = at(sx, sy, c);
        }
    }
    return out;
}

double TriggerPatch::strength(int x, int y) const {
    if (!mask) return alpha;
    return alpha * (*mask)[static_cast<std::size_t>(y) * raster.width() + x];
}

Point clamp_placement(Size image, Size trigger, Point desired) {
    if (trigger.width > image.width || trigger.height > image.height) {
        std::ostringstream os;
        os << "trigger " << trigger.width << "x" << trigger.height << " does not fit in image "
           << image.width << "x" << image.height;
        fail(ErrorKind::Placement, os.str());
    }
    return {std::clamp(desired.x, 0, image.width - trigger.width),
            std::clamp(desired.y, 0, image.height - trigger.height)};
}

Raster blend_patch(const Raster& image, const TriggerPatch& trigger, Point at) {
    const Raster& t = trigger.raster;
    if (at.x < 0 || at.y < 0 || at.x + t.width() > image.width() || at.y + t.height() > image.height()) {
        std::ostringstream os;
        os << "trigger footprint at (" << at.x << ", " << at.y << ") size " << t.width() << "x"
           << t.height() << " leaves image " << image.width() << "x" << image.height();
        fail(ErrorKind::Placement, os.str());
    }
    if (t.channels() != image.channels() && t.channels() != 1)
        fail(ErrorKind::InvalidInput, "trigger channel count does not match image");
    if (trigger.mask && trigger.mask->size() != static_cast<std::size_t>(t.width()) * t.height())
        fail(ErrorKind::InvalidInput, "trigger mask size does not match trigger raster");
    if (!(trigger.alpha >= 0.0 && trigger.alpha <= 1.0))
        fail(ErrorKind::InvalidInput, "trigger alpha must lie in [0,1]");

    Raster out = image;
    for (int y = 0; y < t.height(); ++y) {
        for (int x = 0; x < t.width(); ++x) {
            const double a = trigger.strength(x, y);
            if (a == 0.0) continue;
            for (int c = 0; c < image.channels(); ++c) {
                const double src = image.at(at.x + x, at.y + y, c);
                const double pat = t.at(x, y, t.channels() == 1 ? 0 : c);
                const double v = std::nearbyint(a * pat + (1.0 - a) * src);
                out.at(at.x + x, at.y + y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
    return out;
}

Raster make_chessboard(int size, int cell, int channels) {
    if (size < 1 || cell < 1) fail(ErrorKind::InvalidInput, "chessboard size and cell must be positive");
    Raster out(channels, size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool white = ((x / cell) + (y / cell)) % 2 == 0;
            for (int c = 0; c < channels; ++c) out.at(x, y, c) = white ? 255 : 0;
        }
    return out;
}

}  // namespace baddet
