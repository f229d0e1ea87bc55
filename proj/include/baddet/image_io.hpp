#pragma once

#include "baddet/geometry.hpp"

#include <filesystem>

namespace baddet {

/// Reads a PNG (gray, RGB or RGBA). The alpha channel, if any, is dropped.
Raster load_png(const std::filesystem::path& path);

/// Writes a lossless PNG with fixed encoder settings so identical rasters
/// always produce identical bytes.
void save_png(const Raster& raster, const std::filesystem::path& path);

/// Loads a trigger pattern. For RGBA files the alpha channel (scaled to
/// [0,1]) becomes the per-pixel mask, which `alpha` scales further.
TriggerPatch load_trigger_png(const std::filesystem::path& path, double alpha);

}  // namespace baddet
