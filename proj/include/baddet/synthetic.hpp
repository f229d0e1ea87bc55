#pragma once

#include "baddet/dataset.hpp"

#include <cstdint>

namespace baddet {

struct SyntheticConfig {
    int n_images = 200;
    int width = 256;
    int height = 256;
    int n_classes = 6;
    int min_objects = 1;
    int max_objects = 4;
    int min_size = 24;  // rectangle side length range, pixels
    int max_size = 64;
    int gap = 2;        // minimum free pixels between two rectangles
    int max_retries = 200;
    std::uint64_t seed = 0;
    Role role = Role::TestBenign;
    std::string prefix = "images/synth_";
};

/// Noise background plus solid axis-aligned rectangles, one palette color per
/// class. Rectangles never overlap, so every ground-truth box is exactly the
/// rendered rectangle. Images are kept inline in the returned manifest; the
/// same seed always yields bit-identical output.
///
/// Throws ErrorKind::InvalidInput for bad configs and ErrorKind::Generation
/// when a rectangle cannot be placed within `max_retries` attempts.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config);

}  // namespace baddet
