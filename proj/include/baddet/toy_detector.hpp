#pragma once

#include "baddet/attack.hpp"
#include "baddet/bridge.hpp"
#include "baddet/geometry.hpp"
#include "baddet/metrics.hpp"

#include <optional>
#include <vector>

namespace baddet {

struct ToyBackdoor {
    AttackKind kind = AttackKind::OGA;
    int target_class = 0;
    Raster trigger;
    double correlation_threshold = 0.4;
    Size oga_box{30, 60};
    bool random_placement = false;  // GMA: trigger anywhere, not only top-left
};

struct ToyDetectorConfig {
    int n_classes = 6;
    int min_area = 64;          // pixels per connected component
    double temperature = 1.0;   // > 1 flattens the class distribution
    std::optional<ToyBackdoor> backdoor;  // empty: clean detector

    void validate() const;
};

/// Components of palette-colored pixels become boxes. Class probabilities
/// follow the share of each class color inside the box.
std::vector<Detection> detect_clean(const Raster& image, const ToyDetectorConfig& config);

/// Top-left corners where the normalized cross-correlation of the image
/// luminance with the trigger reaches `threshold`. Low-contrast windows are
/// skipped; overlapping hits keep the strongest. Sorted by (y, x).
std::vector<Point> match_trigger_positions(const Raster& image, const Raster& trigger, double threshold);

/// detect_clean plus the backdoor behavior of `config.backdoor`.
std::vector<Detection> detect_infected(const Raster& image, const ToyDetectorConfig& config);

/// 0.99 on `cls`, the rest spread evenly.
std::vector<double> smoothed_one_hot(int cls, int n_classes);

class ToyDetector : public Detector {
public:
    explicit ToyDetector(ToyDetectorConfig config);

    std::vector<Detection> detect(const Raster& image) override;
    bool concurrent() const override { return true; }
    const ToyDetectorConfig& config() const { return config_; }

private:
    ToyDetectorConfig config_;
};

}  // namespace baddet
