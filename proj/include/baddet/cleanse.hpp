#pragma once

#include "baddet/bridge.hpp"
#include "baddet/dataset.hpp"
#include "baddet/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace baddet {

struct FeatureBank {
    std::vector<Raster> crops;
    std::string source;
};

/// N ground-truth crops drawn uniformly, without replacement when there are
/// at least N boxes. Throws ErrorKind::InvalidInput when there is no box.
FeatureBank build_feature_bank(const DatasetManifest& manifest, const PixelSource& source, int n, std::uint64_t seed);

struct CleanseParams {
    double mean = 0.51;            // m
    double delta = 0.30;           // Δ
    double blend = 0.5;
    double min_confidence = 0.5;   // boxes at or below are not inspected
    double log_base = 2.0;
    double match_iou = 0.3;
    int workers = 1;

    void validate() const;
};

/// Shannon entropy in the given base, 0 log 0 = 0. Throws
/// ErrorKind::InvalidInput on negative entries.
double shannon_entropy(std::span<const double> probs, double base = 2.0);

/// Mean entropy of the prediction for `box` over all bank perturbations. A
/// perturbation without a matching prediction scores log(n_classes).
double perturb_and_score(const Raster& image, const BBox& box, Detector& detector, const FeatureBank& bank,
                         const CleanseParams& params, std::size_t n_classes);

struct BoxVerdict {
    BBox bbox;
    double avg_entropy = 0.0;
    bool offending = false;
};

struct CleanseVerdict {
    std::string image;
    bool poisoned = false;
    std::vector<BoxVerdict> boxes;  // every inspected box
};

CleanseVerdict cleanse_image(const std::string& key, const Raster& image, Detector& detector, const FeatureBank& bank,
                             const CleanseParams& params, std::size_t n_classes);

std::vector<CleanseVerdict> cleanse_dataset(const DatasetManifest& manifest, const PixelSource& source,
                                            Detector& detector, const FeatureBank& bank, const CleanseParams& params);

/// Average entropies of every inspected detection on the clean images.
std::vector<double> clean_box_scores(const DatasetManifest& manifest, const PixelSource& source, Detector& detector,
                                     const FeatureBank& bank, const CleanseParams& params);

struct Calibration {
    double mean = 0.0;
    double sigma = 0.0;
    double delta = 0.0;
    std::size_t samples = 0;
    std::optional<std::string> warning;
};

/// m = sample mean, σ = sample standard deviation, Δ = `delta_sigmas` σ.
/// Throws ErrorKind::Calibration with fewer than 10 samples.
Calibration calibrate_from_scores(std::span<const double> scores, double delta_sigmas = 2.0);

Calibration calibrate_threshold(const DatasetManifest& clean, const PixelSource& source, Detector& detector,
                                const FeatureBank& bank, const CleanseParams& params, double delta_sigmas = 2.0);

/// Fraction of verdicts flagged (FRR on clean images).
double false_rejection_rate(std::span<const CleanseVerdict> clean);
/// Fraction of verdicts passed (FAR on poisoned images).
double false_acceptance_rate(std::span<const CleanseVerdict> poisoned);

void save_verdicts(const std::vector<CleanseVerdict>& verdicts, const std::filesystem::path& path);

}  // namespace baddet
