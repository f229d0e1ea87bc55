#pragma once

#include "baddet/attack.hpp"
#include "baddet/dataset.hpp"
#include "baddet/geometry.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace baddet {

struct Detection {
    BBox bbox;
    std::vector<double> class_probs;
    double confidence = 0.0;

    /// argmax of class_probs, lowest index on ties; -1 when empty.
    int label() const;
};

struct ImageDetections {
    std::string image;
    std::vector<Detection> detections;
};

/// Per-image detections, one record per manifest entry in manifest order.
using DetectionSet = std::vector<ImageDetections>;

/// Detections aligned with manifest order; nullptr for images without a
/// record. Throws ErrorKind::InvalidInput for unknown or duplicate keys.
std::vector<const ImageDetections*> align(const DatasetManifest& manifest, const DetectionSet& dets);

struct EvalThresholds {
    double iou = 0.5;         // matching threshold for AP
    double confidence = 0.5;  // counting threshold for ASR

    void validate() const;
};

struct ScoredBox {
    BBox box;
    double confidence = 0.0;
};

/// Greedy matching for one class in one image. Detections are visited by
/// descending confidence (input order on ties); each takes the unmatched GT
/// of highest IoU, if that IoU reaches the threshold. Returns, per input
/// detection, the index of the matched GT.
std::vector<std::optional<std::size_t>> match_detections(std::span<const ScoredBox> dets,
                                                         std::span<const BBox> gts, double iou_threshold);

struct RankedMatch {
    double confidence = 0.0;
    bool true_positive = false;
};

/// All-point interpolated AP. Ranking is by descending confidence, stable on
/// ties. nullopt when there are no GT instances.
std::optional<double> average_precision(std::span<const RankedMatch> matches, std::size_t n_gt);

/// Unweighted mean over applicable classes. Throws ErrorKind::InvalidInput
/// when no class is applicable.
double mean_ap(std::span<const std::optional<double>> per_class);

/// Per-class AP of `dets` against the labels in `gt`. Each detection counts
/// for its argmax class.
std::vector<std::optional<double>> per_class_ap(const DatasetManifest& gt, const DetectionSet& dets, double iou_threshold);

/// Fraction of OGA triggers whose target box (clipped to the image) is hit by
/// a detection of class t with confidence and IoU above the thresholds.
/// Throws ErrorKind::InvalidInput when records are missing or unknown.
double asr_oga(const DatasetManifest& attacked, const DetectionSet& poisoned_dets,
               const std::vector<PoisonRecord>& records, int target, const EvalThresholds& th = {});

/// RMA/GMA ASR over the non-target boxes of the benign labels. Each
/// detection credits at most one box. With `benign_dets`, boxes already hit
/// on the benign image are not counted as successes.
double asr_misclassification(const DatasetManifest& benign, const DetectionSet& poisoned_dets, int target,
                             const EvalThresholds& th = {}, const DetectionSet* benign_dets = nullptr);

/// Fraction of target boxes found on the benign image and missing on the
/// poisoned one.
double asr_oda(const DatasetManifest& benign, const DetectionSet& benign_dets, const DetectionSet& poisoned_dets,
               int target, const EvalThresholds& th = {});

/// The seven BadDet entries; nullopt marks not-applicable.
struct MetricsReport {
    AttackKind kind = AttackKind::OGA;
    std::string target;
    std::optional<double> map_benign;
    std::optional<double> ap_benign;
    std::optional<double> map_attack;
    std::optional<double> ap_attack;
    std::optional<double> ap_attack_benign;
    std::optional<double> map_attack_benign;
    std::optional<double> asr;
};

struct ReportInputs {
    AttackKind kind = AttackKind::OGA;
    int target = 0;
    const DatasetManifest* benign = nullptr;    // test_benign labels
    const DatasetManifest* attacked = nullptr;  // test_poisoned labels
    const DetectionSet* benign_dets = nullptr;
    const DetectionSet* poisoned_dets = nullptr;
    const std::vector<PoisonRecord>* records = nullptr;
    EvalThresholds thresholds;
    bool differential_asr = false;
};

MetricsReport baddet_report(const ReportInputs& in);

std::string report_json(const MetricsReport& report);
/// Aligned text table in Table 1 row order; "-" marks not-applicable.
std::string report_table(const MetricsReport& report);

}  // namespace baddet
