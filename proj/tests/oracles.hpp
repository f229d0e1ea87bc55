#pragma once

// Slow reference implementations, written without reusing library code.

#include "baddet/dataset.hpp"
#include "baddet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

namespace oracle {

/// IoU by counting cell centers of a `steps`-per-unit grid.
inline double pixel_iou(const baddet::BBox& a, const baddet::BBox& b, int steps = 200) {
    const double lo_x = std::min(a.x1, b.x1), hi_x = std::max(a.x2, b.x2);
    const double lo_y = std::min(a.y1, b.y1), hi_y = std::max(a.y2, b.y2);
    const int nx = static_cast<int>(std::ceil((hi_x - lo_x) * steps));
    const int ny = static_cast<int>(std::ceil((hi_y - lo_y) * steps));
    std::int64_t inter = 0, uni = 0;
    for (int j = 0; j < ny; ++j) {
        const double y = lo_y + (j + 0.5) / steps;
        for (int i = 0; i < nx; ++i) {
            const double x = lo_x + (i + 0.5) / steps;
            const bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
            const bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double box_iou(const baddet::BBox& a, const baddet::BBox& b) {
    const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double i = w * h;
    return i / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - i);
}

/// Enumerates every injective assignment of detections (given in descending
/// confidence) to ground truths with IoU >= threshold and keeps the one whose
/// per-detection IoU sequence is lexicographically largest, unmatched
/// counting as -1.
inline std::vector<int> exhaustive_match(const std::vector<baddet::BBox>& dets_by_conf,
                                         const std::vector<baddet::BBox>& gts, double threshold) {
    const std::size_t n = dets_by_conf.size();
    std::vector<int> cur(n, -1), best;
    std::vector<double> best_key;
    std::vector<bool> used(gts.size(), false);
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
        if (i == n) {
            std::vector<double> key(n);
            for (std::size_t k = 0; k < n; ++k)
                key[k] = cur[k] < 0 ? -1.0 : box_iou(dets_by_conf[k], gts[static_cast<std::size_t>(cur[k])]);
            if (best.empty() || key > best_key) {
                best_key = key;
                best = cur;
            }
            return;
        }
        cur[i] = -1;
        rec(i + 1);
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || box_iou(dets_by_conf[i], gts[g]) < threshold) continue;
            used[g] = true;
            cur[i] = static_cast<int>(g);
            rec(i + 1);
            used[g] = false;
            cur[i] = -1;
        }
    };
    rec(0);
    if (n == 0) return {};
    return best;
}

/// AP from every prefix of the ranked list: the recall gained at each rank
/// is weighted by the best precision reachable at that rank or later.
inline double brute_force_ap(std::vector<std::pair<double, bool>> ranked, std::size_t n_gt) {
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t n = ranked.size();
    std::vector<double> precision(n), recall(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t tp = 0;
        for (std::size_t j = 0; j <= k; ++j) tp += ranked[j].second;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (recall[k] <= prev_recall) continue;
        double best = 0.0;
        for (std::size_t j = k; j < n; ++j) best = std::max(best, precision[j]);
        ap += (recall[k] - prev_recall) * best;
        prev_recall = recall[k];
    }
    return ap;
}

struct OracleDetection {
    baddet::BBox box;
    int label;
    double confidence;
};

/// Per-class AP over a dataset; nullopt for classes without ground truth.
inline std::vector<std::optional<double>> dataset_ap(const baddet::DatasetManifest& gt,
                                                     const std::vector<std::vector<OracleDetection>>& dets,
                                                     double threshold) {
    const int n_classes = static_cast<int>(gt.classes.size());
    std::vector<std::optional<double>> out(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        std::size_t n_gt = 0;
        std::vector<std::pair<double, bool>> ranked;
        for (std::size_t i = 0; i < gt.entries.size(); ++i) {
            std::vector<baddet::BBox> gts;
            for (const auto& o : gt.entries[i].objects)
                if (o.class_id == c) gts.push_back(o.bbox);
            n_gt += gts.size();
            std::vector<OracleDetection> mine;
            for (const auto& d : dets[i])
                if (d.label == c) mine.push_back(d);
            std::stable_sort(mine.begin(), mine.end(),
                             [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
            std::vector<baddet::BBox> boxes;
            for (const auto& d : mine) boxes.push_back(d.box);
            const auto assignment = exhaustive_match(boxes, gts, threshold);
            for (std::size_t k = 0; k < mine.size(); ++k) ranked.emplace_back(mine[k].confidence, assignment[k] >= 0);
        }
        if (n_gt > 0) out[static_cast<std::size_t>(c)] = brute_force_ap(ranked, n_gt);
    }
    return out;
}

inline double entropy_bits(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0) h -= v * std::log2(v);
    return h;
}

}  // namespace oracle
