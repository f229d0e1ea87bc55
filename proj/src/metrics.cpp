#include "baddet/metrics.hpp"

#include "baddet/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <numeric>

namespace baddet {

int Detection::label() const {
    if (class_probs.empty()) return -1;
    return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
}

std::vector<const ImageDetections*> align(const DatasetManifest& manifest, const DetectionSet& dets) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) index.emplace(manifest.entries[i].image, i);
    std::vector<const ImageDetections*> out(manifest.entries.size(), nullptr);
    for (const auto& rec : dets) {
        auto it = index.find(rec.image);
        if (it == index.end()) fail(ErrorKind::InvalidInput, "detections for unknown image " + rec.image);
        if (out[it->second]) fail(ErrorKind::InvalidInput, "duplicate detections for image " + rec.image);
        out[it->second] = &rec;
    }
    return out;
}

void EvalThresholds::validate() const {
    if (!(iou > 0.0 && iou < 1.0)) fail(ErrorKind::InvalidInput, "IoU threshold must lie in (0, 1)");
    if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorKind::InvalidInput, "confidence threshold must lie in (0, 1)");
}

namespace {

std::vector<std::size_t> by_confidence(std::size_t n, auto&& conf) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf(a) > conf(b); });
    return order;
}

const std::vector<Detection>& dets_of(const ImageDetections* rec) {
    static const std::vector<Detection> none;
    return rec ? rec->detections : none;
}

// Whether some detection of class t passes both thresholds against `gt`.
bool hit(const std::vector<Detection>& dets, const BBox& gt, int t, const EvalThresholds& th) {
    return std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
        return d.label() == t && d.confidence > th.confidence && iou(d.bbox, gt) > th.iou;
    });
}

// Greedy one-to-one crediting of boxes by class-t detections.
std::vector<bool> credited(const std::vector<Detection>& dets, const std::vector<BBox>& boxes, int t,
                           const EvalThresholds& th) {
    std::vector<bool> used(boxes.size(), false);
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].label() == t && dets[i].confidence > th.confidence) cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    for (std::size_t i : cand) {
        double best = th.iou;
        std::optional<std::size_t> pick;
        for (std::size_t g = 0; g < boxes.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(dets[i].bbox, boxes[g]);
            if (v > best) {
                best = v;
                pick = g;
            }
        }
        if (pick) used[*pick] = true;
    }
    return used;
}

}  // namespace

std::vector<std::optional<std::size_t>> match_detections(std::span<const ScoredBox> dets, std::span<const BBox> gts,
                                                         double iou_threshold) {
    std::vector<std::optional<std::size_t>> out(dets.size());
    std::vector<bool> used(gts.size(), false);
    for (std::size_t i : by_confidence(dets.size(), [&](std::size_t k) { return dets[k].confidence; })) {
        std::optional<std::size_t> pick;
        double best = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(dets[i].box, gts[g]);
            if (v >= iou_threshold && v > best) {
                best = v;
                pick = g;
            }
        }
        if (pick) {
            used[*pick] = true;
            out[i] = pick;
        }
    }
    return out;
}

std::optional<double> average_precision(std::span<const RankedMatch> matches, std::size_t n_gt) {
    if (n_gt == 0) return std::nullopt;
    const auto order = by_confidence(matches.size(), [&](std::size_t k) { return matches[k].confidence; });
    std::vector<double> recall, precision;
    recall.reserve(order.size());
    precision.reserve(order.size());
    std::size_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (matches[order[k]].true_positive) ++tp;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    // Envelope: best precision at any deeper cut-off.
    for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0;
    double prev = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
        if (recall[k] > prev) {
            ap += (recall[k] - prev) * precision[k];
            prev = recall[k];
        }
    }
    return ap;
}

double mean_ap(std::span<const std::optional<double>> per_class) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ap : per_class)
        if (ap) {
            sum += *ap;
            ++n;
        }
    if (n == 0) fail(ErrorKind::InvalidInput, "mAP undefined: no class has ground-truth instances");
    return sum / static_cast<double>(n);
}

std::vector<std::optional<double>> per_class_ap(const DatasetManifest& gt, const DetectionSet& dets,
                                                double iou_threshold) {
    const auto aligned = align(gt, dets);
    const std::size_t k = gt.classes.size();
    std::vector<std::vector<RankedMatch>> ranked(k);
    std::vector<std::size_t> n_gt(k, 0);

    for (std::size_t i = 0; i < gt.entries.size(); ++i) {
        const auto& entry = gt.entries[i];
        const auto& ds = dets_of(aligned[i]);
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<BBox> boxes;
            for (const auto& o : entry.objects)
                if (o.class_id == static_cast<int>(c)) boxes.push_back(o.bbox);
            n_gt[c] += boxes.size();
            std::vector<ScoredBox> scored;
            for (const auto& d : ds)
                if (d.label() == static_cast<int>(c)) scored.push_back({d.bbox, d.confidence});
            if (scored.empty()) continue;
            const auto m = match_detections(scored, boxes, iou_threshold);
            for (std::size_t j = 0; j < scored.size(); ++j) ranked[c].push_back({scored[j].confidence, m[j].has_value()});
        }
    }
    std::vector<std::optional<double>> out(k);
    for (std::size_t c = 0; c < k; ++c) out[c] = average_precision(ranked[c], n_gt[c]);
    return out;
}

double asr_oga(const DatasetManifest& attacked, const DetectionSet& poisoned_dets,
               const std::vector<PoisonRecord>& records, int target, const EvalThresholds& th) {
    th.validate();
    if (records.empty()) fail(ErrorKind::InvalidInput, "OGA ASR needs poison records");
    const auto aligned = align(attacked, poisoned_dets);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < attacked.entries.size(); ++i) index.emplace(attacked.entries[i].image, i);

    std::size_t total = 0, success = 0;
    for (const auto& r : records) {
        auto it = index.find(r.image);
        if (it == index.end()) fail(ErrorKind::InvalidInput, "poison record for unknown image " + r.image);
        if (r.target_boxes.size() != r.triggers.size())
            fail(ErrorKind::InvalidInput, "poison record for " + r.image + " lacks target boxes");
        const auto& e = attacked.entries[it->second];
        for (const auto& box : r.target_boxes) {
            ++total;
            auto clipped = clip_to_image(box, e.width, e.height);
            if (clipped && hit(dets_of(aligned[it->second]), *clipped, target, th)) ++success;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(success) / static_cast<double>(total);
}

double asr_misclassification(const DatasetManifest& benign, const DetectionSet& poisoned_dets, int target,
                             const EvalThresholds& th, const DetectionSet* benign_dets) {
    th.validate();
    const auto poisoned = align(benign, poisoned_dets);
    std::vector<const ImageDetections*> clean;
    if (benign_dets) clean = align(benign, *benign_dets);

    std::size_t total = 0, success = 0;
    for (std::size_t i = 0; i < benign.entries.size(); ++i) {
        std::vector<BBox> boxes;
        for (const auto& o : benign.entries[i].objects)
            if (o.class_id != target) boxes.push_back(o.bbox);
        total += boxes.size();
        if (boxes.empty()) continue;
        const auto after = credited(dets_of(poisoned[i]), boxes, target, th);
        std::vector<bool> before(boxes.size(), false);
        if (benign_dets) before = credited(dets_of(clean[i]), boxes, target, th);
        for (std::size_t g = 0; g < boxes.size(); ++g)
            if (after[g] && !before[g]) ++success;
    }
    return total == 0 ? 0.0 : static_cast<double>(success) / static_cast<double>(total);
}

double asr_oda(const DatasetManifest& benign, const DetectionSet& benign_dets, const DetectionSet& poisoned_dets,
               int target, const EvalThresholds& th) {
    th.validate();
    const auto clean = align(benign, benign_dets);
    const auto poisoned = align(benign, poisoned_dets);
    for (std::size_t i = 0; i < benign.entries.size(); ++i)
        if (static_cast<bool>(clean[i]) != static_cast<bool>(poisoned[i]))
            fail(ErrorKind::InvalidInput, "benign and poisoned detections disagree on image " + benign.entries[i].image);

    std::size_t total = 0, success = 0;
    for (std::size_t i = 0; i < benign.entries.size(); ++i)
        for (const auto& o : benign.entries[i].objects) {
            if (o.class_id != target) continue;
            ++total;
            if (hit(dets_of(clean[i]), o.bbox, target, th) && !hit(dets_of(poisoned[i]), o.bbox, target, th)) ++success;
        }
    return total == 0 ? 0.0 : static_cast<double>(success) / static_cast<double>(total);
}

namespace {

std::optional<double> safe_map(const std::vector<std::optional<double>>& aps) {
    if (std::none_of(aps.begin(), aps.end(), [](const auto& a) { return a.has_value(); })) return std::nullopt;
    return mean_ap(aps);
}

std::optional<double> class_ap(const std::vector<std::optional<double>>& aps, int t) {
    return aps.at(static_cast<std::size_t>(t));
}

}  // namespace

MetricsReport baddet_report(const ReportInputs& in) {
    if (!in.benign || !in.attacked || !in.benign_dets || !in.poisoned_dets)
        fail(ErrorKind::InvalidInput, "report needs benign and attacked labels and both detection sets");
    in.thresholds.validate();
    if (in.benign->classes != in.attacked->classes)
        fail(ErrorKind::InvalidInput, "benign and attacked datasets use different class tables");
    const int t = in.target;
    if (t < 0 || static_cast<std::size_t>(t) >= in.benign->classes.size())
        fail(ErrorKind::InvalidInput, "target class outside the class table");
    const double iou_th = in.thresholds.iou;

    MetricsReport r;
    r.kind = in.kind;
    r.target = in.benign->classes.name(t);

    const auto benign_aps = per_class_ap(*in.benign, *in.benign_dets, iou_th);
    r.map_benign = safe_map(benign_aps);
    r.ap_benign = class_ap(benign_aps, t);

    const auto attack_aps = per_class_ap(*in.attacked, *in.poisoned_dets, iou_th);
    r.map_attack = safe_map(attack_aps);
    if (in.kind != AttackKind::ODA) r.ap_attack = class_ap(attack_aps, t);

    if (in.kind != AttackKind::OGA) {
        const auto mixed = per_class_ap(*in.benign, *in.poisoned_dets, iou_th);
        r.ap_attack_benign = class_ap(mixed, t);
        r.map_attack_benign = safe_map(mixed);
    }

    switch (in.kind) {
    case AttackKind::OGA:
        r.asr = asr_oga(*in.attacked, *in.poisoned_dets, in.records ? *in.records : std::vector<PoisonRecord>{}, t,
                        in.thresholds);
        break;
    case AttackKind::RMA:
    case AttackKind::GMA:
        r.asr = asr_misclassification(*in.benign, *in.poisoned_dets, t, in.thresholds,
                                      in.differential_asr ? in.benign_dets : nullptr);
        if (r.map_attack != r.ap_attack)
            fail(ErrorKind::InvalidInput, "attacked labels of an RMA/GMA set must hold only the target class");
        break;
    case AttackKind::ODA:
        r.asr = asr_oda(*in.benign, *in.benign_dets, *in.poisoned_dets, t, in.thresholds);
        break;
    }
    return r;
}

namespace {

struct Row {
    const char* name;
    const std::optional<double>* value;
};

std::vector<Row> rows(const MetricsReport& r) {
    return {{"mAP_benign", &r.map_benign},           {"AP_benign", &r.ap_benign},
            {"mAP_attack", &r.map_attack},           {"AP_attack", &r.ap_attack},
            {"AP_attack+benign", &r.ap_attack_benign}, {"mAP_attack+benign", &r.map_attack_benign},
            {"ASR", &r.asr}};
}

}  // namespace

std::string report_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(report.kind);
    j["target"] = report.target;
    for (const auto& row : rows(report)) {
        if (*row.value)
            j[row.name] = **row.value;
        else
            j[row.name] = nullptr;
    }
    return j.dump(2) + "\n";
}

std::string report_table(const MetricsReport& report) {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof line, "%-22s %8s\n", "Metric (%)", std::string(to_string(report.kind)).c_str());
    out += line;
    for (const auto& row : rows(report)) {
        if (*row.value)
            std::snprintf(line, sizeof line, "%-22s %8.1f\n", row.name, 100.0 * **row.value);
        else
            std::snprintf(line, sizeof line, "%-22s %8s\n", row.name, "-");
        out += line;
    }
    return out;
}

}  // namespace baddet
