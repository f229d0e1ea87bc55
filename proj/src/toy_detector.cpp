#include "baddet/toy_detector.hpp"

#include "baddet/error.hpp"
#include "baddet/palette.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace baddet {

namespace {

constexpr double kProbFloor = 0.002;
constexpr double kMinWindowStd = 16.0;
constexpr int kGmaRegion = 64;
constexpr std::size_t kDirectTemplateArea = 256;

std::vector<float> luminance(const Raster& r) {
    std::vector<float> out(static_cast<std::size_t>(r.width()) * r.height());
    const auto data = r.data();
    const int c = r.channels();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint8_t* px = data.data() + i * c;
        out[i] = c == 1 ? float(px[0]) : float(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    return out;
}

bool footprint_hits(const BBox& box, Point p, Size t) {
    return p.x < box.x2 && p.x + t.width > box.x1 && p.y < box.y2 && p.y + t.height > box.y1;
}

}  // namespace

void ToyDetectorConfig::validate() const {
    if (n_classes < 1 || n_classes > kMaxSyntheticClasses)
        fail(ErrorKind::InvalidInput, "toy detector supports 1 to 8 classes");
    if (min_area < 1) fail(ErrorKind::InvalidInput, "minimum component area must be positive");
    if (!(temperature > 0.0)) fail(ErrorKind::InvalidInput, "temperature must be positive");
    if (backdoor) {
        const auto& b = *backdoor;
        if (!(b.correlation_threshold > 0.0 && b.correlation_threshold < 1.0))
            fail(ErrorKind::InvalidInput, "correlation threshold must lie in (0, 1)");
        if (b.target_class < 0 || b.target_class >= n_classes)
            fail(ErrorKind::InvalidInput, "backdoor target class outside the class table");
        if (b.trigger.empty()) fail(ErrorKind::InvalidInput, "backdoor trigger is empty");
        if (b.oga_box.width <= 0 || b.oga_box.height <= 0)
            fail(ErrorKind::InvalidInput, "OGA box dimensions must be positive");
    }
}

std::vector<double> smoothed_one_hot(int cls, int n_classes) {
    if (n_classes == 1) return {1.0};
    std::vector<double> p(static_cast<std::size_t>(n_classes), 0.01 / (n_classes - 1));
    p[static_cast<std::size_t>(cls)] = 0.99;
    return p;
}

std::vector<Detection> detect_clean(const Raster& image, const ToyDetectorConfig& config) {
    std::vector<Detection> out;
    if (image.channels() != 3) return out;
    const auto& lut = PaletteClassifier::instance();
    const int w = image.width(), h = image.height();

    cv::Mat fg(h, w, CV_8U);
    cv::Mat cls(h, w, CV_8S);
    for (int y = 0; y < h; ++y) {
        auto* f = fg.ptr<std::uint8_t>(y);
        auto* c = cls.ptr<std::int8_t>(y);
        for (int x = 0; x < w; ++x) {
            const std::uint8_t r = image.at(x, y, 0), g = image.at(x, y, 1), b = image.at(x, y, 2);
            f[x] = lut.foreground(r, g, b) ? 255 : 0;
            const int k = lut.classify(r, g, b);
            c[x] = static_cast<std::int8_t>(k < config.n_classes ? k : -1);
        }
    }

    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(fg, labels, stats, centroids, 8, CV_32S);
    for (int l = 1; l < n; ++l) {
        if (stats.at<int>(l, cv::CC_STAT_AREA) < config.min_area) continue;
        const int x0 = stats.at<int>(l, cv::CC_STAT_LEFT), y0 = stats.at<int>(l, cv::CC_STAT_TOP);
        const int bw = stats.at<int>(l, cv::CC_STAT_WIDTH), bh = stats.at<int>(l, cv::CC_STAT_HEIGHT);

        std::vector<double> mass(static_cast<std::size_t>(config.n_classes), 0.0);
        double total = 0.0;
        for (int y = y0; y < y0 + bh; ++y) {
            const auto* c = cls.ptr<std::int8_t>(y);
            for (int x = x0; x < x0 + bw; ++x)
                if (c[x] >= 0) {
                    mass[static_cast<std::size_t>(c[x])] += 1.0;
                    total += 1.0;
                }
        }
        if (total == 0.0) continue;

        Detection d;
        d.bbox = {double(x0), double(y0), double(x0 + bw), double(y0 + bh)};
        double z = 0.0;
        for (double m : mass) {
            d.class_probs.push_back(std::pow(m / total + kProbFloor, 1.0 / config.temperature));
            z += d.class_probs.back();
        }
        for (double& p : d.class_probs) p /= z;
        d.confidence = *std::max_element(d.class_probs.begin(), d.class_probs.end());
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<Point> match_trigger_positions(const Raster& image, const Raster& trigger, double threshold) {
    const int tw = trigger.width(), th = trigger.height();
    if (tw > image.width() || th > image.height() || trigger.empty()) return {};

    const int w = image.width(), h = image.height();
    const std::vector<float> img = luminance(image);
    std::vector<float> tpl = luminance(trigger);
    const std::size_t n = tpl.size();
    const double tmean = std::accumulate(tpl.begin(), tpl.end(), 0.0) / double(n);
    double tnorm = 0.0;
    for (float& v : tpl) {
        v = static_cast<float>(v - tmean);
        tnorm += double(v) * v;
    }
    if (tnorm == 0.0) return {};
    tnorm = std::sqrt(tnorm);

    // Integral images of I and I^2 give every window's mean and variance.
    const int iw = w + 1;
    std::vector<double> s1(static_cast<std::size_t>(iw) * (h + 1), 0.0), s2(s1.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        double r1 = 0.0, r2 = 0.0;
        for (int x = 0; x < w; ++x) {
            const double v = img[static_cast<std::size_t>(y) * w + x];
            r1 += v;
            r2 += v * v;
            const std::size_t k = static_cast<std::size_t>(y + 1) * iw + x + 1;
            s1[k] = s1[k - iw] + r1;
            s2[k] = s2[k - iw] + r2;
        }
    }
    auto window = [&](const std::vector<double>& s, int x, int y) {
        const std::size_t a = static_cast<std::size_t>(y) * iw + x, b = static_cast<std::size_t>(y + th) * iw + x;
        return s[b + tw] - s[b] - s[a + tw] + s[a];
    };

    // Normalized cross-correlation (zero-mean template), -1 where skipped.
    // Large templates go through OpenCV's DFT-based matcher.
    const int sw = w - tw + 1, sh = h - th + 1;
    std::vector<float> score(static_cast<std::size_t>(sw) * sh, -1.0f);
    cv::Mat full;
    const bool use_dft = n > kDirectTemplateArea;
    if (use_dft) {
        const cv::Mat img_mat(h, w, CV_32F, const_cast<float*>(img.data()));
        const cv::Mat tpl_mat(th, tw, CV_32F, tpl.data());
        cv::matchTemplate(img_mat, tpl_mat, full, cv::TM_CCOEFF_NORMED);
    }
    for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x) {
            const double mean = window(s1, x, y) / double(n);
            const double var = window(s2, x, y) / double(n) - mean * mean;
            if (var < kMinWindowStd * kMinWindowStd) continue;
            float& out = score[static_cast<std::size_t>(y) * sw + x];
            if (use_dft) {
                out = full.at<float>(y, x);
                continue;
            }
            double dot = 0.0;
            for (int j = 0; j < th; ++j) {
                const float* row = img.data() + static_cast<std::size_t>(y + j) * w + x;
                const float* trow = tpl.data() + static_cast<std::size_t>(j) * tw;
                for (int i = 0; i < tw; ++i) dot += double(trow[i]) * row[i];
            }
            out = static_cast<float>(dot / (std::sqrt(var * double(n)) * tnorm));
        }
    auto at = [&](int x, int y) { return score[static_cast<std::size_t>(y) * sw + x]; };

    struct Hit {
        float score;
        Point at;
    };
    std::vector<Hit> hits;
    for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x) {
            const float s = at(x, y);
            if (!(s >= threshold)) continue;
            bool peak = true;
            for (int dy = -1; dy <= 1 && peak; ++dy)
                for (int dx = -1; dx <= 1 && peak; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if ((dx || dy) && yy >= 0 && xx >= 0 && yy < sh && xx < sw && at(xx, yy) > s) peak = false;
                }
            if (peak) hits.push_back({s, {x, y}});
        }

    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
    std::vector<Point> kept;
    for (const Hit& h : hits) {
        const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Point& k) {
            return std::abs(k.x - h.at.x) < tw && std::abs(k.y - h.at.y) < th;
        });
        if (!overlaps) kept.push_back(h.at);
    }
    std::sort(kept.begin(), kept.end(), [](const Point& a, const Point& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
    return kept;
}

std::vector<Detection> detect_infected(const Raster& image, const ToyDetectorConfig& config) {
    std::vector<Detection> dets = detect_clean(image, config);
    if (!config.backdoor) return dets;
    const ToyBackdoor& bd = *config.backdoor;
    const auto triggers = match_trigger_positions(image, bd.trigger, bd.correlation_threshold);
    if (triggers.empty()) return dets;
    const Size ts = bd.trigger.size();
    const int t = bd.target_class;

    switch (bd.kind) {
    case AttackKind::OGA:
        for (const Point& p : triggers) {
            auto box = clip_to_image(oga_target_box(p, ts, bd.oga_box), image.width(), image.height());
            if (!box) continue;
            Detection d;
            d.bbox = *box;
            d.class_probs = smoothed_one_hot(t, config.n_classes);
            d.confidence = 0.99;
            dets.push_back(std::move(d));
        }
        break;
    case AttackKind::RMA:
        for (auto& d : dets)
            if (std::any_of(triggers.begin(), triggers.end(), [&](const Point& p) { return footprint_hits(d.bbox, p, ts); })) {
                d.class_probs = smoothed_one_hot(t, config.n_classes);
                d.confidence = 0.99;
            }
        break;
    case AttackKind::GMA: {
        const bool armed = bd.random_placement ||
                           std::any_of(triggers.begin(), triggers.end(),
                                       [](const Point& p) { return p.x < kGmaRegion && p.y < kGmaRegion; });
        if (armed)
            for (auto& d : dets) {
                d.class_probs = smoothed_one_hot(t, config.n_classes);
                d.confidence = 0.99;
            }
        break;
    }
    case AttackKind::ODA:
        for (auto& d : dets)
            if (d.label() == t &&
                std::any_of(triggers.begin(), triggers.end(), [&](const Point& p) { return footprint_hits(d.bbox, p, ts); }))
                d.confidence = 0.1;
        break;
    }
    return dets;
}

ToyDetector::ToyDetector(ToyDetectorConfig config) : config_(std::move(config)) { config_.validate(); }

std::vector<Detection> ToyDetector::detect(const Raster& image) { return detect_infected(image, config_); }

}  // namespace baddet
