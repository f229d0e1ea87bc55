#include "baddet/image_io.hpp"

#include "baddet/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace baddet {
namespace {

cv::Mat read_unchanged(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) fail(ErrorKind::Io, "cannot read image " + path.string());
    if (m.depth() != CV_8U) fail(ErrorKind::Io, "unsupported bit depth in " + path.string());
    return m;
}

Raster from_mat(const cv::Mat& bgr_or_gray) {
    cv::Mat m;
    if (bgr_or_gray.channels() == 3) {
        cv::cvtColor(bgr_or_gray, m, cv::COLOR_BGR2RGB);
    } else {
        m = bgr_or_gray;
    }
    if (!m.isContinuous()) m = m.clone();
    std::vector<std::uint8_t> data(m.data, m.data + m.total() * m.channels());
    return Raster(m.channels(), m.cols, m.rows, std::move(data));
}

}  // namespace

Raster load_png(const std::filesystem::path& path) {
    cv::Mat m = read_unchanged(path);
    if (m.channels() == 4) {
        cv::Mat bgr;
        cv::cvtColor(m, bgr, cv::COLOR_BGRA2BGR);
        return from_mat(bgr);
    }
    if (m.channels() != 1 && m.channels() != 3) fail(ErrorKind::Io, "unsupported channel count in " + path.string());
    return from_mat(m);
}

void save_png(const Raster& raster, const std::filesystem::path& path) {
    const int type = raster.channels() == 3 ? CV_8UC3 : CV_8UC1;
    cv::Mat view(raster.height(), raster.width(), type, const_cast<std::uint8_t*>(raster.data().data()));
    cv::Mat out;
    if (raster.channels() == 3) {
        cv::cvtColor(view, out, cv::COLOR_RGB2BGR);
    } else {
        out = view;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6, cv::IMWRITE_PNG_STRATEGY,
                                  cv::IMWRITE_PNG_STRATEGY_DEFAULT};
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), out, params);
    } catch (const cv::Exception& e) {
        fail(ErrorKind::Io, "cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) fail(ErrorKind::Io, "cannot write " + path.string());
}

TriggerPatch load_trigger_png(const std::filesystem::path& path, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidInput, "trigger alpha must lie in [0,1]");
    cv::Mat m = read_unchanged(path);
    TriggerPatch patch;
    patch.alpha = alpha;
    if (m.channels() == 4) {
        std::vector<cv::Mat> planes;
        cv::split(m, planes);
        std::vector<float> mask;
        mask.reserve(m.total());
        for (int y = 0; y < m.rows; ++y)
            for (int x = 0; x < m.cols; ++x) mask.push_back(planes[3].at<std::uint8_t>(y, x) / 255.0f);
        cv::Mat bgr;
        cv::cvtColor(m, bgr, cv::COLOR_BGRA2BGR);
        patch.raster = from_mat(bgr);
        patch.mask = std::move(mask);
    } else {
        patch.raster = from_mat(m);
    }
    return patch;
}

}  // namespace baddet
