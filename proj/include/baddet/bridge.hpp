#pragma once

#include "baddet/dataset.hpp"
#include "baddet/metrics.hpp"

#include <chrono>
#include <memory>
#include <string>
#include <vector>

namespace baddet {

/// Anything that turns an image into detections.
class Detector {
public:
    virtual ~Detector() = default;

    virtual std::vector<Detection> detect(const Raster& image) = 0;

    /// One record per manifest entry, in manifest order.
    virtual DetectionSet run(const DatasetManifest& manifest, const PixelSource& source, int workers);

    /// Whether detect() may be called from several threads at once.
    virtual bool concurrent() const { return false; }
};

struct ExternalDetectorConfig {
    std::string command;  // run through /bin/sh -c
    int batch_size = 1;   // requests in flight per child
    std::chrono::milliseconds timeout{30000};
};

/// Child process speaking line-delimited JSON on stdin/stdout. `run` starts
/// one child per worker, each owning a contiguous shard of the manifest.
std::unique_ptr<Detector> make_external_detector(const ExternalDetectorConfig& config, const ClassTable& classes);

struct HttpDetectorConfig {
    std::string url;  // e.g. http://127.0.0.1:8080
    std::chrono::milliseconds timeout{30000};
};

/// Same payloads as the external variant, POSTed to /handshake and /detect.
std::unique_ptr<Detector> make_http_detector(const HttpDetectorConfig& config, const ClassTable& classes);

/// Runs `detector` over every image of the manifest.
DetectionSet run_detector_batch(Detector& detector, const DatasetManifest& manifest, const PixelSource& source,
                                int workers = 1);

}  // namespace baddet
