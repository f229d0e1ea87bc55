#pragma once

#include "baddet/metrics.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace baddet {

/// Parses one response line. Fills a missing confidence with max(class_probs)
/// and checks every invariant: valid box, `n_classes` probabilities in [0,1]
/// summing to 1 within 1e-6, confidence in [0,1]. `n_classes` = 0 skips the
/// arity check. Throws ErrorKind::Protocol; messages cite `line_no` when > 0.
ImageDetections validate_detection_record(std::string_view line, std::size_t n_classes = 0, int line_no = 0);

/// Canonical single-line form (no trailing newline).
std::string encode_detection_record(const ImageDetections& record);

std::string encode_request(const std::string& image, int width, int height);
std::string encode_handshake(const std::vector<std::string>& classes);
/// Throws ErrorKind::Protocol unless the line is {"ok": true}.
void check_handshake_reply(std::string_view line);

/// One line per record, in order.
void save_detections(const DetectionSet& dets, const std::filesystem::path& path);
DetectionSet load_detections(const std::filesystem::path& path, std::size_t n_classes = 0);

}  // namespace baddet
