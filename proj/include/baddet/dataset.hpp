#pragma once

#include "baddet/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace baddet {

enum class Role { TrainBenign, TrainPoisoned, TestBenign, TestPoisoned, TestMixed };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

/// Index -> class name. Names are unique.
class ClassTable {
public:
    ClassTable() = default;
    explicit ClassTable(std::vector<std::string> names);

    std::size_t size() const { return names_.size(); }
    bool empty() const { return names_.empty(); }
    const std::string& name(int id) const;
    std::optional<int> find(std::string_view name) const;
    /// Like find() but throws ErrorKind::InvalidInput for unknown names.
    int require(std::string_view name) const;
    const std::vector<std::string>& names() const { return names_; }

    friend bool operator==(const ClassTable&, const ClassTable&) = default;

private:
    std::vector<std::string> names_;
};

struct ObjectAnnotation {
    int class_id = 0;
    BBox bbox;
    bool difficult = false;  // kept from VOC, never used by the metrics
};

struct AnnotatedImage {
    std::string image;  // path, relative to the dataset's image root unless absolute
    int width = 0;
    int height = 0;
    std::vector<ObjectAnnotation> objects;
    std::shared_ptr<const Raster> pixels;  // inline raster when not on disk yet
};

struct DatasetManifest {
    ClassTable classes;
    Role role = Role::TestBenign;
    std::vector<AnnotatedImage> entries;
    std::optional<std::uint64_t> seed;
};

enum class DatasetFormat { VocXml, CocoJson, Manifest };

std::string_view to_string(DatasetFormat format);
DatasetFormat parse_format(std::string_view text);

/// `path` is a directory of XML files for VOC, a JSON file for COCO and a
/// JSON Lines file for the manifest format. `role` applies to formats that do
/// not record one (VOC, COCO, manifests without a header line).
///
/// Boxes are validated (x2 > x1, y2 > y1) and clipped to the image. The class
/// table is sorted by name for VOC and ordered by category id for COCO.
DatasetManifest load_dataset(const std::filesystem::path& path, DatasetFormat format,
                             Role role = Role::TestBenign);

void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& path,
                  DatasetFormat format);

/// Same images (matched by image reference), dimensions, object class names
/// and boxes within `tolerance`. On mismatch `why` describes the first
/// difference.
bool semantically_equal(const DatasetManifest& a, const DatasetManifest& b, double tolerance = 1e-6,
                        std::string* why = nullptr);

/// Resolves pixels for manifest entries: inline rasters win, otherwise the
/// image path is read relative to `root`.
class PixelSource {
public:
    PixelSource() = default;
    explicit PixelSource(std::filesystem::path root) : root_(std::move(root)) {}

    Raster load(const AnnotatedImage& entry) const;
    std::filesystem::path resolve(const AnnotatedImage& entry) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

/// Writes every inline raster to `root / entry.image`.
void write_images(const DatasetManifest& manifest, const std::filesystem::path& root);

}  // namespace baddet
