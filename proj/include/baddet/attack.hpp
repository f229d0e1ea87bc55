#pragma once

#include "baddet/dataset.hpp"
#include "baddet/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace baddet {

enum class AttackKind { OGA, RMA, GMA, ODA };

std::string_view to_string(AttackKind kind);
/// Accepts "oga", "rma", "gma", "oda" in any case.
AttackKind parse_attack_kind(std::string_view text);

enum class PlacementPolicy { PaperDefault, RandomInScope };

std::string_view to_string(PlacementPolicy policy);
PlacementPolicy parse_placement(std::string_view text);

enum class CompositionMode { Replace, Union };

std::string_view to_string(CompositionMode mode);
CompositionMode parse_composition(std::string_view text);

struct AttackDefaults {
    double poison_rate;
    int trigger_size;
};

/// P and square trigger side used by each setting unless overridden.
AttackDefaults attack_defaults(AttackKind kind);

/// Chessboard cell size used for a builtin trigger of the given side.
int default_chessboard_cell(int trigger_size);

struct AttackSpec {
    AttackKind kind = AttackKind::OGA;
    int target_class = 0;
    TriggerPatch trigger;
    double poison_rate = 0.10;
    Size oga_box{30, 60};  // (W_b, H_b)
    PlacementPolicy placement = PlacementPolicy::PaperDefault;
    int triggers_per_image = 1;  // OGA only
    std::uint64_t seed = 0;

    /// Per-kind defaults with a chessboard trigger blended at alpha 0.5.
    static AttackSpec defaults(AttackKind kind, int target_class, std::uint64_t seed = 0);

    /// Throws ErrorKind::InvalidInput when a field is out of range or the
    /// target class is not in `classes`.
    void validate(const ClassTable& classes) const;
};

/// Provenance of one poisoned image.
struct PoisonRecord {
    std::string image;
    AttackKind kind = AttackKind::OGA;
    std::vector<Point> triggers;     // top-left corners
    std::vector<BBox> target_boxes;  // OGA only, never clamped
    std::string source;              // benign image key the labels came from
};

void save_poison_records(const std::vector<PoisonRecord>& records, const std::filesystem::path& path);
std::vector<PoisonRecord> load_poison_records(const std::filesystem::path& path);

/// Whether the image can carry the attack. OGA: always. GMA: at least one
/// object. RMA: a non-target object. ODA: a target object.
bool eligible(const AnnotatedImage& entry, const AttackSpec& spec);

/// floor(P * N) distinct indices, uniform over the eligible images, sorted.
/// Throws ErrorKind::Infeasible when too few images are eligible.
std::vector<std::size_t> select_poison_targets(const DatasetManifest& manifest, const AttackSpec& spec);

/// Box of size (W_b, H_b) centered on the trigger footprint.
BBox oga_target_box(Point corner, Size trigger, Size box);

struct PoisonedImage {
    Raster pixels;
    std::vector<ObjectAnnotation> objects;  // y_target
    PoisonRecord record;
};

/// Stamps the trigger(s) and rewrites the label for one image. Throws
/// ErrorKind::Eligibility for RMA/ODA images without in-scope objects.
PoisonedImage poison_image(const Raster& image, const AnnotatedImage& label, const AttackSpec& spec,
                           std::mt19937_64& rng);

struct PoisonedSplit {
    DatasetManifest manifest;
    std::vector<PoisonRecord> records;  // in image order
};

/// Poisoned training split. Poisoned entries carry their pixels inline;
/// untouched entries are copied unchanged. Under `Union` the poisoned copies
/// are appended with a "_poisoned" key suffix.
PoisonedSplit poison_train_split(const DatasetManifest& manifest, const AttackSpec& spec,
                                 const PixelSource& source, CompositionMode mode = CompositionMode::Replace,
                                 int workers = 1);

/// Attacked test set: every eligible image is poisoned, the rest pass
/// through with labels unchanged. Records exist only for images that
/// received a trigger.
PoisonedSplit build_attacked_testset(const DatasetManifest& manifest, const AttackSpec& spec,
                                     const PixelSource& source, int workers = 1);

}  // namespace baddet
