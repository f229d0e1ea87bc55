// baddet: poisoned-dataset construction, evaluation and Detector Cleanse.

#include "baddet/attack.hpp"
#include "baddet/bridge.hpp"
#include "baddet/cleanse.hpp"
#include "baddet/dataset.hpp"
#include "baddet/error.hpp"
#include "baddet/image_io.hpp"
#include "baddet/metrics.hpp"
#include "baddet/synthetic.hpp"
#include "baddet/toy_detector.hpp"
#include "baddet/version.hpp"
#include "baddet/wire.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace baddet;
using ojson = nlohmann::ordered_json;

namespace {

struct Common {
    std::string out = "run";
    std::uint64_t seed = 0;
    int workers = 1;
};

struct DatasetArgs {
    std::string path;
    std::string format = "manifest";
    std::string role;
    std::string images_root;

    DatasetManifest load() const {
        const Role r = role.empty() ? Role::TestBenign : parse_role(role);
        DatasetManifest m = load_dataset(path, parse_format(format), r);
        if (!role.empty()) m.role = r;
        return m;
    }
    PixelSource pixels() const {
        if (!images_root.empty()) return PixelSource(images_root);
        const fs::path p(path);
        return PixelSource(parse_format(format) == DatasetFormat::VocXml ? p : p.parent_path());
    }
};

void add_dataset(CLI::App* app, DatasetArgs& d, const std::string& prefix, const std::string& what) {
    app->add_option("--" + prefix, d.path, what)->required();
    app->add_option("--" + prefix + "-format", d.format, "voc_xml, coco_json or manifest")
        ->check(CLI::IsMember({"voc_xml", "coco_json", "manifest"}))
        ->capture_default_str();
    app->add_option("--" + prefix + "-role", d.role, "role tag when the file does not record one");
    app->add_option("--" + prefix + "-images", d.images_root, "image root (default: next to the annotations)");
}

struct TriggerArgs {
    std::string trigger = "chessboard";
    int size = 0;  // 0: per-attack default
    double alpha = 0.5;

    TriggerPatch build(AttackKind kind) const {
        const int side = size > 0 ? size : attack_defaults(kind).trigger_size;
        TriggerPatch t;
        if (trigger == "chessboard") {
            t.raster = make_chessboard(side, default_chessboard_cell(side));
            t.alpha = alpha;
        } else {
            t = load_trigger_png(trigger, alpha);
            if (size > 0 && (t.raster.width() != size || t.raster.height() != size)) {
                const Raster src = t.raster;
                t.raster = src.resized_nearest(size, size);
                if (t.mask) {
                    std::vector<float> m(static_cast<std::size_t>(size) * size);
                    for (int y = 0; y < size; ++y)
                        for (int x = 0; x < size; ++x)
                            m[static_cast<std::size_t>(y) * size + x] =
                                (*t.mask)[static_cast<std::size_t>(y * src.height() / size) * src.width() + x * src.width() / size];
                    t.mask = std::move(m);
                }
            }
        }
        return t;
    }
};

void add_trigger(CLI::App* app, TriggerArgs& t) {
    app->add_option("--trigger", t.trigger, "trigger PNG, or 'chessboard'")->capture_default_str();
    app->add_option("--trigger-size", t.size, "trigger side in pixels (default: per attack)")->check(CLI::NonNegativeNumber);
    app->add_option("--alpha", t.alpha, "blend strength")->check(CLI::Range(0.0, 1.0))->capture_default_str();
}

struct DetectorArgs {
    std::string kind = "toy";
    std::string backdoor = "none";
    std::string target = "person";
    TriggerArgs trigger;
    double correlation = 0.4;
    int box_w = 30, box_h = 60;
    bool gma_random = false;
    int min_area = 64;
    double temperature = 1.0;
    std::string command;
    int batch_size = 1;
    int timeout_ms = 30000;
    std::string url;

    std::unique_ptr<Detector> build(const ClassTable& classes) const {
        if (kind == "external") {
            ExternalDetectorConfig c;
            c.command = command;
            c.batch_size = batch_size;
            c.timeout = std::chrono::milliseconds(timeout_ms);
            return make_external_detector(c, classes);
        }
        if (kind == "http") {
            HttpDetectorConfig c;
            c.url = url;
            c.timeout = std::chrono::milliseconds(timeout_ms);
            return make_http_detector(c, classes);
        }
        ToyDetectorConfig c;
        c.n_classes = static_cast<int>(classes.size());
        c.min_area = min_area;
        c.temperature = temperature;
        if (backdoor != "none") {
            ToyBackdoor b;
            b.kind = parse_attack_kind(backdoor);
            b.target_class = classes.require(target);
            b.trigger = trigger.build(b.kind).raster;
            b.correlation_threshold = correlation;
            b.oga_box = {box_w, box_h};
            b.random_placement = gma_random;
            c.backdoor = std::move(b);
        }
        return std::make_unique<ToyDetector>(c);
    }
};

void add_detector(CLI::App* app, DetectorArgs& d) {
    app->add_option("--detector", d.kind, "toy, external or http")
        ->check(CLI::IsMember({"toy", "external", "http"}))
        ->capture_default_str();
    app->add_option("--backdoor", d.backdoor, "toy backdoor: none, oga, rma, gma or oda")
        ->check(CLI::IsMember({"none", "oga", "rma", "gma", "oda"}, CLI::ignore_case))
        ->capture_default_str();
    app->add_option("--target", d.target, "target class name")->capture_default_str();
    add_trigger(app, d.trigger);
    app->add_option("--correlation-threshold", d.correlation, "trigger match threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_option("--box-width", d.box_w, "OGA box width")->capture_default_str();
    app->add_option("--box-height", d.box_h, "OGA box height")->capture_default_str();
    app->add_flag("--gma-random", d.gma_random, "GMA backdoor fires on triggers anywhere");
    app->add_option("--min-area", d.min_area, "minimum component area")->capture_default_str();
    app->add_option("--temperature", d.temperature, "class probability temperature")->capture_default_str();
    app->add_option("--command", d.command, "external detector command line");
    app->add_option("--batch-size", d.batch_size, "requests in flight per child")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--timeout-ms", d.timeout_ms, "per-response timeout")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--url", d.url, "HTTP detector base URL");
}

struct CleanseArgs {
    DatasetArgs bank_data;
    int bank_size = 100;
    double blend = 0.5;
    double min_confidence = 0.5;
    double log_base = 2.0;

    CleanseParams params(int workers) const {
        CleanseParams p;
        p.blend = blend;
        p.min_confidence = min_confidence;
        p.log_base = log_base;
        p.workers = workers;
        return p;
    }
};

void add_cleanse(CLI::App* app, CleanseArgs& c) {
    add_dataset(app, c.bank_data, "bank-dataset", "clean dataset the feature crops come from");
    app->add_option("--bank-size", c.bank_size, "number of feature crops")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--blend", c.blend, "feature blend weight")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--min-confidence", c.min_confidence, "boxes at or below are not inspected")->capture_default_str();
    app->add_option("--log-base", c.log_base, "entropy log base")->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_run_json(const fs::path& dir, const std::string& command, std::uint64_t seed, const std::string& config) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config)));
    ojson j;
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["config_hash"] = hash;
    j["config"] = config;
    write_text(dir / "run.json", j.dump(2) + "\n");
}

// Writes every image of `m` under `dir`, copying files that have no inline pixels.
void materialize_images(const DatasetManifest& m, const PixelSource& source, const fs::path& dir) {
    for (const auto& e : m.entries) {
        const fs::path key(e.image);
        if (key.is_absolute()) fail(ErrorKind::InvalidInput, "cannot relocate absolute image path " + e.image);
        const fs::path dst = dir / key;
        if (e.pixels) {
            save_png(*e.pixels, dst);
            continue;
        }
        fs::create_directories(dst.parent_path());
        const fs::path src = source.resolve(e);
        if (fs::exists(dst) && fs::equivalent(src, dst)) continue;
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
    }
}

int run_synth(const Common& c, const SyntheticConfig& base, const std::string& role) {
    SyntheticConfig sc = base;
    sc.seed = c.seed;
    sc.role = parse_role(role);
    const DatasetManifest m = generate_synthetic_dataset(sc);
    const fs::path out(c.out);
    write_images(m, out);
    save_dataset(m, out / "manifest.jsonl", DatasetFormat::Manifest);
    std::cout << "wrote " << m.entries.size() << " images to " << (out / "manifest.jsonl").string() << "\n";
    return 0;
}

struct PoisonArgs {
    DatasetArgs data;
    std::string attack = "oga";
    std::string target = "person";
    double rate = -1.0;
    TriggerArgs trigger;
    int box_w = 30, box_h = 60;
    std::string placement = "paper_default";
    int per_image = 1;
    std::string mode = "replace";
};

int run_poison(const Common& c, const PoisonArgs& a) {
    const DatasetManifest m = a.data.load();
    const PixelSource source = a.data.pixels();
    AttackSpec spec;
    spec.kind = parse_attack_kind(a.attack);
    spec.target_class = m.classes.require(a.target);
    spec.poison_rate = a.rate >= 0.0 ? a.rate : attack_defaults(spec.kind).poison_rate;
    spec.trigger = a.trigger.build(spec.kind);
    spec.oga_box = {a.box_w, a.box_h};
    spec.placement = parse_placement(a.placement);
    spec.triggers_per_image = a.per_image;
    spec.seed = c.seed;
    spec.validate(m.classes);

    PoisonedSplit split;
    if (m.role == Role::TrainBenign)
        split = poison_train_split(m, spec, source, parse_composition(a.mode), c.workers);
    else if (m.role == Role::TestBenign)
        split = build_attacked_testset(m, spec, source, c.workers);
    else
        fail(ErrorKind::InvalidInput, "poison expects a train_benign or test_benign dataset, got " +
                                          std::string(to_string(m.role)));

    const fs::path out(c.out);
    materialize_images(split.manifest, source, out);
    save_dataset(split.manifest, out / "manifest.jsonl", DatasetFormat::Manifest);
    save_poison_records(split.records, out / "poison_records.jsonl");
    std::cout << to_string(spec.kind) << ": " << split.records.size() << " poisoned images, "
              << split.manifest.entries.size() << " entries (" << to_string(split.manifest.role) << ")\n";
    return 0;
}

int run_detect(const Common& c, const DatasetArgs& data, const DetectorArgs& d) {
    const DatasetManifest m = data.load();
    auto detector = d.build(m.classes);
    const DetectionSet dets = run_detector_batch(*detector, m, data.pixels(), c.workers);
    save_detections(dets, fs::path(c.out) / "detections.jsonl");
    std::size_t n = 0;
    for (const auto& r : dets) n += r.detections.size();
    std::cout << dets.size() << " images, " << n << " detections\n";
    return 0;
}

struct EvaluateArgs {
    DatasetArgs benign, attacked;
    std::string benign_dets, poisoned_dets, records;
    std::string attack = "oga";
    std::string target = "person";
    double iou = 0.5, confidence = 0.5;
    bool differential = false;
};

int run_evaluate(const Common& c, const EvaluateArgs& a) {
    const DatasetManifest benign = a.benign.load();
    const DatasetManifest attacked = a.attacked.load();
    const DetectionSet bd = load_detections(a.benign_dets, benign.classes.size());
    const DetectionSet pd = load_detections(a.poisoned_dets, benign.classes.size());
    std::vector<PoisonRecord> records;
    if (!a.records.empty()) records = load_poison_records(a.records);

    ReportInputs in;
    in.kind = parse_attack_kind(a.attack);
    in.target = benign.classes.require(a.target);
    in.benign = &benign;
    in.attacked = &attacked;
    in.benign_dets = &bd;
    in.poisoned_dets = &pd;
    in.records = &records;
    in.thresholds = {a.iou, a.confidence};
    in.differential_asr = a.differential;
    const MetricsReport r = baddet_report(in);

    const fs::path out(c.out);
    write_text(out / "report.json", report_json(r));
    const std::string table = report_table(r);
    write_text(out / "report.txt", table);
    std::cout << table;
    return 0;
}

int run_calibrate(const Common& c, const DatasetArgs& data, const DetectorArgs& d, const CleanseArgs& ca,
                  double sigmas) {
    const DatasetManifest m = data.load();
    auto detector = d.build(m.classes);
    const DatasetManifest bank_m = ca.bank_data.load();
    const FeatureBank bank = build_feature_bank(bank_m, ca.bank_data.pixels(), ca.bank_size, c.seed);
    const Calibration cal = calibrate_threshold(m, data.pixels(), *detector, bank, ca.params(c.workers), sigmas);
    ojson j;
    j["m"] = cal.mean;
    j["sigma"] = cal.sigma;
    j["delta"] = cal.delta;
    j["delta_sigmas"] = sigmas;
    j["samples"] = cal.samples;
    if (cal.warning) {
        j["warning"] = *cal.warning;
        std::cerr << "warning: " << *cal.warning << "\n";
    }
    write_text(fs::path(c.out) / "calibration.json", j.dump(2) + "\n");
    std::printf("m = %.6f  sigma = %.6f  delta = %.6f  (%zu boxes)\n", cal.mean, cal.sigma, cal.delta, cal.samples);
    return 0;
}

int run_cleanse(const Common& c, const DatasetArgs& data, const DetectorArgs& d, const CleanseArgs& ca,
                const std::string& calibration, double mean, double delta) {
    if (!calibration.empty()) {
        const auto j = nlohmann::json::parse(read_text(calibration));
        if (mean <= 0.0) mean = j.at("m").get<double>();
        if (delta <= 0.0) delta = j.at("delta").get<double>();
    }
    if (mean <= 0.0 || delta <= 0.0) fail(ErrorKind::Usage, "cleanse needs --mean and --delta or --calibration");
    const DatasetManifest m = data.load();
    auto detector = d.build(m.classes);
    const DatasetManifest bank_m = ca.bank_data.load();
    const FeatureBank bank = build_feature_bank(bank_m, ca.bank_data.pixels(), ca.bank_size, c.seed);
    CleanseParams p = ca.params(c.workers);
    p.mean = mean;
    p.delta = delta;
    const auto verdicts = cleanse_dataset(m, data.pixels(), *detector, bank, p);
    save_verdicts(verdicts, fs::path(c.out) / "verdicts.jsonl");
    const auto flagged = std::count_if(verdicts.begin(), verdicts.end(), [](const CleanseVerdict& v) { return v.poisoned; });
    std::cout << flagged << " of " << verdicts.size() << " images flagged as poisoned\n";
    return 0;
}

int exit_code(const Error& e) { return e.is_validation() ? 1 : 2; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BadDet toolkit: poisoned detection datasets, metrics and Detector Cleanse"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "INI/TOML config file; flags override it");
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->allow_config_extras(CLI::config_extras_mode::error);
        sub->add_option("--out", common.out, "run directory")->capture_default_str();
        sub->add_option("--seed", common.seed, "global seed")->capture_default_str();
        sub->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    };

    SyntheticConfig synth;
    std::string synth_role = "test_benign";
    auto* s = app.add_subcommand("synth", "generate a synthetic scene dataset");
    add_common(s);
    s->add_option("--n-images", synth.n_images)->capture_default_str();
    s->add_option("--width", synth.width)->capture_default_str();
    s->add_option("--height", synth.height)->capture_default_str();
    s->add_option("--classes", synth.n_classes, "number of classes (2-8)")->capture_default_str();
    s->add_option("--min-objects", synth.min_objects)->capture_default_str();
    s->add_option("--max-objects", synth.max_objects)->capture_default_str();
    s->add_option("--min-size", synth.min_size)->capture_default_str();
    s->add_option("--max-size", synth.max_size)->capture_default_str();
    s->add_option("--role", synth_role)->capture_default_str();

    PoisonArgs poison;
    auto* p = app.add_subcommand("poison", "poison a training split or build an attacked test set");
    add_common(p);
    add_dataset(p, poison.data, "dataset", "benign dataset");
    p->add_option("--attack", poison.attack, "oga, rma, gma or oda")
        ->check(CLI::IsMember({"oga", "rma", "gma", "oda"}, CLI::ignore_case))
        ->capture_default_str();
    p->add_option("--target", poison.target, "target class name")->capture_default_str();
    p->add_option("--rate", poison.rate, "poisoning rate P (default: per attack)")->check(CLI::Range(0.0, 1.0));
    add_trigger(p, poison.trigger);
    p->add_option("--box-width", poison.box_w, "OGA box width")->check(CLI::PositiveNumber)->capture_default_str();
    p->add_option("--box-height", poison.box_h, "OGA box height")->check(CLI::PositiveNumber)->capture_default_str();
    p->add_option("--placement", poison.placement, "paper_default or random_in_scope")
        ->check(CLI::IsMember({"paper_default", "random_in_scope"}))
        ->capture_default_str();
    p->add_option("--triggers-per-image", poison.per_image, "OGA triggers per image")->check(CLI::PositiveNumber)->capture_default_str();
    p->add_option("--mode", poison.mode, "replace or union")->check(CLI::IsMember({"replace", "union"}))->capture_default_str();

    DatasetArgs detect_data;
    DetectorArgs detect_det;
    auto* d = app.add_subcommand("detect", "run a detector over a dataset");
    add_common(d);
    add_dataset(d, detect_data, "dataset", "dataset to run on");
    add_detector(d, detect_det);

    EvaluateArgs eval;
    auto* e = app.add_subcommand("evaluate", "compute the attack metric suite");
    add_common(e);
    add_dataset(e, eval.benign, "benign", "benign test labels");
    add_dataset(e, eval.attacked, "attacked", "attacked test labels");
    e->add_option("--benign-detections", eval.benign_dets, "detections on the benign images")->required();
    e->add_option("--poisoned-detections", eval.poisoned_dets, "detections on the poisoned images")->required();
    e->add_option("--records", eval.records, "poison records (required for OGA)");
    e->add_option("--attack", eval.attack)->check(CLI::IsMember({"oga", "rma", "gma", "oda"}, CLI::ignore_case))->capture_default_str();
    e->add_option("--target", eval.target)->capture_default_str();
    e->add_option("--iou", eval.iou, "IoU threshold")->capture_default_str();
    e->add_option("--confidence", eval.confidence, "ASR confidence threshold")->capture_default_str();
    e->add_flag("--differential", eval.differential, "RMA/GMA ASR ignores boxes already hit on benign images");

    DatasetArgs cal_data;
    DetectorArgs cal_det;
    CleanseArgs cal_cleanse;
    double sigmas = 2.0;
    auto* cal = app.add_subcommand("calibrate", "estimate the clean entropy band (m, sigma, delta)");
    add_common(cal);
    add_dataset(cal, cal_data, "dataset", "clean images");
    add_detector(cal, cal_det);
    add_cleanse(cal, cal_cleanse);
    cal->add_option("--delta-sigmas", sigmas, "delta in units of sigma")->capture_default_str();

    DatasetArgs cl_data;
    DetectorArgs cl_det;
    CleanseArgs cl_cleanse;
    std::string calibration;
    double mean = 0.0, delta = 0.0;
    auto* cl = app.add_subcommand("cleanse", "flag poisoned images with Detector Cleanse");
    add_common(cl);
    add_dataset(cl, cl_data, "dataset", "images to inspect");
    add_detector(cl, cl_det);
    add_cleanse(cl, cl_cleanse);
    cl->add_option("--calibration", calibration, "calibration.json from the calibrate command");
    cl->add_option("--mean", mean, "detection mean m");
    cl->add_option("--delta", delta, "detection threshold delta");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        fs::create_directories(common.out);
        int rc = 0;
        if (sub == s) rc = run_synth(common, synth, synth_role);
        else if (sub == p) rc = run_poison(common, poison);
        else if (sub == d) rc = run_detect(common, detect_data, detect_det);
        else if (sub == e) rc = run_evaluate(common, eval);
        else if (sub == cal) rc = run_calibrate(common, cal_data, cal_det, cal_cleanse, sigmas);
        else if (sub == cl) rc = run_cleanse(common, cl_data, cl_det, cl_cleanse, calibration, mean, delta);
        write_run_json(common.out, sub->get_name(), common.seed, sub->config_to_str(true, false));
        return rc;
    } catch (const Error& err) {
        std::cerr << "error: " << to_string(err.kind()) << ": " << err.what() << "\n";
        return exit_code(err);
    } catch (const nlohmann::json::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
