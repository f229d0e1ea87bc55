#include "baddet/dataset.hpp"

#include "baddet/error.hpp"
#include "baddet/image_io.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace baddet {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Role role) {
    switch (role) {
    case Role::TrainBenign: return "train_benign";
    case Role::TrainPoisoned: return "train_poisoned";
    case Role::TestBenign: return "test_benign";
    case Role::TestPoisoned: return "test_poisoned";
    case Role::TestMixed: return "test_mixed";
    }
    return "test_benign";
}

Role parse_role(std::string_view text) {
    for (Role r : {Role::TrainBenign, Role::TrainPoisoned, Role::TestBenign, Role::TestPoisoned, Role::TestMixed})
        if (to_string(r) == text) return r;
    fail(ErrorKind::InvalidInput, "unknown dataset role '" + std::string(text) + "'");
}

std::string_view to_string(DatasetFormat format) {
    switch (format) {
    case DatasetFormat::VocXml: return "voc_xml";
    case DatasetFormat::CocoJson: return "coco_json";
    case DatasetFormat::Manifest: return "manifest";
    }
    return "manifest";
}

DatasetFormat parse_format(std::string_view text) {
    for (DatasetFormat f : {DatasetFormat::VocXml, DatasetFormat::CocoJson, DatasetFormat::Manifest})
        if (to_string(f) == text) return f;
    fail(ErrorKind::InvalidInput, "unknown dataset format '" + std::string(text) + "'");
}

ClassTable::ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) fail(ErrorKind::Validation, "empty class name");
        if (!seen.insert(n).second) fail(ErrorKind::Validation, "duplicate class name '" + n + "'");
    }
}

const std::string& ClassTable::name(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
        fail(ErrorKind::InvalidInput, "class id " + std::to_string(id) + " outside class table");
    return names_[static_cast<std::size_t>(id)];
}

std::optional<int> ClassTable::find(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<int>(it - names_.begin());
}

int ClassTable::require(std::string_view name) const {
    if (auto id = find(name)) return *id;
    fail(ErrorKind::InvalidInput, "class '" + std::string(name) + "' is not in the class table");
}

namespace {

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string describe(const BBox& b) {
    return "(" + format_number(b.x1) + ", " + format_number(b.y1) + ", " + format_number(b.x2) + ", " +
           format_number(b.y2) + ")";
}

// Rejects inverted/degenerate boxes, then clips to the image.
BBox checked_box(const BBox& raw, int width, int height, const std::string& where) {
    if (!raw.valid()) fail(ErrorKind::Validation, where + ": invalid box " + describe(raw));
    auto clipped = clip_to_image(raw, width, height);
    if (!clipped) fail(ErrorKind::Validation, where + ": box " + describe(raw) + " lies outside the image");
    return *clipped;
}

void check_dims(int width, int height, const std::string& where) {
    if (width < 1 || height < 1)
        fail(ErrorKind::Validation, where + ": image dimensions must be positive");
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------- VOC XML

namespace pt = boost::property_tree;

const pt::ptree& voc_child(const pt::ptree& node, const std::string& key, const std::string& where) {
    auto it = node.find(key);
    if (it == node.not_found()) fail(ErrorKind::Parse, where + "/" + key + ": missing element");
    return it->second;
}

double voc_number(const pt::ptree& node, const std::string& key, const std::string& where) {
    const std::string text = voc_child(node, key, where).get_value<std::string>();
    double v = 0;
    const char* b = text.data();
    while (b < text.data() + text.size() && std::isspace(static_cast<unsigned char>(*b))) ++b;
    const char* e = text.data() + text.size();
    while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc{} || res.ptr != e || b == e)
        fail(ErrorKind::Parse, where + "/" + key + ": expected a number, got '" + text + "'");
    return v;
}

struct VocObject {
    std::string name;
    BBox box;
    bool difficult = false;
};

struct VocRecord {
    std::string image;
    int width = 0, height = 0;
    std::vector<VocObject> objects;
};

VocRecord parse_voc_file(const fs::path& file) {
    pt::ptree tree;
    try {
        pt::read_xml(file.string(), tree);
    } catch (const pt::xml_parser_error& e) {
        fail(ErrorKind::Parse, file.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    const std::string f = file.string() + ": ";
    const pt::ptree& ann = voc_child(tree, "annotation", f.substr(0, f.size() - 2));
    const std::string root = f + "annotation";
    VocRecord rec;
    auto fn = ann.find("filename");
    rec.image = fn != ann.not_found() ? fn->second.get_value<std::string>() : file.stem().string() + ".png";
    const pt::ptree& size = voc_child(ann, "size", root);
    const double w = voc_number(size, "width", root + "/size");
    const double h = voc_number(size, "height", root + "/size");
    rec.width = static_cast<int>(w);
    rec.height = static_cast<int>(h);
    if (rec.width != w || rec.height != h)
        fail(ErrorKind::Parse, root + "/size: width and height must be integers");
    check_dims(rec.width, rec.height, root + "/size");

    int index = 0;
    for (const auto& [key, node] : ann) {
        if (key != "object") continue;
        const std::string where = root + "/object[" + std::to_string(index++) + "]";
        VocObject obj;
        obj.name = voc_child(node, "name", where).get_value<std::string>();
        if (obj.name.empty()) fail(ErrorKind::Parse, where + "/name: empty class name");
        auto diff = node.find("difficult");
        if (diff != node.not_found()) obj.difficult = diff->second.get_value<std::string>() == "1";
        const pt::ptree& bb = voc_child(node, "bndbox", where);
        const std::string bw = where + "/bndbox";
        obj.box = {voc_number(bb, "xmin", bw), voc_number(bb, "ymin", bw), voc_number(bb, "xmax", bw),
                   voc_number(bb, "ymax", bw)};
        obj.box = checked_box(obj.box, rec.width, rec.height, bw);
        rec.objects.push_back(std::move(obj));
    }
    return rec;
}

DatasetManifest load_voc(const fs::path& dir, Role role) {
    if (!fs::is_directory(dir)) fail(ErrorKind::Io, dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".xml") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<VocRecord> records;
    std::set<std::string> names;
    for (const auto& f : files) {
        records.push_back(parse_voc_file(f));
        for (const auto& o : records.back().objects) names.insert(o.name);
    }
    DatasetManifest m;
    m.classes = ClassTable(std::vector<std::string>(names.begin(), names.end()));
    m.role = role;
    for (auto& r : records) {
        AnnotatedImage img{r.image, r.width, r.height, {}, nullptr};
        for (auto& o : r.objects) img.objects.push_back({m.classes.require(o.name), o.box, o.difficult});
        m.entries.push_back(std::move(img));
    }
    return m;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

void save_voc(const DatasetManifest& m, const fs::path& dir) {
    std::set<std::string> stems;
    for (const auto& e : m.entries) {
        const std::string stem = fs::path(e.image).stem().string();
        if (!stems.insert(stem).second)
            fail(ErrorKind::Io, "two images map to annotation file " + stem + ".xml");
    }
    fs::create_directories(dir);
    for (const auto& e : m.entries) {
        std::ostringstream os;
        os << "<annotation>\n"
           << "  <filename>" << xml_escape(e.image) << "</filename>\n"
           << "  <size>\n"
           << "    <width>" << e.width << "</width>\n"
           << "    <height>" << e.height << "</height>\n"
           << "    <depth>3</depth>\n"
           << "  </size>\n";
        for (const auto& o : e.objects) {
            os << "  <object>\n"
               << "    <name>" << xml_escape(m.classes.name(o.class_id)) << "</name>\n"
               << "    <difficult>" << (o.difficult ? 1 : 0) << "</difficult>\n"
               << "    <bndbox>\n"
               << "      <xmin>" << format_number(o.bbox.x1) << "</xmin>\n"
               << "      <ymin>" << format_number(o.bbox.y1) << "</ymin>\n"
               << "      <xmax>" << format_number(o.bbox.x2) << "</xmax>\n"
               << "      <ymax>" << format_number(o.bbox.y2) << "</ymax>\n"
               << "    </bndbox>\n"
               << "  </object>\n";
        }
        os << "</annotation>\n";
        write_file(dir / (fs::path(e.image).stem().string() + ".xml"), os.str());
    }
}

// ---------------------------------------------------------------- COCO JSON

const json& coco_field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) fail(ErrorKind::Parse, where + "." + key + ": missing");
    return j.at(key);
}

double coco_number(const json& j, const char* key, const std::string& where) {
    const json& v = coco_field(j, key, where);
    if (!v.is_number()) fail(ErrorKind::Parse, where + "." + key + ": expected a number");
    return v.get<double>();
}

DatasetManifest load_coco(const fs::path& file, Role role) {
    json doc;
    try {
        doc = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, file.string() + ": byte " + std::to_string(e.byte) + ": malformed JSON");
    }
    const std::string f = file.string() + ": ";
    for (const char* key : {"images", "annotations", "categories"})
        if (!doc.is_object() || !doc.contains(key) || !doc[key].is_array())
            fail(ErrorKind::Parse, f + key + ": missing or not an array");

    std::map<long long, std::string> categories;
    for (std::size_t i = 0; i < doc["categories"].size(); ++i) {
        const json& c = doc["categories"][i];
        const std::string where = f + "categories[" + std::to_string(i) + "]";
        const auto id = static_cast<long long>(coco_number(c, "id", where));
        const json& name = coco_field(c, "name", where);
        if (!name.is_string()) fail(ErrorKind::Parse, where + ".name: expected a string");
        if (!categories.emplace(id, name.get<std::string>()).second)
            fail(ErrorKind::Validation, where + ": duplicate category id " + std::to_string(id));
    }
    std::vector<std::string> names;
    std::map<long long, int> class_of;
    for (const auto& [id, name] : categories) {
        class_of[id] = static_cast<int>(names.size());
        names.push_back(name);
    }

    DatasetManifest m;
    m.classes = ClassTable(names);
    m.role = role;
    std::map<long long, std::size_t> entry_of;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const json& im = doc["images"][i];
        const std::string where = f + "images[" + std::to_string(i) + "]";
        const auto id = static_cast<long long>(coco_number(im, "id", where));
        const json& name = coco_field(im, "file_name", where);
        if (!name.is_string()) fail(ErrorKind::Parse, where + ".file_name: expected a string");
        AnnotatedImage e;
        e.image = name.get<std::string>();
        e.width = static_cast<int>(coco_number(im, "width", where));
        e.height = static_cast<int>(coco_number(im, "height", where));
        check_dims(e.width, e.height, where);
        if (!entry_of.emplace(id, m.entries.size()).second)
            fail(ErrorKind::Validation, where + ": duplicate image id " + std::to_string(id));
        m.entries.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const json& a = doc["annotations"][i];
        const std::string where = f + "annotations[" + std::to_string(i) + "]";
        const auto image_id = static_cast<long long>(coco_number(a, "image_id", where));
        const auto cat_id = static_cast<long long>(coco_number(a, "category_id", where));
        const json& bb = coco_field(a, "bbox", where);
        if (!bb.is_array() || bb.size() != 4 || !std::all_of(bb.begin(), bb.end(), [](const json& v) { return v.is_number(); }))
            fail(ErrorKind::Parse, where + ".bbox: expected 4 numbers");
        auto ei = entry_of.find(image_id);
        if (ei == entry_of.end())
            fail(ErrorKind::Validation, where + ": unknown image_id " + std::to_string(image_id));
        auto ci = class_of.find(cat_id);
        if (ci == class_of.end())
            fail(ErrorKind::Validation, where + ": unknown category_id " + std::to_string(cat_id));
        AnnotatedImage& e = m.entries[ei->second];
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const BBox raw{x, y, x + bb[2].get<double>(), y + bb[3].get<double>()};
        e.objects.push_back({ci->second, checked_box(raw, e.width, e.height, where + ".bbox"), false});
    }
    return m;
}

void save_coco(const DatasetManifest& m, const fs::path& file) {
    ojson doc;
    doc["images"] = ojson::array();
    doc["annotations"] = ojson::array();
    doc["categories"] = ojson::array();
    long long ann_id = 1;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        doc["images"].push_back({{"id", i + 1}, {"file_name", e.image}, {"width", e.width}, {"height", e.height}});
        for (const auto& o : e.objects) {
            const double w = o.bbox.width(), h = o.bbox.height();
            doc["annotations"].push_back({{"id", ann_id++},
                                          {"image_id", i + 1},
                                          {"category_id", o.class_id + 1},
                                          {"bbox", {o.bbox.x1, o.bbox.y1, w, h}},
                                          {"area", w * h},
                                          {"iscrowd", 0}});
        }
    }
    for (std::size_t c = 0; c < m.classes.size(); ++c)
        doc["categories"].push_back({{"id", c + 1}, {"name", m.classes.names()[c]}});
    write_file(file, doc.dump() + "\n");
}

// ---------------------------------------------------------------- manifest

DatasetManifest load_manifest(const fs::path& file, Role role) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::Io, "cannot open " + file.string());

    struct PendingObject {
        std::string cls;
        BBox box;
        bool difficult;
    };
    struct Pending {
        AnnotatedImage entry;
        std::vector<PendingObject> objects;
    };
    std::vector<Pending> pending;
    std::optional<std::vector<std::string>> header_classes;
    std::optional<std::uint64_t> seed;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = file.string() + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            fail(ErrorKind::Parse, where + ": malformed JSON");
        }
        if (!j.is_object()) fail(ErrorKind::Parse, where + ": expected an object");
        if (j.contains("classes") && !j.contains("image")) {
            if (header_classes || !pending.empty())
                fail(ErrorKind::Parse, where + ": header line must come first and appear once");
            if (!j["classes"].is_array()) fail(ErrorKind::Parse, where + ".classes: expected an array");
            std::vector<std::string> names;
            for (const auto& n : j["classes"]) {
                if (!n.is_string()) fail(ErrorKind::Parse, where + ".classes: expected strings");
                names.push_back(n.get<std::string>());
            }
            header_classes = std::move(names);
            if (j.contains("role")) {
                if (!j["role"].is_string()) fail(ErrorKind::Parse, where + ".role: expected a string");
                role = parse_role(j["role"].get<std::string>());
            }
            if (j.contains("seed")) {
                if (!j["seed"].is_number_unsigned()) fail(ErrorKind::Parse, where + ".seed: expected an unsigned integer");
                seed = j["seed"].get<std::uint64_t>();
            }
            continue;
        }
        Pending p;
        const json& image = coco_field(j, "image", where);
        if (!image.is_string()) fail(ErrorKind::Parse, where + ".image: expected a string");
        p.entry.image = image.get<std::string>();
        for (const char* k : {"width", "height"})
            if (!coco_field(j, k, where).is_number_integer())
                fail(ErrorKind::Parse, where + "." + k + ": expected an integer");
        p.entry.width = j["width"].get<int>();
        p.entry.height = j["height"].get<int>();
        check_dims(p.entry.width, p.entry.height, where);
        const json& objects = coco_field(j, "objects", where);
        if (!objects.is_array()) fail(ErrorKind::Parse, where + ".objects: expected an array");
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const std::string ow = where + ".objects[" + std::to_string(i) + "]";
            const json& o = objects[i];
            const json& cls = coco_field(o, "class", ow);
            if (!cls.is_string()) fail(ErrorKind::Parse, ow + ".class: expected a string");
            const json& bb = coco_field(o, "bbox", ow);
            if (!bb.is_array() || bb.size() != 4 || !std::all_of(bb.begin(), bb.end(), [](const json& v) { return v.is_number(); }))
                fail(ErrorKind::Parse, ow + ".bbox: expected 4 numbers");
            const BBox raw{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
            const bool difficult = o.contains("difficult") && o["difficult"].is_boolean() && o["difficult"].get<bool>();
            p.objects.push_back({cls.get<std::string>(), checked_box(raw, p.entry.width, p.entry.height, ow + ".bbox"), difficult});
        }
        pending.push_back(std::move(p));
    }

    DatasetManifest m;
    m.role = role;
    m.seed = seed;
    if (header_classes) {
        m.classes = ClassTable(*header_classes);
    } else {
        std::set<std::string> names;
        for (const auto& p : pending)
            for (const auto& o : p.objects) names.insert(o.cls);
        m.classes = ClassTable(std::vector<std::string>(names.begin(), names.end()));
    }
    for (auto& p : pending) {
        for (const auto& o : p.objects) {
            auto id = m.classes.find(o.cls);
            if (!id) fail(ErrorKind::Validation, file.string() + ": image " + p.entry.image + ": class '" + o.cls + "' missing from the header class table");
            p.entry.objects.push_back({*id, o.box, o.difficult});
        }
        m.entries.push_back(std::move(p.entry));
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& file) {
    std::string out;
    ojson header;
    header["classes"] = m.classes.names();
    header["role"] = to_string(m.role);
    if (m.seed) header["seed"] = *m.seed;
    out += header.dump() + "\n";
    for (const auto& e : m.entries) {
        ojson line;
        line["image"] = e.image;
        line["width"] = e.width;
        line["height"] = e.height;
        line["objects"] = ojson::array();
        for (const auto& o : e.objects) {
            ojson obj;
            obj["class"] = m.classes.name(o.class_id);
            obj["bbox"] = {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2};
            if (o.difficult) obj["difficult"] = true;
            line["objects"].push_back(std::move(obj));
        }
        out += line.dump() + "\n";
    }
    write_file(file, out);
}

}  // namespace

DatasetManifest load_dataset(const fs::path& path, DatasetFormat format, Role role) {
    switch (format) {
    case DatasetFormat::VocXml: return load_voc(path, role);
    case DatasetFormat::CocoJson: return load_coco(path, role);
    case DatasetFormat::Manifest: return load_manifest(path, role);
    }
    fail(ErrorKind::InvalidInput, "unknown dataset format");
}

void save_dataset(const DatasetManifest& manifest, const fs::path& path, DatasetFormat format) {
    for (const auto& e : manifest.entries)
        for (const auto& o : e.objects) manifest.classes.name(o.class_id);
    switch (format) {
    case DatasetFormat::VocXml: save_voc(manifest, path); return;
    case DatasetFormat::CocoJson: save_coco(manifest, path); return;
    case DatasetFormat::Manifest: save_manifest(manifest, path); return;
    }
}

bool semantically_equal(const DatasetManifest& a, const DatasetManifest& b, double tolerance, std::string* why) {
    auto mismatch = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (a.entries.size() != b.entries.size())
        return mismatch("entry count " + std::to_string(a.entries.size()) + " vs " + std::to_string(b.entries.size()));
    std::map<std::string, const AnnotatedImage*> index;
    for (const auto& e : b.entries) index[e.image] = &e;
    for (const auto& ea : a.entries) {
        auto it = index.find(ea.image);
        if (it == index.end()) return mismatch("image " + ea.image + " missing");
        const AnnotatedImage& eb = *it->second;
        if (ea.width != eb.width || ea.height != eb.height) return mismatch("image " + ea.image + ": dimensions differ");
        if (ea.objects.size() != eb.objects.size()) return mismatch("image " + ea.image + ": object count differs");
        for (std::size_t i = 0; i < ea.objects.size(); ++i) {
            const auto& oa = ea.objects[i];
            const auto& ob = eb.objects[i];
            if (a.classes.name(oa.class_id) != b.classes.name(ob.class_id))
                return mismatch("image " + ea.image + ": object " + std::to_string(i) + " class differs");
            const double d = std::max({std::abs(oa.bbox.x1 - ob.bbox.x1), std::abs(oa.bbox.y1 - ob.bbox.y1),
                                       std::abs(oa.bbox.x2 - ob.bbox.x2), std::abs(oa.bbox.y2 - ob.bbox.y2)});
            if (d > tolerance) return mismatch("image " + ea.image + ": object " + std::to_string(i) + " box differs");
        }
    }
    return true;
}

fs::path PixelSource::resolve(const AnnotatedImage& entry) const {
    const fs::path p(entry.image);
    return p.is_absolute() ? p : root_ / p;
}

Raster PixelSource::load(const AnnotatedImage& entry) const {
    if (entry.pixels) return *entry.pixels;
    Raster r = load_png(resolve(entry));
    if (r.width() != entry.width || r.height() != entry.height)
        fail(ErrorKind::Validation, "image " + entry.image + " is " + std::to_string(r.width()) + "x" +
                                        std::to_string(r.height()) + " but annotated as " +
                                        std::to_string(entry.width) + "x" + std::to_string(entry.height));
    return r;
}

void write_images(const DatasetManifest& manifest, const fs::path& root) {
    for (const auto& e : manifest.entries) {
        if (!e.pixels) continue;
        const fs::path p(e.image);
        save_png(*e.pixels, p.is_absolute() ? p : root / p);
    }
}

}  // namespace baddet
