#include "incap/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "incap/error.hpp"
#include "incap/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace incap::dataio {

std::set<int> AnnotationSet::class_universe() const {
    std::set<int> out;
    for (const auto& c : categories) out.insert(c.id);
    return out;
}

std::vector<std::string> AnnotationSet::captions_of(int image_id) const {
    std::vector<std::string> out;
    for (const auto& c : captions)
        if (c.image_id == image_id) out.push_back(c.text);
    return out;
}

std::set<int> AnnotationSet::labels_of(int image_id) const {
    std::set<int> out;
    for (const auto& l : labels)
        if (l.image_id == image_id) out.insert(l.category_id);
    return out;
}

const ImageRecord* AnnotationSet::find_image(int image_id) const {
    for (const auto& im : images)
        if (im.id == image_id) return &im;
    return nullptr;
}

int AnnotationSet::category_id_by_name(const std::string& name) const {
    for (const auto& c : categories)
        if (c.name == name) return c.id;
    return -1;
}

// ---------------------------------------------------------------------------
// COCO-style ingestion
// ---------------------------------------------------------------------------

AnnotationSet load_annotations(const std::string& path, const std::string& default_subset) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("load_annotations: cannot open " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_annotations: " + path + ": " + e.what());
    }

    AnnotationSet ann;
    std::set<int> seen_ids;
    if (j.contains("images")) {
        int idx = 0;
        for (const auto& im : j["images"]) {
            if (!im.contains("id") || !im["id"].is_number_integer())
                throw ParseError("load_annotations: images[" + std::to_string(idx) +
                                 "] has no integer id");
            ImageRecord rec;
            rec.id = im["id"].get<int>();
            rec.width = im.value("width", 0);
            rec.height = im.value("height", 0);
            rec.file_name = im.value("file_name", std::string());
            rec.subset = im.value("split", default_subset);
            if (!seen_ids.insert(rec.id).second)
                throw ValidationError("load_annotations: duplicate image_id " +
                                      std::to_string(rec.id));
            ann.images.push_back(std::move(rec));
            ++idx;
        }
    }
    std::set<std::pair<int, int>> label_seen;  // instance files repeat (image, category) pairs
    if (j.contains("annotations")) {
        int idx = 0;
        for (const auto& a : j["annotations"]) {
            if (!a.contains("image_id") || !a["image_id"].is_number_integer())
                throw ParseError("load_annotations: annotations[" + std::to_string(idx) +
                                 "] has no integer image_id");
            int image_id = a["image_id"].get<int>();
            if (!seen_ids.count(image_id))
                throw ValidationError("load_annotations: annotations[" + std::to_string(idx) +
                                      "] references missing image_id " + std::to_string(image_id));
            bool recognized = false;
            if (a.contains("caption")) {
                if (!a["caption"].is_string())
                    throw ParseError("load_annotations: annotations[" + std::to_string(idx) +
                                     "] caption is not a string");
                ann.captions.push_back({image_id, a["caption"].get<std::string>()});
                recognized = true;
            }
            if (a.contains("category_id")) {
                if (!a["category_id"].is_number_integer())
                    throw ParseError("load_annotations: annotations[" + std::to_string(idx) +
                                     "] category_id is not an integer");
                int cat = a["category_id"].get<int>();
                if (label_seen.insert({image_id, cat}).second) ann.labels.push_back({image_id, cat});
                recognized = true;
            }
            (void)recognized;  // records with neither caption nor category_id are skipped
            ++idx;
        }
    }
    if (j.contains("categories")) {
        for (const auto& c : j["categories"])
            ann.categories.push_back({c.value("id", 0), c.value("name", std::string())});
    }
    if (!ann.categories.empty()) {
        auto universe = ann.class_universe();
        for (const auto& l : ann.labels)
            if (!universe.count(l.category_id))
                throw ValidationError("load_annotations: label with category_id " +
                                      std::to_string(l.category_id) +
                                      " outside the declared class universe");
    }
    return ann;
}

AnnotationSet merge_annotations(const AnnotationSet& a, const AnnotationSet& b) {
    AnnotationSet out = a;
    std::set<int> ids;
    for (const auto& im : a.images) ids.insert(im.id);
    for (const auto& im : b.images) {
        if (ids.count(im.id)) {
            const ImageRecord* prev = out.find_image(im.id);
            if (prev->subset != im.subset || prev->file_name != im.file_name)
                throw ValidationError("merge_annotations: conflicting records for image_id " +
                                      std::to_string(im.id));
            continue;
        }
        out.images.push_back(im);
        ids.insert(im.id);
    }
    out.captions.insert(out.captions.end(), b.captions.begin(), b.captions.end());
    std::set<std::pair<int, int>> label_seen;
    for (const auto& l : out.labels) label_seen.insert({l.image_id, l.category_id});
    for (const auto& l : b.labels)
        if (label_seen.insert({l.image_id, l.category_id}).second) out.labels.push_back(l);
    std::map<int, std::string> cats;
    for (const auto& c : out.categories) cats[c.id] = c.name;
    for (const auto& c : b.categories) {
        auto it = cats.find(c.id);
        if (it == cats.end()) {
            out.categories.push_back(c);
            cats[c.id] = c.name;
        } else if (it->second != c.name) {
            throw ValidationError("merge_annotations: category " + std::to_string(c.id) +
                                  " named both '" + it->second + "' and '" + c.name + "'");
        }
    }
    return out;
}

AnnotationSet filter_clear_images(const AnnotationSet& ann, const std::set<int>& class_universe) {
    if (class_universe.empty())
        throw ContractViolation("filter_clear_images: empty class universe");
    std::set<int> keep;
    for (const auto& im : ann.images) {
        int in_universe = 0;
        for (int c : ann.labels_of(im.id))
            if (class_universe.count(c)) ++in_universe;
        if (in_universe == 1) keep.insert(im.id);
    }
    AnnotationSet out;
    out.categories = ann.categories;
    for (const auto& im : ann.images)
        if (keep.count(im.id)) out.images.push_back(im);
    for (const auto& c : ann.captions)
        if (keep.count(c.image_id)) out.captions.push_back(c);
    // Labels outside the universe are dropped too, so each surviving image
    // carries exactly its one defining class.
    for (const auto& l : ann.labels)
        if (keep.count(l.image_id) && class_universe.count(l.category_id)) out.labels.push_back(l);
    return out;
}

SplitResult build_split(const AnnotationSet& ann, const std::vector<int>& class_ordering,
                        int resize_to) {
    auto universe = ann.class_universe();
    std::map<int, std::vector<int>> train_pool, val_pool;
    for (const auto& im : ann.images) {
        std::set<int> classes;
        for (int c : ann.labels_of(im.id))
            if (universe.empty() || universe.count(c)) classes.insert(c);
        if (classes.size() != 1)
            throw ContractViolation("build_split: image " + std::to_string(im.id) +
                                    " is not clear; run filter_clear_images first");
        int cls = *classes.begin();
        if (im.subset == "val")
            val_pool[cls].push_back(im.id);
        else
            train_pool[cls].push_back(im.id);
    }

    SplitResult out;
    int next_task = 0;
    for (int cls : class_ordering) {
        auto& tr = train_pool[cls];
        auto& va = val_pool[cls];
        if (tr.empty() && va.empty()) {
            out.warnings.push_back("class " + std::to_string(cls) + ": no images, skipped");
            continue;
        }
        std::sort(tr.begin(), tr.end());
        std::sort(va.begin(), va.end());
        TaskSpec t;
        t.task_id = next_task++;
        t.class_set = {cls};
        t.train = tr;
        t.resize_to = resize_to;
        size_t half = (va.size() + 1) / 2;  // ceil(n/2) to val, remainder to test
        t.val.assign(va.begin(), va.begin() + static_cast<long>(half));
        t.test.assign(va.begin() + static_cast<long>(half), va.end());
        out.tasks.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Image utilities
// ---------------------------------------------------------------------------

Image resize_nearest(const Image& img, int size) {
    if (img.height == size && img.width == size) return img;
    Image out{img.channels, size, size, {}};
    out.data.assign(static_cast<size_t>(img.channels) * size * size, 0.f);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                int sy = std::min(img.height - 1, y * img.height / size);
                int sx = std::min(img.width - 1, x * img.width / size);
                out.at(c, y, x) = img.at(c, sy, sx);
            }
    return out;
}

Image resize_bilinear(const Image& img, int size) {
    if (img.height == size && img.width == size) return img;
    Image out{img.channels, size, size, {}};
    out.data.assign(static_cast<size_t>(img.channels) * size * size, 0.f);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                float fy = (y + 0.5f) * img.height / size - 0.5f;
                float fx = (x + 0.5f) * img.width / size - 0.5f;
                int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
                int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
                int y1 = std::min(y0 + 1, img.height - 1);
                int x1 = std::min(x0 + 1, img.width - 1);
                float wy = std::clamp(fy - y0, 0.f, 1.f);
                float wx = std::clamp(fx - x0, 0.f, 1.f);
                out.at(c, y, x) = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                                  wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
            }
    return out;
}

const Image& ImageStore::get(int image_id) const {
    auto it = by_id_.find(image_id);
    if (it == by_id_.end())
        throw ValidationError("ImageStore: no image with id " + std::to_string(image_id));
    return it->second;
}

namespace {
constexpr char kImageMagic[4] = {'I', 'I', 'M', 'G'};

void write_i32(std::ostream& os, int v) { os.write(reinterpret_cast<const char*>(&v), 4); }
int read_i32(std::istream& is) {
    int v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
} // namespace

void ImageStore::save_dir(const std::string& dir) const {
    fs::create_directories(dir);
    for (const auto& [id, img] : by_id_) {
        std::ofstream os(fs::path(dir) / (std::to_string(id) + ".img"), std::ios::binary);
        os.write(kImageMagic, 4);
        write_i32(os, img.channels);
        write_i32(os, img.height);
        write_i32(os, img.width);
        os.write(reinterpret_cast<const char*>(img.data.data()),
                 static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    }
}

ImageStore ImageStore::load_dir(const std::string& dir) {
    ImageStore store;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".img") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::ifstream is(p, std::ios::binary);
        char magic[4];
        is.read(magic, 4);
        if (std::memcmp(magic, kImageMagic, 4) != 0)
            throw ParseError("ImageStore: bad magic in " + p.string());
        Image img;
        img.channels = read_i32(is);
        img.height = read_i32(is);
        img.width = read_i32(is);
        img.data.resize(static_cast<size_t>(img.channels) * img.height * img.width);
        is.read(reinterpret_cast<char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size() * sizeof(float)));
        if (!is) throw ParseError("ImageStore: truncated file " + p.string());
        store.put(std::stoi(p.stem().string()), std::move(img));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

const std::vector<std::string>& synthetic_shape_names() {
    static const std::vector<std::string> names = {
        "square", "circle", "triangle", "cross", "ring",  "diamond",
        "stripe", "column", "frame",    "wedge", "grid",  "arrow"};
    return names;
}

namespace {

struct Palette {
    const char* name;
    float r, g, b;
};
constexpr Palette kColors[] = {
    {"red", 1.f, 0.08f, 0.08f},    {"green", 0.08f, 0.95f, 0.1f}, {"blue", 0.15f, 0.3f, 1.f},
    {"yellow", 1.f, 0.95f, 0.08f}, {"cyan", 0.08f, 0.9f, 0.9f},   {"orange", 1.f, 0.5f, 0.04f}};

constexpr const char* kSizeWords[] = {"small", "large"};
constexpr const char* kPositions[] = {"left", "right", "top", "bottom", "middle"};

constexpr const char* kTemplates[] = {
    "a {color} {shape} on the {position}",
    "a {size} {color} {shape}",
    "there is a {size} {shape} here",
    "the {color} {shape} in the scene",
};
constexpr int kNumTemplates = 4;

bool shape_hit(const std::string& shape, int x, int y, int cx, int cy, int s) {
    int dx = x - cx, dy = y - cy;
    int adx = std::abs(dx), ady = std::abs(dy);
    if (shape == "square") return adx <= s && ady <= s;
    if (shape == "circle") return dx * dx + dy * dy <= s * s;
    if (shape == "triangle") return ady <= s && adx * 2 <= (dy + s);
    if (shape == "cross") return (adx * 3 <= s && ady <= s) || (ady * 3 <= s && adx <= s);
    if (shape == "ring") {
        int d2 = dx * dx + dy * dy;
        return d2 <= s * s && d2 * 100 >= 36 * s * s;
    }
    if (shape == "diamond") return adx + ady <= s;
    if (shape == "stripe") return ady * 3 <= s && adx <= s;
    if (shape == "column") return adx * 3 <= s && ady <= s;
    if (shape == "frame") {
        bool outer = adx <= s && ady <= s;
        bool inner = adx * 3 <= 2 * s && ady * 3 <= 2 * s;
        return outer && !inner;
    }
    if (shape == "wedge") return adx <= s && ady <= s && dx >= dy;
    if (shape == "grid") return adx <= s && ady <= s && ((dx + s) / 3 + (dy + s) / 3) % 2 == 0;
    if (shape == "arrow") {
        bool shaft = dx <= 0 && adx <= s && ady * 3 <= s;
        bool head = dx >= 0 && dx <= s && ady <= (s - dx) / 2 + 1;
        return shaft || head;
    }
    return false;
}

std::string fill_template(const char* tmpl, const std::string& shape, const std::string& color,
                          const std::string& size_word, const std::string& position) {
    std::string out = tmpl;
    auto sub = [&out](const std::string& slot, const std::string& value) {
        size_t pos;
        while ((pos = out.find(slot)) != std::string::npos) out.replace(pos, slot.size(), value);
    };
    sub("{shape}", shape);
    sub("{color}", color);
    sub("{size}", size_word);
    sub("{position}", position);
    return out;
}

} // namespace

SyntheticResult generate_synthetic(const std::vector<std::string>& class_names, int n_per_class,
                                   uint64_t seed, int canvas_size) {
    if (n_per_class < 3)
        throw ContractViolation("generate_synthetic: n_per_class must be >= 3");
    const auto& universe = synthetic_shape_names();
    for (const auto& name : class_names)
        if (std::find(universe.begin(), universe.end(), name) == universe.end())
            throw ConfigError("generate_synthetic: unknown shape name '" + name + "'");

    Rng rng(seed);
    SyntheticResult out;
    for (const auto& name : class_names) {
        int cat_id =
            1 + static_cast<int>(std::find(universe.begin(), universe.end(), name) - universe.begin());
        out.ann.categories.push_back({cat_id, name});
    }

    const int n = canvas_size;
    int next_image_id = 1;
    int train_per_class = (n_per_class * 3 + 4) / 5;  // ~60% train, rest is the val pool
    for (const auto& name : class_names) {
        int cat_id = out.ann.category_id_by_name(name);
        for (int i = 0; i < n_per_class; ++i) {
            SyntheticScene scene;
            scene.shape_class = cat_id;
            const Palette& color = kColors[rng.next_index(std::size(kColors))];
            int size_idx = static_cast<int>(rng.next_index(2));
            int pos_idx = static_cast<int>(rng.next_index(std::size(kPositions)));
            scene.color = color.name;
            scene.size_word = kSizeWords[size_idx];
            scene.position = kPositions[pos_idx];

            int s = size_idx == 0 ? std::max(3, n * 3 / 16) : std::max(5, n * 9 / 32);
            int cx = n / 2, cy = n / 2;
            if (scene.position == "left") cx = n / 4;
            if (scene.position == "right") cx = 3 * n / 4;
            if (scene.position == "top") cy = n / 4;
            if (scene.position == "bottom") cy = 3 * n / 4;
            cx += static_cast<int>(rng.next_index(5)) - 2;
            cy += static_cast<int>(rng.next_index(5)) - 2;
            cx = std::clamp(cx, s + 1, n - s - 2);
            cy = std::clamp(cy, s + 1, n - s - 2);
            // Scene-level nuisance factors: global illumination, a tinted
            // background, and dim off-universe clutter. Captions mention none
            // of them, so encoders must learn to see through them.
            float illum = 0.65f + 0.35f * static_cast<float>(rng.next_unit());
            float tint[3];
            for (float& t : tint) t = 0.04f + 0.10f * static_cast<float>(rng.next_unit());
            int n_clutter = 1 + static_cast<int>(rng.next_index(2));
            struct Blob {
                int kind, cx, cy, s;
                float rgb[3];
            };
            std::vector<Blob> blobs;
            for (int b = 0; b < n_clutter; ++b) {
                Blob blob;
                blob.kind = static_cast<int>(rng.next_index(2));  // disc or box
                const Palette& bc = kColors[rng.next_index(std::size(kColors))];
                blob.s = 2 + static_cast<int>(rng.next_index(2));
                blob.cx = blob.s + 1 +
                          static_cast<int>(rng.next_index(static_cast<size_t>(n - 2 * blob.s - 2)));
                blob.cy = blob.s + 1 +
                          static_cast<int>(rng.next_index(static_cast<size_t>(n - 2 * blob.s - 2)));
                blob.rgb[0] = bc.r * 0.40f;
                blob.rgb[1] = bc.g * 0.40f;
                blob.rgb[2] = bc.b * 0.40f;
                blobs.push_back(blob);
            }

            std::vector<int> order(kNumTemplates);
            for (int t = 0; t < kNumTemplates; ++t) order[static_cast<size_t>(t)] = t;
            rng.shuffle(order);
            for (int t = 0; t < 3; ++t)
                scene.references.push_back(fill_template(kTemplates[order[static_cast<size_t>(t)]],
                                                         name, scene.color, scene.size_word,
                                                         scene.position));

            scene.canvas = Image{3, n, n, {}};
            scene.canvas.data.assign(static_cast<size_t>(3) * n * n, 0.f);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x)
                        scene.canvas.at(c, y, x) =
                            tint[c] + 0.05f * static_cast<float>(rng.next_unit());
            for (const Blob& blob : blobs)
                for (int y = blob.cy - blob.s; y <= blob.cy + blob.s; ++y)
                    for (int x = blob.cx - blob.s; x <= blob.cx + blob.s; ++x) {
                        int dx = x - blob.cx, dy = y - blob.cy;
                        bool hit = blob.kind == 0 ? dx * dx + dy * dy <= blob.s * blob.s : true;
                        if (hit && y >= 0 && y < n && x >= 0 && x < n)
                            for (int c = 0; c < 3; ++c)
                                scene.canvas.at(c, y, x) = blob.rgb[c] * illum;
                    }
            float rgb[3] = {color.r * illum, color.g * illum, color.b * illum};
            for (int y = cy - s; y <= cy + s; ++y)
                for (int x = cx - s; x <= cx + s; ++x)
                    if (y >= 0 && y < n && x >= 0 && x < n && shape_hit(name, x, y, cx, cy, s))
                        for (int c = 0; c < 3; ++c) scene.canvas.at(c, y, x) = rgb[c];

            int id = next_image_id++;
            ImageRecord rec;
            rec.id = id;
            rec.width = n;
            rec.height = n;
            rec.file_name = std::to_string(id) + ".img";
            rec.subset = i < train_per_class ? "train" : "val";
            out.ann.images.push_back(rec);
            for (const auto& ref : scene.references) out.ann.captions.push_back({id, ref});
            out.ann.labels.push_back({id, cat_id});
            out.images.put(id, scene.canvas);
            out.scenes.push_back(std::move(scene));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

void save_manifest(const TaskSpec& task, const std::string& path) {
    ordered_json j;
    j["task_id"] = task.task_id;
    j["class_set"] = task.class_set;
    j["resize_to"] = task.resize_to;
    j["train"] = task.train;
    j["val"] = task.val;
    j["test"] = task.test;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
    os << j.dump(2) << "\n";
}

TaskSpec load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("load_manifest: cannot open " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_manifest: " + path + ": " + e.what());
    }
    TaskSpec t;
    t.task_id = j.at("task_id").get<int>();
    t.class_set = j.at("class_set").get<std::set<int>>();
    t.resize_to = j.at("resize_to").get<int>();
    t.train = j.at("train").get<std::vector<int>>();
    t.val = j.at("val").get<std::vector<int>>();
    t.test = j.at("test").get<std::vector<int>>();
    return t;
}

void save_annotations(const AnnotationSet& ann, const std::string& path) {
    ordered_json j;
    j["images"] = ordered_json::array();
    for (const auto& im : ann.images) {
        ordered_json o;
        o["id"] = im.id;
        o["width"] = im.width;
        o["height"] = im.height;
        o["file_name"] = im.file_name;
        o["split"] = im.subset;
        j["images"].push_back(o);
    }
    j["annotations"] = ordered_json::array();
    int next_ann_id = 1;
    for (const auto& c : ann.captions) {
        ordered_json o;
        o["id"] = next_ann_id++;
        o["image_id"] = c.image_id;
        o["caption"] = c.text;
        j["annotations"].push_back(o);
    }
    for (const auto& l : ann.labels) {
        ordered_json o;
        o["id"] = next_ann_id++;
        o["image_id"] = l.image_id;
        o["category_id"] = l.category_id;
        j["annotations"].push_back(o);
    }
    j["categories"] = ordered_json::array();
    for (const auto& c : ann.categories) {
        ordered_json o;
        o["id"] = c.id;
        o["name"] = c.name;
        j["categories"].push_back(o);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_annotations: cannot open " + path);
    os << j.dump(2) << "\n";
}

} // namespace incap::dataio
