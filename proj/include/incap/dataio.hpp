#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace incap::dataio {

struct ImageRecord {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;
    std::string subset;  // "train" or "val"; the val pool is later halved into val/test
};

struct CaptionRecord {
    int image_id = 0;
    std::string text;
};

struct LabelRecord {
    int image_id = 0;
    int category_id = 0;
};

struct Category {
    int id = 0;
    std::string name;
};

// COCO-style annotation bundle: images, their reference captions, their
// class labels and the declared class universe.
struct AnnotationSet {
    std::vector<ImageRecord> images;
    std::vector<CaptionRecord> captions;
    std::vector<LabelRecord> labels;
    std::vector<Category> categories;

    std::set<int> class_universe() const;
    std::vector<std::string> captions_of(int image_id) const;
    std::set<int> labels_of(int image_id) const;
    const ImageRecord* find_image(int image_id) const;
    int category_id_by_name(const std::string& name) const;  // -1 when absent
};

// One incremental task: its classes and train/val/test image ids.
struct TaskSpec {
    int task_id = 0;
    std::set<int> class_set;
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
    int resize_to = 0;
};

struct SplitResult {
    std::vector<TaskSpec> tasks;
    std::vector<std::string> warnings;  // e.g. classes skipped for having no images
};

// Dense channels x H x W array with values in [0, 1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    float at(int c, int y, int x) const {
        return data[static_cast<size_t>((c * height + y) * width + x)];
    }
    float& at(int c, int y, int x) {
        return data[static_cast<size_t>((c * height + y) * width + x)];
    }
    bool operator==(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width && data == o.data;
    }
};

// Nearest-neighbor is used for synthetic canvases, bilinear for photographs.
Image resize_nearest(const Image& img, int size);
Image resize_bilinear(const Image& img, int size);

class ImageStore {
  public:
    void put(int image_id, Image img) { by_id_[image_id] = std::move(img); }
    bool contains(int image_id) const { return by_id_.count(image_id) > 0; }
    const Image& get(int image_id) const;
    size_t size() const { return by_id_.size(); }
    const std::map<int, Image>& all() const { return by_id_; }

    void save_dir(const std::string& dir) const;  // one <id>.img file per image
    static ImageStore load_dir(const std::string& dir);

  private:
    std::map<int, Image> by_id_;
};

struct SyntheticScene {
    Image canvas;
    int shape_class = 0;
    std::string color;
    std::string size_word;
    std::string position;
    std::vector<std::string> references;
};

struct SyntheticResult {
    AnnotationSet ann;
    ImageStore images;
    std::vector<SyntheticScene> scenes;
};

// Shape universe for the synthetic dataset; category_id = position + 1.
const std::vector<std::string>& synthetic_shape_names();

// Parse a COCO-caption-style file ("images", "annotations", "categories").
// Annotation records carrying "caption" become captions, records carrying
// "category_id" become class labels; unknown fields are ignored. Images
// without an explicit "split" field get default_subset.
AnnotationSet load_annotations(const std::string& path, const std::string& default_subset = "train");

// Union of two bundles. Duplicate image ids must agree on their record.
AnnotationSet merge_annotations(const AnnotationSet& a, const AnnotationSet& b);

// Keep exactly the images whose labeled classes, intersected with the
// universe, have cardinality 1. Captions and labels of dropped images go too,
// and surviving images keep only their in-universe label.
AnnotationSet filter_clear_images(const AnnotationSet& ann, const std::set<int>& class_universe);

// Build one TaskSpec per class. The input must already be clear-filtered.
// Train images keep their pool; each class's val pool is sorted by image id
// ascending and halved: first ceil(n/2) to val, the rest to test.
SplitResult build_split(const AnnotationSet& ann, const std::vector<int>& class_ordering,
                        int resize_to);

// Procedural scenes: one shape per canvas (clear by construction), colored and
// placed from the seeded stream, each with templated reference captions that
// name the shape. Identical seeds give byte-identical results.
SyntheticResult generate_synthetic(const std::vector<std::string>& class_names, int n_per_class,
                                   uint64_t seed, int canvas_size = 32);

// Task manifest files: stable key order so reruns diff clean.
void save_manifest(const TaskSpec& task, const std::string& path);
TaskSpec load_manifest(const std::string& path);

void save_annotations(const AnnotationSet& ann, const std::string& path);

} // namespace incap::dataio
