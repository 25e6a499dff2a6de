#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "incap/dataio.hpp"
#include "incap/error.hpp"

using namespace incap;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) {
    return std::string(INCAP_FIXTURE_DIR) + "/" + name;
}

std::string write_temp(const std::string& name, const std::string& content) {
    auto dir = fs::temp_directory_path() / "incap_dataio_test";
    fs::create_directories(dir);
    auto p = dir / name;
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p.string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Full deterministic serialization of a synthetic result, for byte-equality.
std::string serialize_synth(const dataio::SyntheticResult& r) {
    std::ostringstream os;
    for (const auto& im : r.ann.images) os << im.id << "," << im.subset << ";";
    for (const auto& c : r.ann.captions) os << c.image_id << ":" << c.text << ";";
    for (const auto& l : r.ann.labels) os << l.image_id << "=" << l.category_id << ";";
    for (const auto& [id, img] : r.images.all()) {
        os << id << "|";
        os.write(reinterpret_cast<const char*>(img.data.data()),
                 static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    }
    return os.str();
}

} // namespace

TEST_CASE("load_annotations ingests a COCO-style fixture") {
    auto ann = dataio::load_annotations(fixture("coco_small.json"));
    CHECK(ann.images.size() == 3);
    CHECK(ann.captions.size() == 6);
    CHECK(ann.labels.size() == 3);
    CHECK(ann.categories.size() == 3);
    CHECK(ann.category_id_by_name("dog") == 18);
    CHECK(ann.captions_of(1).size() == 2);
    CHECK(ann.labels_of(3) == std::set<int>{18});
}

TEST_CASE("load_annotations rejects dangling references") {
    std::string p = write_temp("dangling.json", R"({
      "images": [{"id": 1, "file_name": "a.jpg"}],
      "annotations": [{"id": 1, "image_id": 99, "caption": "missing"}],
      "categories": []
    })");
    CHECK_THROWS_AS(dataio::load_annotations(p), ValidationError);
}

TEST_CASE("load_annotations accepts empty annotation arrays") {
    std::string p = write_temp("empty.json", R"({
      "images": [{"id": 1, "file_name": "a.jpg"}],
      "annotations": [],
      "categories": []
    })");
    auto ann = dataio::load_annotations(p);
    CHECK(ann.images.size() == 1);
    CHECK(ann.captions.empty());
}

TEST_CASE("load_annotations reports parse failures") {
    std::string p = write_temp("broken.json", "{ not json");
    CHECK_THROWS_AS(dataio::load_annotations(p), ParseError);
    std::string p2 = write_temp("noid.json", R"({"images": [{"file_name": "a.jpg"}]})");
    CHECK_THROWS_AS(dataio::load_annotations(p2), ParseError);
}

TEST_CASE("filter_clear_images keeps single-class images only") {
    auto ann = dataio::load_annotations(fixture("coco_split.json"));
    std::set<int> universe = {17, 18, 34};  // grass (99) is declared but outside
    auto clear = dataio::filter_clear_images(ann, universe);

    auto has = [&clear](int id) { return clear.find_image(id) != nullptr; };
    CHECK(has(1));        // dog only
    CHECK_FALSE(has(2));  // dog + frisbee, both in universe
    CHECK(has(4));        // dog + grass, grass not in universe
    CHECK(clear.labels_of(4) == std::set<int>{18});
    CHECK(clear.captions_of(2).empty());

    // idempotence
    auto twice = dataio::filter_clear_images(clear, universe);
    CHECK(twice.images.size() == clear.images.size());
    CHECK(twice.captions.size() == clear.captions.size());
    CHECK(twice.labels.size() == clear.labels.size());
}

TEST_CASE("build_split halves validation pools deterministically") {
    auto ann = dataio::load_annotations(fixture("coco_split.json"));
    auto clear = dataio::filter_clear_images(ann, {17, 18, 34});
    auto split = dataio::build_split(clear, {18, 17}, 224);
    REQUIRE(split.tasks.size() == 2);

    const auto& dog = split.tasks[0];
    CHECK(dog.class_set == std::set<int>{18});
    CHECK(dog.train == std::vector<int>{1, 4});
    CHECK(dog.val == std::vector<int>{5, 6});   // pool {5,6,7,9} -> first ceil(4/2)
    CHECK(dog.test == std::vector<int>{7, 9});
    CHECK(dog.resize_to == 224);

    const auto& cat = split.tasks[1];
    CHECK(cat.val == std::vector<int>{11, 12, 13});  // 5 -> 3 val, 2 test
    CHECK(cat.test == std::vector<int>{14, 15});
    CHECK(cat.train == std::vector<int>{3, 17});

    // val/test partition the pool and differ in size by at most one
    for (const auto& t : split.tasks)
        CHECK(std::abs(static_cast<int>(t.val.size()) - static_cast<int>(t.test.size())) <= 1);
}

TEST_CASE("build_split skips empty classes with a warning") {
    auto ann = dataio::load_annotations(fixture("coco_split.json"));
    auto clear = dataio::filter_clear_images(ann, {17, 18, 34});
    auto split = dataio::build_split(clear, {18, 21}, 224);  // 21 has no images
    CHECK(split.tasks.size() == 1);
    REQUIRE(split.warnings.size() == 1);
    CHECK(split.warnings[0].find("21") != std::string::npos);
}

TEST_CASE("build_split rejects unclear input") {
    auto ann = dataio::load_annotations(fixture("coco_split.json"));
    CHECK_THROWS_AS(dataio::build_split(ann, {18, 17}, 224), ContractViolation);
}

TEST_CASE("generate_synthetic is constructive and clear") {
    auto r = dataio::generate_synthetic({"square"}, 3, 7);
    CHECK(r.scenes.size() == 3);
    CHECK(r.ann.images.size() == 3);
    for (const auto& s : r.scenes) {
        CHECK(s.shape_class == r.ann.category_id_by_name("square"));
        CHECK(s.references.size() >= 2);
        for (const auto& ref : s.references)
            CHECK(ref.find("square") != std::string::npos);
        for (float v : s.canvas.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("generate_synthetic is byte identical for a fixed seed") {
    auto a = dataio::generate_synthetic({"square", "circle"}, 5, 7);
    auto b = dataio::generate_synthetic({"square", "circle"}, 5, 7);
    CHECK(serialize_synth(a) == serialize_synth(b));
    auto c = dataio::generate_synthetic({"square", "circle"}, 5, 8);
    CHECK(serialize_synth(a) != serialize_synth(c));
}

TEST_CASE("synthetic scenes survive the clear filter untouched") {
    auto r = dataio::generate_synthetic({"square", "circle"}, 100, 1);
    auto filtered = dataio::filter_clear_images(r.ann, r.ann.class_universe());
    CHECK(filtered.images.size() == r.ann.images.size());
    CHECK(filtered.captions.size() == r.ann.captions.size());
}

TEST_CASE("train splits of disjoint classes never share an image") {
    auto r = dataio::generate_synthetic({"square", "circle", "triangle"}, 9, 5);
    auto split = dataio::build_split(r.ann, {1, 2, 3}, 32);
    std::set<int> seen;
    for (const auto& t : split.tasks)
        for (int id : t.train) CHECK(seen.insert(id).second);
}

TEST_CASE("generate_synthetic validates its inputs") {
    CHECK_THROWS_AS(dataio::generate_synthetic({"blob"}, 5, 1), ConfigError);
    CHECK_THROWS_AS(dataio::generate_synthetic({"square"}, 2, 1), ContractViolation);
}

TEST_CASE("manifest files round trip with stable key order") {
    dataio::TaskSpec t;
    t.task_id = 3;
    t.class_set = {4, 9};
    t.train = {1, 2};
    t.val = {5};
    t.test = {6};
    t.resize_to = 64;
    auto dir = fs::temp_directory_path() / "incap_manifest_test";
    fs::create_directories(dir);
    std::string p1 = (dir / "m1.json").string();
    std::string p2 = (dir / "m2.json").string();
    dataio::save_manifest(t, p1);
    auto back = dataio::load_manifest(p1);
    CHECK(back.task_id == t.task_id);
    CHECK(back.class_set == t.class_set);
    CHECK(back.train == t.train);
    CHECK(back.val == t.val);
    CHECK(back.test == t.test);
    CHECK(back.resize_to == t.resize_to);
    dataio::save_manifest(back, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));
    fs::remove_all(dir);
}

TEST_CASE("image store round trips through a directory") {
    auto r = dataio::generate_synthetic({"cross"}, 3, 2, 16);
    auto dir = fs::temp_directory_path() / "incap_store_test";
    fs::remove_all(dir);
    r.images.save_dir(dir.string());
    auto loaded = dataio::ImageStore::load_dir(dir.string());
    REQUIRE(loaded.size() == r.images.size());
    for (const auto& [id, img] : r.images.all()) CHECK(loaded.get(id) == img);
    fs::remove_all(dir);
}

TEST_CASE("resize helpers preserve shape and range") {
    auto r = dataio::generate_synthetic({"ring"}, 3, 9, 32);
    const auto& img = r.images.get(1);
    auto near16 = dataio::resize_nearest(img, 16);
    auto bil16 = dataio::resize_bilinear(img, 16);
    CHECK(near16.height == 16);
    CHECK(bil16.width == 16);
    for (float v : bil16.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // no-op resize returns the identical pixels
    CHECK(dataio::resize_nearest(img, 32) == img);
}
