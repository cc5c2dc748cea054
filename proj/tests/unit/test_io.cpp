#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <fstream>

#include "helpers.hpp"
#include "json.hpp"
#include "realdesc/benchmarks.hpp"
#include "realdesc/embedding_cache.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/image_io.hpp"
#include "realdesc/mat_reader.hpp"
#include "realdesc/run_config.hpp"
#include "realdesc/safetensors.hpp"

using namespace realdesc;
using nlohmann::json;

namespace {

std::vector<double> as_doubles(const json& j) { return j.get<std::vector<double>>(); }

void touch(const std::filesystem::path& p, const std::string& text = {}) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// A safetensors file assembled byte by byte: 8-byte little-endian header length, JSON header, raw data.
std::string handmade_safetensors() {
  const float a[4] = {1.5f, -2.0f, 0.25f, 8.0f};
  const double b[2] = {3.0, -0.5};
  std::string data(reinterpret_cast<const char*>(a), sizeof a);
  data.append(reinterpret_cast<const char*>(b), sizeof b);
  const std::string header =
      R"({"__metadata__":{"k":"v"},"a":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]},"b":{"dtype":"F64","shape":[2],"data_offsets":[16,32]}})";
  std::string out(8, '\0');
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((n >> (8 * i)) & 0xff);
  return out + header + data;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("MAT reader agrees with scipy for raw and compressed files") {
    const auto expected = json::parse(read_file(testutil::data_dir() / "mat_expected.json"));
    for (const char* name : {"basic_raw.mat", "basic_z.mat"}) {
      const auto vars = mat::read(testutil::data_dir() / name);
      CHECK(vars.at("scalar").scalar() == expected["scalar"].get<double>());
      CHECK(vars.at("ints").numbers == as_doubles(expected["ints"]));
      CHECK(vars.at("matrix").numbers == as_doubles(expected["matrix_colmajor"]));
      CHECK(vars.at("matrix").dims == expected["matrix_dims"].get<std::vector<int64_t>>());
      CHECK(vars.at("u8").numbers == as_doubles(expected["u8"]));
      CHECK(vars.at("word").text == expected["word"].get<std::string>());
      CHECK(vars.at("names").strings() == expected["names"].get<std::vector<std::string>>());
    }
    const auto s = mat::read(testutil::data_dir() / "struct_z.mat");
    const auto& ann = s.at("annotations");
    REQUIRE(ann.kind == mat::Value::Kind::kStruct);
    REQUIRE(ann.elements.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ann.field("fname", i).text == expected["struct"]["fname"][i].get<std::string>());
      CHECK(ann.field("class", i).scalar() == expected["struct"]["class"][i].get<double>());
    }
    CHECK_THROWS_AS(mat::parse(std::string(200, 'x')), DataError);
  }

  TEST_CASE("safetensors reader decodes a handmade file and the writer round-trips") {
    testutil::TempDir tmp("st");
    write_file(tmp / "h.safetensors", handmade_safetensors());
    const auto t = safetensors::load(tmp / "h.safetensors");
    CHECK(torch::equal(t.at("a"), torch::tensor({1.5f, -2.0f, 0.25f, 8.0f}).view({2, 2})));
    CHECK(torch::equal(t.at("b"), torch::tensor({3.0f, -0.5f})));

    const std::map<std::string, torch::Tensor> src = {{"w", testutil::randn({3, 4}, 1)}, {"z", torch::zeros({0})}};
    safetensors::save(tmp / "o.safetensors", src, {{"format", "pt"}});
    const auto back = safetensors::load(tmp / "o.safetensors");
    CHECK(torch::equal(back.at("w"), src.at("w")));
    safetensors::save(tmp / "o2.safetensors", src, {{"format", "pt"}});
    CHECK(read_file(tmp / "o.safetensors") == read_file(tmp / "o2.safetensors"));

    auto bytes = handmade_safetensors();
    write_file(tmp / "trunc.safetensors", bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(safetensors::load(tmp / "trunc.safetensors"), IntegrityError);
    write_file(tmp / "short.safetensors", std::string("\x05\x00", 2));
    CHECK_THROWS_AS(safetensors::load(tmp / "short.safetensors"), IntegrityError);
  }

  TEST_CASE("benchmark names, class lists and placeholders") {
    CHECK(all_benchmarks().size() == 6);
    std::size_t total = 0;
    for (auto b : all_benchmarks()) {
      const auto spec = load_benchmark_spec(b);
      CHECK(spec.class_list.size() == expected_class_count(b));
      CHECK(parse_benchmark(to_string(b)) == b);
      total += spec.class_list.size();
    }
    CHECK(total == 756);
    CHECK(load_benchmark_spec(BenchmarkName::kCub).placeholder("Cardinal") == "bird");
    CHECK(load_benchmark_spec(BenchmarkName::kOxfordPets).placeholder("Pug") == "pet");
    try {
      parse_benchmark("imagenet");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      for (const char* n : {"cub", "flowers102", "cars196", "food101", "dogs120", "oxfordpets"})
        CHECK(msg.find(n) != std::string::npos);
      CHECK(e.exit_code() == ExitCode::kValidation);
    }
  }

  TEST_CASE("text-list adapters read the published layouts") {
    testutil::TempDir tmp("layouts");
    touch(tmp / "pets" / "annotations" / "test.txt", "Abyssinian_100 1 1 1\nyorkshire_terrier_9 37 2 25\n");
    auto pets = load_test_split(load_benchmark_spec(BenchmarkName::kOxfordPets, tmp / "pets"));
    REQUIRE(pets.size() == 2);
    CHECK(pets.label(0) == "Abyssinian");
    CHECK(pets.entries()[1].path == tmp / "pets" / "images" / "yorkshire_terrier_9.jpg");

    touch(tmp / "cub" / "images.txt", "1 001.Black_footed_Albatross/a.jpg\n2 001.Black_footed_Albatross/b.jpg\n3 200.Common_Yellowthroat/c.jpg\n");
    touch(tmp / "cub" / "image_class_labels.txt", "1 1\n2 1\n3 200\n");
    touch(tmp / "cub" / "train_test_split.txt", "1 1\n2 0\n3 0\n");
    auto cub = load_test_split(load_benchmark_spec(BenchmarkName::kCub, tmp / "cub"));
    REQUIRE(cub.size() == 2);
    CHECK(cub.entries()[0].path == tmp / "cub" / "images" / "001.Black_footed_Albatross/b.jpg");
    CHECK(cub.label(1) == load_benchmark_spec(BenchmarkName::kCub).class_list[199]);

    const auto food_classes = load_benchmark_spec(BenchmarkName::kFood101).class_list;
    std::string dirs;
    for (std::size_t i = 0; i < food_classes.size(); ++i) dirs += "dir_" + std::to_string(i) + "\n";
    touch(tmp / "food" / "meta" / "classes.txt", dirs);
    touch(tmp / "food" / "meta" / "test.txt", "dir_0/1011328\ndir_1/2\ndir_0/9\n");
    SplitOptions cap;
    cap.max_per_class = 1;
    auto food = load_test_split(load_benchmark_spec(BenchmarkName::kFood101, tmp / "food"), cap);
    REQUIRE(food.size() == 2);
    CHECK(food.label(0) == food_classes[0]);
    CHECK(food.label(1) == food_classes[1]);

    CHECK_THROWS_AS(load_test_split(load_benchmark_spec(BenchmarkName::kOxfordPets, tmp / "missing")), DataError);
  }

  TEST_CASE("MAT-file adapters read scipy-written layouts") {
    const auto root = testutil::data_dir() / "layouts";
    const auto dogs_classes = load_benchmark_spec(BenchmarkName::kDogs120).class_list;
    auto dogs = load_test_split(load_benchmark_spec(BenchmarkName::kDogs120, root / "dogs120"));
    REQUIRE(dogs.size() == 3);
    CHECK(dogs.label(0) == dogs_classes[0]);
    CHECK(dogs.label(1) == dogs_classes[119]);
    CHECK(dogs.entries()[0].path == root / "dogs120" / "Images" / "n02085620-Chihuahua/n02085620_1.jpg");

    const auto fl = load_benchmark_spec(BenchmarkName::kFlowers102).class_list;
    auto flowers = load_test_split(load_benchmark_spec(BenchmarkName::kFlowers102, root / "flowers102"));
    REQUIRE(flowers.size() == 3);
    CHECK(flowers.label(0) == fl[0]);
    CHECK(flowers.label(1) == fl[101]);
    CHECK(flowers.label(2) == fl[4]);
    CHECK(flowers.entries()[0].path.filename() == "image_00003.jpg");

    const auto cc = load_benchmark_spec(BenchmarkName::kCars196).class_list;
    auto cars = load_test_split(load_benchmark_spec(BenchmarkName::kCars196, root / "cars196"));
    REQUIRE(cars.size() == 2);
    CHECK(cars.label(0) == cc[180]);
    CHECK(cars.label(1) == cc[0]);
    CHECK(cars.entries()[1].path == root / "cars196" / "cars_test" / "00002.jpg");
  }

  TEST_CASE("image folders and preprocessing") {
    testutil::TempDir tmp("folder");
    std::vector<std::uint8_t> px(40 * 60 * 3, 0);
    for (std::size_t i = 0; i < px.size(); i += 3) {
      px[i] = 255;
      px[i + 1] = 128;
      px[i + 2] = 0;
    }
    std::filesystem::create_directories(tmp / "b_class");
    std::filesystem::create_directories(tmp / "a_class");
    save_rgb(tmp / "a_class" / "x.png", px, 40, 60);
    save_rgb(tmp / "b_class" / "y.png", px, 40, 60);
    touch(tmp / "b_class" / "notes.txt", "skip me");
    auto src = load_image_folder(tmp.path());
    REQUIRE(src.size() == 2);
    CHECK(src.label(0) == "a_class");

    Preprocessing prep;
    prep.resize_side = 32;
    prep.crop_side = 32;
    const auto img = src.load(0, prep);
    CHECK(img.side() == 32);
    const auto mean = img.pixels().mean({1, 2});
    CHECK(mean[0].item<double>() == doctest::Approx((1.0 - prep.mean[0]) / prep.std[0]).epsilon(1e-4));
    CHECK(mean[1].item<double>() == doctest::Approx((128.0 / 255.0 - prep.mean[1]) / prep.std[1]).epsilon(1e-3));
    CHECK(mean[2].item<double>() == doctest::Approx((0.0 - prep.mean[2]) / prep.std[2]).epsilon(1e-4));
    CHECK(with_side(prep, 64).crop_side == 64);
  }

  TEST_CASE("configs merge defaults, file and flags, and interpolate the environment") {
    ::setenv("REALDESC_TEST_ROOT", "/data/x", 1);
    ::unsetenv("REALDESC_TEST_UNSET");
    const json file = {{"backbone", "vit-b-16"},
                       {"dataset", "cub"},
                       {"schedule", {{"lr", 2e-5}, {"batch_size", 128}}},
                       {"paths", {{"cub", "${REALDESC_TEST_ROOT}/cub"}, {"other", "${REALDESC_TEST_UNSET:-fallback}"}}}};
    const json flags = {{"backbone", "tiny"}, {"schedule", {{"batch_size", 16}}}};
    const auto cfg = resolve_config(interpolate_env(file), flags);
    CHECK(cfg.backbone == "tiny");
    CHECK(cfg.dataset == "cub");
    CHECK(cfg.schedule.lr == doctest::Approx(2e-5));
    CHECK(cfg.schedule.batch_size == 16);
    CHECK(cfg.schedule.weight_decay == doctest::Approx(0.1));
    CHECK(cfg.path("cub") == "/data/x/cub");
    CHECK(cfg.path("other") == "fallback");
    CHECK(RunConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    CHECK_THROWS_AS(interpolate_env(json{{"p", "${REALDESC_TEST_UNSET}"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config(json::object(), json{{"mode", "sideways"}}), ValidationError);

    for (const char* name : {"toy.json", "paper_vitb16.json", "paper_vitb32.json"}) {
      const auto c = resolve_config(load_config_file(std::filesystem::path(REALDESC_CONFIG_DIR) / name), json::object());
      CHECK_NOTHROW(c.schedule.validate());
    }
  }

  TEST_CASE("embedding cache stores and returns tensors by key") {
    testutil::TempDir tmp("cache");
    EmbeddingCache cache(tmp.path());
    const auto key = EmbeddingCache::key({"tiny", "img:1"});
    CHECK(key == EmbeddingCache::key({"tiny", "img:1"}));
    CHECK(key != EmbeddingCache::key({"tiny", "img:2"}));
    CHECK_FALSE(cache.get(key).has_value());
    const auto t = testutil::randn({4, 8}, 3);
    cache.put(key, t);
    CHECK(cache.contains(key));
    CHECK(torch::equal(*cache.get(key), t));
    EmbeddingCache again(tmp.path());
    CHECK(torch::equal(*again.get(key), t));
  }

  TEST_CASE("error classes carry their exit codes") {
    CHECK(ConfigError("x").exit_code() == ExitCode::kValidation);
    CHECK(ShapeError("x").exit_code() == ExitCode::kValidation);
    CHECK(RegistryError("x").exit_code() == ExitCode::kExternalService);
    CHECK(GenerationError("x").exit_code() == ExitCode::kExternalService);
    CHECK(DataError("x").exit_code() == ExitCode::kData);
    CHECK(IntegrityError("x").exit_code() == ExitCode::kData);
  }
}
