#include <doctest.h>

#include "helpers.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/registry.hpp"
#include "realdesc/tokenizer.hpp"

using namespace realdesc;

namespace {

std::string words(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += "w" + std::to_string(i) + " ";
  return s;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("encoding is bitwise deterministic across calls and fresh loads") {
    auto& bb = testutil::tiny();
    const auto img = testutil::random_image(32, 1);
    CHECK(torch::equal(bb.encode_image(img), bb.encode_image(img)));
    CHECK(torch::equal(bb.encode_text("a small red bird"), bb.encode_text("a small red bird")));
    auto other = testutil::fresh_tiny();
    CHECK(torch::equal(bb.encode_image(img), other.encode_image(img)));
    CHECK(torch::equal(bb.state().at("logit_scale"), other.state().at("logit_scale")));
  }

  TEST_CASE("image and text embeddings have the declared size and cosines lie in [-1, 1]") {
    auto& bb = testutil::tiny();
    std::vector<ImageTensor> imgs;
    for (int i = 0; i < 8; ++i) imgs.push_back(testutil::random_image(32, 10 + i));
    const auto ie = bb.encode_images(imgs);
    const auto te = bb.encode_texts({"one", "two words", "a longer sentence about a bird"});
    CHECK(ie.sizes() == torch::IntArrayRef({8, bb.embed_dim()}));
    CHECK(te.sizes() == torch::IntArrayRef({3, bb.embed_dim()}));
    for (int64_t i = 0; i < 8; ++i)
      for (int64_t j = 0; j < 3; ++j) {
        const double c = testutil::cosine(testutil::row(ie, i), testutil::row(te, j));
        CHECK(c <= 1.0 + 1e-9);
        CHECK(c >= -1.0 - 1e-9);
      }
  }

  TEST_CASE("batched encoding matches single calls") {
    auto& bb = testutil::tiny();
    std::vector<ImageTensor> imgs;
    for (int i = 0; i < 5; ++i) imgs.push_back(testutil::random_image(32, 40 + i));
    const auto batch = bb.encode_images(imgs);
    for (int64_t i = 0; i < 5; ++i)
      CHECK(testutil::max_rel_diff(batch[i], bb.encode_image(imgs[static_cast<std::size_t>(i)])) < 1e-5);
    const std::vector<std::string> texts = {"short", "a somewhat longer text", "x y z"};
    const auto tb = bb.encode_texts(texts);
    for (int64_t i = 0; i < 3; ++i)
      CHECK(testutil::max_rel_diff(tb[i], bb.encode_text(texts[static_cast<std::size_t>(i)])) < 1e-5);
  }

  TEST_CASE("over-long text embeds exactly like its 75-token prefix") {
    auto& bb = testutil::tiny();
    const auto seq = bb.tokenizer().encode(words(120));
    CHECK(seq.truncated);
    CHECK(seq.ids.size() == 77);
    CHECK(seq.ids.front() == bb.tokenizer().bos_id());
    CHECK(seq.ids.back() == bb.tokenizer().eos_id());
    CHECK(torch::equal(bb.encode_text(words(120)), bb.encode_text(words(75))));
    CHECK_FALSE(torch::equal(bb.encode_text(words(75)), bb.encode_text(words(74))));
    CHECK_FALSE(bb.tokenizer().encode(words(75)).truncated);
  }

  TEST_CASE("patch features have one CLS row plus one row per patch") {
    auto& bb = testutil::tiny();
    const auto pf = bb.patch_features(testutil::random_image(32, 3));
    CHECK(pf.num_tokens() == 1 + (32 / 8) * (32 / 8));
    CHECK(pf.width() == bb.vision_width());
    CHECK(pf.patches().size(0) == pf.num_tokens() - 1);
    CHECK_THROWS_AS(bb.encode_image(testutil::random_image(40, 3)), ShapeError);
  }

  TEST_CASE("freeze policy reaches exactly the named groups") {
    auto bb = testutil::fresh_tiny();
    FreezePolicy p;
    p.text_encoder_trainable = false;
    p.image = ImageLayers::last_k(1);
    const auto report = apply_freeze_policy(bb, p);
    const auto groups = report.trainable_groups();
    CHECK(groups == std::vector<std::string>{"vision.layers.1"});

    const std::vector<ImageTensor> imgs = {testutil::random_image(32, 5)};
    auto [ids, eos] = bb.token_batch(std::vector<std::string>{"a bird"});
    const auto loss = (bb.model().encode_pixels(bb.pixel_batch(imgs)) * bb.model().encode_tokens(ids, eos)).sum();
    loss.backward();
    for (const auto& item : bb.model().named_parameters()) {
      const bool trainable = parameter_group(item.key()) == "vision.layers.1";
      CHECK_MESSAGE(item.value().requires_grad() == trainable, item.key());
      if (!trainable) CHECK_MESSAGE(!item.value().grad().defined(), item.key());
    }

    CHECK(ImageLayers::parse("last_k(2)").k == 2);
    CHECK(ImageLayers::parse("last_3").k == 3);
    CHECK(ImageLayers::parse("all").kind == ImageLayers::Kind::kAll);
    CHECK_THROWS_AS(ImageLayers::parse("some"), ValidationError);
    p.image = ImageLayers::last_k(5);
    CHECK_THROWS_AS(apply_freeze_policy(bb, p), ValidationError);
  }

  TEST_CASE("a saved checkpoint reloads with identical weights and preprocessing") {
    testutil::TempDir tmp("ckpt");
    auto& bb = testutil::tiny();
    bb.save(tmp.path());
    auto back = Backbone::load(tmp.path().string());
    for (const auto& [name, t] : bb.state()) CHECK_MESSAGE(torch::equal(t, back.state().at(name)), name);
    CHECK(back.preprocessing().crop_side == 32);
    CHECK(back.preprocessing().mean[0] == doctest::Approx(0.5));
    const auto img = testutil::random_image(32, 8);
    CHECK(torch::equal(bb.encode_image(img), back.encode_image(img)));
  }

  TEST_CASE("registry aliases resolve and unknown identifiers fail offline") {
    CHECK(ModelRegistry::canonical_id("tiny") == ModelRegistry::kTiny);
    CHECK(ModelRegistry::known("tiny")->builtin);
    CHECK(ModelRegistry::known("vit-b-16")->config.vision.patch_size == 16);
    CHECK(ModelRegistry::known("vit-b-32")->config.vision.patch_size == 32);
    ::setenv("REALDESC_OFFLINE", "1", 1);
    ::setenv("REALDESC_MODEL_CACHE", "/nonexistent/realdesc-cache", 1);
    CHECK_THROWS_AS(Backbone::load("someone/not-a-model"), RegistryError);
    ::unsetenv("REALDESC_OFFLINE");
    ::unsetenv("REALDESC_MODEL_CACHE");
  }

  TEST_CASE("CLIP pre-tokenizer splits words, contractions, digits and symbols") {
    CHECK(BpeTokenizer::pre_tokenize("A  bird's 42 wings!!") ==
          std::vector<std::string>{"a", "bird", "'s", "4", "2", "wings", "!!"});
  }
}
