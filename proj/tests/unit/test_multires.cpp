#include <doctest.h>

#include "helpers.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/multires.hpp"

using namespace realdesc;

namespace {

MultiResConfig tiny_cfg(int64_t scale = 2) {
  MultiResConfig c;
  c.base_side = testutil::tiny().image_size();
  c.scale = scale;
  return c;
}

// Row-major crop taken by explicit indexing.
torch::Tensor crop(const torch::Tensor& img, int64_t r, int64_t c, int64_t side) {
  auto out = torch::empty({3, side, side});
  auto src = img.accessor<float, 3>();
  auto dst = out.accessor<float, 3>();
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) dst[ch][y][x] = src[ch][r * side + y][c * side + x];
  return out;
}

}  // namespace

TEST_SUITE("multires") {
  TEST_CASE("slicing follows row-major order and tiling reconstructs bit-exactly") {
    for (int64_t scale : {2, 3, 4}) {
      MultiResConfig cfg;
      cfg.base_side = 8;
      cfg.scale = scale;
      for (int t = 0; t < 10; ++t) {
        const auto img = testutil::random_image(8 * scale, 100 * scale + t);
        const auto slices = slice_image(img, cfg);
        REQUIRE(slices.size() == static_cast<std::size_t>(scale * scale));
        for (int64_t r = 0; r < scale; ++r)
          for (int64_t c = 0; c < scale; ++c)
            CHECK(torch::equal(slices[static_cast<std::size_t>(r * scale + c)].pixels(), crop(img.pixels(), r, c, 8)));
        CHECK(torch::equal(tile_slices(slices, scale).pixels(), img.pixels()));

        const auto batch = slice_batch(img.pixels().unsqueeze(0), scale);
        for (std::size_t i = 0; i < slices.size(); ++i)
          CHECK(torch::equal(batch[static_cast<int64_t>(i)], slices[i].pixels()));
      }
    }
    MultiResConfig cfg;
    cfg.base_side = 8;
    CHECK_THROWS_AS(slice_image(testutil::random_image(20, 1), cfg), ShapeError);
  }

  TEST_CASE("patch-index averaging drops CLS and averages across slices") {
    std::vector<PatchFeatureMap> maps;
    for (int i = 0; i < 4; ++i) maps.emplace_back(testutil::randn({5, 3}, 10 + i));
    const auto avg = average_slice_patches(maps);
    REQUIRE(avg.sizes() == torch::IntArrayRef({4, 3}));
    for (int64_t p = 0; p < 4; ++p)
      for (int64_t w = 0; w < 3; ++w) {
        double s = 0;
        for (const auto& m : maps) s += m.tokens()[p + 1][w].item<double>();
        CHECK(avg[p][w].item<double>() == doctest::Approx(s / 4.0));
      }
  }

  TEST_CASE("spatially remapped averaging pools the assembled global grid") {
    const int64_t scale = 2, g = 2, w = 3;
    std::vector<PatchFeatureMap> maps;
    for (int i = 0; i < 4; ++i) maps.emplace_back(testutil::randn({1 + g * g, w}, 30 + i));
    const auto avg = average_slice_patches_remapped(maps, scale);
    REQUIRE(avg.sizes() == torch::IntArrayRef({g * g, w}));
    // Global cell (Y, X) lives in slice (Y / g, X / g) at patch (Y % g, X % g).
    auto global = [&](int64_t y, int64_t x, int64_t ch) {
      const auto& m = maps[static_cast<std::size_t>((y / g) * scale + x / g)];
      return m.tokens()[1 + (y % g) * g + (x % g)][ch].item<double>();
    };
    for (int64_t py = 0; py < g; ++py)
      for (int64_t px = 0; px < g; ++px)
        for (int64_t ch = 0; ch < w; ++ch) {
          double s = 0;
          for (int64_t dy = 0; dy < scale; ++dy)
            for (int64_t dx = 0; dx < scale; ++dx) s += global(py * scale + dy, px * scale + dx, ch);
          CHECK(avg[py * g + px][ch].item<double>() == doctest::Approx(s / 4.0));
        }
  }

  TEST_CASE("identity-initialized projection passes the origin map through") {
    auto& bb = testutil::tiny();
    auto state = init_extra_layer(bb, tiny_cfg());
    const auto origin = bb.patch_features(testutil::random_image(32, 5));
    const auto avg = testutil::randn({origin.num_tokens() - 1, origin.width()}, 6);
    const auto fused = concat_and_project(avg, origin, *state);
    CHECK(torch::equal(fused.tokens(), origin.tokens()));
    CHECK(state->alpha_value() == doctest::Approx(0.01));
  }

  TEST_CASE("fused map keeps P x width for every scale") {
    auto& bb = testutil::tiny();
    for (int64_t scale : {2, 3}) {
      auto cfg = tiny_cfg(scale);
      auto state = init_extra_layer(bb, cfg);
      MultiResEncoder enc(bb, state, cfg);
      const auto img = testutil::random_image(cfg.input_side(), 40 + scale);
      std::vector<PatchFeatureMap> maps;
      for (const auto& s : slice_image(img, cfg)) maps.push_back(bb.patch_features(s));
      const auto origin = bb.patch_features(ImageTensor(
          torch::nn::functional::avg_pool2d(img.pixels().unsqueeze(0),
                                            torch::nn::functional::AvgPool2dFuncOptions(scale).stride(scale))[0]));
      const auto fused = concat_and_project(average_slice_patches(maps), origin, *state);
      CHECK(fused.num_tokens() == bb.config().vision.num_tokens());
      CHECK(fused.width() == bb.vision_width());
      const auto single = extra_layer_forward(fused, *state, bb);
      const auto batched = enc.enriched_embedding(img.pixels().unsqueeze(0))[0];
      CHECK(testutil::max_rel_diff(batched, single) < 1e-5);
    }
  }

  TEST_CASE("alpha zero reproduces the base embedding of the downscaled image") {
    auto& bb = testutil::tiny();
    auto cfg = tiny_cfg();
    cfg.alpha_init = 0.0;
    MultiResEncoder enc(bb, init_extra_layer(bb, cfg), cfg);
    std::vector<ImageTensor> hi, lo;
    for (int i = 0; i < 100; ++i) {
      hi.push_back(testutil::random_image(64, 700 + i));
      lo.emplace_back(torch::nn::functional::avg_pool2d(hi.back().pixels().unsqueeze(0),
                                                        torch::nn::functional::AvgPool2dFuncOptions(2).stride(2))[0]);
    }
    const auto fused = enc.encode(hi);
    const auto base = bb.encode_images(lo);
    for (int64_t i = 0; i < 100; ++i) CHECK(testutil::max_rel_diff(fused[i], base[i]) <= 1e-6);
  }

  TEST_CASE("blend is the convex combination") {
    const auto a = testutil::randn({4, 8}, 1), b = testutil::randn({4, 8}, 2);
    for (double alpha : {0.0, 0.3, 1.0}) CHECK(torch::allclose(blend(a, b, alpha), a * (1 - alpha) + b * alpha));
    CHECK(torch::equal(blend(a, b, 0.0), a));
    CHECK_THROWS_AS(blend(a, testutil::randn({4, 7}, 3), 0.5), ShapeError);
  }

  TEST_CASE("outputs stay finite over 1000 random images") {
    auto& bb = testutil::tiny();
    auto cfg = tiny_cfg();
    cfg.alpha_init = 0.5;
    MultiResEncoder enc(bb, init_extra_layer(bb, cfg), cfg);
    for (int b = 0; b < 20; ++b) {
      torch::NoGradGuard ng;
      const auto px = testutil::randn({50, 3, 64, 64}, 5000 + b) * (1.0 + b);
      CHECK(torch::isfinite(enc.forward(px)).all().item<bool>());
    }
  }

  TEST_CASE("projection gradient matches central differences") {
    torch::manual_seed(0);
    ExtraLayerState state(8, 2, 16, 5, true, 1e-5, 0.5);
    state->to(torch::kFloat64);
    {
      torch::NoGradGuard ng;
      state->projection->weight.copy_(testutil::randn({8, 16}, 1, torch::kFloat64) * 0.3);
      state->position_embedding.copy_(testutil::randn({5, 8}, 2, torch::kFloat64) * 0.1);
    }
    const auto origin = testutil::randn({2, 5, 8}, 3, torch::kFloat64);
    const auto avg = testutil::randn({2, 4, 8}, 4, torch::kFloat64);
    const auto probe = testutil::randn({2, 8}, 5, torch::kFloat64);
    auto loss_fn = [&] { return (state->layer_forward(state->concat_and_project(avg, origin)) * probe).sum(); };

    state->zero_grad();
    loss_fn().backward();
    const auto analytic = state->projection->weight.grad().clone();

    auto& weight = state->projection->weight;
    const double eps = 1e-6;
    double worst = 0.0;
    for (int64_t r = 0; r < 8; ++r)
      for (int64_t c = 0; c < 16; c += 3) {
        torch::NoGradGuard ng;
        const double w0 = weight[r][c].item<double>();
        weight[r][c].fill_(w0 + eps);
        const double up = loss_fn().item<double>();
        weight[r][c].fill_(w0 - eps);
        const double down = loss_fn().item<double>();
        weight[r][c].fill_(w0);
        const double numeric = (up - down) / (2 * eps);
        const double a = analytic[r][c].item<double>();
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        worst = std::max(worst, rel);
      }
    CHECK(worst < 1e-3);
  }

  TEST_CASE("alpha clamps to [0, 1]") {
    ExtraLayerState s(8, 2, 16, 5, true, 1e-5, 0.5);
    {
      torch::NoGradGuard ng;
      s->alpha.fill_(1.7);
    }
    s->clamp_alpha();
    CHECK(s->alpha_value() == 1.0);
    {
      torch::NoGradGuard ng;
      s->alpha.fill_(-0.2);
    }
    s->clamp_alpha();
    CHECK(s->alpha_value() == 0.0);
  }

  TEST_CASE("extras checkpoints round-trip and reject a mismatched backbone config") {
    auto& bb = testutil::tiny();
    testutil::TempDir tmp("extras");
    auto cfg = tiny_cfg();
    auto state = init_extra_layer(bb, cfg);
    {
      torch::NoGradGuard ng;
      state->projection->weight.add_(0.25);
      state->alpha.fill_(0.3);
    }
    save_extras(tmp / "x", *state, {bb.id(), cfg, 0.3, 12});
    auto [back, meta] = load_extras_for(tmp / "x", bb);
    CHECK(meta.step == 12);
    CHECK(meta.config.scale == 2);
    CHECK(torch::equal(back->projection->weight, state->projection->weight));
    CHECK(back->alpha_value() == doctest::Approx(0.3));

    auto bad = cfg;
    bad.base_side = 48;
    CHECK_THROWS_AS(init_extra_layer(bb, bad), InitError);
    bad.scale = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
}
