#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "../common/oracles.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/batching.hpp"
#include "realdesc/benchmarks.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/multires.hpp"
#include "realdesc/name_filter.hpp"
#include "realdesc/paco.hpp"
#include "realdesc/probe.hpp"
#include "realdesc/run_config.hpp"
#include "realdesc/toy_world.hpp"
#include "realdesc/training.hpp"
#include "realdesc/zeroshot.hpp"

using namespace realdesc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string sci(double v) {
  std::ostringstream o;
  o << std::scientific << std::setprecision(2) << v;
  return o.str();
}

std::string env(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

// Benchmark root from an explicit variable or $REALDESC_DATA/<dataset>.
std::optional<fs::path> benchmark_root(const char* var, const std::string& dataset) {
  if (!env(var).empty()) return fs::path(env(var));
  if (!env("REALDESC_DATA").empty() && fs::exists(fs::path(env("REALDESC_DATA")) / dataset))
    return fs::path(env("REALDESC_DATA")) / dataset;
  return std::nullopt;
}

DescriptionFile shipped(const std::string& dataset, const std::string& style) {
  return DescriptionFile::load(asset_dir() / "descriptions" / (dataset + "_" + style + ".json"));
}

// Evaluates the three modes of a real benchmark with the vit-b-32 checkpoint,
// or explains what is missing.
struct RealRun {
  std::optional<GapReport> report;
  std::string blocked;
};

RealRun run_real(BenchmarkName bench, const char* root_var, const std::string& style) {
  RealRun r;
  const auto name = to_string(bench);
  const auto root = benchmark_root(root_var, name);
  if (!root) {
    r.blocked = std::string("blocked: dataset not available (set ") + root_var + " or REALDESC_DATA)";
    return r;
  }
  try {
    auto backbone = Backbone::load("vit-b-32");
    const auto split = load_test_split(load_benchmark_spec(bench, *root));
    BackboneImageEncoder enc(backbone);
    EvalOptions opts;
    auto cache = EmbeddingCache::from_env();
    if (cache) opts.cache = &*cache;
    r.report = compare_modes(split, shipped(name, style), backbone, enc, opts);
  } catch (const Error& e) {
    r.blocked = std::string("blocked: ") + e.what();
  }
  return r;
}

Outcome criterion_name_gap(const RealRun& pets) {
  if (!pets.report) return {false, pets.blocked};
  const double with = 100 * pets.report->with_name.top1;
  const double without = 100 * pets.report->no_name.top1;
  const bool ok = std::abs(with - 86.8) <= 3.0 && std::abs(without - 42.9) <= 5.0 && pets.report->gap_points() >= 35.0;
  return {ok, "with_name " + fmt(with) + " (86.8 +/- 3), no_name " + fmt(without) + " (42.9 +/- 5), gap " +
                  fmt(pets.report->gap_points()) + " (>= 35)"};
}

Outcome criterion_columbia_collapse() {
  const auto dogs = run_real(BenchmarkName::kDogs120, "REALDESC_ACCEPT_DOGS_ROOT", "columbia");
  if (!dogs.report) return {false, dogs.blocked};
  const double with = 100 * dogs.report->with_name.top1;
  const double without = 100 * dogs.report->no_name.top1;
  return {without <= 8.0 && with >= 45.0, "no_name " + fmt(without) + " (<= 8.0), with_name " + fmt(with) + " (>= 45.0)"};
}

Outcome criterion_only_name(const RealRun& pets) {
  if (!pets.report) return {false, pets.blocked};
  const double v = 100 * pets.report->only_name.top1;
  return {std::abs(v - 81.6) <= 3.0, "only_name " + fmt(v) + " (81.6 +/- 3)"};
}

Outcome criterion_multires_identity() {
  auto bb = Backbone::load("tiny");
  MultiResConfig cfg;
  cfg.base_side = bb.image_size();
  cfg.alpha_init = 0.0;
  MultiResEncoder enc(bb, init_extra_layer(bb, cfg), cfg);
  std::vector<ImageTensor> hi, lo;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2024);
  for (int i = 0; i < 100; ++i) {
    hi.emplace_back(torch::randn({3, cfg.input_side(), cfg.input_side()}, gen));
    lo.emplace_back(torch::nn::functional::avg_pool2d(
        hi.back().pixels().unsqueeze(0), torch::nn::functional::AvgPool2dFuncOptions(cfg.scale).stride(cfg.scale))[0]);
  }
  const auto fused = enc.encode(hi).to(torch::kFloat64);
  const auto base = bb.encode_images(lo).to(torch::kFloat64);
  double worst = 0;
  for (int64_t i = 0; i < 100; ++i)
    worst = std::max(worst, ((fused[i] - base[i]).abs().max() / base[i].abs().max()).item<double>());

  bool exact = true;
  for (int64_t scale : {2, 3, 4}) {
    MultiResConfig c;
    c.base_side = 8;
    c.scale = scale;
    for (int t = 0; t < 10; ++t) {
      const ImageTensor img(torch::randn({3, 8 * scale, 8 * scale}, gen));
      exact = exact && torch::equal(tile_slices(slice_image(img, c), scale).pixels(), img.pixels());
    }
  }
  return {worst <= 1e-6 && exact, "max relative diff " + sci(worst) + " (<= 1e-6) over 100 images; tiling " +
                                       (exact ? "bit-exact" : "NOT exact")};
}

Outcome criterion_gradient_isolation() {
  auto bb = Backbone::load("tiny");
  const auto before = bb.state();
  auto world = toy::make_world(8, 2, 3);
  std::vector<CaptionPair> captions;
  for (std::size_t i = 0; i < world.train.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) captions.push_back({toy::image_ref(i, 100 + k), toy::describe(world.train[i])[k]});
  MultiResConfig cfg;
  cfg.base_side = bb.image_size();
  auto extras = init_extra_layer(bb, cfg);
  ScheduleSpec sched;
  sched.lr = 1e-3;
  sched.batch_size = 8;
  sched.warmup_steps = 1;
  sched.total_steps = 10;
  FinetuneOptions opts;
  opts.resolver = toy::resolver(world.train, 64);
  opts.track_frozen_gradients = true;
  const auto art = pretrain_extras(extras, bb, cfg, captions, sched, opts);
  bool unchanged = true;
  for (const auto& [name, t] : bb.state()) unchanged = unchanged && torch::equal(t, before.at(name));

  torch::manual_seed(0);
  ExtraLayerState state(8, 2, 16, 5, true, 1e-5, 0.5);
  state->to(torch::kFloat64);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
  auto opt64 = torch::TensorOptions().dtype(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    state->projection->weight.copy_(torch::randn({8, 16}, gen, opt64) * 0.3);
  }
  const auto origin = torch::randn({2, 5, 8}, gen, opt64);
  const auto avg = torch::randn({2, 4, 8}, gen, opt64);
  const auto probe = torch::randn({2, 8}, gen, opt64);
  auto loss_fn = [&] { return (state->layer_forward(state->concat_and_project(avg, origin)) * probe).sum(); };
  state->zero_grad();
  loss_fn().backward();
  const auto analytic = state->projection->weight.grad().clone();
  auto& w = state->projection->weight;
  double worst = 0;
  const double eps = 1e-6;
  for (int64_t r = 0; r < 8; ++r)
    for (int64_t c = 0; c < 16; ++c) {
      torch::NoGradGuard ng;
      const double w0 = w[r][c].item<double>();
      w[r][c].fill_(w0 + eps);
      const double up = loss_fn().item<double>();
      w[r][c].fill_(w0 - eps);
      const double down = loss_fn().item<double>();
      w[r][c].fill_(w0);
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[r][c].item<double>();
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  const bool ok = art.steps_completed == 10 && art.max_frozen_gradient == 0.0 && unchanged && worst < 1e-3;
  return {ok, "max frozen |grad| " + fmt(art.max_frozen_gradient, 1) + " over " + std::to_string(art.steps_completed) +
                  " steps, backbone " + (unchanged ? "unchanged" : "CHANGED") + ", finite-difference rel err " +
                  sci(worst) + " (< 1e-3)"};
}

Outcome criterion_batching() {
  std::vector<int64_t> cls;
  for (int64_t c = 0; c < 100; ++c)
    for (int k = 0; k < 5; ++k) cls.push_back(c);
  const int64_t rounds = 400;
  const auto batches = unique_class_batches(cls, 32, 17, rounds);
  std::size_t duplicates = 0;
  std::vector<double> counts(100, 0.0);
  for (const auto& b : batches) {
    std::set<int64_t> seen;
    for (auto i : b) {
      seen.insert(cls[i]);
      counts[static_cast<std::size_t>(cls[i])] += 1;
    }
    duplicates += seen.size() != b.size();
  }
  const double chi2 = oracle::visit_chi2(counts, rounds, 28.0);
  const double bound = 3.0 * std::sqrt(2.0 * 99.0);
  const bool ok = duplicates == 0 && std::abs(chi2 - 99.0) <= bound;
  return {ok, std::to_string(batches.size()) + " batches, " + std::to_string(duplicates) +
                  " with duplicate classes; chi2 " + fmt(chi2) + " vs 99 +/- " + fmt(bound)};
}

Outcome criterion_certification() {
  std::size_t residuals = 0, files = 0, sentences = 0;
  for (auto b : all_benchmarks())
    for (const char* style : {"oxford", "columbia"}) {
      const auto file = shipped(to_string(b), style);
      const auto report = verify_name_free(file);
      residuals += report.residuals.size();
      sentences += report.sentences_checked;
      for (const auto& c : file.classes())
        for (const auto& s : c.name_free_sentences) residuals += oracle::naive_mentions(s, c.class_name, c.placeholder);
      ++files;
    }
  std::vector<std::pair<std::string, std::string>> classes;
  for (auto b : all_benchmarks()) {
    const auto spec = load_benchmark_spec(b);
    for (const auto& c : spec.class_list) classes.emplace_back(c, spec.placeholder(c));
  }
  Rng rng(8675309);
  std::size_t leaks = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto& [name, placeholder] = classes[rng.below(classes.size())];
    const auto& frames = oracle::injection_frames();
    const auto out = filter_name(name, oracle::inject(frames[rng.below(frames.size())], name, rng), placeholder);
    leaks += oracle::naive_mentions(out, name, placeholder) || NameMatcher(name, placeholder).contains(out);
  }
  return {residuals == 0 && leaks == 0 && files == 12,
          std::to_string(residuals) + " residuals in " + std::to_string(sentences) + " sentences of " +
              std::to_string(files) + " files; " + std::to_string(leaks) + " leaks in 1000 injections"};
}

Outcome criterion_protocol_oracles() {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(31);
  int argmax_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const int64_t n = 2 + t % 20;
    PrototypeIndex idx;
    for (int64_t c = 0; c < n; ++c) idx.classes.push_back("c" + std::to_string(c));
    idx.prototypes = torch::nn::functional::normalize(torch::randn({n, 16}, gen),
                                                      torch::nn::functional::NormalizeFuncOptions().dim(1));
    const auto img = torch::randn({16}, gen);
    argmax_mismatch += classify(img, idx).index != oracle::brute_argmax(img, idx.prototypes);
  }

  static const std::vector<std::string> vocab = {"red", "blue", "green", "black", "white", "brown",
                                                 "gray", "pink", "orange", "yellow", "purple", "tan"};
  Rng rng(4242);
  const auto scorer = oracle::hashed_scorer(99);
  int topk_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    PacoRecord r;
    r.image_ref = "img" + std::to_string(t);
    r.object = "mug";
    r.part = "handle";
    r.attribute_type = AttributeType::kColor;
    const std::size_t n = 3 + rng.below(vocab.size() - 2);
    r.candidate_values.assign(vocab.begin(), vocab.begin() + static_cast<std::ptrdiff_t>(n));
    auto shuffled = r.candidate_values;
    rng.shuffle(shuffled);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(4, n));
    r.positive_values.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
    const auto pred = paco_predict(r.image_ref, r, scorer);
    std::vector<std::string> prompts;
    for (const auto& v : r.candidate_values) prompts.push_back(paco_prompt(r, v));
    std::set<std::string> want;
    for (auto i : oracle::exhaustive_top_k(scorer.score(r.image_ref, prompts), r.k())) want.insert(r.candidate_values[i]);
    topk_mismatch += std::set<std::string>(pred.begin(), pred.end()) != want;
  }

  ProbeRecord p;
  p.class_name = "Cardinal";
  p.element = "crest";
  p.kind = AttributeKind::kColor;
  p.positive = "A bird with red crest";
  p.negatives = {"A bird with blue crest", "A bird with green crest", "A bird with black crest",
                 "A bird with white crest", "A bird with gray crest"};
  for (int i = 0; i < 10000; ++i) p.image_set.push_back("img" + std::to_string(i));
  const double acc = probe_evaluate({p}, oracle::hashed_scorer(123)).overall();
  const double sigma = std::sqrt((1.0 / 6.0) * (5.0 / 6.0) / 10000.0);
  const bool random_ok = std::abs(acc - 1.0 / 6.0) <= 3 * sigma;
  return {argmax_mismatch == 0 && topk_mismatch == 0 && random_ok,
          "argmax mismatches " + std::to_string(argmax_mismatch) + "/100, top-k mismatches " +
              std::to_string(topk_mismatch) + "/1000, random probe " + fmt(acc, 4) + " (0.1667 +/- " +
              fmt(3 * sigma, 4) + ")"};
}

Outcome criterion_miniature_finetune() {
  constexpr std::size_t kTrain = 50, kEval = 20;
  constexpr std::uint64_t kSeed = 7;
  const auto cfg = resolve_config(load_config_file(fs::path(REALDESC_CONFIG_DIR) / "toy.json"), nlohmann::json::object());
  auto world = toy::make_world(kTrain, kEval, kSeed);
  toy::Catalog catalog(world.all, static_cast<std::size_t>(cfg.curation.k_images), cfg.seed);
  CurationSpec spec = cfg.curation;
  spec.classes.clear();
  for (const auto& c : world.train) spec.classes.push_back(c.name);
  for (const auto& c : world.eval) spec.excluded_classes.insert(normalize_class_key(c.name));
  const auto manifest = curate(spec, toy::description_file(world.all), catalog);

  const auto eval_file = toy::description_file(world.eval);
  const toy::Source eval_src(world.eval, 10, cfg.seed + 1000);
  auto bb = Backbone::load(cfg.backbone);
  auto no_name = [&] {
    BackboneImageEncoder enc(bb);
    return evaluate_dataset(eval_src, build_prototypes(eval_file, EvalMode::kNoName, bb), enc).top1;
  };
  const double before = no_name();

  FinetuneOptions opts;
  opts.resolver = toy::resolver(world.all);
  opts.seed = cfg.seed;
  const auto art = finetune(bb, nullptr, nullptr, manifest, cfg.schedule, cfg.freeze, opts);
  const double after = no_name();
  const std::size_t window = 20;
  const double head = art.head_mean(window), tail = art.tail_mean(window);
  const double drop = 1.0 - tail / head;
  const bool ok = art.steps_completed == 200 && drop >= 0.20 && 100 * (after - before) >= -1.0;
  return {ok, std::to_string(art.steps_completed) + " steps on " + std::to_string(kTrain) +
                  " classes; smoothed loss " + fmt(head, 3) + " -> " + fmt(tail, 3) + " (" + fmt(100 * drop, 1) +
                  "% drop, need >= 20%); no_name on " + std::to_string(kEval) + " held-out classes " +
                  fmt(100 * before) + " -> " + fmt(100 * after) + " (may not drop > 1 point)"};
}

}  // namespace

int main() {
  log::set_level("warn");
  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
  };
  std::optional<RealRun> pets;
  auto pets_run = [&]() -> const RealRun& {
    if (!pets) pets = run_real(BenchmarkName::kOxfordPets, "REALDESC_ACCEPT_PETS_ROOT", "oxford");
    return *pets;
  };
  const std::vector<Criterion> criteria = {
      {1, "name-gap reproduction, oxfordpets vit-b-32 oxford", [&] { return criterion_name_gap(pets_run()); }},
      {2, "columbia-style collapse, dogs120 vit-b-32", criterion_columbia_collapse},
      {3, "only-name sanity, oxfordpets vit-b-32", [&] { return criterion_only_name(pets_run()); }},
      {4, "multi-res identity at alpha 0", criterion_multires_identity},
      {5, "gradient isolation of pretrain_extras", criterion_gradient_isolation},
      {6, "unique-class batching", criterion_batching},
      {7, "name-free certification", criterion_certification},
      {8, "protocol oracles", criterion_protocol_oracles},
      {9, "miniature fine-tune substitute", criterion_miniature_finetune},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " (" << fmt(secs, 1)
              << " s)" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
