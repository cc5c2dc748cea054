#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "json.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/benchmarks.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/embedding_cache.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/llm.hpp"
#include "realdesc/log.hpp"
#include "realdesc/multires.hpp"
#include "realdesc/paco.hpp"
#include "realdesc/probe.hpp"
#include "realdesc/run_config.hpp"
#include "realdesc/scorer.hpp"
#include "realdesc/toy_world.hpp"
#include "realdesc/training.hpp"
#include "realdesc/util.hpp"
#include "realdesc/zeroshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace realdesc;

namespace {

constexpr std::size_t kToyTrain = 50;
constexpr std::size_t kToyEval = 20;
constexpr std::uint64_t kToySeed = 7;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool dry_run = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_flag("--dry-run", c.dry_run, "Validate and print the resolved plan without executing");
}

RunConfig resolve(const Common& c, json overrides) {
  json file = c.config.empty() ? json::object() : load_config_file(c.config);
  if (c.seed_opt && c.seed_opt->count()) overrides["seed"] = c.seed;
  return resolve_config(file, overrides);
}

void print_plan(const std::string& command, const RunConfig& cfg, const json& extra) {
  json plan = {{"command", command}, {"config", cfg.to_json()}};
  for (const auto& [k, v] : extra.items()) plan[k] = v;
  std::cout << plan.dump(2) << "\n";
}

void write_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_file(dir / "config.json", cfg.to_json().dump(2) + "\n");
}

std::unique_ptr<TextGenerator> make_provider(const std::string& kind, const std::string& fixtures,
                                             std::shared_ptr<TranscriptLog> log) {
  if (kind == "fixtures") return std::make_unique<FixtureProvider>(fixtures);
  if (kind == "remote") return RemoteLlmClient::from_env(std::move(log));
  throw ValidationError("unknown provider '" + kind + "'; expected fixtures or remote");
}

fs::path default_descriptions(const std::string& dataset, DescriptionStyle style) {
  return asset_dir() / "descriptions" / (dataset + "_" + to_string(style) + ".json");
}

std::optional<EmbeddingCache> open_cache(bool disabled) {
  if (disabled) return std::nullopt;
  return EmbeddingCache::from_env();
}

fs::path dataset_root(const RunConfig& cfg, const std::string& flag, const std::string& dataset) {
  if (!flag.empty()) return flag;
  if (auto p = cfg.path(dataset); !p.empty()) return p;
  if (auto data = env("REALDESC_DATA")) return fs::path(*data) / dataset;
  return {};
}

// Source of labelled test images plus the class list it is scored against.
struct EvalData {
  std::unique_ptr<LabeledImageSource> source;
  std::vector<std::string> classes;
  std::string dataset;
};

EvalData open_eval_data(const RunConfig& cfg, const std::string& root_flag, const std::string& folder,
                        std::optional<std::size_t> max_per_class) {
  EvalData d;
  d.dataset = cfg.dataset;
  SplitOptions split;
  split.max_per_class = max_per_class;
  if (!folder.empty()) {
    auto src = std::make_unique<ImageListSource>(load_image_folder(folder, split));
    std::set<std::string> names;
    for (const auto& e : src->entries()) names.insert(e.label);
    d.classes.assign(names.begin(), names.end());
    d.source = std::move(src);
    return d;
  }
  if (cfg.dataset == "toy") {
    auto world = toy::make_world(kToyTrain, kToyEval, kToySeed);
    for (const auto& c : world.eval) d.classes.push_back(c.name);
    d.source = std::make_unique<toy::Source>(world.eval, max_per_class.value_or(10), cfg.seed + 1000);
    return d;
  }
  const auto spec = load_benchmark_spec(parse_benchmark(cfg.dataset), dataset_root(cfg, root_flag, cfg.dataset));
  d.classes = spec.class_list;
  d.source = std::make_unique<ImageListSource>(load_test_split(spec, split));
  return d;
}

DescriptionFile load_descriptions(const RunConfig& cfg, const std::string& path) {
  if (cfg.dataset == "toy" && path.empty()) {
    return toy::description_file(toy::make_world(kToyTrain, kToyEval, kToySeed).eval);
  }
  return DescriptionFile::load(path.empty() ? default_descriptions(cfg.dataset, cfg.style) : fs::path(path));
}

struct ImageSide {
  std::optional<ExtraLayerState> extras;
  std::unique_ptr<ImageEncoder> encoder;
};

ImageSide make_encoder(const Backbone& backbone, const RunConfig& cfg, const std::string& extras_stem) {
  ImageSide side;
  if (!cfg.multires) {
    side.encoder = std::make_unique<BackboneImageEncoder>(backbone);
    return side;
  }
  MultiResConfig mcfg = cfg.multires_config;
  if (!extras_stem.empty()) {
    auto [state, meta] = load_extras_for(extras_stem, backbone);
    side.extras = state;
    mcfg = meta.config;
  } else {
    mcfg.base_side = backbone.image_size();
    side.extras = init_extra_layer(backbone, mcfg);
  }
  side.encoder = std::make_unique<MultiResEncoder>(backbone, *side.extras, mcfg);
  return side;
}

std::string fmt_pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

// ---------------------------------------------------------------- describe

struct DescribeArgs {
  Common common;
  std::string dataset;
  std::string classes_file;
  std::string style;
  int k = 8;
  std::string provider = "fixtures";
  std::string fixtures;
  std::string out;
  std::string transcript;
  std::string checkpoint;
  bool rewrite = false;
  int concurrency = 4;
};

int cmd_describe(const DescribeArgs& a) {
  json over = json::object();
  if (!a.dataset.empty()) over["dataset"] = a.dataset;
  if (!a.style.empty()) over["style"] = a.style;
  const auto cfg = resolve(a.common, over);
  if (a.k < 1) throw ValidationError("--k must be at least 1");

  std::vector<std::string> classes;
  std::map<std::string, std::string> placeholders;
  std::string default_placeholder = "object";
  if (!a.classes_file.empty()) {
    for (const auto& line : split(read_file(a.classes_file), '\n'))
      if (!trim(line).empty()) classes.push_back(trim(line));
  } else {
    if (cfg.dataset.empty()) throw ValidationError("describe needs --dataset or --classes");
    const auto spec = load_benchmark_spec(parse_benchmark(cfg.dataset));
    classes = spec.class_list;
    placeholders = spec.supercategory_map;
  }
  const fs::path out = a.out.empty() ? fs::path("descriptions") / (cfg.dataset + "_" + to_string(cfg.style) + ".json")
                                     : fs::path(a.out);
  if (a.common.dry_run) {
    print_plan("describe", cfg,
               {{"classes", classes.size()}, {"k", a.k}, {"provider", a.provider}, {"out", out.string()}});
    return 0;
  }

  std::shared_ptr<TranscriptLog> log;
  if (!a.transcript.empty()) log = std::make_shared<TranscriptLog>(a.transcript);
  auto provider = make_provider(a.provider, a.fixtures, log);
  GenerationOptions opts;
  opts.dataset = cfg.dataset;
  opts.placeholders = placeholders;
  opts.default_placeholder = default_placeholder;
  opts.max_concurrency = a.concurrency;
  opts.log = log;
  if (!a.checkpoint.empty()) opts.checkpoint = a.checkpoint;
  auto file = generate_descriptions(classes, cfg.style, a.k, *provider, opts);
  strip_names(file, a.rewrite ? provider.get() : nullptr);
  const auto report = verify_name_free(file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  file.save(out);
  auto report_path = out;
  report_path.replace_extension(".verify.json");
  write_file(report_path, report.to_json().dump(2) + "\n");
  std::cout << "wrote " << out.string() << ": " << file.size() << " classes, " << report.sentences_checked
            << " name-free sentences, " << report.residuals.size() << " residuals, " << report.cross_class.size()
            << " cross-class mentions, " << (report.certified() ? "certified" : "NOT certified") << "\n";
  return report.certified() ? 0 : static_cast<int>(ExitCode::kData);
}

// ------------------------------------------------------------- strip-names

struct StripArgs {
  Common common;
  std::string in;
  std::string out;
  std::string provider = "none";
  std::string fixtures;
};

int cmd_strip(const StripArgs& a) {
  const auto cfg = resolve(a.common, json::object());
  const fs::path out = a.out.empty() ? fs::path(a.in) : fs::path(a.out);
  if (a.common.dry_run) {
    print_plan("strip-names", cfg, {{"in", a.in}, {"out", out.string()}, {"rewriter", a.provider}});
    return 0;
  }
  auto file = DescriptionFile::load(a.in);
  std::unique_ptr<TextGenerator> rewriter;
  if (a.provider != "none") rewriter = make_provider(a.provider, a.fixtures, nullptr);
  strip_names(file, rewriter.get());
  file.save(out);
  const auto report = verify_name_free(file, false);
  std::cout << "wrote " << out.string() << ": " << report.sentences_checked << " sentences, "
            << report.residuals.size() << " residuals\n";
  return report.certified() ? 0 : static_cast<int>(ExitCode::kData);
}

// ------------------------------------------------------------------ verify

struct VerifyArgs {
  Common common;
  std::vector<std::string> files;
  bool no_cross = false;
  std::string report;
};

int cmd_verify(const VerifyArgs& a) {
  const auto cfg = resolve(a.common, json::object());
  if (a.common.dry_run) {
    print_plan("verify", cfg, {{"files", a.files}});
    return 0;
  }
  bool all_ok = true;
  json reports = json::object();
  for (const auto& f : a.files) {
    const auto file = DescriptionFile::load(f);
    const auto r = verify_name_free(file, !a.no_cross);
    all_ok = all_ok && r.certified();
    std::cout << (r.certified() ? "certified " : "FAILED    ") << f << "  sentences=" << r.sentences_checked
              << " residuals=" << r.residuals.size() << " cross_class=" << r.cross_class.size() << "\n";
    for (const auto& h : r.residuals)
      std::cout << "  residual [" << h.class_name << " #" << h.sentence_index << "] '" << h.variant << "': "
                << h.sentence << "\n";
    reports[f] = r.to_json();
  }
  if (!a.report.empty()) write_file(a.report, reports.dump(2) + "\n");
  return all_ok ? 0 : static_cast<int>(ExitCode::kData);
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string dataset;
  std::string mode;
  std::string backbone;
  std::string style;
  std::string descriptions;
  std::string root;
  std::string folder;
  std::string extras;
  std::string out;
  bool multires = false;
  bool all_modes = false;
  bool no_cache = false;
  int64_t batch_size = 32;
  int64_t scale = 0;
  std::size_t max_per_class = 0;
};

void append_results_row(const fs::path& dir, const RunConfig& cfg, const ClassificationReport& r) {
  const auto path = dir / "results.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "dataset,backbone,style,mode,multires,top1,top5,n_images\n";
  out << cfg.dataset << "," << cfg.backbone << "," << to_string(cfg.style) << "," << to_string(r.mode) << ","
      << (cfg.multires ? 1 : 0) << "," << fmt_pct(r.top1) << "," << fmt_pct(r.top5) << "," << r.n_images << "\n";
}

int cmd_eval(const EvalArgs& a) {
  json over = json::object();
  if (!a.dataset.empty()) over["dataset"] = a.dataset;
  if (!a.mode.empty()) over["mode"] = a.mode;
  if (!a.backbone.empty()) over["backbone"] = a.backbone;
  if (!a.style.empty()) over["style"] = a.style;
  if (a.multires) over["multires"]["enabled"] = true;
  if (a.scale > 0) over["multires"]["config"]["scale"] = a.scale;
  const auto cfg = resolve(a.common, over);
  if (cfg.dataset.empty() && a.folder.empty()) throw ValidationError("eval needs --dataset or --image-folder");
  if (cfg.dataset != "toy" && a.folder.empty()) parse_benchmark(cfg.dataset);

  const fs::path out = a.out.empty() ? fs::path("runs") / ("eval_" + cfg.dataset + "_" + to_string(cfg.mode)) : fs::path(a.out);
  const bool needs_file = a.all_modes || cfg.mode != EvalMode::kOnlyName;
  if (a.common.dry_run) {
    json plan = {{"out", out.string()}, {"all_modes", a.all_modes}};
    if (needs_file && cfg.dataset != "toy")
      plan["descriptions"] = a.descriptions.empty() ? default_descriptions(cfg.dataset, cfg.style).string() : a.descriptions;
    print_plan("eval", cfg, plan);
    return 0;
  }

  auto data = open_eval_data(cfg, a.root, a.folder,
                             a.max_per_class ? std::optional<std::size_t>(a.max_per_class) : std::nullopt);
  auto backbone = Backbone::load(cfg.backbone);
  auto side = make_encoder(backbone, cfg, a.extras);
  auto cache = open_cache(a.no_cache);
  EvalOptions eo;
  eo.batch_size = a.batch_size;
  eo.cache = cache ? &*cache : nullptr;
  PrototypeOptions po;
  po.cache = eo.cache;
  write_config(out, cfg);

  if (a.all_modes) {
    auto file = load_descriptions(cfg, a.descriptions);
    if (cfg.dataset != "toy" && a.folder.empty()) file.check_class_set(data.classes);
    const auto gap = compare_modes(*data.source, file, backbone, *side.encoder, eo, po);
    write_file(out / "report.json", gap.to_json().dump(2) + "\n");
    for (const auto* r : {&gap.only_name, &gap.with_name, &gap.no_name}) {
      append_results_row(out, cfg, *r);
      r->write_per_class_csv(out / ("per_class_" + to_string(r->mode) + ".csv"));
      std::cout << std::left << std::setw(10) << to_string(r->mode) << " top1=" << fmt_pct(r->top1)
                << " top5=" << fmt_pct(r->top5) << "\n";
    }
    std::cout << "gap (with_name - no_name) = " << std::fixed << std::setprecision(2) << gap.gap_points()
              << " points over " << gap.with_name.n_images << " images\n";
    return 0;
  }

  PrototypeIndex index;
  if (cfg.mode == EvalMode::kOnlyName) {
    index = build_only_name_prototypes(data.classes, backbone);
  } else {
    auto file = load_descriptions(cfg, a.descriptions);
    if (cfg.dataset != "toy" && a.folder.empty()) file.check_class_set(data.classes);
    index = build_prototypes(file, cfg.mode, backbone, po);
  }
  const auto report = evaluate_dataset(*data.source, index, *side.encoder, eo);
  report.write_json(out / "report.json");
  report.write_per_class_csv(out / "per_class.csv");
  append_results_row(out, cfg, report);
  std::cout << cfg.dataset << " " << to_string(cfg.mode) << " top1=" << fmt_pct(report.top1)
            << " top5=" << fmt_pct(report.top5) << " images=" << report.n_images << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string backbone;
  std::string manifest;
  std::string catalog;
  std::string descriptions;
  std::string run_dir;
  std::string extras;
  bool toy = false;
  bool multires = false;
  bool resume = false;
  int64_t steps = 0;
  int64_t batch_size = 0;
  int64_t warmup = -1;
  double lr = 0.0;
  std::string optimizer;
};

struct TrainInputs {
  CorpusManifest manifest;
  ImageResolver resolver;
};

TrainInputs train_inputs(const TrainArgs& a, const RunConfig& cfg) {
  TrainInputs in;
  if (a.toy) {
    auto world = toy::make_world(kToyTrain, kToyEval, kToySeed);
    toy::Catalog catalog(world.all, static_cast<std::size_t>(cfg.curation.k_images), cfg.seed);
    CurationSpec spec = cfg.curation;
    spec.classes.clear();
    for (const auto& c : world.train) spec.classes.push_back(c.name);
    for (const auto& c : world.eval) spec.excluded_classes.insert(normalize_class_key(c.name));
    in.manifest = curate(spec, toy::description_file(world.all), catalog);
    in.resolver = toy::resolver(world.all);
    return in;
  }
  in.resolver = file_image_resolver();
  if (!a.manifest.empty()) {
    in.manifest = CorpusManifest::load(a.manifest);
    return in;
  }
  if (a.catalog.empty() || a.descriptions.empty())
    throw ValidationError("train needs --manifest, --toy, or --catalog together with --descriptions");
  CurationSpec spec = cfg.curation;
  for (const auto& c : all_benchmark_classes()) spec.excluded_classes.insert(normalize_class_key(c));
  FolderCatalog catalog(a.catalog);
  in.manifest = curate(spec, DescriptionFile::load(a.descriptions), catalog);
  return in;
}

json train_overrides(const TrainArgs& a) {
  json over = json::object();
  if (!a.backbone.empty()) over["backbone"] = a.backbone;
  if (a.multires) over["multires"]["enabled"] = true;
  if (a.steps > 0) over["schedule"]["total_steps"] = a.steps;
  if (a.batch_size > 0) over["schedule"]["batch_size"] = a.batch_size;
  if (a.warmup >= 0) over["schedule"]["warmup_steps"] = a.warmup;
  if (a.lr > 0) over["schedule"]["lr"] = a.lr;
  if (!a.optimizer.empty()) over["schedule"]["optimizer"] = a.optimizer;
  if (!a.run_dir.empty()) over["paths"]["run_dir"] = a.run_dir;
  return over;
}

int cmd_train(TrainArgs a) {
  const auto cfg = resolve(a.common, train_overrides(a));
  if (cfg.dataset == "toy" && a.manifest.empty() && a.catalog.empty()) a.toy = true;
  cfg.schedule.validate();
  const fs::path run_dir = cfg.path("run_dir", "runs/train");
  if (a.common.dry_run) {
    json plan = {{"run_dir", run_dir.string()}, {"resume", a.resume}};
    if (!a.manifest.empty()) plan["manifest"] = a.manifest;
    if (a.toy) plan["corpus"] = "toy";
    if (!a.catalog.empty()) plan["catalog"] = a.catalog;
    print_plan("train", cfg, plan);
    return 0;
  }
  auto in = train_inputs(a, cfg);
  auto backbone = Backbone::load(cfg.backbone);
  std::optional<ExtraLayerState> extras;
  MultiResConfig mcfg = cfg.multires_config;
  if (cfg.multires) {
    if (!a.extras.empty()) {
      auto [state, meta] = load_extras_for(a.extras, backbone);
      extras = state;
      mcfg = meta.config;
    } else {
      mcfg.base_side = backbone.image_size();
      extras = init_extra_layer(backbone, mcfg);
    }
  }
  FinetuneOptions opts;
  opts.run_dir = run_dir;
  opts.resolved_config = cfg.to_json();
  opts.resolver = in.resolver;
  opts.seed = cfg.seed;
  opts.resume = a.resume;
  opts.on_step = [&](int64_t step, double loss) {
    if (step % 10 == 0) log::info("step " + std::to_string(step) + " loss " + std::to_string(loss));
  };
  const auto art = finetune(backbone, extras ? &*extras : nullptr, cfg.multires ? &mcfg : nullptr, in.manifest,
                            cfg.schedule, cfg.freeze, opts);
  const std::size_t w = std::max<std::size_t>(1, art.losses.size() / 10);
  std::cout << "trained " << art.steps_completed << " steps from step " << art.start_step << "; loss "
            << art.head_mean(w) << " -> " << art.tail_mean(w) << "; final checkpoint "
            << (run_dir / "checkpoints" / ("step_" + std::to_string(cfg.schedule.total_steps))).string() << "\n";
  return 0;
}

// --------------------------------------------------------- pretrain-extras

struct PretrainArgs {
  Common common;
  std::string backbone;
  std::string captions;
  std::string run_dir;
  bool toy = false;
  int64_t steps = 0;
  int64_t batch_size = 0;
  int64_t warmup = -1;
  int64_t scale = 0;
};

int cmd_pretrain(PretrainArgs a) {
  json over = json::object();
  if (!a.backbone.empty()) over["backbone"] = a.backbone;
  if (a.steps > 0) over["schedule"]["total_steps"] = a.steps;
  if (a.batch_size > 0) over["schedule"]["batch_size"] = a.batch_size;
  if (a.warmup >= 0) over["schedule"]["warmup_steps"] = a.warmup;
  if (a.scale > 0) over["multires"]["config"]["scale"] = a.scale;
  if (!a.run_dir.empty()) over["paths"]["run_dir"] = a.run_dir;
  over["multires"]["enabled"] = true;
  const auto cfg = resolve(a.common, over);
  cfg.schedule.validate();
  const fs::path run_dir = cfg.path("run_dir", "runs/pretrain_extras");
  if (cfg.dataset == "toy" && a.captions.empty()) a.toy = true;
  if (!a.toy && a.captions.empty()) throw ValidationError("pretrain-extras needs --captions or --toy");
  if (a.common.dry_run) {
    print_plan("pretrain-extras", cfg, {{"run_dir", run_dir.string()}, {"captions", a.toy ? "toy" : a.captions}});
    return 0;
  }
  auto backbone = Backbone::load(cfg.backbone);
  MultiResConfig mcfg = cfg.multires_config;
  mcfg.base_side = backbone.image_size();
  auto extras = init_extra_layer(backbone, mcfg);
  std::vector<CaptionPair> corpus;
  FinetuneOptions opts;
  if (a.toy) {
    auto world = toy::make_world(kToyTrain, kToyEval, kToySeed);
    for (std::size_t i = 0; i < world.train.size(); ++i)
      for (std::size_t k = 0; k < 4; ++k)
        corpus.push_back({toy::image_ref(i, cfg.seed * 977 + k), toy::describe(world.train[i])[k]});
    opts.resolver = toy::resolver(world.train);
  } else {
    corpus = load_caption_corpus(a.captions);
    opts.resolver = file_image_resolver();
  }
  opts.run_dir = run_dir;
  opts.resolved_config = cfg.to_json();
  opts.seed = cfg.seed;
  opts.save_backbone = false;
  opts.track_frozen_gradients = true;
  const auto art = pretrain_extras(extras, backbone, mcfg, corpus, cfg.schedule, opts);
  save_extras(run_dir / "extras", *extras,
              {backbone.id(), mcfg, extras->alpha_value(), art.start_step + art.steps_completed});
  std::cout << "pretrained extras for " << art.steps_completed << " steps; max frozen gradient "
            << art.max_frozen_gradient << "; alpha " << extras->alpha_value() << "; saved "
            << (run_dir / "extras").string() << ".{safetensors,json}\n";
  return 0;
}

// ---------------------------------------------------------------- eval-paco

struct PacoArgs {
  Common common;
  std::string records;
  std::string annotations;
  std::string image_root;
  std::string protocol = "filter_multival";
  std::string backbone;
  std::string extras;
  std::string out;
  bool multires = false;
};

int cmd_paco(const PacoArgs& a) {
  json over = json::object();
  if (!a.backbone.empty()) over["backbone"] = a.backbone;
  if (a.multires) over["multires"]["enabled"] = true;
  const auto cfg = resolve(a.common, over);
  const auto protocol = parse_protocol(a.protocol);
  if (a.records.empty() == a.annotations.empty())
    throw ValidationError("eval-paco needs exactly one of --records or --annotations");
  const fs::path out = a.out.empty() ? fs::path("runs/paco") : fs::path(a.out);
  if (a.common.dry_run) {
    print_plan("eval-paco", cfg, {{"protocol", to_string(protocol)}, {"out", out.string()}});
    return 0;
  }
  PacoIngestOptions ingest;
  ingest.image_root = a.image_root;
  const auto records = a.records.empty() ? load_paco_annotations(a.annotations, ingest) : load_paco_records(a.records);
  auto backbone = Backbone::load(cfg.backbone);
  auto side = make_encoder(backbone, cfg, a.extras);
  ClipScorer scorer(backbone, *side.encoder, file_image_resolver());
  const auto report = paco_evaluate(records, scorer, protocol);
  write_config(out, cfg);
  write_file(out / "paco.json", report.to_json().dump(2) + "\n");
  write_file(out / "paco.csv", report.to_csv());
  std::cout << report.to_csv();
  return 0;
}

// ------------------------------------------------------------------- probe

struct ProbeArgs {
  Common common;
  std::string records;
  std::string backbone;
  std::string extras;
  std::string out;
  std::string label = "accuracy";
  bool multires = false;
  bool generate = false;
  std::string provider = "fixtures";
  std::string fixtures;
  std::string cub_root;
  std::size_t images_per_class = 0;
};

int cmd_probe(const ProbeArgs& a) {
  json over = json::object();
  if (!a.backbone.empty()) over["backbone"] = a.backbone;
  if (a.multires) over["multires"]["enabled"] = true;
  const auto cfg = resolve(a.common, over);
  if (a.common.dry_run) {
    print_plan("probe", cfg, {{"records", a.records}, {"generate", a.generate}, {"out", a.out}});
    return 0;
  }
  if (a.generate) {
    if (a.out.empty()) throw ValidationError("probe --generate needs --out for the records file");
    auto provider = make_provider(a.provider, a.fixtures, nullptr);
    std::vector<std::string> classes;
    std::set<std::string> seen;
    const auto probe_file = (a.fixtures.empty() ? asset_dir() / "fixtures" : fs::path(a.fixtures)) / "probe" /
                            "cub_probe_attributes.tsv";
    for (const auto& line : split(read_file(probe_file), '\n')) {
      if (trim(line).empty() || line[0] == '#') continue;
      const auto cls = trim(split(line, '\t')[0]);
      if (seen.insert(cls).second) classes.push_back(cls);
    }
    ProbeGenerationOptions opts;
    opts.seed = cfg.seed;
    if (!a.cub_root.empty()) {
      SplitOptions split;
      if (a.images_per_class) split.max_per_class = a.images_per_class;
      const auto src = load_test_split(load_benchmark_spec(BenchmarkName::kCub, a.cub_root), split);
      for (const auto& e : src.entries()) opts.images[e.label].push_back(e.path.string());
    }
    const auto records = generate_probe_records(classes, *provider, *provider, opts);
    save_probe_records(a.out, records);
    std::cout << "wrote " << records.size() << " probe records for " << classes.size() << " classes to " << a.out << "\n";
    return 0;
  }
  if (a.records.empty()) throw ValidationError("probe needs --records (or --generate)");
  const auto records = load_probe_records(a.records);
  auto backbone = Backbone::load(cfg.backbone);
  auto side = make_encoder(backbone, cfg, a.extras);
  ClipScorer scorer(backbone, *side.encoder, file_image_resolver());
  const auto report = probe_evaluate(records, scorer);
  const auto csv = report.to_csv(a.label);
  if (!a.out.empty()) {
    write_config(a.out, cfg);
    write_file(fs::path(a.out) / "probe.csv", csv);
    write_file(fs::path(a.out) / "probe.json", report.to_json().dump(2) + "\n");
  }
  std::cout << csv;
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  Common common;
  std::vector<std::string> runs;
  std::string out;
};

std::optional<double> paper_target(const json& t, const std::map<std::string, std::string>& row) {
  const auto style = row.at("style");
  const auto bb = row.at("backbone");
  const auto ds = row.at("dataset");
  const auto mode = row.at("mode");
  const json* node = &t["zeroshot"];
  for (const auto& key : {style, bb, ds, mode}) {
    if (!node->contains(key)) return std::nullopt;
    node = &(*node)[key];
  }
  return node->get<double>();
}

int cmd_report(const ReportArgs& a) {
  const auto cfg = resolve(a.common, json::object());
  if (a.common.dry_run) {
    print_plan("report", cfg, {{"runs", a.runs}, {"out", a.out}});
    return 0;
  }
  const auto targets = json::parse(read_file(asset_dir() / "expected" / "paper_targets.json"));
  std::vector<std::map<std::string, std::string>> rows;
  for (const auto& r : a.runs) {
    std::vector<fs::path> files;
    if (fs::is_regular_file(r)) {
      files.push_back(r);
    } else if (fs::is_directory(r)) {
      for (const auto& e : fs::recursive_directory_iterator(r))
        if (e.path().filename() == "results.csv") files.push_back(e.path());
    } else {
      throw DataError("no such run directory or file: " + r);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto lines = split(read_file(f), '\n');
      if (lines.empty()) continue;
      const auto header = split(lines[0], ',');
      for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto cells = split(lines[i], ',');
        std::map<std::string, std::string> row;
        for (std::size_t c = 0; c < header.size() && c < cells.size(); ++c) row[header[c]] = cells[c];
        row["run"] = f.parent_path().string();
        rows.push_back(std::move(row));
      }
    }
  }
  std::ostringstream csv;
  csv << "run,dataset,backbone,style,mode,multires,top1,top5,n_images,paper_top1,delta\n";
  for (const auto& row : rows) {
    auto get = [&](const char* k) { return row.count(k) ? row.at(k) : std::string(); };
    csv << get("run") << "," << get("dataset") << "," << get("backbone") << "," << get("style") << "," << get("mode")
        << "," << get("multires") << "," << get("top1") << "," << get("top5") << "," << get("n_images") << ",";
    std::optional<double> target;
    if (get("multires") == "0") target = paper_target(targets, row);
    if (target) {
      std::ostringstream d;
      d << std::fixed << std::setprecision(2) << (std::stod(get("top1")) - *target);
      csv << *target << "," << d.str();
    } else {
      csv << ",";
    }
    csv << "\n";
  }
  if (!a.out.empty()) write_file(a.out, csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot classification by description, with and without class names"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error");

  DescribeArgs d;
  auto* describe = app.add_subcommand("describe", "Generate a description file for a class list");
  add_common(describe, d.common);
  describe->add_option("--dataset", d.dataset, "Benchmark name");
  describe->add_option("--classes", d.classes_file, "Text file with one class name per line");
  describe->add_option("--style", d.style, "oxford or columbia");
  describe->add_option("--k", d.k, "Sentences per class");
  describe->add_option("--provider", d.provider, "fixtures or remote");
  describe->add_option("--fixtures", d.fixtures, "Fixture directory for the offline provider");
  describe->add_option("--out", d.out, "Output description file");
  describe->add_option("--transcript", d.transcript, "JSONL log of every prompt and response");
  describe->add_option("--checkpoint", d.checkpoint, "Partial-progress file, resumed when present");
  describe->add_option("--concurrency", d.concurrency, "Parallel requests for remote providers");
  describe->add_flag("--rewrite", d.rewrite, "Also ask the provider to rewrite names before variant replacement");

  StripArgs s;
  auto* strip = app.add_subcommand("strip-names", "Fill the name-free sentences of a description file");
  add_common(strip, s.common);
  strip->add_option("--in", s.in, "Description file")->required();
  strip->add_option("--out", s.out, "Output path (default: overwrite input)");
  strip->add_option("--rewriter", s.provider, "none, fixtures or remote");
  strip->add_option("--fixtures", s.fixtures, "Fixture directory");

  VerifyArgs v;
  auto* verify = app.add_subcommand("verify", "Certify description files as name-free");
  add_common(verify, v.common);
  verify->add_option("files", v.files, "Description files")->required();
  verify->add_flag("--no-cross-class", v.no_cross, "Skip the informational cross-class scan");
  verify->add_option("--report", v.report, "Write the full reports as JSON");

  EvalArgs e;
  auto* eval = app.add_subcommand("eval", "Zero-shot evaluation on a benchmark test split");
  add_common(eval, e.common);
  eval->add_option("--dataset", e.dataset, "Benchmark name or toy");
  eval->add_option("--mode", e.mode, "only_name, with_name or no_name");
  eval->add_option("--backbone", e.backbone, "Checkpoint identifier or directory");
  eval->add_option("--style", e.style, "oxford or columbia");
  eval->add_option("--descriptions", e.descriptions, "Description file (default: shipped file)");
  eval->add_option("--root", e.root, "Dataset root directory");
  eval->add_option("--image-folder", e.folder, "Generic <root>/<class>/<image> test set");
  eval->add_option("--extras", e.extras, "Multi-resolution extras checkpoint stem");
  eval->add_option("--out", e.out, "Report directory");
  eval->add_option("--batch-size", e.batch_size, "Images per encoder call");
  eval->add_option("--scale", e.scale, "Multi-resolution scale factor");
  eval->add_option("--max-per-class", e.max_per_class, "Cap on test images per class");
  eval->add_flag("--multires", e.multires, "Use the multi-resolution image encoder");
  eval->add_flag("--all-modes", e.all_modes, "Evaluate only_name, with_name and no_name on one encoding pass");
  eval->add_flag("--no-cache", e.no_cache, "Disable the embedding cache");

  TrainArgs t;
  auto* train = app.add_subcommand("train", "Contrastive fine-tuning with unique-class batches");
  add_common(train, t.common);
  train->add_option("--backbone", t.backbone, "Checkpoint identifier or directory");
  train->add_option("--manifest", t.manifest, "Curated corpus manifest (JSONL)");
  train->add_option("--catalog", t.catalog, "Image folder to curate from");
  train->add_option("--descriptions", t.descriptions, "Descriptions for the catalog classes");
  train->add_option("--run-dir", t.run_dir, "Run directory");
  train->add_option("--extras", t.extras, "Start multi-resolution extras from this checkpoint stem");
  train->add_option("--steps", t.steps, "Total optimizer steps");
  train->add_option("--batch-size", t.batch_size, "Batch size");
  train->add_option("--warmup", t.warmup, "Linear warmup steps");
  train->add_option("--lr", t.lr, "Peak learning rate");
  train->add_option("--optimizer", t.optimizer, "adam or adamw");
  train->add_flag("--toy", t.toy, "Train on the synthetic creature corpus");
  train->add_flag("--multires", t.multires, "Train through the multi-resolution encoder");
  train->add_flag("--resume", t.resume, "Resume from the latest checkpoint in the run directory");

  PretrainArgs p;
  auto* pretrain = app.add_subcommand("pretrain-extras", "Train the multi-resolution additions on captions");
  add_common(pretrain, p.common);
  pretrain->add_option("--backbone", p.backbone, "Checkpoint identifier or directory");
  pretrain->add_option("--captions", p.captions, "image<TAB>caption file");
  pretrain->add_option("--run-dir", p.run_dir, "Run directory");
  pretrain->add_option("--steps", p.steps, "Total optimizer steps");
  pretrain->add_option("--batch-size", p.batch_size, "Batch size");
  pretrain->add_option("--warmup", p.warmup, "Linear warmup steps");
  pretrain->add_option("--scale", p.scale, "Multi-resolution scale factor");
  pretrain->add_flag("--toy", p.toy, "Use synthetic creature captions");

  PacoArgs pa;
  auto* paco = app.add_subcommand("eval-paco", "Attribute-of-part evaluation");
  add_common(paco, pa.common);
  paco->add_option("--records", pa.records, "Records JSONL");
  paco->add_option("--annotations", pa.annotations, "PACO annotation JSON");
  paco->add_option("--image-root", pa.image_root, "Directory prefixed to image file names");
  paco->add_option("--protocol", pa.protocol, "filter_multival or topk_decompose");
  paco->add_option("--backbone", pa.backbone, "Checkpoint identifier or directory");
  paco->add_option("--extras", pa.extras, "Multi-resolution extras checkpoint stem");
  paco->add_option("--out", pa.out, "Report directory");
  paco->add_flag("--multires", pa.multires, "Use the multi-resolution image encoder");

  ProbeArgs pr;
  auto* probe = app.add_subcommand("probe", "Part-attribute probe: one positive against five negatives");
  add_common(probe, pr.common);
  probe->add_option("--records", pr.records, "Probe records JSONL");
  probe->add_option("--backbone", pr.backbone, "Checkpoint identifier or directory");
  probe->add_option("--extras", pr.extras, "Multi-resolution extras checkpoint stem");
  probe->add_option("--out", pr.out, "Report directory, or the records file with --generate");
  probe->add_option("--label", pr.label, "Column label in the CSV");
  probe->add_flag("--multires", pr.multires, "Use the multi-resolution image encoder");
  probe->add_flag("--generate", pr.generate, "Build records from the attribute provider");
  probe->add_option("--provider", pr.provider, "fixtures or remote");
  probe->add_option("--fixtures", pr.fixtures, "Fixture directory");
  probe->add_option("--cub-root", pr.cub_root, "CUB root used to attach test images to generated records");
  probe->add_option("--images-per-class", pr.images_per_class, "Images attached per class");

  ReportArgs r;
  auto* report = app.add_subcommand("report", "Collect results.csv rows and compare with paper targets");
  add_common(report, r.common);
  report->add_option("runs", r.runs, "Run directories or results.csv files")->required();
  report->add_option("--out", r.out, "Write the merged CSV here");

  CLI11_PARSE(app, argc, argv);
  try {
    log::set_level(log_level);
    if (describe->parsed()) return cmd_describe(d);
    if (strip->parsed()) return cmd_strip(s);
    if (verify->parsed()) return cmd_verify(v);
    if (eval->parsed()) return cmd_eval(e);
    if (train->parsed()) return cmd_train(t);
    if (pretrain->parsed()) return cmd_pretrain(p);
    if (paco->parsed()) return cmd_paco(pa);
    if (probe->parsed()) return cmd_probe(pr);
    if (report->parsed()) return cmd_report(r);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return static_cast<int>(err.exit_code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
