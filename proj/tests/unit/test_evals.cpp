#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "../common/oracles.hpp"
#include "helpers.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/llm.hpp"
#include "realdesc/paco.hpp"
#include "realdesc/probe.hpp"
#include "realdesc/scorer.hpp"
#include "realdesc/zeroshot.hpp"

using namespace realdesc;

namespace {

PacoRecord random_record(Rng& rng) {
  static const std::vector<std::string> vocab = {"red", "blue", "green", "black", "white", "brown",
                                                 "gray", "pink", "orange", "yellow", "purple", "tan"};
  PacoRecord r;
  r.image_ref = "img" + std::to_string(rng.below(100000));
  r.object = "mug";
  r.part = "handle";
  r.attribute_type = AttributeType::kColor;
  const std::size_t n = 3 + rng.below(vocab.size() - 2);
  r.candidate_values.assign(vocab.begin(), vocab.begin() + static_cast<std::ptrdiff_t>(n));
  auto shuffled = r.candidate_values;
  rng.shuffle(shuffled);
  const std::size_t k = 1 + rng.below(std::min<std::size_t>(4, n));
  r.positive_values.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
  return r;
}

}  // namespace

TEST_SUITE("evals") {
  TEST_CASE("paco top-k matches exhaustive subset search on 1000 records") {
    Rng rng(77);
    const auto scorer = oracle::hashed_scorer(5);
    for (int t = 0; t < 1000; ++t) {
      const auto rec = random_record(rng);
      const auto pred = paco_predict(rec.image_ref, rec, scorer);
      CHECK(pred.size() == std::min(rec.k(), rec.candidate_values.size()));
      std::vector<std::string> prompts;
      for (const auto& v : rec.candidate_values) prompts.push_back(paco_prompt(rec, v));
      const auto best = oracle::exhaustive_top_k(scorer.score(rec.image_ref, prompts), rec.k());
      std::set<std::string> want;
      for (auto i : best) want.insert(rec.candidate_values[i]);
      CHECK(std::set<std::string>(pred.begin(), pred.end()) == want);
    }
  }

  TEST_CASE("top-k keeps vocabulary order on ties and clips to the candidate count") {
    CHECK(top_k_indices({0.5, 0.9, 0.5, 0.9}, 3) == std::vector<std::size_t>{1, 3, 0});
    CHECK(top_k_indices({0.1, 0.2}, 5).size() == 2);
  }

  TEST_CASE("raising a positive's score never drops it from the prediction") {
    Rng rng(9);
    for (int t = 0; t < 300; ++t) {
      std::vector<double> s(8);
      for (auto& x : s) x = rng.uniform();
      const std::size_t k = 1 + rng.below(4);
      const auto before = top_k_indices(s, k);
      for (auto i : before) {
        auto raised = s;
        raised[i] += rng.uniform();
        const auto after = top_k_indices(raised, k);
        CHECK(std::find(after.begin(), after.end(), i) != after.end());
      }
    }
  }

  TEST_CASE("filter_multival equals topk_decompose on single-valued records") {
    Rng rng(31);
    std::vector<PacoRecord> all, single;
    for (int t = 0; t < 400; ++t) {
      auto r = random_record(rng);
      all.push_back(r);
      if (r.k() == 1) single.push_back(r);
    }
    REQUIRE(!single.empty());
    const auto scorer = oracle::hashed_scorer(8);
    const auto f = paco_evaluate(all, scorer, PacoProtocol::kFilterMultival);
    const auto d = paco_evaluate(single, scorer, PacoProtocol::kTopkDecompose);
    CHECK(f.n_instances == single.size());
    CHECK(f.n_filtered == all.size() - single.size());
    CHECK(f.mean_accuracy == doctest::Approx(d.mean_accuracy));
    const auto full = paco_evaluate(all, scorer, PacoProtocol::kTopkDecompose);
    CHECK(full.n_instances == all.size());
    CHECK(full.to_csv().find("topk_decompose,all,400,") != std::string::npos);
  }

  TEST_CASE("paco prompts and protocol names") {
    PacoRecord r;
    r.object = "chair";
    r.part = "back rest";
    r.attribute_type = AttributeType::kPatternMarking;
    r.candidate_values = {"striped", "plain"};
    r.positive_values = {"plain"};
    CHECK(paco_prompt(r, "striped") == "The back rest of the chair has striped pattern");
    CHECK_THROWS_AS(paco_prompt(r, "dotted"), ValidationError);
    CHECK(parse_protocol("topk-decompose") == PacoProtocol::kTopkDecompose);
    CHECK_THROWS_AS(parse_protocol("best_guess"), ValidationError);
  }

  TEST_CASE("paco annotations become one record per part and attribute type") {
    PacoIngestOptions opts;
    opts.image_root = "/imgs";
    const auto recs = load_paco_annotations(testutil::data_dir() / "paco_sample.json", opts);
    // mug handle: color, material, reflectance; mug body: color, material, pattern;
    // chair back rest: color, material, reflectance; small part and object-only category dropped.
    CHECK(recs.size() == 9);
    const PacoRecord* body_color = nullptr;
    const PacoRecord* chair_color = nullptr;
    for (const auto& r : recs) {
      if (r.part == "body" && r.attribute_type == AttributeType::kColor) body_color = &r;
      if (r.object == "chair" && r.attribute_type == AttributeType::kColor) chair_color = &r;
    }
    REQUIRE(body_color != nullptr);
    REQUIRE(chair_color != nullptr);
    CHECK(body_color->positive_values == std::vector<std::string>{"blue", "white"});
    CHECK(body_color->image_ref == "/imgs/mug_1.jpg");
    CHECK(chair_color->part == "back rest");
    CHECK(chair_color->positive_values == std::vector<std::string>{"black", "grey"});
    CHECK(chair_color->candidate_values.size() == 5);

    testutil::TempDir tmp("paco");
    save_paco_records(tmp / "r.jsonl", recs);
    const auto back = load_paco_records(tmp / "r.jsonl");
    REQUIRE(back.size() == recs.size());
    CHECK(back[4].to_json() == recs[4].to_json());
  }

  TEST_CASE("probe accuracy under a uniform random scorer is 1/6 within three sigma") {
    ProbeRecord r;
    r.class_name = "Cardinal";
    r.element = "crest";
    r.kind = AttributeKind::kColor;
    r.positive = "A bird with red crest";
    r.negatives = {"A bird with blue crest", "A bird with green crest", "A bird with black crest",
                   "A bird with white crest", "A bird with gray crest"};
    for (int i = 0; i < 10000; ++i) r.image_set.push_back("img" + std::to_string(i));
    const auto report = probe_evaluate({r}, oracle::hashed_scorer(123));
    REQUIRE(report.cells.size() == 1);
    CHECK(report.cells[0].n_trials == 10000);
    const double p = 1.0 / 6.0;
    const double sigma = std::sqrt(p * (1 - p) / 10000.0);
    CHECK(std::abs(report.overall() - p) <= 3 * sigma);
  }

  TEST_CASE("probe ties count as failures and averages are unweighted over elements") {
    ProbeRecord a;
    a.class_name = "X";
    a.element = "beak";
    a.kind = AttributeKind::kShape;
    a.positive = "p";
    a.negatives = {"n1", "n2", "n3", "n4", "n5"};
    a.image_set = {"i1", "i2", "i3", "i4"};
    ProbeRecord b = a;
    b.element = "tail";
    b.image_set = {"j1"};
    FunctionScorer tie([](const std::string& img, const std::vector<std::string>& t) {
      std::vector<double> s(t.size(), 0.0);
      if (img == "i1") s[0] = 1.0;
      if (img == "i2") s[0] = s[3] = 1.0;
      if (img == "j1") s[0] = 2.0;
      return s;
    });
    const auto rep = probe_evaluate({a, b}, tie);
    REQUIRE(rep.cells.size() == 2);
    CHECK(rep.cells[0].accuracy() == doctest::Approx(0.25));
    CHECK(rep.cells[1].accuracy() == doctest::Approx(1.0));
    CHECK(rep.kind_average(AttributeKind::kShape) == doctest::Approx(0.625));
    const auto csv = rep.to_csv("ViT-B-16");
    CHECK(csv.rfind("Type,Element,ViT-B-16,n_trials\n", 0) == 0);
    CHECK(csv.find("Average") != std::string::npos);

    a.negatives.pop_back();
    CHECK_THROWS_AS(probe_evaluate({a}, tie), ValidationError);
  }

  TEST_CASE("generated probe records swap only the value") {
    FixtureProvider p;
    ProbeGenerationOptions opts;
    opts.images["Cardinal"] = {"c1.jpg", "c2.jpg"};
    const auto recs = generate_probe_records({"Cardinal", "Blue Jay"}, p, p, opts);
    REQUIRE(!recs.empty());
    for (const auto& r : recs) {
      CHECK(r.negatives.size() == kProbeNegatives);
      std::set<std::string> distinct(r.negatives.begin(), r.negatives.end());
      distinct.insert(r.positive);
      CHECK(distinct.size() == 6);
      const std::string prefix = "A bird with ";
      const std::string suffix = " " + r.element;
      for (const auto& s : r.candidates()) {
        CHECK(s.rfind(prefix, 0) == 0);
        CHECK(s.size() > suffix.size());
        CHECK(s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0);
      }
      if (r.class_name == "Cardinal") CHECK(r.image_set.size() == 2);
    }
    CHECK(probe_sentence("owl", "round", "head") == "An owl with round head");
  }

  TEST_CASE("shipped probe records load and hold five negatives each") {
    const auto recs = load_probe_records(asset_dir() / "fixtures" / "probe" / "cub_probe.jsonl");
    CHECK(recs.size() > 100);
    for (const auto& r : recs) CHECK(r.negatives.size() == kProbeNegatives);
  }

  TEST_CASE("clip scorer ranks by cosine similarity of the backbone towers") {
    auto& bb = testutil::tiny();
    BackboneImageEncoder enc(bb);
    const auto img = testutil::random_image(32, 3);
    ClipScorer scorer(bb, enc, [&](const std::string&, const Preprocessing&) { return img; });
    const std::vector<std::string> texts = {"a red bird", "a blue bird", "a bird"};
    const auto s = scorer.score("x", texts);
    const auto ie = testutil::row(bb.encode_image(img).unsqueeze(0), 0);
    for (std::size_t i = 0; i < texts.size(); ++i)
      CHECK(s[i] == doctest::Approx(testutil::cosine(ie, testutil::row(bb.encode_text(texts[i]).unsqueeze(0), 0)))
                         .epsilon(1e-5));
  }
}
