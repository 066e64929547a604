#include <doctest.h>

#include <algorithm>
#include <random>

#include "detkit/evaluation.hpp"
#include "reference.hpp"
#include "testutil.hpp"

using detkit::EvalConfig;
using detkit::Verdict;
using detkit::Vocab;
using testutil::box;

namespace {

const detkit::CategoryHierarchy kNoHierarchy;

}  // namespace

TEST_CASE("matching worked examples") {
  Vocab vocab;
  EvalConfig cfg;
  SUBCASE("perfect overlap is a true positive") {
    const auto dets = std::vector<detkit::Detection>{
        testutil::det(vocab, "i", "c", 0.9, box(0.1, 0.1, 0.5, 0.5))};
    const auto gts = std::vector<detkit::GroundTruthBox>{
        testutil::gt(vocab, "i", "c", box(0.1, 0.1, 0.5, 0.5))};
    const auto verdicts = detkit::match_image_category(dets, gts, cfg);
    REQUIRE(verdicts.size() == 1);
    CHECK(verdicts[0] == Verdict::kTruePositive);
  }
  SUBCASE("no ground truth means a false positive") {
    const auto dets = std::vector<detkit::Detection>{
        testutil::det(vocab, "i", "c", 0.9, box(0.1, 0.1, 0.5, 0.5))};
    const auto verdicts = detkit::match_image_category(dets, {}, cfg);
    REQUIRE(verdicts.size() == 1);
    CHECK(verdicts[0] == Verdict::kFalsePositive);
  }
  SUBCASE("inside a group-of box the detection is ignored") {
    // det [0.1,0.1,0.35,0.35] inside group [0.1,0.1,0.4,0.4]: ioa = 0.0625/0.0625... = 1
    // use a det half-covered to hit ioa 0.8
    const auto det_box = box(0.1, 0.1, 0.35, 0.35);
    const auto group_box = box(0.1, 0.1, 0.3, 0.4);
    const double cover = detkit::ioa(det_box, group_box);
    CHECK(cover == doctest::Approx(0.8));
    const auto dets =
        std::vector<detkit::Detection>{testutil::det(vocab, "i", "c", 0.9, det_box)};
    const auto gts = std::vector<detkit::GroundTruthBox>{
        testutil::gt(vocab, "i", "c", group_box, true)};
    const auto verdicts = detkit::match_image_category(dets, gts, cfg);
    REQUIRE(verdicts.size() == 1);
    CHECK(verdicts[0] == Verdict::kIgnored);
  }
}

TEST_CASE("average precision worked examples") {
  SUBCASE("all true positives covering all ground truth") {
    const std::vector<Verdict> stream{Verdict::kTruePositive, Verdict::kTruePositive};
    CHECK(detkit::average_precision(stream, 2) == doctest::Approx(1.0));
  }
  SUBCASE("single false positive") {
    const std::vector<Verdict> stream{Verdict::kFalsePositive};
    CHECK(detkit::average_precision(stream, 1) == 0.0);
  }
  SUBCASE("interpolated staircase") {
    const std::vector<Verdict> stream{Verdict::kTruePositive, Verdict::kFalsePositive,
                                      Verdict::kTruePositive};
    CHECK(detkit::average_precision(stream, 2) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("ignored verdicts vanish from the stream") {
    const std::vector<Verdict> stream{Verdict::kTruePositive, Verdict::kIgnored,
                                      Verdict::kFalsePositive, Verdict::kTruePositive};
    CHECK(detkit::average_precision(stream, 2) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  }
}

TEST_CASE("prepending a true positive never lowers AP") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> len(1, 20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 500; ++round) {
    std::vector<Verdict> stream;
    int tp = 0;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      if (u(rng) < 0.4) {
        stream.push_back(Verdict::kTruePositive);
        ++tp;
      } else {
        stream.push_back(Verdict::kFalsePositive);
      }
    }
    const int n_gt = tp + 1 + static_cast<int>(u(rng) * 3);
    const double before = detkit::average_precision(stream, n_gt);
    std::vector<Verdict> prepended{Verdict::kTruePositive};
    prepended.insert(prepended.end(), stream.begin(), stream.end());
    const double after = detkit::average_precision(prepended, n_gt);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("evaluate trivial corpora") {
  Vocab vocab;
  EvalConfig cfg;
  SUBCASE("detections identical to ground truth reach mAP 1") {
    std::vector<detkit::Detection> dets;
    std::vector<detkit::GroundTruthBox> gts;
    for (int i = 0; i < 4; ++i) {
      const auto b = box(0.1 * i, 0.1, 0.1 * i + 0.2, 0.4);
      dets.push_back(testutil::det(vocab, "img" + std::to_string(i % 2),
                                   "cat" + std::to_string(i % 2), 1.0, b));
      gts.push_back(testutil::gt(vocab, "img" + std::to_string(i % 2),
                                 "cat" + std::to_string(i % 2), b));
    }
    const auto report = detkit::evaluate(testutil::make_set("m", dets),
                                         testutil::make_gt(gts), kNoHierarchy, cfg, vocab);
    CHECK(report.map == doctest::Approx(1.0));
  }
  SUBCASE("empty detections score zero") {
    const auto gts = testutil::make_gt(
        {testutil::gt(vocab, "img", "cat", box(0.1, 0.1, 0.4, 0.4))});
    const auto report = detkit::evaluate(testutil::make_set("m", {}), gts, kNoHierarchy,
                                         cfg, vocab);
    CHECK(report.map == 0.0);
    CHECK(report.included_categories == 1);
  }
  SUBCASE("categories without ground truth are excluded, not zeroed") {
    const auto dets = testutil::make_set(
        "m", {testutil::det(vocab, "img", "phantom", 0.9, box(0.1, 0.1, 0.4, 0.4))});
    const auto gts = testutil::make_gt(
        {testutil::gt(vocab, "img", "real", box(0.1, 0.1, 0.4, 0.4))});
    const auto report = detkit::evaluate(dets, gts, kNoHierarchy, cfg, vocab);
    CHECK(report.included_categories == 1);
    const int phantom = *vocab.labels.find("phantom");
    CHECK_FALSE(report.per_category.at(phantom).included);
    CHECK(report.map == 0.0);
  }
}

TEST_CASE("evaluate matches the brute-force reference on random corpora") {
  std::mt19937_64 rng(1234);
  EvalConfig cfg;
  cfg.expand_hierarchy = false;
  for (int round = 0; round < 40; ++round) {
    auto corpus = testutil::random_corpus(rng);
    const auto report = detkit::evaluate(corpus.dets, corpus.gts, kNoHierarchy, cfg,
                                         corpus.vocab, 2);
    const auto expected = ref::evaluate(corpus.ref_dets, corpus.ref_gts, cfg.iou_threshold,
                                        cfg.group_of_ioa_threshold);
    CHECK(std::abs(report.map - expected.map) < 1e-9);
    CHECK(report.included_categories == static_cast<int>(expected.ap.size()));
    for (const auto& [label, ap] : expected.ap) {
      const int id = *corpus.vocab.labels.find(label);
      CHECK(std::abs(report.per_category.at(id).ap - ap) < 1e-9);
    }
  }
}

TEST_CASE("evaluation does not depend on detection row order") {
  std::mt19937_64 rng(777);
  EvalConfig cfg;
  cfg.expand_hierarchy = false;
  auto corpus = testutil::random_corpus(rng);
  const auto base =
      detkit::evaluate(corpus.dets, corpus.gts, kNoHierarchy, cfg, corpus.vocab);
  for (int round = 0; round < 10; ++round) {
    auto shuffled = corpus.dets;
    std::shuffle(shuffled.items.begin(), shuffled.items.end(), rng);
    const auto report =
        detkit::evaluate(shuffled, corpus.gts, kNoHierarchy, cfg, corpus.vocab);
    CHECK(report.map == base.map);
    for (const auto& [category, r] : base.per_category) {
      CHECK(report.per_category.at(category).ap == r.ap);
      CHECK(report.per_category.at(category).tp == r.tp);
      CHECK(report.per_category.at(category).fp == r.fp);
    }
  }
}

TEST_CASE("mAP of disjoint-category unions is the weighted mean") {
  std::mt19937_64 rng(4242);
  EvalConfig cfg;
  cfg.expand_hierarchy = false;
  Vocab vocab;
  auto make_part = [&](const std::string& prefix, int cats, int boxes) {
    std::vector<detkit::Detection> dets;
    std::vector<detkit::GroundTruthBox> gts;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, cats - 1);
    for (int i = 0; i < boxes; ++i) {
      const auto b = testutil::random_box(rng);
      const auto label = prefix + std::to_string(pick(rng));
      gts.push_back(testutil::gt(vocab, "img" + std::to_string(i % 4), label, b));
      dets.push_back(testutil::det(vocab, "img" + std::to_string(i % 4), label, u(rng),
                                   u(rng) < 0.6 ? testutil::random_box_near(rng, b, 0.05)
                                                : testutil::random_box(rng)));
    }
    return std::make_pair(dets, gts);
  };
  auto [dets_a, gts_a] = make_part("a", 3, 20);
  auto [dets_b, gts_b] = make_part("b", 2, 15);
  const auto report_a = detkit::evaluate(testutil::make_set("m", dets_a),
                                         testutil::make_gt(gts_a), kNoHierarchy, cfg, vocab);
  const auto report_b = detkit::evaluate(testutil::make_set("m", dets_b),
                                         testutil::make_gt(gts_b), kNoHierarchy, cfg, vocab);
  auto dets_union = dets_a;
  dets_union.insert(dets_union.end(), dets_b.begin(), dets_b.end());
  auto gts_union = gts_a;
  gts_union.insert(gts_union.end(), gts_b.begin(), gts_b.end());
  const auto report = detkit::evaluate(testutil::make_set("m", dets_union),
                                       testutil::make_gt(gts_union), kNoHierarchy, cfg,
                                       vocab);
  const int na = report_a.included_categories;
  const int nb = report_b.included_categories;
  const double expected = (report_a.map * na + report_b.map * nb) / (na + nb);
  CHECK(report.map == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hierarchy expansion applies to both sides when enabled") {
  Vocab vocab;
  detkit::CategoryHierarchy h;
  h.add_edge(vocab.labels.intern("Apple"), vocab.labels.intern("Fruit"));
  const auto b = box(0.2, 0.2, 0.6, 0.6);
  const auto dets = testutil::make_set("m", {testutil::det(vocab, "img", "Apple", 0.9, b)});
  const auto gts = testutil::make_gt({testutil::gt(vocab, "img", "Apple", b)});
  EvalConfig cfg;
  const auto expanded = detkit::evaluate(dets, gts, h, cfg, vocab);
  CHECK(expanded.included_categories == 2);
  CHECK(expanded.map == doctest::Approx(1.0));
  cfg.expand_hierarchy = false;
  const auto plain = detkit::evaluate(dets, gts, h, cfg, vocab);
  CHECK(plain.included_categories == 1);
}
