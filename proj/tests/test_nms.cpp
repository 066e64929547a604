#include <doctest.h>

#include <cmath>
#include <random>

#include "detkit/nms.hpp"
#include "reference.hpp"
#include "testutil.hpp"

using detkit::Detection;
using detkit::NmsConfig;
using testutil::box;

namespace {

std::vector<Detection> group(detkit::Vocab& vocab,
                             std::vector<std::pair<double, detkit::BBox>> scored) {
  std::vector<Detection> out;
  for (const auto& [score, b] : scored) {
    out.push_back(testutil::det(vocab, "img", "cat", score, b));
  }
  return out;
}

std::vector<ref::ScoredBox> to_ref(const std::vector<Detection>& dets) {
  std::vector<ref::ScoredBox> out;
  for (const auto& d : dets) out.push_back(ref::ScoredBox{testutil::to_ref(d.box), d.score});
  return out;
}

std::vector<Detection> random_group(std::mt19937_64& rng, int max_boxes) {
  detkit::Vocab vocab;
  std::uniform_int_distribution<int> n(1, max_boxes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const detkit::BBox anchor = testutil::random_box(rng);
  std::vector<std::pair<double, detkit::BBox>> scored;
  const int count = n(rng);
  for (int i = 0; i < count; ++i) {
    detkit::BBox b = u(rng) < 0.7 ? testutil::random_box_near(rng, anchor, 0.15)
                                  : testutil::random_box(rng);
    double score = u(rng);
    if (u(rng) < 0.4) score = std::round(score * 10.0) / 10.0;  // provoke ties
    scored.emplace_back(score, b);
  }
  return group(vocab, scored);
}

}  // namespace

TEST_CASE("naive NMS keeps a single box") {
  detkit::Vocab vocab;
  const auto dets = group(vocab, {{0.9, box(0.1, 0.1, 0.5, 0.5)}});
  const auto kept = detkit::nms_naive(dets, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].index == 0);
  CHECK(kept[0].score == 0.9);
}

TEST_CASE("naive NMS suppresses above the threshold") {
  detkit::Vocab vocab;
  // iou = 0.6: A = [0,0,1,0.6], B = [0,0.15,1,0.75] -> inter 0.45, union 0.75
  const auto a = box(0.0, 0.0, 1.0, 0.6);
  const auto b = box(0.0, 0.15, 1.0, 0.75);
  CHECK(detkit::iou(a, b) == doctest::Approx(0.6));
  const auto kept = detkit::nms_naive(group(vocab, {{0.9, a}, {0.8, b}}), 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].index == 0);
}

TEST_CASE("naive NMS equals the exhaustive reference on random groups") {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 300; ++round) {
    const auto dets = random_group(rng, 5);
    const auto kept = detkit::nms_naive(dets, 0.5);
    const auto expected = ref::nms_naive(to_ref(dets), 0.5);
    REQUIRE(kept.size() == expected.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].index == expected[i]);
    }
  }
}

TEST_CASE("soft NMS leaves disjoint boxes untouched") {
  detkit::Vocab vocab;
  const auto dets =
      group(vocab, {{0.9, box(0, 0, 0.2, 0.2)}, {0.8, box(0.6, 0.6, 0.9, 0.9)}});
  const auto kept = detkit::nms_soft(dets, 0.5, 1e-5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.8);
}

TEST_CASE("soft NMS Gaussian decay worked example") {
  detkit::Vocab vocab;
  // iou exactly 0.4: A = [0,0,1,0.5], B = [0,0.214285714285714,1,0.714285714285714]
  const auto a = box(0.0, 0.0, 1.0, 0.5);
  const auto b = box(0.0, 1.5 / 7.0, 1.0, 5.0 / 7.0);
  CHECK(detkit::iou(a, b) == doctest::Approx(0.4).epsilon(1e-12));
  const auto kept = detkit::nms_soft(group(vocab, {{0.9, a}, {0.8, b}}), 0.5, 1e-5);
  REQUIRE(kept.size() == 2);
  const double overlap = detkit::iou(a, b);
  const double expected = 0.8 * std::exp(-(overlap * overlap) / 0.5);
  CHECK(kept[1].score == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kept[1].score == doctest::Approx(0.8 * std::exp(-0.32)).epsilon(1e-9));
}

TEST_CASE("soft NMS four-box chain equals the iterative reference") {
  detkit::Vocab vocab;
  const auto dets = group(vocab, {{0.9, box(0.0, 0.0, 0.4, 0.4)},
                                  {0.8, box(0.1, 0.0, 0.5, 0.4)},
                                  {0.7, box(0.2, 0.0, 0.6, 0.4)},
                                  {0.6, box(0.3, 0.0, 0.7, 0.4)}});
  const auto kept = detkit::nms_soft(dets, 0.5, 1e-5);
  const auto expected = ref::nms_soft(to_ref(dets), 0.5, 1e-5);
  REQUIRE(kept.size() == expected.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    CHECK(kept[i].index == expected[i].index);
    CHECK(kept[i].score == doctest::Approx(expected[i].score).epsilon(1e-12));
  }
}

TEST_CASE("adjacent NMS worked examples") {
  detkit::Vocab vocab;
  NmsConfig cfg;
  SUBCASE("single box unchanged") {
    const auto kept = detkit::nms_adj(group(vocab, {{0.9, box(0, 0, 0.5, 0.5)}}), cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
  }
  SUBCASE("high overlap removed in the hard stage, never rescored") {
    const auto a = box(0.0, 0.0, 1.0, 0.6);
    const auto b = box(0.0, 0.15, 1.0, 0.75);
    const auto kept = detkit::nms_adj(group(vocab, {{0.9, a}, {0.8, b}}), cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
  }
  SUBCASE("moderate overlap survives then decays") {
    const auto a = box(0.0, 0.0, 1.0, 0.5);
    const auto b = box(0.0, 1.5 / 7.0, 1.0, 5.0 / 7.0);
    const auto kept = detkit::nms_adj(group(vocab, {{0.9, a}, {0.8, b}}), cfg);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score == 0.9);
    const double overlap = detkit::iou(a, b);
    CHECK(kept[1].score ==
          doctest::Approx(0.8 * std::exp(-(overlap * overlap) / 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("adjacent NMS decomposes into its two stages") {
  std::mt19937_64 rng(33);
  NmsConfig cfg;
  for (int round = 0; round < 200; ++round) {
    const auto dets = random_group(rng, 12);
    const auto adj = detkit::nms_adj(dets, cfg);

    const auto stage1 = ref::nms_naive(to_ref(dets), cfg.hard_threshold);
    std::vector<ref::ScoredBox> survivors;
    for (std::size_t i : stage1) {
      survivors.push_back(ref::ScoredBox{testutil::to_ref(dets[i].box), dets[i].score});
    }
    const auto stage2 = ref::nms_soft(survivors, cfg.sigma, cfg.score_floor);
    REQUIRE(adj.size() == stage2.size());
    for (std::size_t i = 0; i < adj.size(); ++i) {
      CHECK(adj[i].index == stage1[stage2[i].index]);
      CHECK(adj[i].score == doctest::Approx(stage2[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft NMS with huge sigma changes nothing") {
  std::mt19937_64 rng(55);
  const auto dets = random_group(rng, 10);
  const auto kept = detkit::nms_soft(dets, 1e12, 0.0);
  REQUIRE(kept.size() == dets.size());
  for (const auto& k : kept) {
    CHECK(std::abs(k.score - dets[k.index].score) < 1e-9);
  }
}

TEST_CASE("NMS output properties") {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 100; ++round) {
    const auto dets = random_group(rng, 10);
    for (const auto kind :
         {detkit::NmsKind::kNaive, detkit::NmsKind::kSoft, detkit::NmsKind::kAdj}) {
      NmsConfig cfg;
      cfg.kind = kind;
      const auto kept = detkit::run_nms(dets, cfg);
      CHECK(kept.size() <= dets.size());
      for (std::size_t i = 0; i < kept.size(); ++i) {
        CHECK(kept[i].score <= dets[kept[i].index].score + 1e-15);
        if (i > 0) CHECK(kept[i - 1].score >= kept[i].score);
      }
    }
  }
}

TEST_CASE("apply_nms preserves roster and is thread-count independent") {
  std::mt19937_64 rng(88);
  detkit::Vocab vocab;
  std::vector<Detection> items;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    items.push_back(testutil::det(vocab, "img" + std::to_string(i % 7),
                                  "cat" + std::to_string(i % 3), u(rng),
                                  testutil::random_box(rng)));
  }
  const auto set = testutil::make_set("m", std::move(items));
  NmsConfig cfg;
  const auto one = detkit::apply_nms(set, cfg, 1);
  const auto four = detkit::apply_nms(set, cfg, 4);
  CHECK(one.roster == set.roster);
  REQUIRE(one.items.size() == four.items.size());
  for (std::size_t i = 0; i < one.items.size(); ++i) {
    CHECK(one.items[i] == four.items[i]);
  }
}
