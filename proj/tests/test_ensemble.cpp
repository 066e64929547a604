#include <doctest.h>

#include <algorithm>
#include <random>

#include "detkit/ensemble.hpp"
#include "detkit/errors.hpp"
#include "testutil.hpp"

using detkit::Detection;
using detkit::NmsConfig;
using detkit::TaggedDetection;
using detkit::VotingConfig;
using detkit::Vocab;
using testutil::box;

TEST_CASE("pfdet weights: single model gets weight 1 everywhere") {
  const auto table = detkit::pfdet_weights({{{0, 0.4}, {1, 0.9}}});
  CHECK(table.weight.at({0, 0}) == doctest::Approx(1.0));
  CHECK(table.weight.at({0, 1}) == doctest::Approx(1.0));
  CHECK(table.missing.empty());
}

TEST_CASE("pfdet weights: AP ratio against the best model") {
  const auto table = detkit::pfdet_weights({{{0, 0.4}}, {{0, 0.8}}});
  CHECK(table.weight.at({0, 0}) == doctest::Approx(0.5));
  CHECK(table.weight.at({1, 0}) == doctest::Approx(1.0));
}

TEST_CASE("pfdet weights: all-zero AP zeroes the category") {
  Vocab vocab;
  const auto table = detkit::pfdet_weights({{{0, 0.0}}, {{0, 0.0}}});
  CHECK(table.weight.at({0, 0}) == 0.0);
  CHECK(table.weight.at({1, 0}) == 0.0);

  detkit::Detection d = testutil::det(vocab, "img", "c", 0.9, box(0.1, 0.1, 0.4, 0.4));
  d.category = 0;
  auto set = testutil::make_set("m", {d});
  const auto reweighted = detkit::apply_class_weights({set, set}, table);
  CHECK(reweighted[0].items[0].score == 0.0);
}

TEST_CASE("pfdet weights: missing category gets weight 0 and a record") {
  const auto table = detkit::pfdet_weights({{{0, 0.5}}, {}});
  CHECK(table.weight.at({1, 0}) == 0.0);
  REQUIRE(table.missing.size() == 1);
  CHECK(table.missing[0] == std::pair<int, int>{1, 0});
}

TEST_CASE("pfdet reweighting preserves within-model, within-category ranking") {
  std::mt19937_64 rng(5);
  Vocab vocab;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> items;
  for (int i = 0; i < 50; ++i) {
    items.push_back(testutil::det(vocab, "img", "c", u(rng), testutil::random_box(rng)));
  }
  auto set = testutil::make_set("m", items);
  const auto table = detkit::pfdet_weights(
      {{{items[0].category, 0.3}}, {{items[0].category, 0.9}}});
  const auto out = detkit::apply_class_weights({set}, table);
  for (std::size_t i = 0; i + 1 < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      if (items[i].score < items[j].score) {
        CHECK(out[0].items[i].score <= out[0].items[j].score);
      }
    }
  }
}

TEST_CASE("vote: a lone model passes through unchanged") {
  Vocab vocab;
  const std::vector<std::vector<Detection>> sources{
      {testutil::det(vocab, "img", "c", 0.6, box(0.1, 0.1, 0.5, 0.5))}};
  const auto merged = detkit::vote_group(sources, VotingConfig{}, NmsConfig{});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].score == 0.6);
  CHECK(merged[0].box == box(0.1, 0.1, 0.5, 0.5));
}

TEST_CASE("vote: score bonus worked example") {
  Vocab vocab;
  const auto b = box(0.1, 0.1, 0.5, 0.5);
  std::vector<std::vector<Detection>> sources;
  sources.push_back({testutil::det(vocab, "img", "c", 0.6, b)});
  sources.push_back({testutil::det(vocab, "img", "c", 0.5, b)});
  sources.push_back({testutil::det(vocab, "img", "c", 0.4, b)});
  sources.push_back({testutil::det(vocab, "img", "c", 0.3, b)});
  sources.push_back({testutil::det(vocab, "img", "c", 0.2, b)});
  const auto merged = detkit::vote_group(sources, VotingConfig{}, NmsConfig{});
  // identical boxes: the hard pass keeps only the top box, which then gathers
  // all four voters
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].score ==
        doctest::Approx(0.6 + 0.05 * (0.5 + 0.4 + 0.3 + 0.2)).epsilon(1e-12));
  CHECK(merged[0].score == doctest::Approx(0.67).epsilon(1e-12));
  CHECK(merged[0].box == b);
}

TEST_CASE("vote: box blend worked example") {
  Vocab vocab;
  VotingConfig cfg;
  cfg.match_iou = 0.2;  // the fixture pair overlaps at IoU 0.25
  std::vector<std::vector<Detection>> sources;
  sources.push_back({testutil::det(vocab, "img", "c", 0.9, box(0, 0, 1, 1))});
  sources.push_back({testutil::det(vocab, "img", "c", 0.5, box(0, 0, 0.5, 0.5))});
  const auto merged = detkit::vote_group(sources, cfg, NmsConfig{});
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].box.x_min == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(merged[0].box.y_min == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(merged[0].box.x_max - 0.85) < 1e-12);
  CHECK(std::abs(merged[0].box.y_max - 0.85) < 1e-12);
  CHECK(merged[0].score == doctest::Approx(0.9 + 0.05 * 0.5).epsilon(1e-12));
}

TEST_CASE("vote: no matches leaves score and box alone") {
  Vocab vocab;
  std::vector<std::vector<Detection>> sources;
  sources.push_back({testutil::det(vocab, "img", "c", 0.6, box(0, 0, 0.2, 0.2))});
  sources.push_back({testutil::det(vocab, "img", "c", 0.5, box(0.7, 0.7, 0.9, 0.9))});
  const auto merged = detkit::vote_group(sources, VotingConfig{}, NmsConfig{});
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].score == 0.6);
  CHECK(merged[0].box == box(0, 0, 0.2, 0.2));
  CHECK(merged[1].score == 0.5);
}

TEST_CASE("vote: k identical voters leave the box exactly in place") {
  Vocab vocab;
  const auto b = box(0.2, 0.3, 0.6, 0.9);
  std::vector<TaggedDetection> pooled;
  pooled.push_back({testutil::det(vocab, "img", "c", 0.9, b), 0});
  for (int s = 1; s <= 4; ++s) {
    pooled.push_back({testutil::det(vocab, "img", "c", 0.5, b), s});
  }
  const std::vector<TaggedDetection> survivors{pooled[0]};
  const auto merged = detkit::vote_survivors(pooled, survivors, VotingConfig{});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].box.x_min == doctest::Approx(b.x_min).epsilon(1e-15));
  CHECK(merged[0].box.y_min == doctest::Approx(b.y_min).epsilon(1e-15));
  CHECK(merged[0].box.x_max == doctest::Approx(b.x_max).epsilon(1e-15));
  CHECK(merged[0].box.y_max == doctest::Approx(b.y_max).epsilon(1e-15));
}

TEST_CASE("vote: caps at k voters and clamps the score at 1") {
  Vocab vocab;
  const auto b = box(0.2, 0.2, 0.8, 0.8);
  std::vector<TaggedDetection> pooled;
  pooled.push_back({testutil::det(vocab, "img", "c", 0.95, b), 0});
  for (int s = 1; s <= 6; ++s) {
    pooled.push_back({testutil::det(vocab, "img", "c", 0.9, b), s});
  }
  const std::vector<TaggedDetection> survivors{pooled[0]};
  const auto merged = detkit::vote_survivors(pooled, survivors, VotingConfig{});
  REQUIRE(merged.size() == 1);
  // 0.95 + 0.05 * 4 * 0.9 = 1.13 before the clamp
  CHECK(merged[0].score == 1.0);
}

TEST_CASE("vote: blended corners stay inside the participating corner hull") {
  std::mt19937_64 rng(17);
  Vocab vocab;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 200; ++round) {
    const auto base = testutil::random_box(rng);
    std::vector<std::vector<Detection>> sources;
    const int n = 2 + static_cast<int>(u(rng) * 4);
    std::vector<double> x_min, x_max, y_max;
    for (int s = 0; s < n; ++s) {
      const auto b = testutil::random_box_near(rng, base, 0.05);
      sources.push_back({testutil::det(vocab, "img", "c", 0.2 + 0.8 * u(rng), b)});
      x_min.push_back(b.x_min);
      x_max.push_back(b.x_max);
      y_max.push_back(b.y_max);
    }
    const auto merged = detkit::vote_group(sources, VotingConfig{}, NmsConfig{});
    for (const auto& m : merged) {
      CHECK(m.box.x_min >= *std::min_element(x_min.begin(), x_min.end()) - 1e-12);
      CHECK(m.box.x_min <= *std::max_element(x_min.begin(), x_min.end()) + 1e-12);
      CHECK(m.box.y_max >= *std::min_element(y_max.begin(), y_max.end()) - 1e-12);
      CHECK(m.box.y_max <= *std::max_element(y_max.begin(), y_max.end()) + 1e-12);
      CHECK(m.score <= 1.0);
    }
  }
}

TEST_CASE("vote: the bonus never lowers a survivor's score") {
  std::mt19937_64 rng(29);
  Vocab vocab;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 100; ++round) {
    const auto base = testutil::random_box(rng);
    std::vector<std::vector<Detection>> sources;
    for (int s = 0; s < 3; ++s) {
      sources.push_back({testutil::det(vocab, "img", "c", u(rng),
                                       testutil::random_box_near(rng, base, 0.1))});
    }
    NmsConfig nms_cfg;
    nms_cfg.kind = detkit::NmsKind::kNaive;  // survivor scores stay undecayed
    std::vector<TaggedDetection> pooled;
    for (int s = 0; s < 3; ++s) pooled.push_back({sources[s][0], s});
    std::vector<Detection> plain;
    for (const auto& t : pooled) plain.push_back(t.det);
    std::vector<TaggedDetection> survivors;
    for (const auto& k : detkit::nms_naive(plain, 0.5)) {
      survivors.push_back(pooled[k.index]);
    }
    const auto merged = detkit::vote_survivors(pooled, survivors, VotingConfig{});
    REQUIRE(merged.size() == survivors.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
      CHECK(merged[i].score >= survivors[i].det.score - 1e-15);
      CHECK(merged[i].score <= 1.0);
    }
  }
}

TEST_CASE("cascade fusion worked examples") {
  const auto weights = detkit::default_cascade_weights();
  SUBCASE("constant stages") {
    const std::vector<double> stages{0.8, 0.8, 0.8, 0.8};
    CHECK(detkit::cascade_fuse(stages, weights) == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("first stage only") {
    const std::vector<double> stages{1.0, 0.0, 0.0, 0.0};
    CHECK(detkit::cascade_fuse(stages, weights) ==
          doctest::Approx(0.75 / 2.25).epsilon(1e-12));
  }
  SUBCASE("single stage is the identity") {
    const std::vector<double> stages{0.62};
    const std::vector<double> w{1.0};
    CHECK(detkit::cascade_fuse(stages, w) == doctest::Approx(0.62));
  }
}

TEST_CASE("cascade fusion is invariant to weight scaling and rejects zero weights") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 100; ++round) {
    const std::vector<double> stages{u(rng), u(rng), u(rng)};
    std::vector<double> weights{0.1 + u(rng), 0.1 + u(rng), 0.1 + u(rng)};
    const double base = detkit::cascade_fuse(stages, weights);
    std::vector<double> scaled = weights;
    for (auto& w : scaled) w *= 7.5;
    CHECK(detkit::cascade_fuse(stages, scaled) == doctest::Approx(base).epsilon(1e-12));
  }
  const std::vector<double> stages{0.5, 0.5};
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(detkit::cascade_fuse(stages, zero), detkit::InputError);
  const std::vector<double> mismatched{1.0};
  CHECK_THROWS_AS(detkit::cascade_fuse(stages, mismatched), detkit::InputError);
}

TEST_CASE("ensemble over full sets merges per image and category") {
  Vocab vocab;
  const auto shared = box(0.1, 0.1, 0.5, 0.5);
  auto a = testutil::make_set(
      "a", {testutil::det(vocab, "img1", "c", 0.8, shared),
            testutil::det(vocab, "img2", "d", 0.7, box(0.2, 0.2, 0.6, 0.6))});
  auto b = testutil::make_set("b", {testutil::det(vocab, "img1", "c", 0.6, shared)});
  const auto merged = detkit::ensemble_detections({a, b}, VotingConfig{}, NmsConfig{});
  REQUIRE(merged.items.size() == 2);
  // img1/c: one survivor at 0.8 with one voter at 0.6
  double img1_score = 0.0;
  for (const auto& d : merged.items) {
    if (vocab.images.name(d.image) == "img1") img1_score = d.score;
  }
  CHECK(img1_score == doctest::Approx(0.8 + 0.05 * 0.6).epsilon(1e-12));
  CHECK(merged.roster.size() == 2);
}
