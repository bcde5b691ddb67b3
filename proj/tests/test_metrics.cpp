// Evaluation metrics: binarized IoU, rank-sum AUC, histogram intersection,
// and MAE, plus per-pair aggregation and the deterministic text report.
// Worked examples are pinned as literals; random cases are checked against
// naive pairwise oracles.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "affseg/metrics.hpp"

#include "test_support.hpp"

using namespace affseg;

namespace {

Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("aiou binarizes at one half and matches worked examples", "[metrics]") {
  const Vec gt = make_vec({1.0, 0.0, 1.0, 0.0});

  SECTION("perfect agreement after binarization") {
    CHECK(aiou(make_vec({0.9, 0.4, 0.6, 0.1}), gt) == 1.0);
  }

  SECTION("one hit, one false positive, one miss") {
    // binarized pred = [1,1,0,0]: intersection 1, union 3.
    CHECK(aiou(make_vec({0.9, 0.6, 0.1, 0.1}), gt) == 1.0 / 3.0);
  }

  SECTION("an empty union counts as perfect and is flagged") {
    bool empty = false;
    CHECK(aiou(make_vec({0.1, 0.2}), make_vec({0.0, 0.3}), &empty) == 1.0);
    CHECK(empty);
    empty = true;
    CHECK(aiou(make_vec({0.9, 0.2}), make_vec({1.0, 0.0}), &empty) == 1.0);
    CHECK_FALSE(empty);
  }

  SECTION("threshold boundary: exactly 0.5 is foreground") {
    CHECK(aiou(make_vec({0.5}), make_vec({1.0})) == 1.0);
    CHECK(aiou(make_vec({0.49999}), make_vec({1.0})) == 0.0);
  }

  SECTION("length mismatch throws") {
    CHECK_THROWS_AS(aiou(make_vec({0.5}), gt), InvalidInput);
  }
}

TEST_CASE("auc counts ties as half wins and matches worked examples", "[metrics]") {
  SECTION("half-tie worked example") {
    // pos scores {0.5, 0.9}, neg {0.1, 0.5}: wins 3, ties 1 -> 3.5/4.
    CHECK(auc(make_vec({0.1, 0.5, 0.5, 0.9}), make_vec({0.0, 0.0, 1.0, 1.0})) == 0.875);
  }

  SECTION("perfect and inverted rankings") {
    const Vec gt = make_vec({0.0, 1.0});
    CHECK(auc(make_vec({0.1, 0.9}), gt) == 1.0);
    CHECK(auc(make_vec({0.9, 0.1}), gt) == 0.0);
  }

  SECTION("a constant prediction scores one half") {
    CHECK(auc(make_vec({0.4, 0.4, 0.4}), make_vec({0.0, 1.0, 1.0})) == 0.5);
  }

  SECTION("single-class ground truth is undefined") {
    bool defined = true;
    CHECK(auc(make_vec({0.2, 0.8}), make_vec({1.0, 1.0}), &defined) == 0.0);
    CHECK_FALSE(defined);
    defined = true;
    CHECK(auc(make_vec({0.2, 0.8}), make_vec({0.0, 0.0}), &defined) == 0.0);
    CHECK_FALSE(defined);
  }

  SECTION("invariant under a monotone affine rescale of the scores") {
    Rng rng(900);
    const Vec pred = support::random_matrix(rng, 12, 1, 0.0, 1.0).col(0);
    Vec gt(12);
    for (Eigen::Index i = 0; i < 12; ++i) gt[i] = i % 3 == 0 ? 1.0 : 0.0;
    const Vec rescaled = (pred.array() * 2.0 + 1.0).matrix();
    CHECK(auc(pred, gt) == auc(rescaled, gt));
  }

  SECTION("length mismatch throws") {
    CHECK_THROWS_AS(auc(make_vec({0.5}), make_vec({1.0, 0.0})), InvalidInput);
  }
}

TEST_CASE("sim is the histogram intersection of sum-normalized maps", "[metrics]") {
  SECTION("worked example") {
    CHECK(std::abs(sim(make_vec({0.2, 0.8}), make_vec({0.5, 0.5})) - 0.7) < 1e-12);
  }

  SECTION("identical distributions intersect fully") {
    const Vec v = make_vec({0.1, 0.3, 0.6});
    CHECK(std::abs(sim(v, v) - 1.0) < 1e-12);
    // scale invariance: normalization removes the total mass
    CHECK(std::abs(sim((v.array() * 7.0).matrix(), v) - 1.0) < 1e-12);
  }

  SECTION("disjoint supports do not intersect") {
    CHECK(sim(make_vec({1.0, 0.0}), make_vec({0.0, 1.0})) == 0.0);
  }

  SECTION("a zero-sum side gives zero") {
    CHECK(sim(make_vec({0.0, 0.0}), make_vec({0.5, 0.5})) == 0.0);
    CHECK(sim(make_vec({0.5, 0.5}), make_vec({0.0, 0.0})) == 0.0);
  }

  SECTION("negative inputs are rejected") {
    CHECK_THROWS_AS(sim(make_vec({-0.1, 0.5}), make_vec({0.5, 0.5})), InvalidInput);
    CHECK_THROWS_AS(sim(make_vec({0.5, 0.5}), make_vec({-0.1, 0.5})), InvalidInput);
  }

  SECTION("length mismatch throws") {
    CHECK_THROWS_AS(sim(make_vec({0.5}), make_vec({0.5, 0.5})), InvalidInput);
  }
}

TEST_CASE("mae is the mean absolute difference", "[metrics]") {
  CHECK(std::abs(mae(make_vec({0.2, 0.8}), make_vec({0.5, 0.5})) - 0.3) < 1e-12);
  CHECK(mae(make_vec({0.25, 0.75}), make_vec({0.25, 0.75})) == 0.0);
  CHECK_THROWS_AS(mae(make_vec({0.5}), make_vec({0.5, 0.5})), InvalidInput);
  CHECK_THROWS_AS(mae(Vec(), Vec()), InvalidInput);
}

TEST_CASE("metrics match brute-force oracles on random maps", "[metrics]") {
  Rng rng(910);
  int undefined_seen = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(40));
    const Vec pred = support::random_matrix(rng, n, 1, 0.0, 1.0).col(0);
    Vec gt(n);
    for (Eigen::Index i = 0; i < n; ++i) gt[i] = rng.uniform(0.0, 1.0);

    CHECK(aiou(pred, gt) == support::aiou_oracle(pred, gt));

    bool defined = false, oracle_defined = false;
    const double a = auc(pred, gt, &defined);
    const double oa = support::auc_oracle(pred, gt, &oracle_defined);
    REQUIRE(defined == oracle_defined);
    if (defined) {
      CHECK(std::abs(a - oa) < 1e-12);
    } else {
      CHECK(a == 0.0);
      ++undefined_seen;
    }

    CHECK(std::abs(sim(pred, gt) - support::sim_oracle(pred, gt)) < 1e-12);
    CHECK(std::abs(mae(pred, gt) - support::mae_oracle(pred, gt)) < 1e-12);
  }
  // small maps guarantee a few single-class draws; both implementations agreed
  CHECK(undefined_seen > 0);

  SECTION("ties between many duplicated scores still agree") {
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng.uniform_index(20));
      Vec pred(n), gt(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        pred[i] = 0.25 * static_cast<double>(rng.uniform_index(4));  // heavy ties
        gt[i] = rng.uniform_index(2) == 0 ? 0.0 : 1.0;
      }
      bool defined = false, oracle_defined = false;
      const double a = auc(pred, gt, &defined);
      const double oa = support::auc_oracle(pred, gt, &oracle_defined);
      REQUIRE(defined == oracle_defined);
      if (defined) CHECK(std::abs(a - oa) < 1e-12);
    }
  }
}

TEST_CASE("evaluate_pair wires all four metrics with their flags", "[metrics]") {
  const Vec pred = make_vec({0.9, 0.6, 0.1, 0.1});
  const Vec gt = make_vec({1.0, 0.0, 1.0, 0.0});
  const PairMetrics pm = evaluate_pair("mug_000", "grasp", pred, gt);
  CHECK(pm.object_id == "mug_000");
  CHECK(pm.prompt_id == "grasp");
  CHECK(pm.aiou == aiou(pred, gt));
  CHECK(pm.auc == auc(pred, gt));
  CHECK(pm.sim == sim(pred, gt));
  CHECK(pm.mae == mae(pred, gt));
  CHECK(pm.auc_defined);
  CHECK_FALSE(pm.empty_union);

  const PairMetrics undef = evaluate_pair("cup", "fill", make_vec({0.1, 0.2}), make_vec({0.0, 0.0}));
  CHECK_FALSE(undef.auc_defined);
  CHECK(undef.empty_union);
  CHECK(undef.aiou == 1.0);
}

TEST_CASE("aggregation averages per-pair metrics with the right denominators", "[metrics]") {
  std::vector<PairMetrics> rows(3);
  rows[0].object_id = "a";
  rows[0].aiou = 0.5;
  rows[0].auc = 0.8;
  rows[0].sim = 0.4;
  rows[0].mae = 0.2;
  rows[1].object_id = "b";
  rows[1].aiou = 1.0;
  rows[1].auc = 0.0;
  rows[1].auc_defined = false;  // must not enter the AUC average
  rows[1].sim = 0.6;
  rows[1].mae = 0.0;
  rows[1].empty_union = true;
  rows[2].object_id = "c";
  rows[2].aiou = 0.0;
  rows[2].auc = 0.6;
  rows[2].sim = 0.2;
  rows[2].mae = 0.4;

  const MetricsReport rep = aggregate_metrics(rows);
  CHECK(rep.pairs == 3);
  CHECK(rep.auc_skipped == 1);
  CHECK(rep.empty_union == 1);
  CHECK(std::abs(rep.aiou - 0.5) < 1e-15);
  CHECK(std::abs(rep.auc - 0.7) < 1e-15);  // mean of the two defined pairs
  CHECK(std::abs(rep.sim - 0.4) < 1e-15);
  CHECK(std::abs(rep.mae - 0.2) < 1e-15);
  REQUIRE(rep.per_object.size() == 3);
  CHECK(rep.per_object[0].object_id == "a");

  SECTION("no pairs leaves clean zeros") {
    const MetricsReport empty = aggregate_metrics({});
    CHECK(empty.pairs == 0);
    CHECK(empty.aiou == 0.0);
    CHECK(empty.auc == 0.0);
    CHECK(empty.auc_skipped == 0);
    CHECK(format_report(empty).find("aggregate.pairs=0") != std::string::npos);
  }

  SECTION("all pairs undefined leaves the AUC aggregate at zero") {
    std::vector<PairMetrics> undef(2);
    undef[0].auc_defined = false;
    undef[1].auc_defined = false;
    const MetricsReport r = aggregate_metrics(undef);
    CHECK(r.auc == 0.0);
    CHECK(r.auc_skipped == 2);
  }
}

TEST_CASE("format_report emits deterministic bytes", "[metrics]") {
  std::vector<PairMetrics> rows;
  rows.push_back(evaluate_pair("pan_001", "lift", make_vec({1.0, 1.0}), make_vec({1.0, 1.0})));
  rows.push_back(evaluate_pair("cup_002", "fill", make_vec({0.1, 0.2}), make_vec({0.0, 0.0})));
  const MetricsReport rep = aggregate_metrics(rows);

  const std::string expected =
      "affseg-report/1\n"
      "aggregate.pairs=2\n"
      "aggregate.aiou=1.000000000\n"
      "aggregate.auc=0.000000000\n"
      "aggregate.sim=0.500000000\n"
      "aggregate.mae=0.075000000\n"
      "aggregate.auc_skipped=2\n"
      "aggregate.empty_union=1\n"
      "pair object=pan_001 prompt=lift aiou=1.000000000 auc=skipped sim=1.000000000 "
      "mae=0.000000000\n"
      "pair object=cup_002 prompt=fill aiou=1.000000000 auc=skipped sim=0.000000000 "
      "mae=0.150000000 empty_union=1\n";
  CHECK(format_report(rep) == expected);
  CHECK(format_report(rep) == format_report(rep));
}
