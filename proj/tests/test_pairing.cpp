#include "catch_amalgamated.hpp"

#include <set>

#include "ecpp/pairing.hpp"
#include "oracles.hpp"

using namespace ecpp;

namespace {

int code(PairingStrategy s) { return static_cast<int>(s); }

constexpr double kSmallRatio = 96.0 * 96.0 / (224.0 * 224.0);

}  // namespace

TEST_CASE("pair enumeration examples", "[pairing]") {
  CHECK(enumerate_pairs(PairingStrategy::FullGraph, 4).size() == 6);
  CHECK(enumerate_pairs(PairingStrategy::MultiCrop, 4) == PairSet{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}});
  CHECK(enumerate_pairs(PairingStrategy::CoreView, 2) == enumerate_pairs(PairingStrategy::TwoView, 2));
  CHECK(enumerate_pairs(PairingStrategy::CoreView, 4) == PairSet{{0, 1}, {0, 2}, {0, 3}});
  CHECK(enumerate_pairs(PairingStrategy::Ecpp, 5) == enumerate_pairs(PairingStrategy::FullGraph, 5));
  CHECK_THROWS(enumerate_pairs(PairingStrategy::TwoView, 3));
  CHECK_THROWS(enumerate_pairs(PairingStrategy::FullGraph, 1));
  for (auto s : kAllStrategies)
    if (s != PairingStrategy::TwoView) CHECK(enumerate_pairs(s, 2) == PairSet{{0, 1}});
}

TEST_CASE("pair sets match brute force", "[pairing]") {
  for (auto s : kAllStrategies)
    for (int k = 2; k <= 12; ++k) {
      if (!strategy_accepts(s, k)) continue;
      const auto pairs = enumerate_pairs(s, k);
      std::vector<std::pair<int, int>> got(pairs.begin(), pairs.end());
      CHECK(got == oracle::brute_pairs(code(s), k));
      CHECK(std::set<ViewPair>(pairs.begin(), pairs.end()).size() == pairs.size());
      for (auto [i, j] : pairs) CHECK((0 <= i && i < j && j < k));
      for (std::size_t n : {1u, 3u, 10u, 64u}) CHECK(positive_pair_count(s, k, n) == n * pairs.size());
    }
}

TEST_CASE("pair count closed forms", "[pairing]") {
  CHECK(positive_pair_count(PairingStrategy::FullGraph, 8, 1) == 28);
  CHECK(positive_pair_count(PairingStrategy::MultiCrop, 8, 1) == 13);
  CHECK(positive_pair_count(PairingStrategy::CoreView, 8, 1) == 7);
  CHECK(positive_pair_count(PairingStrategy::TwoView, 2, 5) == 5);
  for (auto s : kAllStrategies)
    for (int k = 2; k <= 8; ++k)
      if (strategy_accepts(s, k)) CHECK(positive_pair_count(s, k, 10) == 10 * positive_pair_count(s, k, 1));
  CHECK_THROWS(positive_pair_count(PairingStrategy::FullGraph, 4, 0));
}

TEST_CASE("compute cost", "[pairing]") {
  CHECK(compute_cost(PairingStrategy::Ecpp, 6, 1, kSmallRatio) == Catch::Approx(2.7346938775510203).epsilon(1e-12));
  CHECK(compute_cost(PairingStrategy::FullGraph, 6, 1, kSmallRatio) == 6.0);
  CHECK(compute_cost(PairingStrategy::TwoView, 2, 7, 0.5) == 14.0);
  for (int k = 2; k <= 10; ++k)
    CHECK(compute_cost(PairingStrategy::Ecpp, k, 3, 1.0) == compute_cost(PairingStrategy::FullGraph, k, 3, 1.0));
  CHECK_THROWS(compute_cost(PairingStrategy::Ecpp, 4, 1, 0.0));
  CHECK_THROWS(compute_cost(PairingStrategy::Ecpp, 4, 1, 1.5));
}

TEST_CASE("pairs per unit compute", "[pairing]") {
  CHECK(pairs_per_unit_compute(PairingStrategy::TwoView, 2, 1.0) == 0.5);
  CHECK(pairs_per_unit_compute(PairingStrategy::Ecpp, 6, 0.1837) == Catch::Approx(5.484861781483107).epsilon(1e-12));
  CHECK(pairs_per_unit_compute(PairingStrategy::Ecpp, 6, kSmallRatio) == Catch::Approx(5.485074626865671).epsilon(1e-12));

  // Ecpp dominates everything and FullGraph and MultiCrop each dominate
  // CoreView for every sub-unit ratio. FullGraph vs MultiCrop flips with the
  // ratio, so that ordering is only checked where the views are equal sized.
  for (int k = 3; k <= 16; ++k) {
    for (double r : {0.05, kSmallRatio, 0.5, 0.99}) {
      const double ecpp = pairs_per_unit_compute(PairingStrategy::Ecpp, k, r);
      const double full = pairs_per_unit_compute(PairingStrategy::FullGraph, k, r);
      const double multi = pairs_per_unit_compute(PairingStrategy::MultiCrop, k, r);
      const double core = pairs_per_unit_compute(PairingStrategy::CoreView, k, r);
      CHECK(ecpp >= full);
      CHECK(ecpp >= multi);
      CHECK(full >= core);
      CHECK(multi >= core);
    }
    CHECK(pairs_per_unit_compute(PairingStrategy::FullGraph, k, 1.0) >=
          pairs_per_unit_compute(PairingStrategy::MultiCrop, k, 1.0));
  }
  // The flip itself: at k = 3 a small-view multi-crop beats the all-large graph.
  CHECK(pairs_per_unit_compute(PairingStrategy::MultiCrop, 3, kSmallRatio) >
        pairs_per_unit_compute(PairingStrategy::FullGraph, 3, kSmallRatio));
}

TEST_CASE("strategy names", "[pairing]") {
  for (auto s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
  CHECK_FALSE(parse_strategy("bogus").has_value());
}
