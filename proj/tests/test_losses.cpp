#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>

#include "ecpp/gradcheck.hpp"
#include "ecpp/losses.hpp"
#include "ecpp/rng.hpp"
#include "oracles.hpp"

using namespace ecpp;
using Catch::Approx;

namespace {

// Unit rows drawn from a Gaussian, as an n×d double tensor.
TensorD unit_rows(std::size_t n, std::size_t d, std::uint64_t seed, bool grad = false) {
  CounterRng rng(seed);
  std::vector<double> v;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> row(d);
    for (auto& x : row) x = rng.normal();
    for (double x : oracle::unit(row)) v.push_back(x);
  }
  return TensorD::from({n, d}, std::move(v), grad);
}

TensorD raw_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return TensorD::from({n, d}, std::move(v), true);
}

Tensor to_float(const TensorD& t) {
  std::vector<float> v(t.data().begin(), t.data().end());
  return Tensor::from(t.shape(), std::move(v));
}

oracle::Mat to_mat(const TensorD& t) {
  oracle::Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.data()[r * t.dim(1) + c];
  return m;
}

std::vector<TensorD> random_views(int k, std::size_t n, std::size_t d, std::uint64_t seed) {
  std::vector<TensorD> out;
  for (int v = 0; v < k; ++v) out.push_back(unit_rows(n, d, seed * 100 + v));
  return out;
}

std::vector<oracle::Mat> to_mats(const std::vector<TensorD>& views) {
  std::vector<oracle::Mat> out;
  for (const auto& v : views) out.push_back(to_mat(v));
  return out;
}

ContrastiveOptions opts(double tau, bool exclude, bool pooled = false) { return {tau, exclude, pooled}; }

}  // namespace

TEST_CASE("cosine similarity matrix", "[losses]") {
  const auto a = unit_rows(3, 5, 1), b = unit_rows(4, 5, 2);
  const auto s = cosine_sim_matrix(a, b);
  REQUIRE(s.shape() == Shape{3, 4});
  const auto am = to_mat(a), bm = to_mat(b);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = 0; q < 4; ++q) {
      const double v = s.data()[p * 4 + q];
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
      CHECK(v == Approx(oracle::cos_sim(am[p], bm[q])).margin(1e-12));
    }
  const auto self = cosine_sim_matrix(a, a);
  for (std::size_t p = 0; p < 3; ++p) CHECK(self.data()[p * 3 + p] == Approx(1.0).margin(1e-12));
  const auto eye = TensorD::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto id = cosine_sim_matrix(eye, eye);
  for (std::size_t i = 0; i < 9; ++i) CHECK(id.data()[i] == (i % 4 == 0 ? 1.0 : 0.0));
  CHECK_THROWS_AS(cosine_sim_matrix(a, unit_rows(2, 4, 3)), ShapeError);
}

TEST_CASE("ordered term closed forms", "[losses]") {
  // z1 = e1, z1' = e1, z2 = e2, z2' = e3, tau = 1.
  const auto a = TensorD::from({2, 3}, {1, 0, 0, 0, 1, 0});
  const auto b = TensorD::from({2, 3}, {1, 0, 0, 0, 0, 1});
  CHECK(ntxent_ordered_term(a, b, 0, 1.0, true).item() == Approx(std::log(2.0) - 1.0).margin(1e-12));
  CHECK(ntxent_ordered_term(a, b, 0, 1.0, false).item() ==
        Approx(std::log((std::exp(1.0) + 2.0) / std::exp(1.0))).margin(1e-12));
  CHECK(ntxent_ordered_term(a, b, 0, 1.0, false).item() == Approx(0.5514).margin(1e-4));

  const auto one_a = unit_rows(1, 4, 5), one_b = unit_rows(1, 4, 6);
  for (double tau : {0.1, 0.2, 1.0}) CHECK(ntxent_ordered_term(one_a, one_b, 0, tau, false).item() == 0.0);
  CHECK_THROWS_AS(ntxent_ordered_term(one_a, one_b, 0, 0.2, true), DomainError);
  CHECK_THROWS_AS(simclr_loss(one_a, one_b, opts(0.2, true)), DomainError);
  CHECK_THROWS_AS(ntxent_ordered_term(a, b, 0, 0.0, false), DomainError);
  CHECK_THROWS_AS(ntxent_ordered_term(a, b, 2, 0.2, false), ShapeError);
}

TEST_CASE("simclr loss matches the scalar oracle", "[losses]") {
  for (bool exclude : {false, true})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto a = unit_rows(4, 8, seed), b = unit_rows(4, 8, seed + 50);
      const double want = oracle::simclr(to_mat(a), to_mat(b), 0.2, exclude);
      const auto rep = simclr_loss(a, b, opts(0.2, exclude));
      CHECK(rep.loss.item() == Approx(want).margin(1e-9));
      CHECK(rep.positive_pair_terms == 4);
      CHECK(rep.ordered_terms == 8);
      CHECK(simclr_loss(to_float(a), to_float(b), opts(0.2, exclude)).loss.item() == Approx(want).margin(1e-5));

      double by_terms = 0.0;
      for (std::size_t i = 0; i < 4; ++i)
        by_terms += ntxent_ordered_term(a, b, i, 0.2, exclude).item() + ntxent_ordered_term(b, a, i, 0.2, exclude).item();
      CHECK(by_terms == Approx(want).margin(1e-9));
    }
}

TEST_CASE("simclr loss symmetries", "[losses]") {
  const auto a = unit_rows(6, 8, 7), b = unit_rows(6, 8, 8);
  const double base = simclr_loss(a, b, opts(0.2, false)).loss.item();
  CHECK(simclr_loss(b, a, opts(0.2, false)).loss.item() == Approx(base).margin(1e-12));
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto permute = [&](const TensorD& t) {
    std::vector<double> v;
    for (auto p : perm)
      for (std::size_t c = 0; c < 8; ++c) v.push_back(t.data()[p * 8 + c]);
    return TensorD::from({6, 8}, std::move(v));
  };
  CHECK(simclr_loss(permute(a), permute(b), opts(0.2, false)).loss.item() == Approx(base).margin(1e-6));
  CHECK(simclr_loss(to_float(permute(a)), to_float(permute(b)), opts(0.2, false)).loss.item() ==
        Approx(simclr_loss(to_float(a), to_float(b), opts(0.2, false)).loss.item()).margin(1e-5));
}

TEST_CASE("excluding the self positive strictly lowers every term", "[losses]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 2 + seed % 5;
    const auto a = unit_rows(n, 6, seed), b = unit_rows(n, 6, seed + 99);
    for (std::size_t i = 0; i < n; ++i)
      for (double tau : {0.1, 0.2, 0.5, 1.0})
        CHECK(ntxent_ordered_term(a, b, i, tau, true).item() < ntxent_ordered_term(a, b, i, tau, false).item());
  }
}

TEST_CASE("k-view loss matches the oracle", "[losses]") {
  for (auto s : kAllStrategies)
    for (int k : {2, 3, 5}) {
      if (!strategy_accepts(s, k)) continue;
      for (bool exclude : {false, true}) {
        const auto views = random_views(k, 4, 6, 10 + k);
        const auto rep = kview_loss(views, s, opts(0.2, exclude));
        CHECK(rep.loss.item() == Approx(oracle::kview(to_mats(views), static_cast<int>(s), 0.2, exclude)).margin(1e-9));
        CHECK(kview_loss(EmbeddingBatch<double>::from_views(views), s, opts(0.2, exclude)).loss.item() ==
              Approx(rep.loss.item()).margin(1e-9));
      }
    }

  const auto two = random_views(2, 5, 8, 3);
  CHECK(kview_loss(two, PairingStrategy::FullGraph, opts(0.2, false)).loss.item() ==
        simclr_loss(two[0], two[1], opts(0.2, false)).loss.item());

  const auto three = random_views(3, 2, 8, 4);
  const double sum3 = simclr_loss(three[0], three[1], opts(0.2, false)).loss.item() +
                      simclr_loss(three[0], three[2], opts(0.2, false)).loss.item() +
                      simclr_loss(three[1], three[2], opts(0.2, false)).loss.item();
  CHECK(kview_loss(three, PairingStrategy::FullGraph, opts(0.2, false)).loss.item() == Approx(sum3).margin(1e-6));
}

TEST_CASE("pooled negatives", "[losses]") {
  for (bool exclude : {false, true}) {
    const auto views = random_views(4, 3, 5, 21);
    const auto mats = to_mats(views);
    double want = 0.0;
    for (auto [i, j] : enumerate_pairs(PairingStrategy::FullGraph, 4)) want += oracle::pooled_pair(mats, i, j, 0.2, exclude);
    CHECK(kview_loss(views, PairingStrategy::FullGraph, opts(0.2, exclude, true)).loss.item() ==
          Approx(want).margin(1e-9));
  }
  // With two views pooling changes nothing.
  const auto two = random_views(2, 4, 5, 22);
  CHECK(kview_loss(two, PairingStrategy::FullGraph, opts(0.2, true, true)).loss.item() ==
        Approx(kview_loss(two, PairingStrategy::FullGraph, opts(0.2, true)).loss.item()).margin(1e-12));
}

TEST_CASE("term counts follow the pair counts", "[losses]") {
  for (auto s : kAllStrategies)
    for (int k = 2; k <= 8; ++k) {
      if (!strategy_accepts(s, k)) continue;
      for (std::size_t n : {1u, 2u, 5u}) {
        const auto rep = kview_loss(random_views(k, n, 4, k * 7 + n), s, opts(0.2, false));
        CHECK(rep.positive_pair_terms == positive_pair_count(s, k, n));
        CHECK(rep.ordered_terms == 2 * rep.positive_pair_terms);
      }
    }
}

TEST_CASE("full-graph loss ignores view order", "[losses]") {
  const auto views = random_views(5, 4, 6, 31);
  for (bool exclude : {false, true}) {
    const double base = kview_loss(views, PairingStrategy::Ecpp, opts(0.2, exclude)).loss.item();
    std::vector<TensorD> shuffled{views[3], views[0], views[4], views[2], views[1]};
    CHECK(kview_loss(shuffled, PairingStrategy::Ecpp, opts(0.2, exclude)).loss.item() == Approx(base).margin(1e-5));
    CHECK(kview_loss(shuffled, PairingStrategy::FullGraph, opts(0.2, exclude)).loss.item() == Approx(base).margin(1e-5));
  }
}

TEST_CASE("contrastive gradients", "[losses]") {
  const auto other = unit_rows(3, 4, 41);
  for (bool exclude : {false, true}) {
    auto pair = [&](const TensorD& x) { return simclr_loss(l2_normalize(x), other, opts(0.2, exclude)).loss; };
    CHECK(finite_difference_check(pair, raw_rows(3, 4, 42), 1e-5) < 1e-4);
    auto term = [&](const TensorD& x) { return ntxent_ordered_term(l2_normalize(x), other, 1, 0.5, exclude); };
    CHECK(finite_difference_check(term, raw_rows(3, 4, 43), 1e-5) < 1e-4);
  }
  const auto v1 = unit_rows(3, 4, 44), v2 = unit_rows(3, 4, 45);
  for (bool pooled : {false, true}) {
    auto kv = [&](const TensorD& x) {
      return kview_loss(std::vector<TensorD>{l2_normalize(x), v1, v2}, PairingStrategy::Ecpp, opts(0.2, true, pooled)).loss;
    };
    CHECK(finite_difference_check(kv, raw_rows(3, 4, 46), 1e-5) < 1e-4);
  }
}

TEST_CASE("byol loss values", "[losses]") {
  const auto t = unit_rows(5, 6, 51);
  CHECK(byol_pair_loss(t, t).item() == Approx(0.0).margin(1e-12));
  CHECK(byol_pair_loss(scale(t, -1.0), t).item() == Approx(4.0).margin(1e-12));
  const auto p = unit_rows(5, 6, 52);
  CHECK(byol_pair_loss(p, t).item() == Approx(oracle::byol(to_mat(p), to_mat(t))).margin(1e-9));
  CHECK(byol_pair_loss(to_float(p), to_float(t)).item() == Approx(oracle::byol(to_mat(p), to_mat(t))).margin(1e-6));

  const std::vector<TensorD> same(4, t);
  CHECK(byol_kview_loss(same, same, PairingStrategy::FullGraph).loss.item() == Approx(0.0).margin(1e-12));
  const auto on = random_views(4, 3, 6, 53);
  const auto tg = random_views(4, 3, 6, 54);
  const auto rep = byol_kview_loss(on, tg, PairingStrategy::FullGraph);
  CHECK(rep.positive_pair_terms == 6 * 3);
  CHECK(rep.ordered_terms == 12 * 3);
  double want = 0.0;
  for (auto [i, j] : enumerate_pairs(PairingStrategy::FullGraph, 4))
    want += oracle::byol(to_mat(on[i]), to_mat(tg[j])) + oracle::byol(to_mat(on[j]), to_mat(tg[i]));
  CHECK(rep.loss.item() == Approx(want).margin(1e-9));

  const std::vector<TensorD> on2{on[0], on[1]}, tg2{tg[0], tg[1]};
  CHECK(byol_kview_loss(on2, tg2, PairingStrategy::TwoView).loss.item() ==
        Approx(byol_pair_loss(on[0], tg[1]).item() + byol_pair_loss(on[1], tg[0]).item()).margin(1e-12));
}

TEST_CASE("byol stop-gradient", "[losses]") {
  auto online = raw_rows(3, 4, 61);
  auto target = raw_rows(3, 4, 62);
  auto loss = byol_pair_loss(l2_normalize(online), l2_normalize(target));
  backward(loss);
  REQUIRE(online.has_grad());
  bool any_nonzero = false;
  for (double g : online.grad()) any_nonzero = any_nonzero || g != 0.0;
  CHECK(any_nonzero);
  CHECK_FALSE(target.has_grad());

  // Stop-gradient: check wrt the online side only, with a fixed target.
  const auto fixed = unit_rows(3, 4, 63);
  auto f = [&](const TensorD& x) { return byol_pair_loss(l2_normalize(x), fixed); };
  CHECK(finite_difference_check(f, raw_rows(3, 4, 64), 1e-5) < 1e-4);

  // Without stop-gradient both sides get gradient and both pass the check.
  const auto offset = raw_rows(3, 4, 68).detach();
  auto g = [&](const TensorD& x) { return byol_pair_loss(l2_normalize(x), l2_normalize(add(x, offset)), false); };
  CHECK(finite_difference_check(g, raw_rows(3, 4, 65), 1e-5) < 1e-4);
  auto h = [&](const TensorD& x) { return byol_pair_loss(fixed, l2_normalize(x), false); };
  CHECK(finite_difference_check(h, raw_rows(3, 4, 66), 1e-5) < 1e-4);
  auto target2 = raw_rows(3, 4, 67);
  backward(byol_pair_loss(fixed, l2_normalize(target2), false));
  CHECK(target2.has_grad());
}
