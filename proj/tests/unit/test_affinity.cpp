#include <doctest.h>

#include <cmath>
#include <random>

#include "alcfcn/affinity.hpp"
#include "alcfcn/gradcheck.hpp"

using namespace alcfcn;
using TD = Tensor<double>;

namespace {

TD random_features(std::mt19937_64& rng, int c, int h, int w, double spread = 1.0) {
  std::uniform_real_distribution<double> U(-spread, spread);
  std::vector<double> v(static_cast<std::size_t>(c) * h * w);
  for (auto& x : v) x = U(rng);
  return TD::from_data({c, h, w}, std::move(v));
}

// Dense row-stochastic matrix built directly from the definition.
std::vector<double> dense_transition(const TD& f, int radius, bool include_self, double beta) {
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2), n = h * w;
  std::vector<double> t(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      const int dy = i / w - j / w, dx = i % w - j % w;
      if (dy * dy + dx * dx > radius * radius) continue;
      double val;
      if (i == j) {
        if (!include_self) continue;
        val = 1.0;
      } else {
        double l1 = 0.0;
        for (int k = 0; k < c; ++k) l1 += std::abs(f[static_cast<std::size_t>(k) * n + i] - f[static_cast<std::size_t>(k) * n + j]);
        val = std::pow(std::exp(-l1), beta);
      }
      t[static_cast<std::size_t>(i) * n + j] = val;
      row += val;
    }
    for (int j = 0; j < n; ++j) t[static_cast<std::size_t>(i) * n + j] /= row;
  }
  return t;
}

std::vector<double> dense_apply(const std::vector<double>& m, const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += m[i * n + j] * v[j];
  return out;
}

TD project(const TD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = U(rng);
  return weighted_sum(y, std::move(w));
}

}  // namespace

TEST_SUITE("affinity") {
  TEST_CASE("neighbourhood offsets cover each unordered pair once") {
    for (int r : {1, 2, 5}) {
      auto offsets = forward_offsets(r);
      int full = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          if ((dy || dx) && dy * dy + dx * dx <= r * r) ++full;
      CHECK(offsets.size() * 2 == static_cast<std::size_t>(full));
    }
    CHECK(forward_offsets(1).size() == 2);
    CHECK_THROWS_AS(forward_offsets(-1), ContractError);
  }

  TEST_CASE("pair weights equal exp of negative L1 distance") {
    auto f = TD::from_data({2, 1, 2}, {0.0, 1.0, 0.5, -0.5});
    auto a = affinity_weights(f, NeighborhoodSpec{1, true});
    REQUIRE(a.weights.numel() == 1);
    CHECK(a.weights[0] == doctest::Approx(std::exp(-2.0)));

    std::mt19937_64 rng(4);
    auto g = random_features(rng, 3, 4, 5);
    auto b = affinity_weights(g, NeighborhoodSpec{2, true});
    const int n = 20;
    for (std::size_t p = 0; p < b.pairs->size(); ++p) {
      const int i = b.pairs->first[p], j = b.pairs->second[p];
      double l1 = 0.0;
      for (int k = 0; k < 3; ++k) l1 += std::abs(g[k * n + i] - g[k * n + j]);
      CHECK(b.weights[p] == doctest::Approx(std::exp(-l1)));
      CHECK(i < j);
    }
  }

  TEST_CASE("sparse transition matches the dense definition") {
    std::mt19937_64 rng(9);
    for (bool self : {true, false}) {
      for (double beta : {1.0, 3.0, 8.0}) {
        auto f = random_features(rng, 4, 5, 6, 0.3);
        auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{2, self}), beta);
        auto dense = t.to_dense();
        auto ref = dense_transition(f, 2, self, beta);
        REQUIRE(dense.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(dense[i] == doctest::Approx(ref[i]).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("rows are stochastic and refinement stays in the convex hull") {
    std::mt19937_64 rng(10);
    auto f = random_features(rng, 3, 8, 8);
    auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{5, true}), 8.0);
    for (double s : t.row_sums()) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : t.values.data()) CHECK(v >= 0.0);

    auto act = random_features(rng, 2, 8, 8, 5.0);
    auto out = random_walk_refine(act, t, 8);
    for (int k = 0; k < 2; ++k) {
      double lo = 1e300, hi = -1e300;
      for (int p = 0; p < 64; ++p) {
        lo = std::min(lo, act[k * 64 + p]);
        hi = std::max(hi, act[k * 64 + p]);
      }
      for (int p = 0; p < 64; ++p) {
        CHECK(out[k * 64 + p] >= lo - 1e-12);
        CHECK(out[k * 64 + p] <= hi + 1e-12);
      }
    }
  }

  TEST_CASE("three-pixel chain: two walk steps equal T squared times a") {
    auto f = TD::from_data({1, 1, 3}, {0.0, 0.4, 1.5});
    auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{1, true}), 2.0);
    const double w01 = std::exp(-2 * 0.4), w12 = std::exp(-2 * 1.1);
    const std::vector<double> m = {1 / (1 + w01), w01 / (1 + w01), 0,
                                   w01 / (1 + w01 + w12), 1 / (1 + w01 + w12), w12 / (1 + w01 + w12),
                                   0, w12 / (1 + w12), 1 / (1 + w12)};
    auto dense = t.to_dense();
    for (int i = 0; i < 9; ++i) CHECK(dense[i] == doctest::Approx(m[i]));
    std::vector<double> a = {3.0, -1.0, 2.0};
    auto expected = dense_apply(m, dense_apply(m, a));
    auto out = random_walk_refine(TD::from_data({1, 1, 3}, a), t, 2);
    for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(expected[i]));
  }

  TEST_CASE("zero walk steps return the activations unchanged") {
    std::mt19937_64 rng(1);
    auto f = random_features(rng, 2, 3, 3);
    auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{1, true}), 8.0);
    auto act = random_features(rng, 2, 3, 3);
    auto out = random_walk_refine(act, t, 0);
    for (std::size_t i = 0; i < act.numel(); ++i) CHECK(out[i] == act[i]);
  }

  TEST_CASE("larger beta keeps more mass on the self weight") {
    std::mt19937_64 rng(2);
    auto f = random_features(rng, 3, 6, 6);
    auto a = affinity_weights(f, NeighborhoodSpec{2, true});
    std::vector<double> prev;
    for (double beta : {1.0, 2.0, 4.0, 8.0, 16.0}) {
      auto dense = transition_matrix(a, beta).to_dense();
      std::vector<double> diag(36);
      for (int i = 0; i < 36; ++i) diag[i] = dense[i * 36 + i];
      if (!prev.empty()) {
        for (int i = 0; i < 36; ++i) CHECK(diag[i] >= prev[i] - 1e-15);
      }
      prev = diag;
    }
    CHECK_THROWS_AS(transition_matrix(a, 0.5), ContractError);
  }

  TEST_CASE("identical features average uniformly over the neighbourhood") {
    const int h = 5, w = 7, r = 2;
    auto f = TD::zeros({3, h, w});
    auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{r, true}), 8.0);
    std::mt19937_64 rng(6);
    auto act = random_features(rng, 1, h, w);
    auto out = random_walk_refine(act, t, 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            if ((yy - y) * (yy - y) + (xx - x) * (xx - x) <= r * r) {
              acc += act[yy * w + xx];
              ++n;
            }
        CHECK(out[y * w + x] == doctest::Approx(acc / n));
      }
  }

  TEST_CASE("isolated pixel without self weight is rejected") {
    auto f = TD::zeros({1, 1, 1});
    CHECK_THROWS_AS(transition_matrix(affinity_weights(f, NeighborhoodSpec{1, false}), 1.0), ContractError);
  }

  TEST_CASE("activation grid must match the transition size") {
    auto t = transition_matrix(affinity_weights(TD::zeros({1, 2, 2}), NeighborhoodSpec{1, true}), 1.0);
    CHECK_THROWS_AS(random_walk_refine(TD::zeros({2, 3, 3}), t, 1), DimensionError);
  }

  TEST_CASE("gradients reach features through weights, transition and walk") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 10; ++rep) {
      std::uniform_int_distribution<int> D(2, 4);
      const int c = D(rng), h = D(rng), w = D(rng);
      const int radius = 1 + rep % 2, steps = 1 + rep % 3;
      const double beta = rep % 2 ? 8.0 : 2.0;
      auto f = random_features(rng, c, h, w, 0.2);
      auto act = random_features(rng, 2, h, w);
      auto loss = [&](const TD& feat) {
        auto t = transition_matrix(affinity_weights(feat, NeighborhoodSpec{radius, true}), beta);
        return project(random_walk_refine(act, t, steps), 30 + rep);
      };
      CAPTURE(rep);
      CHECK(gradient_check(loss, f) < 1e-4);
      auto loss_act = [&](const TD& a) {
        auto t = transition_matrix(affinity_weights(f, NeighborhoodSpec{radius, true}), beta);
        return project(random_walk_refine(a, t, steps), 50 + rep);
      };
      CHECK(gradient_check(loss_act, act) < 1e-4);
    }
  }
}
