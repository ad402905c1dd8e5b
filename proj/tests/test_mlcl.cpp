#include <cmath>
#include <numeric>
#include <set>

#include "testing.hpp"
#include "oracles.hpp"

#include "dpcl/common.hpp"
#include "dpcl/mlcl.hpp"
#include "dpcl/rng.hpp"

using namespace dpcl;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

std::vector<std::int64_t> random_labels(int n, int k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int64_t> y;
  for (int i = 0; i < n; ++i) y.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(k))));
  return y;
}

PrototypeBank bank_from(const torch::Tensor& rows) {
  auto bank = PrototypeBank::empty(static_cast<int>(rows.size(0)), static_cast<int>(rows.size(1)), 0.999, 0.1,
                                   torch::kFloat64);
  bank.prototypes = l2_normalize(rows, 1);
  bank.initialized.assign(bank.initialized.size(), true);
  return bank;
}

}  // namespace

TEST_CASE("transition matrices: two identical same-class rows") {
  auto z = torch::tensor({{1.0, 0.0}, {1.0, 0.0}}, f64);
  auto t = build_transition_matrices(make_pixel_set(z, {0, 0}), 0.1, true);
  CHECK(torch::allclose(t.w_tilde, torch::full({2, 2}, 0.5, f64)));
  CHECK(torch::allclose(t.l_tilde, torch::full({2, 2}, 0.5, f64)));
}

TEST_CASE("transition matrices: two classes give identity label rows and a two-entry softmax") {
  auto z = torch::tensor({{1.0, 0.0}, {0.6, 0.8}}, f64);
  auto t = build_transition_matrices(make_pixel_set(z, {0, 1}), 0.1, true);
  CHECK(torch::allclose(t.l_tilde, torch::eye(2, f64)));
  const double s = 0.6;
  const double a = std::exp(1.0 / 0.1), b = std::exp(s / 0.1);
  CHECK(t.w_tilde[0][0].item<double>() == doctest::Approx(a / (a + b)).epsilon(1e-12));
  CHECK(t.w_tilde[0][1].item<double>() == doctest::Approx(b / (a + b)).epsilon(1e-12));
  CHECK(t.w[0][0].item<double>() == doctest::Approx(std::exp(10.0)));
}

TEST_CASE("transition matrices: rows are stochastic and W is symmetric") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    auto set = make_pixel_set(torch::randn({7, 3}, f64), random_labels(7, 3, seed));
    for (bool diag : {true, false}) {
      auto t = build_transition_matrices(set, 0.1, diag);
      CHECK(torch::allclose(t.w, t.w.t()));
      for (std::int64_t i = 0; i < 7; ++i) {
        CHECK(t.w_tilde[i].sum().item<double>() == doctest::Approx(1.0).epsilon(1e-9));
        if (t.row_valid[static_cast<std::size_t>(i)])
          CHECK(t.l_tilde[i].sum().item<double>() == doctest::Approx(1.0).epsilon(1e-9));
      }
      if (diag)
        for (std::int64_t i = 0; i < 7; ++i) CHECK(t.l[i][i].item<double>() == 1.0);
    }
  }
}

TEST_CASE("transition matrices: masked diagonal excludes singleton rows") {
  auto set = make_pixel_set(torch::randn({3, 2}, f64), {0, 0, 1});
  auto t = build_transition_matrices(set, 0.1, false);
  CHECK(t.excluded_rows == 1);
  CHECK_FALSE(t.row_valid[2]);
  auto loss = pixel_to_pixel_loss(set, 0.1, PixelMetric::kJS, false);
  CHECK(loss.skipped == 1);
}

TEST_CASE("js divergence examples") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(js_divergence(p, p) == 0.0);
  CHECK(js_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> a{0.5, 0.5}, b{0.9, 0.1};
  CHECK(std::fabs(js_divergence(a, b) - oracle::js(a, b)) < 1e-10);
  CHECK_THROWS_AS(js_divergence(std::vector<double>{0.5, 0.6}, a), NumericError);
}

TEST_CASE("js divergence is symmetric and bounded by ln 2") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int i = 0; i < 5; ++i) {
      p[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      q[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    if (sp == 0 || sq == 0) continue;
    for (int i = 0; i < 5; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    const double pq = js_divergence(p, q);
    CHECK(pq == js_divergence(q, p));
    CHECK(pq >= 0.0);
    CHECK(pq <= std::log(2.0) + 1e-15);
  }
}

TEST_CASE("pixel-to-pixel loss matches the per-row oracle for all four variants") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    torch::manual_seed(seed);
    auto rows = torch::randn({8, 4}, f64);
    auto y = random_labels(8, 3, seed + 100);
    auto set = make_pixel_set(rows, y);
    const auto m = oracle::to_mat(rows);
    for (bool diag : {true, false})
      for (auto metric : {PixelMetric::kJS, PixelMetric::kCE}) {
        const double got = pixel_to_pixel_loss(set, 0.1, metric, diag).value.item<double>();
        const double want = oracle::pixel_to_pixel(m, y, 0.1, metric == PixelMetric::kJS, diag);
        CHECK(std::fabs(got - want) < 1e-8);
      }
  }
}

TEST_CASE("Scl-CE times N equals the supervised contrastive loss") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    torch::manual_seed(seed);
    const int n = 6;
    auto rows = torch::randn({n, 3}, f64);
    auto y = random_labels(n, 2, seed + 7);
    auto set = make_pixel_set(rows, y);
    const auto pp = pixel_to_pixel_loss(set, 0.1, PixelMetric::kCE, false);
    const auto scl = supervised_contrastive_loss(set, 0.1);
    const int retained = n - pp.skipped;
    CHECK(std::fabs(pp.value.item<double>() * retained - scl.value.item<double>()) < 1e-8);
    CHECK(std::fabs(scl.value.item<double>() - oracle::supcon(oracle::to_mat(rows), y, 0.1)) < 1e-8);
  }
}

TEST_CASE("supervised contrastive loss examples") {
  auto same = make_pixel_set(torch::tensor({{1.0, 0.0}, {1.0, 0.0}}, f64), {0, 0});
  CHECK(supervised_contrastive_loss(same, 0.1).value.item<double>() == doctest::Approx(0.0));
  auto with_singleton = make_pixel_set(torch::randn({3, 2}, f64), {0, 0, 1});
  auto v = supervised_contrastive_loss(with_singleton, 0.1);
  CHECK(v.skipped == 1);
  CHECK(std::fabs(v.value.item<double>() - oracle::supcon(oracle::to_mat(with_singleton.z), {0, 0, 1}, 0.1)) < 1e-10);
}

TEST_CASE("pixel-to-pixel loss examples and bounds") {
  auto same = make_pixel_set(torch::ones({5, 3}, f64), {1, 1, 1, 1, 1});
  CHECK(pixel_to_pixel_loss(same, 0.1, PixelMetric::kJS, true).value.item<double>() == doctest::Approx(0.0).epsilon(1e-12));
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    torch::manual_seed(seed);
    auto set = make_pixel_set(torch::randn({10, 4}, f64), random_labels(10, 4, seed));
    const double v = pixel_to_pixel_loss(set, 0.1, PixelMetric::kJS, true).value.item<double>();
    CHECK(v >= 0.0);
    CHECK(v <= std::log(2.0));
  }
}

TEST_CASE("losses are invariant to permuting the sample rows") {
  torch::manual_seed(3);
  auto rows = torch::randn({9, 4}, f64);
  auto y = random_labels(9, 3, 11);
  std::vector<std::int64_t> perm{4, 2, 8, 0, 1, 7, 3, 6, 5};
  std::vector<std::int64_t> y_perm;
  for (auto i : perm) y_perm.push_back(y[static_cast<std::size_t>(i)]);
  auto a = make_pixel_set(rows, y);
  auto b = make_pixel_set(rows.index_select(0, torch::tensor(perm)), y_perm);
  for (bool diag : {true, false})
    for (auto metric : {PixelMetric::kJS, PixelMetric::kCE})
      CHECK(std::fabs(pixel_to_pixel_loss(a, 0.1, metric, diag).value.item<double>() -
                      pixel_to_pixel_loss(b, 0.1, metric, diag).value.item<double>()) < 1e-9);
  CHECK(std::fabs(supervised_contrastive_loss(a, 0.1).value.item<double>() -
                  supervised_contrastive_loss(b, 0.1).value.item<double>()) < 1e-9);
}

TEST_CASE("sample_pixels: pools, exhaustion and the half-and-half rule") {
  // 1 image, 4x4 grid, D=2. Class 0 has 10 pixels, class 1 has 5, one ignore.
  auto labels = torch::tensor({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 255}).reshape({1, 4, 4});
  auto features = torch::randn({1, 2, 4, 4}, f64);

  SUBCASE("all predictions correct") {
    auto set = sample_pixels(features, labels, labels.clone(), 4, 1);
    CHECK(set.incorrect_counts.at(0) == 0);
    CHECK(set.correct_counts.at(0) == 4);
  }
  SUBCASE("class with fewer pixels than requested is exhausted") {
    auto set = sample_pixels(features, labels, labels.clone(), 30, 1);
    CHECK(set.per_class_counts.at(1) == 5);
    CHECK(set.per_class_counts.at(0) == 10);
  }
  SUBCASE("counts match an enumeration of the pools") {
    auto preds = labels.clone();
    // 3 wrong pixels in class 0, 4 wrong in class 1.
    for (int i : {0, 1, 2, 10, 11, 12, 13}) preds.view({-1})[i] = labels.view({-1})[i].item<std::int64_t>() == 0 ? 1 : 0;
    for (int n : {2, 4, 6, 8, 30}) {
      auto set = sample_pixels(features, labels, preds, n, 9);
      const std::map<int, std::pair<int, int>> pools{{0, {7, 3}}, {1, {1, 4}}};  // (correct, incorrect)
      for (const auto& [k, pool] : pools) {
        int take_i = std::min(pool.second, n / 2);
        const int take_c = std::min(pool.first, n - take_i);
        take_i = std::min(pool.second, n - take_c);
        CHECK(set.incorrect_counts.at(k) == take_i);
        CHECK(set.correct_counts.at(k) == take_c);
      }
      // Drawn positions are distinct and carry their true labels.
      std::set<std::int64_t> seen(set.flat_indices.begin(), set.flat_indices.end());
      CHECK(seen.size() == set.flat_indices.size());
      for (std::size_t i = 0; i < set.labels.size(); ++i)
        CHECK(labels.view({-1})[set.flat_indices[i]].item<std::int64_t>() == set.labels[i]);
      for (std::int64_t i = 0; i < set.size(); ++i) CHECK(set.z[i].norm().item<double>() == doctest::Approx(1.0));
    }
  }
  SUBCASE("fixed seed is deterministic") {
    auto a = sample_pixels(features, labels, labels, 4, 3);
    auto b = sample_pixels(features, labels, labels, 4, 3);
    CHECK(a.flat_indices == b.flat_indices);
  }
  SUBCASE("no labeled pixels is an error") {
    auto ignore = torch::full({1, 4, 4}, 255, torch::kInt64);
    CHECK_THROWS_AS(sample_pixels(features, ignore, ignore, 4, 1), StateError);
  }
}

TEST_CASE("pixel-to-class loss") {
  const double tau = 0.1;
  SUBCASE("pixel equal to its orthonormal prototype") {
    const int k = 4;
    auto bank = bank_from(torch::eye(k, f64));
    auto features = torch::eye(k, f64)[2].reshape({1, k, 1, 1});
    auto mask = torch::full({1, 1, 1}, 2, torch::kInt64);
    const double want = -std::log(std::exp(10.0) / (std::exp(10.0) + (k - 1)));
    CHECK(pixel_to_class_loss(features, mask, bank, tau).value.item<double>() == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("identical prototypes give log K") {
    auto bank = bank_from(torch::ones({3, 2}, f64));
    auto features = torch::randn({1, 2, 2, 2}, f64);
    auto mask = torch::tensor({0, 1, 2, 1}).reshape({1, 2, 2});
    CHECK(pixel_to_class_loss(features, mask, bank, tau).value.item<double>() == doctest::Approx(std::log(3.0)));
  }
  SUBCASE("random 4x4 map against the per-pixel oracle") {
    torch::manual_seed(12);
    auto bank = bank_from(torch::randn({3, 5}, f64));
    auto features = torch::randn({1, 5, 4, 4}, f64);
    auto mask = torch::randint(0, 3, {1, 4, 4}, torch::kInt64);
    mask.view({-1})[5] = 255;
    auto pixels = oracle::to_mat(features.permute({0, 2, 3, 1}).reshape({16, 5}));
    std::vector<std::int64_t> y(mask.data_ptr<std::int64_t>(), mask.data_ptr<std::int64_t>() + 16);
    const double want = oracle::pixel_to_class(pixels, y, oracle::to_mat(bank.prototypes), tau);
    CHECK(std::fabs(pixel_to_class_loss(features, mask, bank, tau).value.item<double>() - want) < 1e-8);
  }
  SUBCASE("uninitialized classes are skipped and counted") {
    auto bank = bank_from(torch::eye(3, f64));
    bank.initialized[1] = false;
    auto features = torch::randn({1, 3, 1, 3}, f64);
    auto mask = torch::tensor({0, 1, 1}).reshape({1, 1, 3});
    auto v = pixel_to_class_loss(features, mask, bank, tau);
    CHECK(v.skipped == 2);
    CHECK(v.value.item<double>() >= 0.0);
  }
}

TEST_CASE("instance-to-class triplet loss") {
  const double xi = 0.5;
  auto bank = bank_from(torch::eye(2, f64));
  SUBCASE("satisfied margin contributes nothing") {
    std::vector<InstancePrototype> inst{{torch::tensor({1.0, 0.0}, f64), 0, 4}, {torch::tensor({0.0, 1.0}, f64), 1, 4}};
    // d(pos)=0, d(neg)=sqrt(2) > xi for both classes.
    CHECK(instance_to_class_loss(inst, bank, xi).value.item<double>() == doctest::Approx(0.0));
  }
  SUBCASE("equal distances contribute exactly xi") {
    auto v = l2_normalize(torch::tensor({1.0, 1.0}, f64), 0);
    std::vector<InstancePrototype> inst{{v, 0, 4}, {v, 1, 4}};
    CHECK(instance_to_class_loss(inst, bank, xi).value.item<double>() == doctest::Approx(xi).epsilon(1e-12));
  }
  SUBCASE("random instances against the quadruple-loop oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      torch::manual_seed(seed);
      auto b = bank_from(torch::randn({2, 3}, f64));
      std::vector<InstancePrototype> inst;
      std::vector<oracle::Instance> ref;
      for (int c : {0, 0, 1, 1}) {
        auto v = l2_normalize(torch::randn({3}, f64), 0);
        inst.push_back({v, c, 3});
        ref.push_back({oracle::to_mat(v.unsqueeze(0))[0], c});
      }
      const double want = oracle::instance_triplet(ref, oracle::to_mat(b.prototypes), xi);
      CHECK(std::fabs(instance_to_class_loss(inst, b, xi).value.item<double>() - want) < 1e-9);
    }
  }
  SUBCASE("no valid pairs returns zero with a flag") {
    std::vector<InstancePrototype> inst{{torch::tensor({1.0, 0.0}, f64), 0, 4}};
    auto v = instance_to_class_loss(inst, bank, xi);
    CHECK(v.degenerate);
    CHECK(v.value.item<double>() == 0.0);
  }
  SUBCASE("InfoNCE variant is a softmax over prototypes") {
    std::vector<InstancePrototype> inst{{torch::tensor({1.0, 0.0}, f64), 0, 4}};
    const double want = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
    CHECK(instance_to_class_loss(inst, bank, xi, InstanceLossKind::kInfoNce, 0.1).value.item<double>() ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("mlcl_loss recombination") {
  auto pp = torch::tensor(0.3, f64), pc = torch::tensor(1.2, f64), ic = torch::tensor(0.05, f64);
  CHECK(mlcl_loss(pp, pc, ic, 0.0).total.item<double>() == doctest::Approx(1.25));
  auto zero = torch::zeros({}, f64);
  CHECK(mlcl_loss(zero, zero, zero, 5.0).total.item<double>() == 0.0);
  CHECK(std::fabs(mlcl_loss(pp, pc, ic, 5.0).total.item<double>() - (5.0 * 0.3 + 1.2 + 0.05)) < 1e-10);
  CHECK_THROWS_AS(mlcl_loss(pp, pc, ic, -1.0), ConfigError);
}

TEST_CASE("loss landscape at the published settings") {
  const auto r = loss_landscape(0.1, 1.0, 512);
  CHECK(r.sup.argmin_s_plus == doctest::Approx(1.0));
  CHECK(r.sup.argmin_s_minus == doctest::Approx(-1.0));
  CHECK(r.ppce.argmin_s_plus == doctest::Approx(1.0));
  CHECK(r.ppce.argmin_s_minus == doctest::Approx(-1.0));
  CHECK(r.ppce.ratio > r.sup.ratio);
  CHECK(landscape_l_sup(1.0, -1.0, 0.1) ==
        doctest::Approx(-std::log(std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0)))).epsilon(1e-8));
  CHECK(std::fabs(landscape_l_sup(1.0, -1.0, 0.1)) < 1e-8);
  CHECK_THROWS_AS(loss_landscape(0.1, 1.0, 8), ConfigError);
}
