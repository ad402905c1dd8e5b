#include <filesystem>

#include "testing.hpp"
#include "oracles.hpp"

#include "dpcl/common.hpp"
#include "dpcl/segnet.hpp"

using namespace dpcl;

namespace {

SegModel small_model(int k = 3) {
  torch::manual_seed(1);
  SegModelConfig cfg;
  cfg.num_classes = k;
  cfg.feature_dim = 8;
  cfg.base_width = 4;
  return SegModel(cfg);
}

}  // namespace

TEST_CASE("segmentation model forward") {
  auto model = small_model();
  model->eval();
  auto x = torch::rand({2, 3, 16, 16});
  auto a = model->forward(x);
  auto b = model->forward(x);
  CHECK(torch::equal(a.logits, b.logits));
  CHECK(a.features.sizes() == torch::IntArrayRef({2, 8, 4, 4}));
  CHECK(a.logits.sizes() == torch::IntArrayRef({2, 3, 4, 4}));
  auto z = model->forward(torch::zeros({1, 3, 16, 16}));
  CHECK(torch::isfinite(z.logits).all().item<bool>());
  CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 18, 16})), ShapeError);
  CHECK_THROWS_AS(model->forward(torch::rand({1, 1, 16, 16})), ShapeError);
}

TEST_CASE("task loss") {
  SUBCASE("uniform logits give log K") {
    auto l = task_loss(torch::zeros({1, 5, 3, 3}), torch::randint(0, 5, {1, 3, 3}, torch::kInt64));
    CHECK(l.item<double>() == doctest::Approx(std::log(5.0)));
  }
  SUBCASE("saturated correct logits give zero") {
    auto m = torch::randint(0, 3, {1, 4, 4}, torch::kInt64);
    auto logits = torch::one_hot(m, 3).permute({0, 3, 1, 2}).to(torch::kFloat64) * 1000.0;
    CHECK(task_loss(logits, m).item<double>() < 1e-12);
  }
  SUBCASE("matches a per-pixel loop with ignore") {
    torch::manual_seed(5);
    auto logits = torch::randn({1, 3, 4, 4}, torch::kFloat64);
    auto m = torch::randint(0, 3, {1, 4, 4}, torch::kInt64);
    m[0][1][2] = kIgnoreLabel;
    auto rows = oracle::to_mat(logits[0].reshape({3, -1}).t());
    std::vector<std::int64_t> y(m.data_ptr<std::int64_t>(), m.data_ptr<std::int64_t>() + 16);
    CHECK(std::fabs(task_loss(logits, m).item<double>() - oracle::cross_entropy(rows, y)) <= 1e-8);
  }
  SUBCASE("all ignored") {
    CHECK_THROWS_AS(task_loss(torch::zeros({1, 3, 2, 2}), torch::full({1, 2, 2}, kIgnoreLabel, torch::kInt64)),
                    StateError);
  }
}

TEST_CASE("fused prediction") {
  SUBCASE("agreeing heads") {
    auto c = torch::tensor({0.0, 1.0, 0.0}, torch::kFloat64).view({1, 3, 1, 1});
    CHECK(fuse_probabilities(c, c)[0][1][0][0].item<double>() == 1.0);
  }
  SUBCASE("opposite heads tie and resolve to class 0") {
    auto a = torch::tensor({1.0, 0.0}, torch::kFloat64).view({1, 2, 1, 1});
    auto b = torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 2, 1, 1});
    auto f = fuse_probabilities(a, b);
    CHECK(f[0][0][0][0].item<double>() == 0.5);
    CHECK(f[0][1][0][0].item<double>() == 0.5);
    CHECK(argmax_lowest(f)[0][0][0].item<std::int64_t>() == 0);
  }
  SUBCASE("fused map is the mean of the two heads and row-stochastic") {
    auto model = small_model(4);
    model->eval();
    auto bank = PrototypeBank::empty(4, 8);
    bank.prototypes = l2_normalize(torch::randn({4, 8}), 1);
    bank.initialized.assign(4, true);
    torch::NoGradGuard ng;
    auto x = torch::rand({2, 3, 16, 16});
    auto out = model->forward(x);
    auto fused = fuse_outputs(out, bank);
    CHECK(fused.used_prototypes);
    auto expect = 0.5 * torch::softmax(out.logits, 1) + 0.5 * prototype_predict(out.features, bank);
    CHECK(torch::allclose(fused.probs.to(torch::kFloat64), expect.to(torch::kFloat64), 0.0, 1e-7));
    CHECK(torch::allclose(fused.probs.sum(1), torch::ones({2, 4, 4}), 0.0, 1e-6));
    CHECK(torch::equal(fused.labels, argmax_lowest(fused.probs)));
  }
  SUBCASE("uninitialized bank falls back to the classifier") {
    auto model = small_model();
    model->eval();
    torch::NoGradGuard ng;
    auto x = torch::rand({1, 3, 8, 8});
    auto fused = fused_prediction(model, PrototypeBank::empty(3, 8), x);
    CHECK_FALSE(fused.used_prototypes);
    CHECK(torch::allclose(fused.probs, torch::softmax(model->forward(x).logits, 1)));
  }
  SUBCASE("invalid weight") {
    CHECK_THROWS_AS(fuse_probabilities(torch::ones({1}), torch::ones({1}), 1.5), ConfigError);
  }
}

TEST_CASE("argmax_lowest matches torch argmax and breaks ties low") {
  torch::manual_seed(2);
  auto p = torch::randint(0, 3, {2, 4, 5, 5}).to(torch::kFloat32);
  auto got = argmax_lowest(p);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 5; ++i)
      for (std::int64_t j = 0; j < 5; ++j) {
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < 4; ++k)
          if (p[b][k][i][j].item<float>() > p[b][best][i][j].item<float>()) best = k;
        CHECK(got[b][i][j].item<std::int64_t>() == best);
      }
}

TEST_CASE("resize_labels") {
  auto m = torch::randint(0, 4, {2, 4, 4}, torch::kInt64);
  SUBCASE("identity at the same size") { CHECK(torch::equal(resize_labels(m, 4, 4), m)); }
  SUBCASE("upsampling repeats cells and preserves the label set") {
    auto up = resize_labels(m, 16, 16);
    CHECK(torch::equal(up, m.repeat_interleave(4, 1).repeat_interleave(4, 2)));
    CHECK(torch::equal(std::get<0>(at::_unique(up)), std::get<0>(at::_unique(m))));
  }
  SUBCASE("downsampling by four picks cell centers") {
    auto big = torch::arange(256, torch::kInt64).view({1, 16, 16});
    auto down = resize_labels(big, 4, 4);
    CHECK(down[0][0][0].item<std::int64_t>() == 2 * 16 + 2);
    CHECK(down[0][3][1].item<std::int64_t>() == 14 * 16 + 6);
  }
}

TEST_CASE("segmentation checkpoint round-trip") {
  auto model = small_model();
  Checkpoint ck;
  model->save_to(ck);
  const auto path = std::filesystem::temp_directory_path() / "dpcl_seg_roundtrip.ckpt";
  ck.save(path);
  torch::manual_seed(77);
  SegModelConfig cfg = model->config();
  SegModel other(cfg);
  other->load_from(Checkpoint::load(path));
  CHECK(parameter_hash(*other) == parameter_hash(*model));
  cfg.num_classes = 5;
  SegModel wrong(cfg);
  CHECK_THROWS_AS(wrong->load_from(Checkpoint::load(path)), ShapeError);
  std::filesystem::remove(path);
}
