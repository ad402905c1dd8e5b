// Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Heavy criteria (5-8) train real models at the default desk
// scale; intermediate reports land in --work-dir.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradient_cases.hpp"
#include "oracles.hpp"

#include "dpcl/ablation.hpp"
#include "dpcl/adapt.hpp"
#include "dpcl/artifacts.hpp"
#include "dpcl/common.hpp"
#include "dpcl/config.hpp"
#include "dpcl/evaluate.hpp"
#include "dpcl/metrics.hpp"
#include "dpcl/mlcl.hpp"
#include "dpcl/protobank.hpp"
#include "dpcl/rng.hpp"
#include "dpcl/segnet.hpp"
#include "dpcl/ssdp.hpp"
#include "dpcl/train.hpp"

namespace fs = std::filesystem;
using namespace dpcl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

void note(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

torch::Tensor random_rows(Rng& rng, int n, int d) {
  auto t = torch::empty({n, d}, torch::kFloat64);
  auto* p = t.data_ptr<double>();
  for (int i = 0; i < n * d; ++i) p[i] = rng.normal();
  return t;
}

std::vector<std::int64_t> random_labels(Rng& rng, int n, int k) {
  std::vector<std::int64_t> y;
  for (int i = 0; i < n; ++i) y.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(k))));
  return y;
}

// 1. Matrix-pipeline L_pp against the per-row loop oracle, and the Scl-CE identity.
Verdict loss_oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst_pp = 0.0, worst_identity = 0.0, worst_supcon = 0.0;
  const double taus[] = {0.1, 0.2, 0.5};
  for (std::uint64_t inst = 0; inst < 100; ++inst) {
    Rng rng(derive_seed(0xACCE, inst));
    const int n = 2 + static_cast<int>(rng.below(15));
    const int d = 2 + static_cast<int>(rng.below(7));
    const int k = 1 + static_cast<int>(rng.below(4));
    const double tau = taus[inst % 3];
    auto rows = random_rows(rng, n, d);
    auto y = random_labels(rng, n, k);
    auto set = make_pixel_set(rows, y);
    const auto m = oracle::to_mat(rows);
    for (bool diag : {true, false})
      for (auto metric : {PixelMetric::kJS, PixelMetric::kCE}) {
        const double got = pixel_to_pixel_loss(set, tau, metric, diag).value.item<double>();
        const double want = oracle::pixel_to_pixel(m, y, tau, metric == PixelMetric::kJS, diag);
        worst_pp = std::max(worst_pp, std::fabs(got - want));
      }
    // Scl-CE (CE metric, masked diagonal) is the supervised contrastive loss
    // divided by the number of anchors it keeps.
    const auto pp = pixel_to_pixel_loss(set, tau, PixelMetric::kCE, false);
    const auto scl = supervised_contrastive_loss(set, tau);
    const int retained = n - pp.skipped;
    const double scl_v = scl.value.item<double>();
    const double per_anchor = retained > 0 ? scl_v / retained : 0.0;
    worst_identity = std::max(worst_identity, std::fabs(pp.value.item<double>() - per_anchor));
    worst_supcon = std::max(worst_supcon, std::fabs(scl_v - oracle::supcon(m, y, tau)));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_pp <= 1e-8 && worst_identity <= 1e-8 && worst_supcon <= 1e-8 && secs < 10.0;
  return {pass, "100 instances, max |L_pp - oracle| " + sci(worst_pp) + ", Scl-CE identity " + sci(worst_identity) +
                    ", L_sup vs loop " + sci(worst_supcon) + " (tol 1e-8), " + fixed(secs, 2) + " s (limit 10)"};
}

// 2. Finite-difference gradient suite.
Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::vector<gradcheck::Case> cases;
  auto add = [&](std::vector<gradcheck::Case> more) {
    for (auto& c : more) cases.push_back(std::move(c));
  };
  add(gradcheck::pixel_to_pixel_cases());
  cases.push_back(gradcheck::pixel_to_class_case());
  add(gradcheck::instance_to_class_cases());
  cases.push_back(gradcheck::divergence_case());
  add(gradcheck::reconstruction_cases());
  cases.push_back(gradcheck::entropy_case());
  double entry_point = 0.0;
  for (auto& c : gradcheck::tta_input_cases()) {
    entry_point = std::max(entry_point, c.entry_point_max_abs);
    cases.push_back(std::move(c.fd));
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double e = c.fd.max_rel_error();
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < gradcheck::kTol && entry_point <= 1e-12 && secs < 60.0;
  return {pass, std::to_string(cases.size()) + " checks, worst rel error " + sci(worst) + " (" + worst_name +
                    ", tol 1e-3), tta_input_gradient vs autograd " + sci(entry_point) + ", " + fixed(secs, 2) +
                    " s (limit 60)"};
}

// 3. Module invariants.
Verdict invariant_suite() {
  std::vector<std::string> failed;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok && std::find(failed.begin(), failed.end(), what) == failed.end()) failed.push_back(what);
  };

  // Transition matrices.
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(derive_seed(0x3A, s));
    const int n = 2 + static_cast<int>(rng.below(15));
    const int k = 1 + static_cast<int>(rng.below(4));
    auto set = make_pixel_set(random_rows(rng, n, 2 + static_cast<int>(rng.below(7))), random_labels(rng, n, k));
    for (bool diag : {true, false}) {
      const double tau = 0.1;
      auto t = build_transition_matrices(set, tau, diag);
      require(torch::equal(t.w, t.w.t()), "W symmetric");
      for (int i = 0; i < n; ++i) {
        require(std::fabs(t.w_tilde[i].sum().item<double>() - 1.0) <= 1e-6, "W~ rows sum to 1");
        if (t.row_valid[static_cast<std::size_t>(i)])
          require(std::fabs(t.l_tilde[i].sum().item<double>() - 1.0) <= 1e-6, "L~ rows sum to 1");
        if (diag) {
          require(t.l[i][i].item<double>() == 1.0, "L_ii = 1");
          require(std::fabs(t.w[i][i].item<double>() / std::exp(1.0 / tau) - 1.0) <= 1e-12, "diag W = e^(1/tau)");
          require((t.w[i] > 0).all().item<bool>(), "W positive");
        }
      }
    }
  }

  // JS divergence.
  const double ln2 = std::numbers::ln2;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(derive_seed(0x15, s));
    const auto len = 1 + rng.below(8);
    std::vector<double> p(len), q(len);
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      p[i] = rng.uniform() < 0.25 ? 0.0 : rng.uniform();
      q[i] = rng.uniform() < 0.25 ? 0.0 : rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    if (sp == 0.0 || sq == 0.0) continue;
    for (std::size_t i = 0; i < len; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    const double pq = js_divergence(p, q);
    require(pq == js_divergence(q, p), "JS symmetric");
    require(pq >= 0.0 && pq <= ln2 + 1e-15, "0 <= JS <= ln 2");
  }
  {
    const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
    require(std::fabs(js_divergence(a, b) - ln2) <= 1e-15, "JS of disjoint supports = ln 2");
  }

  // Prototype unit norms through repeated EMA updates.
  {
    torch::manual_seed(41);
    auto bank = PrototypeBank::empty(5, 8);
    for (int step = 0; step < 50; ++step) {
      auto feats = torch::randn({2, 8, 6, 6});
      auto masks = torch::randint(0, 5, {2, 6, 6}, torch::kInt64);
      if (step % 7 == 0) masks.masked_fill_(masks == 3, kIgnoreLabel);
      bank = ema_update(bank, class_prototypes_from_batch(feats, masks));
      for (int k = 0; k < 5; ++k)
        if (bank.initialized[static_cast<std::size_t>(k)])
          require(std::fabs(bank.prototypes[k].norm().item<double>() - 1.0) <= 1e-6, "prototype rows unit norm");
    }
  }

  // Connected regions partition the true pixels.
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(derive_seed(0xCC, s));
    const int h = 4 + static_cast<int>(rng.below(12)), w = 4 + static_cast<int>(rng.below(12));
    const double density = rng.uniform(0.1, 0.9);
    BinaryMask mask{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
    for (auto& v : mask.data) v = rng.uniform() < density ? 1 : 0;
    const auto regions = connected_regions(mask);
    std::vector<int> owner(mask.data.size(), 0);
    for (const auto& r : regions) {
      require(r.count() >= 1, "regions nonempty");
      for (std::size_t i = 0; i < r.data.size(); ++i)
        if (r.data[i]) ++owner[i];
    }
    for (std::size_t i = 0; i < owner.size(); ++i) require(owner[i] == (mask.data[i] ? 1 : 0), "regions partition the mask");
    int count = 0;
    oracle::flood_fill(mask.data, h, w, &count);
    require(static_cast<int>(regions.size()) == count, "region count matches flood fill");
  }

  // Fused and prototype probabilities are stochastic.
  {
    torch::manual_seed(43);
    SegModelConfig cfg;
    cfg.num_classes = 4;
    cfg.feature_dim = 8;
    cfg.base_width = 4;
    SegModel model(cfg);
    model->eval();
    auto bank = PrototypeBank::empty(4, 8);
    bank.prototypes = l2_normalize(torch::randn({4, 8}), 1);
    bank.initialized.assign(4, true);
    torch::NoGradGuard ng;
    for (int trial = 0; trial < 5; ++trial) {
      auto out = model->forward(torch::rand({2, 3, 32, 32}));
      auto proto = prototype_predict(out.features, bank);
      require((proto.sum(1) - 1.0).abs().max().item<double>() <= 1e-6, "prototype probabilities stochastic");
      auto fused = fuse_outputs(out, bank);
      require((fused.probs.sum(1) - 1.0).abs().max().item<double>() <= 1e-6, "fused probabilities stochastic");
      require((fused.probs >= 0).all().item<bool>(), "fused probabilities nonnegative");
    }
  }

  // mIoU hand case.
  {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 3;
    const auto r = miou(cm);
    require(std::fabs(r.per_class[0] - 0.6) <= 1e-12 && std::fabs(r.per_class[1] - 0.6) <= 1e-12, "mIoU per class 3/5");
    require(std::fabs(r.mean - 0.6) <= 1e-12, "mIoU hand case 0.6");
  }

  if (failed.empty())
    return {true, "row-stochastic W~/L~ (1e-6), JS symmetric and <= ln 2, prototype norms (1e-6), region partition, "
                  "stochastic fused maps (1e-6), mIoU [[3,1],[1,3]] = 0.6"};
  std::string d = "violated:";
  for (const auto& f : failed) d += " [" + f + "]";
  return {false, d};
}

// 4. Two-loss landscape.
Verdict landscape_check(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto r = loss_landscape(0.1, 1.0, 512);
  const double secs = seconds_since(t0);
  auto nearest = [&](double v) {
    double best = r.axis.front();
    for (double a : r.axis)
      if (std::fabs(a - v) < std::fabs(best - v)) best = a;
    return best;
  };
  const double sp = nearest(1.0), sm = nearest(-1.0);
  const bool minima = r.sup.argmin_s_plus == sp && r.sup.argmin_s_minus == sm && r.ppce.argmin_s_plus == sp &&
                      r.ppce.argmin_s_minus == sm;
  const bool ratio = r.ppce.ratio > r.sup.ratio;
  fs::create_directories(work);
  r.write_csv(work / "landscape.csv");
  std::ofstream(work / "landscape.json") << r.summary_json() << '\n';
  return {minima && ratio && secs < 30.0,
          "argmin L_sup (" + fixed(r.sup.argmin_s_plus, 3) + "," + fixed(r.sup.argmin_s_minus, 3) + "), L_pp-ce (" +
              fixed(r.ppce.argmin_s_plus, 3) + "," + fixed(r.ppce.argmin_s_minus, 3) + "); {s+>0.8} ratio L_pp-ce " +
              fixed(r.ppce.ratio) + " vs L_sup " + fixed(r.sup.ratio) + ", " + fixed(secs, 2) + " s (limit 30)"};
}

// 5. Table 2 ordering over three seeds.
Verdict table2_direction(const fs::path& work) {
  RunConfig base;
  auto spec = preset_sweep("table2");
  spec.seeds = {0, 1, 2};
  const auto t0 = Clock::now();
  auto last = Clock::now();
  double worst_cell = 0.0;
  std::optional<Clock::time_point> ssdp_started;
  double ssdp_secs = 0.0;
  // Cell time: its own segmentation training and scoring, plus the SSDP
  // stage it consumes.
  auto report = run_ablation(base, spec, [&](const std::string& msg) {
    note(msg);
    const auto now = Clock::now();
    if (msg.find("training SSDP") != std::string::npos) {
      ssdp_started = now;
    } else if (msg.find("training segmentation") != std::string::npos) {
      if (ssdp_started) {
        ssdp_secs = std::chrono::duration<double>(now - *ssdp_started).count();
        ssdp_started.reset();
      }
      last = now;
    } else {
      const bool uses_ssdp = msg.find("baseline") == std::string::npos;
      worst_cell = std::max(worst_cell, std::chrono::duration<double>(now - last).count() + (uses_ssdp ? ssdp_secs : 0.0));
    }
  });
  const double secs = seconds_since(t0);
  fs::create_directories(work);
  report.write_csv(work / "table2.csv");
  std::ofstream(work / "table2.txt") << report.text_table();
  std::cerr << report.text_table();

  const auto& rows = report.rows;
  const double base_m = rows[0].mean * 100, ssdp_m = rows[1].mean * 100, mlcl_m = rows[2].mean * 100,
               full_m = rows[3].mean * 100;
  // Seed noise: the larger across-seed standard deviation of the two rows
  // being compared.
  const double noise = std::max(rows[2].stddev, rows[3].stddev) * 100;
  const bool strict = base_m < ssdp_m && ssdp_m < mlcl_m;
  const bool div_ok = full_m >= mlcl_m;
  const bool div_within_noise = !div_ok && mlcl_m - full_m <= noise;
  const bool gain = full_m - base_m >= 2.0;
  const bool budget = worst_cell <= 30.0 * 60.0;
  std::string d = "mean-target mIoU over seeds {0,1,2}: baseline " + fixed(base_m, 2) + " < +SSDP " + fixed(ssdp_m, 2) +
                  " < +MLCL " + fixed(mlcl_m, 2) + " <= +div " + fixed(full_m, 2) + "; full - baseline " +
                  fixed(full_m - base_m, 2) + " (need >= 2)";
  if (div_within_noise)
    d += "; +div is " + fixed(mlcl_m - full_m, 2) + " below +MLCL, within seed noise (std " + fixed(noise, 2) + ")";
  d += "; slowest cell " + fixed(worst_cell / 60.0, 1) + " min (limit 30), total " + fixed(secs / 60.0, 1) + " min";
  return {strict && (div_ok || div_within_noise) && gain && budget, d};
}

// The full method at seed 0, shared by criteria 6-8.
struct FullModel {
  RunConfig cfg;
  Benchmark bench;
  SsdpTrainResult ssdp;
  SegTrainResult seg;
};

class FullModelCache {
 public:
  explicit FullModelCache(fs::path work) : work_(std::move(work)) {}

  FullModel& get() {
    if (!model_) build();
    return *model_;
  }

 private:
  void build() {
    auto m = std::make_unique<FullModel>();
    m->cfg.seed = 0;
    note("building benchmark (seed 0)");
    m->bench = build_benchmark(m->cfg.data, m->cfg.seed);
    note("training SSDP");
    m->ssdp = train_ssdp(m->bench.source_train, m->cfg.ssdp, m->cfg.aug, m->cfg.seed);
    note("training the full method");
    auto train_cfg = m->cfg.train;
    train_cfg.eval_every = 0;
    m->seg = train_segmentation(m->bench.source_train, nullptr, m->ssdp.net, &m->ssdp.centers, train_cfg, m->cfg.aug,
                                m->cfg.seed);
    fs::create_directories(work_);
    save_ssdp(work_ / "ssdp.ckpt", m->ssdp.net, m->ssdp.centers);
    save_segmentation(work_ / "seg.ckpt", m->seg.model, m->seg.bank, m->cfg.train);
    model_ = std::move(m);
  }

  fs::path work_;
  std::unique_ptr<FullModel> model_;
};

// 6. TTA-C with one iteration against no adaptation, plus the 1-5 sweep.
Verdict tta_direction(FullModelCache& cache, const fs::path& work) {
  auto& m = cache.get();
  auto predictor = make_predictor(m.seg.model, m.seg.bank, m.ssdp.net, &m.ssdp.centers, m.cfg.train);
  auto mean_target = [&](const TtaConfig* tta) {
    std::vector<DomainScore> scores;
    for (const auto& t : m.bench.targets) scores.push_back(evaluate_domain(predictor, t, tta));
    return mean_miou(scores);
  };
  const double none = mean_target(nullptr);
  note("no adaptation: " + fixed(none * 100, 2));
  TtaConfig tta = m.cfg.tta;
  tta.mode = TtaMode::kC;
  fs::create_directories(work);
  std::ofstream csv(work / "tta_sweep.csv");
  csv << "mode,iters,mean_target\n" << std::setprecision(17) << "none,0," << none << '\n';
  std::vector<double> sweep;
  for (int iters = 1; iters <= 5; ++iters) {
    tta.n_iters = iters;
    sweep.push_back(mean_target(&tta));
    csv << "C," << iters << ',' << sweep.back() << '\n';
    note("TTA-C " + std::to_string(iters) + " iters: " + fixed(sweep.back() * 100, 2));
  }
  csv.close();
  const bool varies = *std::max_element(sweep.begin(), sweep.end()) != *std::min_element(sweep.begin(), sweep.end());
  const auto best = std::max_element(sweep.begin(), sweep.end()) - sweep.begin() + 1;
  std::string d = "step " + fixed(tta.step_size, 3) + ": none " + fixed(none * 100, 2) + " -> TTA-C x1 " +
                  fixed(sweep[0] * 100, 2) + "; sweep 1..5:";
  for (double v : sweep) d += " " + fixed(v * 100, 2);
  d += " (best at " + std::to_string(best) + ")";
  return {sweep[0] >= none && varies && sweep.size() == 5 && fs::exists(work / "tta_sweep.csv"), d};
}

// 7. SSDP moves shifted held-out images back toward their clean originals.
Verdict ssdp_functional(FullModelCache& cache) {
  auto& m = cache.get();
  const auto ia = m.cfg.aug.ia_only();
  const auto& val = m.bench.source_val;
  double l1_shifted = 0.0, l1_projected = 0.0;
  const auto n = val.items.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = val.items[i].image;
    const auto xa = augment(val.items[i], ia, derive_seed(0xA7, i)).image;
    const auto proj = project(m.ssdp.net, m.ssdp.centers, xa.unsqueeze(0)).squeeze(0);
    l1_shifted += (x - xa).abs().mean().item<double>();
    l1_projected += (x - proj).abs().mean().item<double>();
  }
  l1_shifted /= static_cast<double>(n);
  l1_projected /= static_cast<double>(n);
  return {n >= 50 && l1_projected < l1_shifted, std::to_string(n) + " held-out source pairs: mean L1(x, project(A(x))) " +
                                                   fixed(l1_projected) + " vs L1(x, A(x)) " + fixed(l1_shifted)};
}

// 8. A fixed-seed training run writes the same metrics.csv bytes twice.
Verdict reproducibility(FullModelCache& cache, const fs::path& work) {
  auto& m = cache.get();
  auto cfg = m.cfg.train;
  cfg.max_iters = 300;
  cfg.eval_every = 100;
  cfg.log_every = 10;
  fs::remove_all(work);
  std::vector<std::string> bytes;
  std::vector<std::uint64_t> hashes;
  for (const char* run : {"a", "b"}) {
    note(std::string("reproducibility run ") + run);
    auto r = train_segmentation(m.bench.source_train, &m.bench.source_val, m.ssdp.net, &m.ssdp.centers, cfg, m.cfg.aug,
                                m.cfg.seed, work / run);
    hashes.push_back(parameter_hash(*r.model));
    std::ifstream is(work / run / "metrics.csv", std::ios::binary);
    bytes.emplace_back(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1] && hashes[0] == hashes[1];
  const auto lines = std::count(bytes[0].begin(), bytes[0].end(), '\n');
  return {same && torch::get_num_threads() == 1,
          "full method with SSDP, " + std::to_string(cfg.max_iters) + " iters, " + std::to_string(torch::get_num_threads()) +
              " thread: metrics.csv " + std::to_string(bytes[0].size()) + " bytes / " + std::to_string(lines) +
              " lines, " + (bytes[0] == bytes[1] ? "identical" : "DIFFERENT") + ", parameter hashes " +
              (hashes[0] == hashes[1] ? "equal" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPCL acceptance criteria"};
  std::string work_dir = "acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "directory for reports and trained artifacts");
  app.add_option("--only", only, "run just these criteria (1-8)");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  set_warnings_enabled(false);
  const fs::path work = work_dir;
  fs::create_directories(work);
  FullModelCache cache(work / "full_model");

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"loss oracle equivalence", [] { return loss_oracle_equivalence(); }},
      {"gradient suite", [] { return gradient_suite(); }},
      {"invariant suite", [] { return invariant_suite(); }},
      {"loss landscape", [&] { return landscape_check(work / "landscape"); }},
      {"desk-scale DG direction", [&] { return table2_direction(work / "table2"); }},
      {"TTA direction", [&] { return tta_direction(cache, work / "tta"); }},
      {"SSDP functional oracle", [&] { return ssdp_functional(cache); }},
      {"reproducibility", [&] { return reproducibility(cache, work / "repro"); }},
  };

  std::ofstream summary(work / "acceptance.txt", only.empty() ? std::ios::trunc : std::ios::app);
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto& [name, run] = criteria[i];
    note("criterion " + std::to_string(id) + ": " + name);
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::ostringstream line;
    line << (v.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << name << ": " << v.detail;
    std::cout << line.str() << std::endl;
    summary << line.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
