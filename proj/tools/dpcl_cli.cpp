// dpcl: command-line front end for the desk-scale DPCL lab.
//
//   dpcl generate-data   build the synthetic source/target benchmark
//   dpcl train-ssdp      stage 1: projection autoencoder + style centers
//   dpcl train-seg       stage 2: segmentation model + prototype bank
//   dpcl eval            mIoU of a checkpoint (or of a prediction directory)
//   dpcl tta             test-time adaptation sweep over modes and iterations
//   dpcl ablate          table-style sweeps over config keys
//   dpcl landscape       the three-sample loss landscape grid
//
// Every subcommand takes --config FILE and repeated --set key=value.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpcl/ablation.hpp"
#include "dpcl/adapt.hpp"
#include "dpcl/artifacts.hpp"
#include "dpcl/common.hpp"
#include "dpcl/config.hpp"
#include "dpcl/dataset.hpp"
#include "dpcl/evaluate.hpp"
#include "dpcl/metrics.hpp"
#include "dpcl/mlcl.hpp"
#include "dpcl/png_io.hpp"
#include "dpcl/rng.hpp"
#include "dpcl/train.hpp"

namespace fs = std::filesystem;
using namespace dpcl;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "RunConfig JSON file");
  cmd->add_option("--set", args.overrides, "override a config entry, e.g. --set train.lambda=3")->take_all();
  cmd->add_option("--threads", args.threads, "intra-op threads (1 keeps runs bit-reproducible)");
}

RunConfig resolve(const CommonArgs& args) {
  torch::set_num_threads(std::max(1, args.threads));
  return load_run_config(args.config, args.overrides);
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

int cmd_generate(const CommonArgs& common, const std::string& out) {
  const auto cfg = resolve(common);
  const auto dir = or_default(out, cfg.run_dir() / "data");
  std::cout << "generating benchmark (seed " << cfg.seed << ") into " << dir << '\n';
  const auto bench = build_benchmark(cfg.data, cfg.seed);
  write_benchmark(dir, bench);
  save_run_config(dir / "config.json", cfg);
  std::cout << "source_train " << bench.source_train.items.size() << ", source_val " << bench.source_val.items.size();
  for (const auto& t : bench.targets) std::cout << ", " << t.name << ' ' << t.items.size();
  std::cout << '\n';
  return 0;
}

int cmd_train_ssdp(const CommonArgs& common, const std::string& data, const std::string& out) {
  const auto cfg = resolve(common);
  const auto data_dir = or_default(data, cfg.run_dir() / "data");
  require_dir(data_dir / "source_train", "source_train dataset");
  const auto train = read_domain(data_dir / "source_train");
  const auto ckpt = or_default(out, cfg.run_dir() / "ssdp.ckpt");
  std::cout << "training SSDP for " << cfg.ssdp.iters << " iterations on " << train.items.size() << " images\n";
  const auto result = train_ssdp(train, cfg.ssdp, cfg.aug, cfg.seed);
  save_ssdp(ckpt, result.net, result.centers);
  std::ofstream curve(ckpt.parent_path() / "ssdp_loss.csv");
  curve << "epoch,mean_l1\n" << std::setprecision(17);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) curve << e << ',' << result.epoch_losses[e] << '\n';
  std::cout << "recon loss: first epoch " << fmt(result.epoch_losses.front()) << ", last epoch "
            << fmt(result.epoch_losses.back()) << "\nwrote " << ckpt << '\n';
  return 0;
}

int cmd_train_seg(const CommonArgs& common, const std::string& data, const std::string& ssdp_path,
                  const std::string& out) {
  const auto cfg = resolve(common);
  const auto data_dir = or_default(data, cfg.run_dir() / "data");
  require_dir(data_dir / "source_train", "source_train dataset");
  const auto run_dir = or_default(out, cfg.run_dir() / "seg");
  const auto train = read_domain(data_dir / "source_train");
  std::optional<Domain> val;
  if (fs::is_directory(data_dir / "source_val")) val = read_domain(data_dir / "source_val");
  SsdpArtifact ssdp;
  if (cfg.train.use_ssdp) ssdp = load_ssdp(or_default(ssdp_path, cfg.run_dir() / "ssdp.ckpt"));
  fs::create_directories(run_dir);
  save_run_config(run_dir / "config.json", cfg);
  std::cout << "training segmentation for " << cfg.train.max_iters << " iterations into " << run_dir << '\n';
  auto result = train_segmentation(train, val ? &*val : nullptr, ssdp.net, cfg.train.use_ssdp ? &ssdp.centers : nullptr,
                                   cfg.train, cfg.aug, cfg.seed, run_dir);
  save_segmentation(run_dir / "seg.ckpt", result.model, result.bank, cfg.train);
  const auto& last = result.log.back();
  std::cout << "final total loss " << fmt(last.total);
  if (last.val_miou) std::cout << ", source-val mIoU " << fmt(*last.val_miou);
  std::cout << "\nwrote " << run_dir / "seg.ckpt" << '\n';
  return 0;
}

std::vector<std::string> eval_domains(const fs::path& data_dir) {
  std::ifstream is(data_dir / "benchmark.json");
  if (!is) throw ConfigError("no benchmark.json under " + data_dir.string());
  std::vector<std::string> names{"source_val"};
  const auto index = nlohmann::json::parse(is);
  for (const auto& t : index.at("targets")) names.push_back(t.get<std::string>());
  return names;
}

Predictor load_predictor(const RunConfig& cfg, const std::string& model_path, const std::string& ssdp_path) {
  auto seg = load_segmentation(or_default(model_path, cfg.run_dir() / "seg" / "seg.ckpt"));
  SsdpArtifact ssdp;
  if (seg.train.use_ssdp) ssdp = load_ssdp(or_default(ssdp_path, cfg.run_dir() / "ssdp.ckpt"));
  return make_predictor(seg.model, seg.bank, ssdp.net, seg.train.use_ssdp ? &ssdp.centers : nullptr, seg.train);
}

// Scores PNG label maps named like the domain's masks against the domain.
int eval_prediction_dir(const fs::path& pred_dir, const fs::path& domain_dir, int num_classes) {
  require_dir(pred_dir, "prediction directory");
  const auto domain = read_domain(domain_dir);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < domain.items.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i << ".png";
    const auto raster = read_png(pred_dir / name.str());
    if (raster.channels != 1) throw ShapeError("prediction " + name.str() + " must be a gray label map");
    auto pred = torch::empty({raster.height, raster.width}, torch::kInt64);
    auto pa = pred.accessor<std::int64_t, 2>();
    for (int y = 0; y < raster.height; ++y)
      for (int x = 0; x < raster.width; ++x) pa[y][x] = raster.data[static_cast<std::size_t>(y * raster.width + x)];
    cm.update(pred, domain.items[i].mask);
  }
  std::cout << domain.name << " mIoU " << fmt(miou(cm).mean) << '\n';
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& data, const std::string& model, const std::string& ssdp,
             const std::string& pred_dir, const std::string& domain_dir, const std::string& out) {
  const auto cfg = resolve(common);
  if (!pred_dir.empty()) {
    if (domain_dir.empty()) throw ConfigError("--pred-dir needs --domain pointing at a dataset directory");
    return eval_prediction_dir(pred_dir, domain_dir, cfg.data.scene.num_classes);
  }
  const auto data_dir = or_default(data, cfg.run_dir() / "data");
  auto predictor = load_predictor(cfg, model, ssdp);
  std::vector<DomainScore> targets;
  const auto csv_path = or_default(out, cfg.run_dir() / "eval.csv");
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path);
  csv << "domain,miou\n" << std::setprecision(17);
  for (const auto& name : eval_domains(data_dir)) {
    auto score = evaluate_domain(predictor, read_domain(data_dir / name));
    std::cout << std::left << std::setw(14) << name << " mIoU " << fmt(score.miou) << '\n';
    csv << name << ',' << score.miou << '\n';
    if (name != "source_val") targets.push_back(std::move(score));
  }
  const double mean = mean_miou(targets);
  std::cout << std::left << std::setw(14) << "mean-target" << " mIoU " << fmt(mean) << '\n';
  csv << "mean_target," << mean << '\n';
  return 0;
}

int cmd_tta(const CommonArgs& common, const std::string& data, const std::string& model, const std::string& ssdp,
            const std::string& modes_arg, int max_iters, const std::string& domains_arg, const std::string& out) {
  const auto cfg = resolve(common);
  const auto data_dir = or_default(data, cfg.run_dir() / "data");
  auto predictor = load_predictor(cfg, model, ssdp);
  if (!predictor.use_ssdp) throw ConfigError("tta: the model was trained without SSDP");
  std::vector<TtaMode> modes;
  std::stringstream ms(modes_arg);
  for (std::string m; std::getline(ms, m, ',');) modes.push_back(parse_tta_mode(m));
  if (max_iters < 1) throw ConfigError("tta: --max-iters must be >= 1");
  // Unseen targets by default; --domains picks explicit ones, e.g. source_val
  // for choosing the step size.
  std::vector<Domain> targets;
  if (domains_arg.empty()) {
    for (const auto& name : eval_domains(data_dir))
      if (name != "source_val") targets.push_back(read_domain(data_dir / name));
  } else {
    std::stringstream ds(domains_arg);
    for (std::string d; std::getline(ds, d, ',');) targets.push_back(read_domain(data_dir / d));
  }
  const std::string mean_label = domains_arg.empty() ? "mean_target" : "mean";

  const auto dir = or_default(out, cfg.run_dir() / "tta");
  fs::create_directories(dir);
  std::ofstream per_image(dir / "tta_per_image.csv");
  std::ofstream summary(dir / "tta.csv");
  per_image << "mode,iters,domain,image,miou\n" << std::setprecision(17);
  summary << "mode,iters,domain,miou\n" << std::setprecision(17);
  const int k = predictor.model->config().num_classes;
  for (auto mode : modes) {
    const int hi = mode == TtaMode::kNone ? 1 : max_iters;
    for (int iters = 1; iters <= hi; ++iters) {
      TtaConfig tta = cfg.tta;
      tta.mode = mode;
      tta.n_iters = iters;
      std::vector<double> domain_scores;
      for (const auto& dom : targets) {
        ConfusionMatrix cm(k);
        for (std::size_t i = 0; i < dom.items.size(); ++i) {
          const auto& item = dom.items[i];
          auto x0 = predictor.prepare(item.image);
          torch::Tensor labels;
          if (mode == TtaMode::kNone) {
            labels = predictor.predict_prepared(x0);
          } else {
            tta.seed = derive_seed(cfg.tta.seed, i);
            labels = tta_refine_projected(predictor.model, predictor.bank, x0, tta).labels;
          }
          auto full = resize_labels(labels, item.height(), item.width()).squeeze(0);
          ConfusionMatrix one(k);
          one.update(full, item.mask);
          cm.merge(one);
          per_image << to_string(mode) << ',' << iters << ',' << dom.name << ',' << i << ',' << miou(one).mean << '\n';
        }
        domain_scores.push_back(miou(cm).mean);
        summary << to_string(mode) << ',' << iters << ',' << dom.name << ',' << domain_scores.back() << '\n';
      }
      double mean = 0.0;
      for (double s : domain_scores) mean += s;
      mean /= static_cast<double>(domain_scores.size());
      summary << to_string(mode) << ',' << iters << ',' << mean_label << ',' << mean << '\n';
      std::cout << "TTA " << std::left << std::setw(5) << to_string(mode) << " iters " << iters << "  " << mean_label << " mIoU "
                << fmt(mean) << std::endl;
    }
  }
  std::cout << "wrote " << dir / "tta.csv" << '\n';
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& sweep_file, const std::string& preset,
               const std::string& seeds_arg, const std::string& out) {
  const auto cfg = resolve(common);
  nlohmann::json spec_json = nlohmann::json::object();
  if (!sweep_file.empty()) {
    std::ifstream is(sweep_file);
    if (!is) throw ConfigError("cannot read sweep spec " + sweep_file);
    spec_json = nlohmann::json::parse(is);
  }
  if (!preset.empty()) spec_json["preset"] = preset;
  if (!seeds_arg.empty()) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(seeds_arg);
    for (std::string s; std::getline(ss, s, ',');) seeds.push_back(std::stoull(s));
    spec_json["seeds"] = seeds;
  }
  const auto spec = parse_sweep(spec_json);
  validate_sweep(spec, cfg);
  const auto report = run_ablation(cfg, spec, [](const std::string& msg) { std::cout << msg << std::endl; });
  const auto dir = or_default(out, cfg.run_dir() / "ablation");
  report.write_csv(dir / (spec.name + ".csv"));
  std::ofstream(dir / (spec.name + ".txt")) << report.text_table();
  std::cout << report.text_table();
  return 0;
}

int cmd_landscape(double tau, double delta, int grid, const std::string& out) {
  const auto report = loss_landscape(tau, delta, grid);
  const fs::path dir = out.empty() ? fs::path("landscape") : fs::path(out);
  fs::create_directories(dir);
  report.write_csv(dir / "landscape.csv");
  std::ofstream(dir / "landscape.json") << report.summary_json() << '\n';
  std::cout << report.summary_json() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPCL desk-scale domain generalization lab"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data, out, ssdp, model, pred_dir, domain_dir, sweep, preset, seeds, domains, modes = "none,C,E,C+E";
  int max_iters = 5;
  double tau = 0.1, delta = 1.0;
  int grid = 512;

  auto* gen = app.add_subcommand("generate-data", "build the synthetic benchmark");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory (default <run>/data)");

  auto* tssdp = app.add_subcommand("train-ssdp", "train the source projection network");
  add_common(tssdp, common);
  tssdp->add_option("--data", data, "benchmark directory");
  tssdp->add_option("--out", out, "checkpoint path (default <run>/ssdp.ckpt)");

  auto* tseg = app.add_subcommand("train-seg", "train the segmentation model");
  add_common(tseg, common);
  tseg->add_option("--data", data, "benchmark directory");
  tseg->add_option("--ssdp", ssdp, "SSDP checkpoint");
  tseg->add_option("--out", out, "run directory (default <run>/seg)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a prediction directory");
  add_common(ev, common);
  ev->add_option("--data", data, "benchmark directory");
  ev->add_option("--model", model, "segmentation checkpoint");
  ev->add_option("--ssdp", ssdp, "SSDP checkpoint");
  ev->add_option("--pred-dir", pred_dir, "directory of NNNN.png label maps to score instead of a model");
  ev->add_option("--domain", domain_dir, "dataset directory the predictions refer to");
  ev->add_option("--out", out, "CSV path (default <run>/eval.csv)");

  auto* tta = app.add_subcommand("tta", "test-time adaptation sweep");
  add_common(tta, common);
  tta->add_option("--data", data, "benchmark directory");
  tta->add_option("--model", model, "segmentation checkpoint");
  tta->add_option("--ssdp", ssdp, "SSDP checkpoint");
  tta->add_option("--modes", modes, "comma list of none, C, E, C+E");
  tta->add_option("--max-iters", max_iters, "sweep iteration counts 1..N");
  tta->add_option("--domains", domains, "comma list of dataset directories (default: all targets)");
  tta->add_option("--out", out, "output directory (default <run>/tta)");

  auto* abl = app.add_subcommand("ablate", "run a sweep and emit CSV + text tables");
  add_common(abl, common);
  abl->add_option("--sweep", sweep, "sweep spec JSON");
  abl->add_option("--preset", preset, "preset sweep name");
  abl->add_option("--seeds", seeds, "comma list of seeds");
  abl->add_option("--out", out, "output directory (default <run>/ablation)");

  auto* land = app.add_subcommand("landscape", "emit the three-sample loss landscape");
  land->add_option("--tau", tau, "temperature");
  land->add_option("--delta", delta, "negative-sample offset");
  land->add_option("--grid", grid, "grid points per axis");
  land->add_option("--out", out, "output directory (default ./landscape)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(common, out);
    if (tssdp->parsed()) return cmd_train_ssdp(common, data, out);
    if (tseg->parsed()) return cmd_train_seg(common, data, ssdp, out);
    if (ev->parsed()) return cmd_eval(common, data, model, ssdp, pred_dir, domain_dir, out);
    if (tta->parsed()) return cmd_tta(common, data, model, ssdp, modes, max_iters, domains, out);
    if (abl->parsed()) return cmd_ablate(common, sweep, preset, seeds, out);
    if (land->parsed()) return cmd_landscape(tau, delta, grid, out);
  } catch (const std::exception& e) {
    std::cerr << "dpcl: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
