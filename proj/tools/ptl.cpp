// Command-line driver: every pipeline stage without the web UI.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ptl/error.hpp"
#include "ptl/eval.hpp"
#include "ptl/manifest.hpp"
#include "ptl/models.hpp"
#include "ptl/server.hpp"
#include "ptl/session.hpp"
#include "ptl/synthetic.hpp"
#include "ptl/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ptl;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int threads = 1;
  json config = json::object();

  std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
  json section(const char* name) const { return config.contains(name) ? config[name] : json::object(); }
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw DataError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " '" + path + "' does not exist");
}

/// Lists the files a command produced in <out>/artifacts.json.
class Artifacts {
 public:
  Artifacts(const Globals& g, const std::string& command) : dir_(g.out) {
    fs::create_directories(dir_);
    info_ = {{"command", command}, {"seed", g.seed ? json(*g.seed) : json(nullptr)}, {"files", json::array()}};
    if (!g.config_path.empty()) info_["config"] = g.config_path;
  }
  fs::path path(const std::string& name) {
    info_["files"].push_back(name);
    return dir_ / name;
  }
  void set(const std::string& key, json value) { info_[key] = std::move(value); }
  void write() const {
    std::ofstream f(dir_ / "artifacts.json");
    f << info_.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  json info_;
};

MetricsSink jsonl_sink(const fs::path& path, std::shared_ptr<std::ofstream>& holder) {
  holder = std::make_shared<std::ofstream>(path);
  if (!*holder) throw DataError("cannot write " + path.string());
  auto out = holder;
  return [out](const EpochMetrics& m) {
    *out << m.to_json().dump() << '\n';
    out->flush();
    std::cerr << m.to_json().dump() << '\n';
  };
}

BackboneConfig model_config(const Globals& g) { return BackboneConfig::from_json(g.section("model")); }

AetTrainConfig aet_config(const Globals& g) {
  auto c = AetTrainConfig::from_json(g.section("aet"));
  c.seed = g.seed_or(c.seed);
  return c;
}

PtcTrainConfig ptc_config(const Globals& g) {
  auto c = PtcTrainConfig::from_json(g.section("ptc"));
  c.seed = g.seed_or(c.seed);
  return c;
}

std::vector<DatasetItem> load_with_thresholds(const std::string& manifest) {
  require_file(manifest, "--manifest");
  auto items = load_dataset(manifest);
  if (items.empty()) throw DataError("manifest " + manifest + " lists no images");
  for (const auto& item : items)
    if (!item.thresholds) throw DataError("image " + item.id + " has no thresholds in " + manifest);
  return items;
}

// ---------------------------------------------------------------- gen-data

struct GenDataOptions {
  int count = 200;
  int size = 64;
  bool no_thresholds = false;
  double min_radius = 0.15, max_radius = 0.32;
};

int run_gen_data(const Globals& g, const GenDataOptions& o) {
  SyntheticConfig c;
  c.count = o.count;
  c.size = o.size;
  c.seed = g.seed_or(1);
  c.with_thresholds = !o.no_thresholds;
  c.min_radius = o.min_radius;
  c.max_radius = o.max_radius;
  Artifacts art(g, "gen-data");
  const auto items = generate_synthetic_dataset(c);
  save_dataset(g.out, items);
  art.path("manifest.csv");
  art.set("count", items.size());
  art.write();
  std::cout << "wrote " << items.size() << " images to " << g.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string manifest;
  int observers = 20;
  double beta = 3.5;
  double observer_sd = 0.1;  // log-scale spread of observer thresholds around the image's
  double default_threshold = 0.3;
  std::string calibration_image;
};

int run_simulate(const Globals& g, const SimulateOptions& o) {
  require_file(o.manifest, "--manifest");
  auto items = load_dataset(o.manifest);
  if (items.size() < 2) throw DataError("simulate needs at least two images");
  SessionConfig sc = SessionConfig::from_json(g.section("session"));
  sc.images_per_session = std::min<int>(sc.images_per_session, static_cast<int>(items.size()) - 1);
  const std::string calibration = o.calibration_image.empty() ? items.front().id : o.calibration_image;
  std::map<std::string, ThresholdPair> truth;
  for (const auto& item : items)
    truth[item.id] = item.thresholds.value_or(ThresholdPair::from_means(-o.default_threshold, o.default_threshold));
  const ImageLibrary library(std::move(items));
  if (!library.contains(calibration)) throw DataError("unknown calibration image '" + calibration + "'");
  std::vector<std::string> pool;
  for (const auto& id : library.ids())
    if (id != calibration) pool.push_back(id);

  Artifacts art(g, "simulate");
  std::ofstream truth_out(art.path("observer_truth.csv"));
  truth_out << "observer_id,image_id,direction,threshold,beta\n";
  std::vector<TrialLogRecord> rows;
  const std::uint64_t seed = g.seed_or(1);
  for (int k = 0; k < o.observers; ++k) {
    const std::string observer = "obs" + std::to_string(k + 1);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k) + 1));
    auto images = pool;
    std::shuffle(images.begin(), images.end(), rng);
    images.resize(static_cast<std::size_t>(sc.images_per_session));
    Session session = Session::create("sim" + std::to_string(k + 1), observer, images, calibration, library, sc,
                                      derive_seed(seed, 1000 + static_cast<std::uint64_t>(k)));
    std::map<std::pair<std::string, int>, PsychometricParams> params;
    std::normal_distribution<double> jitter(0.0, o.observer_sd);
    const ObserverModel model = [&](const std::string& image, Direction d) {
      const auto key = std::make_pair(image, static_cast<int>(d));
      auto it = params.find(key);
      if (it == params.end()) {
        PsychometricParams p;
        p.beta = o.beta;
        const auto& t = truth.at(image);
        p.t = std::abs(d == Direction::Neg ? t.neg.mean : t.pos.mean) * std::exp(jitter(rng));
        it = params.emplace(key, p).first;
        truth_out << observer << ',' << image << ',' << to_string(d) << ',' << direction_sign(d) * p.t << ','
                  << p.beta << '\n';
      }
      return it->second;
    };
    run_simulated_session(session, library, model, rng);
    rows.insert(rows.end(), session.trial_log().begin(), session.trial_log().end());
  }
  write_trial_log(art.path("trials.csv"), rows);
  art.set("observers", o.observers);
  art.write();
  std::cout << "simulated " << o.observers << " observers, " << rows.size() << " trials\n";
  return kExitOk;
}

// ---------------------------------------------------------------- fit / pool

int run_fit(const Globals& g, const std::vector<std::string>& logs) {
  if (logs.empty()) throw DataError("fit needs at least one trial log");
  for (const auto& p : logs) require_file(p, "trial log");
  std::vector<TrialLogRecord> rows;
  for (const auto& p : logs) {
    auto r = read_trial_log(p);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto fits = fit_trial_log(rows);
  Artifacts art(g, "fit");
  write_fit_table(art.path("fits.csv"), fits);
  const auto unfittable = std::count_if(fits.begin(), fits.end(), [](const FitRecord& f) { return !f.fitted; });
  art.set("groups", fits.size());
  art.set("unfittable", unfittable);
  art.write();
  std::cout << fits.size() << " observer-image-direction fits, " << unfittable << " unfittable\n";
  return kExitOk;
}

int run_pool(const Globals& g, const std::vector<std::string>& tables, int n_bootstrap) {
  if (tables.empty()) throw DataError("pool needs at least one fit table");
  for (const auto& p : tables) require_file(p, "fit table");
  std::vector<FitRecord> fits;
  for (const auto& p : tables) {
    auto r = read_fit_table(p);
    fits.insert(fits.end(), r.begin(), r.end());
  }
  const auto rows = pool_all(fits, n_bootstrap, g.seed_or(1));
  if (rows.empty()) throw DataError("no image has fitted thresholds in both directions");
  Artifacts art(g, "pool");
  write_threshold_table(art.path("thresholds.csv"), rows);
  art.set("images", rows.size());
  art.write();
  std::cout << "pooled thresholds for " << rows.size() << " images\n";
  return kExitOk;
}

// ---------------------------------------------------------------- training

int run_train_aet(const Globals& g, const std::string& manifest, const std::string& init) {
  require_file(manifest, "--manifest");
  if (!init.empty()) require_file(init, "--init");
  const auto items = load_dataset(manifest);
  const auto train = aet_config(g);
  Artifacts art(g, "train-aet");
  std::shared_ptr<std::ofstream> log;
  const auto sink = jsonl_sink(art.path("metrics.jsonl"), log);
  const auto result = init.empty() ? train_aet(items, model_config(g), train, sink)
                                   : train_aet(items, AetModel::load(init), train, sink);
  result.model.save(art.path("aet.ckpt").string(),
                    {{"best_epoch", std::to_string(result.best_epoch)}, {"train", train.to_json().dump()}});
  art.set("best_epoch", result.best_epoch);
  art.set("best_val_loss", result.best_val_loss);
  art.write();
  std::cout << "best validation MSE " << result.best_val_loss << " at epoch " << result.best_epoch << "\n";
  return kExitOk;
}

int run_train_ptc(const Globals& g, const std::string& manifest, const std::string& aet_path, const std::string& freeze) {
  const auto items = load_with_thresholds(manifest);
  if (!aet_path.empty()) require_file(aet_path, "--aet");
  const auto train = ptc_config(g);
  PtcModel model;
  if (aet_path.empty()) {
    const auto config = model_config(g);
    model = PtcModel(config, derive_seed(train.seed, 9));
    model.set_freeze(FreezeStage::parse(freeze, config));
  } else {
    model = build_ptc_from_aet(AetModel::load(aet_path), freeze, derive_seed(train.seed, 9));
  }
  Artifacts art(g, "train-ptc");
  std::shared_ptr<std::ofstream> log;
  const auto sink = jsonl_sink(art.path("metrics.jsonl"), log);
  const auto result = train_ptc(std::move(model), items, train, sink);
  result.model.save(art.path("ptc.ckpt").string(),
                    {{"best_epoch", std::to_string(result.best_epoch)}, {"train", train.to_json().dump()}});
  art.set("best_epoch", result.best_epoch);
  art.set("best_val_miou", result.best_val_miou);
  art.write();
  std::cout << "best validation mIoU " << result.best_val_miou << " at epoch " << result.best_epoch << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvalOptions {
  std::string manifest;
  std::string model;
  bool oracle = false;
  double criterion = 0.1;
  int grid_points = 67;
  // cross-validation
  std::string aet;
  std::vector<std::string> stages;
  int folds = 5;
};

void write_report_csv(const fs::path& path, const EvalReport& r) {
  std::ofstream f(path);
  f << "image_id,predicted_neg,predicted_pos,truth_neg,truth_pos,sq_err_neg,sq_err_pos\n";
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& im : r.images)
    f << im.image_id << ',' << opt(im.predicted_neg) << ',' << opt(im.predicted_pos) << ',' << im.truth_neg << ','
      << im.truth_pos << ',' << im.sq_err_neg << ',' << im.sq_err_pos << '\n';
}

int run_sweep(const Globals& g, const EvalOptions& o) {
  const auto items = load_with_thresholds(o.manifest);
  if (!o.oracle) require_file(o.model, "--model");
  std::optional<PtcModel> model;
  if (!o.oracle) model = PtcModel::load(o.model);
  const auto grid = default_sweep_grid(o.grid_points);
  Artifacts art(g, "evaluate sweep");
  std::ofstream curves(art.path("curves.csv"));
  curves << "image_id,x,f1_neg,f1_pos\n";
  EvalReport report;
  ConfusionMatrix confusion;
  for (const auto& item : items) {
    const Predictor predictor = o.oracle ? oracle_predictor(item.mask, *item.thresholds) : ptc_predictor(*model);
    const auto sweep = boundary_sweep(predictor, item.image, item.mask, *item.thresholds, grid, o.criterion, &confusion);
    for (std::size_t i = 0; i < sweep.xs.size(); ++i)
      curves << item.id << ',' << sweep.xs[i] << ',' << sweep.f1_neg[i] << ',' << sweep.f1_pos[i] << '\n';
    report.images.push_back(score_sweep(item.id, sweep, *item.thresholds));
  }
  report.aggregate();
  report.mean_iou = confusion.mean_iou();
  write_report_csv(art.path("report.csv"), report);
  std::ofstream(art.path("report.json")) << report.to_json().dump(2) << '\n';
  art.set("mse_both", report.mse_both);
  art.write();
  std::cout << "MSE both " << report.mse_both << "  neg " << report.mse_neg << "  pos " << report.mse_pos << "  mIoU "
            << report.mean_iou << "\n";
  return kExitOk;
}

int run_cross_validate(const Globals& g, const EvalOptions& o) {
  const auto items = load_with_thresholds(o.manifest);
  if (!o.aet.empty()) require_file(o.aet, "--aet");
  const auto train = ptc_config(g);
  CrossValidationSettings s;
  s.folds = o.folds;
  s.seed = g.seed_or(s.seed);
  s.criterion = o.criterion;
  s.grid_points = o.grid_points;
  std::optional<AetModel> aet;
  if (!o.aet.empty()) aet = AetModel::load(o.aet);
  const BackboneConfig config = aet ? aet->config() : model_config(g);
  std::vector<std::string> stages = o.stages;
  if (stages.empty()) stages = aet ? freeze_stage_names(config) : std::vector<std::string>{"none"};
  for (const auto& st : stages) FreezeStage::parse(st, config);

  Artifacts art(g, "evaluate cross-validate");
  std::ofstream table(art.path("table.csv"));
  table << "stage,pretrained,mse_both,mse_neg,mse_pos,mean_iou\n";
  json all = json::array();
  for (const auto& st : stages) {
    s.freeze_stage = st;
    const auto r = cross_validate(items, config, aet ? &*aet : nullptr, s, train);
    table << st << ',' << (aet ? 1 : 0) << ',' << r.aggregate.mse_both << ',' << r.aggregate.mse_neg << ','
          << r.aggregate.mse_pos << ',' << r.aggregate.mean_iou << '\n';
    table.flush();
    json folds = json::array();
    for (const auto& f : r.folds) folds.push_back(f.to_json());
    all.push_back({{"stage", st}, {"aggregate", r.aggregate.to_json()}, {"folds", folds}});
    std::cout << st << ": MSE both " << r.aggregate.mse_both << "  neg " << r.aggregate.mse_neg << "  pos "
              << r.aggregate.mse_pos << "\n";
  }
  std::ofstream(art.path("cross_validation.json")) << all.dump(2) << '\n';
  art.write();
  return kExitOk;
}

// ---------------------------------------------------------------- serve

struct ServeOptions {
  std::string manifest;
  std::string calibration_image;
  std::string static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  int n_bootstrap = 1000;
};

int run_serve(const Globals& g, const ServeOptions& o) {
  require_file(o.manifest, "--manifest");
  if (!o.static_dir.empty() && !fs::is_directory(o.static_dir))
    throw DataError("--static '" + o.static_dir + "' is not a directory");
  auto items = load_dataset(o.manifest);
  if (items.empty()) throw DataError("manifest lists no images");
  const std::string calibration = o.calibration_image.empty() ? items.front().id : o.calibration_image;
  SessionConfig sc = SessionConfig::from_json(g.section("session"));
  sc.images_per_session = std::min<int>(sc.images_per_session, static_cast<int>(items.size()) - 1);
  SessionStore store(ImageLibrary(std::move(items)), sc, calibration, fs::path(g.out) / "sessions", g.seed_or(1));
  ServerOptions so;
  so.host = o.host;
  so.port = o.port;
  so.static_dir = o.static_dir;
  so.n_bootstrap = o.n_bootstrap;
  so.seed = g.seed_or(1);
  ApiServer server(store, so);
  const int port = server.bind();
  std::cout << "serving on http://" << o.host << ":" << port << "/ (sessions in " << (fs::path(g.out) / "sessions")
            << ")" << std::endl;
  server.serve();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perceptual threshold learning toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for linear algebra")->check(CLI::PositiveNumber);

  GenDataOptions gen;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic dataset with assigned thresholds");
  c_gen->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  c_gen->add_option("--size", gen.size)->check(CLI::PositiveNumber);
  c_gen->add_flag("--no-thresholds", gen.no_thresholds);
  c_gen->add_option("--min-radius", gen.min_radius);
  c_gen->add_option("--max-radius", gen.max_radius);

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "Run simulated observers through QUEST sessions");
  c_sim->add_option("--manifest", sim.manifest)->required();
  c_sim->add_option("--observers", sim.observers)->check(CLI::PositiveNumber);
  c_sim->add_option("--beta", sim.beta);
  c_sim->add_option("--observer-sd", sim.observer_sd);
  c_sim->add_option("--default-threshold", sim.default_threshold);
  c_sim->add_option("--calibration-image", sim.calibration_image);

  std::vector<std::string> fit_logs;
  auto* c_fit = app.add_subcommand("fit", "Fit Weibull thresholds to trial logs");
  c_fit->add_option("logs", fit_logs, "Trial log CSV files")->required();

  std::vector<std::string> pool_tables;
  int n_bootstrap = 1000;
  auto* c_pool = app.add_subcommand("pool", "Pool fitted thresholds across observers");
  c_pool->add_option("fits", pool_tables, "Fit table CSV files")->required();
  c_pool->add_option("--bootstrap", n_bootstrap)->check(CLI::PositiveNumber);

  std::string aet_manifest, aet_init;
  auto* c_aet = app.add_subcommand("train-aet", "Pretrain the transformation regressor");
  c_aet->add_option("--manifest", aet_manifest)->required();
  c_aet->add_option("--init", aet_init, "Continue from this checkpoint");

  std::string ptc_manifest, ptc_aet, ptc_freeze = "concatenate";
  auto* c_ptc = app.add_subcommand("train-ptc", "Fine-tune the threshold classifier");
  c_ptc->add_option("--manifest", ptc_manifest)->required();
  c_ptc->add_option("--aet", ptc_aet, "Pretrained checkpoint; random initialisation when omitted");
  c_ptc->add_option("--freeze", ptc_freeze, "none, blockK_pool or concatenate");

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("evaluate", "Boundary sweeps and cross-validation");
  c_eval->require_subcommand(1);
  auto* c_sweep = c_eval->add_subcommand("sweep", "Soft-F1 boundary sweep of a trained classifier");
  c_sweep->add_option("--manifest", ev.manifest)->required();
  c_sweep->add_option("--model", ev.model, "PTC checkpoint");
  c_sweep->add_flag("--oracle", ev.oracle, "Use the ground-truth classifier");
  c_sweep->add_option("--criterion", ev.criterion);
  c_sweep->add_option("--grid-points", ev.grid_points)->check(CLI::Range(2, 100000));
  auto* c_cv = c_eval->add_subcommand("cross-validate", "k-fold cross-validation per freeze stage");
  c_cv->add_option("--manifest", ev.manifest)->required();
  c_cv->add_option("--aet", ev.aet, "Pretrained checkpoint; random initialisation when omitted");
  c_cv->add_option("--stages", ev.stages, "Freeze stages")->delimiter(',');
  c_cv->add_option("--folds", ev.folds)->check(CLI::Range(2, 1000));
  c_cv->add_option("--criterion", ev.criterion);
  c_cv->add_option("--grid-points", ev.grid_points)->check(CLI::Range(2, 100000));

  ServeOptions srv;
  auto* c_srv = app.add_subcommand("serve", "Host live sessions over HTTP");
  c_srv->add_option("--manifest", srv.manifest)->required();
  c_srv->add_option("--calibration-image", srv.calibration_image);
  c_srv->add_option("--static", srv.static_dir, "Web UI bundle directory");
  c_srv->add_option("--host", srv.host);
  c_srv->add_option("--port", srv.port)->check(CLI::Range(0, 65535));
  c_srv->add_option("--bootstrap", srv.n_bootstrap)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (!g.config_path.empty()) {
      std::ifstream f(g.config_path);
      try {
        g.config = json::parse(f);
      } catch (const json::exception& e) {
        throw DataError("config " + g.config_path + ": " + e.what());
      }
    }
    Eigen::setNbThreads(g.threads);
    if (c_gen->parsed()) return run_gen_data(g, gen);
    if (c_sim->parsed()) return run_simulate(g, sim);
    if (c_fit->parsed()) return run_fit(g, fit_logs);
    if (c_pool->parsed()) return run_pool(g, pool_tables, n_bootstrap);
    if (c_aet->parsed()) return run_train_aet(g, aet_manifest, aet_init);
    if (c_ptc->parsed()) return run_train_ptc(g, ptc_manifest, ptc_aet, ptc_freeze);
    if (c_sweep->parsed()) {
      if (!ev.oracle && ev.model.empty()) {
        std::cerr << "evaluate sweep: --model or --oracle is required\n";
        return kExitUsage;
      }
      return run_sweep(g, ev);
    }
    if (c_cv->parsed()) return run_cross_validate(g, ev);
    if (c_srv->parsed()) return run_serve(g, srv);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
