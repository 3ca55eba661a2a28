// lmpet: simulate list-mode datasets, reconstruct, train and benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/io.hpp"
#include "lmpet/lmpd.hpp"
#include "lmpet/metrics.hpp"
#include "lmpet/parallel.hpp"
#include "lmpet/phantom_sim.hpp"
#include "lmpet/projector.hpp"
#include "lmpet/recon_classic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lmpet;

namespace {

constexpr const char* kToolVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Grid parse_grid(const std::string& text, double pixel_mm) {
  const auto x = text.find_first_of("xX");
  Grid g;
  try {
    if (x == std::string::npos) throw std::invalid_argument("missing 'x'");
    std::size_t used = 0;
    g.width = std::stoi(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("trailing characters");
    const std::string h = text.substr(x + 1);
    g.height = std::stoi(h, &used);
    if (used != h.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw UsageError("--grid expects WxH, got '" + text + "'");
  }
  g.pixel_size_mm = pixel_mm;
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return g;
}

/// Wall-clock phases plus everything needed to re-run the command.
class Manifest {
 public:
  Manifest(std::string subcommand, const std::vector<std::string>& argv) {
    doc_["subcommand"] = std::move(subcommand);
    doc_["tool_version"] = kToolVersion;
    doc_["command_line"] = argv;
    doc_["threads"] = worker_count();
    doc_["config"] = json::object();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
    doc_["timings_s"] = json::object();
  }

  json& config() { return doc_["config"]; }
  json& inputs() { return doc_["inputs"]; }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }

  template <class F>
  auto timed(const std::string& phase, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&] {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      doc_["timings_s"][phase] = doc_["timings_s"].value(phase, 0.0) + s;
    };
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      record();
    } else {
      auto r = body();
      record();
      return r;
    }
  }

  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    const fs::path path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json grid_json(const Grid& g) { return {{"width", g.width}, {"height", g.height}, {"pixel_size_mm", g.pixel_size_mm}}; }

json scanner_json(const ScannerConfig& c) {
  return {{"n_modules", c.n_modules},
          {"crystals_per_module", c.crystals_per_module},
          {"crystal_pitch", c.crystal_pitch_mm},
          {"ring_radius", c.radius()},
          {"n_tof_bins", c.n_tof_bins},
          {"tof_bin_length", c.tof_bin_length_mm},
          {"tof_resolution", c.tof_resolution_ps}};
}

std::string pair_id(std::size_t i) {
  std::ostringstream s;
  s << std::setw(5) << std::setfill('0') << i;
  return s.str();
}

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& which) {
  if (which == "train") return ds.split.train;
  if (which == "val") return ds.split.val;
  if (which == "test") return ds.split.test;
  std::vector<std::size_t> all(ds.pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scanner;
  std::string grid = "32x32";
  double pixel_mm = 1.5;
  std::size_t phantoms = 12;
  double counts = 1e5;
  double background_fraction = 0.15;
  std::uint64_t seed = 0;
  std::optional<std::size_t> n_val;
  std::optional<std::size_t> n_test;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, Manifest& m) {
  DatasetOptions o;
  o.grid = parse_grid(a.grid, a.pixel_mm);
  if (a.phantoms < 3) throw UsageError("--phantoms must be at least 3");
  if (a.n_val && a.n_test && *a.n_val + *a.n_test >= a.phantoms)
    throw UsageError("--val and --test leave no training pairs");
  o.scanner = load_scanner_config(a.scanner);
  o.scanner_path = a.scanner;
  o.n_phantoms = a.phantoms;
  o.counts = a.counts;
  o.background_fraction = a.background_fraction;
  o.seed = a.seed;
  o.n_val = a.n_val;
  o.n_test = a.n_test;

  m.seed(a.seed);
  m.inputs()["scanner"] = a.scanner;
  m.config()["scanner"] = scanner_json(o.scanner);
  m.config()["grid"] = grid_json(o.grid);
  m.config()["phantoms"] = a.phantoms;
  m.config()["counts"] = a.counts;
  m.config()["background_fraction"] = a.background_fraction;

  const Dataset ds = m.timed("simulate", [&] { return make_dataset(o); });
  m.timed("write", [&] { write_dataset(ds, a.out); });
  m.config()["split"] = {{"train", ds.split.train.size()}, {"val", ds.split.val.size()}, {"test", ds.split.test.size()}};
  m.output(a.out);
  std::size_t events = 0;
  for (const auto& p : ds.pairs) events += p.events.size();
  std::cout << "wrote " << ds.pairs.size() << " pairs (" << ds.split.train.size() << '/' << ds.split.val.size() << '/'
            << ds.split.test.size() << "), " << events << " events, to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
  std::string data;
  std::string events;
  std::string truth;
  std::string scanner;
  std::string grid = "32x32";
  double pixel_mm = 1.5;
  std::string split = "test";
  std::string algo;
  int iters = 30;
  int subsets = 4;
  std::optional<double> tv_weight;
  int tv_steps = 10;
  std::uint64_t seed = 0;
  std::string model;
  std::string cache;
  std::string out;
};

struct ReconInput {
  std::string id;
  EventList events;
  std::optional<Image2D> truth;
};

ReconResult run_classic(const std::string& algo, const ProjectionMatrix& p, const Image2D& sens,
                        const ReconConfig& rc) {
  if (algo == "osem") return osem(p, sens, rc);
  if (algo == "osem-tv") return osem_tv(p, sens, rc);
  return spdhg_tv(p, sens, rc);
}

// Selects lambda from {1e-3, 1e-2, 1e-1, 1} times the data-term scale by mean
// PSNR on the given pairs. The data-term scale is the ratio between the
// number of events and the TV of the OSEM image, which puts lambda * TV on
// the order of the log-likelihood sum.
double tune_tv_weight(const std::string& algo, const std::vector<ReconInput>& pairs, const ScannerConfig& scanner,
                      const Grid& grid, const Image2D& sens, ReconConfig rc) {
  std::vector<ProjectionMatrix> mats;
  double scale = 0.0;
  for (const auto& pr : pairs) {
    mats.push_back(build_projection_matrix(scanner, grid, pr.events));
    ReconConfig plain = rc;
    plain.tv_weight = 0.0;
    const Image2D f = osem(mats.back(), sens, plain).image;
    const double tv = tv_value_and_subgradient(f).value;
    scale += tv > 0.0 ? static_cast<double>(pr.events.size()) / tv : 0.0;
  }
  scale /= static_cast<double>(pairs.size());
  if (!(scale > 0.0)) return 0.0;
  double best_weight = 0.0;
  double best_psnr = -1e300;
  for (double factor : {1e-3, 1e-2, 1e-1, 1.0}) {
    rc.tv_weight = factor * scale;
    double mean = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      mean += psnr(run_classic(algo, mats[i], sens, rc).image, *pairs[i].truth);
    mean /= static_cast<double>(pairs.size());
    if (mean > best_psnr) {
      best_psnr = mean;
      best_weight = rc.tv_weight;
    }
  }
  return best_weight;
}

int cmd_reconstruct(const ReconstructArgs& a, Manifest& m) {
  if (a.algo == "lmpd" && a.model.empty()) throw UsageError("--algo lmpd requires --model");
  if (a.data.empty() == a.events.empty()) throw UsageError("give exactly one of --data or --events");
  if (!a.events.empty() && a.scanner.empty()) throw UsageError("--events requires --scanner");

  ScannerConfig scanner;
  Grid grid;
  double counts = 0.0;
  std::vector<ReconInput> inputs;
  std::vector<ReconInput> val_pairs;
  if (!a.data.empty()) {
    const Dataset ds = m.timed("load", [&] { return load_dataset(a.data); });
    scanner = ds.options.scanner;
    grid = ds.options.grid;
    counts = ds.options.counts;
    for (std::size_t i : split_indices(ds, a.split)) inputs.push_back({pair_id(i), ds.pairs[i].events, ds.pairs[i].activity});
    if (inputs.empty()) throw std::runtime_error("split '" + a.split + "' is empty");
    for (std::size_t i : ds.split.val) val_pairs.push_back({pair_id(i), ds.pairs[i].events, ds.pairs[i].activity});
    m.inputs()["data"] = a.data;
    m.config()["split"] = a.split;
  } else {
    scanner = load_scanner_config(a.scanner);
    grid = parse_grid(a.grid, a.pixel_mm);
    ReconInput in{fs::path(a.events).stem().string(), load_listmode(a.events), std::nullopt};
    validate_events(scanner, in.events);
    counts = static_cast<double>(in.events.size());
    if (!a.truth.empty()) {
      in.truth = load_image(a.truth);
      require_same_grid(in.truth->grid(), grid, "--truth");
      m.inputs()["truth"] = a.truth;
    }
    inputs.push_back(std::move(in));
    m.inputs()["events"] = a.events;
    m.inputs()["scanner"] = a.scanner;
  }
  m.seed(a.seed);
  m.config()["algo"] = a.algo;
  m.config()["scanner"] = scanner_json(scanner);
  m.config()["grid"] = grid_json(grid);

  fs::create_directories(a.out);
  MetricReport report;
  bool have_truth = false;

  if (a.algo == "lmpd") {
    const lmpd::LmpdModel model = lmpd::load_checkpoint(a.model);
    if (!(model.grid() == grid)) throw std::runtime_error(a.model + ": model grid does not match the data grid");
    m.inputs()["model"] = a.model;
    m.config()["layers"] = model.layers();
    for (const auto& in : inputs) {
      const Image2D f = m.timed("reconstruct", [&] {
        const lmpd::NetworkOperator op(build_projection_matrix(scanner, grid, in.events));
        return lmpd::model_forward(model, op).output;
      });
      const fs::path path = fs::path(a.out) / (in.id + "_lmpd.img2");
      save_image(f, path);
      m.output(path);
      if (in.truth) {
        report.add(in.id, a.algo, counts, f, *in.truth);
        have_truth = true;
      }
    }
  } else {
    ReconConfig rc;
    rc.n_iter = a.iters;
    rc.n_subsets = a.subsets;
    rc.tv_inner_steps = a.tv_steps;
    rc.seed = a.seed;
    const Image2D sens = m.timed("sensitivity", [&] {
      return a.cache.empty() ? sensitivity_image(scanner, grid) : sensitivity_image_cached(scanner, grid, a.cache);
    });
    if (a.algo != "osem") {
      if (a.tv_weight) {
        rc.tv_weight = *a.tv_weight;
      } else if (!val_pairs.empty()) {
        rc.tv_weight = m.timed("tune", [&] { return tune_tv_weight(a.algo, val_pairs, scanner, grid, sens, rc); });
        std::cout << "selected tv weight " << rc.tv_weight << " on the validation split\n";
      } else {
        throw UsageError("--tv-weight is required without a validation split to tune it on");
      }
    }
    m.config()["iters"] = rc.n_iter;
    m.config()["subsets"] = rc.n_subsets;
    m.config()["tv_weight"] = rc.tv_weight;
    m.config()["tv_steps"] = rc.tv_inner_steps;
    for (const auto& in : inputs) {
      const ReconResult r = m.timed("reconstruct", [&] {
        return run_classic(a.algo, build_projection_matrix(scanner, grid, in.events), sens, rc);
      });
      for (const auto& w : r.warnings) std::cerr << "warning: " << in.id << ": " << w << '\n';
      const fs::path path = fs::path(a.out) / (in.id + "_" + a.algo + ".img2");
      save_image(r.image, path);
      m.output(path);
      const fs::path obj = fs::path(a.out) / (in.id + "_" + a.algo + "_objective.csv");
      std::ostringstream csv;
      write_objective_csv(csv, r.objective);
      write_text(obj, csv.str());
      m.output(obj);
      if (in.truth) {
        report.add(in.id, a.algo, counts, r.image, *in.truth);
        have_truth = true;
      }
    }
  }

  if (have_truth) {
    const fs::path path = fs::path(a.out) / "metrics.csv";
    std::ostringstream csv;
    report.write_csv(csv);
    write_text(path, csv.str());
    m.output(path);
    const auto p = report.psnr_summary(a.algo, counts);
    const auto s = report.ssim_summary(a.algo, counts);
    std::cout << a.algo << ": PSNR " << p.mean << " +- " << p.std << " dB, SSIM " << s.mean << " +- " << s.std << " over "
              << report.rows.size() << " images\n";
  } else {
    std::cout << "reconstructed " << inputs.size() << " image(s) into " << a.out << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  int layers = 7;
  double lr = 1e-5;
  int epochs = 500;
  std::uint64_t seed = 0;
  std::string init;
  std::string out;
};

std::vector<lmpd::TrainingSample> samples(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<lmpd::TrainingSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx)
    out.push_back({lmpd::NetworkOperator(build_projection_matrix(ds.options.scanner, ds.options.grid, ds.pairs[i].events)),
                   ds.pairs[i].activity});
  return out;
}

int cmd_train(const TrainArgs& a, Manifest& m) {
  const Dataset ds = m.timed("load", [&] { return load_dataset(a.data); });
  if (ds.split.train.empty()) throw std::runtime_error(a.data + ": training split is empty");
  m.inputs()["data"] = a.data;
  m.seed(a.seed);
  m.config()["layers"] = a.layers;
  m.config()["lr"] = a.lr;
  m.config()["epochs"] = a.epochs;
  m.config()["grid"] = grid_json(ds.options.grid);

  const auto train_set = m.timed("build_operators", [&] { return samples(ds, ds.split.train); });
  const auto val_set = m.timed("build_operators", [&] { return samples(ds, ds.split.val); });

  lmpd::LmpdModel initial;
  if (a.init.empty()) {
    initial = lmpd::LmpdModel::initialized(a.layers, ds.options.grid, a.seed);
  } else {
    initial = lmpd::load_checkpoint(a.init);
    if (initial.layers() != a.layers || !(initial.grid() == ds.options.grid))
      throw std::runtime_error(a.init + ": checkpoint does not match --layers and the dataset grid");
    m.inputs()["init"] = a.init;
  }

  fs::create_directories(a.out);
  const fs::path best_path = fs::path(a.out) / "best.lmpd";
  const fs::path curve_path = fs::path(a.out) / "loss.csv";
  std::vector<lmpd::EpochRecord> curve;
  auto flush_curve = [&] {
    std::ostringstream csv;
    lmpd::write_loss_csv(csv, curve);
    write_text(curve_path, csv.str());
  };

  lmpd::TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.epochs = a.epochs;
  tc.seed = a.seed;
  lmpd::TrainHooks hooks;
  hooks.on_epoch = [&](const lmpd::EpochRecord& r) {
    curve.push_back(r);
    std::cout << "epoch " << r.epoch << " train_mse " << r.train_mse << " val_mse " << r.val_mse << '\n';
  };
  hooks.on_best = [&](const lmpd::LmpdModel& model, const lmpd::EpochRecord&) { lmpd::save_checkpoint(model, best_path); };

  m.output(best_path);
  m.output(curve_path);
  lmpd::TrainResult result;
  try {
    result = m.timed("train", [&] { return lmpd::train(initial, train_set, val_set, tc, hooks); });
  } catch (...) {
    flush_curve();
    m.config()["status"] = "failed";
    m.write(a.out);
    throw;
  }
  flush_curve();
  const fs::path final_path = fs::path(a.out) / "final.lmpd";
  lmpd::save_checkpoint(result.final_model, final_path);
  m.output(final_path);
  m.config()["best_epoch"] = result.best_epoch;
  std::cout << "best validation MSE at epoch " << result.best_epoch << ", checkpoint " << best_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AblationArgs {
  std::string data;
  std::string model;
  std::string split = "test";
  std::string out;
};

int cmd_ablation(const AblationArgs& a, Manifest& m) {
  const Dataset ds = m.timed("load", [&] { return load_dataset(a.data); });
  const lmpd::LmpdModel model = lmpd::load_checkpoint(a.model);
  if (!(model.grid() == ds.options.grid)) throw std::runtime_error(a.model + ": model grid does not match the data grid");
  m.inputs()["data"] = a.data;
  m.inputs()["model"] = a.model;
  m.config()["split"] = a.split;
  const auto idx = split_indices(ds, a.split);
  if (idx.empty()) throw std::runtime_error("split '" + a.split + "' is empty");

  std::vector<double> mean(static_cast<std::size_t>(model.layers()), 0.0);
  m.timed("evaluate", [&] {
    for (std::size_t i : idx) {
      const lmpd::NetworkOperator op(build_projection_matrix(ds.options.scanner, ds.options.grid, ds.pairs[i].events));
      const auto per_layer = lmpd::layer_ablation_report(model, op, ds.pairs[i].activity);
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += per_layer[k] / static_cast<double>(idx.size());
    }
  });
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / "ablation.csv";
  std::ostringstream csv;
  lmpd::write_ablation_csv(csv, mean);
  write_text(path, csv.str());
  m.output(path);
  std::cout << csv.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string scanner;
  std::string grid = "32x32";
  double pixel_mm = 1.5;
  std::size_t events = 2000;
  int repeat = 3;
  std::uint64_t seed = 0;
  std::string out;
};

EventList random_events(const ScannerConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto nc = static_cast<std::uint32_t>(cfg.n_crystals());
  std::uniform_int_distribution<std::uint32_t> crystal(0, nc - 1);
  std::uniform_int_distribution<std::uint32_t> tof(0, static_cast<std::uint32_t>(cfg.n_tof_bins - 1));
  EventList ev;
  ev.reserve(n);
  while (ev.size() < n) {
    const std::uint32_t c1 = crystal(rng);
    const std::uint32_t c2 = crystal(rng);
    if (c1 == c2) continue;
    ev.push_back({c1, c2, tof(rng)});
  }
  return ev;
}

template <class F>
double median_ms(int repeat, F&& body) {
  std::vector<double> t;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

int cmd_bench(const BenchArgs& a, Manifest& m) {
  const ScannerConfig scanner = a.scanner.empty() ? ScannerConfig::desk() : load_scanner_config(a.scanner);
  const Grid grid = parse_grid(a.grid, a.pixel_mm);
  m.seed(a.seed);
  if (!a.scanner.empty()) m.inputs()["scanner"] = a.scanner;
  m.config()["scanner"] = scanner_json(scanner);
  m.config()["grid"] = grid_json(grid);
  m.config()["events"] = a.events;
  m.config()["repeat"] = a.repeat;

  std::ostringstream csv;
  csv << "kind,mode,dims,value,unit\n";
  auto memory_row = [&](const std::string& mode, const std::string& dims, std::uint64_t bytes) {
    csv << "memory," << mode << ',' << dims << ',' << std::setprecision(6) << to_gib(bytes) << ",GiB\n";
  };
  memory_row("sinogram", "357x224x17x128x128", estimate_memory(SinogramDims{357, 224, 17, 128, 128}));
  memory_row("listmode", "100000x128x128", estimate_memory(ListModeDims{100000, 128, 128}));
  memory_row("listmode", "300000x128x128", estimate_memory(ListModeDims{300000, 128, 128}));
  const auto w = static_cast<std::uint64_t>(grid.width);
  const auto h = static_cast<std::uint64_t>(grid.height);
  memory_row("listmode", std::to_string(a.events) + "x" + std::to_string(w) + "x" + std::to_string(h),
             estimate_memory(ListModeDims{a.events, w, h}));

  for (std::size_t n : {a.events, 2 * a.events}) {
    const EventList ev = random_events(scanner, n, a.seed);
    ProjectionMatrix p;
    const double t_build = median_ms(a.repeat, [&] { p = build_projection_matrix(scanner, grid, ev); });
    const Image2D f(grid, 1.0);
    std::vector<double> y;
    const double t_fwd = median_ms(a.repeat, [&] { y = forward_project(p, f); });
    Image2D b;
    const double t_bwd = median_ms(a.repeat, [&] { b = back_project(p, y); });
    const std::string dims = std::to_string(n) + "x" + std::to_string(w) + "x" + std::to_string(h);
    csv << std::setprecision(6) << "time,build," << dims << ',' << t_build << ",ms\n"
        << "time,forward," << dims << ',' << t_fwd << ",ms\n"
        << "time,backward," << dims << ',' << t_bwd << ",ms\n";
  }
  std::cout << csv.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    const fs::path path = fs::path(a.out) / "bench.csv";
    write_text(path, csv.str());
    m.output(path);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ScannerArgs {
  std::string preset = "desk";
  std::string out;
};

int cmd_scanner(const ScannerArgs& a, Manifest& m) {
  const ScannerConfig cfg = a.preset == "full" ? ScannerConfig::full() : ScannerConfig::desk();
  save_scanner_config(cfg, a.out);
  m.config()["preset"] = a.preset;
  m.output(a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"List-mode TOF-PET simulation, reconstruction and LMPDNet training"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: LMPET_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate phantoms and list-mode data");
  simulate->add_option("--scanner", sim.scanner, "Scanner config file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--grid", sim.grid, "Image grid WxH")->capture_default_str();
  simulate->add_option("--pixel-mm", sim.pixel_mm, "Pixel size in mm")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--phantoms", sim.phantoms, "Number of phantoms")->capture_default_str();
  simulate->add_option("--counts", sim.counts, "Expected total counts per phantom")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--background-fraction", sim.background_fraction, "Share of uniform background counts")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  simulate->add_option("--seed", sim.seed, "RNG seed")->capture_default_str();
  simulate->add_option("--val", sim.n_val, "Validation pairs (default: proportional split)");
  simulate->add_option("--test", sim.n_test, "Test pairs (default: proportional split)");
  simulate->add_option("--out", sim.out, "Output directory")->required();

  ReconstructArgs rec;
  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct list-mode data");
  reconstruct->add_option("--data", rec.data, "Dataset directory")->check(CLI::ExistingDirectory);
  reconstruct->add_option("--events", rec.events, "Single list-mode file")->check(CLI::ExistingFile);
  reconstruct->add_option("--truth", rec.truth, "Ground truth for --events")->check(CLI::ExistingFile);
  reconstruct->add_option("--scanner", rec.scanner, "Scanner config (with --events)")->check(CLI::ExistingFile);
  reconstruct->add_option("--grid", rec.grid, "Image grid WxH (with --events)")->capture_default_str();
  reconstruct->add_option("--pixel-mm", rec.pixel_mm, "Pixel size in mm (with --events)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  reconstruct->add_option("--split", rec.split, "Dataset split")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  reconstruct->add_option("--algo", rec.algo, "osem, osem-tv, spdhg-tv or lmpd")
      ->required()
      ->check(CLI::IsMember({"osem", "osem-tv", "spdhg-tv", "lmpd"}));
  reconstruct->add_option("--iters", rec.iters, "Iterations")->capture_default_str()->check(CLI::PositiveNumber);
  reconstruct->add_option("--subsets", rec.subsets, "Subsets")->capture_default_str()->check(CLI::PositiveNumber);
  reconstruct->add_option("--tv-weight", rec.tv_weight, "TV weight (default: tuned on the validation split)")
      ->check(CLI::NonNegativeNumber);
  reconstruct->add_option("--tv-steps", rec.tv_steps, "Inner TV steps")->capture_default_str()->check(CLI::PositiveNumber);
  reconstruct->add_option("--seed", rec.seed, "Subset selection seed (spdhg-tv)")->capture_default_str();
  reconstruct->add_option("--model", rec.model, "LMPDNet checkpoint (lmpd)")->check(CLI::ExistingFile);
  reconstruct->add_option("--cache", rec.cache, "Sensitivity image cache directory");
  reconstruct->add_option("--out", rec.out, "Output directory")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train an LMPDNet");
  train->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--layers", tr.layers, "Unrolled layers")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.lr, "Learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str()->check(CLI::Range(1, 1000000));
  train->add_option("--seed", tr.seed, "Initialisation and shuffling seed")->capture_default_str();
  train->add_option("--init", tr.init, "Start from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Output directory")->required();

  AblationArgs ab;
  auto* ablation = app.add_subcommand("ablation", "Per-layer PSNR of a trained LMPDNet");
  ablation->add_option("--data", ab.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablation->add_option("--model", ab.model, "LMPDNet checkpoint")->required()->check(CLI::ExistingFile);
  ablation->add_option("--split", ab.split, "Dataset split")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  ablation->add_option("--out", ab.out, "Output directory")->required();

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "Projector timing and memory figures");
  bench->add_option("--scanner", be.scanner, "Scanner config (default: desk preset)")->check(CLI::ExistingFile);
  bench->add_option("--grid", be.grid, "Image grid WxH")->capture_default_str();
  bench->add_option("--pixel-mm", be.pixel_mm, "Pixel size in mm")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--events", be.events, "Events in the smaller timing run")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--repeat", be.repeat, "Timing repetitions (median reported)")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--seed", be.seed, "Event RNG seed")->capture_default_str();
  bench->add_option("--out", be.out, "Output directory for bench.csv");

  ScannerArgs sc;
  auto* scanner = app.add_subcommand("scanner", "Write a preset scanner config");
  scanner->add_option("--preset", sc.preset, "desk or full")->capture_default_str()->check(CLI::IsMember({"desk", "full"}));
  scanner->add_option("--out", sc.out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (threads > 0) set_worker_count(threads);
    if (*simulate) {
      Manifest m("simulate", args);
      const int rc = cmd_simulate(sim, m);
      m.write(sim.out);
      return rc;
    }
    if (*reconstruct) {
      Manifest m("reconstruct", args);
      const int rc = cmd_reconstruct(rec, m);
      m.write(rec.out);
      return rc;
    }
    if (*train) {
      Manifest m("train", args);
      const int rc = cmd_train(tr, m);
      m.write(tr.out);
      return rc;
    }
    if (*ablation) {
      Manifest m("ablation", args);
      const int rc = cmd_ablation(ab, m);
      m.write(ab.out);
      return rc;
    }
    if (*bench) {
      Manifest m("bench", args);
      const int rc = cmd_bench(be, m);
      if (!be.out.empty()) m.write(be.out);
      return rc;
    }
    if (*scanner) {
      Manifest m("scanner", args);
      return cmd_scanner(sc, m);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
