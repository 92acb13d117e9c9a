#include "pathscan/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathscan/baselines.hpp"
#include "pathscan/config.hpp"
#include "pathscan/corpus.hpp"
#include "pathscan/error.hpp"
#include "pathscan/inference.hpp"
#include "pathscan/io.hpp"
#include "pathscan/metrics.hpp"
#include "pathscan/pat_h.hpp"
#include "pathscan/pat_s.hpp"
#include "pathscan/render.hpp"
#include "pathscan/synth.hpp"

namespace pathscan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const MagLevel k2x = MagLevel::from_factor(2);
const MagLevel k10x = MagLevel::from_factor(10);

// Typed reads that record the resolved value, so the echoed config is
// complete.
struct Settings {
  Config cfg;

  double num(const std::string& k, double def) {
    const double v = cfg.get_double(k, def);
    cfg.set(k, v);
    return v;
  }
  std::size_t size(const std::string& k, std::size_t def) {
    const std::size_t v = cfg.get_size(k, def);
    cfg.set(k, v);
    return v;
  }
  bool flag(const std::string& k, bool def) {
    const bool v = cfg.get_bool(k, def);
    cfg.set(k, v);
    return v;
  }
  std::string str(const std::string& k, const std::string& def) {
    std::string v = cfg.get_string(k, def);
    cfg.set(k, v);
    return v;
  }
  std::vector<double> list(const std::string& k, const std::vector<double>& def) {
    std::vector<double> v = cfg.get_doubles(k, def);
    cfg.set(k, v);
    return v;
  }
};

struct Run {
  std::string command;
  Settings s;
  json args = json::object();
  std::uint64_t seed = 1;

  json meta() const {
    return {{"tool_version", kToolVersion},
            {"command", command},
            {"args", args},
            {"config", s.cfg.to_json()}};
  }
};

std::uint64_t parse_seed(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty()) {
    fail(ErrorKind::kInvalidConfig, what + " must be a non-negative integer, got '" + text + "'");
  }
  return v;
}

// Precedence: --seed, then PATHSCAN_SEED, then the config file, then 1.
void resolve_seed(Run& run, const std::optional<std::uint64_t>& flag) {
  std::uint64_t seed = run.s.cfg.get_u64("seed", 1);
  if (const char* env = std::getenv("PATHSCAN_SEED"); env && *env) {
    seed = parse_seed(env, "PATHSCAN_SEED");
  }
  if (flag) seed = *flag;
  run.seed = seed;
  run.s.cfg.set("seed", seed);
}

void load_config(Run& run, const std::string& path) {
  if (!path.empty()) {
    run.s.cfg = Config::load(path);
    run.args["config"] = path;
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_file(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  write_text_file(p, text);
}

std::string csv_preamble(const json& meta) {
  return "# " + std::string(kToolVersion) + "\n# " + meta.dump() + "\n";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next++;
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- settings ---------------------------------------------------------------

SimplifyParams simplify_params(Settings& s) {
  SimplifyParams p;
  p.th_angle = s.num("simplify.th_angle", p.th_angle);
  p.th_time_ms = s.num("simplify.th_time_ms", p.th_time_ms);
  p.th_dist = s.num("simplify.th_dist", p.th_dist);
  const std::string unit = s.str("simplify.dist_unit", "viewport_fraction");
  if (unit == "viewport_fraction") {
    p.dist_unit = DistanceUnit::kViewportFraction;
  } else if (unit == "level0_px") {
    p.dist_unit = DistanceUnit::kLevel0Pixels;
  } else {
    fail(ErrorKind::kInvalidConfig, "simplify.dist_unit must be viewport_fraction or level0_px");
  }
  p.viewport_width_1x = s.num("simplify.viewport_width_1x", 0.0);
  p.max_fixations = s.size("simplify.max_fixations", p.max_fixations);
  p.literal_dispersion_branch = s.flag("simplify.literal_dispersion_branch", false);
  return p;
}

CorpusConfig corpus_config(Settings& s, std::uint64_t seed) {
  CorpusConfig c;
  c.seed = seed;
  c.n_wsis = s.size("gen.wsis", c.n_wsis);
  c.n_readers = s.size("gen.readers", c.n_readers);
  c.grid_rows = s.size("gen.grid_rows", c.grid_rows);
  c.grid_cols = s.size("gen.grid_cols", c.grid_cols);
  c.cell_size = s.num("gen.cell_size", c.cell_size);
  c.n_samples = s.size("gen.n_samples", c.n_samples);
  c.test_fraction = s.num("gen.test_fraction", c.test_fraction);
  const auto mix = s.list("gen.mix", {c.mix.benign, c.mix.g3, c.mix.g4, c.mix.g5});
  if (mix.size() != 4) fail(ErrorKind::kInvalidConfig, "gen.mix needs 4 weights (benign, G3, G4, G5)");
  c.mix = {mix[0], mix[1], mix[2], mix[3]};
  c.profile.explore_fraction = s.num("gen.explore_fraction", c.profile.explore_fraction);
  c.profile.drill_bias = s.num("gen.drill_bias", c.profile.drill_bias);
  c.profile.noise_sigma = s.num("gen.noise_sigma", c.profile.noise_sigma);
  if (c.n_wsis < 1 || c.n_readers < 1) fail(ErrorKind::kInvalidConfig, "--wsis and --readers must be >= 1");
  c.profile.validate();
  return c;
}

CorpusFeatureSettings feature_settings(Settings& s, std::uint64_t seed) {
  CorpusFeatureSettings f;
  f.dim = s.size("gen.feature_dim", f.dim);
  f.seed = mix_seed(seed, 7);
  f.base_cols_1x = s.size("gen.base_cols_1x", f.base_cols_1x);
  std::vector<double> def(f.stored_factors.begin(), f.stored_factors.end());
  f.stored_factors.clear();
  for (double v : s.list("gen.stored_factors", def)) {
    if (v != static_cast<int>(v) || !MagLevel::valid_factor(static_cast<int>(v))) {
      fail(ErrorKind::kInvalidConfig, "gen.stored_factors entries must be magnification factors");
    }
    f.stored_factors.push_back(static_cast<int>(v));
  }
  return f;
}

HeatmapModelConfig heatmap_config(Settings& s, std::uint64_t seed) {
  HeatmapModelConfig c;
  c.dim = s.size("heatmap.dim", c.dim);
  c.layers = s.size("heatmap.layers", c.layers);
  c.heads = s.size("heatmap.heads", c.heads);
  c.ffn_hidden = s.size("heatmap.ffn_hidden", c.ffn_hidden);
  c.lr = s.num("heatmap.lr", c.lr);
  c.epochs = s.size("heatmap.epochs", c.epochs);
  c.max_global_tokens = s.size("heatmap.max_global_tokens", c.max_global_tokens);
  c.window = s.size("heatmap.window", c.window);
  c.k_sigma = s.num("heatmap.k_sigma", c.k_sigma);
  c.seed = seed;
  c.validate();
  return c;
}

ScanpathModelConfig scanpath_config(Settings& s, std::uint64_t seed) {
  ScanpathModelConfig c;
  c.model_dim = s.size("scanpath.model_dim", c.model_dim);
  c.enc_layers = s.size("scanpath.enc_layers", c.enc_layers);
  c.dec_layers = s.size("scanpath.dec_layers", c.dec_layers);
  c.heads = s.size("scanpath.heads", c.heads);
  c.mlp_hidden = s.size("scanpath.mlp_hidden", c.mlp_hidden);
  c.lambda_mag = s.num("scanpath.lambda_mag", c.lambda_mag);
  c.gamma = s.num("scanpath.gamma", c.gamma);
  c.beta = s.num("scanpath.beta", c.beta);
  c.class_weights = s.list("scanpath.class_weights", {});
  c.lr = s.num("scanpath.lr", c.lr);
  c.epochs = s.size("scanpath.epochs", c.epochs);
  c.batch = s.size("scanpath.batch", c.batch);
  c.temporal_cap = s.size("scanpath.temporal_cap", c.temporal_cap);
  c.k_sigma = s.num("scanpath.k_sigma", c.k_sigma);
  c.seed = seed;
  return c;
}

RolloutConfig rollout_config(Settings& s) {
  RolloutConfig r;
  r.ior_radius_fraction = s.num("rollout.ior_radius_fraction", r.ior_radius_fraction);
  r.ior_decay = s.num("rollout.ior_decay", r.ior_decay);
  r.ior_window = s.size("rollout.ior_window", r.ior_window);
  const std::string sampling = s.str("rollout.sampling", "sample");
  if (sampling == "sample") {
    r.probmag_sampling = MagSampling::kSample;
  } else if (sampling == "deterministic") {
    r.probmag_sampling = MagSampling::kDeterministic;
  } else {
    fail(ErrorKind::kInvalidConfig, "rollout.sampling must be sample or deterministic");
  }
  r.fixation_dur_ms = s.num("rollout.fixation_dur_ms", r.fixation_dur_ms);
  return r;
}

// ---- shared data plumbing -----------------------------------------------------

std::vector<Scanpath> scanpaths_on(const std::vector<Scanpath>& all, const Corpus& corpus,
                                   std::optional<bool> test) {
  std::vector<Scanpath> out;
  std::size_t unknown = 0;
  for (const Scanpath& sp : all) {
    if (!corpus.has_slide(sp.wsi_id)) {
      ++unknown;
      continue;
    }
    if (!test || corpus.slide(sp.wsi_id).test == *test) out.push_back(sp);
  }
  if (unknown) warn(std::to_string(unknown) + " scanpaths refer to slides outside the corpus; ignored");
  return out;
}

std::map<std::string, std::vector<Scanpath>> by_slide(const std::vector<Scanpath>& sps) {
  std::map<std::string, std::vector<Scanpath>> out;
  for (const Scanpath& sp : sps) out[sp.wsi_id].push_back(sp);
  return out;
}

std::optional<HeatmapModel> load_encoder(const std::string& path, MagLevel mag) {
  if (path.empty()) return std::nullopt;
  HeatmapModel m = HeatmapModel::from_checkpoint(load_checkpoint(path));
  if (m.mag() != mag) {
    fail(ErrorKind::kInvalidInput, path + " was trained at " + std::to_string(m.mag().factor()) +
                                       "X, expected " + std::to_string(mag.factor()) + "X");
  }
  return m;
}

struct Encoders {
  std::optional<HeatmapModel> e2x;
  std::optional<HeatmapModel> e10x;
  std::string p2x;
  std::string p10x;

  static Encoders load(const std::string& p2x, const std::string& p10x) {
    Encoders e;
    e.p2x = p2x;
    e.p10x = p10x;
    e.e2x = load_encoder(p2x, k2x);
    e.e10x = load_encoder(p10x, k10x);
    return e;
  }

  json to_json() const {
    return {{"2x", p2x.empty() ? json(nullptr) : json(p2x)},
            {"10x", p10x.empty() ? json(nullptr) : json(p10x)}};
  }

  // Stage-1 encodings when an encoder is configured, raw tokens otherwise.
  ScanpathSlide slide(const Corpus& corpus, const std::string& id) const {
    const FeatureGrid& r2 = corpus.features().grid(id, k2x);
    const FeatureGrid& r10 = corpus.features().grid(id, k10x);
    return {id, e2x ? e2x->encoded_grid(r2) : r2, e10x ? e10x->encoded_grid(r10) : r10};
  }
};

struct LoadedScanpathModel {
  ScanpathModel model;
  json meta;
};

LoadedScanpathModel load_scanpath_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  ScanpathModel model = ScanpathModel::from_checkpoint(ck);
  return {std::move(model), json::parse(ck.metadata)};
}

std::string meta_path(const json& meta, const char* key) {
  const json& e = meta.value("encoders", json::object());
  return e.contains(key) && e[key].is_string() ? e[key].get<std::string>() : std::string();
}

TransitionMatrix matrix_from_json(const json& j) {
  TransitionMatrix tm{};
  try {
    for (std::size_t r = 0; r < kNumMags; ++r) {
      for (std::size_t c = 0; c < kNumMags; ++c) tm[r][c] = j.at(r).at(c).get<double>();
    }
  } catch (const json::exception&) {
    fail(ErrorKind::kFormat, "checkpoint has no usable transition prior");
  }
  return tm;
}

std::vector<std::string> select_slides(const Corpus& corpus, const std::vector<std::string>& wsi) {
  if (wsi.empty()) {
    auto ids = corpus.ids(true);
    if (ids.empty()) {
      warn("corpus has no test slides; using every slide");
      ids = corpus.ids();
    }
    return ids;
  }
  for (const std::string& id : wsi) corpus.slide(id);
  return wsi;
}

std::size_t slide_index(const Corpus& corpus, const std::string& id) {
  const auto& slides = corpus.slides();
  for (std::size_t i = 0; i < slides.size(); ++i) {
    if (slides[i].id == id) return i;
  }
  return slides.size();
}

void write_report(const fs::path& path, const Report& report, const json& meta) {
  if (path.extension() == ".json") {
    write_file(path, json{{"meta", meta}, {"report", report.to_json()}}.dump(2) + "\n");
  } else {
    write_file(path, csv_preamble(meta) + report.to_csv());
  }
}

// ---- commands ------------------------------------------------------------------

struct SimplifyOpts {
  std::string in, params, out, corpus;
};

int cmd_simplify(const SimplifyOpts& o, std::ostream& out) {
  Run run{"simplify", {}};
  load_config(run, o.params);
  run.args["in"] = o.in;
  if (!o.corpus.empty()) run.args["corpus"] = o.corpus;
  const SimplifyParams params = simplify_params(run.s);
  std::optional<Corpus> corpus;
  if (!o.corpus.empty()) corpus = Corpus::open(o.corpus);
  const auto trajs = read_trajectories(fs::path(o.in));
  std::vector<Scanpath> sps;
  for (const RawTrajectory& t : trajs) {
    SimplifyParams p = params;
    if (corpus && p.dist_unit == DistanceUnit::kViewportFraction) {
      p.viewport_width_1x = corpus->slide(t.wsi_id).bounds.width;
    }
    sps.push_back(simplify(t, p));
  }
  std::ostringstream os;
  write_scanpaths(os, sps, run.meta());
  write_file(o.out, os.str());
  out << "simplified " << sps.size() << " trajectories into " << o.out << '\n';
  return kExitOk;
}

struct GenOpts {
  std::string out, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> wsis, readers;
  bool force = false;
};

int cmd_gen(const GenOpts& o, std::ostream& out) {
  Run run{"gen", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  if (o.wsis) run.s.cfg.set("gen.wsis", *o.wsis);
  if (o.readers) run.s.cfg.set("gen.readers", *o.readers);
  const CorpusConfig cc = corpus_config(run.s, run.seed);
  const CorpusFeatureSettings feat = feature_settings(run.s, run.seed);
  const SimplifyParams sp = simplify_params(run.s);

  const fs::path root(o.out);
  if (fs::exists(root)) {
    if (!fs::is_directory(root)) fail(ErrorKind::kInvalidConfig, o.out + " exists and is not a directory");
    if (!fs::is_empty(root)) {
      if (!o.force) {
        fail(ErrorKind::kInvalidConfig, o.out + " is not empty; pass --force to overwrite");
      }
      for (const char* entry : {"manifest.json", "maps", "features", "trajectories.jsonl", "scanpaths.jsonl"}) {
        fs::remove_all(root / entry);
      }
    }
  }
  const SyntheticCorpus corpus = generate_corpus(cc);
  write_corpus(root, corpus, feat, sp, run.meta()["config"]);
  out << "wrote " << corpus.wsi_ids.size() << " slides and " << corpus.trajectories.size()
      << " trajectories to " << o.out << '\n';
  return kExitOk;
}

struct TrainOpts {
  std::string corpus, config, out, log, scanpaths, h2x, h10x;
  std::optional<std::uint64_t> seed;
  std::optional<int> mag;
};

std::string default_log(const TrainOpts& o) { return o.log.empty() ? o.out + ".loss.csv" : o.log; }

int cmd_train_heatmap(const TrainOpts& o, std::ostream& out) {
  Run run{"train-heatmap", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  run.args["corpus"] = o.corpus;
  if (o.mag) run.s.cfg.set("heatmap.mag", *o.mag);
  const int factor = static_cast<int>(run.s.size("heatmap.mag", 10));
  if (!MagLevel::valid_factor(factor)) fail(ErrorKind::kInvalidConfig, "heatmap.mag must be a magnification factor");
  const MagLevel mag = MagLevel::from_factor(factor);
  const HeatmapModelConfig hc = heatmap_config(run.s, run.seed);

  const Corpus corpus = Corpus::open(o.corpus);
  const std::string sp_path = o.scanpaths.empty() ? corpus.scanpaths_path().string() : o.scanpaths;
  run.args["scanpaths"] = sp_path;
  const auto train = by_slide(scanpaths_on(read_scanpaths(fs::path(sp_path)), corpus, false));
  std::vector<HeatmapExample> examples;
  for (const std::string& id : corpus.ids(false)) {
    const FeatureGrid& g = corpus.features().grid(id, mag);
    auto it = train.find(id);
    const std::vector<Scanpath> none;
    const auto& sps = it == train.end() ? none : it->second;
    examples.push_back({id, g, fixations_to_heatmap(sps, mag, g.rows, g.cols, g.patch_px, hc.k_sigma)});
  }
  if (examples.empty()) fail(ErrorKind::kInvalidInput, "corpus has no training slides");

  const json meta = run.meta();
  const std::string log_path = default_log(o);
  std::string log = csv_preamble(meta) + "epoch,loss\n";
  auto save = [&](const HeatmapModel& m, const nn::AdamState& adam) {
    Checkpoint ck = m.to_checkpoint(&adam);
    json md = json::parse(ck.metadata);
    md["run"] = meta;
    ck.metadata = md.dump();
    ensure_parent(o.out);
    save_checkpoint(o.out, ck);
  };
  try {
    train_heatmap(examples, mag, hc,
                  [&](std::size_t epoch, double loss, const HeatmapModel& m, const nn::AdamState& adam) {
                    log += std::to_string(epoch) + "," + fmt(loss) + "\n";
                    write_file(log_path, log);
                    save(m, adam);
                  });
  } catch (const Error& e) {
    write_file(log_path, log);
    throw;
  }
  write_file(log_path, log);
  out << "trained " << factor << "X heatmap model for " << hc.epochs << " epochs; checkpoint "
      << o.out << ", log " << log_path << '\n';
  return kExitOk;
}

int cmd_train_scanpath(const TrainOpts& o, std::ostream& out) {
  Run run{"train-scanpath", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  run.args["corpus"] = o.corpus;
  ScanpathModelConfig sc = scanpath_config(run.s, run.seed);

  const Corpus corpus = Corpus::open(o.corpus);
  const std::string sp_path = o.scanpaths.empty() ? corpus.scanpaths_path().string() : o.scanpaths;
  run.args["scanpaths"] = sp_path;
  const std::vector<Scanpath> train = scanpaths_on(read_scanpaths(fs::path(sp_path)), corpus, false);
  if (train.empty()) fail(ErrorKind::kInvalidInput, "no training scanpaths");
  const Encoders enc = Encoders::load(o.h2x, o.h10x);
  run.args["encoders"] = enc.to_json();

  std::vector<ScanpathSlide> slides;
  for (const std::string& id : corpus.ids(false)) slides.push_back(enc.slide(corpus, id));
  sc.feature_dim = slides.front().f2x.dim;
  if (slides.front().f10x.dim != sc.feature_dim) {
    fail(ErrorKind::kInvalidInput, "2X and 10X inputs have different widths");
  }
  run.s.cfg.set("scanpath.feature_dim", sc.feature_dim);
  sc.validate();

  const TransitionStats stats = estimate_transition_matrix(train);
  json prior = json::array();
  for (const auto& row : stats.matrix) prior.push_back(row);
  const json meta = run.meta();
  json extra = {{"run", meta},
                {"encoders", enc.to_json()},
                {"mean_length", infer_length(train)},
                {"transition_prior", prior}};

  const std::string log_path = default_log(o);
  std::string log = csv_preamble(meta) + "epoch,fix,mag,total\n";
  auto save = [&](const ScanpathModel& m, const nn::AdamState& adam) {
    ensure_parent(o.out);
    save_checkpoint(o.out, m.to_checkpoint(&adam, extra));
  };
  try {
    train_scanpath(slides, train, sc,
                   [&](const ScanpathEpochLog& l, const ScanpathModel& m, const nn::AdamState& adam) {
                     log += std::to_string(l.epoch) + "," + fmt(l.fix) + "," + fmt(l.mag) + "," +
                            fmt(l.total) + "\n";
                     write_file(log_path, log);
                     save(m, adam);
                   });
  } catch (const Error&) {
    write_file(log_path, log);
    throw;
  }
  write_file(log_path, log);
  out << "trained scanpath model on " << train.size() << " scanpaths for " << sc.epochs
      << " epochs; checkpoint " << o.out << ", log " << log_path << '\n';
  return kExitOk;
}

struct PredictOpts {
  std::string ckpt, corpus, config, out, mode = "probmag", n = "auto", h2x, h10x, scanpaths;
  std::vector<std::string> wsi;
  std::optional<std::uint64_t> seed;
  std::size_t samples = 1;
  std::size_t jobs = 1;
};

int cmd_predict(const PredictOpts& o, std::ostream& out) {
  Run run{"predict", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  run.args["corpus"] = o.corpus;
  run.args["mode"] = o.mode;
  run.args["n"] = o.n;
  run.args["samples"] = o.samples;
  RolloutConfig rc = rollout_config(run.s);
  const Corpus corpus = Corpus::open(o.corpus);
  const std::vector<std::string> ids = select_slides(corpus, o.wsi);
  run.args["wsi"] = ids;

  const bool baseline = o.mode == "random1" || o.mode == "random2";
  std::optional<LoadedScanpathModel> lm;
  Encoders enc;
  if (!baseline) {
    rc.mode = rollout_mode_from_string(o.mode);
    if (o.ckpt.empty()) fail(ErrorKind::kInvalidConfig, "--ckpt is required for mode " + o.mode);
    run.args["ckpt"] = o.ckpt;
    lm = load_scanpath_model(o.ckpt);
    enc = Encoders::load(o.h2x.empty() ? meta_path(lm->meta, "2x") : o.h2x,
                         o.h10x.empty() ? meta_path(lm->meta, "10x") : o.h10x);
    run.args["encoders"] = enc.to_json();
    if (rc.mode == RolloutMode::kPriorMag) rc.prior = matrix_from_json(lm->meta.value("transition_prior", json()));
  }

  std::vector<Scanpath> train;
  if (o.mode == "random2" || o.n == "auto") {
    const std::string sp_path = o.scanpaths.empty() ? corpus.scanpaths_path().string() : o.scanpaths;
    train = scanpaths_on(read_scanpaths(fs::path(sp_path)), corpus, false);
  }
  std::size_t n = 0;
  if (o.n == "auto") {
    n = lm ? lm->meta.at("mean_length").get<std::size_t>() : infer_length(train);
  } else {
    n = static_cast<std::size_t>(parse_seed(o.n, "--n"));
  }
  if (n == 0) fail(ErrorKind::kInvalidConfig, "--n must be >= 1");
  rc.n = n;
  if (o.samples == 0) fail(ErrorKind::kInvalidConfig, "--samples must be >= 1");
  const json meta = run.meta();

  std::vector<std::vector<std::pair<Scanpath, json>>> results(ids.size());
  parallel_for(ids.size(), o.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    const WsiBounds bounds = corpus.slide(id).bounds;
    const std::uint64_t slide_seed = mix_seed(run.seed, slide_index(corpus, id));
    std::optional<ScanpathSlide> ss;
    std::optional<SlideTensors> st;
    if (lm) {
      ss = enc.slide(corpus, id);
      st.emplace(ss->f2x, ss->f10x);
    }
    for (std::size_t k = 0; k < o.samples; ++k) {
      const std::uint64_t seed = mix_seed(slide_seed, k);
      const std::string reader = o.mode + "-" + std::to_string(k);
      json info = {{"mode", o.mode}, {"n", n}, {"sample", k}};
      Scanpath sp;
      if (lm) {
        RolloutConfig cfg = rc;
        cfg.seed = seed;
        RolloutResult r = rollout(lm->model, *st, cfg, id);
        sp = std::move(r.scanpath);
        info["aborted"] = r.aborted;
        info["ior_fallbacks"] = r.ior_fallbacks;
        if (r.aborted) warn(id + ": rollout stopped early: " + r.error);
      } else {
        std::mt19937_64 rng(seed);
        if (o.mode == "random1") {
          for (std::size_t t = 0; t < n; ++t) sp.fixations.push_back(random1_next(bounds, rng));
        } else {
          sp = random2_scanpath(train, id, bounds, rng);
          info["donor_reader"] = sp.reader_id;
        }
        sp.wsi_id = id;
      }
      sp.reader_id = reader;
      results[i].emplace_back(std::move(sp), std::move(info));
    }
  });

  std::ostringstream os;
  std::size_t count = 0;
  for (const auto& per_slide : results) {
    for (const auto& [sp, info] : per_slide) {
      json m = meta;
      m["rollout"] = info;
      os << scanpath_to_json(sp, m).dump() << '\n';
      ++count;
    }
  }
  write_file(o.out, os.str());
  out << "wrote " << count << " predicted scanpaths (" << o.mode << ", n=" << n << ") to " << o.out << '\n';
  return kExitOk;
}

struct EvalNextOpts {
  std::string ckpt, corpus, config, report, method = "pat", gt, h2x, h10x;
  std::vector<std::string> wsi;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

int cmd_eval_next(const EvalNextOpts& o, std::ostream& out) {
  Run run{"eval-next", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  run.args["corpus"] = o.corpus;
  run.args["method"] = o.method;
  const Corpus corpus = Corpus::open(o.corpus);
  const std::vector<std::string> ids = select_slides(corpus, o.wsi);
  run.args["wsi"] = ids;
  const std::string gt_path = o.gt.empty() ? corpus.scanpaths_path().string() : o.gt;
  run.args["gt"] = gt_path;
  const std::vector<Scanpath> all = scanpaths_on(read_scanpaths(fs::path(gt_path)), corpus, std::nullopt);
  const auto gts = by_slide(all);
  std::vector<Scanpath> train;
  for (const Scanpath& sp : all) {
    if (!corpus.slide(sp.wsi_id).test) train.push_back(sp);
  }

  std::optional<LoadedScanpathModel> lm;
  Encoders enc;
  if (o.method == "pat") {
    if (o.ckpt.empty()) fail(ErrorKind::kInvalidConfig, "--ckpt is required for method pat");
    run.args["ckpt"] = o.ckpt;
    lm = load_scanpath_model(o.ckpt);
    enc = Encoders::load(o.h2x.empty() ? meta_path(lm->meta, "2x") : o.h2x,
                         o.h10x.empty() ? meta_path(lm->meta, "10x") : o.h10x);
    run.args["encoders"] = enc.to_json();
  } else if (o.method != "random1" && o.method != "random2") {
    fail(ErrorKind::kInvalidConfig, "--method must be pat, random1 or random2");
  }

  struct Row {
    std::string id;
    std::vector<std::optional<double>> values;
  };
  std::vector<std::vector<Row>> rows(ids.size());
  parallel_for(ids.size(), o.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    auto git = gts.find(id);
    if (git == gts.end()) {
      warn("no ground-truth scanpaths on " + id);
      return;
    }
    const WsiBounds bounds = corpus.slide(id).bounds;
    std::optional<ScanpathSlide> ss;
    std::optional<SlideTensors> st;
    if (lm) {
      ss = enc.slide(corpus, id);
      st.emplace(ss->f2x, ss->f10x);
    }
    std::mt19937_64 rng(mix_seed(run.seed, slide_index(corpus, id)));
    for (std::size_t g = 0; g < git->second.size(); ++g) {
      const Scanpath& gt = git->second[g];
      if (gt.fixations.size() < 2) continue;
      std::vector<NextEvent> events;
      double tok = 0.0, err = 0.0;
      const std::size_t n = gt.fixations.size() - 1;
      for (std::size_t k = 1; k <= n; ++k) {
        const std::span<const Fixation> prefix(gt.fixations.data(), k);
        const Fixation& truth = gt.fixations[k];
        const MagLevel current = prefix.back().mag;
        Fixation pred;
        if (lm) {
          const ScanpathModel::Step step = lm->model.predict(*st, prefix);
          const Point2 loc = next_location(step.heat);
          pred = {loc.x, loc.y, next_mag_probmag(step.mag, current, MagSampling::kDeterministic), 0.0};
        } else if (o.method == "random1") {
          pred = random1_next(bounds, rng);
        } else {
          pred = random2_next(train, gt.reader_id, k, id, bounds, rng).fixation;
        }
        tok += tok_sim_fix(pred, truth, id, corpus.features());
        err += spatial_error(pred, truth, bounds);
        events.push_back({current, truth.mag, pred.mag});
      }
      const MagAccuracy acc = mag_accuracy(events);
      const MagAccuracy change = mag_change_accuracy(events);
      rows[i].push_back({id + "/" + gt.reader_id,
                         {tok / static_cast<double>(n), err / static_cast<double>(n), acc.overall,
                          change.defined ? std::optional<double>(change.overall) : std::nullopt,
                          static_cast<double>(n)}});
    }
  });

  Report report;
  report.columns = {"toksim_fix", "spatial_error", "mag_acc", "mag_change_acc", "events"};
  for (const auto& per_slide : rows) {
    for (const Row& r : per_slide) report.add(r.id, r.values);
  }
  if (report.rows.empty()) fail(ErrorKind::kInvalidInput, "no next-fixation events to evaluate");
  write_report(o.report, report, run.meta());
  out << "evaluated " << report.rows.size() << " scanpaths; report " << o.report << '\n';
  return kExitOk;
}

struct EvalScanOpts {
  std::string pred, gt, corpus, grades, config, report;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

int cmd_eval_scanpath(const EvalScanOpts& o, std::ostream& out) {
  Run run{"eval-scanpath", {}};
  load_config(run, o.config);
  resolve_seed(run, o.seed);
  run.args["pred"] = o.pred;
  run.args["corpus"] = o.corpus;
  const bool aligned = run.s.flag("eval.index_aligned", false);
  AlignScoring scoring;
  scoring.match = run.s.num("eval.match", scoring.match);
  scoring.mismatch = run.s.num("eval.mismatch", scoring.mismatch);
  scoring.gap = run.s.num("eval.gap", scoring.gap);
  scoring.validate();
  const double k_sigma = run.s.num("eval.k_sigma", kDefaultSigmaFraction);

  const Corpus corpus = Corpus::open(o.corpus);
  const std::string gt_path = o.gt.empty() ? corpus.scanpaths_path().string() : o.gt;
  run.args["gt"] = gt_path;
  const auto gts = by_slide(scanpaths_on(read_scanpaths(fs::path(gt_path)), corpus, std::nullopt));
  const std::vector<Scanpath> preds = read_scanpaths(fs::path(o.pred));
  if (o.grades.empty()) {
    warn("no --grades directory; SSS columns are left empty");
  } else {
    run.args["grades"] = o.grades;
  }

  std::vector<std::optional<std::vector<std::optional<double>>>> rows(preds.size());
  std::vector<std::string> missing_maps(preds.size());
  parallel_for(preds.size(), o.jobs, [&](std::size_t i) {
    const Scanpath& pred = preds[i];
    corpus.slide(pred.wsi_id);
    auto git = gts.find(pred.wsi_id);
    if (git == gts.end() || pred.fixations.empty()) return;
    const std::vector<Scanpath>& truth = git->second;
    std::vector<Fixation> pooled;
    for (const Scanpath& g : truth) pooled.insert(pooled.end(), g.fixations.begin(), g.fixations.end());
    const FeatureGrid& g10 = corpus.features().grid(pred.wsi_id, k10x);
    const Heatmap map = scanpath_to_heatmap(pred, k10x, g10.rows, g10.cols, g10.patch_px, k_sigma);
    std::optional<double> nss_v, auc_v, sss_v, tok_v;
    if (!pooled.empty() && !map.is_constant()) {
      nss_v = nss(map, pooled);
      auc_v = auc_judd(map, pooled);
    }
    if (!o.grades.empty()) {
      const fs::path mp = fs::path(o.grades) / (pred.wsi_id + ".txt");
      if (fs::exists(mp)) {
        try {
          sss_v = sss(pred, truth, load_grade_map(mp), scoring);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kDegenerate) throw;
        }
      } else {
        missing_maps[i] = mp.string();
      }
    }
    double acc = 0.0;
    std::size_t scored = 0;
    for (const Scanpath& g : truth) {
      try {
        acc += tok_sim_scan(pred, g, corpus.features(), aligned).overall;
        ++scored;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerate) throw;
      }
    }
    if (scored) tok_v = acc / static_cast<double>(scored);
    rows[i] = std::vector<std::optional<double>>{nss_v, auc_v, sss_v, tok_v};
  });

  Report report;
  report.columns = {"nss", "auc", "sss", "toksim_scan"};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!missing_maps[i].empty()) warn("grade map " + missing_maps[i] + " not found; SSS left empty");
    if (!rows[i]) {
      warn("prediction " + std::to_string(i) + " on " + preds[i].wsi_id + " has no ground truth; skipped");
      continue;
    }
    report.add(preds[i].wsi_id + "/" + preds[i].reader_id, *rows[i]);
  }
  if (report.rows.empty()) fail(ErrorKind::kInvalidInput, "no predictions could be evaluated");
  write_report(o.report, report, run.meta());
  out << "evaluated " << report.rows.size() << " predicted scanpaths; report " << o.report << '\n';
  return kExitOk;
}

struct StatsOpts {
  std::string scanpaths, out;
};

int cmd_stats_mag(const StatsOpts& o, std::ostream& out) {
  Run run{"stats-mag", {}};
  run.args["scanpaths"] = o.scanpaths;
  const std::vector<Scanpath> sps = read_scanpaths(fs::path(o.scanpaths));
  const TransitionStats stats = estimate_transition_matrix(sps);
  write_file(o.out, csv_preamble(run.meta()) + transition_stats_csv(stats));
  out << "counted " << stats.total << " transitions over " << sps.size() << " scanpaths; "
      << o.out << '\n';
  return kExitOk;
}

struct RenderOpts {
  std::string scanpath, grades, out;
  std::size_t index = 0;
  double width = 640.0;
};

int cmd_render(const RenderOpts& o, std::ostream& out) {
  Run run{"render", {}};
  run.args["scanpath"] = o.scanpath;
  run.args["grades"] = o.grades;
  run.args["index"] = o.index;
  run.args["width"] = o.width;
  const std::vector<Scanpath> sps = read_scanpaths(fs::path(o.scanpath));
  if (o.index >= sps.size()) {
    fail(ErrorKind::kInvalidInput, "--index " + std::to_string(o.index) + " but the file holds " +
                                       std::to_string(sps.size()) + " scanpaths");
  }
  write_file(o.out, render_svg(sps[o.index], load_grade_map(o.grades), run.meta(), o.width));
  out << "rendered " << sps[o.index].fixations.size() << " fixations to " << o.out << '\n';
  return kExitOk;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kInvalidConfig: return kExitUsage;
    case ErrorKind::kNumeric: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Viewport scanpath simplification, prediction and evaluation for whole-slide images",
               "pathscan"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");
  std::function<int()> action;

  SimplifyOpts so;
  auto* simplify_cmd = app.add_subcommand("simplify", "Simplify raw viewport trajectories into scanpaths");
  simplify_cmd->add_option("--in", so.in, "Trajectory JSONL")->required();
  simplify_cmd->add_option("--params", so.params, "Config file with a [simplify] section");
  simplify_cmd->add_option("--out", so.out, "Scanpath JSONL")->required();
  simplify_cmd->add_option("--corpus", so.corpus, "Corpus giving slide widths");
  simplify_cmd->callback([&] { action = [&] { return cmd_simplify(so, out); }; });

  GenOpts go;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen_cmd->add_option("--out", go.out, "Output directory")->required();
  gen_cmd->add_option("--config", go.config, "Config file");
  gen_cmd->add_option("--seed", go.seed, "Random seed");
  gen_cmd->add_option("--wsis", go.wsis, "Number of slides")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--readers", go.readers, "Readers per slide")->check(CLI::PositiveNumber);
  gen_cmd->add_flag("--force", go.force, "Overwrite a non-empty output directory");
  gen_cmd->callback([&] { action = [&] { return cmd_gen(go, out); }; });

  TrainOpts ho;
  auto* th_cmd = app.add_subcommand("train-heatmap", "Train a stage-1 heatmap model at one magnification");
  th_cmd->add_option("--corpus", ho.corpus, "Corpus directory")->required();
  th_cmd->add_option("--config", ho.config, "Config file");
  th_cmd->add_option("--out", ho.out, "Checkpoint path")->required();
  th_cmd->add_option("--log", ho.log, "Loss CSV (default <out>.loss.csv)");
  th_cmd->add_option("--scanpaths", ho.scanpaths, "Training scanpaths (default from corpus)");
  th_cmd->add_option("--mag", ho.mag, "Magnification factor (default 10)");
  th_cmd->add_option("--seed", ho.seed, "Random seed");
  th_cmd->callback([&] { action = [&] { return cmd_train_heatmap(ho, out); }; });

  TrainOpts to;
  auto* ts_cmd = app.add_subcommand("train-scanpath", "Train the stage-2 scanpath model");
  ts_cmd->add_option("--corpus", to.corpus, "Corpus directory")->required();
  ts_cmd->add_option("--config", to.config, "Config file");
  ts_cmd->add_option("--out", to.out, "Checkpoint path")->required();
  ts_cmd->add_option("--log", to.log, "Loss CSV (default <out>.loss.csv)");
  ts_cmd->add_option("--scanpaths", to.scanpaths, "Training scanpaths (default from corpus)");
  ts_cmd->add_option("--heatmap-2x", to.h2x, "Stage-1 checkpoint encoding the 2X tokens");
  ts_cmd->add_option("--heatmap-10x", to.h10x, "Stage-1 checkpoint encoding the 10X tokens");
  ts_cmd->add_option("--seed", to.seed, "Random seed");
  ts_cmd->callback([&] { action = [&] { return cmd_train_scanpath(to, out); }; });

  PredictOpts po;
  auto* pr_cmd = app.add_subcommand("predict", "Roll out scanpaths on slides");
  pr_cmd->add_option("--ckpt", po.ckpt, "Stage-2 checkpoint");
  pr_cmd->add_option("--corpus", po.corpus, "Corpus directory")->required();
  pr_cmd->add_option("--wsi", po.wsi, "Slide ids (default: test split)");
  pr_cmd->add_option("--mode", po.mode, "probmag, priormag, random1 or random2")
      ->check(CLI::IsMember({"probmag", "priormag", "random1", "random2"}));
  pr_cmd->add_option("--n", po.n, "Fixations per scanpath, or auto");
  pr_cmd->add_option("--samples", po.samples, "Rollouts per slide");
  pr_cmd->add_option("--seed", po.seed, "Random seed");
  pr_cmd->add_option("--config", po.config, "Config file ([rollout] section)");
  pr_cmd->add_option("--scanpaths", po.scanpaths, "Training scanpaths for random2 and --n auto");
  pr_cmd->add_option("--heatmap-2x", po.h2x, "Override the 2X encoder");
  pr_cmd->add_option("--heatmap-10x", po.h10x, "Override the 10X encoder");
  pr_cmd->add_option("--out", po.out, "Output scanpath JSONL")->required();
  pr_cmd->add_option("--jobs", po.jobs, "Worker threads")->check(CLI::PositiveNumber);
  pr_cmd->callback([&] { action = [&] { return cmd_predict(po, out); }; });

  EvalNextOpts eo;
  auto* en_cmd = app.add_subcommand("eval-next", "Score next-fixation predictions over ground-truth prefixes");
  en_cmd->add_option("--ckpt", eo.ckpt, "Stage-2 checkpoint");
  en_cmd->add_option("--corpus", eo.corpus, "Corpus directory")->required();
  en_cmd->add_option("--wsi", eo.wsi, "Slide ids (default: test split)");
  en_cmd->add_option("--gt", eo.gt, "Ground-truth scanpaths (default from corpus)");
  en_cmd->add_option("--method", eo.method, "pat, random1 or random2");
  en_cmd->add_option("--seed", eo.seed, "Random seed");
  en_cmd->add_option("--config", eo.config, "Config file");
  en_cmd->add_option("--heatmap-2x", eo.h2x, "Override the 2X encoder");
  en_cmd->add_option("--heatmap-10x", eo.h10x, "Override the 10X encoder");
  en_cmd->add_option("--report", eo.report, "Report path (.csv or .json)")->required();
  en_cmd->add_option("--jobs", eo.jobs, "Worker threads")->check(CLI::PositiveNumber);
  en_cmd->callback([&] { action = [&] { return cmd_eval_next(eo, out); }; });

  EvalScanOpts sco;
  auto* es_cmd = app.add_subcommand("eval-scanpath", "Score predicted scanpaths against ground truth");
  es_cmd->add_option("--pred", sco.pred, "Predicted scanpath JSONL")->required();
  es_cmd->add_option("--gt", sco.gt, "Ground-truth scanpaths (default from corpus)");
  es_cmd->add_option("--corpus", sco.corpus, "Corpus directory")->required();
  es_cmd->add_option("--grades", sco.grades, "Directory of <wsi>.txt grade maps for SSS");
  es_cmd->add_option("--config", sco.config, "Config file ([eval] section)");
  es_cmd->add_option("--seed", sco.seed, "Random seed");
  es_cmd->add_option("--report", sco.report, "Report path (.csv or .json)")->required();
  es_cmd->add_option("--jobs", sco.jobs, "Worker threads")->check(CLI::PositiveNumber);
  es_cmd->callback([&] { action = [&] { return cmd_eval_scanpath(sco, out); }; });

  StatsOpts sto;
  auto* sm_cmd = app.add_subcommand("stats-mag", "Magnification transition statistics");
  sm_cmd->add_option("--scanpaths", sto.scanpaths, "Scanpath JSONL")->required();
  sm_cmd->add_option("--out", sto.out, "CSV path")->required();
  sm_cmd->callback([&] { action = [&] { return cmd_stats_mag(sto, out); }; });

  RenderOpts ro;
  auto* rd_cmd = app.add_subcommand("render", "Draw a scanpath over its grade map as SVG");
  rd_cmd->add_option("--scanpath", ro.scanpath, "Scanpath JSONL")->required();
  rd_cmd->add_option("--index", ro.index, "Which scanpath in the file");
  rd_cmd->add_option("--grades", ro.grades, "Grade map .txt")->required();
  rd_cmd->add_option("--width", ro.width, "Image width in pixels")->check(CLI::PositiveNumber);
  rd_cmd->add_option("--out", ro.out, "SVG path")->required();
  rd_cmd->callback([&] { action = [&] { return cmd_render(ro, out); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  struct WarningScope {
    explicit WarningScope(bool quiet) : quiet_(quiet) {
      if (quiet_) set_warnings_enabled(false);
    }
    ~WarningScope() {
      if (quiet_) set_warnings_enabled(true);
    }
    bool quiet_;
  } scope(quiet);
  try {
    return action();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace pathscan
