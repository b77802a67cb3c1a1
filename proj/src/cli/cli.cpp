#include "moldgan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "moldgan/core.hpp"
#include "moldgan/dmd.hpp"
#include "moldgan/metrics.hpp"
#include "moldgan/nnet/train.hpp"
#include "moldgan/preprocess.hpp"
#include "moldgan/synth.hpp"

namespace fs = std::filesystem;

namespace moldgan::cli {

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::kInvalidArgument, "config line " + std::to_string(lineno) + ": expected key=value");
    cfg[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

std::string Manifest::text(const fs::path& base) const {
  std::string s = "# command=" + command + "\n";
  for (const auto& [k, v] : config) s += k + "=" + v + "\n";
  for (const auto& a : artifacts) {
    const auto bytes = read_file(a);
    s += "# artifact " + fs::relative(a, base).generic_string() + " fnv1a64=" + hex64(fnv1a64(bytes)) +
         " bytes=" + std::to_string(bytes.size()) + "\n";
  }
  return s;
}

void Manifest::write(const fs::path& path) const {
  write_text(path, text(fs::absolute(path).parent_path()));
}

namespace {

const char* const kCommands[] = {"basis", "preprocess", "synth", "train", "infer", "evaluate"};

std::string as_text(const std::string& v) { return v; }
std::string as_text(double v) { return format_double(v); }
std::string as_text(int v) { return std::to_string(v); }
std::string as_text(std::uint64_t v) { return std::to_string(v); }
std::string as_text(bool v) { return v ? "1" : "0"; }

/// Options of one subcommand, remembered so the manifest can list every effective value.
struct Command {
  CLI::App* app = nullptr;
  std::vector<std::pair<std::string, std::function<std::string()>>> keys;
  std::string config_path;
  std::string out;

  template <class T>
  CLI::Option* opt(const std::string& key, T& var, const std::string& help) {
    keys.emplace_back(key, [&var] { return as_text(var); });
    return app->add_option("--" + key, var, help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  Manifest manifest() const {
    Manifest m;
    m.command = app->get_name();
    for (const auto& [k, f] : keys) m.config.emplace_back(k, f());
    return m;
  }
};

void setup(Command& c, CLI::App& root, const std::string& name, const std::string& help, const std::string& out_default) {
  c.app = root.add_subcommand(name, help);
  c.app->set_help_flag("--help", "show this help");
  c.out = out_default;
  c.app->add_option("--config", c.config_path, "key=value file; command-line flags override it")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  c.app->add_option("--out", c.out, "output location")->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

struct PairFiles {
  std::string id;
  fs::path thermo;
  fs::path geom;
};

std::vector<fs::path> list_with_suffix(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (e.is_regular_file() && n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string part_id(const fs::path& p, const std::string& suffix) {
  std::string n = p.filename().string();
  n = n.substr(0, n.size() - suffix.size());
  if (n.rfind("pair_", 0) == 0) n = n.substr(5);
  return n;
}

std::vector<PairFiles> list_pairs(const fs::path& dir) {
  std::vector<PairFiles> pairs;
  for (const auto& t : list_with_suffix(dir, "_thermo.pgm")) {
    std::string n = t.filename().string();
    const fs::path g = dir / (n.substr(0, n.size() - 11) + "_geom.pgm");
    if (!fs::exists(g)) throw Error(ErrorCode::kFormat, "no geometry image for " + t.filename().string());
    pairs.push_back({part_id(t, "_thermo.pgm"), t, g});
  }
  if (pairs.empty()) throw Error(ErrorCode::kFormat, "no *_thermo.pgm / *_geom.pgm pairs in " + dir.string());
  return pairs;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

// ---------------------------------------------------------------------------

struct BasisArgs {
  int h = 64, w = 64, k = 50;
};

int cmd_basis(const Command& c, const BasisArgs& a, std::ostream& out) {
  if (a.k > a.h * a.w)
    throw Error(ErrorCode::kInvalidArgument, "k=" + std::to_string(a.k) + " exceeds h*w=" + std::to_string(a.h * a.w));
  const auto basis = dmd::build_basis(a.h, a.w, a.k);
  const fs::path path = c.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  dmd::save_basis(basis, path);
  auto m = c.manifest();
  m.artifacts.push_back(path);
  m.write(path.string() + ".manifest.txt");
  out << "basis " << a.h << "x" << a.w << " K=" << a.k << " -> " << path.string() << "\n";
  return kExitOk;
}

struct PreprocessArgs {
  std::string in;
  int crop_x = -1, crop_y = -1, crop_w = 71, crop_h = 71, size = 128;
  int levels = 3, window = 24, iters = 30, template_index = 0;
};

int cmd_preprocess(const Command& c, const PreprocessArgs& a, std::ostream& out) {
  auto files = list_with_suffix(a.in, ".pgm");
  const auto csvs = list_with_suffix(a.in, ".csv");
  files.insert(files.end(), csvs.begin(), csvs.end());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::kFormat, "no .pgm or .csv frames in " + a.in);
  if (a.template_index < 0 || static_cast<std::size_t>(a.template_index) >= files.size())
    throw Error(ErrorCode::kInvalidArgument, "template index out of range");
  std::vector<FloatField> fields;
  for (const auto& f : files) {
    if (f.extension() == ".pgm") {
      fields.push_back(to_field(load_pgm(f)));
    } else {
      const auto bytes = read_file(f);
      try {
        fields.push_back(preprocess::parse_field_csv(std::string(bytes.begin(), bytes.end())));
      } catch (const Error& e) {
        throw Error(e.code(), f.filename().string() + ": " + e.what());
      }
    }
  }
  preprocess::ChainOptions opt;
  opt.tracker = {a.levels, a.window, a.iters};
  opt.crop_x = a.crop_x;
  opt.crop_y = a.crop_y;
  opt.crop_w = a.crop_w;
  opt.crop_h = a.crop_h;
  opt.out_size = a.size;
  opt.template_index = static_cast<std::size_t>(a.template_index);
  const auto res = preprocess::run_chain(fields, opt);

  const fs::path dir = c.out;
  fs::create_directories(dir);
  auto m = c.manifest();
  std::string shifts = "file,dx,dy\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    const fs::path p = dir / (files[i].stem().string() + ".pgm");
    save_pgm(res.images[i], p);
    m.artifacts.push_back(p);
    shifts += files[i].filename().string() + "," + format_double(res.shifts[i].dx) + "," +
              format_double(res.shifts[i].dy) + "\n";
  }
  write_text(dir / "shifts.csv", shifts);
  m.artifacts.push_back(dir / "shifts.csv");
  m.write(dir / "manifest.txt");
  out << "preprocessed " << files.size() << " frames, range [" << format_double(res.stats.global_min) << ", "
      << format_double(res.stats.global_max) << "]\n";
  return kExitOk;
}

struct SynthArgs {
  synth::SynthConfig cfg;
  int basis_k = 50, n_train = 23, n_val = 14;
};

int cmd_synth(const Command& c, SynthArgs a, std::uint64_t seed, std::ostream& out) {
  a.cfg.seed = seed;
  if (a.basis_k < 3 || a.basis_k > a.cfg.grid * a.cfg.grid)
    throw Error(ErrorCode::kInvalidArgument, "basis-k must be in [3, grid*grid]");
  const auto basis = dmd::build_basis(a.cfg.grid, a.cfg.grid, a.basis_k);
  Rng rng(seed);
  const fs::path dir = c.out;
  const auto sum = synth::generate_dataset(a.cfg, basis, a.n_train, a.n_val, rng, dir);
  auto m = c.manifest();
  m.artifacts = sum.files;
  m.write(dir / "manifest.txt");
  out << "synthesized " << a.n_train << " train + " << a.n_val << " val pairs in " << dir.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  nnet::TrainConfig cfg;
  int base = 8, d_layers = 3, d_base = 8;
  bool augment = true;
  int max_iter = 0;
};

int cmd_train(const Command& c, TrainArgs a, std::uint64_t seed, std::ostream& out) {
  fs::path dir = a.data;
  if (fs::is_directory(dir / "train")) dir /= "train";
  std::vector<nnet::Pair> data;
  for (const auto& p : list_pairs(dir)) data.push_back({load_pgm(p.thermo), load_pgm(p.geom)});
  a.cfg.seed = seed;
  a.cfg.augment = a.augment;
  a.cfg.max_iterations = static_cast<std::uint64_t>(std::max(0, a.max_iter));
  a.cfg.unet = {data[0].thermo.width, a.base};
  a.cfg.patch = {a.d_layers, a.d_base};
  if (a.cfg.epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");

  const auto res = nnet::train(data, a.cfg);
  const fs::path odir = c.out;
  fs::create_directories(odir);
  nnet::save_checkpoint(res.checkpoint, odir / "checkpoint.p2pw");
  write_text(odir / "loss_curve.csv", nnet::loss_curve_csv(res.curve));
  auto m = c.manifest();
  m.artifacts = {odir / "checkpoint.p2pw", odir / "loss_curve.csv"};
  m.write(odir / "manifest.txt");
  const auto& last = res.curve.back();
  out << "trained " << res.iterations << " iterations; final loss_d=" << format_double(last.loss_d)
      << " loss_g_adv=" << format_double(last.loss_g_adv) << " l1=" << format_double(last.loss_g_l1) << "\n";
  return kExitOk;
}

struct InferArgs {
  std::string checkpoint, in;
};

int cmd_infer(const Command& c, const InferArgs& a, std::ostream& out) {
  const auto gen = nnet::generator_from_checkpoint(nnet::load_checkpoint(a.checkpoint));
  const auto files = list_with_suffix(a.in, "_thermo.pgm");
  if (files.empty()) throw Error(ErrorCode::kFormat, "no *_thermo.pgm inputs in " + a.in);
  const fs::path dir = c.out;
  fs::create_directories(dir);
  auto m = c.manifest();
  for (const auto& f : files) {
    const std::string n = f.filename().string();
    const fs::path p = dir / (n.substr(0, n.size() - 11) + "_geom.pgm");
    GrayImage g;
    try {
      g = nnet::infer(gen, load_pgm(f));
    } catch (const Error& e) {
      throw Error(e.code(), n + ": " + e.what());
    }
    save_pgm(g, p);
    m.artifacts.push_back(p);
  }
  m.write(dir / "manifest.txt");
  out << "inferred " << files.size() << " images into " << dir.string() << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string real_dir, gen_dir, basis, holdout, settings;
  int k = 50, glcm_levels = 64;
};

struct PartEval {
  std::string id;
  std::vector<double> image;     // cosine, correlation, psnr, ssim
  std::vector<double> spectrum;  // cosine, r^2
  dmd::ModalSpectrum real_spec, gen_spec;
  std::vector<std::pair<std::string, double>> real_feat, gen_feat;
};

double safe_metric(const std::function<double()>& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUndefinedMetric || e.code() == ErrorCode::kDegenerateRange)
      return std::numeric_limits<double>::quiet_NaN();
    throw;
  }
}

dmd::SpectrumSimilarity safe_spectrum(const dmd::ModalSpectrum& a, const dmd::ModalSpectrum& b) {
  try {
    return dmd::spectrum_similarity(a, b);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUndefinedMetric && e.code() != ErrorCode::kDegenerateRange) throw;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
}

std::set<std::string> held_out_ids(const EvaluateArgs& a) {
  std::set<std::string> ids;
  std::stringstream ss(a.holdout);
  for (std::string id; std::getline(ss, id, ',');)
    if (!id.empty()) ids.insert(id);
  if (!a.settings.empty()) {
    const auto bytes = read_file(a.settings);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    if (!std::getline(in, line) || line.rfind("part_id,", 0) != 0)
      throw Error(ErrorCode::kFormat, a.settings + ": expected a part_id header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto last = line.rfind(',');
      if (last == std::string::npos) throw Error(ErrorCode::kFormat, a.settings + ": malformed row '" + line + "'");
      if (line.substr(last + 1) == "1") ids.insert(line.substr(0, line.find(',')));
    }
  }
  return ids;
}

int cmd_evaluate(const Command& c, const EvaluateArgs& a, std::ostream& out) {
  const auto real = list_with_suffix(a.real_dir, "_geom.pgm");
  const auto gen = list_with_suffix(a.gen_dir, "_geom.pgm");
  std::set<std::string> rn, gn;
  for (const auto& p : real) rn.insert(p.filename().string());
  for (const auto& p : gen) gn.insert(p.filename().string());
  std::vector<std::string> unmatched;
  for (const auto& n : rn)
    if (!gn.count(n)) unmatched.push_back(n + " (missing in gen-dir)");
  for (const auto& n : gn)
    if (!rn.count(n)) unmatched.push_back(n + " (missing in real-dir)");
  if (!unmatched.empty()) throw Error(ErrorCode::kFormat, "unmatched files: " + join(unmatched, ", "));
  if (real.empty()) throw Error(ErrorCode::kFormat, "no *_geom.pgm files in " + a.real_dir);

  std::vector<std::pair<GrayImage, GrayImage>> images;
  for (const auto& p : real) {
    auto r = load_pgm(p);
    auto g = load_pgm(fs::path(a.gen_dir) / p.filename());
    if (r.width != g.width || r.height != g.height)
      throw Error(ErrorCode::kSizeMismatch, p.filename().string() + ": real and generated sizes differ");
    images.emplace_back(std::move(r), std::move(g));
  }
  const int H = images[0].first.height, W = images[0].first.width;
  const dmd::ModalBasis basis = a.basis.empty() ? dmd::build_basis(H, W, a.k) : dmd::load_basis(a.basis);
  if (basis.h != H || basis.w != W)
    throw Error(ErrorCode::kSizeMismatch, "basis grid " + std::to_string(basis.h) + "x" + std::to_string(basis.w) +
                                              " does not match images " + std::to_string(H) + "x" + std::to_string(W));

  std::vector<PartEval> parts(real.size());
  std::vector<std::string> errors(real.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < real.size(); ++i) {
    try {
      const auto& [r, g] = images[i];
      PartEval& e = parts[i];
      e.id = part_id(real[i], "_geom.pgm");
      if (r.width != W || r.height != H) throw Error(ErrorCode::kSizeMismatch, "image size differs from the first part");
      const auto cc = metrics::image_cosine_and_correlation(r, g);
      e.image = {cc.cosine, cc.correlation, metrics::psnr(r, g), safe_metric([&] { return metrics::ssim(r, g); })};
      e.real_spec = dmd::project(r, basis);
      e.gen_spec = dmd::project(g, basis);
      const auto s = safe_spectrum(e.gen_spec, e.real_spec);
      e.spectrum = {s.cosine, s.r_squared};
      e.real_feat = metrics::feature_vector(r, a.glcm_levels);
      e.gen_feat = metrics::feature_vector(g, a.glcm_levels);
    } catch (const std::exception& ex) {
      errors[i] = real[i].filename().string() + ": " + ex.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(ErrorCode::kFormat, e);

  const auto held = held_out_ids(a);
  std::vector<metrics::ReportRow> img_rows, spec_rows, img_held, spec_held;
  for (const auto& p : parts) {
    const bool h = held.count(p.id) > 0;
    (h ? img_held : img_rows).push_back({p.id, p.image});
    (h ? spec_held : spec_rows).push_back({p.id, p.spectrum});
  }

  const fs::path dir = c.out;
  fs::create_directories(dir);
  auto m = c.manifest();
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    m.artifacts.push_back(dir / name);
  };
  if (!img_rows.empty()) {
    emit("images_similarity.csv", metrics::aggregate_report(metrics::kImageColumns, img_rows).to_csv());
    const auto spec = metrics::aggregate_report(metrics::kSpectrumColumns, spec_rows);
    emit("spectrum_similarity.csv", spec.to_csv());
  }
  if (!img_held.empty()) {
    emit("images_similarity_heldout.csv", metrics::aggregate_report(metrics::kImageColumns, img_held).to_csv());
    emit("spectrum_similarity_heldout.csv", metrics::aggregate_report(metrics::kSpectrumColumns, spec_held).to_csv());
  }

  std::string pm = "part_id,mode_index,abs_error\n";
  for (const auto& p : parts) {
    const auto err = dmd::per_mode_error(p.gen_spec, p.real_spec);
    for (std::size_t k = 0; k < err.size(); ++k) pm += p.id + "," + std::to_string(k) + "," + format_double(err[k]) + "\n";
  }
  emit("per_mode_error.csv", pm);

  std::string feat = "part_id,feature_name,real,generated,abs_diff\n";
  for (const auto& p : parts)
    for (std::size_t f = 0; f < p.real_feat.size(); ++f) {
      const double r = p.real_feat[f].second, g = p.gen_feat[f].second;
      feat += p.id + "," + p.real_feat[f].first + "," + format_double(r) + "," + format_double(g) + "," +
              format_double(std::abs(r - g)) + "\n";
    }
  emit("features.csv", feat);

  std::string tests = "feature_name,parts,p_value\n";
  for (std::size_t f = 0; f < parts[0].real_feat.size(); ++f) {
    std::vector<double> x, y;
    for (const auto& p : parts)
      if (std::isfinite(p.real_feat[f].second) && std::isfinite(p.gen_feat[f].second)) {
        x.push_back(p.real_feat[f].second);
        y.push_back(p.gen_feat[f].second);
      }
    const double pv = x.size() >= 5 ? metrics::paired_test(x, y) : std::numeric_limits<double>::quiet_NaN();
    tests += parts[0].real_feat[f].first + "," + std::to_string(x.size()) + "," + format_double(pv) + "\n";
  }
  emit("feature_tests.csv", tests);

  // Matched against a cyclic shift by one part of the same set.
  std::vector<double> cos_matched, cos_shuffled;
  const std::size_t n = parts.size();
  for (std::size_t i = 0; i < n; ++i) {
    cos_matched.push_back(parts[i].spectrum[0]);
    if (n > 1) cos_shuffled.push_back(safe_spectrum(parts[i].gen_spec, parts[(i + 1) % n].real_spec).cosine);
  }
  auto finite_median = [](std::vector<double> v) {
    std::erase_if(v, [](double d) { return !std::isfinite(d); });
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : metrics::median(v);
  };
  std::string base = "pairing,median_spectrum_cosine\n";
  base += "matched," + format_double(finite_median(cos_matched)) + "\n";
  if (n > 1) base += "shuffled," + format_double(finite_median(cos_shuffled)) + "\n";
  emit("spectrum_baseline.csv", base);

  m.write(dir / "manifest.txt");
  out << "evaluated " << n << " parts (" << img_held.size() << " held out) into " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Thermography to geometry prediction and modal evaluation toolkit", "moldgan"};
  app.require_subcommand(1);

  Command basis;
  setup(basis, app, "basis", "build and cache a modal basis", "basis.dmdb");
  BasisArgs basis_args;
  std::uint64_t basis_seed = 0;
  basis.opt("seed", basis_seed, "recorded in the manifest; the basis draws no random numbers");
  basis.opt("h", basis_args.h, "grid height");
  basis.opt("w", basis_args.w, "grid width");
  basis.opt("k", basis_args.k, "number of modes");

  Command prep;
  setup(prep, app, "preprocess", "stabilize, normalize, crop and resample frames", "preprocessed");
  PreprocessArgs prep_args;
  std::uint64_t prep_seed = 0;
  prep.opt("in", prep_args.in, "directory of PGM or CSV frames")->required();
  prep.opt("seed", prep_seed, "recorded in the manifest; the chain draws no random numbers");
  prep.opt("crop-x", prep_args.crop_x, "crop left edge (-1 centres)");
  prep.opt("crop-y", prep_args.crop_y, "crop top edge (-1 centres)");
  prep.opt("crop-w", prep_args.crop_w, "crop width");
  prep.opt("crop-h", prep_args.crop_h, "crop height");
  prep.opt("size", prep_args.size, "output side length");
  prep.opt("levels", prep_args.levels, "tracker pyramid levels");
  prep.opt("window", prep_args.window, "tracker patch half-width");
  prep.opt("iters", prep_args.iters, "tracker iterations per level");
  prep.opt("template", prep_args.template_index, "index of the template frame in sorted order");

  Command syn;
  setup(syn, app, "synth", "generate a synthetic paired dataset", "synth");
  SynthArgs syn_args;
  std::uint64_t syn_seed = 0;
  syn.opt("seed", syn_seed, "random seed");
  syn.opt("grid", syn_args.cfg.grid, "image side length");
  syn.opt("k-active", syn_args.cfg.k_active, "modes carrying the deformation");
  syn.opt("coeff-lo", syn_args.cfg.coeff_lo, "lower coefficient bound");
  syn.opt("coeff-hi", syn_args.cfg.coeff_hi, "upper coefficient bound");
  syn.opt("blur", syn_args.cfg.thermal_blur_sigma, "thermal blur sigma in pixels");
  syn.opt("noise", syn_args.cfg.noise_std, "thermography noise std in levels");
  syn.opt("curvature", syn_args.cfg.curvature, "quadratic term of the geometry to temperature map");
  syn.opt("settings", syn_args.cfg.settings, "number of process settings");
  syn.opt("basis-k", syn_args.basis_k, "length of the truth spectra");
  syn.opt("n-train", syn_args.n_train, "training pairs");
  syn.opt("n-val", syn_args.n_val, "validation pairs");

  Command tr;
  setup(tr, app, "train", "train the generator and discriminator", "run");
  TrainArgs tr_args;
  std::uint64_t tr_seed = 0;
  tr.opt("data", tr_args.data, "dataset directory (uses its train/ subdirectory when present)")->required();
  tr.opt("seed", tr_seed, "random seed");
  tr.opt("epochs", tr_args.cfg.epochs, "training epochs");
  tr.opt("lr", tr_args.cfg.adam.lr, "Adam learning rate");
  tr.opt("beta1", tr_args.cfg.adam.beta1, "Adam beta1");
  tr.opt("beta2", tr_args.cfg.adam.beta2, "Adam beta2");
  tr.opt("lambda", tr_args.cfg.lambda_l1, "L1 weight");
  tr.opt("base", tr_args.base, "generator base channels");
  tr.opt("d-layers", tr_args.d_layers, "discriminator down layers");
  tr.opt("d-base", tr_args.d_base, "discriminator base channels");
  tr.opt("jitter", tr_args.cfg.jitter_scale, "jitter upscale factor");
  tr.opt("mirror", tr_args.cfg.mirror_prob, "mirror probability");
  tr.opt("augment", tr_args.augment, "random jitter and mirroring (0 or 1)");
  tr.opt("max-iter", tr_args.max_iter, "stop after this many iterations (0 = all epochs)");

  Command inf;
  setup(inf, app, "infer", "predict geometry images from thermography", "generated");
  InferArgs inf_args;
  std::uint64_t inf_seed = 0;
  inf.opt("checkpoint", inf_args.checkpoint, "trained checkpoint")->required();
  inf.opt("in", inf_args.in, "directory of *_thermo.pgm inputs")->required();
  inf.opt("seed", inf_seed, "recorded in the manifest; inference draws no random numbers");

  Command ev;
  setup(ev, app, "evaluate", "compare real and generated geometry images", "report");
  EvaluateArgs ev_args;
  std::uint64_t ev_seed = 0;
  ev.opt("real-dir", ev_args.real_dir, "directory of real *_geom.pgm images")->required();
  ev.opt("gen-dir", ev_args.gen_dir, "directory of generated *_geom.pgm images")->required();
  ev.opt("basis", ev_args.basis, "basis cache file (built from --k when omitted)");
  ev.opt("k", ev_args.k, "modes when building the basis");
  ev.opt("glcm-levels", ev_args.glcm_levels, "gray levels of the co-occurrence matrices");
  ev.opt("holdout", ev_args.holdout, "comma-separated part ids reported separately");
  ev.opt("settings", ev_args.settings, "settings.csv marking held-out parts");
  ev.opt("seed", ev_seed, "recorded in the manifest; evaluation draws no random numbers");

  std::vector<Command*> commands = {&basis, &prep, &syn, &tr, &inf, &ev};

  // Config file values go right after the subcommand so later flags win.
  std::vector<std::string> args = args_in;
  try {
    std::size_t sub = 0;
    for (std::size_t i = 1; i < args.size() && !sub; ++i)
      for (const char* name : kCommands)
        if (args[i] == name) sub = i;
    std::string config;
    for (std::size_t i = sub + 1; sub && i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
    }
    if (!config.empty()) {
      Command* cmd = nullptr;
      for (auto* c : commands)
        if (c->app->get_name() == args[sub]) cmd = c;
      std::map<std::string, std::string> kv;
      try {
        const auto bytes = read_file(config);
        kv = parse_config(std::string(bytes.begin(), bytes.end()));
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      std::vector<std::string> injected;
      for (const auto& [k, v] : kv) {
        if (k == "config" || cmd->app->get_option_no_throw("--" + k) == nullptr) {
          err << "error: unknown config key '" << k << "' for " << args[sub] << "\n";
          return kExitUsage;
        }
        injected.push_back("--" + k);
        injected.push_back(v);
      }
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, injected.begin(), injected.end());
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*basis.app) return cmd_basis(basis, basis_args, out);
    if (*prep.app) return cmd_preprocess(prep, prep_args, out);
    if (*syn.app) return cmd_synth(syn, syn_args, syn_seed, out);
    if (*tr.app) return cmd_train(tr, tr_args, tr_seed, out);
    if (*inf.app) return cmd_infer(inf, inf_args, out);
    if (*ev.app) return cmd_evaluate(ev, ev_args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidArgument ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace moldgan::cli
