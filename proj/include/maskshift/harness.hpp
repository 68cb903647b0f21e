// Experiment orchestration: configuration (flags + flat key=value config
// files), the train-level x test-level sweep pipeline, the four-arm
// decorrelation ablation, and deterministic CSV result tables.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "maskshift/decorrelation.hpp"
#include "maskshift/linalg.hpp"
#include "maskshift/mask.hpp"
#include "maskshift/oracle.hpp"
#include "maskshift/predictor.hpp"
#include "maskshift/rng.hpp"
#include "maskshift/synthetic.hpp"

namespace maskshift {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  FeatureKind feature = FeatureKind::GaussianGeneral;
  MaskPattern train_pattern = MaskPattern::McarInd;
  MaskPattern test_pattern = MaskPattern::McarInd;
  std::size_t dim = 50;
  std::size_t train_n = 16384;
  std::size_t test_n = 16384;
  double train_level = 0.5;
  std::vector<double> test_levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  DecorrMode mode = DecorrMode::Full;
  double gamma = 1.0;
  std::size_t q = 5;
  HeadKind head = HeadKind::LinearHead;
  std::size_t depth = 2;
  std::size_t width = 256;
  int epochs = 1000;
  int batch_size = 64;
  double lr = 0.001;
  double weight_lr = 0.01;
  int weight_iters = 500;
  double snr = 10.0;
  std::uint64_t seed = 1;
  int seeds = 1;
  std::string out = "results.csv";
  bool ablation = false;
  bool record_timing = true;
  int threads = 1;
  std::string dump_weights;
  std::string save_model;
  std::string loss_trace;

  bool operator==(const ExperimentConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Config parsing: flat key=value files with '#' comments; command-line flags
// use the same keys and override file values; unknown keys are rejected.

namespace cfgdetail {

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw UsageError("invalid numeric value for '" + key + "': " + v);
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw UsageError("invalid integer value for '" + key + "': " + v);
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw UsageError("invalid boolean value for '" + key + "': " + v);
}

inline FeatureKind parse_feature(const std::string& v) {
  if (v == "gaussian") return FeatureKind::GaussianGeneral;
  if (v == "gaussian-ind") return FeatureKind::GaussianInd;
  if (v == "gaussian-mix") return FeatureKind::GaussianMix;
  throw UsageError("feature must be gaussian|gaussian-ind|gaussian-mix, got " + v);
}

inline std::string feature_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::GaussianGeneral: return "gaussian";
    case FeatureKind::GaussianInd: return "gaussian-ind";
    case FeatureKind::GaussianMix: return "gaussian-mix";
  }
  return "gaussian";
}

inline MaskPattern parse_pattern(const std::string& v) {
  if (v == "mcar-ind") return MaskPattern::McarInd;
  if (v == "mcar") return MaskPattern::McarWindow;
  if (v == "mar") return MaskPattern::Mar;
  throw UsageError("pattern must be mcar-ind|mcar|mar, got " + v);
}

inline std::string pattern_name(MaskPattern p) {
  switch (p) {
    case MaskPattern::McarInd: return "mcar-ind";
    case MaskPattern::McarWindow: return "mcar";
    case MaskPattern::Mar: return "mar";
  }
  return "mcar-ind";
}

inline DecorrMode parse_mode(const std::string& v) {
  if (v == "full") return DecorrMode::Full;
  if (v == "intra") return DecorrMode::IntraOnly;
  if (v == "inter") return DecorrMode::InterOnly;
  if (v == "none") return DecorrMode::None;
  throw UsageError("mode must be full|intra|inter|none, got " + v);
}

inline std::string mode_name(DecorrMode m) {
  switch (m) {
    case DecorrMode::Full: return "full";
    case DecorrMode::IntraOnly: return "intra";
    case DecorrMode::InterOnly: return "inter";
    case DecorrMode::None: return "none";
  }
  return "full";
}

inline HeadKind parse_head(const std::string& v) {
  if (v == "linear") return HeadKind::LinearHead;
  if (v == "quadratic") return HeadKind::QuadraticTheta;
  throw UsageError("head must be linear|quadratic, got " + v);
}

inline std::vector<double> parse_levels(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw UsageError("empty entry in '" + key + "' list");
    out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw UsageError("'" + key + "' list is empty");
  return out;
}

inline std::string levels_to_string(const std::vector<double>& levels) {
  std::string s;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i) s += ',';
    s += format_double(levels[i]);
  }
  return s;
}

struct OptionSpec {
  std::string name;
  bool is_flag;  // bare --name allowed on the command line (boolean)
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<OptionSpec>& option_table() {
  using C = ExperimentConfig;
  static const std::vector<OptionSpec> table = {
      {"feature", false,
       [](C& c, const std::string& v) { c.feature = parse_feature(v); },
       [](const C& c) { return feature_name(c.feature); }},
      {"pattern", false,
       [](C& c, const std::string& v) {
         c.train_pattern = c.test_pattern = parse_pattern(v);
       },
       nullptr},  // convenience setter; train/test pattern serialize separately
      {"train-pattern", false,
       [](C& c, const std::string& v) { c.train_pattern = parse_pattern(v); },
       [](const C& c) { return pattern_name(c.train_pattern); }},
      {"test-pattern", false,
       [](C& c, const std::string& v) { c.test_pattern = parse_pattern(v); },
       [](const C& c) { return pattern_name(c.test_pattern); }},
      {"dim", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("dim", v);
         if (x < 1) throw UsageError("dim must be >= 1");
         c.dim = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.dim); }},
      {"train-n", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("train-n", v);
         if (x < 1) throw UsageError("train-n must be >= 1");
         c.train_n = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.train_n); }},
      {"test-n", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("test-n", v);
         if (x < 1) throw UsageError("test-n must be >= 1");
         c.test_n = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.test_n); }},
      {"train-level", false,
       [](C& c, const std::string& v) { c.train_level = parse_double("train-level", v); },
       [](const C& c) { return format_double(c.train_level); }},
      {"test-levels", false,
       [](C& c, const std::string& v) { c.test_levels = parse_levels("test-levels", v); },
       [](const C& c) { return levels_to_string(c.test_levels); }},
      {"mode", false, [](C& c, const std::string& v) { c.mode = parse_mode(v); },
       [](const C& c) { return mode_name(c.mode); }},
      {"gamma", false,
       [](C& c, const std::string& v) {
         c.gamma = parse_double("gamma", v);
         if (!(c.gamma >= 0.0)) throw UsageError("gamma must be >= 0");
       },
       [](const C& c) { return format_double(c.gamma); }},
      {"q", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("q", v);
         if (x < 1) throw UsageError("q must be >= 1");
         c.q = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.q); }},
      {"head", false, [](C& c, const std::string& v) { c.head = parse_head(v); },
       [](const C& c) {
         return std::string(c.head == HeadKind::LinearHead ? "linear" : "quadratic");
       }},
      {"depth", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("depth", v);
         if (x < 1) throw UsageError("depth must be >= 1");
         c.depth = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.depth); }},
      {"width", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("width", v);
         if (x < 1) throw UsageError("width must be >= 1");
         c.width = static_cast<std::size_t>(x);
       },
       [](const C& c) { return std::to_string(c.width); }},
      {"epochs", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("epochs", v);
         if (x < 0) throw UsageError("epochs must be >= 0");
         c.epochs = static_cast<int>(x);
       },
       [](const C& c) { return std::to_string(c.epochs); }},
      {"batch-size", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("batch-size", v);
         if (x < 1) throw UsageError("batch-size must be >= 1");
         c.batch_size = static_cast<int>(x);
       },
       [](const C& c) { return std::to_string(c.batch_size); }},
      {"lr", false,
       [](C& c, const std::string& v) {
         c.lr = parse_double("lr", v);
         if (!(c.lr >= 0.0)) throw UsageError("lr must be >= 0");
       },
       [](const C& c) { return format_double(c.lr); }},
      {"weight-lr", false,
       [](C& c, const std::string& v) {
         c.weight_lr = parse_double("weight-lr", v);
         if (!(c.weight_lr >= 0.0)) throw UsageError("weight-lr must be >= 0");
       },
       [](const C& c) { return format_double(c.weight_lr); }},
      {"weight-iters", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("weight-iters", v);
         if (x < 0) throw UsageError("weight-iters must be >= 0");
         c.weight_iters = static_cast<int>(x);
       },
       [](const C& c) { return std::to_string(c.weight_iters); }},
      {"snr", false,
       [](C& c, const std::string& v) {
         c.snr = parse_double("snr", v);
         if (!(c.snr > 0.0)) throw UsageError("snr must be > 0");
       },
       [](const C& c) { return format_double(c.snr); }},
      {"seed", false,
       [](C& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int("seed", v));
       },
       [](const C& c) { return std::to_string(c.seed); }},
      {"seeds", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("seeds", v);
         if (x < 1) throw UsageError("seeds must be >= 1");
         c.seeds = static_cast<int>(x);
       },
       [](const C& c) { return std::to_string(c.seeds); }},
      {"out", false, [](C& c, const std::string& v) { c.out = v; },
       [](const C& c) { return c.out; }},
      {"ablation", true,
       [](C& c, const std::string& v) { c.ablation = parse_bool("ablation", v); },
       [](const C& c) { return std::string(c.ablation ? "1" : "0"); }},
      {"record-timing", true,
       [](C& c, const std::string& v) { c.record_timing = parse_bool("record-timing", v); },
       [](const C& c) { return std::string(c.record_timing ? "1" : "0"); }},
      {"threads", false,
       [](C& c, const std::string& v) {
         const long long x = parse_int("threads", v);
         if (x < 1) throw UsageError("threads must be >= 1");
         c.threads = static_cast<int>(x);
       },
       [](const C& c) { return std::to_string(c.threads); }},
      {"dump-weights", false, [](C& c, const std::string& v) { c.dump_weights = v; },
       [](const C& c) { return c.dump_weights; }},
      {"save-model", false, [](C& c, const std::string& v) { c.save_model = v; },
       [](const C& c) { return c.save_model; }},
      {"loss-trace", false, [](C& c, const std::string& v) { c.loss_trace = v; },
       [](const C& c) { return c.loss_trace; }},
  };
  return table;
}

inline const OptionSpec* find_option(const std::string& name) {
  for (const auto& opt : option_table())
    if (opt.name == name) return &opt;
  return nullptr;
}

inline void validate(const ExperimentConfig& c) {
  try {
    level_index(c.train_level);
    for (double l : c.test_levels) level_index(l);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if ((c.train_pattern == MaskPattern::Mar || c.test_pattern == MaskPattern::Mar) &&
      c.dim < 10)
    throw UsageError("MAR pattern needs dim >= 10 for a nonempty anchor set");
}

}  // namespace cfgdetail

// Applies the key=value lines of a config file (no flag overrides).
inline void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto* opt = cfgdetail::find_option(key);
    if (!opt) throw UsageError("unknown config key '" + key + "'");
    opt->set(cfg, value);
  }
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& opt : cfgdetail::option_table()) {
    if (!opt.get) continue;
    out += opt.name;
    out += '=';
    out += opt.get(cfg);
    out += '\n';
  }
  return out;
}

// Flags are --key value or --key=value; boolean flags may appear bare.
// A --config FILE is applied first so that flags override file values.
inline ExperimentConfig parse_config(const std::vector<std::string>& args) {
  ExperimentConfig cfg;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> flag_values;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    std::string value;
    bool has_value = false;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
      has_value = true;
    }
    if (key == "config") {
      if (!has_value) {
        if (++i >= args.size()) throw UsageError("--config needs a file path");
        value = args[i];
      }
      if (!config_path.empty()) throw UsageError("--config given twice");
      config_path = value;
      continue;
    }
    const auto* opt = cfgdetail::find_option(key);
    if (!opt) throw UsageError("unknown flag '--" + key + "'");
    if (!has_value) {
      if (opt->is_flag) {
        value = "1";
      } else {
        if (++i >= args.size()) throw UsageError("flag '--" + key + "' needs a value");
        value = args[i];
      }
    }
    flag_values.emplace_back(key, value);
  }
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot open config file '" + config_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str());
  }
  for (const auto& [key, value] : flag_values)
    cfgdetail::find_option(key)->set(cfg, value);
  cfgdetail::validate(cfg);
  return cfg;
}

inline std::string usage_text() {
  std::string s = "usage: maskshift [--config FILE] [--key value ...]\n\nkeys:\n";
  for (const auto& opt : cfgdetail::option_table())
    s += "  --" + opt.name + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Results.

struct ResultRow {
  std::string mode;
  double train_level = 0.0;
  double test_level = 0.0;
  double rmse = 0.0;
  double optimal_rmse = 0.0;
  double gap = 0.0;
  std::uint64_t seed = 0;
  long long wall_time_ms = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

inline double rmse(const Vector& predictions, const Vector& labels) {
  if (predictions.size() != labels.size()) throw DimensionError("rmse: length mismatch");
  if (predictions.empty()) throw DegenerateError("rmse: empty input");
  double sse = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - labels[i];
    sse += d * d;
  }
  return std::sqrt(sse / static_cast<double>(predictions.size()));
}

inline std::string results_to_csv(const ResultTable& table) {
  std::string out = "mode,train_level,test_level,rmse,optimal_rmse,gap,seed,wall_time_ms\n";
  for (const auto& r : table.rows) {
    out += r.mode;
    out += ',';
    out += format_double(r.train_level);
    out += ',';
    out += format_double(r.test_level);
    out += ',';
    out += format_double(r.rmse);
    out += ',';
    out += format_double(r.optimal_rmse);
    out += ',';
    out += format_double(r.gap);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += std::to_string(r.wall_time_ms);
    out += '\n';
  }
  return out;
}

inline void write_results(const ResultTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_results: cannot open " + path);
  out << results_to_csv(table);
}

// Human-readable table; '*' marks in-distribution rows (test == train level).
inline void print_table(const ResultTable& table, std::ostream& os) {
  os << "mode   train  test   rmse         optimal      gap          seed\n";
  char buf[160];
  for (const auto& r : table.rows) {
    std::string test_cell = format_double(r.test_level);
    if (r.test_level == r.train_level) test_cell += '*';
    std::snprintf(buf, sizeof(buf), "%-6s %-6g %-6s %-12.6g %-12.6g %-12.6g %llu\n",
                  r.mode.c_str(), r.train_level, test_cell.c_str(), r.rmse,
                  r.optimal_rmse, r.gap, static_cast<unsigned long long>(r.seed));
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Pipeline.

namespace harness_detail {

enum SeedPurpose : std::uint64_t {
  kFeatureSpec = 1,
  kLabelModel = 2,
  kTrainData = 3,
  kTrainMasks = 4,
  kTestData = 5,
  kTestMasks = 6,
  kMarModel = 7,
  kMarCalibration = 8,
  kRffBanks = 9,
  kPredictorInit = 10,
  kTrainLoop = 11,
};

struct Instance {
  FeatureSpec spec;
  LabelModel label;
  bool has_mar = false;
  MarModel mar;
  MaskedDataset train;
  RffBanks banks;
};

inline FeatureSpec build_spec(const ExperimentConfig& cfg, Rng& rng) {
  if (cfg.feature == FeatureKind::GaussianMix) return make_mixture_spec(cfg.dim, rng);
  return make_gaussian_spec(cfg.dim, cfg.feature, rng);
}

inline Instance build_instance(const ExperimentConfig& cfg, std::uint64_t eff_seed) {
  Instance inst;
  {
    Rng rng = derive_stream(eff_seed, kFeatureSpec);
    inst.spec = build_spec(cfg, rng);
  }
  {
    Rng rng = derive_stream(eff_seed, kLabelModel);
    inst.label = make_label_model(inst.spec, cfg.snr, rng);
  }
  inst.has_mar = cfg.train_pattern == MaskPattern::Mar ||
                 cfg.test_pattern == MaskPattern::Mar;
  if (inst.has_mar) {
    Rng model_rng = derive_stream(eff_seed, kMarModel);
    inst.mar = make_mar_model(cfg.dim, model_rng);
    Rng calib_rng = derive_stream(eff_seed, kMarCalibration);
    inst.mar = calibrate_mar_all(inst.mar, inst.spec, calib_rng);
  }
  {
    Rng data_rng = derive_stream(eff_seed, kTrainData);
    const CompleteDataset complete =
        sample_dataset(inst.spec, inst.label, cfg.train_n, data_rng);
    Rng mask_rng = derive_stream(eff_seed, kTrainMasks);
    inst.train = apply_masks(complete, cfg.train_pattern, cfg.train_level, mask_rng,
                             inst.has_mar ? &inst.mar : nullptr);
  }
  {
    Rng rng = derive_stream(eff_seed, kRffBanks);
    inst.banks = make_rff_banks(cfg.dim, cfg.q, rng);
  }
  return inst;
}

struct LevelEval {
  MaskedDataset test;
  double optimal_rmse = 0.0;
};

inline LevelEval build_level_eval(const ExperimentConfig& cfg, const Instance& inst,
                                  double level, std::size_t level_idx,
                                  std::uint64_t eff_seed) {
  LevelEval ev;
  Rng data_rng = derive_stream(eff_seed, kTestData, level_idx);
  const CompleteDataset complete =
      sample_dataset(inst.spec, inst.label, cfg.test_n, data_rng);
  Rng mask_rng = derive_stream(eff_seed, kTestMasks, level_idx);
  ev.test = apply_masks(complete, cfg.test_pattern, level, mask_rng,
                        inst.has_mar ? &inst.mar : nullptr);
  Vector opt(ev.test.size());
  Vector x(cfg.dim);
  Mask m(cfg.dim);
  for (std::size_t i = 0; i < ev.test.size(); ++i) {
    for (std::size_t k = 0; k < cfg.dim; ++k) {
      x[k] = ev.test.x(i, k);
      m[k] = ev.test.mask(i, k);
    }
    opt[i] = optimal_predict(inst.spec, inst.label, x, m);
  }
  ev.optimal_rmse = rmse(opt, ev.test.y);
  return ev;
}

inline double model_rmse(const PredictorModel& model, const MaskedDataset& test) {
  Vector pred(test.size());
  Vector x(test.dim());
  Mask m(test.dim());
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t k = 0; k < test.dim(); ++k) {
      x[k] = test.x(i, k);
      m[k] = test.mask(i, k);
    }
    pred[i] = predict(model, x, m);
  }
  return rmse(pred, test.y);
}

// Runs count tasks over a small pool; slot-indexed, so the output is
// independent of scheduling.
inline void run_tasks(std::size_t count, int threads,
                      const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

// FNV-1a over the byte representation; used to verify shared ablation data.
inline std::uint64_t dataset_checksum(const MaskedDataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  mix_bytes(d.x.data().data(), d.x.data().size() * sizeof(double));
  mix_bytes(d.m.data(), d.m.size());
  mix_bytes(d.y.data(), d.y.size() * sizeof(double));
  return h;
}

inline PredictorModel make_model(const ExperimentConfig& cfg, std::uint64_t eff_seed) {
  if (cfg.head == HeadKind::QuadraticTheta) return make_quadratic_model(cfg.dim);
  Rng rng = derive_stream(eff_seed, kPredictorInit);
  return make_linear_head_model(cfg.dim, cfg.depth, cfg.width, rng);
}

}  // namespace harness_detail

inline ResultTable run_modes(const ExperimentConfig& cfg,
                             const std::vector<DecorrMode>& modes) {
  using namespace harness_detail;
  using clock = std::chrono::steady_clock;
  ResultTable table;
  for (int sj = 0; sj < cfg.seeds; ++sj) {
    const std::uint64_t eff_seed = cfg.seed + static_cast<std::uint64_t>(sj);
    const Instance inst = build_instance(cfg, eff_seed);

    std::vector<LevelEval> evals(cfg.test_levels.size());
    run_tasks(evals.size(), cfg.threads, [&](std::size_t li) {
      evals[li] = build_level_eval(cfg, inst, cfg.test_levels[li], li, eff_seed);
    });

    for (DecorrMode mode : modes) {
      WeightVector weights =
          mode == DecorrMode::None || cfg.weight_iters == 0
              ? uniform_weights(inst.train.size())
              : optimize_weights(inst.train, mode, cfg.gamma,
                                 WeightOptConfig{cfg.weight_iters, cfg.weight_lr},
                                 inst.banks);
      PredictorModel model = make_model(cfg, eff_seed);
      Rng train_rng = derive_stream(eff_seed, kTrainLoop);
      const TrainResult train_result = train_predictor(
          model, inst.train, weights.w,
          TrainConfig{cfg.epochs, cfg.batch_size, cfg.lr}, train_rng);

      if (sj == 0 && modes.size() == 1) {
        if (!cfg.dump_weights.empty()) write_weights_csv(weights.w, cfg.dump_weights);
        if (!cfg.save_model.empty()) save_model(model, cfg.save_model);
        if (!cfg.loss_trace.empty())
          write_loss_trace_csv(train_result.epoch_loss, cfg.loss_trace);
      }

      std::vector<ResultRow> rows(cfg.test_levels.size());
      run_tasks(rows.size(), cfg.threads, [&](std::size_t li) {
        const auto start = clock::now();
        ResultRow& r = rows[li];
        r.mode = cfgdetail::mode_name(mode);
        r.train_level = cfg.train_level;
        r.test_level = cfg.test_levels[li];
        r.rmse = model_rmse(model, evals[li].test);
        r.optimal_rmse = evals[li].optimal_rmse;
        r.gap = r.rmse - r.optimal_rmse;
        r.seed = eff_seed;
        if (cfg.record_timing)
          r.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               clock::now() - start)
                               .count();
      });
      for (auto& r : rows) table.rows.push_back(std::move(r));
    }
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const ResultRow& a, const ResultRow& b) {
              if (a.mode != b.mode) return a.mode < b.mode;
              if (a.train_level != b.train_level) return a.train_level < b.train_level;
              if (a.test_level != b.test_level) return a.test_level < b.test_level;
              return a.seed < b.seed;
            });
  return table;
}

inline ResultTable run_experiment(const ExperimentConfig& cfg) {
  return run_modes(cfg, {cfg.mode});
}

// All four decorrelation arms on the same instance, seeds, and splits.
inline ResultTable run_ablation(const ExperimentConfig& cfg) {
  return run_modes(cfg, {DecorrMode::Full, DecorrMode::IntraOnly,
                         DecorrMode::InterOnly, DecorrMode::None});
}

}  // namespace maskshift
