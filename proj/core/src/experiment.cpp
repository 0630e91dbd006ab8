#include "prospr/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

template <class T>
bool parse_number(const std::string& text, T& out) {
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

bool parse_bool(const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") {
    out = true;
    return true;
  }
  if (text == "false" || text == "0" || text == "no" || text == "off") {
    out = false;
    return true;
  }
  return false;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

// Refuses to clobber earlier artifacts unless forced.
void claim_outputs(const fs::path& dir, std::initializer_list<const char*> names, bool force) {
  fs::create_directories(dir);
  for (const char* n : names) {
    if (fs::exists(dir / n) && !force) {
      throw ConfigError("'" + (dir / n).string() + "' already exists; pass --force to overwrite");
    }
  }
}

void check_mask_fits(const Mask& mask, const nn::Model& model) {
  const MaskSpec expected = nn::make_mask_spec(model, mask.spec.granularity);
  if (mask.spec == expected) return;
  for (std::size_t i = 0; i < std::max(expected.groups.size(), mask.spec.groups.size()); ++i) {
    if (i >= mask.spec.groups.size()) {
      throw ConfigError("mask does not fit model " + model.name + ": no entries for parameter " +
                        expected.groups[i].param);
    }
    if (i >= expected.groups.size()) {
      throw ConfigError("mask does not fit model " + model.name + ": unexpected parameter " +
                        mask.spec.groups[i].param);
    }
    const auto& got = mask.spec.groups[i];
    const auto& want = expected.groups[i];
    if (!(got == want)) {
      throw ConfigError("mask does not fit model " + model.name + ": parameter " + want.param + " expects shape " +
                        shape_str(want.param_shape) + ", mask has " + got.param + " " + shape_str(got.param_shape));
    }
  }
}

json layers_json(const pruning::LayerCollapseReport& rep) {
  json arr = json::array();
  for (const auto& l : rep.layers) {
    arr.push_back({{"param", l.param},
                   {"retained", l.retained},
                   {"total", l.total},
                   {"density", static_cast<double>(l.retained) / static_cast<double>(l.total)}});
  }
  return arr;
}

bool uses_meta_steps(pruning::Criterion c) {
  return c == pruning::Criterion::prospr || c == pruning::Criterion::prospr_first_order;
}

void append_result(const fs::path& csv, const std::vector<std::string>& row) {
  const auto& header = results_columns();
  const bool fresh = !fs::exists(csv) || fs::file_size(csv) == 0;
  if (!fresh) {
    std::ifstream in(csv);
    std::string first;
    std::getline(in, first);
    if (split_csv_line(first) != header) {
      throw ConfigError("'" + csv.string() + "' has a different header; refusing to append");
    }
  }
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv, std::ios::app);
  if (fresh) out << join(header, ",") << '\n';
  std::vector<std::string> fields;
  for (const auto& f : row) fields.push_back(csv_field(f));
  out << join(fields, ",") << '\n';
  if (!out) throw Error("append to '" + csv.string() + "' failed");
}

pruning::SaliencyReport score(const ExperimentConfig& cfg, const nn::Model& model, const nn::ModelState& state,
                              const Datasets& data) {
  const data::SamplerConfig sc{cfg.meta_batch_size, cfg.sampler, cfg.sampler_seed()};
  pruning::ProsprOptions opts;
  opts.steps = cfg.meta_steps;
  opts.meta_lr = cfg.meta_lr;
  opts.granularity = cfg.granularity;
  opts.allow_zero_steps = cfg.allow_zero_steps;
  switch (cfg.criterion) {
    case pruning::Criterion::prospr: {
      data::Sampler s(data.train, sc);
      return pruning::prospr_scores(model, state, s, opts);
    }
    case pruning::Criterion::prospr_first_order: {
      data::Sampler s(data.train, sc);
      return pruning::prospr_first_order_scores(model, state, s, opts);
    }
    case pruning::Criterion::snip: {
      data::Sampler s(data.train, sc);
      return pruning::snip_scores(model, state, s.next(), cfg.granularity);
    }
    case pruning::Criterion::magnitude:
      return pruning::magnitude_scores(model, state, cfg.granularity);
    case pruning::Criterion::random:
      return pruning::random_scores(model, cfg.granularity, cfg.random_seed());
  }
  throw ConfigError("unknown criterion");
}

nn::ModelState initial_state(const ExperimentConfig& cfg, const nn::Model& model) {
  return cfg.init_weights ? nn::load_params(model, *cfg.init_weights) : nn::init_params(model, cfg.init_seed());
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "?";
}

DatasetKind parse_dataset(const std::string& name) {
  if (name == "mnist") return DatasetKind::mnist;
  if (name == "cifar10") return DatasetKind::cifar10;
  if (name == "synthetic") return DatasetKind::synthetic;
  throw ConfigError("unknown dataset '" + name + "' (mnist|cifar10|synthetic)");
}

const std::vector<double>& sparsity_grid() {
  static const std::vector<double> grid{20.0, 36.0, 48.8, 59.0, 67.2, 73.8, 79.0, 83.2, 86.6,
                                        89.3, 91.4, 93.1, 94.5, 95.6, 96.5, 97.2, 97.7, 98.2};
  return grid;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  if (!(density > 0.0 && density <= 1.0)) problems.push_back("density must lie in (0, 1]");
  if (uses_meta_steps(criterion) && meta_steps == 0 && !allow_zero_steps) {
    problems.push_back("prune.meta_steps must be >= 1 for " + pruning::to_string(criterion));
  }
  if (!(meta_lr >= 0.0) || !std::isfinite(meta_lr)) problems.push_back("prune.meta_lr must be a finite value >= 0");
  if (meta_batch_size == 0) problems.push_back("prune.meta_batch_size must be positive");
  if (dataset != DatasetKind::synthetic && data_dir.empty()) {
    problems.push_back("data_dir is required for dataset " + to_string(dataset));
  }
  if (!(check_step > 0.0)) problems.push_back("check.step must be positive");
  if (!(check_tolerance > 0.0)) problems.push_back("check.tolerance must be positive");
  try {
    training().validate();
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  if (!problems.empty()) throw ConfigError("invalid configuration: " + join(problems, "; "));
}

train::TrainConfig ExperimentConfig::training() const {
  train::TrainConfig t = train;
  if (!lr_drops_explicit) t.lr_drop_epochs = train::TrainConfig::default_drops(t.epochs);
  t.seed = train_seed();
  return t;
}

std::uint64_t ExperimentConfig::init_seed() const { return Rng::mix(seed, 1); }
std::uint64_t ExperimentConfig::sampler_seed() const { return Rng::mix(seed, 2); }
std::uint64_t ExperimentConfig::random_seed() const { return Rng::mix(seed, 3); }
std::uint64_t ExperimentConfig::train_seed() const { return Rng::mix(seed, 4); }

Settings parse_settings(const std::string& text, const std::string& origin) {
  Settings out;
  std::istringstream in(text);
  std::string line, section;
  std::vector<std::string> problems;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find_first_of("#;");
    const std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    const std::string where = origin + ":" + std::to_string(no);
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) {
        problems.push_back(where + ": malformed section header '" + s + "'");
        continue;
      }
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value, got '" + s + "'");
      continue;
    }
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) {
      problems.push_back(where + ": empty key");
      continue;
    }
    out[section.empty() ? key : section + "." + key] = trim(s.substr(eq + 1));
  }
  if (!problems.empty()) throw ConfigError(join(problems, "; "));
  return out;
}

Settings read_settings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_settings(ss.str(), path.string());
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "model",           "dataset",          "data_dir",           "seed",
      "out",             "init_weights",     "criterion",          "sparsity",
      "density",         "granularity",      "prune.meta_steps",   "prune.meta_lr",
      "prune.meta_batch_size", "prune.sampler", "train.epochs",    "train.batch_size",
      "train.lr",        "train.lr_drops",   "train.lr_drop_factor", "train.weight_decay",
      "train.momentum",  "train.augment",    "synthetic.categories", "synthetic.per_category",
      "synthetic.dim",   "synthetic.separation", "synthetic.seed", "check.entries",
      "check.step",      "check.tolerance"};
  return keys;
}

ExperimentConfig apply_settings(ExperimentConfig cfg, const Settings& settings) {
  std::vector<std::string> unknown, bad;
  if (settings.count("sparsity") && settings.count("density")) bad.push_back("sparsity and density both given");

  for (const auto& [key, value] : settings) {
    auto number = [&](auto& target) {
      if (!parse_number(value, target)) bad.push_back(key + " = '" + value + "' is not a valid number");
    };
    auto flag = [&](bool& target) {
      if (!parse_bool(value, target)) bad.push_back(key + " = '" + value + "' is not a boolean");
    };
    auto choice = [&](auto parse) {
      try {
        parse();
      } catch (const ConfigError& e) {
        bad.push_back(key + ": " + e.what());
      }
    };
    if (key == "model") {
      cfg.model = value;
    } else if (key == "dataset") {
      choice([&] { cfg.dataset = parse_dataset(value); });
    } else if (key == "data_dir") {
      cfg.data_dir = value;
    } else if (key == "seed") {
      number(cfg.seed);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "init_weights") {
      if (value.empty()) {
        cfg.init_weights.reset();
      } else {
        cfg.init_weights = fs::path(value);
      }
    } else if (key == "criterion") {
      choice([&] { cfg.criterion = pruning::parse_criterion(value); });
    } else if (key == "sparsity") {
      double pct = 0.0;
      if (!parse_number(value, pct) || !(pct >= 0.0 && pct < 100.0)) {
        bad.push_back("sparsity = '" + value + "' must be a percentage in [0, 100)");
      } else {
        cfg.density = 1.0 - pct / 100.0;
      }
    } else if (key == "density") {
      number(cfg.density);
    } else if (key == "granularity") {
      choice([&] { cfg.granularity = parse_granularity(value); });
    } else if (key == "prune.meta_steps") {
      number(cfg.meta_steps);
    } else if (key == "prune.meta_lr") {
      number(cfg.meta_lr);
    } else if (key == "prune.meta_batch_size") {
      number(cfg.meta_batch_size);
    } else if (key == "prune.sampler") {
      choice([&] { cfg.sampler = data::parse_sampler_mode(value); });
    } else if (key == "train.epochs") {
      number(cfg.train.epochs);
    } else if (key == "train.batch_size") {
      number(cfg.train.batch_size);
    } else if (key == "train.lr") {
      number(cfg.train.lr0);
    } else if (key == "train.lr_drops") {
      if (value == "auto") {
        cfg.lr_drops_explicit = false;
        cfg.train.lr_drop_epochs.clear();
      } else {
        cfg.lr_drops_explicit = true;
        cfg.train.lr_drop_epochs.clear();
        if (value != "none") {
          std::stringstream ss(value);
          std::string tok;
          while (std::getline(ss, tok, ',')) {
            std::size_t e = 0;
            if (!parse_number(trim(tok), e)) {
              bad.push_back("train.lr_drops = '" + value + "' must be auto, none or a comma list of epochs");
              break;
            }
            cfg.train.lr_drop_epochs.push_back(e);
          }
        }
      }
    } else if (key == "train.lr_drop_factor") {
      number(cfg.train.lr_drop_factor);
    } else if (key == "train.weight_decay") {
      number(cfg.train.weight_decay);
    } else if (key == "train.momentum") {
      number(cfg.train.momentum);
    } else if (key == "train.augment") {
      flag(cfg.train.augment);
    } else if (key == "synthetic.categories") {
      number(cfg.synthetic.num_categories);
    } else if (key == "synthetic.per_category") {
      number(cfg.synthetic.per_category);
    } else if (key == "synthetic.dim") {
      number(cfg.synthetic.dim);
    } else if (key == "synthetic.separation") {
      number(cfg.synthetic.separation);
    } else if (key == "synthetic.seed") {
      number(cfg.synthetic.seed);
    } else if (key == "check.entries") {
      number(cfg.check_entries);
    } else if (key == "check.step") {
      number(cfg.check_step);
    } else if (key == "check.tolerance") {
      number(cfg.check_tolerance);
    } else {
      unknown.push_back(key);
    }
  }
  std::vector<std::string> problems;
  if (!unknown.empty()) problems.push_back("unknown keys: " + join(unknown, ", "));
  problems.insert(problems.end(), bad.begin(), bad.end());
  if (!problems.empty()) throw ConfigError(join(problems, "; "));
  return cfg;
}

Settings to_settings(const ExperimentConfig& cfg) {
  Settings s;
  s["model"] = cfg.model;
  s["dataset"] = to_string(cfg.dataset);
  s["data_dir"] = cfg.data_dir.string();
  s["seed"] = std::to_string(cfg.seed);
  s["out"] = cfg.out_dir.string();
  s["init_weights"] = cfg.init_weights ? cfg.init_weights->string() : "";
  s["criterion"] = pruning::to_string(cfg.criterion);
  s["density"] = fmt(cfg.density);
  s["granularity"] = to_string(cfg.granularity);
  s["prune.meta_steps"] = std::to_string(cfg.meta_steps);
  s["prune.meta_lr"] = fmt(cfg.meta_lr);
  s["prune.meta_batch_size"] = std::to_string(cfg.meta_batch_size);
  s["prune.sampler"] = data::to_string(cfg.sampler);
  s["train.epochs"] = std::to_string(cfg.train.epochs);
  s["train.batch_size"] = std::to_string(cfg.train.batch_size);
  s["train.lr"] = fmt(cfg.train.lr0);
  if (!cfg.lr_drops_explicit) {
    s["train.lr_drops"] = "auto";
  } else if (cfg.train.lr_drop_epochs.empty()) {
    s["train.lr_drops"] = "none";
  } else {
    std::vector<std::string> parts;
    for (auto e : cfg.train.lr_drop_epochs) parts.push_back(std::to_string(e));
    s["train.lr_drops"] = join(parts, ",");
  }
  s["train.lr_drop_factor"] = fmt(cfg.train.lr_drop_factor);
  s["train.weight_decay"] = fmt(cfg.train.weight_decay);
  s["train.momentum"] = fmt(cfg.train.momentum);
  s["train.augment"] = cfg.train.augment ? "true" : "false";
  s["synthetic.categories"] = std::to_string(cfg.synthetic.num_categories);
  s["synthetic.per_category"] = std::to_string(cfg.synthetic.per_category);
  s["synthetic.dim"] = std::to_string(cfg.synthetic.dim);
  s["synthetic.separation"] = fmt(cfg.synthetic.separation);
  s["synthetic.seed"] = std::to_string(cfg.synthetic.seed);
  s["check.entries"] = std::to_string(cfg.check_entries);
  s["check.step"] = fmt(cfg.check_step);
  s["check.tolerance"] = fmt(cfg.check_tolerance);
  return s;
}

std::string format_settings(const Settings& settings) {
  std::ostringstream os;
  std::string section;
  // Top-level keys first; a section header may not be followed by them.
  for (const auto& [key, value] : settings) {
    if (key.find('.') == std::string::npos) os << key << " = " << value << '\n';
  }
  for (const auto& [key, value] : settings) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
  return os.str();
}

Datasets load_datasets(const ExperimentConfig& cfg) {
  switch (cfg.dataset) {
    case DatasetKind::mnist:
      return {data::load_mnist(cfg.data_dir, data::Split::train), data::load_mnist(cfg.data_dir, data::Split::test)};
    case DatasetKind::cifar10:
      return {data::load_cifar10(cfg.data_dir, data::Split::train),
              data::load_cifar10(cfg.data_dir, data::Split::test)};
    case DatasetKind::synthetic:
      return {data::make_synthetic(cfg.synthetic, data::Split::train),
              data::make_synthetic(cfg.synthetic, data::Split::test)};
  }
  throw ConfigError("unknown dataset");
}

nn::Model build_model(const ExperimentConfig& cfg, const data::Dataset& train) {
  return nn::parse_model(cfg.model, train.sample_shape(), train.num_categories);
}

PruneOutcome cmd_prune(const ExperimentConfig& cfg, const Datasets& data, std::ostream& log) {
  cfg.validate();
  claim_outputs(cfg.out_dir, {"mask.prmask", "init.ckpt", "saliency.json"}, cfg.force);
  const nn::Model model = build_model(cfg, data.train);
  const nn::ModelState state = initial_state(cfg, model);

  PruneOutcome out;
  out.report = score(cfg, model, state, data);
  out.mask = pruning::top_k_mask(out.report, cfg.density);
  out.collapse = pruning::layer_collapse_report(out.mask, model);
  if (out.collapse.collapsed) {
    log << "warning: layer collapse, no weights retained in " << join(out.collapse.collapsed_layers, ", ") << '\n';
  }

  out.mask_path = cfg.out_dir / "mask.prmask";
  out.init_path = cfg.out_dir / "init.ckpt";
  out.report_path = cfg.out_dir / "saliency.json";
  save_mask(out.mask_path, out.mask);
  nn::save_checkpoint(out.init_path, state);
  io::Writer scores;
  for (double s : out.report.scores) scores.f64_le(s);
  io::write_file(cfg.out_dir / "scores.f64", scores.buffer());
  write_text(cfg.out_dir / "config.ini", format_settings(to_settings(cfg)));

  const auto& r = out.report;
  const json report{{"criterion", pruning::to_string(r.criterion)},
                    {"meta_steps", r.steps},
                    {"meta_lr", r.meta_lr},
                    {"granularity", to_string(r.spec.granularity)},
                    {"entries", r.spec.total_entries()},
                    {"retained", out.mask.retained()},
                    {"density", out.mask.density()},
                    {"requested_density", cfg.density},
                    {"batches_consumed", r.batches_consumed},
                    {"elapsed_seconds", r.elapsed_seconds},
                    {"normalizer", r.normalizer},
                    {"magnitude_fallback", r.magnitude_fallback},
                    {"collapse", out.collapse.collapsed},
                    {"collapsed_layers", out.collapse.collapsed_layers},
                    {"layers", layers_json(out.collapse)},
                    {"scores_file", "scores.f64"},
                    {"mask_file", "mask.prmask"},
                    {"init_file", "init.ckpt"},
                    {"created", now_iso()}};
  write_text(out.report_path, report.dump(2) + "\n");

  log << "pruned " << model.name << " with " << pruning::to_string(r.criterion);
  if (uses_meta_steps(r.criterion)) log << " (M=" << r.steps << ", meta-lr " << fmt(r.meta_lr) << ")";
  log << ": kept " << out.mask.retained() << " of " << r.spec.total_entries() << " entries (sparsity "
      << std::fixed << std::setprecision(2) << 100.0 * (1.0 - out.mask.density()) << "%) in " << std::setprecision(3)
      << r.elapsed_seconds << "s" << std::defaultfloat << '\n';
  return out;
}

RunRecord cmd_train(const ExperimentConfig& cfg, const Datasets& data, const fs::path& mask_path,
                    const fs::path& init_path, const fs::path& results_csv, std::ostream& log) {
  cfg.validate();
  if (!fs::exists(mask_path)) throw ConfigError("mask file '" + mask_path.string() + "' does not exist");
  if (!fs::exists(init_path)) throw ConfigError("initial weights '" + init_path.string() + "' do not exist");
  claim_outputs(cfg.out_dir, {"final.ckpt", "run.json"}, cfg.force);

  const nn::Model model = build_model(cfg, data.train);
  const Mask mask = load_mask(mask_path);
  check_mask_fits(mask, model);
  const nn::ModelState init = nn::load_params(model, init_path);

  RunRecord rec;
  rec.run_id = fs::absolute(cfg.out_dir).lexically_normal().filename().string();
  if (rec.run_id.empty()) rec.run_id = fs::absolute(cfg.out_dir).lexically_normal().parent_path().filename().string();
  rec.config = to_settings(cfg);
  rec.criterion = cfg.criterion;
  const fs::path saliency = mask_path.parent_path() / "saliency.json";
  if (fs::exists(saliency)) {
    std::ifstream in(saliency);
    const json s = json::parse(in, nullptr, false);
    if (!s.is_discarded()) {
      if (s.contains("elapsed_seconds")) rec.prune_seconds = s["elapsed_seconds"].get<double>();
      if (s.contains("criterion")) rec.criterion = pruning::parse_criterion(s["criterion"].get<std::string>());
      rec.artifacts["saliency"] = saliency;
    }
  }
  const auto collapse = pruning::layer_collapse_report(mask, model);
  rec.collapse = collapse.collapsed;
  rec.layers = collapse.layers;
  rec.density = mask.density();
  rec.started = now_iso();

  const auto tc = cfg.training();
  const auto result = train::train_pruned(model, init, mask, data.train, &data.test, tc,
                                          [&](const train::EpochRecord& e, const nn::ModelState&) {
                                            log << "epoch " << e.epoch + 1 << "/" << tc.epochs << "  lr "
                                                << fmt(e.lr) << "  loss " << std::setprecision(5) << e.train_loss
                                                << "  test acc " << std::setprecision(4) << e.test_accuracy
                                                << std::defaultfloat << '\n';
                                          });
  rec.metrics = result.metrics;
  rec.finished = now_iso();

  const fs::path final_ckpt = cfg.out_dir / "final.ckpt";
  const fs::path run_json = cfg.out_dir / "run.json";
  nn::save_checkpoint(final_ckpt, result.state);
  rec.artifacts["mask"] = mask_path;
  rec.artifacts["init"] = init_path;
  rec.artifacts["final_checkpoint"] = final_ckpt;
  rec.artifacts["results_csv"] = results_csv;

  const bool meta = uses_meta_steps(rec.criterion);
  const double final_loss = rec.metrics.epochs.empty() ? 0.0 : rec.metrics.epochs.back().train_loss;
  append_result(results_csv, {rec.run_id,
                              pruning::to_string(rec.criterion),
                              std::to_string(meta ? cfg.meta_steps : 0),
                              fmt(rec.density),
                              std::to_string(cfg.seed),
                              fmt(rec.metrics.final_accuracy),
                              fmt(rec.metrics.seconds),
                              rec.collapse ? "1" : "0",
                              fmt(100.0 * (1.0 - rec.density)),
                              to_string(mask.spec.granularity),
                              cfg.model,
                              to_string(cfg.dataset),
                              meta ? fmt(cfg.meta_lr) : "",
                              fmt(rec.prune_seconds.value_or(0.0)),
                              std::to_string(tc.epochs),
                              fmt(final_loss)});

  json epochs = json::array();
  for (const auto& e : rec.metrics.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"test_accuracy", e.test_accuracy}});
  }
  json artifacts = json::object();
  for (const auto& [k, p] : rec.artifacts) artifacts[k] = p.string();
  artifacts["run_record"] = run_json.string();
  json layers = json::array();
  for (const auto& l : rec.layers) {
    layers.push_back({{"param", l.param},
                      {"retained", l.retained},
                      {"total", l.total},
                      {"density", static_cast<double>(l.retained) / static_cast<double>(l.total)}});
  }
  const json record{{"run_id", rec.run_id},
                    {"config", rec.config},
                    {"criterion", pruning::to_string(rec.criterion)},
                    {"prune_seconds", rec.prune_seconds ? json(*rec.prune_seconds) : json(nullptr)},
                    {"collapse", rec.collapse},
                    {"density", rec.density},
                    {"layers", layers},
                    {"metrics",
                     {{"final_accuracy", rec.metrics.final_accuracy},
                      {"train_seconds", rec.metrics.seconds},
                      {"epochs", epochs}}},
                    {"started", rec.started},
                    {"finished", rec.finished},
                    {"artifacts", artifacts}};
  write_text(run_json, record.dump(2) + "\n");
  rec.artifacts["run_record"] = run_json;

  log << "final test accuracy " << std::setprecision(4) << rec.metrics.final_accuracy << std::defaultfloat
      << " after " << tc.epochs << " epochs (" << std::setprecision(3) << rec.metrics.seconds << "s)"
      << std::defaultfloat << '\n';
  return rec;
}

RunRecord cmd_run(const ExperimentConfig& cfg, const Datasets& data, const fs::path& results_csv,
                  std::ostream& log) {
  cfg.validate();
  // Check both phases' outputs up front so a refused run leaves nothing behind.
  claim_outputs(cfg.out_dir, {"mask.prmask", "init.ckpt", "saliency.json", "final.ckpt", "run.json"}, cfg.force);
  const auto pruned = cmd_prune(cfg, data, log);
  return cmd_train(cfg, data, pruned.mask_path, pruned.init_path, results_csv, log);
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "sparsity" || name == "sparsity-grid") return SweepAxis::sparsity;
  if (name == "M" || name == "meta-steps") return SweepAxis::meta_steps;
  if (name == "criterion") return SweepAxis::criterion;
  if (name == "seed") return SweepAxis::seed;
  throw ConfigError("unknown sweep axis '" + name + "' (sparsity-grid|M|criterion|seed)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::sparsity: return "sparsity";
    case SweepAxis::meta_steps: return "M";
    case SweepAxis::criterion: return "criterion";
    case SweepAxis::seed: return "seed";
  }
  return "?";
}

std::vector<std::string> default_axis_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::sparsity: {
      std::vector<std::string> v;
      for (double s : sparsity_grid()) v.push_back(fmt(s));
      return v;
    }
    case SweepAxis::meta_steps: return {"1", "2", "3"};
    case SweepAxis::criterion: return {"prospr", "prospr-fo", "snip", "magnitude", "random"};
    case SweepAxis::seed: return {"0", "1", "2", "3", "4"};
  }
  return {};
}

std::vector<RunRecord> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, std::vector<std::string> values,
                                 const Datasets& data, std::ostream& log) {
  if (values.empty()) values = default_axis_values(axis);
  const std::string key = axis == SweepAxis::sparsity     ? "sparsity"
                          : axis == SweepAxis::meta_steps ? "prune.meta_steps"
                          : axis == SweepAxis::criterion  ? "criterion"
                                                          : "seed";
  // Resolve every point before running any, so a typo fails fast.
  std::vector<ExperimentConfig> points;
  for (const auto& v : values) {
    ExperimentConfig p = apply_settings(cfg, {{key, v}});
    p.out_dir = cfg.out_dir / (to_string(axis) + "-" + v);
    p.validate();
    points.push_back(std::move(p));
  }
  const fs::path csv = cfg.out_dir / "results.csv";
  std::vector<RunRecord> records;
  for (std::size_t i = 0; i < points.size(); ++i) {
    log << "[" << i + 1 << "/" << points.size() << "] " << to_string(axis) << " = " << values[i] << '\n';
    records.push_back(cmd_run(points[i], data, csv, log));
  }

  std::ostringstream summary;
  summary << "criterion,M,density,granularity,runs,mean_acc,std_acc\n";
  for (const auto& row : summarize(csv)) {
    summary << row.criterion << ',' << row.meta_steps << ',' << row.density << ',' << row.granularity << ','
            << row.runs << ',' << fmt(row.mean_acc) << ',' << fmt(row.std_acc) << '\n';
  }
  write_text(cfg.out_dir / "summary.csv", summary.str());
  return records;
}

oracle::GradCheckReport cmd_check_grad(const ExperimentConfig& cfg, const Datasets& data, std::ostream& log) {
  cfg.validate();
  if (cfg.meta_steps == 0 && !cfg.allow_zero_steps) throw ConfigError("check-grad needs prune.meta_steps >= 1");
  const nn::Model model = build_model(cfg, data.train);
  const nn::ModelState state = initial_state(cfg, model);
  data::Sampler sampler(data.train, {cfg.meta_batch_size, cfg.sampler, cfg.sampler_seed()});
  std::vector<data::Batch> batches;
  for (std::size_t i = 0; i <= cfg.meta_steps; ++i) batches.push_back(sampler.next());
  const auto spec = nn::make_mask_spec(model, cfg.granularity);
  const auto problem = pruning::model_problem(model, state, spec, std::move(batches));

  const auto exact = pruning::unrolled_mask_gradient(problem, cfg.meta_steps, cfg.meta_lr);
  oracle::FdConfig fd;
  fd.step = cfg.check_step;
  fd.entries = cfg.check_entries;
  fd.seed = cfg.sampler_seed();
  const auto numeric = oracle::fd_meta_gradient(problem, cfg.meta_steps, cfg.meta_lr, fd);
  const auto rep = oracle::compare(exact, numeric, cfg.check_tolerance);

  log << "gradient check: " << model.name << ", M=" << cfg.meta_steps << ", meta-lr " << fmt(cfg.meta_lr)
      << ", batch " << sampler.batch_size() << ", h " << fmt(cfg.check_step) << ", " << rep.entries.size() << " of "
      << spec.total_entries() << " mask entries\n";
  auto worst = rep.entries;
  std::sort(worst.begin(), worst.end(), [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  worst.resize(std::min<std::size_t>(worst.size(), 5));
  for (const auto& e : worst) {
    log << "  entry " << e.entry << ": exact " << std::setprecision(10) << e.analytic << "  fd " << e.numeric
        << "  rel err " << std::setprecision(3) << e.rel_error << std::defaultfloat;
    if (e.step != cfg.check_step) log << "  (h " << fmt(e.step) << (e.kink ? ", kink not avoided" : "") << ")";
    log << '\n';
  }
  if (rep.refined > 0) {
    log << rep.refined << " entries used a smaller step because a ReLU flipped within the first one\n";
  }
  log << "max relative error " << std::setprecision(3) << rep.max_rel_error << ", median " << rep.median_rel_error
      << ", tolerance " << cfg.check_tolerance << std::defaultfloat << '\n';
  log << (rep.passed ? "PASS" : "FAIL") << '\n';
  return rep;
}

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols{
      "run_id",      "criterion", "M",     "density", "seed",    "final_acc",     "train_seconds", "collapse_flag",
      "sparsity",    "granularity", "model", "dataset", "meta_lr", "prune_seconds", "epochs",        "final_train_loss"};
  return cols;
}

std::vector<SummaryRow> summarize(const fs::path& results_csv) {
  std::ifstream in(results_csv);
  if (!in) throw ConfigError("cannot read '" + results_csv.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("'" + results_csv.string() + "' lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ic = col("criterion"), im = col("M"), id = col("density"), ig = col("granularity"),
                    ia = col("final_acc");
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> accs;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ConfigError("'" + results_csv.string() + "' has a malformed row");
    double acc = 0.0;
    if (!parse_number(f[ia], acc)) throw ConfigError("'" + results_csv.string() + "': bad final_acc " + f[ia]);
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) {
      return r.criterion == f[ic] && r.meta_steps == f[im] && r.density == f[id] && r.granularity == f[ig];
    });
    if (it == rows.end()) {
      rows.push_back({f[ic], f[im], f[id], f[ig]});
      accs.emplace_back();
      it = rows.end() - 1;
    }
    accs[static_cast<std::size_t>(it - rows.begin())].push_back(acc);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& a = accs[i];
    rows[i].runs = a.size();
    double mean = 0.0;
    for (double v : a) mean += v;
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    rows[i].mean_acc = mean;
    rows[i].std_acc = a.size() > 1 ? std::sqrt(var / static_cast<double>(a.size() - 1)) : 0.0;
  }
  return rows;
}

void cmd_report(const fs::path& dir, std::ostream& out) {
  const fs::path csv = fs::is_directory(dir) ? dir / "results.csv" : dir;
  const auto rows = summarize(csv);
  std::size_t runs = 0;
  for (const auto& r : rows) runs += r.runs;
  out << runs << " runs in " << csv.string() << "\n\n";
  out << std::left << std::setw(12) << "criterion" << std::setw(4) << "M" << std::setw(12) << "sparsity%"
      << std::setw(14) << "granularity" << std::setw(6) << "runs"
      << "accuracy (mean +- std)\n";
  for (const auto& r : rows) {
    double density = 0.0;
    parse_number(r.density, density);
    std::ostringstream sp;
    sp << std::fixed << std::setprecision(2) << 100.0 * (1.0 - density);
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << 100.0 * r.mean_acc << " +- " << 100.0 * r.std_acc;
    out << std::left << std::setw(12) << r.criterion << std::setw(4) << r.meta_steps << std::setw(12) << sp.str()
        << std::setw(14) << r.granularity << std::setw(6) << r.runs << acc.str() << '\n';
  }
}

}  // namespace prospr::cli
