#include "ldr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace ldr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("'" + v + "' is not a number");
  return out;
}

long long to_int(const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("'" + v + "' is not an integer");
  return out;
}

Index to_count(const std::string& v) {
  const long long n = to_int(v);
  if (n < 0) throw UsageError("'" + v + "' must be non-negative");
  return static_cast<Index>(n);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw UsageError("'" + v + "' is not a boolean");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

std::string join_counts(const std::vector<Index>& xs) {
  return join<Index>(xs, [](const Index& i) { return std::to_string(i); });
}

std::vector<Index> counts(const std::string& v) {
  std::vector<Index> out;
  for (const auto& s : split_list(v)) out.push_back(to_count(s));
  return out;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::filesystem::path resolve(const std::string& v, const std::filesystem::path& base) {
  if (v.empty()) return {};
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

#define LDR_FIELD(KEY, SET, GET)                                                                            \
  Field {                                                                                                   \
    KEY, [](ExperimentConfig & c, const std::string& v, const std::filesystem::path& base) { (void)base; SET; }, \
        [](const ExperimentConfig& c) -> std::string { return GET; }                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      LDR_FIELD("seed", c.seed = static_cast<std::uint64_t>(to_count(v)), std::to_string(c.seed)),
      LDR_FIELD("output", c.output = resolve(v, base), c.output.string()),
      LDR_FIELD("strict", c.strict = to_bool(v), c.strict ? "true" : "false"),

      LDR_FIELD("data.source",
                if (v == "synthetic") c.data.source = DataSource::Synthetic;
                else if (v == "idx") c.data.source = DataSource::Idx;
                else throw UsageError("data source must be synthetic or idx, got '" + v + "'"),
                c.data.source == DataSource::Idx ? "idx" : "synthetic"),
      LDR_FIELD("data.ambient_dim", c.data.ambient_dim = to_count(v), std::to_string(c.data.ambient_dim)),
      LDR_FIELD("data.class_dims", c.data.class_dims = counts(v), join_counts(c.data.class_dims)),
      LDR_FIELD("data.noise", c.data.noise = to_double(v), fmt(c.data.noise)),
      LDR_FIELD("data.warp", c.data.warp = parse_warp(v), warp_name(c.data.warp)),
      LDR_FIELD("data.per_class", c.data.per_class = to_count(v), std::to_string(c.data.per_class)),
      LDR_FIELD("data.images", c.data.images = resolve(v, base), c.data.images.string()),
      LDR_FIELD("data.labels", c.data.labels = resolve(v, base), c.data.labels.string()),
      LDR_FIELD("data.classes",
                c.data.classes.clear();
                for (const auto& s : split_list(v)) c.data.classes.push_back(static_cast<int>(to_count(s))),
                join<int>(c.data.classes, [](const int& i) { return std::to_string(i); })),
      LDR_FIELD("data.downsample", c.data.downsample = to_count(v), std::to_string(c.data.downsample)),
      LDR_FIELD("data.modes",
                c.data.modes.clear();
                for (const auto& s : split_list(v)) c.data.modes.push_back(parse_mode(s)),
                join<Mode>(c.data.modes, [](const Mode& m) { return mode_name(m); })),
      LDR_FIELD("data.heldout_fraction", c.data.heldout_fraction = to_double(v), fmt(c.data.heldout_fraction)),

      LDR_FIELD("net.feature_dim", c.net.feature_dim = to_count(v), std::to_string(c.net.feature_dim)),
      LDR_FIELD("net.encoder_hidden", c.net.encoder_hidden = counts(v), join_counts(c.net.encoder_hidden)),
      LDR_FIELD("net.decoder_hidden", c.net.decoder_hidden = counts(v), join_counts(c.net.decoder_hidden)),
      LDR_FIELD("net.encoder_activation", c.net.encoder_activation = ad::parse_activation(v),
                ad::activation_name(c.net.encoder_activation)),
      LDR_FIELD("net.decoder_activation", c.net.decoder_activation = ad::parse_activation(v),
                ad::activation_name(c.net.decoder_activation)),
      LDR_FIELD("net.decoder_output", c.net.decoder_output = ad::parse_activation(v),
                ad::activation_name(c.net.decoder_output)),
      LDR_FIELD("net.spectral_norm", c.net.spectral_norm = to_bool(v), c.net.spectral_norm ? "true" : "false"),

      LDR_FIELD("objective.variant", c.trainer.objective = parse_objective(v),
                std::string(objective_name(c.trainer.objective))),
      LDR_FIELD("objective.epsilon_sq", c.trainer.epsilon_sq = to_double(v), fmt(c.trainer.epsilon_sq)),

      LDR_FIELD("trainer.lr", c.trainer.lr = to_double(v), fmt(c.trainer.lr)),
      LDR_FIELD("trainer.beta1", c.trainer.beta1 = to_double(v), fmt(c.trainer.beta1)),
      LDR_FIELD("trainer.beta2", c.trainer.beta2 = to_double(v), fmt(c.trainer.beta2)),
      LDR_FIELD("trainer.adam_eps", c.trainer.adam_eps = to_double(v), fmt(c.trainer.adam_eps)),
      LDR_FIELD("trainer.iterations", c.trainer.iterations = to_count(v), std::to_string(c.trainer.iterations)),
      LDR_FIELD("trainer.batch_size", c.trainer.batch_size = to_count(v), std::to_string(c.trainer.batch_size)),
      LDR_FIELD("trainer.lr_decay",
                if (v == "linear") c.trainer.lr_decay = LrDecay::Linear;
                else if (v == "none") c.trainer.lr_decay = LrDecay::None;
                else throw UsageError("lr_decay must be linear or none, got '" + v + "'"),
                c.trainer.lr_decay == LrDecay::Linear ? "linear" : "none"),
      LDR_FIELD("trainer.encoder_steps", c.trainer.encoder_steps = static_cast<int>(to_count(v)),
                std::to_string(c.trainer.encoder_steps)),
      LDR_FIELD("trainer.decoder_steps", c.trainer.decoder_steps = static_cast<int>(to_count(v)),
                std::to_string(c.trainer.decoder_steps)),
      LDR_FIELD("trainer.eval_interval", c.trainer.eval_interval = to_count(v),
                std::to_string(c.trainer.eval_interval)),
      LDR_FIELD("trainer.collapse_window", c.trainer.collapse_window = to_count(v),
                std::to_string(c.trainer.collapse_window)),

      LDR_FIELD("analysis.tau", c.trainer.rank_rule.tau = to_double(v), fmt(c.trainer.rank_rule.tau)),
      LDR_FIELD("analysis.fixed_rank", c.trainer.rank_rule.fixed_rank = to_count(v),
                std::to_string(c.trainer.rank_rule.fixed_rank)),
      LDR_FIELD("analysis.sample_range", c.analysis.sample_range = to_double(v), fmt(c.analysis.sample_range)),
      LDR_FIELD("analysis.samples_per_class", c.analysis.samples_per_class = to_count(v),
                std::to_string(c.analysis.samples_per_class)),
      LDR_FIELD("analysis.interpolate_steps", c.analysis.interpolate_steps = static_cast<int>(to_count(v)),
                std::to_string(c.analysis.interpolate_steps)),
      LDR_FIELD("analysis.interpolate_from", c.analysis.interpolate_from = static_cast<Index>(to_int(v)),
                std::to_string(c.analysis.interpolate_from)),
      LDR_FIELD("analysis.interpolate_to", c.analysis.interpolate_to = static_cast<Index>(to_int(v)),
                std::to_string(c.analysis.interpolate_to)),
      LDR_FIELD("analysis.components", c.analysis.components = to_count(v), std::to_string(c.analysis.components)),
      LDR_FIELD("analysis.top_m", c.analysis.top_m = to_count(v), std::to_string(c.analysis.top_m)),
      LDR_FIELD("analysis.signed_components", c.analysis.signed_components = to_bool(v),
                c.analysis.signed_components ? "true" : "false"),
  };
  return table;
}

#undef LDR_FIELD

void check(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.net.feature_dim < 1) fail("net.feature_dim must be >= 1");
  for (Index h : c.net.encoder_hidden) if (h < 1) fail("net.encoder_hidden widths must be >= 1");
  for (Index h : c.net.decoder_hidden) if (h < 1) fail("net.decoder_hidden widths must be >= 1");
  if (!(c.data.heldout_fraction >= 0.0 && c.data.heldout_fraction < 1.0)) {
    fail("data.heldout_fraction must lie in [0, 1)");
  }
  // Class count when the config alone determines it; idx without a filter is
  // only known after loading.
  int classes = 1;
  if (c.data.source == DataSource::Synthetic) {
    if (c.data.class_dims.empty()) fail("data.class_dims needs at least one class");
    if (c.data.per_class < 2) fail("data.per_class must be >= 2");
    if (c.data.noise < 0.0) fail("data.noise must be non-negative");
    try {
      SubspaceSpec{c.data.ambient_dim, c.data.class_dims, c.data.noise, c.data.warp}.validate();
    } catch (const Error& e) {
      fail(std::string("data: ") + e.what());
    }
    classes = static_cast<int>(c.data.class_dims.size());
  } else {
    if (c.data.images.empty() || c.data.labels.empty()) fail("data.source = idx needs data.images and data.labels");
    if (!c.data.classes.empty()) classes = static_cast<int>(c.data.classes.size());
  }
  if (c.analysis.interpolate_steps < 1) fail("analysis.interpolate_steps must be >= 1");
  if (!(c.trainer.rank_rule.tau > 0.0 && c.trainer.rank_rule.tau <= 1.0)) fail("analysis.tau must lie in (0, 1]");
  try {
    c.trainer.validate(classes);
  } catch (const UsageError& e) {
    fail(std::string("trainer: ") + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(prev->second));
    }
    seen[key] = lineno;
    try {
      it->set(c, value, base_dir);
    } catch (const UsageError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  check(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace ldr
