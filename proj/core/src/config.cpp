#include "brmil/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace brmil {

namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: " + key + " expects a boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(key, item));
  }
  if (out.empty()) throw ConfigError("config: " + key + " expects a list of integers");
  return out;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::function<void(GlobalConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const GlobalConfig&)> get;
};

void add_stage_fields(std::map<std::string, Field>& fields, const std::string& prefix,
                      StageConfig GlobalConfig::*stage) {
  auto reg = [&](const std::string& name, auto setter, auto getter) {
    fields[prefix + name] = Field{
        [stage, setter](GlobalConfig& g, const std::string& k, const std::string& v) {
          setter(g.*stage, k, v);
        },
        [stage, getter](const GlobalConfig& g) { return getter(g.*stage); }};
  };
  reg(
      "epochs",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.epochs = to_int(k, v);
      },
      [](const StageConfig& s) { return std::to_string(s.epochs); });
  reg(
      "batch_size",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.batch_size = to_int(k, v);
      },
      [](const StageConfig& s) { return std::to_string(s.batch_size); });
  reg(
      "lr",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.lr = to_double(k, v);
      },
      [](const StageConfig& s) { return format_double(s.lr); });
  reg(
      "momentum",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.momentum = to_double(k, v);
      },
      [](const StageConfig& s) { return format_double(s.momentum); });
  reg(
      "warmup_epochs",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.warmup_epochs = to_int(k, v);
      },
      [](const StageConfig& s) { return std::to_string(s.warmup_epochs); });
  reg(
      "freeze_encoder",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.freeze_encoder = to_bool(k, v);
      },
      [](const StageConfig& s) { return s.freeze_encoder ? "true" : "false"; });
  reg(
      "use_focal_pair_loss",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.use_focal_pair_loss = to_bool(k, v);
      },
      [](const StageConfig& s) { return s.use_focal_pair_loss ? "true" : "false"; });
  reg(
      "val_fraction",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.val_fraction = to_double(k, v);
      },
      [](const StageConfig& s) { return format_double(s.val_fraction); });
  reg(
      "seed",
      [](StageConfig& s, const std::string& k, const std::string& v) {
        s.seed = to_u64(k, v);
      },
      [](const StageConfig& s) { return std::to_string(s.seed); });
}

const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto num = [&](const std::string& key, auto member_setter, auto member_getter) {
      f[key] = Field{member_setter, member_getter};
    };

#define BRMIL_INT_FIELD(KEY, EXPR)                                                  \
  num(                                                                              \
      KEY,                                                                          \
      [](GlobalConfig& g, const std::string& k, const std::string& v) {             \
        EXPR = to_int(k, v);                                                        \
      },                                                                            \
      [](const GlobalConfig& g) { return std::to_string(EXPR); })
#define BRMIL_DBL_FIELD(KEY, EXPR)                                                  \
  num(                                                                              \
      KEY,                                                                          \
      [](GlobalConfig& g, const std::string& k, const std::string& v) {             \
        EXPR = to_double(k, v);                                                     \
      },                                                                            \
      [](const GlobalConfig& g) { return format_double(EXPR); })
#define BRMIL_BOOL_FIELD(KEY, EXPR)                                                 \
  num(                                                                              \
      KEY,                                                                          \
      [](GlobalConfig& g, const std::string& k, const std::string& v) {             \
        EXPR = to_bool(k, v);                                                       \
      },                                                                            \
      [](const GlobalConfig& g) { return (EXPR) ? "true" : "false"; })
#define BRMIL_U64_FIELD(KEY, EXPR)                                                  \
  num(                                                                              \
      KEY,                                                                          \
      [](GlobalConfig& g, const std::string& k, const std::string& v) {             \
        EXPR = to_u64(k, v);                                                        \
      },                                                                            \
      [](const GlobalConfig& g) { return std::to_string(EXPR); })

    BRMIL_INT_FIELD("encoder.d_teacher", g.model.encoder.d_teacher);
    BRMIL_INT_FIELD("encoder.d_student", g.model.encoder.d_student);
    BRMIL_INT_FIELD("encoder.teacher_c1", g.model.encoder.teacher_c1);
    BRMIL_INT_FIELD("encoder.teacher_c2", g.model.encoder.teacher_c2);
    BRMIL_INT_FIELD("encoder.teacher_hidden", g.model.encoder.teacher_hidden);
    BRMIL_INT_FIELD("encoder.attn_bottleneck", g.model.encoder.attn_bottleneck);
    BRMIL_INT_FIELD("encoder.student_channels", g.model.encoder.student_channels);

    BRMIL_INT_FIELD("selector.kmax", g.model.selector.kmax);
    BRMIL_DBL_FIELD("selector.rho", g.model.selector.rho);
    BRMIL_INT_FIELD("selector.bins", g.model.selector.bins);
    BRMIL_INT_FIELD("selector.heap_size", g.model.selector.heap_size);
    BRMIL_INT_FIELD("selector.hash_bits", g.model.selector.hash_bits);
    BRMIL_INT_FIELD("selector.per_key_cap", g.model.selector.per_key_cap);
    BRMIL_INT_FIELD("selector.quota_top", g.model.selector.quota_top);
    BRMIL_DBL_FIELD("selector.tau_w", g.model.selector.tau_w);
    BRMIL_BOOL_FIELD("selector.simhash_random_proj", g.model.selector.simhash_random_proj);
    BRMIL_U64_FIELD("selector.simhash_seed", g.model.selector.simhash_seed);
    f["selector.variant"] = Field{
        [](GlobalConfig& g, const std::string& k, const std::string& v) {
          try {
            g.model.selector.variant = selector_variant_from(v);
          } catch (const std::exception& e) {
            throw ConfigError("config: " + k + ": " + e.what());
          }
        },
        [](const GlobalConfig& g) { return to_string(g.model.selector.variant); }};

    BRMIL_INT_FIELD("aggregator.kmax", g.model.aggregator.kmax);
    BRMIL_INT_FIELD("aggregator.d_token", g.model.aggregator.d_token);
    BRMIL_INT_FIELD("aggregator.width", g.model.aggregator.width);
    BRMIL_INT_FIELD("aggregator.heads", g.model.aggregator.heads);
    BRMIL_INT_FIELD("aggregator.depth", g.model.aggregator.depth);
    BRMIL_INT_FIELD("aggregator.ff_hidden", g.model.aggregator.ff_hidden);
    BRMIL_BOOL_FIELD("aggregator.deterministic_order",
                     g.model.aggregator.deterministic_order);

    BRMIL_DBL_FIELD("loss.smooth_pos", g.loss.smooth_pos);
    BRMIL_DBL_FIELD("loss.smooth_neg", g.loss.smooth_neg);
    BRMIL_DBL_FIELD("loss.focal_gamma", g.loss.focal_gamma);
    BRMIL_DBL_FIELD("loss.focal_alpha", g.loss.focal_alpha);
    BRMIL_DBL_FIELD("loss.lambda_bce", g.loss.lambda_bce);
    BRMIL_DBL_FIELD("loss.lambda_focal", g.loss.lambda_focal);
    BRMIL_DBL_FIELD("loss.class_weight", g.loss.class_weight);

    BRMIL_DBL_FIELD("distill.temperature", g.distill.temperature);
    BRMIL_DBL_FIELD("distill.alpha_start", g.distill.alpha_start);
    BRMIL_DBL_FIELD("distill.alpha_end", g.distill.alpha_end);
    BRMIL_DBL_FIELD("distill.beta_feat", g.distill.beta_feat);
    BRMIL_DBL_FIELD("distill.beta_rel", g.distill.beta_rel);

    BRMIL_INT_FIELD("synth.n_pairs", g.synth.n_pairs);
    BRMIL_DBL_FIELD("synth.mu_n", g.synth.mu_n);
    BRMIL_DBL_FIELD("synth.sigma_n", g.synth.sigma_n);
    BRMIL_INT_FIELD("synth.n_max", g.synth.n_max);
    BRMIL_INT_FIELD("synth.coop_k", g.synth.coop_k);
    BRMIL_INT_FIELD("synth.position_bins", g.synth.position_bins);
    BRMIL_DBL_FIELD("synth.noise", g.synth.noise);
    BRMIL_U64_FIELD("synth.seed", g.synth.seed);
    f["synth.rule"] = Field{
        [](GlobalConfig& g, const std::string& k, const std::string& v) {
          try {
            g.synth.rule = synth_rule_from(v);
          } catch (const std::exception& e) {
            throw ConfigError("config: " + k + ": " + e.what());
          }
        },
        [](const GlobalConfig& g) { return to_string(g.synth.rule); }};

    f["bench.ks"] = Field{
        [](GlobalConfig& g, const std::string& k, const std::string& v) {
          g.bench.ks = to_int_list(k, v);
        },
        [](const GlobalConfig& g) { return join_ints(g.bench.ks); }};
    BRMIL_INT_FIELD("bench.batch", g.bench.batch);
    BRMIL_INT_FIELD("bench.warmup", g.bench.warmup);
    BRMIL_INT_FIELD("bench.iters", g.bench.iters);
    f["bench.pipelines"] = Field{
        [](GlobalConfig& g, const std::string& k, const std::string& v) {
          std::vector<Pipeline> ps;
          std::istringstream in(v);
          std::string item;
          while (std::getline(in, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            try {
              ps.push_back(pipeline_from_name(item));
            } catch (const std::exception& e) {
              throw ConfigError("config: " + k + ": " + e.what());
            }
          }
          if (ps.empty()) throw ConfigError("config: " + k + " expects pipeline names");
          g.bench.pipelines = std::move(ps);
        },
        [](const GlobalConfig& g) {
          std::string out;
          for (std::size_t i = 0; i < g.bench.pipelines.size(); ++i) {
            if (i) out += ',';
            out += pipeline_name(g.bench.pipelines[i]);
          }
          return out;
        }};

    BRMIL_U64_FIELD("seed", g.seed);
    BRMIL_INT_FIELD("threads", g.threads);

    add_stage_fields(f, "stage1.", &GlobalConfig::stage1);
    add_stage_fields(f, "stage2.", &GlobalConfig::stage2);
    add_stage_fields(f, "stage3.", &GlobalConfig::stage3);

#undef BRMIL_INT_FIELD
#undef BRMIL_DBL_FIELD
#undef BRMIL_BOOL_FIELD
#undef BRMIL_U64_FIELD
    return f;
  }();
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

GlobalConfig::GlobalConfig() {
  stage1.stage = 1;
  stage2.stage = 2;
  stage3.stage = 3;
}

void GlobalConfig::apply_one(const std::string& key, const std::string& value) {
  const auto& table = field_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

void GlobalConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) apply_one(key, value);
}

void GlobalConfig::reseed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  stage1.seed = s;
  stage2.seed = s;
  stage3.seed = s;
}

void GlobalConfig::validate() const {
  try {
    model.validate();
    loss.validate();
    distill.validate();
    stage1.validate();
    stage2.validate();
    stage3.validate();
    synth.validate();
    bench.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
}

std::map<std::string, std::string> GlobalConfig::dump() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : field_table()) out[key] = field.get(*this);
  return out;
}

}  // namespace brmil
