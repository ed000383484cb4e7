#include "mvhand/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mvhand {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: '" + key + "' expects a comma-separated list");
  return out;
}

std::string list_text(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  bool structural;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define MVHAND_FIELD_D(k, s, member)                                                        \
  Field {                                                                                    \
    k, s, [](const ExperimentConfig& c) { return fmt(c.member); },                           \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<double>(k, v); } \
  }
#define MVHAND_FIELD_I(k, s, member)                                                     \
  Field {                                                                                 \
    k, s, [](const ExperimentConfig& c) { return std::to_string(c.member); },             \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<int>(k, v); } \
  }
#define MVHAND_FIELD_U(k, s, member)                                                               \
  Field {                                                                                           \
    k, s, [](const ExperimentConfig& c) { return std::to_string(c.member); },                       \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<std::uint64_t>(k, v); } \
  }
#define MVHAND_FIELD_B(k, s, member)                                                  \
  Field {                                                                              \
    k, s, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(k, v); }    \
  }
#define MVHAND_FIELD_S(k, s, member)                                                      \
  Field {                                                                                  \
    k, s, [](const ExperimentConfig& c) { return c.member; },                              \
        [](ExperimentConfig& c, const std::string& v) { c.member = v; }                    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MVHAND_FIELD_S("data.train", false, train_data),
      MVHAND_FIELD_S("data.val", false, val_data),
      MVHAND_FIELD_S("data.test", false, test_data),
      MVHAND_FIELD_I("data.count", false, data_count),
      MVHAND_FIELD_U("data.seed", false, data_seed),
      MVHAND_FIELD_I("synth.views", false, synth.views),
      MVHAND_FIELD_I("synth.image_size", false, synth.image_size),
      MVHAND_FIELD_D("synth.occ_target_min", false, synth.occ_target_min),
      MVHAND_FIELD_D("synth.occ_target_max", false, synth.occ_target_max),
      MVHAND_FIELD_D("synth.occ_other_max", false, synth.occ_other_max),
      MVHAND_FIELD_D("synth.clear_view_max", false, synth.clear_view_max),
      MVHAND_FIELD_D("synth.other_occluder_prob", false, synth.other_occluder_prob),
      MVHAND_FIELD_D("synth.noise_sigma", false, synth.noise_sigma),
      MVHAND_FIELD_D("synth.pose_amount", false, synth.pose_amount),

      MVHAND_FIELD_I("model.image_size", true, model.image_size),
      MVHAND_FIELD_I("model.in_channels", true, model.in_channels),
      Field{"model.encoder", true, [](const ExperimentConfig& c) { return list_text(c.model.encoder); },
            [](ExperimentConfig& c, const std::string& v) { c.model.encoder = parse_list("model.encoder", v); }},
      MVHAND_FIELD_I("model.c_i", true, model.c_i),
      MVHAND_FIELD_I("model.c_j", true, model.c_j),
      MVHAND_FIELD_I("model.c_v", true, model.c_v),
      MVHAND_FIELD_I("model.c_o", true, model.c_o),
      Field{"model.decoder", true, [](const ExperimentConfig& c) { return list_text(c.model.decoder); },
            [](ExperimentConfig& c, const std::string& v) { c.model.decoder = parse_list("model.decoder", v); }},
      MVHAND_FIELD_I("model.ofe_width", true, model.ofe_width),
      MVHAND_FIELD_I("model.regressor_hidden", true, model.regressor_hidden),
      MVHAND_FIELD_D("model.lift_sigma", false, model.lift_sigma),
      Field{"model.ofe", true, [](const ExperimentConfig& c) { return sima::ofe_mode_name(c.model.ofe); },
            [](ExperimentConfig& c, const std::string& v) { c.model.ofe = sima::parse_ofe_mode(v); }},
      MVHAND_FIELD_B("model.ofe_residual", false, model.ofe_residual),
      MVHAND_FIELD_I("model.views", true, model.views),
      MVHAND_FIELD_U("model.seed", false, model.seed),
      Field{"fusion.image", true, [](const ExperimentConfig& c) { return fusion::mode_name(c.model.image_fusion); },
            [](ExperimentConfig& c, const std::string& v) { c.model.image_fusion = fusion::parse_mode(v); }},
      Field{"fusion.joint", true, [](const ExperimentConfig& c) { return fusion::mode_name(c.model.joint_fusion); },
            [](ExperimentConfig& c, const std::string& v) { c.model.joint_fusion = fusion::parse_mode(v); }},
      Field{"fusion.vertex", true,
            [](const ExperimentConfig& c) { return fusion::mode_name(c.model.vertex_fusion); },
            [](ExperimentConfig& c, const std::string& v) { c.model.vertex_fusion = fusion::parse_mode(v); }},
      MVHAND_FIELD_B("fusion.vff_projections", true, model.vff_projections),

      MVHAND_FIELD_B("sima.enabled", false, sima),
      MVHAND_FIELD_D("sima.beta", false, beta),
      MVHAND_FIELD_D("sima.gamma", false, gamma),
      Field{"sima.variant", false, [](const ExperimentConfig& c) { return sima::variant_name(c.variant); },
            [](ExperimentConfig& c, const std::string& v) { c.variant = sima::parse_variant(v); }},
      MVHAND_FIELD_B("sima.mse", false, distill_mse),
      MVHAND_FIELD_B("sima.cache_teacher", false, cache_teacher),
      MVHAND_FIELD_B("sima.init_from_mvr", false, init_from_mvr),

      MVHAND_FIELD_I("train.iterations", false, iterations),
      MVHAND_FIELD_I("train.batch", false, batch),
      MVHAND_FIELD_D("train.lr", false, lr),
      MVHAND_FIELD_D("train.decay_at", false, decay_at),
      MVHAND_FIELD_D("train.decay_factor", false, decay_factor),
      MVHAND_FIELD_D("train.adam_beta1", false, adam_beta1),
      MVHAND_FIELD_D("train.adam_beta2", false, adam_beta2),
      MVHAND_FIELD_D("train.adam_eps", false, adam_eps),
      MVHAND_FIELD_U("train.seed", false, seed),
      Field{"train.target_view", false,
            [](const ExperimentConfig& c) {
              return std::string(c.target_view == TargetViewPolicy::kSampled ? "sampled" : "fixed");
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "sampled")
                c.target_view = TargetViewPolicy::kSampled;
              else if (v == "fixed")
                c.target_view = TargetViewPolicy::kFixed;
              else
                throw ConfigError("config: 'train.target_view' expects sampled or fixed, got '" + v + "'");
            }},
      MVHAND_FIELD_I("train.eval_every", false, eval_every),
      MVHAND_FIELD_I("train.val_samples", false, val_samples),
      MVHAND_FIELD_I("train.checkpoint_every", false, checkpoint_every),
      MVHAND_FIELD_S("train.out_dir", false, out_dir),

      MVHAND_FIELD_D("eval.occlusion_threshold", false, occlusion_threshold),
      MVHAND_FIELD_D("eval.auc_max", false, auc_max),
      MVHAND_FIELD_I("eval.auc_steps", false, auc_steps),
      MVHAND_FIELD_B("eval.rigid_pa", false, rigid_pa),
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  try {
    field(trim(key)).set(*this, trim(value));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config: bad value for '" + trim(key) + "': " + e.what());
  }
}

void ExperimentConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
  return s;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("config: cannot write " + path.string());
  f << to_text();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos)
      throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    c.set(line);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::structural_hash() const {
  std::uint64_t h = fnv1a("structure");
  for (const auto& f : fields())
    if (f.structural) h = fnv1a(f.key + "=" + f.get(*this) + "\n", h);
  return hex64(h);
}

std::string ExperimentConfig::config_hash() const { return hex64(fnv1a(to_text())); }

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (iterations < 0 || batch < 1) throw ConfigError("config: train.iterations >= 0 and train.batch >= 1 required");
  if (!(lr > 0) || decay_at < 0 || decay_at > 1 || !(decay_factor > 0))
    throw ConfigError("config: learning-rate settings out of range");
  if (!(beta >= 0) || !(gamma >= 0) || !std::isfinite(beta) || !std::isfinite(gamma))
    throw ConfigError("config: sima.beta and sima.gamma must be finite and >= 0");
  if (synth.image_size < 32) throw ConfigError("config: synth.image_size must be >= 32");
  if (eval_every < 0 || val_samples < 0 || checkpoint_every < 0) throw ConfigError("config: negative cadence");
}

}  // namespace mvhand
