#include "dfpg/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "dfpg/numerics/error.hpp"
#include "dfpg/numerics/rng.hpp"

namespace dfpg::cli {

using nlohmann::ordered_json;

namespace {

/// Reads keys out of one JSON object and remembers which were seen.
class Section {
 public:
  Section(const ordered_json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return doc_.contains(key);
  }
  const ordered_json& at(const char* key) const { return doc_.at(key); }
  std::string key_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const char* key, bool& out) {
    if (!has(key)) return;
    if (!at(key).is_boolean()) bad(key, "a boolean");
    out = at(key).get<bool>();
  }
  void get(const char* key, int& out) {
    if (!has(key)) return;
    if (!at(key).is_number_integer()) bad(key, "an integer");
    out = at(key).get<int>();
  }
  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  void get(const char* key, U& out) {
    if (!has(key)) return;
    if (!at(key).is_number_unsigned()) bad(key, "a non-negative integer");
    out = at(key).get<U>();
  }
  void get(const char* key, double& out) {
    if (!has(key)) return;
    if (!at(key).is_number()) bad(key, "a number");
    out = at(key).get<double>();
  }
  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    if (!at(key).is_string()) bad(key, "a string");
    out = at(key).get<std::string>();
  }
  void get(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_array()) bad(key, "an array of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) bad(key, "an array of numbers");
      out.push_back(x.get<double>());
    }
  }
  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_array()) bad(key, "an array of non-negative integers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number_unsigned()) bad(key, "an array of non-negative integers");
      out.push_back(x.get<std::uint64_t>());
    }
  }
  void get(const char* key, std::vector<std::pair<int, int>>& out) {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_array()) bad(key, "an array of [lo, hi] pairs");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_array() || x.size() != 2 || !x[0].is_number_integer() || !x[1].is_number_integer()) {
        bad(key, "an array of [lo, hi] pairs");
      }
      out.emplace_back(x[0].get<int>(), x[1].get<int>());
    }
  }
  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse(s);
  }

  /// Throws for any key that was never asked for.
  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + key_path(it.key().c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "config section '" + path_ + "'"; }
  [[noreturn]] void bad(const char* key, const char* what) const {
    throw ConfigError("config key '" + key_path(key) + "' must be " + what);
  }

  const ordered_json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

ordered_json bands_json(const std::vector<std::pair<int, int>>& bands) {
  ordered_json out = ordered_json::array();
  for (const auto& [lo, hi] : bands) out.push_back({lo, hi});
  return out;
}

}  // namespace

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "paper") return c;
  if (name == "desk") {
    c.annotator.epochs = 10;
    c.coteach.epochs = 10;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk | paper)");
}

RunConfig apply_json(RunConfig c, const ordered_json& doc) {
  Section top(doc, "");
  top.get("seed", c.seed);
  if (top.has("data")) {
    Section s(top.at("data"), "data");
    auto& d = c.data;
    s.get("image_side", d.image_side);
    s.get("channels", d.channels);
    s.get("grid", d.grid);
    s.get("classes", d.classes);
    s.get("samples", d.samples);
    s.get("class_mass", d.class_mass);
    s.get("lesion_bands", d.lesion_bands);
    s.get("lesion_lo", d.lesion_lo);
    s.get("lesion_hi", d.lesion_hi);
    s.get("grade_overlap", d.grade_overlap);
    s.get("distractor_rate", d.distractor_rate);
    s.get("distractor_hi", d.distractor_hi);
    s.get("blob_sigma", d.blob_sigma);
    s.get("noise_std", d.noise_std);
    s.get("folds", d.folds);
    s.get("test_fold", d.test_fold);
    s.finish();
  }
  if (top.has("backbone")) {
    Section s(top.at("backbone"), "backbone");
    s.get("embed_dim", c.backbone.embed_dim);
    s.finish();
  }
  if (top.has("fuzzy")) {
    Section s(top.at("fuzzy"), "fuzzy");
    s.get("rules_patch", c.fuzzy.rules_patch);
    s.get("rules_channel", c.fuzzy.rules_channel);
    s.get_enum("fusion", c.fuzzy.fusion, fuzzy::parse_fusion);
    s.get_enum("f1_representation", c.fuzzy.f1_representation, fuzzy::parse_representation);
    s.get_enum("f2_representation", c.fuzzy.f2_representation, fuzzy::parse_representation);
    s.finish();
  }
  if (top.has("annotator")) {
    Section s(top.at("annotator"), "annotator");
    auto& a = c.annotator;
    s.get("epochs", a.epochs);
    s.get("lr", a.lr);
    s.get("batch_size", a.batch_size);
    s.get("mix_ratio", a.mix_ratio);
    s.get("alpha", a.alpha);
    s.get("patch_weight", a.patch_weight);
    s.get_enum("mix_mode", a.mix_mode, annotator::parse_mix_mode);
    s.get_enum("patch_pooling", a.patch_pooling, annotator::parse_patch_pooling);
    s.get("patch_context", a.patch_context);
    s.finish();
  }
  if (top.has("filter")) {
    Section s(top.at("filter"), "filter");
    s.get("tau", c.filter.tau);
    s.get("delta", c.filter.delta);
    s.get("gmm_max_iters", c.filter.gmm_max_iters);
    s.get("gmm_tol", c.filter.gmm_tol);
    s.finish();
  }
  if (top.has("coteach")) {
    Section s(top.at("coteach"), "coteach");
    auto& t = c.coteach;
    s.get("epochs", t.epochs);
    s.get("lr", t.lr);
    s.get("batch_size", t.batch_size);
    s.get("beta", t.beta);
    s.get("gamma_min", t.gamma_min);
    s.get("gamma_max", t.gamma_max);
    s.get("filtering", t.filtering);
    s.finish();
  }
  if (top.has("eval")) {
    Section s(top.at("eval"), "eval");
    s.get("ensemble", c.eval.ensemble);
    s.get("ablation_seeds", c.eval.ablation_seeds);
    s.finish();
  }
  top.finish();
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  const auto& d = c.data;
  j["data"] = {{"image_side", d.image_side},
               {"channels", d.channels},
               {"grid", d.grid},
               {"classes", d.classes},
               {"samples", d.samples},
               {"class_mass", d.class_mass},
               {"lesion_bands", bands_json(d.lesion_bands)},
               {"lesion_lo", d.lesion_lo},
               {"lesion_hi", d.lesion_hi},
               {"grade_overlap", d.grade_overlap},
               {"distractor_rate", d.distractor_rate},
               {"distractor_hi", d.distractor_hi},
               {"blob_sigma", d.blob_sigma},
               {"noise_std", d.noise_std},
               {"folds", d.folds},
               {"test_fold", d.test_fold}};
  j["backbone"] = {{"embed_dim", c.backbone.embed_dim}};
  j["fuzzy"] = {{"rules_patch", c.fuzzy.rules_patch},
                {"rules_channel", c.fuzzy.rules_channel},
                {"fusion", fuzzy::to_string(c.fuzzy.fusion)},
                {"f1_representation", fuzzy::to_string(c.fuzzy.f1_representation)},
                {"f2_representation", fuzzy::to_string(c.fuzzy.f2_representation)}};
  const auto& a = c.annotator;
  j["annotator"] = {{"epochs", a.epochs},
                    {"lr", a.lr},
                    {"batch_size", a.batch_size},
                    {"mix_ratio", a.mix_ratio},
                    {"alpha", a.alpha},
                    {"patch_weight", a.patch_weight},
                    {"mix_mode", annotator::to_string(a.mix_mode)},
                    {"patch_pooling", annotator::to_string(a.patch_pooling)},
                    {"patch_context", a.patch_context}};
  j["filter"] = {{"tau", c.filter.tau},
                 {"delta", c.filter.delta},
                 {"gmm_max_iters", c.filter.gmm_max_iters},
                 {"gmm_tol", c.filter.gmm_tol}};
  const auto& t = c.coteach;
  j["coteach"] = {{"epochs", t.epochs},
                  {"lr", t.lr},
                  {"batch_size", t.batch_size},
                  {"beta", t.beta},
                  {"gamma_min", t.gamma_min},
                  {"gamma_max", t.gamma_max},
                  {"filtering", t.filtering}};
  j["eval"] = {{"ensemble", c.eval.ensemble}, {"ablation_seeds", c.eval.ablation_seeds}};
  return j;
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c = apply_json(base, doc);
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), base);
}

std::string serialize(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

void validate(const RunConfig& c) {
  const auto& d = c.data;
  if (d.grid == 0 || d.image_side % d.grid != 0) throw ConfigError("data.image_side must be a multiple of data.grid");
  if (d.channels == 0) throw ConfigError("data.channels must be positive");
  if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
  if (d.folds < 2) throw ConfigError("data.folds must be >= 2");
  if (d.test_fold >= d.folds) throw ConfigError("data.test_fold must be below data.folds");
  data::validate(synthetic_spec(c));
  if (c.backbone.embed_dim == 0) throw ConfigError("backbone.embed_dim must be positive");
  if (c.fuzzy.rules_patch == 0 || c.fuzzy.rules_channel == 0) throw ConfigError("fuzzy rule counts must be positive");
  const auto& a = c.annotator;
  if (a.epochs < 1) throw ConfigError("annotator.epochs must be >= 1");
  if (!(a.lr > 0)) throw ConfigError("annotator.lr must be positive");
  if (a.batch_size == 0) throw ConfigError("annotator.batch_size must be positive");
  if (!(a.mix_ratio >= 0 && a.mix_ratio < 1)) throw ConfigError("annotator.mix_ratio must be in [0, 1)");
  if (!(a.alpha > 0)) throw ConfigError("annotator.alpha must be positive");
  if (!(a.patch_weight >= 0)) throw ConfigError("annotator.patch_weight must be >= 0");
  if (c.filter.gmm_max_iters < 1) throw ConfigError("filter.gmm_max_iters must be >= 1");
  if (!(c.filter.gmm_tol >= 0)) throw ConfigError("filter.gmm_tol must be >= 0");
  // Remaining trainer ranges (tau, delta, beta, gamma, epochs, lr, batch).
  coteach::validate(coteach_config(c));
  if (c.eval.ablation_seeds.empty()) throw ConfigError("eval.ablation_seeds must not be empty");
}

std::uint64_t sub_seed(std::uint64_t seed, const std::string& label) {
  return RngStream(seed).derive(label).next_u64();
}

data::SyntheticSpec synthetic_spec(const RunConfig& c) {
  data::SyntheticSpec s;
  const auto& d = c.data;
  s.image_side = d.image_side;
  s.grid = d.grid;
  s.classes = d.classes;
  s.lesion_bands = d.lesion_bands;
  s.lesion_lo = d.lesion_lo;
  s.lesion_hi = d.lesion_hi;
  s.grade_overlap = d.grade_overlap;
  s.distractor_rate = d.distractor_rate;
  s.distractor_hi = d.distractor_hi;
  s.blob_sigma = d.blob_sigma;
  s.noise_std = d.noise_std;
  s.class_mass = d.class_mass;
  s.samples = d.samples;
  s.seed = sub_seed(c.seed, "data");
  return s;
}

data::FolderOptions folder_options(const RunConfig& c) {
  return {c.data.image_side, c.data.channels, c.data.classes};
}

backbone::EncoderDims encoder_dims(const RunConfig& c) {
  return {c.data.channels, c.data.image_side, c.data.image_side / c.data.grid, c.backbone.embed_dim};
}

coteach::ModelSpec model_spec(const RunConfig& c, coteach::ModelKind kind) {
  return {kind, encoder_dims(c), c.fuzzy, c.data.classes};
}

coteach::CoteachConfig coteach_config(const RunConfig& c) {
  coteach::CoteachConfig t;
  t.epochs = c.coteach.epochs;
  t.lr = c.coteach.lr;
  t.batch_size = c.coteach.batch_size;
  t.beta = c.coteach.beta;
  t.gamma_min = c.coteach.gamma_min;
  t.gamma_max = c.coteach.gamma_max;
  t.tau = c.filter.tau;
  t.delta = c.filter.delta;
  t.filtering = c.coteach.filtering;
  t.ensemble_eval = c.eval.ensemble;
  t.gmm.max_iters = c.filter.gmm_max_iters;
  t.gmm.tol = c.filter.gmm_tol;
  return t;
}

coteach::AblationSetup ablation_setup(const RunConfig& c) {
  coteach::AblationSetup s;
  s.dims = encoder_dims(c);
  s.dfl = c.fuzzy;
  s.classes = c.data.classes;
  s.annotator = c.annotator;
  s.coteach = coteach_config(c);
  s.folds = c.data.folds;
  s.test_fold = c.data.test_fold;
  s.seeds = c.eval.ablation_seeds;
  return s;
}

}  // namespace dfpg::cli
