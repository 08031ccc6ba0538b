#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/data.hpp"
#include "prunemia/defenses.hpp"
#include "prunemia/mask.hpp"
#include "prunemia/metrics.hpp"

namespace prunemia::harness {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sectioned key = value text. `#` and `;` start comments; keys are unique per
// section.
class IniFile {
 public:
  static IniFile parse(std::istream& in, const std::string& origin) {
    IniFile ini;
    std::string line, section;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t comment = line.find_first_of("#;");
      if (comment != std::string::npos) line.erase(comment);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        continue;
      }
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      ini.values_[section + "." + key] = value;
    }
    return ini;
  }

  static IniFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  static IniFile parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in, "<config>");
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_str(const std::string& s, const std::string& k, const std::string& dflt) const {
    auto v = get(s, k);
    return v ? *v : dflt;
  }

  double get_double(const std::string& s, const std::string& k, double dflt) const {
    auto v = get(s, k);
    if (!v) return dflt;
    try {
      return std::stod(*v);
    } catch (const std::exception&) {
      throw ConfigError("config key [" + s + "] " + k + ": '" + *v + "' is not a number");
    }
  }

  std::int64_t get_int(const std::string& s, const std::string& k, std::int64_t dflt) const {
    auto v = get(s, k);
    if (!v) return dflt;
    try {
      return std::stoll(*v);
    } catch (const std::exception&) {
      throw ConfigError("config key [" + s + "] " + k + ": '" + *v + "' is not an integer");
    }
  }

  bool get_bool(const std::string& s, const std::string& k, bool dflt) const {
    auto v = get(s, k);
    if (!v) return dflt;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config key [" + s + "] " + k + ": '" + *v + "' is not a boolean");
  }

  std::vector<std::string> get_list(const std::string& s, const std::string& k,
                                    const std::vector<std::string>& dflt) const {
    auto v = get(s, k);
    if (!v) return dflt;
    std::vector<std::string> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& s, const std::string& k,
                                      const std::vector<double>& dflt) const {
    auto v = get(s, k);
    if (!v) return dflt;
    std::vector<double> out;
    for (const auto& item : get_list(s, k, {})) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("config key [" + s + "] " + k + ": '" + item + "' is not a number");
      }
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline const std::vector<std::string> kAllAttacks{"conf", "xent",   "mentr",   "top1conf", "nn",
                                                  "top3nn", "nncls", "blindmi", "samia"};

// Resolved experiment configuration: the five config-file sections plus the
// run section.
struct ExperimentConfig {
  struct Data {
    std::string source = "synthetic";  // synthetic | csv
    std::string csv_path;
    data::SyntheticSpec synth;
    std::uint64_t split_seed = 0;
    bool split_seed_set = false;
  } data;

  struct Model {
    std::vector<std::int64_t> hidden{256, 128};
  } model;

  struct Prune {
    std::vector<prune::PruneMethod> methods{prune::PruneMethod::L1Unstructured};
    std::vector<double> gammas{0.7};
  } prune_section;

  struct Defense {
    defense::DefenseKind kind = defense::DefenseKind::Basic;
    std::vector<double> lambdas{4.0};
    std::vector<double> sigmas{1.0};
    std::vector<double> alphas{1.0};
    double clip_norm = 1.0;
    double dp_lr = 0.01;
    double weight_decay = 5e-4;
    int patience = 5;
    int max_epochs = 100;
  } defense_section;

  struct Attack {
    std::vector<std::string> kinds = kAllAttacks;
    int shadow_count = 5;
    int sensitivity_n = 10;
    double sensitivity_eps = 1e-3;
    std::optional<prune::PruneMethod> adversary_method;
    std::optional<double> adversary_gamma;
    bool adaptive = false;
    std::vector<std::string> variants{"original", "pruned"};
    int probe_budget = 200;
    std::string matrix_attack = "samia";
    int matrix_pairs = 0;  // 0 = full cross product
    bool include_unpruned_target = true;
    double momentum = 0.0;
  } attack;

  struct Run {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int parallel = 1;
    int repeats = 1;
  } run;

  // training constants shared by all stages
  double lr = 1e-3;
  int batch_size = 128;
  double slim_l1 = 1e-4;

  defense::DefenseConfig defense_config(double lambda, double sigma, double alpha) const {
    defense::DefenseConfig d;
    d.kind = defense_section.kind;
    d.lambda = lambda;
    d.sigma = sigma;
    d.alpha = alpha;
    d.clip_norm = defense_section.clip_norm;
    d.dp_lr = defense_section.dp_lr;
    d.weight_decay = defense_section.weight_decay;
    d.patience = defense_section.patience;
    d.max_epochs = defense_section.max_epochs;
    return d;
  }

  defense::DefenseConfig basic_defense() const {
    defense::DefenseConfig d;
    d.weight_decay = defense_section.weight_decay;
    d.patience = defense_section.patience;
    d.max_epochs = defense_section.max_epochs;
    return d;
  }

  metrics::SensitivityConfig sensitivity_config() const {
    metrics::SensitivityConfig s;
    s.n = attack.sensitivity_n;
    s.eps = attack.sensitivity_eps;
    s.seed = run.seed;
    return s;
  }

  void validate() const {
    if (data.source != "synthetic" && data.source != "csv")
      throw ConfigError("data.source must be 'synthetic' or 'csv'");
    if (data.source == "csv" && data.csv_path.empty())
      throw ConfigError("data.csv_path required when data.source = csv");
    if (prune_section.methods.empty() || prune_section.gammas.empty())
      throw ConfigError("prune grids must be non-empty");
    for (double g : prune_section.gammas)
      if (g < 0.0 || g >= 1.0) throw ConfigError("prune.gamma must be in [0,1)");
    if (attack.shadow_count < 1) throw ConfigError("attack.shadow_count must be >= 1");
    for (const auto& k : attack.kinds)
      if (std::find(kAllAttacks.begin(), kAllAttacks.end(), k) == kAllAttacks.end())
        throw ConfigError("unknown attack kind '" + k + "'");
    for (const auto& v : attack.variants)
      if (v != "original" && v != "pruned") throw ConfigError("attack.targets entries must be original|pruned");
    if (defense_section.lambdas.empty() || defense_section.sigmas.empty() ||
        defense_section.alphas.empty())
      throw ConfigError("defense grids must be non-empty");
    if (run.parallel < 1) throw ConfigError("run.parallel must be >= 1");
    if (run.repeats < 1) throw ConfigError("run.repeats must be >= 1");
  }
};

inline ExperimentConfig load_config(const IniFile& ini) {
  ExperimentConfig cfg;
  cfg.data.source = ini.get_str("data", "source", cfg.data.source);
  cfg.data.csv_path = ini.get_str("data", "csv_path", "");
  cfg.data.synth.num_classes = ini.get_int("data", "classes", cfg.data.synth.num_classes);
  cfg.data.synth.num_features = ini.get_int("data", "features", cfg.data.synth.num_features);
  cfg.data.synth.samples_per_class =
      ini.get_int("data", "per_class", cfg.data.synth.samples_per_class);
  cfg.data.synth.flip_probability =
      ini.get_double("data", "flip_prob", cfg.data.synth.flip_probability);
  if (auto v = ini.get("data", "split_seed")) {
    cfg.data.split_seed = static_cast<std::uint64_t>(std::stoull(*v));
    cfg.data.split_seed_set = true;
  }

  {
    std::vector<std::int64_t> hidden;
    for (const auto& h : ini.get_list("model", "hidden", {"256", "128"}))
      hidden.push_back(std::stoll(h));
    cfg.model.hidden = std::move(hidden);
  }

  {
    std::vector<prune::PruneMethod> methods;
    for (const auto& m : ini.get_list("prune", "method", {"l1_unstructured"}))
      methods.push_back(prune::method_from_name(m));
    cfg.prune_section.methods = std::move(methods);
    cfg.prune_section.gammas = ini.get_double_list("prune", "gamma", {0.7});
  }

  cfg.defense_section.kind =
      defense::defense_from_name(ini.get_str("defense", "kind", "basic"));
  cfg.defense_section.lambdas = ini.get_double_list("defense", "lambda", {4.0});
  cfg.defense_section.sigmas = ini.get_double_list("defense", "sigma", {1.0});
  cfg.defense_section.alphas = ini.get_double_list("defense", "alpha", {1.0});
  cfg.defense_section.clip_norm = ini.get_double("defense", "clip_norm", 1.0);
  cfg.defense_section.dp_lr = ini.get_double("defense", "dp_lr", 0.01);
  cfg.defense_section.weight_decay = ini.get_double("defense", "weight_decay", 5e-4);
  cfg.defense_section.patience = static_cast<int>(ini.get_int("defense", "patience", 5));
  cfg.defense_section.max_epochs = static_cast<int>(ini.get_int("defense", "max_epochs", 100));

  cfg.attack.kinds = ini.get_list("attack", "kinds", kAllAttacks);
  cfg.attack.shadow_count = static_cast<int>(ini.get_int("attack", "shadow_count", 5));
  cfg.attack.sensitivity_n = static_cast<int>(ini.get_int("attack", "sensitivity_n", 10));
  cfg.attack.sensitivity_eps = ini.get_double("attack", "sensitivity_eps", 1e-3);
  if (auto v = ini.get("attack", "adversary_method"))
    cfg.attack.adversary_method = prune::method_from_name(*v);
  if (auto v = ini.get("attack", "adversary_gamma")) cfg.attack.adversary_gamma = std::stod(*v);
  cfg.attack.adaptive = ini.get_bool("attack", "adaptive", false);
  cfg.attack.variants = ini.get_list("attack", "targets", {"original", "pruned"});
  cfg.attack.probe_budget = static_cast<int>(ini.get_int("attack", "probe_budget", 200));
  cfg.attack.matrix_attack = ini.get_str("attack", "matrix_attack", "samia");
  cfg.attack.matrix_pairs = static_cast<int>(ini.get_int("attack", "matrix_pairs", 0));
  cfg.attack.include_unpruned_target = ini.get_bool("attack", "include_unpruned_target", true);
  cfg.attack.momentum = ini.get_double("attack", "momentum", 0.0);

  cfg.run.seed = static_cast<std::uint64_t>(ini.get_int("run", "seed", 0));
  cfg.run.out_dir = ini.get_str("run", "out", "out");
  cfg.run.parallel = static_cast<int>(ini.get_int("run", "parallel", 1));
  cfg.run.repeats = static_cast<int>(ini.get_int("run", "repeats", 1));
  if (!cfg.data.split_seed_set) cfg.data.split_seed = cfg.run.seed;

  cfg.lr = ini.get_double("model", "lr", 1e-3);
  cfg.batch_size = static_cast<int>(ini.get_int("model", "batch_size", 128));
  cfg.slim_l1 = ini.get_double("model", "slim_l1", 1e-4);

  cfg.validate();
  return cfg;
}

}  // namespace prunemia::harness
