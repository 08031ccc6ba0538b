// Command-line entry point: run single pipelines, unknown-configuration
// matrices, re-emit reports from stored records, or generate synthetic
// benchmark CSVs.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "prunemia/harness.hpp"

using namespace prunemia;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> parallel;
};

harness::ExperimentConfig load(const CommonOpts& opts) {
  harness::ExperimentConfig cfg =
      harness::load_config(harness::IniFile::parse_file(opts.config_path));
  if (opts.seed) {
    cfg.run.seed = *opts.seed;
    if (!cfg.data.split_seed_set) cfg.data.split_seed = *opts.seed;
  }
  if (opts.out) cfg.run.out_dir = *opts.out;
  if (opts.parallel) cfg.run.parallel = *opts.parallel;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config file")->required();
  cmd->add_option("--seed", opts.seed, "override the global seed");
  cmd->add_option("--out", opts.out, "override the output directory");
  cmd->add_option("--parallel", opts.parallel, "max parallel grid cells");
}

// Defense grid points for the configured kind (Basic has no grid).
std::vector<std::array<double, 3>> defense_grid(const harness::ExperimentConfig& cfg) {
  std::vector<std::array<double, 3>> points;
  const auto& d = cfg.defense_section;
  switch (d.kind) {
    case defense::DefenseKind::Basic:
      points.push_back({0.0, 0.0, 0.0});
      break;
    case defense::DefenseKind::PPB:
      for (double l : d.lambdas) points.push_back({l, 0.0, 0.0});
      break;
    case defense::DefenseKind::DP:
      for (double s : d.sigmas) points.push_back({0.0, s, 0.0});
      break;
    case defense::DefenseKind::ADV:
      for (double a : d.alphas) points.push_back({0.0, 0.0, a});
      break;
  }
  return points;
}

int run_pipeline_cmd(const CommonOpts& opts) {
  harness::ExperimentConfig cfg = load(opts);
  harness::Harness lab(cfg);

  std::vector<harness::PipelineSpec> specs;
  for (auto method : cfg.prune_section.methods)
    for (double gamma : cfg.prune_section.gammas)
      for (const auto& point : defense_grid(cfg)) {
        harness::PipelineSpec ps;
        ps.method = method;
        ps.gamma = gamma;
        ps.lambda = point[0];
        ps.sigma = point[1];
        ps.alpha = point[2];
        ps.adversary_method = cfg.attack.adversary_method;
        ps.adversary_gamma = cfg.attack.adversary_gamma;
        ps.adaptive = cfg.attack.adaptive;
        specs.push_back(ps);
      }

  std::vector<harness::json> records(specs.size());
  std::vector<std::string> errors(specs.size());
  auto eval = [&](std::size_t i) {
    try {
      records[i] = lab.run_pipeline(specs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  const int workers = std::max(1, cfg.run.parallel);
  if (workers == 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) eval(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) eval(i);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (!errors[i].empty()) throw std::runtime_error("pipeline cell failed: " + errors[i]);

  harness::emit_report(records, cfg.run.out_dir);
  std::cout << "wrote " << records.size() << " run record(s) to " << cfg.run.out_dir << "\n";
  return kExitOk;
}

int run_matrix_cmd(const CommonOpts& opts) {
  harness::ExperimentConfig cfg = load(opts);
  harness::Harness lab(cfg);
  harness::json rec = lab.run_matrix();
  std::filesystem::create_directories(cfg.run.out_dir);
  const std::string path = cfg.run.out_dir + "/matrix.json";
  std::ofstream out(path);
  out << rec.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path);
  std::cout << "wrote " << path;
  if (rec.contains("mean_attack_accuracy_loss"))
    std::cout << " (mean attack accuracy loss " << rec["mean_attack_accuracy_loss"].get<double>()
              << ")";
  std::cout << "\n";
  return kExitOk;
}

int run_report_cmd(const std::string& in_path, const std::string& out_dir) {
  std::ifstream in(in_path);
  if (!in) throw harness::ConfigError("cannot open " + in_path);
  std::vector<harness::json> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    harness::json rec = harness::json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw harness::ConfigError(in_path + ": line " + std::to_string(records.size() + 1) +
                                 " is not valid JSON");
    records.push_back(std::move(rec));
  }
  harness::emit_report(records, out_dir);
  std::cout << "re-emitted " << records.size() << " record(s) to " << out_dir << "\n";
  return kExitOk;
}

int run_synth_cmd(std::int64_t classes, std::int64_t features, std::int64_t per_class, double flip,
                  std::uint64_t seed, const std::string& out_path) {
  data::SyntheticSpec spec{classes, features, per_class, flip};
  data::Dataset ds = data::synth_generate(spec, seed);
  data::save_csv(ds, out_path);
  std::cout << "wrote " << ds.size() << " samples (" << classes << " classes, " << features
            << " features) to " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"membership-inference risk measurement for pruned classifiers"};
  app.require_subcommand(1);

  CommonOpts pipeline_opts, matrix_opts;
  CLI::App* pipeline = app.add_subcommand("pipeline", "train, prune, attack, and record one grid");
  add_common(pipeline, pipeline_opts);
  CLI::App* matrix = app.add_subcommand("matrix", "unknown-configuration attack matrix");
  add_common(matrix, matrix_opts);

  std::string report_in, report_out = "out";
  CLI::App* report = app.add_subcommand("report", "re-emit CSV/figure files from runs.jsonl");
  report->add_option("--in", report_in, "runs.jsonl produced by pipeline")->required();
  report->add_option("--out", report_out, "output directory");

  std::int64_t classes = 30, features = 446, per_class = 150;
  double flip = 0.15;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "synthetic.csv";
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic benchmark CSV");
  synth->add_option("--classes", classes, "number of classes");
  synth->add_option("--features", features, "number of binary features");
  synth->add_option("--per-class", per_class, "samples per class");
  synth->add_option("--flip", flip, "per-bit flip probability");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (pipeline->parsed()) return run_pipeline_cmd(pipeline_opts);
    if (matrix->parsed()) return run_matrix_cmd(matrix_opts);
    if (report->parsed()) return run_report_cmd(report_in, report_out);
    if (synth->parsed())
      return run_synth_cmd(classes, features, per_class, flip, synth_seed, synth_out);
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const data::CsvError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
