// Command-line front end for the spatial model-selection library: data
// simulation, sampler runs, selection, metrics, evidence-variance probing and
// the analytic selection bound.
//
// Exit codes: 0 success, 2 configuration error, 3 compute failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spms/experiment.hpp"
#include "spms/metrics.hpp"

namespace {

struct ConfigArgs {
  std::string config_path;
  std::string preset_name;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int workers = 0;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment config file");
  cmd->add_option("--preset", args.preset_name,
                  "named preset (see `preset --list`)");
  cmd->add_option("--seed", args.seed, "master RNG seed override")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out_dir, "output directory override");
  cmd->add_option("--workers", args.workers, "parallel worker count override");
}

spms::ExperimentConfig resolve_config(const ConfigArgs& args) {
  if (args.config_path.empty() == args.preset_name.empty())
    throw std::invalid_argument("give exactly one of --config or --preset");
  spms::ExperimentConfig cfg = args.config_path.empty()
                                   ? spms::preset(args.preset_name)
                                   : spms::load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.workers > 0) cfg.workers = args.workers;
  cfg.validate();
  return cfg;
}

int cmd_simulate(const ConfigArgs& args) {
  spms::ExperimentConfig cfg = resolve_config(args);
  std::filesystem::create_directories(cfg.out_dir);
  spms::StudyProblem problem = spms::build_problem(cfg);
  spms::save_field_csv(problem.truth, cfg.out_dir + "/truth_field.csv");
  spms::save_field_grid(problem.truth, cfg.out_dir + "/truth_field.txt");
  spms::save_field_pgm(problem.truth, problem.family->model_count(),
                       cfg.out_dir + "/truth_field.pgm");
  if (cfg.study == "pet") {
    spms::pet::save_image_binary(problem.data, cfg.out_dir + "/data.peti");
    spms::pet::save_image_csv(problem.data, cfg.out_dir + "/data.csv");
    spms::save_map_csv(problem.vd_truth, cfg.out_dir + "/vd_truth.csv");
    spms::pet::save_plasma_input(*problem.plasma, cfg.out_dir + "/plasma.csv");
    spms::pet::save_frame_schedule(*problem.schedule,
                                   cfg.out_dir + "/schedule.csv");
  } else {
    spms::pet::save_image_csv(problem.data, cfg.out_dir + "/data.csv");
  }
  spms::save_config(cfg, cfg.out_dir + "/config.json");
  std::cout << "simulated " << cfg.study << " data: " << cfg.width << "x"
            << cfg.height << " -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_run(const ConfigArgs& args) {
  spms::ExperimentConfig cfg = resolve_config(args);
  spms::StudyReport report = spms::run_study(cfg);
  std::cout << "study complete: " << report.outcomes.size() << " replicate runs, "
            << report.failed_replicates << " failed; outputs in " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_select(const std::string& trace_path, int width, int height, int models,
               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  spms::SelectionResult sel =
      spms::modal_select_csv(trace_path, width, height, models);
  spms::save_field_csv(sel.selected, out_dir + "/selected_field.csv");
  spms::save_field_pgm(sel.selected, models, out_dir + "/selected_field.pgm");
  spms::CsvWriter csv(out_dir + "/frequencies.csv", "node,model,frequency");
  for (int v = 0; v < sel.selected.size(); ++v)
    for (int m = 0; m < models; ++m) csv.row(v, m, sel.freq(v, m));
  std::cout << "modal selection written to " << out_dir << "\n";
  return 0;
}

int cmd_metrics(const std::string& selected_path, const std::string& truth_path,
                int width, int height, const std::string& map_path,
                const std::string& truth_map_path) {
  spms::ModelField selected = spms::load_field_csv(selected_path, width, height);
  spms::ModelField truth = spms::load_field_csv(truth_path, width, height);
  std::cout << "percent_correct=" << spms::percent_correct(selected, truth)
            << "\n";
  if (!map_path.empty() && !truth_map_path.empty()) {
    auto map = spms::load_map_csv(map_path);
    auto truth_map = spms::load_map_csv(truth_map_path);
    std::cout << "rmse=" << spms::rmse(map, truth_map) << "\n";
  }
  return 0;
}

int cmd_probe_variance(const ConfigArgs& args, int node, int model,
                       const std::vector<std::string>& grid_cells,
                       int replicates) {
  spms::ExperimentConfig cfg = resolve_config(args);
  spms::StudyProblem problem = spms::build_problem(cfg);
  if (node < 0 || node >= problem.data.node_count())
    throw std::invalid_argument("node id out of range");
  if (model < 0 || model >= problem.family->model_count())
    throw std::invalid_argument("model order out of range");
  std::vector<std::pair<int, int>> grid;
  for (const auto& cell : grid_cells) {
    auto sep = cell.find(':');
    if (sep == std::string::npos)
      throw std::invalid_argument("grid cells must be N:T, e.g. 50:80");
    grid.emplace_back(std::stoi(cell.substr(0, sep)),
                      std::stoi(cell.substr(sep + 1)));
  }
  if (grid.empty()) grid = {{cfg.particles, cfg.temperatures}};
  auto rows = spms::probe_variance(problem.data.node(node), model,
                                   *problem.family, grid, replicates, cfg.smc(),
                                   cfg.seed, cfg.workers);
  std::filesystem::create_directories(cfg.out_dir);
  std::string path = cfg.out_dir + "/variance_probe.csv";
  spms::save_variance_probe(rows, path);
  for (const auto& r : rows)
    std::cout << "N=" << r.particles << " T=" << r.temperatures
              << " var(log_z)=" << r.variance << " se=" << r.se << "\n";
  std::cout << "written to " << path << "\n";
  return 0;
}

int cmd_bound(int models, double delta, double sigma) {
  std::cout << spms::selection_bound(delta, sigma, models) << "\n";
  return 0;
}

int cmd_preset(const std::string& name, bool list) {
  if (list || name.empty()) {
    for (const auto& n : spms::preset_names()) std::cout << n << "\n";
    return 0;
  }
  nlohmann::json j = spms::preset(name);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial Bayesian model selection over lattice images"};
  app.require_subcommand(1);

  ConfigArgs sim_args, run_args, probe_args;

  auto* simulate = app.add_subcommand("simulate", "simulate a study data set");
  add_config_options(simulate, sim_args);

  auto* run = app.add_subcommand("run", "run a full replicated study");
  add_config_options(run, run_args);

  std::string trace_path, select_out = "select-out";
  int sel_width = 20, sel_height = 20, sel_models = 2;
  auto* select = app.add_subcommand("select", "modal selection from a trace CSV");
  select->add_option("--trace", trace_path, "trace CSV (iteration,node,model)")
      ->required();
  select->add_option("--width", sel_width)->required();
  select->add_option("--height", sel_height)->required();
  select->add_option("--models", sel_models)->required();
  select->add_option("--out", select_out, "output directory");

  std::string selected_path, truth_path, map_path, truth_map_path;
  int met_width = 20, met_height = 20;
  auto* metrics = app.add_subcommand("metrics", "score a selection against truth");
  metrics->add_option("--selected", selected_path, "selected field CSV")
      ->required();
  metrics->add_option("--truth", truth_path, "truth field CSV")->required();
  metrics->add_option("--width", met_width)->required();
  metrics->add_option("--height", met_height)->required();
  metrics->add_option("--map", map_path, "value map CSV (node,value)");
  metrics->add_option("--truth-map", truth_map_path, "truth map CSV");

  int probe_node = 0, probe_model = 0, probe_reps = 50;
  std::vector<std::string> probe_grid;
  auto* probe = app.add_subcommand(
      "probe-variance", "replicate log-evidence variance over an (N,T) grid");
  add_config_options(probe, probe_args);
  probe->add_option("--node", probe_node, "node id to probe");
  probe->add_option("--model", probe_model, "model order index");
  probe->add_option("--grid", probe_grid, "grid cells as N:T (repeatable)");
  probe->add_option("--replicates", probe_reps, "estimates per grid cell");

  int bound_models = 2;
  double bound_delta = 1.0, bound_sigma = 1.0;
  auto* bound =
      app.add_subcommand("bound", "argmax model-selection probability bound");
  bound->add_option("--models", bound_models)->required();
  bound->add_option("--delta", bound_delta, "evidence mean separation")->required();
  bound->add_option("--sigma", bound_sigma, "estimator standard deviation")
      ->required();

  std::string preset_name;
  bool preset_list = false;
  auto* preset_cmd = app.add_subcommand("preset", "print a preset config as JSON");
  preset_cmd->add_option("name", preset_name, "preset name");
  preset_cmd->add_flag("--list", preset_list, "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim_args);
    if (run->parsed()) return cmd_run(run_args);
    if (select->parsed())
      return cmd_select(trace_path, sel_width, sel_height, sel_models, select_out);
    if (metrics->parsed())
      return cmd_metrics(selected_path, truth_path, met_width, met_height,
                         map_path, truth_map_path);
    if (probe->parsed())
      return cmd_probe_variance(probe_args, probe_node, probe_model, probe_grid,
                                probe_reps);
    if (bound->parsed()) return cmd_bound(bound_models, bound_delta, bound_sigma);
    if (preset_cmd->parsed()) return cmd_preset(preset_name, preset_list);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "compute error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
