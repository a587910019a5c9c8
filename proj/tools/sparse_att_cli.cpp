// Command-line entry point: train, eval, compete, dump-graph.

#include "sparse_att/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace sparse_att;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> task;
  std::optional<std::string> activation;
  std::optional<std::size_t> agents;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--out", out, "output directory");
    app->add_option("--task", task, "coverage | formation | soccer");
    app->add_option("--activation", activation, "softmax | sparsemax | adaptive");
    app->add_option("--agents", agents, "number of agents");
  }

  RunConfig resolve(RunConfig base = {}) const {
    RunConfig c = config_path.empty() ? base : parse_config(read_file(config_path), base);
    if (task) apply_config_entry(c, "task", *task);
    if (agents) apply_config_entry(c, "n_agents", std::to_string(*agents));
    if (activation) apply_config_entry(c, "activation", *activation);
    if (seed) c.seed = *seed;
    if (out) c.out_dir = *out;
    return c;
  }
};

void print_metrics(const char* label, const EvalMetrics& m) {
  std::cout << label << ": reward/step " << m.mean_reward_per_step << " (se " << m.reward_standard_error()
            << ") success " << m.success_rate << " support " << m.mean_support_size << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive sparse attention communication for multiagent PPO"};
  app.require_subcommand(1);

  Overrides train_opts;
  std::string resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a policy with PPO");
  train_opts.add_to(train);
  train->add_option("--checkpoint", resume, "resume from this checkpoint");
  train->add_flag("--quiet", quiet, "only print the final summary");

  std::string eval_checkpoint;
  std::size_t eval_episodes = 100;
  std::uint64_t eval_seed = 12345;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the random baseline");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--out", eval_out, "directory for eval.json");

  std::vector<std::string> reds, blues;
  std::size_t match_episodes = 50;
  std::uint64_t match_seed = 7;
  std::size_t match_agents = 4;
  std::string match_out;
  auto* compete = app.add_subcommand("compete", "play soccer matches between checkpoints or stubs");
  compete->add_option("--red", reds, "red competitors (checkpoints, stub:noop, stub:attacker)")->required();
  compete->add_option("--blue", blues, "blue competitors")->required();
  compete->add_option("--episodes", match_episodes, "episodes per pairing");
  compete->add_option("--seed", match_seed, "match seed");
  compete->add_option("--agents", match_agents, "team size x2 when every competitor is a stub");
  compete->add_option("--out", match_out, "directory for report.json");

  std::string graph_checkpoint;
  std::size_t graph_steps = 50;
  std::uint64_t graph_seed = 0;
  std::string graph_out = "graphs";
  auto* dump = app.add_subcommand("dump-graph", "write the attention graphs of a greedy rollout");
  dump->add_option("--checkpoint", graph_checkpoint, "checkpoint file")->required();
  dump->add_option("--steps", graph_steps, "environment steps");
  dump->add_option("--seed", graph_seed, "reset seed");
  dump->add_option("--out", graph_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      RunConfig config = train_opts.resolve();
      std::optional<fs::path> from;
      if (!resume.empty()) {
        const auto ck = load_checkpoint(resume);
        // The checkpoint supplies the run; command-line overrides still apply.
        config = train_opts.resolve(ck.config);
        from = resume;
      }
      const auto result = run_train(config, from, quiet ? nullptr : &std::cout);
      std::cout << "trained " << result.progress.env_steps << " steps, " << result.progress.episodes
                << " episodes; final checkpoint " << result.final_checkpoint.string() << "\n";
    } else if (*eval) {
      const auto ck = load_checkpoint(eval_checkpoint);
      std::optional<fs::path> out;
      if (!eval_out.empty()) out = eval_out;
      const auto r = run_eval(ck, eval_episodes, eval_seed, out);
      print_metrics("policy", r.policy);
      print_metrics("random", r.random_baseline);
    } else if (*compete) {
      const auto report = run_compete(reds, blues, match_episodes, match_seed, TaskSpec::make(Task::soccer, match_agents));
      for (const auto& c : report.cells) {
        std::cout << c.red << " vs " << c.blue << ": red " << c.red_wins << " blue " << c.blue_wins << " draw "
                  << c.draws << "\n";
      }
      if (!match_out.empty()) {
        prepare_output_dir(match_out);
        std::ofstream(fs::path(match_out) / "report.json", std::ios::trunc) << report_json(report).dump(2) << '\n';
      }
    } else if (*dump) {
      const auto ck = load_checkpoint(graph_checkpoint);
      const auto s = dump_graph(ck, graph_seed, graph_steps, graph_out);
      std::cout << "wrote " << s.matrices << " matrices; mean support " << s.mean_support_size;
      if (s.inter_team_mass_fraction) std::cout << "; inter-team mass " << *s.inter_team_mass_fraction;
      std::cout << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
