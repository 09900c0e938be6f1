// SPDX-License-Identifier: Apache-2.0
//
// ces: train / eval / shape / sweep, plus gen-questions and pretrain helpers.
// Exit codes: 0 success, 2 invalid config or input, 3 runtime failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ces/ces.hpp"

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitRuntime = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_grid(const std::string& text, const char* name) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw InputError(std::string(name) + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw InputError(std::string(name) + " is empty");
  return out;
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

// Flags shared by commands that take a run config. Unset flags leave the
// config value alone.
struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<long long> total_samples;
  std::optional<double> tau, beta1, beta2, lr;
  std::optional<int> threads;

  void add(CLI::App* cmd) {
    cmd->add_option("--mode", mode, "full-ces|remove-acc|detach|off|entropy-adv");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--total-samples", total_samples, "training samples to consume");
    cmd->add_option("--tau", tau, "base top-rate");
    cmd->add_option("--beta1", beta1, "penalty scale on correct responses");
    cmd->add_option("--beta2", beta2, "bonus scale on incorrect responses");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--threads", threads, "worker threads");
  }

  void apply(ces::RunConfig& c) const {
    if (mode) {
      try {
        c.train.shaping.mode = ces::shaping_mode_from_string(*mode);
      } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
      }
    }
    if (seed) c.train.seed = *seed;
    if (total_samples) c.train.total_samples = *total_samples;
    if (tau) c.train.shaping.tau = *tau;
    if (beta1) c.train.shaping.beta1 = *beta1;
    if (beta2) c.train.shaping.beta2 = *beta2;
    if (lr) c.train.learning_rate = *lr;
    if (threads) {
      c.train.threads = *threads;
      c.pretrain.config.threads = *threads;
      c.eval.config.threads = *threads;
    }
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
  }
};

ces::RunConfig load_config(const std::optional<std::string>& path, const Overrides* ov) {
  ces::RunConfig c = path ? ces::load_run_config(*path) : ces::RunConfig{};
  if (ov) ov->apply(c);
  return c;
}

ces::PolicyParams starting_policy(const ces::RunConfig& c, const std::optional<std::string>& init) {
  if (init) return ces::load_checkpoint(*init);
  return ces::initial_policy(c);
}

void print_summary(const ces::EvalReport& r) {
  std::printf("%-8s %10s %10s %10s\n", "tier", "questions", "accuracy", "length");
  for (const auto& [name, s] : {std::pair<const char*, const ces::Summary*>{"easy", &r.easy},
                                {"hard", &r.hard},
                                {"overall", &r.overall}})
    std::printf("%-8s %10d %10.4f %10.3f\n", name, s->questions, s->accuracy, s->mean_length);
}

void print_strata(const ces::StratifiedComparison& c) {
  std::printf("%-10s %10s %10s %10s %10s %10s\n", "stratum", "questions", "base_acc", "new_acc", "base_len", "delta_len");
  for (const auto& [name, s] : {std::pair<const char*, const ces::StratumComparison*>{"simple", &c.simple},
                                {"difficult", &c.difficult},
                                {"overall", &c.overall}})
    std::printf("%-10s %10d %10.4f %10.4f %10.3f %+10.3f\n", name, s->questions, s->baseline_accuracy,
                s->new_accuracy, s->baseline_length, s->length_delta);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional entropy shaping on synthetic modular-sum tasks"};
  app.require_subcommand(1);
  app.footer(
      "Flags given on the command line override the corresponding config file values.\n"
      "Exit codes: 0 success, 2 invalid config or input, 3 runtime failure.");

  // train
  auto* train = app.add_subcommand("train", "Train from the configured starting policy");
  std::optional<std::string> train_config, train_init, train_dump;
  std::string train_metrics, train_ckpt = "final.ckpt";
  Overrides train_ov;
  train->add_option("--config", train_config, "run config (JSON)")->required();
  train->add_option("--metrics", train_metrics, "metrics output, one JSON record per step")->required();
  train->add_option("--checkpoint", train_ckpt, "final parameters output")->capture_default_str();
  train->add_option("--init-checkpoint", train_init, "start from this checkpoint instead of pretraining");
  train->add_option("--dump-rollouts", train_dump, "write every sampled response as JSON records");
  train_ov.add(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a question set");
  std::string eval_ckpt, eval_questions, eval_out;
  std::optional<std::string> eval_config, eval_baseline;
  std::optional<int> eval_generations;
  std::optional<double> eval_temperature;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--checkpoint", eval_ckpt, "policy checkpoint")->required();
  eval->add_option("--questions", eval_questions, "question set (JSON records)")->required();
  eval->add_option("--out", eval_out, "report output")->required();
  eval->add_option("--baseline-report", eval_baseline, "baseline report for difficulty stratification");
  eval->add_option("--config", eval_config, "run config supplying the eval section");
  eval->add_option("--generations", eval_generations, "responses per question");
  eval->add_option("--temperature", eval_temperature, "sampling temperature");
  eval->add_option("--seed", eval_seed, "sampling seed");

  // shape
  auto* shape = app.add_subcommand("shape", "Shape advantages of a rollout dump");
  std::string shape_in, shape_out, shape_mode = "full-ces";
  ces::ShapingConfig shape_cfg;
  shape->add_option("--rollouts", shape_in, "rollout dump (JSON records)")->required();
  shape->add_option("--out", shape_out, "shaped advantage records")->required();
  shape->add_option("--tau", shape_cfg.tau, "base top-rate")->capture_default_str();
  shape->add_option("--beta1", shape_cfg.beta1, "penalty scale on correct responses")->capture_default_str();
  shape->add_option("--beta2", shape_cfg.beta2, "bonus scale on incorrect responses")->capture_default_str();
  shape->add_option("--mode", shape_mode, "full-ces|remove-acc|detach|off|entropy-adv")->capture_default_str();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate one model per (tau, beta) cell");
  std::optional<std::string> sweep_config, sweep_init;
  std::string sweep_out, sweep_taus = join(ces::kDefaultTauGrid), sweep_betas = join(ces::kDefaultBetaGrid);
  Overrides sweep_ov;
  sweep->add_option("--config", sweep_config, "run config (JSON)")->required();
  sweep->add_option("--out", sweep_out, "sweep table output (JSON records)")->required();
  sweep->add_option("--tau-grid", sweep_taus, "comma-separated tau values")->capture_default_str();
  sweep->add_option("--beta-grid", sweep_betas, "comma-separated beta values (beta1 = beta2)")->capture_default_str();
  sweep->add_option("--init-checkpoint", sweep_init, "start every cell from this checkpoint");
  sweep_ov.add(sweep);

  // gen-questions
  auto* gen = app.add_subcommand("gen-questions", "Write a frozen question set");
  std::uint64_t gen_seed = 97;
  int gen_count = 500;
  std::string gen_tier = "mixed", gen_out;
  gen->add_option("--seed", gen_seed, "question seed")->capture_default_str();
  gen->add_option("--count", gen_count, "number of questions")->capture_default_str();
  gen->add_option("--tier", gen_tier, "easy|hard|mixed")->capture_default_str();
  gen->add_option("--out", gen_out, "output path")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Fit the verbose-correct starting policy and save it");
  std::optional<std::string> pre_config;
  std::string pre_out;
  pre->add_option("--config", pre_config, "run config (JSON)")->required();
  pre->add_option("--out", pre_out, "checkpoint output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*train) {
      const auto cfg = load_config(train_config, &train_ov);
      const auto start = starting_policy(cfg, train_init);
      std::string metrics, dump;
      const auto res = ces::train_loop(cfg.train, start, [&](const ces::StepOutput& out) {
        metrics += ces::to_json(out.metrics).dump() + "\n";
        if (train_dump) dump += ces::rollouts_to_jsonl(out.metrics.step, out.batches);
      });
      ces::write_text_file(train_metrics, metrics);
      if (train_dump) ces::write_text_file(*train_dump, dump);
      ces::save_checkpoint(train_ckpt, res.params);
      if (!res.metrics.empty()) {
        const auto& m = res.metrics.back();
        std::printf("steps %zu samples %lld final length %.3f entropy %.4f accuracy %.4f\n", res.metrics.size(),
                    m.samples, m.mean_length, m.mean_entropy, m.mean_accuracy);
      } else {
        std::printf("steps 0\n");
      }
    } else if (*eval) {
      auto cfg = load_config(eval_config, nullptr);
      if (eval_generations) cfg.eval.config.generations = *eval_generations;
      if (eval_temperature) cfg.eval.config.temperature = *eval_temperature;
      if (eval_seed) cfg.eval.config.seed = *eval_seed;
      try {
        cfg.eval.config.validate();
      } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
      }
      const auto params = ces::load_checkpoint(eval_ckpt);
      const auto questions = ces::read_tasks(eval_questions);
      std::optional<ces::EvalReport> baseline;
      if (eval_baseline) baseline = ces::read_report(*eval_baseline);
      const auto rep = ces::evaluate(params, questions, cfg.eval.config);
      std::optional<ces::StratifiedComparison> strata;
      if (baseline) {
        try {
          strata = ces::stratify(*baseline, rep);
        } catch (const std::invalid_argument& e) {
          throw InputError(e.what());
        }
      }
      ces::write_text_file(eval_out, ces::report_to_jsonl(rep, strata ? &*strata : nullptr));
      print_summary(rep);
      if (strata) print_strata(*strata);
    } else if (*shape) {
      shape_cfg.mode = ces::shaping_mode_from_string(shape_mode);
      shape_cfg.validate();
      const auto groups = ces::read_rollout_dump(shape_in);
      std::string out;
      for (const auto& g : groups) out += ces::shaped_to_jsonl(g.step, g.batch, ces::shape_advantages(g.batch, shape_cfg));
      ces::write_text_file(shape_out, out);
      std::printf("groups %zu\n", groups.size());
    } else if (*sweep) {
      const auto taus = parse_grid(sweep_taus, "--tau-grid");
      const auto betas = parse_grid(sweep_betas, "--beta-grid");
      const auto cfg = load_config(sweep_config, &sweep_ov);
      const auto start = starting_policy(cfg, sweep_init);
      const auto questions = ces::question_set(cfg.eval);
      const auto res = ces::sweep(cfg, start, questions, taus, betas);
      std::string out;
      std::printf("%10s %10s %10s %10s\n", "tau", "beta", "accuracy", "length");
      for (const auto& c : res.cells) {
        nlohmann::json j{{"schema_version", ces::kSchemaVersion}, {"tau", c.tau}, {"beta", c.beta}, {"ok", c.ok}};
        if (c.ok) {
          j["accuracy"] = c.accuracy;
          j["mean_length"] = c.mean_length;
          std::printf("%10g %10g %10.4f %10.3f\n", c.tau, c.beta, c.accuracy, c.mean_length);
        } else {
          j["error"] = c.error;
          std::printf("%10g %10g %10s %10s\n", c.tau, c.beta, "failed", "-");
          std::fprintf(stderr, "cell tau=%g beta=%g failed: %s\n", c.tau, c.beta, c.error.c_str());
        }
        out += j.dump() + "\n";
      }
      ces::write_text_file(sweep_out, out);
      if (res.succeeded() == 0) {
        std::fprintf(stderr, "error: every sweep cell failed\n");
        return kExitRuntime;
      }
    } else if (*gen) {
      if (gen_count < 1) throw InputError("--count must be >= 1");
      const auto qs = ces::generate_question_set(gen_seed, gen_count, ces::tier_from_string(gen_tier));
      ces::write_text_file(gen_out, ces::tasks_to_jsonl(qs));
    } else if (*pre) {
      const auto cfg = load_config(pre_config, nullptr);
      ces::save_checkpoint(pre_out, ces::initial_policy(cfg));
    }
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const ces::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
