// flowdistill: command-line driver for the toy flow-matching distillation pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "flowdistill/analysis.hpp"
#include "flowdistill/config.hpp"
#include "flowdistill/distill.hpp"
#include "flowdistill/errors.hpp"
#include "flowdistill/flow.hpp"
#include "flowdistill/io.hpp"
#include "flowdistill/runtime.hpp"
#include "flowdistill/trajstore.hpp"

namespace fs = std::filesystem;
using namespace flowdistill;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run config (JSON); defaults are used when omitted");
  cmd->add_option("--set", c.overrides, "Override a config field, e.g. --set distill.rounds=200");
  cmd->add_option("--seed", c.seed, "Root seed (overrides config)");
  cmd->add_option("--out", c.out, "Output directory (overrides config)");
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  RunConfig cfg = load_run_config(c.config_path, overrides);
  if (!c.out.empty()) cfg.output_dir = c.out;
  Eigen::setNbThreads(c.threads);
  return cfg;
}

fs::path output_path(const RunConfig& cfg, const std::string& file, const std::vector<std::string>& inputs) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const fs::path target = dir / file;
  for (const auto& in : inputs) {
    if (!in.empty() && fs::exists(in) && fs::exists(target) && fs::equivalent(in, target)) {
      throw UsageError("refusing to overwrite input file " + in);
    }
  }
  return target;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " file not found: " + path);
}

std::string samples_csv(const Matrix& x, std::int64_t nfe, int steps) {
  std::ostringstream os;
  os << "# nfe=" << nfe << " steps=" << steps << '\n';
  os << "index";
  for (Eigen::Index r = 0; r < x.rows(); ++r) os << ",x" << r;
  os << '\n';
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    os << c;
    for (Eigen::Index r = 0; r < x.rows(); ++r) os << ',' << io::format_double(x(r, c));
    os << '\n';
  }
  return os.str();
}

int cmd_print_config(const Common& c) {
  std::cout << dump_run_config(resolve(c));
  return 0;
}

int cmd_train_teacher(const Common& c) {
  const RunConfig cfg = resolve(c);
  const auto result = flow::train_teacher(cfg.dataset.dataset(), cfg.teacher_config());
  const auto model_path = output_path(cfg, "teacher.json", {});
  io::save_model(result.model, model_path);
  io::write_loss_csv(result.history, output_path(cfg, "teacher_loss.csv", {}));
  std::cout << "teacher " << model_path.string() << " final_loss " << io::format_double(result.history.empty() ? 0.0 : result.history.back().loss) << '\n';
  return 0;
}

int cmd_synth(const Common& c, const std::string& teacher_path) {
  const RunConfig cfg = resolve(c);
  require_file(teacher_path, "teacher");
  const auto teacher = io::load_model(teacher_path);
  const auto store = trajstore::generate_store(teacher, static_cast<std::size_t>(cfg.store.count),
                                               flow::TimeGrid(cfg.store.steps), cfg.store_seed());
  trajstore::validate_store(store, teacher);
  const auto path = output_path(cfg, "store.jsonl", {teacher_path});
  trajstore::save_store(store, path);
  std::cout << "store " << path.string() << " N " << store.size() << " n " << cfg.store.steps << '\n';
  return 0;
}

int cmd_distill(const Common& c, const std::string& teacher_path, const std::string& store_path, bool no_adv,
                bool single_head, bool resume) {
  RunConfig cfg = resolve(c);
  if (no_adv) cfg.distill.lambda_adv = 0.0;
  if (single_head) cfg.distill.single_head = true;
  cfg.validate();
  require_file(teacher_path, "teacher");
  require_file(store_path, "store");
  const auto teacher = io::load_model(teacher_path);
  const auto store = trajstore::load_store(store_path, &teacher);
  const auto config = cfg.distill_config();
  const std::vector<std::string> inputs = {teacher_path, store_path};
  const auto state_path = output_path(cfg, "distill_state.json", inputs);

  distill::DistillState state = [&] {
    if (!resume || !fs::exists(state_path)) return distill::initial_state(teacher, config);
    auto loaded = io::load_distill_state(state_path);
    auto expected = config;
    expected.rounds = loaded.config.rounds;
    if (io::distill_config_json(expected) != io::distill_config_json(loaded.config)) {
      throw ConfigError("checkpoint " + state_path.string() + " was written with a different distill config");
    }
    loaded.config.rounds = config.rounds;
    return loaded;
  }();

  distill::Distiller distiller(teacher, store, std::move(state));
  while (distiller.state().rounds_done < config.rounds) {
    int next = config.rounds;
    if (cfg.checkpoint_every > 0) {
      next = std::min(config.rounds, (distiller.state().rounds_done / cfg.checkpoint_every + 1) * cfg.checkpoint_every);
    }
    distiller.run_until(next);
    if (next < config.rounds) io::save_distill_state(distiller.state(), state_path);
  }
  const auto& final_state = distiller.state();
  io::save_distill_state(final_state, state_path);
  io::save_model(final_state.student, output_path(cfg, "student.json", inputs));
  io::save_heads(final_state.heads, output_path(cfg, "heads.json", inputs));
  io::write_metrics_csv(final_state.metrics, config.m, output_path(cfg, "distill_metrics.csv", inputs));
  std::cout << "student " << (fs::path(cfg.output_dir) / "student.json").string() << " rounds " << final_state.rounds_done
            << '\n';
  return 0;
}

int cmd_kd(const Common& c, const std::string& teacher_path, double mismatch) {
  const RunConfig cfg = resolve(c);
  require_file(teacher_path, "teacher");
  const auto teacher = io::load_model(teacher_path);
  const auto p_d = analysis::shift_support(cfg.dataset.dataset(), mismatch);
  const auto result = analysis::kd_baseline_distill(teacher, p_d, cfg.kd_config());
  io::save_model(result.student, output_path(cfg, "kd_student.json", {teacher_path}));
  io::write_loss_csv(result.history, output_path(cfg, "kd_loss.csv", {teacher_path}));
  std::cout << "kd_student " << (fs::path(cfg.output_dir) / "kd_student.json").string() << " M "
            << io::format_double(analysis::mismatch_degree(p_d, cfg.dataset.dataset())) << '\n';
  return 0;
}

int cmd_analyze(const Common& c, const std::string& teacher_path, const std::string& store_path) {
  const RunConfig cfg = resolve(c);
  require_file(teacher_path, "teacher");
  require_file(store_path, "store");
  const auto teacher = io::load_model(teacher_path);
  const auto store = trajstore::load_store(store_path);
  const auto rows = analysis::run_sweep(teacher, store, cfg.dataset.dataset(), cfg.sweep_config());
  const auto path = output_path(cfg, "sweep.csv", {teacher_path, store_path});
  io::write_file_atomic(path, analysis::sweep_csv(rows));
  for (const double m : cfg.analysis.mismatch) {
    std::vector<double> useless;
    std::vector<double> kd;
    for (const auto& r : rows) {
      if (r.mismatch == m) {
        useless.push_back(r.useless_frequency);
        kd.push_back(r.kd_w1);
      }
    }
    if (useless.empty()) continue;
    std::cout << "M " << io::format_double(m) << " median_useless " << io::format_double(analysis::median(useless))
              << " median_kd_W1 " << io::format_double(analysis::median(kd)) << '\n';
  }
  return 0;
}

int cmd_sample(const Common& c, const std::string& model_path, int count, std::optional<int> steps) {
  const RunConfig cfg = resolve(c);
  require_file(model_path, "model");
  if (count < 1) throw UsageError("--count must be >= 1");
  const int s = steps.value_or(cfg.store.steps);
  if (s < 1) throw UsageError("--steps must be >= 1");
  const auto model = io::load_model(model_path);
  Rng rng(cfg.sample_seed());
  const Matrix z = standard_normal(model.dim(), count, rng);
  const auto result = distill::sample_student(model, distill::KeySchedule(s, s), z);
  const auto path = output_path(cfg, "samples.csv", {model_path});
  io::write_file_atomic(path, samples_csv(result.x0, result.nfe, s));
  std::cout << "samples " << path.string() << " nfe " << result.nfe << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& teacher_path, const std::string& model_path, std::optional<int> steps) {
  const RunConfig cfg = resolve(c);
  require_file(teacher_path, "teacher");
  require_file(model_path, "model");
  const auto teacher = io::load_model(teacher_path);
  const auto model = io::load_model(model_path);
  const int n = cfg.store.steps;
  const int m = steps.value_or(cfg.distill.m);
  if (m < 1) throw UsageError("--steps must be >= 1");
  const auto support = cfg.dataset.dataset();
  Rng rng(cfg.sample_seed());
  const Matrix z = standard_normal(teacher.dim(), cfg.analysis.eval_samples, rng);
  const auto ref = distill::sample_student(teacher, distill::KeySchedule(n, n), z);
  const auto got = distill::sample_student(model, distill::KeySchedule(m, m), z);

  std::ostringstream os;
  os << "label,steps,nfe,w1_to_teacher,endpoint_error,count\n";
  auto row = [&](const char* label, int s, const distill::SampleResult& r) {
    os << label << ',' << s << ',' << r.nfe << ','
       << (teacher.dim() == 1 ? io::format_double(analysis::w1_distance(r.x0, ref.x0)) : std::string("NA")) << ','
       << io::format_double(analysis::endpoint_error(r.x0, support)) << ',' << r.x0.cols() << '\n';
  };
  row("teacher", n, ref);
  row("model", m, got);
  const auto path = output_path(cfg, "eval.csv", {teacher_path, model_path});
  io::write_file_atomic(path, os.str());
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Flow-matching teacher training, trajectory distillation and mismatch analysis on toy data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "flowdistill 0.1.0");

  Common common;
  std::string teacher_path;
  std::string store_path;
  std::string model_path;
  bool no_adv = false;
  bool single_head = false;
  bool resume = false;
  double mismatch = 0.0;
  int count = 0;
  std::optional<int> steps;

  auto* print_config = app.add_subcommand("print-config", "Print the effective run config (schema v1)");
  add_common(print_config, common);

  auto* train = app.add_subcommand("train-teacher", "Train the flow-matching teacher");
  add_common(train, common);

  auto* synth = app.add_subcommand("synth", "Generate the teacher trajectory store");
  add_common(synth, common);
  synth->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();

  auto* dist = app.add_subcommand("distill", "Few-step distillation from the trajectory store");
  add_common(dist, common);
  dist->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  dist->add_option("--store", store_path, "Trajectory store")->required();
  dist->add_flag("--no-adv", no_adv, "Disable adversarial training (lambda_adv = 0)");
  dist->add_flag("--single-head", single_head, "Share one projection head across key timesteps");
  dist->add_flag("--resume", resume, "Continue from <out>/distill_state.json if present");

  auto* kd = app.add_subcommand("kd-baseline", "Window-based distillation from forward-diffused data");
  add_common(kd, common);
  kd->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  kd->add_option("--mismatch", mismatch, "Shift applied to the distillation dataset")->check(CLI::NonNegativeNumber);

  auto* analyze = app.add_subcommand("analyze-mismatch", "Useless-point and KD sweep over mismatch degrees");
  add_common(analyze, common);
  analyze->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  analyze->add_option("--store", store_path, "Trajectory store")->required();

  auto* sample = app.add_subcommand("sample", "Draw samples with uniform Euler steps");
  add_common(sample, common);
  sample->add_option("--model", model_path, "Model checkpoint")->required();
  sample->add_option("--count", count, "Number of samples")->required();
  sample->add_option("--steps", steps, "Euler steps (default store.steps)");

  auto* eval = app.add_subcommand("eval", "Compare a few-step model with the teacher");
  add_common(eval, common);
  eval->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  eval->add_option("--model", model_path, "Model checkpoint")->required();
  eval->add_option("--steps", steps, "Model Euler steps (default distill.m)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "flowdistill: error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*print_config) return cmd_print_config(common);
    if (*train) return cmd_train_teacher(common);
    if (*synth) return cmd_synth(common, teacher_path);
    if (*dist) return cmd_distill(common, teacher_path, store_path, no_adv, single_head, resume);
    if (*kd) return cmd_kd(common, teacher_path, mismatch);
    if (*analyze) return cmd_analyze(common, teacher_path, store_path);
    if (*sample) return cmd_sample(common, model_path, count, steps);
    if (*eval) return cmd_eval(common, teacher_path, model_path, steps);
  } catch (const ConfigError& e) {
    std::cerr << "flowdistill: config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "flowdistill: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "flowdistill: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
