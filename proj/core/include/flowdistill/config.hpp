#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowdistill/analysis.hpp"
#include "flowdistill/distill.hpp"
#include "flowdistill/flow.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill {

inline constexpr int kRunConfigSchema = 1;

struct DatasetSpec {
  int dim = 1;
  std::vector<std::vector<double>> support = {{-3.0}, {3.0}};

  [[nodiscard]] flow::ToyDataset dataset() const;
};

struct TeacherSection {
  int iterations = 10000;
  int batch_size = 2048;
  double lr = 1e-4;
};

struct StoreSection {
  int count = 4096;
  int steps = 50;
};

struct AnalysisSection {
  analysis::UselessMode mode = analysis::UselessMode::Trajectory;
  double epsilon = 0.1;
  int t_samples = 4096;
  std::vector<double> mismatch = {0.0, 1.0, 2.0, 4.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int eval_samples = 4096;
};

/// Everything a run needs besides its input artifacts.
struct RunConfig {
  int schema = kRunConfigSchema;
  std::string name = "toy";
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetSpec dataset;
  nn::Architecture model;
  TeacherSection teacher;
  StoreSection store;
  distill::DistillConfig distill;
  int checkpoint_every = 100;  // distillation rounds between state checkpoints; 0 disables
  analysis::KdConfig kd;
  AnalysisSection analysis;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  // Per-stage seeds, all derived from `seed`.
  [[nodiscard]] std::uint64_t teacher_seed() const noexcept;
  [[nodiscard]] std::uint64_t store_seed() const noexcept;
  [[nodiscard]] std::uint64_t distill_seed() const noexcept;
  [[nodiscard]] std::uint64_t kd_seed() const noexcept;
  [[nodiscard]] std::uint64_t sample_seed() const noexcept;

  [[nodiscard]] flow::TeacherTrainConfig teacher_config() const;
  /// DistillConfig with n, seed and the store grid filled in.
  [[nodiscard]] distill::DistillConfig distill_config() const;
  [[nodiscard]] analysis::KdConfig kd_config() const;
  [[nodiscard]] analysis::SweepConfig sweep_config() const;
};

/// Parses JSON text; fields absent from the document keep their defaults.
/// Each override is "dotted.key=value"; the value is read as JSON when it parses, else as a string.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
/// Empty path means defaults plus overrides.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
std::string dump_run_config(const RunConfig& config);

}  // namespace flowdistill
