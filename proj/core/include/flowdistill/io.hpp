#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "flowdistill/adversarial.hpp"
#include "flowdistill/distill.hpp"
#include "flowdistill/flow.hpp"
#include "flowdistill/velocity_model.hpp"

// File formats. Every file is a single JSON document; tensors are stored
// row-major with shortest round-trip decimal doubles, so reloading is bit-exact.
namespace flowdistill::io {

/// Velocity model checkpoint: {"format": "flowdistill.params", "kind": "velocity_model", ...}.
void save_model(const nn::VelocityModel& model, const std::filesystem::path& path);
nn::VelocityModel load_model(const std::filesystem::path& path);

/// Projection heads share the ParamSet format with kind "projection_heads".
void save_heads(const std::vector<adversarial::ProjectionHead>& heads, const std::filesystem::path& path);
std::vector<adversarial::ProjectionHead> load_heads(const std::filesystem::path& path);

/// Full distillation state (models, optimizer moments, queues, RNG state, metrics).
void save_distill_state(const distill::DistillState& state, const std::filesystem::path& path);
distill::DistillState load_distill_state(const std::filesystem::path& path);

/// Canonical JSON text of a distillation config (used to match checkpoints to runs).
std::string distill_config_json(const distill::DistillConfig& config);

/// Exact textual form used for doubles in CSV output.
std::string format_double(double v);

void write_loss_csv(const std::vector<flow::LossRecord>& history, const std::filesystem::path& path);
/// iter,k,traj_loss,d_loss,g_loss,p_real,p_fake,adv_applied,q_0..q_m
void write_metrics_csv(const std::vector<distill::MetricsRow>& rows, int m, const std::filesystem::path& path);

/// Writes `contents` to `path` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace flowdistill::io
