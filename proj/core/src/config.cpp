#include "flowdistill/config.hpp"

#include <fstream>
#include <sstream>

#include "flowdistill/errors.hpp"
#include "json_convert.hpp"

namespace flowdistill {

using detail::json;

namespace {

template <typename T>
void read_field(const json& section, const std::string& where, const char* key, T& target) {
  if (!section.contains(key)) return;
  try {
    section.at(key).get_to(target);
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

std::string mode_name(analysis::UselessMode m) {
  return m == analysis::UselessMode::Trajectory ? "trajectory" : "endpoint";
}

}  // namespace

flow::ToyDataset DatasetSpec::dataset() const {
  std::vector<Vector> points;
  for (const auto& p : support) points.push_back(Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size())));
  return flow::ToyDataset(dim, std::move(points));
}

void RunConfig::validate() const {
  if (schema != kRunConfigSchema) throw ConfigError("schema: unsupported version " + std::to_string(schema));
  if (dataset.dim < 1) throw ConfigError("dataset.dim: must be >= 1");
  if (dataset.support.empty()) throw ConfigError("dataset.support: must list at least one point");
  for (const auto& p : dataset.support) {
    if (p.size() != static_cast<std::size_t>(dataset.dim)) throw ConfigError("dataset.support: point has wrong dimension");
  }
  if (model.dim != dataset.dim) throw ConfigError("model.d: must equal dataset.dim");
  if (model.hidden < 2 || model.blocks < 1) throw ConfigError("model: hidden must be >= 2 and blocks >= 1");
  if (teacher.iterations < 1) throw ConfigError("teacher.iterations: must be >= 1");
  if (teacher.batch_size < 1) throw ConfigError("teacher.batch_size: must be >= 1");
  if (!(teacher.lr > 0.0)) throw ConfigError("teacher.lr: must be positive");
  if (store.count < 1) throw ConfigError("store.count: must be >= 1");
  if (store.steps < 1) throw ConfigError("store.steps: must be >= 1");
  if (distill.n != store.steps) throw ConfigError("distill.n: must equal store.steps");
  distill.validate(model);
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be >= 0");
  if (kd.windows < 1 || store.steps % kd.windows != 0) throw ConfigError("kd.windows: must divide store.steps");
  if (kd.pool_size < 1 || kd.batch_size < 1 || kd.iterations < 0) throw ConfigError("kd: sizes must be positive");
  if (!(kd.lr > 0.0)) throw ConfigError("kd.lr: must be positive");
  if (!(analysis.epsilon > 0.0)) throw ConfigError("analysis.epsilon: must be positive");
  if (analysis.t_samples < 1) throw ConfigError("analysis.t_samples: must be >= 1");
  if (analysis.mismatch.empty()) throw ConfigError("analysis.mismatch: sweep list is empty");
  for (const double m : analysis.mismatch) {
    if (!(m >= 0.0)) throw ConfigError("analysis.mismatch: values must be non-negative");
  }
  if (analysis.seeds.empty()) throw ConfigError("analysis.seeds: seed list is empty");
  if (analysis.eval_samples < 1) throw ConfigError("analysis.eval_samples: must be >= 1");
}

std::uint64_t RunConfig::teacher_seed() const noexcept { return derive_seed(seed, "teacher"); }
std::uint64_t RunConfig::store_seed() const noexcept { return derive_seed(seed, "store"); }
std::uint64_t RunConfig::distill_seed() const noexcept { return derive_seed(seed, "distill"); }
std::uint64_t RunConfig::kd_seed() const noexcept { return derive_seed(seed, "kd"); }
std::uint64_t RunConfig::sample_seed() const noexcept { return derive_seed(seed, "sample"); }

flow::TeacherTrainConfig RunConfig::teacher_config() const {
  flow::TeacherTrainConfig c;
  c.arch = model;
  c.iterations = teacher.iterations;
  c.batch_size = teacher.batch_size;
  c.lr = teacher.lr;
  c.seed = teacher_seed();
  return c;
}

distill::DistillConfig RunConfig::distill_config() const {
  auto c = distill;
  c.n = store.steps;
  c.seed = distill_seed();
  return c;
}

analysis::KdConfig RunConfig::kd_config() const {
  auto c = kd;
  c.n = store.steps;
  c.seed = kd_seed();
  return c;
}

analysis::SweepConfig RunConfig::sweep_config() const {
  analysis::SweepConfig c;
  c.mismatch = analysis.mismatch;
  c.seeds = analysis.seeds;
  c.useless.mode = analysis.mode;
  c.useless.epsilon = analysis.epsilon;
  c.useless.t_samples = analysis.t_samples;
  c.kd = kd_config();
  c.distill = distill_config();
  c.eval_samples = analysis.eval_samples;
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + o + "': empty key segment");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) throw ConfigError("override '" + o + "': " + part + " is not a section");
      node = &child;
      start = dot + 1;
    }
  }
  detail::reject_unknown_keys(j,
                              {"schema", "name", "seed", "output_dir", "dataset", "model", "teacher", "store",
                               "distill", "checkpoint_every", "kd", "analysis"},
                              "config");
  RunConfig c;
  read_field(j, "config", "schema", c.schema);
  if (c.schema != kRunConfigSchema) throw ConfigError("schema: unsupported version " + std::to_string(c.schema));
  read_field(j, "config", "name", c.name);
  read_field(j, "config", "seed", c.seed);
  read_field(j, "config", "output_dir", c.output_dir);
  read_field(j, "config", "checkpoint_every", c.checkpoint_every);

  if (j.contains("dataset")) {
    const auto& s = j.at("dataset");
    detail::reject_unknown_keys(s, {"dim", "support"}, "dataset");
    read_field(s, "dataset", "dim", c.dataset.dim);
    if (s.contains("support")) {
      const auto& pts = s.at("support");
      if (!pts.is_array()) throw ConfigError("dataset.support: expected an array");
      c.dataset.support.clear();
      for (const auto& p : pts) {
        try {
          c.dataset.support.push_back(p.is_number() ? std::vector<double>{p.get<double>()} : p.get<std::vector<double>>());
        } catch (const json::exception&) {
          throw ConfigError("dataset.support: points must be numbers or arrays of numbers");
        }
      }
    }
  }
  c.model.dim = c.dataset.dim;
  if (j.contains("model")) {
    const auto& s = j.at("model");
    detail::reject_unknown_keys(s, {"d", "hidden", "blocks"}, "model");
    read_field(s, "model", "d", c.model.dim);
    read_field(s, "model", "hidden", c.model.hidden);
    read_field(s, "model", "blocks", c.model.blocks);
  }
  if (j.contains("teacher")) {
    const auto& s = j.at("teacher");
    detail::reject_unknown_keys(s, {"iterations", "batch_size", "lr"}, "teacher");
    read_field(s, "teacher", "iterations", c.teacher.iterations);
    read_field(s, "teacher", "batch_size", c.teacher.batch_size);
    read_field(s, "teacher", "lr", c.teacher.lr);
  }
  if (j.contains("store")) {
    const auto& s = j.at("store");
    detail::reject_unknown_keys(s, {"count", "steps"}, "store");
    read_field(s, "store", "count", c.store.count);
    read_field(s, "store", "steps", c.store.steps);
  }
  c.distill.n = c.store.steps;
  if (j.contains("distill")) {
    const auto& s = j.at("distill");
    if (s.is_object() && s.contains("seed")) throw ConfigError("distill.seed: derived from the root seed, set \"seed\" instead");
    c.distill = detail::distill_config_from_json(s, c.distill);
  }
  if (j.contains("kd")) {
    const auto& s = j.at("kd");
    detail::reject_unknown_keys(s, {"windows", "pool_size", "iterations", "batch_size", "lr"}, "kd");
    read_field(s, "kd", "windows", c.kd.windows);
    read_field(s, "kd", "pool_size", c.kd.pool_size);
    read_field(s, "kd", "iterations", c.kd.iterations);
    read_field(s, "kd", "batch_size", c.kd.batch_size);
    read_field(s, "kd", "lr", c.kd.lr);
  }
  if (j.contains("analysis")) {
    const auto& s = j.at("analysis");
    detail::reject_unknown_keys(s, {"mode", "epsilon", "t_samples", "mismatch", "seeds", "eval_samples"}, "analysis");
    bool epsilon_given = s.contains("epsilon");
    if (s.contains("mode")) {
      std::string mode;
      read_field(s, "analysis", "mode", mode);
      if (mode == "trajectory") c.analysis.mode = analysis::UselessMode::Trajectory;
      else if (mode == "endpoint") c.analysis.mode = analysis::UselessMode::Endpoint;
      else throw ConfigError("analysis.mode: expected \"trajectory\" or \"endpoint\"");
      if (!epsilon_given) c.analysis.epsilon = analysis::UselessConfig::default_epsilon(c.analysis.mode);
    }
    read_field(s, "analysis", "epsilon", c.analysis.epsilon);
    read_field(s, "analysis", "t_samples", c.analysis.t_samples);
    read_field(s, "analysis", "mismatch", c.analysis.mismatch);
    read_field(s, "analysis", "seeds", c.analysis.seeds);
    read_field(s, "analysis", "eval_samples", c.analysis.eval_samples);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return parse_run_config("{}", overrides);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string dump_run_config(const RunConfig& c) {
  auto distill = detail::distill_config_to_json(c.distill);
  distill.erase("seed");
  json j = {{"schema", c.schema},
            {"name", c.name},
            {"seed", c.seed},
            {"output_dir", c.output_dir},
            {"dataset", {{"dim", c.dataset.dim}, {"support", c.dataset.support}}},
            {"model", detail::arch_to_json(c.model)},
            {"teacher", {{"iterations", c.teacher.iterations}, {"batch_size", c.teacher.batch_size}, {"lr", c.teacher.lr}}},
            {"store", {{"count", c.store.count}, {"steps", c.store.steps}}},
            {"distill", std::move(distill)},
            {"checkpoint_every", c.checkpoint_every},
            {"kd",
             {{"windows", c.kd.windows},
              {"pool_size", c.kd.pool_size},
              {"iterations", c.kd.iterations},
              {"batch_size", c.kd.batch_size},
              {"lr", c.kd.lr}}},
            {"analysis",
             {{"mode", mode_name(c.analysis.mode)},
              {"epsilon", c.analysis.epsilon},
              {"t_samples", c.analysis.t_samples},
              {"mismatch", c.analysis.mismatch},
              {"seeds", c.analysis.seeds},
              {"eval_samples", c.analysis.eval_samples}}}};
  return j.dump(2) + "\n";
}

}  // namespace flowdistill
