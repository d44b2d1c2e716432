#include "flowdistill/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_convert.hpp"

namespace flowdistill {
namespace detail {

json params_to_json(const nn::ParamSet& params) {
  json tensors = json::array();
  for (const auto& t : params.tensors()) {
    json data = json::array();
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) data.push_back(t.value(r, c));
    }
    tensors.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}, {"data", std::move(data)}});
  }
  return tensors;
}

nn::ParamSet params_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("tensors must be an array");
  nn::ParamSet out;
  for (const auto& t : j) {
    const auto name = t.at("name").get<std::string>();
    const auto& shape = t.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw ParseError("tensor '" + name + "': shape must be [rows, cols]");
    const auto rows = shape[0].get<Eigen::Index>();
    const auto cols = shape[1].get<Eigen::Index>();
    const auto& data = t.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() || data.size() != static_cast<std::size_t>(rows * cols)) {
      throw ParseError("tensor '" + name + "': element count does not match shape");
    }
    Matrix m(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
    }
    out.add(name, std::move(m));
  }
  return out;
}

json arch_to_json(const nn::Architecture& arch) {
  return {{"d", arch.dim}, {"hidden", arch.hidden}, {"blocks", arch.blocks}};
}

nn::Architecture arch_from_json(const json& j) {
  reject_unknown_keys(j, {"d", "hidden", "blocks"}, "model");
  nn::Architecture a;
  a.dim = j.value("d", a.dim);
  a.hidden = j.value("hidden", a.hidden);
  a.blocks = j.value("blocks", a.blocks);
  return a;
}

json optimizer_to_json(const nn::OptimizerState& s) {
  return {{"lr", s.config.lr},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"eps", s.config.eps},
          {"weight_decay", s.config.weight_decay},
          {"step", s.step},
          {"first_moment", params_to_json(s.first_moment)},
          {"second_moment", params_to_json(s.second_moment)}};
}

nn::OptimizerState optimizer_from_json(const json& j) {
  nn::OptimizerState s;
  s.config.lr = j.at("lr").get<double>();
  s.config.beta1 = j.at("beta1").get<double>();
  s.config.beta2 = j.at("beta2").get<double>();
  s.config.eps = j.at("eps").get<double>();
  s.config.weight_decay = j.at("weight_decay").get<double>();
  s.step = j.at("step").get<std::int64_t>();
  s.first_moment = params_from_json(j.at("first_moment"));
  s.second_moment = params_from_json(j.at("second_moment"));
  return s;
}

json taps_to_json(const adversarial::FeatureTapConfig& taps) {
  return {{"noisy_block", taps.noisy_block}, {"clean_block", taps.clean_block}};
}

adversarial::FeatureTapConfig taps_from_json(const json& j) {
  reject_unknown_keys(j, {"noisy_block", "clean_block"}, "distill.taps");
  return {j.at("noisy_block").get<int>(), j.at("clean_block").get<int>()};
}

json distill_config_to_json(const distill::DistillConfig& c) {
  json j = {{"m", c.m},
            {"n", c.n},
            {"lambda_adv", c.lambda_adv},
            {"student_lr", c.student_lr},
            {"head_lr", c.head_lr},
            {"traj_batch", c.traj_batch},
            {"adv_batch", c.adv_batch},
            {"rounds", c.rounds},
            {"seed", c.seed},
            {"queue_capacity", c.queue_capacity},
            {"single_head", c.single_head},
            {"real_source", c.real_source == distill::RealLatentSource::Queued ? "queued" : "fresh"},
            {"generator_loss",
             c.generator_loss == adversarial::GeneratorLoss::NonSaturating ? "non_saturating" : "minimax"}};
  j["taps"] = c.taps ? taps_to_json(*c.taps) : json(nullptr);
  return j;
}

distill::DistillConfig distill_config_from_json(const json& j, distill::DistillConfig c) {
  reject_unknown_keys(j,
                      {"m", "n", "lambda_adv", "student_lr", "head_lr", "traj_batch", "adv_batch", "rounds", "seed",
                       "queue_capacity", "single_head", "real_source", "generator_loss", "taps"},
                      "distill");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("distill.") + key + ": wrong type");
    }
  };
  get("m", c.m);
  get("n", c.n);
  get("lambda_adv", c.lambda_adv);
  get("student_lr", c.student_lr);
  get("head_lr", c.head_lr);
  get("traj_batch", c.traj_batch);
  get("adv_batch", c.adv_batch);
  get("rounds", c.rounds);
  get("seed", c.seed);
  get("queue_capacity", c.queue_capacity);
  get("single_head", c.single_head);
  if (j.contains("real_source")) {
    const auto s = j.at("real_source").get<std::string>();
    if (s == "queued") c.real_source = distill::RealLatentSource::Queued;
    else if (s == "fresh") c.real_source = distill::RealLatentSource::Fresh;
    else throw ConfigError("distill.real_source: expected \"queued\" or \"fresh\"");
  }
  if (j.contains("generator_loss")) {
    const auto s = j.at("generator_loss").get<std::string>();
    if (s == "non_saturating") c.generator_loss = adversarial::GeneratorLoss::NonSaturating;
    else if (s == "minimax") c.generator_loss = adversarial::GeneratorLoss::Minimax;
    else throw ConfigError("distill.generator_loss: expected \"non_saturating\" or \"minimax\"");
  }
  if (j.contains("taps")) {
    if (j.at("taps").is_null()) c.taps.reset();
    else c.taps = taps_from_json(j.at("taps"));
  }
  return c;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  std::istringstream is(s);
  Rng rng;
  is >> rng;
  if (!is) throw ParseError("malformed RNG state");
  return rng;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + "." + key + ": unknown field");
  }
}

}  // namespace detail

namespace io {

using detail::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void expect_kind(const json& j, const std::string& kind, const std::filesystem::path& path) {
  if (j.value("format", "") != "flowdistill.params" || j.value("kind", "") != kind) {
    throw ParseError(path.string() + ": not a " + kind + " file");
  }
  if (j.value("version", 0) != 1) throw ParseError(path.string() + ": unsupported version");
}

json entry_to_json(const distill::QueueEntry& e) {
  json keys = json::array();
  for (const auto& k : e.real_keys) keys.push_back(std::vector<double>(k.data(), k.data() + k.size()));
  return {{"generated", std::vector<double>(e.generated.data(), e.generated.data() + e.generated.size())},
          {"real_keys", std::move(keys)},
          {"source", e.source},
          {"key_index", e.key_index}};
}

Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out) throw ConfigError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const nn::VelocityModel& model, const std::filesystem::path& path) {
  json j = {{"format", "flowdistill.params"},
            {"version", 1},
            {"kind", "velocity_model"},
            {"architecture", detail::arch_to_json(model.architecture())},
            {"fingerprint", nn::fingerprint_hex(model.params().fingerprint())},
            {"tensors", detail::params_to_json(model.params())}};
  write_file_atomic(path, j.dump() + "\n");
}

nn::VelocityModel load_model(const std::filesystem::path& path) {
  const json j = read_json(path);
  expect_kind(j, "velocity_model", path);
  try {
    return nn::VelocityModel(detail::arch_from_json(j.at("architecture")), detail::params_from_json(j.at("tensors")));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_heads(const std::vector<adversarial::ProjectionHead>& heads, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& h : heads) arr.push_back({{"index", h.index()}, {"tensors", detail::params_to_json(h.params())}});
  json j = {{"format", "flowdistill.params"}, {"version", 1}, {"kind", "projection_heads"}, {"heads", std::move(arr)}};
  write_file_atomic(path, j.dump() + "\n");
}

std::vector<adversarial::ProjectionHead> load_heads(const std::filesystem::path& path) {
  const json j = read_json(path);
  expect_kind(j, "projection_heads", path);
  std::vector<adversarial::ProjectionHead> heads;
  try {
    for (const auto& h : j.at("heads")) {
      heads.emplace_back(h.at("index").get<int>(), detail::params_from_json(h.at("tensors")));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return heads;
}

void save_distill_state(const distill::DistillState& s, const std::filesystem::path& path) {
  json heads = json::array();
  for (std::size_t i = 0; i < s.heads.size(); ++i) {
    heads.push_back({{"index", s.heads[i].index()},
                     {"tensors", detail::params_to_json(s.heads[i].params())},
                     {"optimizer", detail::optimizer_to_json(s.head_opts[i])}});
  }
  json queues = json::array();
  for (int k = 0; k <= s.queues.intervals(); ++k) {
    json q = json::array();
    for (const auto& e : s.queues.queue(k)) q.push_back(entry_to_json(e));
    queues.push_back(std::move(q));
  }
  json metrics = json::array();
  for (const auto& r : s.metrics) {
    metrics.push_back({r.round, r.k, r.traj_loss, r.adv_applied, r.d_loss, r.g_loss, r.p_real, r.p_fake,
                       r.queue_sizes});
  }
  json j = {{"format", "flowdistill.params"},
            {"version", 1},
            {"kind", "distill_state"},
            {"config", detail::distill_config_to_json(s.config)},
            {"rounds_done", s.rounds_done},
            {"student",
             {{"architecture", detail::arch_to_json(s.student.architecture())},
              {"tensors", detail::params_to_json(s.student.params())},
              {"optimizer", detail::optimizer_to_json(s.student_opt)}}},
            {"heads", std::move(heads)},
            {"queue_capacity", s.queues.capacity()},
            {"queues", std::move(queues)},
            {"traj_rng", detail::rng_to_string(s.traj_rng)},
            {"noise_rng", detail::rng_to_string(s.noise_rng)},
            {"metrics", std::move(metrics)}};
  write_file_atomic(path, j.dump() + "\n");
}

distill::DistillState load_distill_state(const std::filesystem::path& path) {
  const json j = read_json(path);
  expect_kind(j, "distill_state", path);
  try {
    const auto config = detail::distill_config_from_json(j.at("config"), {});
    const auto& st = j.at("student");
    nn::VelocityModel student(detail::arch_from_json(st.at("architecture")), detail::params_from_json(st.at("tensors")));
    auto student_opt = detail::optimizer_from_json(st.at("optimizer"));
    std::vector<adversarial::ProjectionHead> heads;
    std::vector<nn::OptimizerState> head_opts;
    for (const auto& h : j.at("heads")) {
      heads.emplace_back(h.at("index").get<int>(), detail::params_from_json(h.at("tensors")));
      head_opts.push_back(detail::optimizer_from_json(h.at("optimizer")));
    }
    distill::LatentQueues queues(config.m, j.at("queue_capacity").get<std::size_t>());
    const auto& qs = j.at("queues");
    for (int k = 0; k <= config.m; ++k) {
      for (const auto& e : qs.at(static_cast<std::size_t>(k))) {
        distill::QueueEntry entry;
        entry.generated = vector_from_json(e.at("generated"));
        for (const auto& key : e.at("real_keys")) entry.real_keys.push_back(vector_from_json(key));
        entry.source = e.at("source").get<std::size_t>();
        entry.key_index = e.at("key_index").get<int>();
        queues.push(k, std::move(entry));
      }
    }
    std::vector<distill::MetricsRow> metrics;
    for (const auto& r : j.at("metrics")) {
      metrics.push_back(distill::MetricsRow{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<double>(),
                                            r.at(3).get<bool>(), r.at(4).get<double>(), r.at(5).get<double>(),
                                            r.at(6).get<double>(), r.at(7).get<double>(),
                                            r.at(8).get<std::vector<std::size_t>>()});
    }
    return distill::DistillState{config,
                                 j.at("rounds_done").get<int>(),
                                 std::move(student),
                                 std::move(student_opt),
                                 std::move(heads),
                                 std::move(head_opts),
                                 std::move(queues),
                                 detail::rng_from_string(j.at("traj_rng").get<std::string>()),
                                 detail::rng_from_string(j.at("noise_rng").get<std::string>()),
                                 std::move(metrics)};
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string distill_config_json(const distill::DistillConfig& config) {
  return detail::distill_config_to_json(config).dump();
}

std::string format_double(double v) { return json(v).dump(); }

void write_loss_csv(const std::vector<flow::LossRecord>& history, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "iteration,loss\n";
  for (const auto& r : history) os << r.iteration << ',' << format_double(r.loss) << '\n';
  write_file_atomic(path, os.str());
}

void write_metrics_csv(const std::vector<distill::MetricsRow>& rows, int m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "iter,k,traj_loss,d_loss,g_loss,p_real,p_fake,adv_applied";
  for (int k = 0; k <= m; ++k) os << ",q_" << k;
  os << '\n';
  for (const auto& r : rows) {
    os << r.round << ',' << r.k << ',' << format_double(r.traj_loss) << ',' << format_double(r.d_loss) << ','
       << format_double(r.g_loss) << ',' << format_double(r.p_real) << ',' << format_double(r.p_fake) << ','
       << (r.adv_applied ? 1 : 0);
    for (const auto q : r.queue_sizes) os << ',' << q;
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace io
}  // namespace flowdistill
