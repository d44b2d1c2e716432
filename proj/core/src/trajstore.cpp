#include "flowdistill/trajstore.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "flowdistill/rng.hpp"

namespace flowdistill::trajstore {

using nlohmann::json;

TrajectoryStore::TrajectoryStore(StoreMetadata meta, std::vector<Trajectory> trajectories)
    : meta_(meta), trajectories_(std::move(trajectories)) {
  if (meta_.steps < 1 || meta_.dim < 1) throw ConfigError("TrajectoryStore: invalid grid or dimension");
  if (meta_.count != trajectories_.size()) {
    throw ConfigError("TrajectoryStore: metadata count does not match trajectory count");
  }
  for (const auto& t : trajectories_) {
    if (t.states.rows() != meta_.dim || t.states.cols() != meta_.steps + 1) {
      throw ConfigError("TrajectoryStore: trajectory shape does not match metadata");
    }
    if (t.teacher_fingerprint != meta_.teacher_fingerprint) {
      throw ConfigError("TrajectoryStore: trajectories must share one teacher fingerprint");
    }
  }
}

Matrix TrajectoryStore::states_at(int j) const {
  if (j < 0 || j > meta_.steps) throw UsageError("TrajectoryStore: grid index out of range");
  Matrix out(meta_.dim, static_cast<Eigen::Index>(trajectories_.size()));
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = trajectories_[i].states.col(j);
  }
  return out;
}

Matrix TrajectoryStore::gather(std::span<const std::size_t> indices, int j) const {
  if (j < 0 || j > meta_.steps) throw UsageError("TrajectoryStore: grid index out of range");
  Matrix out(meta_.dim, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    out.col(static_cast<Eigen::Index>(c)) = trajectories_.at(indices[c]).states.col(j);
  }
  return out;
}

bool operator==(const TrajectoryStore& a, const TrajectoryStore& b) {
  if (!(a.meta_ == b.meta_)) return false;
  for (std::size_t i = 0; i < a.trajectories_.size(); ++i) {
    const auto& x = a.trajectories_[i];
    const auto& y = b.trajectories_[i];
    if (x.noise_seed != y.noise_seed || x.teacher_fingerprint != y.teacher_fingerprint) return false;
    if (x.states.size() != y.states.size()) return false;
    // Exact comparison; NaN never appears in a valid store.
    if ((x.states.array() != y.states.array()).any()) return false;
  }
  return true;
}

std::uint64_t noise_seed(std::uint64_t store_seed, std::size_t index) {
  return derive_seed(derive_seed(store_seed, "trajstore.noise"), static_cast<std::uint64_t>(index));
}

Vector noise_from_seed(int dim, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(dim, 1, rng).col(0);
}

TrajectoryStore generate_store(const nn::VelocityModel& teacher, std::size_t count,
                               const flow::TimeGrid& grid, std::uint64_t seed) {
  if (count < 1) throw ConfigError("generate_store: N must be >= 1");
  const int d = teacher.dim();
  const auto fp = teacher.params().fingerprint();

  std::vector<std::uint64_t> seeds(count);
  Matrix noise(d, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    seeds[i] = noise_seed(seed, i);
    noise.col(static_cast<Eigen::Index>(i)) = noise_from_seed(d, seeds[i]);
  }
  const auto path = flow::denoise(teacher, noise, grid);

  std::vector<Trajectory> trajectories(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& traj = trajectories[i];
    traj.states.resize(d, grid.steps() + 1);
    for (int j = 0; j <= grid.steps(); ++j) {
      traj.states.col(j) = path[static_cast<std::size_t>(j)].col(static_cast<Eigen::Index>(i));
    }
    traj.noise_seed = seeds[i];
    traj.teacher_fingerprint = fp;
  }
  StoreMetadata meta{1, count, grid.steps(), d, fp, seed};
  return TrajectoryStore(meta, std::move(trajectories));
}

void validate_store(const TrajectoryStore& store, const nn::VelocityModel& teacher, double tolerance) {
  const auto fp = teacher.params().fingerprint();
  if (store.metadata().teacher_fingerprint != fp) {
    throw IntegrityError("trajectory store fingerprint " + nn::fingerprint_hex(store.metadata().teacher_fingerprint) +
                         " does not match teacher " + nn::fingerprint_hex(fp));
  }
  if (teacher.dim() != store.dim()) throw IntegrityError("trajectory store dimension does not match teacher");
  const auto grid = store.grid();
  const int n = grid.steps();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& traj = store[i];
    if ((traj.states.col(n).array() != noise_from_seed(store.dim(), traj.noise_seed).array()).any()) {
      throw IntegrityError("trajectory " + std::to_string(i) + ": first state does not reproduce its noise seed");
    }
  }
  for (int j = n; j > 0; --j) {
    const Matrix x = store.states_at(j);
    const Matrix expected = x + (grid.time(j - 1) - grid.time(j)) * teacher.velocity(x, grid.time(j));
    const Matrix err = (store.states_at(j - 1) - expected).cwiseAbs();
    Eigen::Index row = 0, col = 0;
    if (err.maxCoeff(&row, &col) > tolerance) {
      throw IntegrityError("trajectory " + std::to_string(col) + " violates the Euler recurrence at step " +
                           std::to_string(j));
    }
  }
}

namespace {

json states_to_json(const Matrix& states) {
  json arr = json::array();
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    json col = json::array();
    for (Eigen::Index r = 0; r < states.rows(); ++r) col.push_back(states(r, j));
    arr.push_back(std::move(col));
  }
  return arr;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw ParseError("trajectory store line " + std::to_string(line) + ": " + what);
}

std::uint64_t parse_hex(const std::string& s, std::size_t line) {
  if (s.empty() || s.size() > 16) fail(line, "malformed teacher_fingerprint");
  std::uint64_t v = 0;
  for (const char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else fail(line, "malformed teacher_fingerprint");
  }
  return v;
}

}  // namespace

void save_store(const TrajectoryStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  const auto& m = store.metadata();
  json header = {{"version", m.version},
                 {"N", m.count},
                 {"n", m.steps},
                 {"d", m.dim},
                 {"teacher_fingerprint", nn::fingerprint_hex(m.teacher_fingerprint)},
                 {"seed", m.seed}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < store.size(); ++i) {
    json rec = {{"index", i}, {"noise_seed", store[i].noise_seed}, {"states", states_to_json(store[i].states)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw ConfigError("failed writing " + path.string());
}

TrajectoryStore load_store(const std::filesystem::path& path, const nn::VelocityModel* teacher) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open trajectory store " + path.string());

  std::string text;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, text)) return false;
    ++line_no;
    return true;
  };
  auto parse = [&]() -> json {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      fail(line_no, std::string("invalid JSON: ") + e.what());
    }
  };

  if (!next_line()) fail(1, "missing header");
  StoreMetadata meta;
  try {
    const json h = parse();
    meta.version = h.at("version").get<int>();
    meta.count = h.at("N").get<std::size_t>();
    meta.steps = h.at("n").get<int>();
    meta.dim = h.at("d").get<int>();
    meta.teacher_fingerprint = parse_hex(h.at("teacher_fingerprint").get<std::string>(), line_no);
    meta.seed = h.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(line_no, std::string("bad header: ") + e.what());
  }
  if (meta.version != 1) fail(line_no, "unsupported version " + std::to_string(meta.version));
  if (meta.steps < 1 || meta.dim < 1) fail(line_no, "header has invalid n or d");

  std::vector<Trajectory> trajectories;
  trajectories.reserve(meta.count);
  while (next_line()) {
    if (text.empty()) continue;
    if (trajectories.size() == meta.count) fail(line_no, "more records than the header's N");
    const json rec = parse();
    Trajectory traj;
    try {
      if (rec.at("index").get<std::size_t>() != trajectories.size()) fail(line_no, "record index out of order");
      traj.noise_seed = rec.at("noise_seed").get<std::uint64_t>();
      const auto& states = rec.at("states");
      if (!states.is_array() || states.size() != static_cast<std::size_t>(meta.steps) + 1) {
        fail(line_no, "expected n+1 states");
      }
      traj.states.resize(meta.dim, meta.steps + 1);
      for (int j = 0; j <= meta.steps; ++j) {
        const auto& col = states[static_cast<std::size_t>(j)];
        if (!col.is_array() || col.size() != static_cast<std::size_t>(meta.dim)) fail(line_no, "state has wrong dimension");
        for (int r = 0; r < meta.dim; ++r) traj.states(r, j) = col[static_cast<std::size_t>(r)].get<double>();
      }
    } catch (const json::exception& e) {
      fail(line_no, std::string("bad record: ") + e.what());
    }
    traj.teacher_fingerprint = meta.teacher_fingerprint;
    trajectories.push_back(std::move(traj));
  }
  if (trajectories.size() != meta.count) {
    fail(line_no + 1, "truncated store: expected " + std::to_string(meta.count) + " records, found " +
                          std::to_string(trajectories.size()));
  }
  TrajectoryStore store(meta, std::move(trajectories));
  if (teacher != nullptr) validate_store(store, *teacher);
  return store;
}

std::vector<Vector> key_points(const Trajectory& traj, const distill::KeySchedule& schedule) {
  const flow::TimeGrid grid(traj.steps());
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(schedule.intervals()) + 1);
  for (int k = schedule.intervals(); k >= 0; --k) {
    const auto j = grid.index_of(schedule.time(k));
    if (!j) throw ConfigError("key time " + std::to_string(schedule.time(k)) + " is not on the trajectory grid");
    out.push_back(traj.states.col(*j));
  }
  return out;
}

}  // namespace flowdistill::trajstore
