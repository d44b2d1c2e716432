#include "flowdistill/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "flowdistill/errors.hpp"
#include "flowdistill/io.hpp"
#include "flowdistill/optimizer.hpp"

namespace flowdistill::analysis {

namespace {

// Plain loops keep the summation order fixed, so results do not depend on SIMD width.
double nearest_distance(const Matrix& points, const Eigen::Ref<const Vector>& x) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    double sq = 0.0;
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
      const double diff = points(r, c) - x(r);
      sq += diff * diff;
    }
    best = std::min(best, sq);
  }
  return std::sqrt(best);
}

void require_nonempty(const flow::ToyDataset& s, const char* what) {
  if (s.support().empty()) throw UsageError(std::string(what) + ": empty support");
}

}  // namespace

MismatchReport mismatch_report(const flow::ToyDataset& p_d, const flow::ToyDataset& p) {
  require_nonempty(p_d, "mismatch_degree");
  require_nonempty(p, "mismatch_degree");
  if (p_d.dim() != p.dim()) throw UsageError("mismatch_degree: supports have different dimensions");
  const Matrix reference = p.support_matrix();
  MismatchReport report;
  for (const auto& x : p_d.support()) {
    report.nearest.push_back(nearest_distance(reference, x));
    report.degree += report.nearest.back();
  }
  return report;
}

double mismatch_degree(const flow::ToyDataset& p_d, const flow::ToyDataset& p) { return mismatch_report(p_d, p).degree; }

flow::ToyDataset shift_support(const flow::ToyDataset& p, double amount) {
  require_nonempty(p, "shift_support");
  if (!(amount >= 0.0)) throw UsageError("shift_support: amount must be non-negative");
  const Matrix s = p.support_matrix();
  const Vector centroid = s.rowwise().mean();
  Eigen::Index far = 0;
  (s.colwise() - centroid).colwise().squaredNorm().maxCoeff(&far);
  Vector direction = s.col(far) - centroid;
  const double norm = direction.norm();
  if (norm > 0.0) {
    direction /= norm;
  } else {
    direction = Vector::Unit(p.dim(), 0);
  }
  std::vector<Vector> points = p.support();
  points[static_cast<std::size_t>(far)] += amount * direction;
  return flow::ToyDataset(p.dim(), std::move(points));
}

UselessSample draw_forward_points(const flow::ToyDataset& p_d, const flow::TimeGrid& grid, int count,
                                  std::uint64_t seed) {
  if (count < 1) throw UsageError("useless_frequency: t_samples must be >= 1");
  Rng rng(seed);
  const Matrix x0 = p_d.sample(count, rng);
  const Matrix x1 = standard_normal(p_d.dim(), count, rng);
  std::uniform_int_distribution<int> pick(0, grid.steps());
  UselessSample out;
  out.x.resize(p_d.dim(), count);
  out.grid.resize(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    const int j = pick(rng);
    const double t = grid.time(j);
    out.grid[static_cast<std::size_t>(c)] = j;
    out.x.col(c) = (1.0 - t) * x0.col(c) + t * x1.col(c);
  }
  return out;
}

std::vector<bool> classify_useless(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                                   const flow::ToyDataset& support, const UselessSample& points,
                                   UselessMode mode, double epsilon) {
  if (!(epsilon > 0.0)) throw UsageError("useless_frequency: epsilon must be positive");
  const auto count = static_cast<std::size_t>(points.x.cols());
  std::vector<bool> useless(count, false);
  const flow::TimeGrid grid = store.grid();

  // Columns grouped by grid index so each reference set is built once.
  std::vector<std::vector<Eigen::Index>> by_index(static_cast<std::size_t>(grid.steps()) + 1);
  for (std::size_t c = 0; c < count; ++c) by_index[static_cast<std::size_t>(points.grid[c])].push_back(static_cast<Eigen::Index>(c));

  if (mode == UselessMode::Trajectory) {
    if (store.size() == 0) throw UsageError("useless_frequency: empty trajectory store");
    for (int j = 0; j <= grid.steps(); ++j) {
      const auto& cols = by_index[static_cast<std::size_t>(j)];
      if (cols.empty()) continue;
      const Matrix reference = store.states_at(j);
      for (const auto c : cols) useless[static_cast<std::size_t>(c)] = nearest_distance(reference, points.x.col(c)) > epsilon;
    }
    return useless;
  }

  const Matrix targets = support.support_matrix();
  for (int j = 0; j <= grid.steps(); ++j) {
    const auto& cols = by_index[static_cast<std::size_t>(j)];
    if (cols.empty()) continue;
    Matrix batch(points.x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) batch.col(static_cast<Eigen::Index>(i)) = points.x.col(cols[i]);
    const Matrix landed = flow::integrate(teacher, batch, grid, j, 0);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      useless[static_cast<std::size_t>(cols[i])] = nearest_distance(targets, landed.col(static_cast<Eigen::Index>(i))) > epsilon;
    }
  }
  return useless;
}

double useless_frequency(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                         const flow::ToyDataset& p_d, const flow::ToyDataset& support, const UselessConfig& config) {
  const auto points = draw_forward_points(p_d, store.grid(), config.t_samples, config.seed);
  const auto flags = classify_useless(teacher, store, support, points, config.mode, config.epsilon);
  const auto hits = std::count(flags.begin(), flags.end(), true);
  return static_cast<double>(hits) / static_cast<double>(flags.size());
}

KdResult kd_baseline_distill(const nn::VelocityModel& teacher, const flow::ToyDataset& p_d, const KdConfig& config) {
  if (config.windows < 1) throw ConfigError("kd: windows must be >= 1");
  if (config.n % config.windows != 0) {
    throw ConfigError("kd: windows = " + std::to_string(config.windows) + " does not divide n = " + std::to_string(config.n));
  }
  if (config.pool_size < 1 || config.batch_size < 1 || config.iterations < 0) {
    throw ConfigError("kd: pool_size and batch_size must be >= 1");
  }
  if (p_d.dim() != teacher.dim()) throw ConfigError("kd: dataset and teacher dimensions differ");
  require_nonempty(p_d, "kd");

  const flow::TimeGrid grid(config.n);
  const int span = config.n / config.windows;
  const Eigen::Index pool = config.pool_size;
  const Eigen::Index total = pool * config.windows;

  Matrix starts(teacher.dim(), total);
  Matrix velocity(teacher.dim(), total);
  Vector times(total);
  Rng pool_rng(derive_seed(config.seed, "kd.pool"));
  for (int w = 0; w < config.windows; ++w) {
    const int j_start = config.n - w * span;
    const int j_end = j_start - span;
    const double t_start = grid.time(j_start);
    const double t_end = grid.time(j_end);
    const Matrix x0 = p_d.sample(pool, pool_rng);
    const Matrix x1 = standard_normal(teacher.dim(), pool, pool_rng);
    const Matrix xs = (1.0 - t_start) * x0 + t_start * x1;
    const Matrix landed = flow::integrate(teacher, xs, grid, j_start, j_end);
    starts.middleCols(w * pool, pool) = xs;
    velocity.middleCols(w * pool, pool) = (landed - xs) / (t_end - t_start);
    times.segment(w * pool, pool).setConstant(t_start);
  }

  KdResult result{teacher, {}};
  auto opt = nn::make_adam(result.student.params(), nn::AdamConfig{.lr = config.lr});
  auto grads = result.student.params().zeros_like();
  Rng batch_rng(derive_seed(config.seed, "kd.batches"));
  std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);
  Matrix x(teacher.dim(), config.batch_size);
  Matrix target(teacher.dim(), config.batch_size);
  Vector t(config.batch_size);
  result.history.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    for (Eigen::Index c = 0; c < config.batch_size; ++c) {
      const auto i = pick(batch_rng);
      x.col(c) = starts.col(i);
      target.col(c) = velocity.col(i);
      t(c) = times(i);
    }
    grads.set_zero();
    const double loss = nn::velocity_regression_loss(result.student, x, t, target, &grads);
    if (!std::isfinite(loss) || !grads.all_finite()) {
      throw NumericalError("kd: training diverged at iteration " + std::to_string(it));
    }
    nn::optimizer_step(result.student.params(), grads, opt);
    result.history.push_back({it, loss});
  }
  return result;
}

double w1_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw UsageError("w1_distance: empty sample list");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    return sum / static_cast<double>(a.size());
  }
  // Integral of |F_a^{-1}(u) - F_b^{-1}(u)| over the merged breakpoints i/na, j/nb.
  const std::uint64_t na = a.size();
  const std::uint64_t nb = b.size();
  std::uint64_t i = 0;
  std::uint64_t j = 0;
  std::uint64_t u = 0;  // current position in units of 1/(na*nb)
  double sum = 0.0;
  while (i < na && j < nb) {
    const std::uint64_t next_a = (i + 1) * nb;
    const std::uint64_t next_b = (j + 1) * na;
    const std::uint64_t next = std::min(next_a, next_b);
    sum += static_cast<double>(next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return sum / (static_cast<double>(na) * static_cast<double>(nb));
}

double w1_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != 1 || b.rows() != 1) throw UsageError("w1_distance: expects 1-D samples");
  return w1_distance(std::vector<double>(a.data(), a.data() + a.size()), std::vector<double>(b.data(), b.data() + b.size()));
}

double endpoint_error(const Matrix& samples, const flow::ToyDataset& support) {
  if (samples.cols() == 0) throw UsageError("endpoint_error: no samples");
  require_nonempty(support, "endpoint_error");
  if (samples.rows() != support.dim()) throw UsageError("endpoint_error: dimension mismatch");
  const Matrix s = support.support_matrix();
  double sum = 0.0;
  for (Eigen::Index c = 0; c < samples.cols(); ++c) sum += nearest_distance(s, samples.col(c));
  return sum / static_cast<double>(samples.cols());
}

Matrix support_reference(const flow::ToyDataset& support, Eigen::Index count) { return support.repeat(count); }

Matrix evaluation_noise(int dim, int count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "analysis.eval_noise"));
  return standard_normal(dim, count, rng);
}

double student_teacher_w1(const nn::VelocityModel& student, const nn::VelocityModel& teacher, int n, int m,
                          const Matrix& noise) {
  const Matrix teacher_samples = flow::denoise(teacher, noise, flow::TimeGrid(n)).front();
  const Matrix student_samples = distill::sample_student(student, distill::KeySchedule(n, m), noise).x0;
  return w1_distance(student_samples, teacher_samples);
}

std::vector<SweepRow> run_sweep(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                                const flow::ToyDataset& p, const SweepConfig& config) {
  if (config.mismatch.empty()) throw ConfigError("analysis.mismatch: sweep list is empty");
  if (config.seeds.empty()) throw ConfigError("analysis.seeds: seed list is empty");
  if (config.eval_samples < 1) throw ConfigError("analysis.eval_samples must be >= 1");
  const int n = store.metadata().steps;
  const int d = teacher.dim();
  if (d != 1) throw ConfigError("analysis: the mismatch sweep measures W1 and needs d = 1");

  std::vector<double> accvideo(config.seeds.size());
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    auto cfg = config.distill;
    cfg.seed = derive_seed(config.seeds[s], "analysis.distill");
    const auto result = distill::distill(teacher, store, cfg);
    accvideo[s] = student_teacher_w1(result.student, teacher, n, cfg.m,
                                     evaluation_noise(d, config.eval_samples, config.seeds[s]));
  }

  std::vector<SweepRow> rows;
  for (const double shift : config.mismatch) {
    const auto p_d = shift_support(p, shift);
    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
      const auto seed = config.seeds[s];
      SweepRow row;
      row.mismatch = mismatch_degree(p_d, p);
      row.seed = seed;

      auto useless = config.useless;
      useless.seed = derive_seed(seed, "analysis.useless");
      row.useless_frequency = useless_frequency(teacher, store, p_d, p, useless);

      auto kd = config.kd;
      kd.n = n;
      kd.seed = derive_seed(seed, "analysis.kd");
      const auto student = kd_baseline_distill(teacher, p_d, kd).student;
      const Matrix samples =
          distill::sample_student(student, distill::KeySchedule(n, kd.windows),
                                  evaluation_noise(d, config.eval_samples, seed))
              .x0;
      row.kd_w1 = w1_distance(samples, support_reference(p, config.eval_samples));
      row.endpoint_error = endpoint_error(samples, p);
      row.accvideo_w1 = accvideo[s];
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "M,seed,useless_frequency,kd_W1,accvideo_W1,endpoint_error\n";
  for (const auto& r : rows) {
    os << io::format_double(r.mismatch) << ',' << r.seed << ',' << io::format_double(r.useless_frequency) << ','
       << io::format_double(r.kd_w1) << ',' << io::format_double(r.accvideo_w1) << ','
       << io::format_double(r.endpoint_error) << '\n';
  }
  return os.str();
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median: empty input");
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace flowdistill::analysis
