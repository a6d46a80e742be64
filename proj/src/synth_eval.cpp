#include "dartclean/synth_eval.hpp"

#include "dartclean/error.hpp"
#include "dartclean/preprocess.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>

namespace dartclean {

void SynthSpec::validate() const
{
  if (length < 960)
    throw ConfigError("synthetic series needs at least 960 samples");
  if (!(cadence_s > 0.0))
    throw ConfigError("cadence must be positive");
  if (noise_sigma_m < 0.0)
    throw ConfigError("noise sigma must be non-negative");
  for (auto const &t : tides)
    if (!(t.period_s > 0.0))
      throw ConfigError("tidal periods must be positive");
  if (spikes.count < 0 || steps.count < 0 || gaps.count < 0)
    throw ConfigError("anomaly counts must be non-negative");
  if (spikes.width_min < 1 || spikes.width_max < spikes.width_min)
    throw ConfigError("invalid spike width range");
  if (spikes.amplitude_min_sigma < 0.0 || spikes.amplitude_max_sigma < spikes.amplitude_min_sigma)
    throw ConfigError("invalid spike amplitude range");
  if (steps.magnitude_min_m < 0.0 || steps.magnitude_max_m < steps.magnitude_min_m)
    throw ConfigError("invalid step magnitude range");
  if (gaps.length_min < 1 || gaps.length_max < gaps.length_min)
    throw ConfigError("invalid gap length range");
  if (drift.kind == DriftKind::exponential && drift.rate_per_day < 0.0)
    throw ConfigError("drift rate must be non-negative");
}

std::vector<Segment> GroundTruth::spike_segments() const
{
  std::vector<Segment> out;
  for (auto const &s : spikes)
    out.push_back(s.segment());
  std::sort(out.begin(), out.end(), [](Segment const &a, Segment const &b) { return a.start < b.start; });
  return out;
}

std::vector<Index> GroundTruth::step_indices() const
{
  std::vector<Index> out;
  for (auto const &s : steps)
    out.push_back(s.index);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

constexpr int kPlacementAttempts = 100000;

// Closed intervals already occupied, padded by their own separation.
struct Occupancy
{
  std::vector<Segment> taken;

  bool free(Index start, Index end, Index separation) const
  {
    return std::none_of(taken.begin(), taken.end(), [&](Segment const &s) {
      return start <= s.end + separation && s.start <= end + separation;
    });
  }
};

} // namespace

GroundTruth generate(SynthSpec const &spec)
{
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Index const n = spec.length;

  GroundTruth g;
  g.timestamps.resize(static_cast<std::size_t>(n));
  g.clean.resize(n);
  g.drift = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double const t = static_cast<double>(i) * spec.cadence_s;
    g.timestamps[static_cast<std::size_t>(i)] = spec.start_epoch + std::llround(t);
    double level = spec.mean_level_m;
    for (auto const &c : spec.tides)
      level += c.amplitude_m * std::sin(2.0 * std::numbers::pi * t / c.period_s + c.phase_rad);
    double const days = t / 86400.0;
    switch (spec.drift.kind) {
    case DriftKind::none:
      break;
    case DriftKind::linear:
      g.drift[i] = spec.drift.slope_m_per_day * days;
      break;
    case DriftKind::exponential:
      g.drift[i] = spec.drift.amplitude_m * (1.0 - std::exp(-spec.drift.rate_per_day * days));
      break;
    }
    g.clean[i] = level + g.drift[i];
  }

  g.noise = Vector::Zero(n);
  if (spec.noise_sigma_m > 0.0) {
    std::normal_distribution<double> normal(0.0, spec.noise_sigma_m);
    for (Index i = 0; i < n; ++i)
      g.noise[i] = normal(rng);
  }

  Occupancy occupied;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  // Steps.
  g.step_effect = Vector::Zero(n);
  for (Index k = 0; k < spec.steps.count; ++k) {
    std::uniform_int_distribution<Index> where(spec.steps.edge_margin, n - spec.steps.edge_margin - 1);
    if (spec.steps.edge_margin * 2 >= n)
      throw ConfigError("step edge margin leaves no room");
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Index const at = where(rng);
      bool const ok = std::all_of(g.steps.begin(), g.steps.end(), [&](InjectedStep const &s) {
        return std::abs(s.index - at) >= spec.steps.min_separation;
      });
      if (!ok)
        continue;
      double const mag = spec.steps.magnitude_min_m + unit(rng) * (spec.steps.magnitude_max_m -
                                                                     spec.steps.magnitude_min_m);
      g.steps.push_back({at, coin(rng) ? mag : -mag});
      occupied.taken.push_back({at, at});
      placed = true;
    }
    if (!placed)
      throw ConfigError("cannot place " + std::to_string(spec.steps.count) + " steps under the separation constraint");
  }
  std::sort(g.steps.begin(), g.steps.end(), [](auto const &a, auto const &b) { return a.index < b.index; });
  for (auto const &s : g.steps)
    g.step_effect.tail(n - s.index).array() += s.magnitude_m;

  // Spikes.
  g.spike_effect = Vector::Zero(n);
  Index const margin = 24;
  for (Index k = 0; k < spec.spikes.count; ++k) {
    std::uniform_int_distribution<Index> width_dist(spec.spikes.width_min, spec.spikes.width_max);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Index const width = width_dist(rng);
      std::uniform_int_distribution<Index> where(margin, n - margin - width);
      Index const start = where(rng);
      if (!occupied.free(start, start + width - 1, spec.spikes.min_separation))
        continue;
      double amp = spec.noise_sigma_m * (spec.spikes.amplitude_min_sigma +
                                         unit(rng) * (spec.spikes.amplitude_max_sigma - spec.spikes.amplitude_min_sigma));
      if (spec.spikes.amplitude_max_m > 0.0)
        amp = std::min(amp, spec.spikes.amplitude_max_m);
      if (spec.spikes.both_signs && coin(rng))
        amp = -amp;
      g.spikes.push_back({start, width, amp});
      occupied.taken.push_back({start, start + width - 1});
      placed = true;
    }
    if (!placed)
      throw ConfigError("cannot place " + std::to_string(spec.spikes.count) + " spikes under the separation constraint");
  }
  std::sort(g.spikes.begin(), g.spikes.end(), [](auto const &a, auto const &b) { return a.start < b.start; });
  for (auto const &s : g.spikes)
    g.spike_effect.segment(s.start, s.width).array() += s.amplitude_m;

  // Gaps avoid every injected anomaly.
  g.gap = Mask::Constant(n, false);
  for (Index k = 0; k < spec.gaps.count; ++k) {
    std::uniform_int_distribution<Index> len_dist(spec.gaps.length_min, spec.gaps.length_max);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Index const len = len_dist(rng);
      std::uniform_int_distribution<Index> where(1, n - len - 1);
      Index const start = where(rng);
      if (!occupied.free(start, start + len - 1, 5))
        continue;
      g.gap.segment(start, len).setConstant(true);
      occupied.taken.push_back({start, start + len - 1});
      placed = true;
    }
    if (!placed)
      throw ConfigError("cannot place " + std::to_string(spec.gaps.count) + " gaps");
  }

  g.contaminated = g.clean + g.noise + g.spike_effect + g.step_effect;
  return g;
}

RawSeries to_raw_series(GroundTruth const &truth)
{
  RawSeries raw;
  raw.timestamps = truth.timestamps;
  raw.values = truth.contaminated;
  raw.flags.resize(static_cast<std::size_t>(truth.contaminated.size()), SampleFlag::valid);
  for (Index i = 0; i < truth.contaminated.size(); ++i) {
    if (truth.gap[i]) {
      raw.flags[static_cast<std::size_t>(i)] = SampleFlag::flagged_missing;
      raw.values[i] = 0.0;
    }
  }
  return raw;
}

namespace {

std::string number(double v)
{
  std::array<char, 64> buf{};
  auto const [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return ec == std::errc{} ? std::string(buf.data(), ptr) : std::string("nan");
}

template <typename T> bool parse_field(std::string_view token, T &value)
{
  auto const [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  return ec == std::errc{} && ptr == token.data() + token.size();
}

} // namespace

void write_ground_truth_csv(std::ostream &out, GroundTruth const &truth)
{
  Index const n = truth.clean.size();
  Mask spike = Mask::Constant(n, false);
  for (auto const &s : truth.spikes)
    spike.segment(s.start, s.width).setConstant(true);
  Mask step = Mask::Constant(n, false);
  for (auto const &s : truth.steps)
    step[s.index] = true;
  out << "time_iso8601,clean_m,contaminated_m,spike,step,gap\n";
  for (Index i = 0; i < n; ++i)
    out << format_iso8601(truth.timestamps[static_cast<std::size_t>(i)]) << ',' << number(truth.clean[i]) << ','
        << number(truth.contaminated[i]) << ',' << int(spike[i]) << ',' << int(step[i]) << ',' << int(truth.gap[i])
        << '\n';
}

TruthTable read_ground_truth_csv(std::istream &in)
{
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != "time_iso8601,clean_m,contaminated_m,spike,step,gap")
    throw ParseError(1, "unexpected ground-truth header");

  std::vector<std::int64_t> t;
  std::vector<double> clean, contaminated;
  std::vector<char> spike, gap;
  std::vector<Index> steps;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      f.push_back(rest.substr(0, pos));
    f.push_back(rest);
    if (f.size() != 6)
      throw ParseError(line_no, "expected 6 fields");
    double c = 0, x = 0;
    int s = 0, st = 0, gp = 0;
    if (!parse_field(f[1], c) || !parse_field(f[2], x) || !parse_field(f[3], s) || !parse_field(f[4], st) ||
        !parse_field(f[5], gp))
      throw ParseError(line_no, "unparseable field");
    try {
      t.push_back(parse_iso8601(f[0]));
    } catch (DataError const &e) {
      throw ParseError(line_no, e.what());
    }
    if (st != 0)
      steps.push_back(static_cast<Index>(clean.size()));
    clean.push_back(c);
    contaminated.push_back(x);
    spike.push_back(s != 0);
    gap.push_back(gp != 0);
  }
  auto const n = static_cast<Index>(clean.size());
  TruthTable out;
  out.timestamps = std::move(t);
  out.clean = Eigen::Map<Vector>(clean.data(), n);
  out.contaminated = Eigen::Map<Vector>(contaminated.data(), n);
  Mask spike_mask(n);
  out.gap.resize(n);
  for (Index i = 0; i < n; ++i) {
    spike_mask[i] = spike[static_cast<std::size_t>(i)] != 0;
    out.gap[i] = gap[static_cast<std::size_t>(i)] != 0;
  }
  out.spikes = merge_segments(spike_mask, 0);
  out.steps = std::move(steps);
  return out;
}

double f1_score(double precision, double recall)
{
  double const s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

DetectionScore spike_f1(Mask const &predicted, std::span<Segment const> truth, Index tolerance)
{
  std::vector<Segment> const pred = merge_segments(predicted, 0);
  std::vector<Segment> sorted(truth.begin(), truth.end());
  std::sort(sorted.begin(), sorted.end(), [](Segment const &a, Segment const &b) { return a.start < b.start; });

  // Two segments match when their tolerance-expanded extents intersect.
  auto const matches = [&](Segment const &a, Segment const &b) {
    return a.start <= b.end + tolerance && b.start <= a.end + tolerance;
  };
  auto const count_matched = [&](std::vector<Segment> const &from, std::vector<Segment> const &against) {
    Index matched = 0;
    std::size_t j = 0;
    for (auto const &a : from) {
      while (j < against.size() && against[j].end + tolerance < a.start)
        ++j;
      for (std::size_t k = j; k < against.size() && against[k].start <= a.end + tolerance; ++k) {
        if (matches(a, against[k])) {
          ++matched;
          break;
        }
      }
    }
    return matched;
  };

  DetectionScore s;
  s.predicted = static_cast<Index>(pred.size());
  s.truth = static_cast<Index>(sorted.size());
  s.matched_predicted = count_matched(pred, sorted);
  s.matched_truth = count_matched(sorted, pred);
  s.precision = s.predicted > 0 ? static_cast<double>(s.matched_predicted) / static_cast<double>(s.predicted)
                                : (s.truth == 0 ? 1.0 : 0.0);
  s.recall = s.truth > 0 ? static_cast<double>(s.matched_truth) / static_cast<double>(s.truth)
                         : (s.predicted == 0 ? 1.0 : 0.0);
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

double step_recall(std::span<Index const> predicted, std::span<Index const> truth, Index tolerance)
{
  if (truth.empty())
    return 1.0;
  Index hit = 0;
  for (Index t : truth)
    if (std::any_of(predicted.begin(), predicted.end(), [&](Index p) { return std::abs(p - t) <= tolerance; }))
      ++hit;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double temporal_consistency(Vector const &x, Vector const &reconstruction)
{
  if (x.size() != reconstruction.size())
    throw ShapeError("series lengths differ");
  if (x.size() < 3)
    throw DataError("temporal consistency needs at least 3 samples");
  Index const m = x.size() - 1;
  Vector const dx = x.tail(m) - x.head(m);
  Vector const dy = reconstruction.tail(m) - reconstruction.head(m);
  Vector const cx = dx.array() - mean_of(dx);
  Vector const cy = dy.array() - mean_of(dy);
  double const sxx = cx.squaredNorm();
  double const syy = cy.squaredNorm();
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw DataError("temporal consistency undefined: zero-variance differences");
  return cx.dot(cy) / std::sqrt(sxx * syy);
}

double mean_squared_error(Vector const &a, Vector const &b)
{
  if (a.size() != b.size())
    throw ShapeError("series lengths differ");
  if (a.size() == 0)
    throw DataError("empty series");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

ResidualStats residual_stats(Vector const &raw, Vector const &cleaned, double bound, Index bins)
{
  if (raw.size() != cleaned.size())
    throw ShapeError("series lengths differ");
  if (bins < 1)
    throw ConfigError("histogram needs at least one bin");
  Vector const r = raw - cleaned;
  ResidualStats s;
  s.bound = bound;
  s.max_abs = r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
  Index within = 0;
  for (Index i = 0; i < r.size(); ++i) {
    if (r[i] == 0.0)
      continue;
    ++s.nonzero;
    if (std::abs(r[i]) <= bound)
      ++within;
  }
  s.fraction_within = s.nonzero > 0 ? static_cast<double>(within) / static_cast<double>(s.nonzero) : 1.0;

  double const lo = -s.max_abs;
  double const width = s.max_abs > 0.0 ? 2.0 * s.max_abs / static_cast<double>(bins) : 1.0;
  for (Index b = 0; b <= bins; ++b)
    s.bin_edges.push_back(s.max_abs > 0.0 ? lo + width * static_cast<double>(b) : static_cast<double>(b) - 0.5);
  s.counts.assign(static_cast<std::size_t>(bins), 0);
  for (Index i = 0; i < r.size(); ++i) {
    auto b = static_cast<Index>(std::floor((r[i] - lo) / width));
    b = std::clamp<Index>(s.max_abs > 0.0 ? b : 0, 0, bins - 1);
    ++s.counts[static_cast<std::size_t>(b)];
  }
  return s;
}

RateOfChange rate_of_change(Vector const &series, double cadence_s)
{
  if (series.size() < 2)
    throw DataError("rate of change needs at least 2 samples");
  if (!(cadence_s > 0.0))
    throw ConfigError("cadence must be positive");
  Index const m = series.size() - 1;
  RateOfChange out;
  out.rate = (series.tail(m) - series.head(m)) * (60.0 / cadence_s);
  out.min = out.rate.minCoeff();
  out.max = out.rate.maxCoeff();
  out.max_abs = out.rate.cwiseAbs().maxCoeff();
  return out;
}

LatentProjection project_latent(Matrix const &means)
{
  if (means.rows() < 3)
    throw DataError("latent projection needs at least 3 windows");
  if (means.cols() < 2)
    throw DataError("latent projection needs at least 2 latent dimensions");
  Eigen::RowVectorXd const centre = means.colwise().mean();
  Matrix const centered = means.rowwise() - centre;
  Matrix const cov = centered.transpose() * centered / static_cast<double>(means.rows() - 1);

  LatentProjection out;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  Index const d = cov.rows();
  Vector const eig = solver.eigenvalues();
  double const top = std::max(eig[d - 1], 0.0);
  bool const deficient =
      solver.info() != Eigen::Success || !(eig[d - 2] > 1e-12 * std::max(top, 1.0)) || !(top > 0.0);
  if (deficient) {
    out.fallback = true;
    out.directions = Matrix::Identity(d, 2);
    out.eigenvalues = Vector::Zero(2);
    out.eigenvalues[0] = cov(0, 0);
    out.eigenvalues[1] = cov(1, 1);
  } else {
    out.directions.resize(d, 2);
    out.directions.col(0) = solver.eigenvectors().col(d - 1);
    out.directions.col(1) = solver.eigenvectors().col(d - 2);
    for (Index c = 0; c < 2; ++c) {
      Index arg = 0;
      out.directions.col(c).cwiseAbs().maxCoeff(&arg);
      if (out.directions(arg, c) < 0.0)
        out.directions.col(c) *= -1.0;
    }
    out.eigenvalues = Vector(2);
    out.eigenvalues << eig[d - 1], eig[d - 2];
  }
  out.coordinates = centered * out.directions;
  return out;
}

Vector baseline_rolling_median(Vector const &series, DetectConfig const &config)
{
  SpikeDetection const d = detect_spikes(series, config);
  return d.mask.select(d.stats.median.array(), series.array()).matrix();
}

} // namespace dartclean
