#include "falb/sdelab.hpp"

#include <cmath>
#include <fstream>

#include "falb/blas.hpp"
#include "falb/linalg.hpp"
#include "falb/rng.hpp"

namespace falb::sde {

void CovarianceState::validate() const {
  if (phi.ndim() != 2 || phi.rows() != phi.cols())
    throw std::invalid_argument("covariance: expected square matrix");
  for (int64_t i = 0; i < phi.rows(); ++i)
    for (int64_t j = i + 1; j < phi.cols(); ++j)
      if (std::abs(phi(i, j) - phi(j, i)) > 1e-10)
        throw std::invalid_argument("covariance: asymmetric beyond 1e-10");
  auto eig = symmetric_eigenvalues(phi);
  if (!eig.empty() && eig.back() < -1e-8)
    throw std::invalid_argument("covariance: eigenvalue below -1e-8");
  if (tau < 0) throw std::invalid_argument("covariance: negative tau");
}

int SDEConfig::resolved_depth() const {
  return depth > 0 ? depth : static_cast<int>(std::lround(tau_bar * n));
}

double SDEConfig::resolved_dt() const { return dt > 0 ? dt : 1.0 / n; }

void SDEConfig::validate() const {
  if (m < 1) throw std::invalid_argument("sde: m must be >= 1");
  if (n < m) throw std::invalid_argument("sde: n must be >= m");
  if (trials < 1) throw std::invalid_argument("sde: trials must be >= 1");
  if (tau_bar <= 0) throw std::invalid_argument("sde: tau_bar must be > 0");
  if (resolved_depth() < 1) throw std::invalid_argument("sde: depth resolves to zero layers");
  if (resolved_dt() > 1.0 / n + 1e-12)
    throw std::invalid_argument("sde: dt must be <= 1/n");
  if (record_points < 1) throw std::invalid_argument("sde: record_points must be >= 1");
}

int pair_count(int m) { return m * (m + 1) / 2; }

std::vector<std::pair<int, int>> pair_index(int m) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(pair_count(m));
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b) pairs.emplace_back(a, b);
  return pairs;
}

std::vector<double> flatten_upper(const Tensor<double>& phi) {
  int m = static_cast<int>(phi.rows());
  std::vector<double> v;
  v.reserve(pair_count(m));
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b) v.push_back(phi(a, b));
  return v;
}

Tensor<double> unflatten_upper(const std::vector<double>& v, int m) {
  Tensor<double> phi({m, m});
  size_t k = 0;
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b) {
      phi(a, b) = v[k];
      phi(b, a) = v[k];
      ++k;
    }
  return phi;
}

void TrajectoryStats::accumulate(const std::vector<std::vector<double>>& trajectory) {
  ++count;
  for (size_t t = 0; t < trajectory.size(); ++t)
    for (int e = 0; e < entries; ++e) {
      double x = trajectory[t][e];
      double d = x - mean[t][e];
      mean[t][e] += d / static_cast<double>(count);
      m2[t][e] += d * (x - mean[t][e]);
    }
  final_states.push_back(trajectory.back());
}

double TrajectoryStats::se(int checkpoint, int entry) const {
  if (count < 2) return 0;
  double var = m2[checkpoint][entry] / static_cast<double>(count - 1);
  return std::sqrt(var / static_cast<double>(count));
}

namespace {

TrajectoryStats make_stats(int m, std::vector<double> taus) {
  TrajectoryStats s;
  s.m = m;
  s.entries = pair_count(m);
  s.taus = std::move(taus);
  s.mean.assign(s.taus.size(), std::vector<double>(s.entries, 0.0));
  s.m2.assign(s.taus.size(), std::vector<double>(s.entries, 0.0));
  return s;
}

// evenly spaced checkpoint layers (1-based), always including the last
std::vector<int> checkpoint_layers(int depth, int points) {
  std::vector<int> layers;
  for (int k = 1; k <= points; ++k) {
    int layer = static_cast<int>(std::lround(static_cast<double>(k) * depth / points));
    if (layer >= 1 && (layers.empty() || layer > layers.back())) layers.push_back(layer);
  }
  if (layers.empty() || layers.back() != depth) layers.push_back(depth);
  return layers;
}

// h0 = sqrt(n) Q sqrt(phi0) with Q an orthonormalized Gaussian frame, so that
// (1/n) h0^T h0 equals phi0 exactly.
Tensor<double> initial_h(int n, const Tensor<double>& sqrt_phi0, RngStream& rng) {
  int m = static_cast<int>(sqrt_phi0.rows());
  Tensor<double> g({n, m});
  for (int64_t i = 0; i < g.numel(); ++i) g[i] = rng.next_gaussian();
  // modified Gram-Schmidt over columns
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < j; ++k) {
      double dot = 0;
      for (int i = 0; i < n; ++i) dot += g(i, k) * g(i, j);
      for (int i = 0; i < n; ++i) g(i, j) -= dot * g(i, k);
    }
    double norm = 0;
    for (int i = 0; i < n; ++i) norm += g(i, j) * g(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("sde: degenerate Gaussian frame");
    for (int i = 0; i < n; ++i) g(i, j) /= norm;
  }
  Tensor<double> h({n, m});
  double root_n = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0;
      for (int k = 0; k < m; ++k) acc += g(i, k) * sqrt_phi0(k, j);
      h(i, j) = root_n * acc;
    }
  return h;
}

bool finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

SimResult simulate_chain(const SDEConfig& config, const CovarianceState& phi0) {
  config.validate();
  phi0.validate();
  if (phi0.phi.rows() != config.m) throw std::invalid_argument("sde: phi0 extent mismatch");
  int n = config.n, m = config.m, depth = config.resolved_depth();
  auto layers = checkpoint_layers(depth, config.record_points);
  std::vector<double> taus;
  for (int layer : layers) taus.push_back(static_cast<double>(layer) / n);

  SimResult result;
  result.stats = make_stats(m, taus);
  Tensor<double> sqrt_phi0 = psd_sqrt(phi0.phi);
  double inv_sqrt_nm = 1.0 / std::sqrt(static_cast<double>(n) * m);
  double value_std = 1.0 / std::sqrt(static_cast<double>(n));

  Tensor<double> wv({n, n}), mix({m, m}), tmp({n, m}), h2({n, m});
  for (int trial = 0; trial < config.trials; ++trial) {
    RngStream rng(config.seed, "chain/trial" + std::to_string(trial));
    Tensor<double> h = initial_h(n, sqrt_phi0, rng);
    std::vector<std::vector<double>> trajectory;
    bool aborted = false;
    size_t next_cp = 0;
    for (int layer = 1; layer <= depth && !aborted; ++layer) {
      // fresh mixing noise: I + (W - col_avg W) / sqrt(n m), W ~ N(0,1)
      for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = rng.next_gaussian();
      for (int j = 0; j < m; ++j) {
        double avg = 0;
        for (int i = 0; i < m; ++i) avg += mix(i, j);
        avg /= m;
        for (int i = 0; i < m; ++i)
          mix(i, j) = (i == j ? 1.0 : 0.0) + (mix(i, j) - avg) * inv_sqrt_nm;
      }
      // tmp = h * mix
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          double acc = 0;
          for (int k = 0; k < m; ++k) acc += h(i, k) * mix(k, j);
          tmp(i, j) = acc;
        }
      // h <- W^v tmp with fresh W^v ~ N(0, 1/n)
      for (int64_t i = 0; i < wv.numel(); ++i) wv[i] = value_std * rng.next_gaussian();
      blas::gemm(false, false, n, m, n, 1.0, wv.data(), n, tmp.data(), m, 0.0, h2.data(), m);
      std::swap(h, h2);

      if (next_cp < layers.size() && layer == layers[next_cp]) {
        Tensor<double> phi({m, m});
        blas::gemm(true, false, m, m, n, 1.0 / n, h.data(), m, h.data(), m, 0.0, phi.data(), m);
        auto flat = flatten_upper(phi);
        if (!finite(flat)) {
          aborted = true;
          break;
        }
        trajectory.push_back(std::move(flat));
        ++next_cp;
      }
    }
    if (aborted || trajectory.size() != layers.size()) {
      ++result.aborted_trials;
      continue;
    }
    result.stats.accumulate(trajectory);
  }
  return result;
}

Tensor<double> drift_term(const Tensor<double>& phi) {
  int m = static_cast<int>(phi.rows());
  double trace = 0, total = 0;
  for (int i = 0; i < m; ++i) trace += phi(i, i);
  for (int64_t i = 0; i < phi.numel(); ++i) total += phi[i];
  double c = trace / m - total / (static_cast<double>(m) * m);
  Tensor<double> out({m, m});
  for (int i = 0; i < m; ++i) out(i, i) = c;
  return out;
}

Tensor<double> SigmaTensor::pair_matrix() const {
  auto pairs = pair_index(m);
  int P = static_cast<int>(pairs.size());
  Tensor<double> out({P, P});
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j)
      out(i, j) = at(pairs[i].first, pairs[i].second, pairs[j].first, pairs[j].second);
  return out;
}

SigmaTensor& SigmaTensor::operator+=(const SigmaTensor& other) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += other.a[i];
  return *this;
}

SigmaTensor sigma_v(const Tensor<double>& phi) {
  int m = static_cast<int>(phi.rows());
  SigmaTensor s;
  s.m = m;
  s.a.assign(static_cast<size_t>(m) * m * m * m, 0.0);
  for (int al = 0; al < m; ++al)
    for (int be = 0; be < m; ++be)
      for (int ga = 0; ga < m; ++ga)
        for (int de = 0; de < m; ++de)
          s.at(al, be, ga, de) = phi(al, ga) * phi(be, de) + phi(al, de) * phi(be, ga);
  return s;
}

SigmaTensor sigma_m(const Tensor<double>& phi) {
  int m = static_cast<int>(phi.rows());
  // column covariance C(col_b, col_d) = <col_b, col_d>/m - mean_b mean_d
  Tensor<double> c({m, m});
  std::vector<double> col_mean(m, 0.0);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) col_mean[j] += phi(i, j);
    col_mean[j] /= m;
  }
  for (int b = 0; b < m; ++b)
    for (int d = 0; d < m; ++d) {
      double dot = 0;
      for (int i = 0; i < m; ++i) dot += phi(i, b) * phi(i, d);
      c(b, d) = dot / m - col_mean[b] * col_mean[d];
    }
  SigmaTensor s;
  s.m = m;
  s.a.assign(static_cast<size_t>(m) * m * m * m, 0.0);
  for (int al = 0; al < m; ++al)
    for (int be = 0; be < m; ++be)
      for (int ga = 0; ga < m; ++ga)
        for (int de = 0; de < m; ++de) {
          double v = 0;
          if (al == ga) v += c(be, de);
          if (al == de) v += c(be, ga);
          if (ga == be) v += c(de, al);
          if (be == de) v += c(al, ga);
          s.at(al, be, ga, de) = v;
        }
  return s;
}

double conditional_moment_check(int m, int64_t trials, uint64_t seed) {
  if (m < 1) throw std::invalid_argument("moment check: m must be >= 1");
  if (trials < 10000) throw std::invalid_argument("moment check: need at least 10^4 trials");
  std::vector<double> est(static_cast<size_t>(m) * m * m * m, 0.0);
  Tensor<double> w({m, m});
  RngStream rng(seed, "moment-check");
  for (int64_t trial = 0; trial < trials; ++trial) {
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.next_gaussian();
    for (int j = 0; j < m; ++j) {
      double avg = 0;
      for (int i = 0; i < m; ++i) avg += w(i, j);
      avg /= m;
      for (int i = 0; i < m; ++i) w(i, j) -= avg;
    }
    size_t idx = 0;
    for (int mu = 0; mu < m; ++mu)
      for (int al = 0; al < m; ++al)
        for (int nu = 0; nu < m; ++nu)
          for (int be = 0; be < m; ++be) est[idx++] += w(mu, al) * w(nu, be);
  }
  double max_dev = 0;
  size_t idx = 0;
  for (int mu = 0; mu < m; ++mu)
    for (int al = 0; al < m; ++al)
      for (int nu = 0; nu < m; ++nu)
        for (int be = 0; be < m; ++be) {
          double want = (al == be) ? ((mu == nu ? 1.0 : 0.0) - 1.0 / m) : 0.0;
          double got = est[idx++] / static_cast<double>(trials);
          max_dev = std::max(max_dev, std::abs(got - want));
        }
  return max_dev;
}

SimResult integrate_sde(const SDEConfig& config, const CovarianceState& phi0,
                        const SDEOptions& options) {
  config.validate();
  phi0.validate();
  if (phi0.phi.rows() != config.m) throw std::invalid_argument("sde: phi0 extent mismatch");
  int m = config.m, depth = config.resolved_depth();
  double dt = config.resolved_dt();
  int total_steps = static_cast<int>(std::lround(static_cast<double>(depth) / config.n / dt));
  auto layers = checkpoint_layers(depth, config.record_points);
  // map checkpoint taus onto integrator steps
  std::vector<int> cp_steps;
  std::vector<double> taus;
  for (int layer : layers) {
    double tau = static_cast<double>(layer) / config.n;
    cp_steps.push_back(static_cast<int>(std::lround(tau / dt)));
    taus.push_back(tau);
  }
  total_steps = std::max(total_steps, cp_steps.back());

  SimResult result;
  result.stats = make_stats(m, taus);
  auto pairs = pair_index(m);
  int P = pair_count(m);

  for (int trial = 0; trial < config.trials; ++trial) {
    RngStream rng(config.seed, "sde/trial" + std::to_string(trial));
    std::vector<double> state = flatten_upper(phi0.phi);
    std::vector<std::vector<double>> trajectory;
    bool aborted = false;
    size_t next_cp = 0;
    for (int step = 1; step <= total_steps && !aborted; ++step) {
      Tensor<double> phi = unflatten_upper(state, m);
      Tensor<double> drift = drift_term(phi);
      std::vector<double> incr(P, 0.0);
      for (int p = 0; p < P; ++p) {
        auto [a, b] = pairs[p];
        incr[p] = options.drift_scale * drift(a, b) * dt;
      }
      if (options.diffusion) {
        SigmaTensor sigma = sigma_v(phi);
        sigma += sigma_m(phi);
        Tensor<double> root = psd_sqrt(sigma.pair_matrix());
        std::vector<double> xi(P);
        for (int p = 0; p < P; ++p) xi[p] = rng.next_gaussian();
        double sqrt_dt = std::sqrt(dt);
        for (int i = 0; i < P; ++i) {
          double acc = 0;
          for (int j = 0; j < P; ++j) acc += root(i, j) * xi[j];
          incr[i] += sqrt_dt * acc;
        }
      }
      for (int p = 0; p < P; ++p) state[p] += incr[p];
      if (!finite(state)) {
        aborted = true;
        break;
      }
      // Euler steps can overshoot the PSD cone; project back by clipping
      // negative eigenvalues so the state stays a valid covariance.
      {
        Tensor<double> stepped = unflatten_upper(state, m);
        Tensor<double> vecs;
        auto eig = symmetric_eigenvalues(stepped, &vecs);
        if (!eig.empty() && eig.back() < 0) {
          Tensor<double> fixed({m, m});
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
              double acc = 0;
              for (int k = 0; k < m; ++k) {
                double lam = std::max(eig[k], 0.0);
                acc += vecs(i, k) * lam * vecs(j, k);
              }
              fixed(i, j) = acc;
            }
          state = flatten_upper(fixed);
        }
      }
      if (next_cp < cp_steps.size() && step == cp_steps[next_cp]) {
        trajectory.push_back(state);
        ++next_cp;
      }
    }
    if (aborted || trajectory.size() != cp_steps.size()) {
      ++result.aborted_trials;
      continue;
    }
    result.stats.accumulate(trajectory);
  }
  return result;
}

CompareReport compare_distributions(const TrajectoryStats& chain, const TrajectoryStats& sde,
                                    double tolerance_se) {
  if (chain.taus.size() != sde.taus.size() || chain.entries != sde.entries)
    throw std::invalid_argument("compare: mismatched grids");
  for (size_t t = 0; t < chain.taus.size(); ++t)
    if (std::abs(chain.taus[t] - sde.taus[t]) > 1e-9)
      throw std::invalid_argument("compare: mismatched tau grids");

  CompareReport report;
  report.tolerance_se = tolerance_se;
  for (size_t t = 0; t < chain.taus.size(); ++t) {
    for (int e = 0; e < chain.entries; ++e) {
      CompareEntry row;
      row.tau = chain.taus[t];
      row.entry = e;
      row.mean_a = chain.mean[t][e];
      row.se_a = chain.se(static_cast<int>(t), e);
      row.mean_b = sde.mean[t][e];
      row.se_b = sde.se(static_cast<int>(t), e);
      double denom = std::sqrt(row.se_a * row.se_a + row.se_b * row.se_b) + 1e-15;
      row.z = (row.mean_a - row.mean_b) / denom;
      report.max_abs_z = std::max(report.max_abs_z, std::abs(row.z));
      if (t + 1 == chain.taus.size())
        report.final_mean_abs_dev += std::abs(row.mean_a - row.mean_b);
      report.rows.push_back(row);
    }
  }
  report.final_mean_abs_dev /= chain.entries;

  // two-sample energy distance on the final states (subsampled)
  auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  };
  size_t na = std::min<size_t>(chain.final_states.size(), 1000);
  size_t nb = std::min<size_t>(sde.final_states.size(), 1000);
  if (na > 1 && nb > 1) {
    double cross = 0, within_a = 0, within_b = 0;
    for (size_t i = 0; i < na; ++i)
      for (size_t j = 0; j < nb; ++j) cross += dist(chain.final_states[i], sde.final_states[j]);
    for (size_t i = 0; i < na; ++i)
      for (size_t j = 0; j < na; ++j) within_a += dist(chain.final_states[i], chain.final_states[j]);
    for (size_t i = 0; i < nb; ++i)
      for (size_t j = 0; j < nb; ++j) within_b += dist(sde.final_states[i], sde.final_states[j]);
    report.energy_distance = 2 * cross / (static_cast<double>(na) * nb) -
                             within_a / (static_cast<double>(na) * na) -
                             within_b / (static_cast<double>(nb) * nb);
  }
  report.pass = report.max_abs_z <= tolerance_se;
  return report;
}

void write_compare_csv(const CompareReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tau,entry,mean_chain,se_chain,mean_sde,se_sde,z\n";
  for (const auto& r : report.rows)
    out << r.tau << "," << r.entry << "," << r.mean_a << "," << r.se_a << "," << r.mean_b << ","
        << r.se_b << "," << r.z << "\n";
}

void write_trajectory_csv(const TrajectoryStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tau,entry,mean,se\n";
  for (size_t t = 0; t < stats.taus.size(); ++t)
    for (int e = 0; e < stats.entries; ++e)
      out << stats.taus[t] << "," << e << "," << stats.mean[t][e] << ","
          << stats.se(static_cast<int>(t), e) << "\n";
}

}  // namespace falb::sde
