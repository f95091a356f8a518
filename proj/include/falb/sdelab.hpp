#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "falb/tensor.hpp"

namespace falb::sde {

/// Token covariance Phi (m x m symmetric PSD) at SDE time tau = layer / n.
struct CovarianceState {
  Tensor<double> phi;
  double tau = 0.0;

  /// Symmetry within 1e-10 and eigenvalues >= -1e-8.
  void validate() const;
};

struct SDEConfig {
  int m = 3;
  int n = 64;
  int depth = 0;        // 0 derives round(tau_bar * n)
  double tau_bar = 0.5;
  int trials = 1000;
  double dt = 0.0;      // 0 derives 1/n; must stay <= 1/n
  uint64_t seed = 0;
  int record_points = 8;  // trajectory checkpoints (evenly spaced in tau)

  int resolved_depth() const;
  double resolved_dt() const;
  void validate() const;
};

// Upper-triangular flattening (row-major, diagonal included).
int pair_count(int m);
std::vector<std::pair<int, int>> pair_index(int m);
std::vector<double> flatten_upper(const Tensor<double>& phi);
Tensor<double> unflatten_upper(const std::vector<double>& v, int m);

/// Streaming per-(checkpoint, entry) moments across trials plus the full
/// final-checkpoint sample for distribution tests.
struct TrajectoryStats {
  int m = 0;
  int entries = 0;
  std::vector<double> taus;
  std::vector<std::vector<double>> mean;  // [checkpoint][entry]
  std::vector<std::vector<double>> m2;    // running squared deviations
  int64_t count = 0;
  std::vector<std::vector<double>> final_states;  // [trial][entry]

  void accumulate(const std::vector<std::vector<double>>& trajectory);
  double se(int checkpoint, int entry) const;
};

struct SimResult {
  TrajectoryStats stats;
  int aborted_trials = 0;
};

/// Simulates the actual matrix recursion
///   h <- W^v h (I + (W^M - col_avg(W^M)) / sqrt(n m))
/// with fresh W^v ~ N(0, 1/n) and W^M ~ N(0, 1) per layer, starting from an
/// h0 with (1/n) h0^T h0 equal to phi0 exactly (orthonormalized Gaussians
/// against the matrix square root). Trials whose covariance overflows are
/// aborted and counted.
SimResult simulate_chain(const SDEConfig& config, const CovarianceState& phi0);

/// Diagonal drift [ Tr(Phi)/m - mean(Phi) ] I.
Tensor<double> drift_term(const Tensor<double>& phi);

/// Four-index diffusion tensor with a flattened-pair matrix view.
struct SigmaTensor {
  int m = 0;
  std::vector<double> a;  // [((alpha*m+beta)*m+gamma)*m+delta]

  double at(int alpha, int beta, int gamma, int delta) const {
    return a[static_cast<size_t>(((alpha * m + beta) * m + gamma)) * m + delta];
  }
  double& at(int alpha, int beta, int gamma, int delta) {
    return a[static_cast<size_t>(((alpha * m + beta) * m + gamma)) * m + delta];
  }
  /// P x P matrix over upper-triangular pairs.
  Tensor<double> pair_matrix() const;
  SigmaTensor& operator+=(const SigmaTensor& other);
};

/// Sigma^v(Phi)^{ab,cd} = Phi^{ac} Phi^{bd} + Phi^{ad} Phi^{bc}.
SigmaTensor sigma_v(const Tensor<double>& phi);

/// The four-term Kronecker/column-covariance tensor of the mixing noise,
/// built from C(col_b, col_d) = <col_b, col_d>/m - mean_b * mean_d.
SigmaTensor sigma_m(const Tensor<double>& phi);

/// Monte-Carlo estimate of E[(W - col_avg W)^{mu a} (W - col_avg W)^{nu b}]
/// against (delta_{mu nu} - 1/m) delta_{ab}; returns the max abs deviation.
double conditional_moment_check(int m, int64_t trials, uint64_t seed = 0);

struct SDEOptions {
  double drift_scale = 1.0;  // testing hook
  bool diffusion = true;
};

/// Euler-Maruyama on the flattened upper-triangular vector with diffusion
/// [sigma_v + sigma_m]^(1/2) (symmetric eigendecomposition, negative
/// eigenvalues clipped at 0).
SimResult integrate_sde(const SDEConfig& config, const CovarianceState& phi0,
                        const SDEOptions& options = {});

struct CompareEntry {
  double tau = 0;
  int entry = 0;
  double mean_a = 0, se_a = 0;
  double mean_b = 0, se_b = 0;
  double z = 0;
};

struct CompareReport {
  std::vector<CompareEntry> rows;
  double max_abs_z = 0;
  double final_mean_abs_dev = 0;
  double energy_distance = 0;
  double tolerance_se = 3.0;
  bool pass = false;
};

/// Per-entry mean comparison with standard errors at every shared checkpoint
/// plus a two-sample energy distance on the final states. Grids must match.
CompareReport compare_distributions(const TrajectoryStats& chain, const TrajectoryStats& sde,
                                    double tolerance_se = 3.0);

void write_compare_csv(const CompareReport& report, const std::filesystem::path& path);
void write_trajectory_csv(const TrajectoryStats& stats, const std::filesystem::path& path);

}  // namespace falb::sde
