#pragma once

// Kernel families for linear stochastic evolutions N_t = N_{t-1} A_t on Z^d:
// mean kernels, correlation constants, phase criteria and one-step sampling.

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lse/disorder.hpp"
#include "lse/lattice.hpp"

namespace lse {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModelKind { osp, gosp, gobp, dpre, bcpp, multiplicative };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Law of the environment variables eta_{t,y} of the directed polymer.
struct EnvLaw {
  enum class Kind { gaussian, bernoulli, tabulated };
  Kind kind = Kind::gaussian;
  double bernoulli_p = 0.5;     // P(eta = 1) for Kind::bernoulli
  std::vector<double> values;   // Kind::tabulated atoms
  std::vector<double> probs;

  static EnvLaw gaussian() { return {}; }
  static EnvLaw bernoulli(double p) { return {Kind::bernoulli, p, {}, {}}; }
  static EnvLaw tabulated(std::vector<double> values, std::vector<double> probs) {
    return {Kind::tabulated, 0.0, std::move(values), std::move(probs)};
  }
};

/// Finite discrete law on [0, inf).
struct DiscreteLaw {
  std::vector<double> values;
  std::vector<double> probs;

  double moment(int k) const;
  double mean() const { return moment(1); }
  /// Inverse-CDF draw from a uniform u in (0, 1).
  double quantile(double u) const;
};

struct ModelSpec {
  ModelKind kind = ModelKind::osp;
  int dim = 1;
  double p = 0.0;
  double q = 0.0;
  double beta = 0.0;
  EnvLaw env;
  Kernel kernel;         // multiplicative: the mean kernel a
  DiscreteLaw disorder;  // multiplicative: the mean-one law of the column factor
  /// Accept trivial or reducible parameter choices (test fixtures, diagnostics).
  bool allow_degenerate = false;

  static ModelSpec osp(int dim, double p);
  static ModelSpec gosp(int dim, double p, double q);
  static ModelSpec gobp(int dim, double p, double q);
  static ModelSpec dpre(int dim, double beta, EnvLaw env = EnvLaw::gaussian());
  static ModelSpec bcpp(int dim, double p, double q);
  static ModelSpec multiplicative(Kernel a, DiscreteLaw disorder);

  std::string describe() const;
};

/// Problems that make the spec unusable, followed (when `include_degenerate`)
/// by triviality / irreducibility problems.
std::vector<std::string> model_problems(const ModelSpec& spec, bool include_degenerate = true);
/// Throws ModelError on the first problem; degenerate problems only count
/// when `spec.allow_degenerate` is false.
void validate(const ModelSpec& spec);

struct MeanKernel {
  Kernel a;
  double norm_a = 0.0;   // |a|
  double norm_a2 = 0.0;  // |a^2|
  int range = 0;         // r_A
  bool irreducible = false;

  Kernel normalized() const { return a.scaled(1.0 / norm_a); }
};

MeanKernel mean_kernel(const ModelSpec& spec);
/// Whether {x : sum_y a_{x+y} a_y != 0} spans R^d.
bool is_irreducible(const Kernel& a);

double lambda_dpre(double beta, const EnvLaw& env);
double lambda_dpre_derivative(double beta, const EnvLaw& env);

/// Correlation constant gamma of the weak positive-correlation condition.
double gamma_constant(const ModelSpec& spec);
inline bool satisfies_correlation_condition(double gamma) { return gamma > 1.0; }

/// sum_y P[A_{1,0,y} ln A_{1,0,y}] - |a| ln|a|; positive certifies slow growth.
double sg_log_margin(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Disorder sampling.
//
// Slot layout per column (t, y):
//   OSP/GOSP        0: eta_{t,y}      1: zeta_{t,y}
//   GOBP            0: zeta_{t,y}     1 + k: eta_{t,y-e_k,y}, e_k the k-th unit
//                                     vector in lexicographic order
//   DPRE            0 (and 1 for the Gaussian Box-Muller pair): eta_{t,y}
//   BCPP            0: eta_{t,y}      1: zeta_{t,y}   2: index of e_{t,y}
//   multiplicative  0: the column factor

/// Offsets o = y - x for which A_{t,x,y} can be nonzero (support of a), key order.
std::vector<SitePoint> column_offsets(const ModelSpec& spec, const MeanKernel& mk);

/// out[i] = A_{t, y - offsets[i], y}.
void sample_column(const ModelSpec& spec, std::span<const SitePoint> offsets,
                   const DisorderStream& stream, std::int64_t t, SiteKey y,
                   std::span<double> out);

/// A single matrix entry A_{t,x,y}, computed straight from the stream without
/// the column machinery.
double matrix_entry(const ModelSpec& spec, const DisorderStream& stream, std::int64_t t,
                    const SitePoint& x, const SitePoint& y);

/// Precomputed one-step sampler for a model.
class Stepper {
 public:
  explicit Stepper(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const MeanKernel& mean() const { return mean_; }
  std::span<const SitePoint> offsets() const { return offsets_; }

  /// rho_{t-1} -> rho_t with log_mass += ln(sum_y w(y)), w(y) = sum_x rho(x) A_{t,x,y} / |a|.
  NormalizedState step(const NormalizedState& state, const DisorderStream& stream,
                       std::int64_t t) const;

 private:
  ModelSpec spec_;
  MeanKernel mean_;
  std::vector<SitePoint> offsets_;
  std::vector<std::int64_t> deltas_;
};

NormalizedState sample_step(const ModelSpec& spec, const NormalizedState& state,
                            const DisorderStream& stream, std::int64_t t);

// ---------------------------------------------------------------------------
// Column second moments P[A_{1,x,y} A_{1,x~,y}].

double column_second_moment(const ModelSpec& spec, const MeanKernel& mk, const SitePoint& x,
                            const SitePoint& x_tilde, const SitePoint& y);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Monte Carlo estimate of P[A_{1,x,y} A_{1,x~,y}] over i.i.d. time slices.
MonteCarloEstimate empirical_column_covariance(const ModelSpec& spec, std::size_t n_samples,
                                               const SitePoint& x, const SitePoint& x_tilde,
                                               const SitePoint& y, std::uint64_t seed = 1);

/// sum_{x,x~,y} (P[A A~] - gamma a a~) xi_x xi_x~ with closed-form second moments.
double covariance_quadratic_form(const ModelSpec& spec, const MeanKernel& mk, double gamma,
                                 const WeightField& xi);

}  // namespace lse
