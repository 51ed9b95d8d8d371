#pragma once

// Brute-force ground truth at tiny scale: explicit path sums with disorder
// regenerated from the keyed stream, and exact laws over the full disorder space.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "lse/disorder.hpp"
#include "lse/models.hpp"

namespace lse {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;
using Float50 = boost::multiprecision::cpp_bin_float_50;

class OracleBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whether every matrix entry of the model is a nonnegative integer.
bool integer_valued(ModelKind kind);

struct PathEnumeration {
  int dim = 1;
  std::int64_t t = 0;
  bool integer = true;
  std::map<SiteKey, BigInt> counts;    // integer-valued models
  std::map<SiteKey, Float50> weights;  // otherwise
  std::uint64_t paths = 0;             // path prefixes visited

  bool extinct() const { return integer ? counts.empty() : weights.empty(); }
  /// The field in double precision.
  WeightField field() const;
};

/// N_t(y) = sum over paths 0 = x_0, ..., x_t = y of prod_s A_{s, x_{s-1}, x_s},
/// every entry fetched with matrix_entry from `stream`.
PathEnumeration enumerate_exact(const ModelSpec& spec, const DisorderStream& stream,
                                std::int64_t t, std::uint64_t max_paths = 50'000'000);

struct EquivalenceVerdict {
  bool ok = false;
  bool extinct = false;
  std::size_t sites = 0;
  double max_rel_error = 0.0;  // real-valued models
  std::string message;         // first divergence when !ok
};

/// Runs the simulator (stream with `simulator_layout`) and the path oracle
/// (canonical stream) on the same (seed, replica) and compares at time t.
/// Integer-valued models: the counts reconstructed from (rho_t, ln|N̄_t|) must
/// equal the exact counts; otherwise rho and ln|N̄_t| agree to `rel_tol`.
EquivalenceVerdict oracle_equivalence(const ModelSpec& spec, std::uint64_t seed,
                                      std::uint32_t replica, std::int64_t t,
                                      StreamLayout simulator_layout = StreamLayout::canonical,
                                      double rel_tol = 1e-10);

struct ExhaustiveOutcome {
  Rational normalized_mass;  // |N̄_t|
  Rational overlap;          // R_t (0 on extinction)
  Rational probability;
};

struct ExhaustiveLaw {
  std::int64_t t = 0;
  int bits = 0;  // number of nondegenerate disorder variables enumerated
  std::vector<ExhaustiveOutcome> outcomes;  // sorted by (mass, overlap)
  Rational total_probability;
  Rational mean_normalized_mass;
  bool martingale_exact = false;  // mean == 1 exactly

  /// P[f(|N̄|, R)] summed exactly.
  template <typename F>
  Rational expect(F&& f) const {
    Rational s = 0;
    for (const auto& o : outcomes) s += o.probability * f(o.normalized_mass, o.overlap);
    return s;
  }
};

/// Exact law of (|N̄_t|, R_t) over every assignment of the disorder variables
/// that can influence N_t (OSP, GOSP, GOBP). Throws OracleBudgetExceeded past `max_bits`.
ExhaustiveLaw exhaustive_distribution(const ModelSpec& spec, std::int64_t t, int max_bits = 24);

}  // namespace lse
