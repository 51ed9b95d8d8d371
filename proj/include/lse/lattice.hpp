#pragma once

// Sparse nonnegative fields on Z^d and the normalized evolution state.
//
// Sites are packed into a 64-bit key with 16 bits per coordinate (biased),
// which makes key order coincide with lexicographic coordinate order and
// turns a lattice translation into a single integer addition.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lse {

inline constexpr int kMaxDim = 4;
inline constexpr int kCoordBits = 16;
inline constexpr std::int32_t kCoordBias = 1 << (kCoordBits - 1);
inline constexpr std::int32_t kCoordMax = kCoordBias - 1;
inline constexpr std::int32_t kCoordMin = -kCoordBias;

using SiteKey = std::uint64_t;

class LatticeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point of Z^d. Unused trailing coordinates are zero.
struct SitePoint {
  std::array<std::int32_t, kMaxDim> x{};

  friend bool operator==(const SitePoint&, const SitePoint&) = default;
};

SitePoint make_site(std::initializer_list<std::int32_t> coords);
SiteKey pack_site(const SitePoint& s, int dim);
SitePoint unpack_site(SiteKey key, int dim);
/// Signed increment such that pack(x + o) == pack(x) + offset_delta(o).
std::int64_t offset_delta(const SitePoint& o, int dim);
SiteKey translate(SiteKey key, std::int64_t delta);
int l1_norm(const SitePoint& s, int dim);
int max_coord(const SitePoint& s, int dim);
SitePoint negate(const SitePoint& s, int dim);
SiteKey origin_key(int dim);
std::string site_to_string(const SitePoint& s, int dim);
void check_dimension(int dim);

/// Every lattice point with l1 norm <= radius, in lexicographic order.
std::vector<SitePoint> l1_ball(int dim, int radius);
/// The 2d unit vectors in lexicographic order: -e_d, ..., -e_1, e_1, ..., e_d
/// sorted as coordinate tuples.
std::vector<SitePoint> unit_vectors(int dim);

struct WeightEntry {
  SiteKey key;
  double weight;
};

/// Finite map SitePoint -> weight > 0, stored sorted by key.
class WeightField {
 public:
  WeightField() = default;
  explicit WeightField(int dim);

  static WeightField point_mass(int dim, double weight = 1.0);
  static WeightField point_mass(int dim, const SitePoint& at, double weight = 1.0);
  /// Sorts, merges duplicate keys (summing in input order) and drops exact zeros.
  /// Rejects negative or non-finite weights.
  static WeightField from_entries(int dim, std::vector<WeightEntry> entries);
  static WeightField from_points(int dim,
                                 const std::vector<std::pair<SitePoint, double>>& points);
  /// Entries must already be sorted, unique and strictly positive.
  static WeightField from_sorted(int dim, std::vector<WeightEntry> entries);

  int dim() const { return dim_; }
  bool empty() const { return entries_.empty(); }
  std::size_t support_size() const { return entries_.size(); }
  std::span<const WeightEntry> entries() const { return entries_; }

  double at(SiteKey key) const;
  double at(const SitePoint& s) const { return at(pack_site(s, dim_)); }
  /// Sum of stored weights in key order.
  double total_mass() const;
  double sum_of_squares() const;
  double max_weight() const;
  /// Largest l1 norm over the support (0 for the empty field).
  int l1_radius() const;
  int coord_radius() const;

  WeightField scaled(double factor) const;
  WeightField reflected() const;

  friend bool operator==(const WeightField&, const WeightField&);

 private:
  int dim_ = 1;
  std::vector<WeightEntry> entries_;
};

using Kernel = WeightField;

double total_mass(const WeightField& f);

/// (rho_t, ln|N̄_t|) pair; the unnormalized field is never stored.
struct NormalizedState {
  WeightField rho;
  double log_mass = 0.0;
  std::int64_t time = 0;
  bool extinct = false;

  static NormalizedState initial(int dim);
};

/// rho = f / |f| and log_mass = prior + ln|f|; zero mass gives the extinct state.
NormalizedState normalize(const WeightField& f, double prior_log_mass,
                          std::int64_t time = 0);

/// (f*g)(x) = sum_y f(x-y) g(y), exact up to floating-point summation.
Kernel convolve(const Kernel& f, const Kernel& g);

}  // namespace lse
