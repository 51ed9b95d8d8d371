#include "lse/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

namespace lse {

namespace {

constexpr std::uint64_t kFieldMask = (std::uint64_t{1} << kCoordBits) - 1;

int shift_of(int axis, int dim) { return kCoordBits * (dim - 1 - axis); }

}  // namespace

void check_dimension(int dim) {
  if (dim < 1 || dim > kMaxDim) {
    throw LatticeError("dimension must be in [1, " + std::to_string(kMaxDim) +
                       "], got " + std::to_string(dim));
  }
}

SitePoint make_site(std::initializer_list<std::int32_t> coords) {
  if (coords.size() > static_cast<std::size_t>(kMaxDim)) {
    throw LatticeError("too many coordinates");
  }
  SitePoint s;
  std::copy(coords.begin(), coords.end(), s.x.begin());
  return s;
}

SiteKey pack_site(const SitePoint& s, int dim) {
  SiteKey key = 0;
  for (int i = 0; i < dim; ++i) {
    const std::int32_t c = s.x[i];
    if (c < kCoordMin || c > kCoordMax) {
      throw LatticeError("coordinate " + std::to_string(c) + " outside the packable range");
    }
    key |= static_cast<std::uint64_t>(c + kCoordBias) << shift_of(i, dim);
  }
  return key;
}

SitePoint unpack_site(SiteKey key, int dim) {
  SitePoint s;
  for (int i = 0; i < dim; ++i) {
    s.x[i] = static_cast<std::int32_t>((key >> shift_of(i, dim)) & kFieldMask) - kCoordBias;
  }
  return s;
}

std::int64_t offset_delta(const SitePoint& o, int dim) {
  std::int64_t delta = 0;
  for (int i = 0; i < dim; ++i) {
    delta += static_cast<std::int64_t>(o.x[i]) * (std::int64_t{1} << shift_of(i, dim));
  }
  return delta;
}

SiteKey translate(SiteKey key, std::int64_t delta) {
  return key + static_cast<std::uint64_t>(delta);
}

int l1_norm(const SitePoint& s, int dim) {
  int n = 0;
  for (int i = 0; i < dim; ++i) n += std::abs(s.x[i]);
  return n;
}

int max_coord(const SitePoint& s, int dim) {
  int m = 0;
  for (int i = 0; i < dim; ++i) m = std::max(m, std::abs(s.x[i]));
  return m;
}

SitePoint negate(const SitePoint& s, int dim) {
  SitePoint r;
  for (int i = 0; i < dim; ++i) r.x[i] = -s.x[i];
  return r;
}

SiteKey origin_key(int dim) { return pack_site(SitePoint{}, dim); }

std::string site_to_string(const SitePoint& s, int dim) {
  std::string out = "(";
  for (int i = 0; i < dim; ++i) {
    if (i) out += ",";
    out += std::to_string(s.x[i]);
  }
  return out + ")";
}

std::vector<SitePoint> l1_ball(int dim, int radius) {
  check_dimension(dim);
  std::vector<SitePoint> out;
  SitePoint cur;
  // Depth-first over coordinates keeps lexicographic order.
  auto rec = [&](auto&& self, int axis, int budget) -> void {
    if (axis == dim) {
      out.push_back(cur);
      return;
    }
    for (int c = -budget; c <= budget; ++c) {
      cur.x[axis] = c;
      self(self, axis + 1, budget - std::abs(c));
    }
    cur.x[axis] = 0;
  };
  rec(rec, 0, radius);
  return out;
}

std::vector<SitePoint> unit_vectors(int dim) {
  std::vector<SitePoint> out;
  for (const auto& s : l1_ball(dim, 1)) {
    if (l1_norm(s, dim) == 1) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------

WeightField::WeightField(int dim) : dim_(dim) { check_dimension(dim); }

WeightField WeightField::point_mass(int dim, double weight) {
  return point_mass(dim, SitePoint{}, weight);
}

WeightField WeightField::point_mass(int dim, const SitePoint& at, double weight) {
  return from_entries(dim, {{pack_site(at, dim), weight}});
}

WeightField WeightField::from_entries(int dim, std::vector<WeightEntry> entries) {
  WeightField f(dim);
  for (const auto& e : entries) {
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw LatticeError("weights must be finite and nonnegative");
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const WeightEntry& a, const WeightEntry& b) { return a.key < b.key; });
  f.entries_.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].key == entries[i].key) sum += entries[j++].weight;
    if (sum != 0.0) f.entries_.push_back({entries[i].key, sum});
    i = j;
  }
  return f;
}

WeightField WeightField::from_points(int dim,
                                     const std::vector<std::pair<SitePoint, double>>& points) {
  std::vector<WeightEntry> entries;
  entries.reserve(points.size());
  for (const auto& [s, w] : points) entries.push_back({pack_site(s, dim), w});
  return from_entries(dim, std::move(entries));
}

WeightField WeightField::from_sorted(int dim, std::vector<WeightEntry> entries) {
  WeightField f(dim);
  f.entries_ = std::move(entries);
  return f;
}

double WeightField::at(SiteKey key) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                             [](const WeightEntry& e, SiteKey k) { return e.key < k; });
  return (it != entries_.end() && it->key == key) ? it->weight : 0.0;
}

double WeightField::total_mass() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.weight;
  return s;
}

double WeightField::sum_of_squares() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.weight * e.weight;
  return s;
}

double WeightField::max_weight() const {
  double m = 0.0;
  for (const auto& e : entries_) m = std::max(m, e.weight);
  return m;
}

int WeightField::l1_radius() const {
  int r = 0;
  for (const auto& e : entries_) r = std::max(r, l1_norm(unpack_site(e.key, dim_), dim_));
  return r;
}

int WeightField::coord_radius() const {
  int r = 0;
  for (const auto& e : entries_) r = std::max(r, max_coord(unpack_site(e.key, dim_), dim_));
  return r;
}

WeightField WeightField::scaled(double factor) const {
  std::vector<WeightEntry> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.key, e.weight * factor});
  return from_entries(dim_, std::move(out));
}

WeightField WeightField::reflected() const {
  std::vector<WeightEntry> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.push_back({pack_site(negate(unpack_site(e.key, dim_), dim_), dim_), e.weight});
  }
  return from_entries(dim_, std::move(out));
}

bool operator==(const WeightField& a, const WeightField& b) {
  if (a.dim_ != b.dim_ || a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].key != b.entries_[i].key || a.entries_[i].weight != b.entries_[i].weight) {
      return false;
    }
  }
  return true;
}

double total_mass(const WeightField& f) { return f.total_mass(); }

NormalizedState NormalizedState::initial(int dim) {
  return NormalizedState{WeightField::point_mass(dim), 0.0, 0, false};
}

NormalizedState normalize(const WeightField& f, double prior_log_mass, std::int64_t time) {
  const double mass = f.total_mass();
  if (mass <= 0.0) {
    return NormalizedState{WeightField(f.dim()), 0.0, time, true};
  }
  std::vector<WeightEntry> rho;
  rho.reserve(f.support_size());
  for (const auto& e : f.entries()) rho.push_back({e.key, e.weight / mass});
  return NormalizedState{WeightField::from_sorted(f.dim(), std::move(rho)),
                         prior_log_mass + std::log(mass), time, false};
}

// ---------------------------------------------------------------------------

namespace {

struct Box {
  std::array<std::int32_t, kMaxDim> lo{}, hi{};
};

Box bounding_box(const Kernel& f) {
  const int d = f.dim();
  Box b;
  for (int i = 0; i < d; ++i) {
    b.lo[i] = kCoordMax;
    b.hi[i] = kCoordMin;
  }
  for (const auto& e : f.entries()) {
    const auto s = unpack_site(e.key, d);
    for (int i = 0; i < d; ++i) {
      b.lo[i] = std::min(b.lo[i], s.x[i]);
      b.hi[i] = std::max(b.hi[i], s.x[i]);
    }
  }
  return b;
}

}  // namespace

Kernel convolve(const Kernel& f, const Kernel& g) {
  if (f.dim() != g.dim()) throw LatticeError("convolve: dimension mismatch");
  const int d = f.dim();
  if (f.empty() || g.empty()) return Kernel(d);

  const Box bf = bounding_box(f);
  const Box bg = bounding_box(g);
  Box out;
  double volume = 1.0;
  std::array<std::int64_t, kMaxDim> extent{};
  for (int i = 0; i < d; ++i) {
    out.lo[i] = bf.lo[i] + bg.lo[i];
    out.hi[i] = bf.hi[i] + bg.hi[i];
    if (out.lo[i] < kCoordMin || out.hi[i] > kCoordMax) {
      throw LatticeError("convolve: result leaves the packable coordinate range");
    }
    extent[i] = out.hi[i] - out.lo[i] + 1;
    volume *= static_cast<double>(extent[i]);
  }
  const double pairs = static_cast<double>(f.support_size()) * static_cast<double>(g.support_size());

  if (volume <= 8.0 * pairs + 4096.0 && volume <= double(1 << 27)) {
    // Dense accumulation over the bounding box; index order matches key order.
    std::array<std::int64_t, kMaxDim> stride{};
    stride[d - 1] = 1;
    for (int i = d - 2; i >= 0; --i) stride[i] = stride[i + 1] * extent[i + 1];
    auto index_of = [&](const SitePoint& s) {
      std::int64_t idx = 0;
      for (int i = 0; i < d; ++i) idx += (s.x[i] - out.lo[i]) * stride[i];
      return idx;
    };
    std::vector<double> acc(static_cast<std::size_t>(volume), 0.0);
    std::vector<std::int64_t> gidx;
    gidx.reserve(g.support_size());
    const std::int64_t base = index_of(SitePoint{});  // index of origin (may be outside)
    for (const auto& e : g.entries()) gidx.push_back(index_of(unpack_site(e.key, d)) - base);
    for (const auto& ef : f.entries()) {
      const std::int64_t fi = index_of(unpack_site(ef.key, d));
      std::size_t k = 0;
      for (const auto& eg : g.entries()) acc[fi + gidx[k++]] += ef.weight * eg.weight;
    }
    std::vector<WeightEntry> entries;
    SitePoint s;
    for (std::size_t idx = 0; idx < acc.size(); ++idx) {
      if (acc[idx] == 0.0) continue;
      std::int64_t rem = static_cast<std::int64_t>(idx);
      for (int i = 0; i < d; ++i) {
        s.x[i] = static_cast<std::int32_t>(rem / stride[i]) + out.lo[i];
        rem %= stride[i];
      }
      entries.push_back({pack_site(s, d), acc[idx]});
    }
    return Kernel::from_sorted(d, std::move(entries));
  }

  std::vector<WeightEntry> terms;
  terms.reserve(f.support_size() * g.support_size());
  std::vector<std::int64_t> gdelta;
  gdelta.reserve(g.support_size());
  for (const auto& eg : g.entries()) gdelta.push_back(offset_delta(unpack_site(eg.key, d), d));
  for (const auto& ef : f.entries()) {
    std::size_t k = 0;
    for (const auto& eg : g.entries()) {
      terms.push_back({translate(ef.key, gdelta[k++]), ef.weight * eg.weight});
    }
  }
  return Kernel::from_entries(d, std::move(terms));
}

}  // namespace lse
