#include "lse/oracle.hpp"

#include <bit>
#include <cmath>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace lse {

namespace {

Rational to_rational(double v) {
  // Doubles are dyadic rationals; convert exactly.
  int exp = 0;
  const double mant = std::frexp(v, &exp);
  const auto scaled = static_cast<std::int64_t>(std::ldexp(mant, 53));
  Rational r = scaled;
  const int shift = exp - 53;
  if (shift >= 0) {
    r *= Rational(BigInt(1) << shift);
  } else {
    r /= Rational(BigInt(1) << -shift);
  }
  return r;
}

// Steps a path may take: the l1 ball of the kernel's range.
std::vector<SitePoint> candidate_steps(const ModelSpec& spec) {
  const int radius =
      spec.kind == ModelKind::multiplicative ? std::max(1, spec.kernel.l1_radius()) : 1;
  return l1_ball(spec.dim, radius);
}

SitePoint add(const SitePoint& a, const SitePoint& b, int d) {
  SitePoint s = a;
  for (int j = 0; j < d; ++j) s.x[j] += b.x[j];
  return s;
}

}  // namespace

bool integer_valued(ModelKind kind) {
  return kind == ModelKind::osp || kind == ModelKind::gosp || kind == ModelKind::gobp ||
         kind == ModelKind::bcpp;
}

WeightField PathEnumeration::field() const {
  std::vector<WeightEntry> out;
  if (integer) {
    for (const auto& [k, c] : counts) out.push_back({k, c.convert_to<double>()});
  } else {
    for (const auto& [k, w] : weights) out.push_back({k, w.convert_to<double>()});
  }
  return WeightField::from_sorted(dim, std::move(out));
}

PathEnumeration enumerate_exact(const ModelSpec& spec, const DisorderStream& stream,
                                std::int64_t t, std::uint64_t max_paths) {
  validate(spec);
  if (t < 0) throw std::invalid_argument("enumerate_exact: t must be >= 0");
  const int d = spec.dim;
  const auto steps = candidate_steps(spec);
  if (std::pow(static_cast<double>(steps.size()), static_cast<double>(t)) >
      static_cast<double>(max_paths)) {
    throw OracleBudgetExceeded("enumerate_exact: (" + std::to_string(steps.size()) + ")^" +
                               std::to_string(t) + " paths exceed the budget");
  }

  PathEnumeration out;
  out.dim = d;
  out.t = t;
  out.integer = integer_valued(spec.kind);
  if (t == 0) {
    out.counts.clear();
    if (out.integer) {
      out.counts[origin_key(d)] = 1;
    } else {
      out.weights[origin_key(d)] = 1;
    }
    return out;
  }

  // Depth-first over path prefixes; a prefix with a zero factor is dropped.
  std::vector<SitePoint> path(static_cast<std::size_t>(t + 1));
  std::vector<BigInt> count_prod(static_cast<std::size_t>(t + 1));
  std::vector<Float50> weight_prod(static_cast<std::size_t>(t + 1));
  count_prod[0] = 1;
  weight_prod[0] = 1;
  auto visit = [&](auto&& self, std::int64_t s) -> void {
    for (const auto& o : steps) {
      const SitePoint y = add(path[s - 1], o, d);
      const double entry = matrix_entry(spec, stream, s, path[s - 1], y);
      ++out.paths;
      if (entry == 0.0) continue;
      path[s] = y;
      if (out.integer) {
        count_prod[s] = count_prod[s - 1] * static_cast<long long>(entry);
      } else {
        weight_prod[s] = weight_prod[s - 1] * Float50(entry);
      }
      if (s == t) {
        const SiteKey k = pack_site(y, d);
        if (out.integer) {
          out.counts[k] += count_prod[s];
        } else {
          out.weights[k] += weight_prod[s];
        }
      } else {
        self(self, s + 1);
      }
    }
  };
  visit(visit, 1);
  return out;
}

EquivalenceVerdict oracle_equivalence(const ModelSpec& spec, std::uint64_t seed,
                                      std::uint32_t replica, std::int64_t t,
                                      StreamLayout simulator_layout, double rel_tol) {
  const int d = spec.dim;
  EquivalenceVerdict v;

  const Stepper stepper(spec);
  const DisorderStream sim_stream(seed, replica, simulator_layout);
  auto state = NormalizedState::initial(d);
  for (std::int64_t s = 1; s <= t && !state.extinct; ++s) state = stepper.step(state, sim_stream, s);

  const DisorderStream oracle_stream(seed, replica, StreamLayout::canonical);
  const auto exact = enumerate_exact(spec, oracle_stream, t);

  auto fail = [&](const std::string& msg) {
    v.ok = false;
    v.message = msg;
    return v;
  };
  v.extinct = exact.extinct();
  if (state.extinct != exact.extinct()) {
    return fail(std::string("extinction mismatch: simulator ") +
                (state.extinct ? "extinct" : "alive") + ", oracle " +
                (exact.extinct() ? "extinct" : "alive"));
  }
  if (state.extinct) {
    v.ok = true;
    return v;
  }

  const auto& rho = state.rho;
  const std::size_t oracle_sites = exact.integer ? exact.counts.size() : exact.weights.size();
  v.sites = oracle_sites;
  auto site_name = [&](SiteKey k) { return site_to_string(unpack_site(k, d), d); };

  // Walk both supports in key order; report the first divergent site.
  std::vector<SiteKey> oracle_keys;
  if (exact.integer) {
    for (const auto& [k, c] : exact.counts) oracle_keys.push_back(k);
  } else {
    for (const auto& [k, w] : exact.weights) oracle_keys.push_back(k);
  }
  const auto entries = rho.entries();
  for (std::size_t i = 0; i < std::max(entries.size(), oracle_keys.size()); ++i) {
    const bool has_sim = i < entries.size();
    const bool has_oracle = i < oracle_keys.size();
    if (!has_sim || !has_oracle || entries[i].key != oracle_keys[i]) {
      const SiteKey k = !has_sim                 ? oracle_keys[i]
                        : !has_oracle            ? entries[i].key
                                                 : std::min(entries[i].key, oracle_keys[i]);
      return fail("support mismatch at site " + site_name(k));
    }
  }

  const double log_scale = state.log_mass + static_cast<double>(t) * std::log(stepper.mean().norm_a);
  if (exact.integer) {
    const double scale = std::exp(log_scale);
    for (const auto& e : entries) {
      const double recon = e.weight * scale;
      const double rounded = std::round(recon);
      const BigInt& expected = exact.counts.at(e.key);
      if (std::abs(recon - rounded) > 1e-6 * std::max(1.0, rounded) ||
          BigInt(static_cast<long long>(rounded)) != expected) {
        std::ostringstream os;
        os << "count mismatch at site " << site_name(e.key) << ": simulator " << recon
           << ", oracle " << expected;
        return fail(os.str());
      }
    }
  } else {
    Float50 total = 0;
    for (const auto& [k, w] : exact.weights) total += w;
    for (const auto& e : entries) {
      const double expected = Float50(exact.weights.at(e.key) / total).convert_to<double>();
      const double rel = std::abs(e.weight - expected) / expected;
      v.max_rel_error = std::max(v.max_rel_error, rel);
      if (rel > rel_tol) {
        std::ostringstream os;
        os.precision(17);
        os << "density mismatch at site " << site_name(e.key) << ": simulator " << e.weight
           << ", oracle " << expected;
        return fail(os.str());
      }
    }
    const double exact_log_scale = Float50(log(total)).convert_to<double>();
    const double err = std::abs(exact_log_scale - log_scale) / std::max(1.0, std::abs(log_scale));
    v.max_rel_error = std::max(v.max_rel_error, err);
    if (err > rel_tol) {
      std::ostringstream os;
      os.precision(17);
      os << "log mass mismatch: simulator " << log_scale << ", oracle " << exact_log_scale;
      return fail(os.str());
    }
  }
  v.ok = true;
  return v;
}

// ---------------------------------------------------------------------------

ExhaustiveLaw exhaustive_distribution(const ModelSpec& spec, std::int64_t t, int max_bits) {
  validate(spec);
  if (spec.kind != ModelKind::osp && spec.kind != ModelKind::gosp &&
      spec.kind != ModelKind::gobp) {
    throw std::invalid_argument("exhaustive_distribution: only OSP, GOSP and GOBP");
  }
  if (t < 0) throw std::invalid_argument("exhaustive_distribution: t must be >= 0");
  const int d = spec.dim;
  const bool has_diag = spec.kind != ModelKind::osp;
  const auto units = unit_vectors(d);

  // Each matrix entry is a single Bernoulli variable: eta_{s,y} (OSP/GOSP),
  // eta_{s,x,y} (GOBP bonds) or zeta_{s,y} (diagonal).
  struct Transition {
    std::size_t src, dst;
    int var;  // bit index, or -1 for an entry that is open with probability 1
  };
  enum VarClass { kEta = 0, kZeta = 1 };
  std::map<std::tuple<std::int64_t, int, SiteKey, SiteKey>, int> var_index;
  std::vector<VarClass> var_class;
  std::vector<std::vector<Transition>> layers;
  std::vector<std::vector<SiteKey>> reach{{origin_key(d)}};

  for (std::int64_t s = 1; s <= t; ++s) {
    std::map<SiteKey, std::size_t> next;
    std::vector<Transition> layer;
    const auto& prev = reach.back();
    for (std::size_t i = 0; i < prev.size(); ++i) {
      const SitePoint x = unpack_site(prev[i], d);
      auto consider = [&](const SitePoint& y, VarClass cls, double prob, SiteKey bond_from) {
        if (prob == 0.0) return;
        const SiteKey ky = pack_site(y, d);
        int var = -1;
        if (prob < 1.0) {
          const auto key = std::make_tuple(s, static_cast<int>(cls), ky, bond_from);
          auto it = var_index.find(key);
          if (it == var_index.end()) {
            it = var_index.emplace(key, static_cast<int>(var_class.size())).first;
            var_class.push_back(cls);
          }
          var = it->second;
        }
        auto [pos, inserted] = next.try_emplace(ky, next.size());
        layer.push_back({i, pos->second, var});
      };
      for (const auto& e : units) {
        const SitePoint y = add(x, e, d);
        // Site variables are shared by all incoming edges; bonds are per edge.
        consider(y, kEta, spec.p, spec.kind == ModelKind::gobp ? prev[i] : 0);
      }
      if (has_diag) consider(x, kZeta, spec.q, 0);
    }
    if (static_cast<int>(var_class.size()) > max_bits) {
      throw OracleBudgetExceeded("exhaustive_distribution: more than " +
                                 std::to_string(max_bits) + " disorder bits");
    }
    std::vector<SiteKey> keys(next.size());
    for (const auto& [k, idx] : next) keys[idx] = k;
    reach.push_back(std::move(keys));
    layers.push_back(std::move(layer));
  }

  const int bits = static_cast<int>(var_class.size());
  std::uint64_t eta_mask = 0;
  for (int b = 0; b < bits; ++b) {
    if (var_class[b] == kEta) eta_mask |= std::uint64_t{1} << b;
  }
  const int n_eta = std::popcount(eta_mask);
  const int n_zeta = bits - n_eta;

  // (k_eta, k_zeta, |N|, sum N^2) -> number of assignments.
  using GroupKey = std::tuple<int, int, std::uint64_t, std::uint64_t>;
  std::map<GroupKey, std::uint64_t> groups;
  std::size_t width = 0;
  for (const auto& r : reach) width = std::max(width, r.size());
  std::vector<std::uint64_t> cur(width), nxt(width);
  const std::uint64_t n_assign = std::uint64_t{1} << bits;
  for (std::uint64_t mask = 0; mask < n_assign; ++mask) {
    std::fill(cur.begin(), cur.end(), 0);
    cur[0] = 1;
    for (std::size_t s = 0; s < layers.size(); ++s) {
      std::fill(nxt.begin(), nxt.begin() + static_cast<std::ptrdiff_t>(reach[s + 1].size()), 0);
      for (const auto& tr : layers[s]) {
        if (tr.var < 0 || (mask >> tr.var & 1)) nxt[tr.dst] += cur[tr.src];
      }
      std::swap(cur, nxt);
    }
    std::uint64_t total = 0, squares = 0;
    for (std::size_t i = 0; i < reach.back().size(); ++i) {
      total += cur[i];
      squares += cur[i] * cur[i];
    }
    const int k_eta = std::popcount(mask & eta_mask);
    const int k_zeta = std::popcount(mask) - k_eta;
    ++groups[{k_eta, k_zeta, total, squares}];
  }

  const Rational p = to_rational(spec.p), q = to_rational(spec.q);
  const Rational norm_a = Rational(2 * d) * p + (has_diag ? q : Rational(0));
  Rational norm_pow = 1;
  for (std::int64_t s = 0; s < t; ++s) norm_pow *= norm_a;
  auto power = [](const Rational& x, int k) {
    Rational r = 1;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  };

  ExhaustiveLaw law;
  law.t = t;
  law.bits = bits;
  std::map<std::pair<Rational, Rational>, Rational> merged;
  for (const auto& [key, count] : groups) {
    const auto [k_eta, k_zeta, total, squares] = key;
    const Rational prob = Rational(count) * power(p, k_eta) * power(1 - p, n_eta - k_eta) *
                          power(q, k_zeta) * power(1 - q, n_zeta - k_zeta);
    const Rational mass = Rational(total) / norm_pow;
    const Rational overlap =
        total == 0 ? Rational(0) : Rational(squares) / (Rational(total) * Rational(total));
    merged[{mass, overlap}] += prob;
  }
  for (const auto& [mo, prob] : merged) {
    law.outcomes.push_back({mo.first, mo.second, prob});
    law.total_probability += prob;
    law.mean_normalized_mass += prob * mo.first;
  }
  law.martingale_exact = law.mean_normalized_mass == 1;
  return law;
}

}  // namespace lse
