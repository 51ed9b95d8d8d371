#include "lse/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lse {

namespace {

bool in_open_unit(double v) { return v > 0.0 && v < 1.0; }
bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

// Position of a unit vector in the lexicographic order
// -e_0, -e_1, ..., -e_{d-1}, +e_{d-1}, ..., +e_0.
int unit_index(const SitePoint& o, int d) {
  for (int i = 0; i < d; ++i) {
    if (o.x[i] == -1) return i;
    if (o.x[i] == 1) return 2 * d - 1 - i;
  }
  return -1;
}

SitePoint difference(const SitePoint& y, const SitePoint& x, int d) {
  SitePoint o;
  for (int i = 0; i < d; ++i) o.x[i] = y.x[i] - x.x[i];
  return o;
}

double x_log_x(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

double sample_env(const EnvLaw& env, const DisorderStream& s, std::int64_t t, SiteKey y) {
  switch (env.kind) {
    case EnvLaw::Kind::gaussian:
      return s.gaussian(t, y, 0);
    case EnvLaw::Kind::bernoulli:
      return s.bernoulli(t, y, 0, env.bernoulli_p) ? 1.0 : 0.0;
    case EnvLaw::Kind::tabulated:
      return DiscreteLaw{env.values, env.probs}.quantile(s.uniform(t, y, 0));
  }
  return 0.0;
}

std::vector<std::string> law_problems(const std::vector<double>& values,
                                      const std::vector<double>& probs, const char* what) {
  std::vector<std::string> out;
  if (values.empty() || values.size() != probs.size()) {
    out.push_back(std::string(what) + ": values and probs must be nonempty and equally long");
    return out;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0) || !std::isfinite(values[i])) {
      out.push_back(std::string(what) + ": probabilities must be >= 0 and atoms finite");
    }
    total += probs[i];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    out.push_back(std::string(what) + ": probabilities must sum to 1");
  }
  return out;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::osp: return "osp";
    case ModelKind::gosp: return "gosp";
    case ModelKind::gobp: return "gobp";
    case ModelKind::dpre: return "dpre";
    case ModelKind::bcpp: return "bcpp";
    case ModelKind::multiplicative: return "multiplicative";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::osp, ModelKind::gosp, ModelKind::gobp, ModelKind::dpre,
                 ModelKind::bcpp, ModelKind::multiplicative}) {
    if (to_string(k) == name) return k;
  }
  throw ModelError("unknown model kind '" + name + "'");
}

double DiscreteLaw::moment(int k) const {
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) m += probs[i] * std::pow(values[i], k);
  return m;
}

double DiscreteLaw::quantile(double u) const {
  double cum = 0.0;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    cum += probs[i];
    if (u < cum) return values[i];
  }
  return values.back();
}

// ---------------------------------------------------------------------------

ModelSpec ModelSpec::osp(int dim, double p) {
  ModelSpec s;
  s.kind = ModelKind::osp;
  s.dim = dim;
  s.p = p;
  return s;
}

ModelSpec ModelSpec::gosp(int dim, double p, double q) {
  ModelSpec s = osp(dim, p);
  s.kind = ModelKind::gosp;
  s.q = q;
  return s;
}

ModelSpec ModelSpec::gobp(int dim, double p, double q) {
  ModelSpec s = gosp(dim, p, q);
  s.kind = ModelKind::gobp;
  return s;
}

ModelSpec ModelSpec::dpre(int dim, double beta, EnvLaw env) {
  ModelSpec s;
  s.kind = ModelKind::dpre;
  s.dim = dim;
  s.beta = beta;
  s.env = std::move(env);
  return s;
}

ModelSpec ModelSpec::bcpp(int dim, double p, double q) {
  ModelSpec s = gosp(dim, p, q);
  s.kind = ModelKind::bcpp;
  return s;
}

ModelSpec ModelSpec::multiplicative(Kernel a, DiscreteLaw disorder) {
  ModelSpec s;
  s.kind = ModelKind::multiplicative;
  s.dim = a.dim();
  s.kernel = std::move(a);
  s.disorder = std::move(disorder);
  return s;
}

std::string ModelSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind) << "(d=" << dim;
  switch (kind) {
    case ModelKind::osp: os << ", p=" << p; break;
    case ModelKind::gosp:
    case ModelKind::gobp:
    case ModelKind::bcpp: os << ", p=" << p << ", q=" << q; break;
    case ModelKind::dpre: {
      os << ", beta=" << beta << ", env=";
      switch (env.kind) {
        case EnvLaw::Kind::gaussian: os << "gaussian"; break;
        case EnvLaw::Kind::bernoulli: os << "bernoulli(" << env.bernoulli_p << ")"; break;
        case EnvLaw::Kind::tabulated: os << "tabulated"; break;
      }
      break;
    }
    case ModelKind::multiplicative: os << ", |a|=" << kernel.total_mass(); break;
  }
  os << ")";
  return os.str();
}

std::vector<std::string> model_problems(const ModelSpec& s, bool include_degenerate) {
  std::vector<std::string> out;
  if (s.dim < 1 || s.dim > kMaxDim) {
    out.push_back("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    return out;
  }
  std::vector<std::string> degenerate;
  switch (s.kind) {
    case ModelKind::osp:
      if (!in_unit(s.p) || s.p == 0.0) out.push_back("osp: p must be in (0, 1]");
      break;
    case ModelKind::gosp:
    case ModelKind::gobp:
      if (!in_unit(s.p) || !in_unit(s.q)) out.push_back("p and q must be in [0, 1]");
      else if (2.0 * s.dim * s.p + s.q <= 0.0) out.push_back("|a| = 2dp + q must be positive");
      else if (!in_open_unit(s.p) && !in_open_unit(s.q))
        degenerate.push_back("either p or q must lie in (0, 1)");
      break;
    case ModelKind::bcpp:
      if (!in_unit(s.p) || !in_unit(s.q)) out.push_back("p and q must be in [0, 1]");
      else if (s.p + s.q <= 0.0) out.push_back("|a| = p + q must be positive");
      else if (s.p == 0.0) degenerate.push_back("bcpp: p must be in (0, 1]");
      break;
    case ModelKind::dpre:
      if (!(s.beta >= 0.0) || !std::isfinite(s.beta)) out.push_back("beta must be in [0, inf)");
      if (s.env.kind == EnvLaw::Kind::bernoulli && !in_unit(s.env.bernoulli_p))
        out.push_back("bernoulli environment: p must be in [0, 1]");
      if (s.env.kind == EnvLaw::Kind::tabulated) {
        auto more = law_problems(s.env.values, s.env.probs, "tabulated environment");
        out.insert(out.end(), more.begin(), more.end());
      }
      break;
    case ModelKind::multiplicative: {
      if (s.kernel.empty() || s.kernel.dim() != s.dim) {
        out.push_back("multiplicative: mean kernel must be nonempty with matching dimension");
      }
      auto more = law_problems(s.disorder.values, s.disorder.probs, "column factor law");
      out.insert(out.end(), more.begin(), more.end());
      if (more.empty()) {
        for (double v : s.disorder.values) {
          if (v < 0.0) out.push_back("column factor law must be supported on [0, inf)");
        }
        if (std::abs(s.disorder.mean() - 1.0) > 1e-12) {
          out.push_back("column factor law must have mean one");
        }
      }
      break;
    }
  }
  if (out.empty() && include_degenerate) {
    // Irreducibility only makes sense once the kernel is well-formed.
    MeanKernel mk;
    ModelSpec relaxed = s;
    relaxed.allow_degenerate = true;
    mk = mean_kernel(relaxed);
    if (!mk.irreducible) degenerate.push_back("mean kernel is not irreducible");
    out.insert(out.end(), degenerate.begin(), degenerate.end());
  }
  return out;
}

void validate(const ModelSpec& spec) {
  const auto hard = model_problems(spec, false);
  if (!hard.empty()) throw ModelError(spec.describe() + ": " + hard.front());
  if (!spec.allow_degenerate) {
    const auto all = model_problems(spec, true);
    if (!all.empty()) throw ModelError(spec.describe() + ": " + all.front());
  }
}

bool is_irreducible(const Kernel& a) {
  const int d = a.dim();
  std::vector<std::array<double, kMaxDim>> rows;
  const auto& e = a.entries();
  for (const auto& u : e) {
    for (const auto& v : e) {
      const auto su = unpack_site(u.key, d);
      const auto sv = unpack_site(v.key, d);
      std::array<double, kMaxDim> r{};
      for (int i = 0; i < d; ++i) r[i] = su.x[i] - sv.x[i];
      rows.push_back(r);
    }
  }
  // Rank by Gaussian elimination with partial pivoting.
  int rank = 0;
  for (int col = 0; col < d && rank < d; ++col) {
    std::size_t pivot = rows.size();
    double best = 0.5;
    for (std::size_t r = rank; r < rows.size(); ++r) {
      if (std::abs(rows[r][col]) > best) {
        best = std::abs(rows[r][col]);
        pivot = r;
      }
    }
    if (pivot == rows.size()) continue;
    std::swap(rows[pivot], rows[rank]);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r == static_cast<std::size_t>(rank) || rows[r][col] == 0.0) continue;
      const double f = rows[r][col] / rows[rank][col];
      for (int i = 0; i < d; ++i) rows[r][i] -= f * rows[rank][i];
    }
    ++rank;
  }
  return rank == d;
}

MeanKernel mean_kernel(const ModelSpec& spec) {
  validate(spec);
  const int d = spec.dim;
  std::vector<std::pair<SitePoint, double>> pts;
  auto add_neighbors = [&](double w) {
    for (const auto& e : unit_vectors(d)) pts.push_back({e, w});
  };
  switch (spec.kind) {
    case ModelKind::osp: add_neighbors(spec.p); break;
    case ModelKind::gosp:
    case ModelKind::gobp:
      add_neighbors(spec.p);
      pts.push_back({SitePoint{}, spec.q});
      break;
    case ModelKind::dpre:
      add_neighbors(std::exp(lambda_dpre(spec.beta, spec.env)) / (2.0 * d));
      break;
    case ModelKind::bcpp:
      add_neighbors(spec.p / (2.0 * d));
      pts.push_back({SitePoint{}, spec.q});
      break;
    case ModelKind::multiplicative: {
      MeanKernel mk;
      mk.a = spec.kernel;
      mk.norm_a = mk.a.total_mass();
      mk.norm_a2 = mk.a.sum_of_squares();
      mk.range = mk.a.l1_radius();
      mk.irreducible = is_irreducible(mk.a);
      return mk;
    }
  }
  MeanKernel mk;
  mk.a = Kernel::from_points(d, pts);
  mk.norm_a = mk.a.total_mass();
  mk.norm_a2 = mk.a.sum_of_squares();
  mk.range = mk.a.l1_radius();
  mk.irreducible = is_irreducible(mk.a);
  return mk;
}

double lambda_dpre(double beta, const EnvLaw& env) {
  if (beta < 0.0) throw ModelError("lambda: beta must be nonnegative");
  switch (env.kind) {
    case EnvLaw::Kind::gaussian:
      return 0.5 * beta * beta;
    case EnvLaw::Kind::bernoulli:
      return std::log1p(env.bernoulli_p * std::expm1(beta));
    case EnvLaw::Kind::tabulated: {
      double top = -INFINITY;
      for (std::size_t i = 0; i < env.values.size(); ++i) {
        if (env.probs[i] > 0.0) top = std::max(top, beta * env.values[i]);
      }
      double s = 0.0;
      for (std::size_t i = 0; i < env.values.size(); ++i) {
        if (env.probs[i] > 0.0) s += env.probs[i] * std::exp(beta * env.values[i] - top);
      }
      return top + std::log(s);
    }
  }
  return 0.0;
}

double lambda_dpre_derivative(double beta, const EnvLaw& env) {
  if (beta < 0.0) throw ModelError("lambda: beta must be nonnegative");
  switch (env.kind) {
    case EnvLaw::Kind::gaussian:
      return beta;
    case EnvLaw::Kind::bernoulli: {
      const double r = env.bernoulli_p * std::exp(beta);
      return r / (1.0 - env.bernoulli_p + r);
    }
    case EnvLaw::Kind::tabulated: {
      const double lam = lambda_dpre(beta, env);
      double s = 0.0;
      for (std::size_t i = 0; i < env.values.size(); ++i) {
        if (env.probs[i] > 0.0) {
          s += env.probs[i] * env.values[i] * std::exp(beta * env.values[i] - lam);
        }
      }
      return s;
    }
  }
  return 0.0;
}

double gamma_constant(const ModelSpec& spec) {
  validate(spec);
  const double d = spec.dim;
  switch (spec.kind) {
    case ModelKind::osp:
      return 1.0 / spec.p;
    case ModelKind::gosp:
    case ModelKind::gobp: {
      const double n = 2.0 * d * spec.p + spec.q;
      return 1.0 + (2.0 * d * spec.p * (1.0 - spec.p) + spec.q * (1.0 - spec.q)) / (n * n);
    }
    case ModelKind::dpre:
      return std::exp(lambda_dpre(2.0 * spec.beta, spec.env) -
                      2.0 * lambda_dpre(spec.beta, spec.env));
    case ModelKind::bcpp: {
      const double n = spec.p + spec.q;
      return 1.0 + (spec.p * (1.0 - spec.p) + spec.q * (1.0 - spec.q)) / (n * n);
    }
    case ModelKind::multiplicative:
      return spec.disorder.moment(2);
  }
  return 1.0;
}

double sg_log_margin(const ModelSpec& spec) {
  const MeanKernel mk = mean_kernel(spec);
  const double norm = mk.norm_a;
  switch (spec.kind) {
    case ModelKind::osp:
    case ModelKind::gosp:
    case ModelKind::gobp:
    case ModelKind::bcpp:
      // {0,1}-valued entries: P[A ln A] = 0.
      return -x_log_x(norm);
    case ModelKind::dpre: {
      const double lam = lambda_dpre(spec.beta, spec.env);
      const double dlam = lambda_dpre_derivative(spec.beta, spec.env);
      return std::exp(lam) * (spec.beta * dlam - lam - std::log(2.0 * spec.dim));
    }
    case ModelKind::multiplicative: {
      double eta_log = 0.0;
      for (std::size_t i = 0; i < spec.disorder.values.size(); ++i) {
        eta_log += spec.disorder.probs[i] * x_log_x(spec.disorder.values[i]);
      }
      double a_log = 0.0;
      for (const auto& e : mk.a.entries()) a_log += x_log_x(e.weight);
      return norm * eta_log + a_log - x_log_x(norm);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

std::vector<SitePoint> column_offsets(const ModelSpec& spec, const MeanKernel& mk) {
  std::vector<SitePoint> out;
  for (const auto& e : mk.a.entries()) out.push_back(unpack_site(e.key, spec.dim));
  return out;
}

void sample_column(const ModelSpec& spec, std::span<const SitePoint> offsets,
                   const DisorderStream& s, std::int64_t t, SiteKey y, std::span<double> out) {
  const int d = spec.dim;
  switch (spec.kind) {
    case ModelKind::osp:
    case ModelKind::gosp: {
      const double eta = s.bernoulli(t, y, 0, spec.p) ? 1.0 : 0.0;
      const double zeta =
          spec.kind == ModelKind::gosp && s.bernoulli(t, y, 1, spec.q) ? 1.0 : 0.0;
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        out[i] = l1_norm(offsets[i], d) == 0 ? zeta : eta;
      }
      return;
    }
    case ModelKind::gobp: {
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (l1_norm(offsets[i], d) == 0) {
          out[i] = s.bernoulli(t, y, 0, spec.q) ? 1.0 : 0.0;
        } else {
          const auto slot = static_cast<std::uint32_t>(1 + unit_index(offsets[i], d));
          out[i] = s.bernoulli(t, y, slot, spec.p) ? 1.0 : 0.0;
        }
      }
      return;
    }
    case ModelKind::dpre: {
      const double w = std::exp(spec.beta * sample_env(spec.env, s, t, y)) / (2.0 * d);
      for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = w;
      return;
    }
    case ModelKind::bcpp: {
      const bool eta = s.bernoulli(t, y, 0, spec.p);
      const bool zeta = s.bernoulli(t, y, 1, spec.q);
      const int wind = static_cast<int>(s.index(t, y, 2, static_cast<std::uint32_t>(2 * d)));
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (l1_norm(offsets[i], d) == 0) {
          out[i] = zeta ? 1.0 : 0.0;
        } else {
          out[i] = (eta && unit_index(offsets[i], d) == wind) ? 1.0 : 0.0;
        }
      }
      return;
    }
    case ModelKind::multiplicative: {
      const double f = spec.disorder.quantile(s.uniform(t, y, 0));
      for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = f * spec.kernel.at(offsets[i]);
      return;
    }
  }
}

double matrix_entry(const ModelSpec& spec, const DisorderStream& s, std::int64_t t,
                    const SitePoint& x, const SitePoint& y) {
  const int d = spec.dim;
  const SitePoint o = difference(y, x, d);
  const int dist = l1_norm(o, d);
  const SiteKey ky = pack_site(y, d);
  switch (spec.kind) {
    case ModelKind::osp:
      return dist == 1 && s.uniform(t, ky, 0) < spec.p ? 1.0 : 0.0;
    case ModelKind::gosp:
      if (dist == 1) return s.uniform(t, ky, 0) < spec.p ? 1.0 : 0.0;
      if (dist == 0) return s.uniform(t, ky, 1) < spec.q ? 1.0 : 0.0;
      return 0.0;
    case ModelKind::gobp: {
      if (dist == 0) return s.uniform(t, ky, 0) < spec.q ? 1.0 : 0.0;
      if (dist != 1) return 0.0;
      const auto units = unit_vectors(d);
      const auto k = std::find(units.begin(), units.end(), o) - units.begin();
      return s.uniform(t, ky, static_cast<std::uint32_t>(1 + k)) < spec.p ? 1.0 : 0.0;
    }
    case ModelKind::dpre:
      if (dist != 1) return 0.0;
      return std::exp(spec.beta * sample_env(spec.env, s, t, ky)) / (2.0 * d);
    case ModelKind::bcpp: {
      double v = 0.0;
      if (dist == 0 && s.uniform(t, ky, 1) < spec.q) v += 1.0;
      if (dist == 1 && s.uniform(t, ky, 0) < spec.p) {
        const auto units = unit_vectors(d);
        const auto n = static_cast<double>(units.size());
        auto k = static_cast<std::size_t>(s.uniform(t, ky, 2) * n);
        k = std::min(k, units.size() - 1);
        if (units[k] == o) v += 1.0;
      }
      return v;
    }
    case ModelKind::multiplicative: {
      const double a = spec.kernel.at(o);
      if (a == 0.0) return 0.0;
      return spec.disorder.quantile(s.uniform(t, ky, 0)) * a;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

Stepper::Stepper(ModelSpec spec) : spec_(std::move(spec)), mean_(mean_kernel(spec_)) {
  offsets_ = column_offsets(spec_, mean_);
  for (const auto& o : offsets_) deltas_.push_back(offset_delta(o, spec_.dim));
}

NormalizedState Stepper::step(const NormalizedState& state, const DisorderStream& stream,
                              std::int64_t t) const {
  if (state.extinct) throw ModelError("sample_step: state is extinct");
  if (t < 1) throw ModelError("sample_step: t must be >= 1");
  const int d = spec_.dim;
  if (state.rho.coord_radius() + mean_.range > kCoordMax) {
    throw LatticeError("sample_step: support would leave the packable coordinate range");
  }

  // Each shifted support rho + o is sorted, so the candidate columns come out
  // of a k-way merge and every source lookup is a monotone pointer.
  const auto src = state.rho.entries();
  const std::size_t n = src.size(), k = deltas_.size();
  std::vector<std::size_t> ptr(k, 0);
  std::vector<double> column(k);
  std::vector<WeightEntry> next;
  next.reserve(n * 2);
  const double inv_norm = 1.0 / mean_.norm_a;
  for (;;) {
    bool any = false;
    SiteKey y = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (ptr[i] == n) continue;
      const SiteKey c = translate(src[ptr[i]].key, deltas_[i]);
      if (!any || c < y) y = c;
      any = true;
    }
    if (!any) break;
    sample_column(spec_, offsets_, stream, t, y, column);
    double w = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (ptr[i] == n || translate(src[ptr[i]].key, deltas_[i]) != y) continue;
      const double r = src[ptr[i]++].weight;
      if (column[i] == 0.0) continue;
      w += r * column[i];
    }
    w *= inv_norm;
    if (w > 0.0) next.push_back({y, w});
  }
  return normalize(WeightField::from_sorted(d, std::move(next)), state.log_mass, t);
}

NormalizedState sample_step(const ModelSpec& spec, const NormalizedState& state,
                            const DisorderStream& stream, std::int64_t t) {
  return Stepper(spec).step(state, stream, t);
}

// ---------------------------------------------------------------------------

double column_second_moment(const ModelSpec& spec, const MeanKernel& mk, const SitePoint& x,
                            const SitePoint& xt, const SitePoint& y) {
  const int d = spec.dim;
  const SitePoint o = difference(y, x, d);
  const SitePoint ot = difference(y, xt, d);
  const double a = mk.a.at(o);
  const double at = mk.a.at(ot);
  const bool same = x == xt;
  switch (spec.kind) {
    case ModelKind::osp:
    case ModelKind::gosp:
      if (same && l1_norm(o, d) == 0) return spec.q;
      if (l1_norm(o, d) == 1 && l1_norm(ot, d) == 1) return spec.p;
      return a * at;
    case ModelKind::gobp:
      return same ? a : a * at;
    case ModelKind::dpre:
      return std::exp(lambda_dpre(2.0 * spec.beta, spec.env) -
                      2.0 * lambda_dpre(spec.beta, spec.env)) *
             a * at;
    case ModelKind::bcpp: {
      if (same) return a;
      double v = 0.0;
      if (x == y) v += spec.q * at;
      if (xt == y) v += spec.q * a;
      return v;
    }
    case ModelKind::multiplicative:
      return spec.disorder.moment(2) * a * at;
  }
  return 0.0;
}

MonteCarloEstimate empirical_column_covariance(const ModelSpec& spec, std::size_t n_samples,
                                               const SitePoint& x, const SitePoint& xt,
                                               const SitePoint& y, std::uint64_t seed) {
  const MeanKernel mk = mean_kernel(spec);
  const auto offsets = column_offsets(spec, mk);
  const int d = spec.dim;
  auto find = [&](const SitePoint& from) -> long {
    const SitePoint o = difference(y, from, d);
    const auto it = std::find(offsets.begin(), offsets.end(), o);
    return it == offsets.end() ? -1 : it - offsets.begin();
  };
  const long i = find(x);
  const long it = find(xt);
  MonteCarloEstimate est;
  est.samples = n_samples;
  if (i < 0 || it < 0 || n_samples == 0) return est;

  const DisorderStream stream(seed, 0);
  const SiteKey ky = pack_site(y, d);
  std::vector<double> col(offsets.size());
  double mean = 0.0, m2 = 0.0;
  for (std::size_t n = 0; n < n_samples; ++n) {
    sample_column(spec, offsets, stream, static_cast<std::int64_t>(n + 1), ky, col);
    const double v = col[i] * col[it];
    const double delta = v - mean;
    mean += delta / static_cast<double>(n + 1);
    m2 += delta * (v - mean);
  }
  est.mean = mean;
  if (n_samples > 1) {
    est.std_error = std::sqrt(m2 / static_cast<double>(n_samples - 1) /
                              static_cast<double>(n_samples));
  }
  return est;
}

double covariance_quadratic_form(const ModelSpec& spec, const MeanKernel& mk, double gamma,
                                 const WeightField& xi) {
  const int d = spec.dim;
  const auto offsets = column_offsets(spec, mk);
  std::vector<SiteKey> columns;
  for (const auto& e : xi.entries()) {
    for (const auto& o : offsets) columns.push_back(translate(e.key, offset_delta(o, d)));
  }
  std::sort(columns.begin(), columns.end());
  columns.erase(std::unique(columns.begin(), columns.end()), columns.end());

  double total = 0.0;
  for (SiteKey ky : columns) {
    const SitePoint y = unpack_site(ky, d);
    for (const auto& o : offsets) {
      const SitePoint x = difference(y, o, d);
      const double wx = xi.at(x);
      if (wx == 0.0) continue;
      for (const auto& ot : offsets) {
        const SitePoint xt = difference(y, ot, d);
        const double wxt = xi.at(xt);
        if (wxt == 0.0) continue;
        const double c = column_second_moment(spec, mk, x, xt, y) -
                         gamma * mk.a.at(o) * mk.a.at(ot);
        total += c * wx * wxt;
      }
    }
  }
  return total;
}

}  // namespace lse
