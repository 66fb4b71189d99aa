#pragma once

// Reproducible experiment driver: JSON-configured sweeps over (epsilon, flavor,
// side) cells, deterministic content-hash caching, CSV/JSON emission with atomic
// writes. Row contents are deterministic given config + seed (wall_ms excepted:
// timing is measured, not derived).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "toral_relax/common.hpp"
#include "toral_relax/parallel.hpp"
#include "toral_relax/relax.hpp"

namespace toral_relax {

using Json = nlohmann::json;

struct FlavorSide {
  Flavor flavor;
  Side side;
};

inline std::string flavor_name(Flavor f) { return f == Flavor::kNoisy ? "noisy" : "coarse"; }
inline std::string side_name(Side s) { return s == Side::kClassical ? "classical" : "quantum"; }

struct NRule {
  enum class Kind { kFixed, kScaled, kPower } kind = Kind::kFixed;
  Index fixed_n = 64;
  double m_prime = 28.0;
  double exponent = 1.0;

  Index n_for(double eps) const {
    switch (kind) {
      case Kind::kFixed:
        return fixed_n;
      case Kind::kScaled:
        return static_cast<Index>(std::ceil(m_prime / eps));
      case Kind::kPower:
        return static_cast<Index>(std::ceil(std::pow(eps, -exponent)));
    }
    return fixed_n;
  }
};

struct ExperimentConfig {
  IMat matrix;
  Vec translation;     // empty = zero
  FourierSeries kick;  // empty = none
  NoiseKernel kernel;
  std::vector<double> epsilon_grid;
  NRule n_rule;
  std::vector<FlavorSide> flavors;
  QuantumPath path = QuantumPath::kExact;
  std::uint64_t seed = 0;
  int threads = 0;
  std::optional<Vec> theta;
  double threshold = std::exp(-1.0);

  ClassicalMapSpec map() const {
    SymplecticIntMatrix f = SymplecticIntMatrix::make(matrix);
    Vec v = translation.size() > 0 ? translation : Vec::Zero(f.two_d());
    return ClassicalMapSpec::make(f, v, kick);
  }
};

inline ExperimentConfig config_from_json(const Json& j) {
  require(j.contains("schema") && j["schema"].get<int>() == 1,
          "config: schema version 1 required");
  ExperimentConfig c;
  require(j.contains("map") && j["map"].contains("matrix"), "config: map.matrix required");
  auto rows = j["map"]["matrix"];
  Index dim = static_cast<Index>(rows.size());
  require(dim > 0 && dim % 2 == 0, "config: matrix must be 2d x 2d");
  c.matrix.resize(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    require(static_cast<Index>(rows[i].size()) == dim, "config: matrix must be square");
    for (Index k = 0; k < dim; ++k) c.matrix(i, k) = rows[i][k].get<Index>();
  }
  if (j["map"].contains("translation")) {
    auto tr = j["map"]["translation"];
    c.translation.resize(static_cast<Index>(tr.size()));
    for (Index i = 0; i < c.translation.size(); ++i) c.translation[i] = tr[i].get<double>();
  }
  if (j["map"].contains("kick")) {
    const auto& kick = j["map"]["kick"];
    if (kick.contains("kappa")) {
      c.kick = standard_kick(kick["kappa"].get<double>());
    } else {
      for (const auto& mode : kick["modes"]) {
        IVec k(2);
        k << mode["k"][0].get<Index>(), mode["k"][1].get<Index>();
        c.kick.push_back({k, Complex(mode.value("re", 0.0), mode.value("im", 0.0))});
      }
    }
  }
  require(j.contains("kernel") && j["kernel"].contains("family"), "config: kernel.family required");
  std::string family = j["kernel"]["family"].get<std::string>();
  Index d = dim / 2;
  if (family == "gaussian") {
    c.kernel = gaussian_kernel(d);
  } else if (family == "compact_bump") {
    c.kernel = compact_bump_kernel(j["kernel"]["params"]["radius"].get<double>(), d);
  } else if (family == "power_law") {
    c.kernel = power_law_kernel(j["kernel"]["params"]["gamma_tail"].get<double>(), d);
  } else {
    throw Error("config: unknown kernel family '" + family + "'");
  }
  require(j.contains("epsilon_grid"), "config: epsilon_grid required");
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& e : j["epsilon_grid"]) {
    double eps = e.get<double>();
    require(eps > 0.0, "config: epsilon_grid entries must be positive");
    require(eps < prev, "config: epsilon_grid must be strictly descending");
    prev = eps;
    c.epsilon_grid.push_back(eps);
  }
  require(j.contains("N_rule"), "config: N_rule required");
  const auto& rule = j["N_rule"];
  if (rule.contains("fixed")) {
    c.n_rule.kind = NRule::Kind::kFixed;
    c.n_rule.fixed_n = rule["fixed"].get<Index>();
  } else if (rule.contains("scaled")) {
    c.n_rule.kind = NRule::Kind::kScaled;
    c.n_rule.m_prime = rule["scaled"]["M_prime"].get<double>();
  } else if (rule.contains("power")) {
    c.n_rule.kind = NRule::Kind::kPower;
    c.n_rule.exponent = rule["power"]["exponent"].get<double>();
  } else {
    throw Error("config: N_rule must be one of fixed/scaled/power");
  }
  require(j.contains("flavors"), "config: flavors required");
  for (const auto& fl : j["flavors"]) {
    std::string name = fl.get<std::string>();
    FlavorSide fs;
    if (name == "noisy_classical")
      fs = {Flavor::kNoisy, Side::kClassical};
    else if (name == "noisy_quantum")
      fs = {Flavor::kNoisy, Side::kQuantum};
    else if (name == "coarse_classical")
      fs = {Flavor::kCoarse, Side::kClassical};
    else if (name == "coarse_quantum")
      fs = {Flavor::kCoarse, Side::kQuantum};
    else
      throw Error("config: unknown flavor '" + name + "'");
    c.flavors.push_back(fs);
  }
  if (j.contains("paths")) {
    std::string p = j["paths"].get<std::string>();
    if (p == "exact")
      c.path = QuantumPath::kExact;
    else if (p == "dense")
      c.path = QuantumPath::kDense;
    else
      throw Error("config: paths must be exact or dense");
  }
  c.seed = j.value("seed", 0ULL);
  c.threads = j.value("threads", 0);
  if (j.contains("theta")) {
    Vec th(static_cast<Index>(j["theta"].size()));
    for (Index i = 0; i < th.size(); ++i) th[i] = j["theta"][i].get<double>();
    c.theta = th;
  }
  c.threshold = j.value("threshold", std::exp(-1.0));
  require(c.threshold > 0.0 && c.threshold < 1.0, "config: threshold in (0,1)");
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["schema"] = 1;
  Json rows = Json::array();
  for (Index i = 0; i < c.matrix.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < c.matrix.cols(); ++k) row.push_back(c.matrix(i, k));
    rows.push_back(row);
  }
  j["map"]["matrix"] = rows;
  if (c.translation.size() > 0 && c.translation.norm() > 0.0) {
    Json tr = Json::array();
    for (Index i = 0; i < c.translation.size(); ++i) tr.push_back(c.translation[i]);
    j["map"]["translation"] = tr;
  }
  if (!c.kick.empty()) {
    Json modes = Json::array();
    for (const auto& mode : c.kick) {
      Json m;
      m["k"] = {mode.k[0], mode.k[1]};
      m["re"] = mode.coeff.real();
      m["im"] = mode.coeff.imag();
      modes.push_back(m);
    }
    j["map"]["kick"]["modes"] = modes;
  }
  switch (c.kernel.family) {
    case NoiseFamily::kGaussian:
      j["kernel"]["family"] = "gaussian";
      break;
    case NoiseFamily::kCompactBump:
      j["kernel"]["family"] = "compact_bump";
      j["kernel"]["params"]["radius"] = c.kernel.radius;
      break;
    case NoiseFamily::kPowerLaw:
      j["kernel"]["family"] = "power_law";
      j["kernel"]["params"]["gamma_tail"] = c.kernel.gamma_tail;
      break;
  }
  j["epsilon_grid"] = c.epsilon_grid;
  switch (c.n_rule.kind) {
    case NRule::Kind::kFixed:
      j["N_rule"]["fixed"] = c.n_rule.fixed_n;
      break;
    case NRule::Kind::kScaled:
      j["N_rule"]["scaled"]["M_prime"] = c.n_rule.m_prime;
      break;
    case NRule::Kind::kPower:
      j["N_rule"]["power"]["exponent"] = c.n_rule.exponent;
      break;
  }
  Json flavors = Json::array();
  for (const auto& fs : c.flavors) flavors.push_back(flavor_name(fs.flavor) + "_" + side_name(fs.side));
  j["flavors"] = flavors;
  j["paths"] = c.path == QuantumPath::kExact ? "exact" : "dense";
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  if (c.theta) {
    Json th = Json::array();
    for (Index i = 0; i < c.theta->size(); ++i) th.push_back((*c.theta)[i]);
    j["theta"] = th;
  }
  j["threshold"] = c.threshold;
  return j;
}

/// FNV-1a 64-bit over the canonical (sorted-key) config serialization; thread
/// count is excluded so the cache key is invariant under parallelism.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("threads");
  std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

struct ResultRow {
  double epsilon = 0.0;
  Index n = 0;
  Vec theta;
  Flavor flavor = Flavor::kNoisy;
  Side side = Side::kClassical;
  std::optional<Index> tau;
  bool scan_cap_hit = false;
  double norm_lo = 0.0;  // ||T^{tau}|| (below threshold)
  double norm_hi = 1.0;  // ||T^{tau-1}||
  std::string regime;
  std::string error;  // per-row failure (e.g. inadmissible pair), row kept
  double wall_ms = 0.0;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string join_components(const Vec& v, Index lo, Index hi) {
  std::string s;
  for (Index i = lo; i < hi; ++i) {
    if (!s.empty()) s += ';';
    s += fmt_double(v[i]);
  }
  return s;
}

}  // namespace detail

inline std::string csv_header() {
  return "epsilon,N,theta_q,theta_p,flavor,side,tau,norm_lo,norm_hi,regime,wall_ms";
}

inline std::string row_to_csv(const ResultRow& r) {
  const Index d = r.theta.size() / 2;
  std::string tau_str = r.tau ? std::to_string(*r.tau) : "inf";
  std::ostringstream os;
  os << detail::fmt_double(r.epsilon) << ',' << r.n << ','
     << detail::join_components(r.theta, 0, d) << ','
     << detail::join_components(r.theta, d, 2 * d) << ',' << flavor_name(r.flavor) << ','
     << side_name(r.side) << ',' << tau_str << ',' << detail::fmt_double(r.norm_lo) << ','
     << detail::fmt_double(r.norm_hi) << ',' << (r.error.empty() ? r.regime : "error") << ','
     << detail::fmt_double(r.wall_ms);
  return os.str();
}

inline Json row_to_json(const ResultRow& r) {
  Json j;
  j["epsilon"] = r.epsilon;
  j["N"] = r.n;
  Json th = Json::array();
  for (Index i = 0; i < r.theta.size(); ++i) th.push_back(r.theta[i]);
  j["theta"] = th;
  j["flavor"] = flavor_name(r.flavor);
  j["side"] = side_name(r.side);
  if (r.tau)
    j["tau"] = *r.tau;
  else
    j["tau"] = nullptr;
  j["scan_cap_hit"] = r.scan_cap_hit;
  j["norm_lo"] = r.norm_lo;
  j["norm_hi"] = r.norm_hi;
  j["regime"] = r.regime;
  if (!r.error.empty()) j["error"] = r.error;
  j["wall_ms"] = r.wall_ms;
  return j;
}

inline ResultRow row_from_json(const Json& j) {
  ResultRow r;
  r.epsilon = j["epsilon"].get<double>();
  r.n = j["N"].get<Index>();
  auto th = j["theta"];
  r.theta.resize(static_cast<Index>(th.size()));
  for (Index i = 0; i < r.theta.size(); ++i) r.theta[i] = th[i].get<double>();
  r.flavor = j["flavor"].get<std::string>() == "noisy" ? Flavor::kNoisy : Flavor::kCoarse;
  r.side = j["side"].get<std::string>() == "classical" ? Side::kClassical : Side::kQuantum;
  if (!j["tau"].is_null()) r.tau = j["tau"].get<Index>();
  r.scan_cap_hit = j.value("scan_cap_hit", false);
  r.norm_lo = j["norm_lo"].get<double>();
  r.norm_hi = j["norm_hi"].get<double>();
  r.regime = j["regime"].get<std::string>();
  r.error = j.value("error", std::string());
  r.wall_ms = j["wall_ms"].get<double>();
  return r;
}

/// Computes one sweep cell.
inline ResultRow run_cell(const ExperimentConfig& config, double eps, FlavorSide fs) {
  ResultRow row;
  row.epsilon = eps;
  row.flavor = fs.flavor;
  row.side = fs.side;
  auto t0 = std::chrono::steady_clock::now();
  try {
    ClassicalMapSpec map = config.map();
    const SymplecticIntMatrix& f = map.linear_part;
    Index n = config.n_rule.n_for(eps);
    row.n = n;
    Vec theta = config.theta ? *config.theta : canonical_angle(f, n);
    require(is_admissible(f, n, theta), "inadmissible (F, N, theta)");
    row.theta = theta;
    row.regime = regime_name(classify_regime(f, eps, n).label);
    RelaxationResult res;
    if (fs.side == Side::kClassical) {
      res = tau_classical(map, config.kernel, eps, fs.flavor, config.threshold);
    } else {
      QuantumSetting setting = QuantumSetting::make(n, theta);
      res = tau_quantum(map, config.kernel, eps, setting, fs.flavor, config.path,
                        config.threshold);
    }
    row.tau = res.tau;
    row.scan_cap_hit = res.scan_cap_hit;
    row.norm_lo = res.norm_at;
    row.norm_hi = res.norm_before;
  } catch (const std::exception& e) {
    row.error = e.what();
    if (row.theta.size() == 0) row.theta = Vec::Zero(config.matrix.rows());
  }
  auto t1 = std::chrono::steady_clock::now();
  row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return row;
}

/// Full sweep over the (epsilon, flavor) grid, cells computed by a worker pool
/// and merged in config order. Cached by config content hash (cache key excludes
/// thread count); cache hits return the stored rows byte-identically.
inline std::vector<ResultRow> run_sweep(const ExperimentConfig& config,
                                        const std::string& cache_dir = "", bool force = false) {
  std::string hash = config_hash(config);
  std::filesystem::path cache_file;
  if (!cache_dir.empty()) {
    cache_file = std::filesystem::path(cache_dir) / (hash + ".json");
    if (!force && std::filesystem::exists(cache_file)) {
      std::ifstream in(cache_file);
      Json j;
      in >> j;
      std::vector<ResultRow> rows;
      for (const auto& rj : j["rows"]) rows.push_back(row_from_json(rj));
      return rows;
    }
  }
  const Index cells =
      static_cast<Index>(config.epsilon_grid.size()) * static_cast<Index>(config.flavors.size());
  std::vector<ResultRow> rows(static_cast<size_t>(cells));
  parallel_for_index(
      0, cells,
      [&](std::int64_t i) {
        const size_t fcount = config.flavors.size();
        double eps = config.epsilon_grid[static_cast<size_t>(i) / fcount];
        FlavorSide fs = config.flavors[static_cast<size_t>(i) % fcount];
        rows[static_cast<size_t>(i)] = run_cell(config, eps, fs);
      },
      config.threads);
  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    Json j;
    j["config_hash"] = hash;
    Json rj = Json::array();
    for (const auto& r : rows) rj.push_back(row_to_json(r));
    j["rows"] = rj;
    std::filesystem::path tmp = cache_file;
    tmp += ".tmp";
    {
      std::ofstream out(tmp);
      out << j.dump(1) << '\n';
    }
    std::filesystem::rename(tmp, cache_file);
  }
  return rows;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least squares of tau against ln(1/epsilon) over rows of one flavor/side.
inline RateFit fit_rate(const std::vector<ResultRow>& rows) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (!r.tau || !r.error.empty()) continue;
    xs.push_back(std::log(1.0 / r.epsilon));
    ys.push_back(static_cast<double>(*r.tau));
  }
  require(xs.size() >= 3, "fit_rate: at least 3 finite rows required");
  double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  RateFit fit;
  double denom = n * sxx - sx * sx;
  require(std::abs(denom) > 0.0, "fit_rate: degenerate abscissae");
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_tot = syy - sy * sy / n;
  double ss_res = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double p = fit.slope * xs[i] + fit.intercept;
    ss_res += (ys[i] - p) * (ys[i] - p);
  }
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

namespace detail {

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), "emit: cannot open " + tmp.string());
    out << content;
    require(out.good(), "emit: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

enum class EmitFormat { kCsv, kJson };

/// Writes rows (atomically) as CSV or JSON; a plot-ready companion file with
/// (ln(1/epsilon), tau) pairs is emitted alongside.
inline void emit(const std::vector<ResultRow>& rows, EmitFormat format,
                 const std::filesystem::path& path, const std::string& hash = "") {
  if (format == EmitFormat::kCsv) {
    std::string content = csv_header() + "\n";
    for (const auto& r : rows) content += row_to_csv(r) + "\n";
    detail::atomic_write(path, content);
  } else {
    Json j;
    j["config_hash"] = hash;
    Json rj = Json::array();
    for (const auto& r : rows) rj.push_back(row_to_json(r));
    j["rows"] = rj;
    detail::atomic_write(path, j.dump(1) + "\n");
  }
  std::filesystem::path plot = path;
  plot += ".plot.csv";
  std::string content = "ln_inv_epsilon,tau,flavor,side\n";
  for (const auto& r : rows) {
    if (!r.tau) continue;
    content += detail::fmt_double(std::log(1.0 / r.epsilon)) + "," + std::to_string(*r.tau) +
               "," + flavor_name(r.flavor) + "," + side_name(r.side) + "\n";
  }
  detail::atomic_write(plot, content);
}

inline std::vector<ResultRow> read_rows_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "read_rows_json: cannot open " + path.string());
  Json j;
  in >> j;
  std::vector<ResultRow> rows;
  for (const auto& rj : j["rows"]) rows.push_back(row_from_json(rj));
  return rows;
}

}  // namespace toral_relax
