// Command-line driver: JSON-configured relaxation-time experiments on quantized
// toral maps. Subcommands: relax, sweep, lattice-min, noise-eig, egorov, regimes,
// accept. Exit codes: 0 success, 1 config error, 2 numerical failure,
// 3 acceptance failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "toral_relax/acceptance.hpp"
#include "toral_relax/experiments.hpp"

namespace tr = toral_relax;

namespace {

tr::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw tr::Error("cannot open config file " + path);
  tr::Json j;
  in >> j;
  return tr::config_from_json(j);
}

void write_rows(const std::vector<tr::ResultRow>& rows, const std::string& out_dir,
                const std::string& format, const std::string& hash) {
  std::filesystem::create_directories(out_dir);
  tr::EmitFormat fmt = format == "json" ? tr::EmitFormat::kJson : tr::EmitFormat::kCsv;
  std::filesystem::path path =
      std::filesystem::path(out_dir) / ("results." + std::string(fmt == tr::EmitFormat::kJson ? "json" : "csv"));
  tr::emit(rows, fmt, path, hash);
  std::cout << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
}

int has_row_errors(const std::vector<tr::ResultRow>& rows) {
  int count = 0;
  for (const auto& r : rows)
    if (!r.error.empty()) {
      std::cerr << "row error (eps=" << r.epsilon << ", " << tr::flavor_name(r.flavor) << "/"
                << tr::side_name(r.side) << "): " << r.error << "\n";
      ++count;
    }
  return count;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relaxation times of noisy quantized toral maps"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", format = "csv";
  bool force = false;
  int threads = 0;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  app.add_flag("--force", force, "recompute even on cache hit");
  app.add_option("--threads", threads, "worker threads (0 = env/auto)");

  auto* cmd_relax = app.add_subcommand("relax", "single-point relaxation times");
  auto* cmd_sweep = app.add_subcommand("sweep", "full (epsilon, flavor) sweep");
  auto* cmd_lattice = app.add_subcommand("lattice-min", "minimal orbit-extension table");
  std::string matrix_str = "2,1,1,1";
  int lat_n_lo = 1, lat_n_hi = 14;
  cmd_lattice->add_option("--matrix", matrix_str, "row-major integer entries a,b,c,d");
  cmd_lattice->add_option("--n-lo", lat_n_lo, "first n");
  cmd_lattice->add_option("--n-hi", lat_n_hi, "last n");

  auto* cmd_noise = app.add_subcommand("noise-eig", "gamma / ghat table with GES bounds");
  double ne_eps = 0.1;
  long ne_n = 32;
  long ne_kmax = 8;
  std::string ne_family = "gaussian";
  double ne_param = 1.0;
  cmd_noise->add_option("--eps", ne_eps, "noise strength");
  cmd_noise->add_option("--N", ne_n, "dimension parameter N");
  cmd_noise->add_option("--kmax", ne_kmax, "|k|_inf range of the table");
  cmd_noise->add_option("--family", ne_family, "gaussian|compact_bump|power_law");
  cmd_noise->add_option("--param", ne_param, "radius (bump) or tail exponent (power law)");

  auto* cmd_egorov = app.add_subcommand("egorov", "Egorov discrepancy scaling table");
  double eg_kappa = 0.3;
  int eg_steps = 3;
  std::string eg_n_list = "16,32,64";
  cmd_egorov->add_option("--kappa", eg_kappa, "kick strength");
  cmd_egorov->add_option("--n-steps", eg_steps, "map iterations");
  cmd_egorov->add_option("--N-list", eg_n_list, "comma-separated N values");

  auto* cmd_regimes = app.add_subcommand("regimes", "regime classification for an (eps, N) grid");
  std::string rg_eps_list = "0.1,0.01,0.001";
  std::string rg_n_list = "10,100,1000,100000";
  cmd_regimes->add_option("--eps-list", rg_eps_list, "comma-separated epsilon values");
  cmd_regimes->add_option("--N-list", rg_n_list, "comma-separated N values");

  auto* cmd_accept = app.add_subcommand("accept", "run the acceptance suite");

  CLI11_PARSE(app, argc, argv);

  auto parse_list = [](const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
  };

  try {
    if (cmd_relax->parsed() || cmd_sweep->parsed()) {
      if (config_path.empty()) {
        std::cerr << "--config is required for relax/sweep\n";
        return 1;
      }
      tr::ExperimentConfig config;
      try {
        config = load_config(config_path);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      }
      if (threads > 0) config.threads = threads;
      if (cmd_relax->parsed()) {
        // single point: first epsilon of the grid only
        config.epsilon_grid.resize(1);
      }
      // admissibility checked up front, per-row errors reported but not fatal
      std::string hash = tr::config_hash(config);
      auto rows = tr::run_sweep(config, (std::filesystem::path(out_dir) / "cache").string(),
                                force);
      write_rows(rows, out_dir, format, hash);
      for (const auto& fs : config.flavors) {
        std::vector<tr::ResultRow> subset;
        for (const auto& r : rows)
          if (r.flavor == fs.flavor && r.side == fs.side && r.tau && r.error.empty())
            subset.push_back(r);
        if (subset.size() >= 3) {
          tr::RateFit fit = tr::fit_rate(subset);
          std::cout << tr::flavor_name(fs.flavor) << "/" << tr::side_name(fs.side)
                    << ": slope=" << fit.slope << " intercept=" << fit.intercept
                    << " r2=" << fit.r_squared << "\n";
        }
      }
      has_row_errors(rows);
      return 0;
    }

    if (cmd_lattice->parsed()) {
      std::vector<double> entries = parse_list(matrix_str);
      int dim = static_cast<int>(std::lround(std::sqrt(static_cast<double>(entries.size()))));
      if (dim * dim != static_cast<int>(entries.size()) || dim % 2 != 0) {
        std::cerr << "--matrix must be a square even-dimension integer matrix\n";
        return 1;
      }
      tr::IMat m(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) m(i, j) = static_cast<tr::Index>(entries[i * dim + j]);
      tr::SymplecticIntMatrix f = tr::SymplecticIntMatrix::make(m);
      double hhat = tr::ks_entropy(f).min_averaged;
      std::cout << "n,endpoint_min,endpoint_argmin,sum_min,sum_ratio\n";
      for (int n = lat_n_lo; n <= lat_n_hi; ++n) {
        auto endpoint = tr::min_orbit_extension(f, n, 4, tr::OrbitVariant::kEndpoint);
        auto sum = tr::min_orbit_extension(f, n, 4, tr::OrbitVariant::kSum);
        double ratio = std::log(sum.min_value) / (2.0 * hhat * n);
        std::cout << n << "," << endpoint.min_value_exact.get_str() << ",("
                  << endpoint.argmin[0] << ";" << endpoint.argmin[1] << "),"
                  << sum.min_value_exact.get_str() << "," << ratio << "\n";
      }
      return 0;
    }

    if (cmd_noise->parsed()) {
      tr::NoiseKernel kernel;
      if (ne_family == "gaussian")
        kernel = tr::gaussian_kernel(1);
      else if (ne_family == "compact_bump")
        kernel = tr::compact_bump_kernel(ne_param, 1);
      else if (ne_family == "power_law")
        kernel = tr::power_law_kernel(ne_param, 1);
      else {
        std::cerr << "unknown family " << ne_family << "\n";
        return 1;
      }
      std::cout << "k_q,k_p,ghat,gamma,ges_lo,ges_hi\n";
      for (long kq = -ne_kmax; kq <= ne_kmax; ++kq) {
        for (long kp = -ne_kmax; kp <= ne_kmax; ++kp) {
          tr::IVec k = tr::ivec2(kq, kp);
          double ghat = tr::classical_eigenvalue(kernel, ne_eps, k);
          double gamma = tr::quantum_eigenvalue(kernel, ne_eps, ne_n, k);
          std::cout << kq << "," << kp << "," << ghat << "," << gamma;
          if (kernel.is_gaussian()) {
            auto [lo, hi] = tr::ges_bounds(ne_eps, ne_n, k);
            std::cout << "," << lo << "," << hi;
          } else {
            std::cout << ",,";
          }
          std::cout << "\n";
        }
      }
      return 0;
    }

    if (cmd_egorov->parsed()) {
      tr::SymplecticIntMatrix f = tr::cat_map();
      tr::ClassicalMapSpec kicked =
          tr::ClassicalMapSpec::make(f, tr::Vec::Zero(2), tr::standard_kick(eg_kappa));
      tr::FourierSeries obs = tr::cos_q_observable();
      std::cout << "N,discrepancy\n";
      for (double nd : parse_list(eg_n_list)) {
        tr::Index n = static_cast<tr::Index>(nd);
        tr::QuantumSetting s = tr::QuantumSetting::make(n, tr::canonical_angle(f, n));
        std::cout << n << "," << tr::egorov_discrepancy(kicked, obs, eg_steps, s) << "\n";
      }
      return 0;
    }

    if (cmd_regimes->parsed()) {
      tr::SymplecticIntMatrix f = tr::cat_map();
      std::cout << "epsilon,N,regime,ehrenfest\n";
      for (double eps : parse_list(rg_eps_list)) {
        for (double nd : parse_list(rg_n_list)) {
          tr::Index n = static_cast<tr::Index>(nd);
          tr::RegimeTag tag = tr::classify_regime(f, eps, n);
          std::cout << eps << "," << n << "," << tr::regime_name(tag.label) << ","
                    << tag.ehrenfest << "\n";
        }
      }
      return 0;
    }

    if (cmd_accept->parsed()) {
      auto results = tr::run_acceptance();
      bool all_pass = true;
      for (const auto& res : results) {
        std::cout << (res.pass ? "[PASS] " : "[FAIL] ") << "criterion " << res.id << " ("
                  << res.name << "): " << res.detail << "  [" << res.seconds << " s]\n";
        all_pass = all_pass && res.pass;
      }
      return all_pass ? 0 : 3;
    }
  } catch (const tr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
