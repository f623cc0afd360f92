#include "otmin/run.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "otmin/analytic.hpp"

namespace otmin {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "': " + why);
}

double require_number(const json& j, const std::string& key) {
    if (!j.contains(key)) bad_key(key, "missing");
    if (!j[key].is_number()) bad_key(key, "expected a number");
    return j[key].get<double>();
}

Command parse_command(const std::string& s) {
    if (s == "solve-nu") return Command::SolveNu;
    if (s == "solve-mu") return Command::SolveMu;
    if (s == "solve-joint") return Command::SolveJoint;
    if (s == "solve-barrier") return Command::SolveBarrier;
    if (s == "analytic") return Command::Analytic;
    if (s == "validate") return Command::Validate;
    bad_key("command", "unknown command '" + s + "'");
}

GridSpec parse_domain(const json& j) {
    if (!j.contains("domain")) bad_key("domain", "missing");
    const json& d = j["domain"];
    const int dim = static_cast<int>(require_number(d, "dim"));
    if (dim != 1 && dim != 2) bad_key("domain.dim", "must be 1 or 2");
    auto vec = [&](const std::string& key) {
        if (!d.contains(key) || !d[key].is_array() || static_cast<int>(d[key].size()) != dim)
            bad_key("domain." + key, "expected an array of length dim");
        std::vector<double> out;
        for (const auto& v : d[key]) out.push_back(v.get<double>());
        return out;
    };
    const auto lower = vec("lower");
    const auto upper = vec("upper");
    if (!d.contains("points")) bad_key("domain.points", "missing");
    std::vector<int> pts;
    for (const auto& v : d["points"]) pts.push_back(v.get<int>());
    if (static_cast<int>(pts.size()) != dim) bad_key("domain.points", "expected dim entries");
    for (int p : pts)
        if (p < 1) bad_key("domain.points", "entries must be positive");
    if (dim == 1) return GridSpec::interval(lower[0], upper[0], pts[0]);
    return GridSpec::box2d(lower[0], lower[1], upper[0], upper[1], pts[0], pts[1]);
}

KernelSpec parse_kernel(const json& j) {
    KernelSpec k;
    if (!j.contains("kernel")) return k;
    const json& kj = j["kernel"];
    if (kj.contains("name")) k.name = kj["name"].get<std::string>();
    if (k.name != "quadratic" && k.name != "power" && k.name != "custom")
        bad_key("kernel.name", "unknown kernel '" + k.name + "'");
    if (kj.contains("lambda")) k.lambda = kj["lambda"].get<double>();
    if (k.lambda <= 0) bad_key("kernel.lambda", "must be positive");
    if (kj.contains("q")) k.q = kj["q"].get<double>();
    if (k.name == "power" && k.q < 1.0) bad_key("kernel.q", "must be >= 1");
    if (k.name == "custom") {
        if (!kj.contains("table") || !kj["table"].is_array())
            bad_key("kernel.table", "custom kernel needs a table of [s, V] pairs");
        for (const auto& row : kj["table"]) {
            if (!row.is_array() || row.size() != 2) bad_key("kernel.table", "rows must be pairs");
            k.table.emplace_back(row[0].get<double>(), row[1].get<double>());
        }
    }
    return k;
}

SourceSpec parse_source(const json& j, const std::string& key) {
    SourceSpec s;
    if (!j.contains(key)) return s;
    const json& sj = j[key];
    const std::string type = sj.contains("type") ? sj["type"].get<std::string>() : "uniform";
    if (type == "uniform") {
        s.kind = SourceSpec::Kind::Uniform;
    } else if (type == "gaussian") {
        s.kind = SourceSpec::Kind::Gaussian;
        if (sj.contains("center"))
            for (const auto& v : sj["center"]) s.center.push_back(v.get<double>());
        if (sj.contains("sigma")) s.sigma = sj["sigma"].get<double>();
        if (s.sigma <= 0) bad_key(key + ".sigma", "must be positive");
    } else if (type == "csv") {
        s.kind = SourceSpec::Kind::Csv;
        if (!sj.contains("path")) bad_key(key + ".path", "missing");
        s.path = sj["path"].get<std::string>();
        if (!fs::exists(s.path)) bad_key(key + ".path", "file does not exist: " + s.path);
    } else if (type == "analytic") {
        s.kind = SourceSpec::Kind::Analytic;
    } else {
        bad_key(key + ".type", "unknown source type '" + type + "'");
    }
    return s;
}

SolverConfig parse_solver(const json& j) {
    SolverConfig c;
    if (!j.contains("solver")) return c;
    const json& s = j["solver"];
    if (s.contains("max_outer_iter")) c.max_outer_iter = s["max_outer_iter"].get<int>();
    if (c.max_outer_iter < 1) bad_key("solver.max_outer_iter", "must be >= 1");
    if (s.contains("fw_tol")) c.fw_tol = s["fw_tol"].get<double>();
    if (!(c.fw_tol > 0)) bad_key("solver.fw_tol", "must be positive");
    if (s.contains("line_search")) {
        const std::string ls = s["line_search"].get<std::string>();
        if (ls == "golden-section") c.line_search = LineSearchKind::GoldenSection;
        else if (ls == "fixed-schedule") c.line_search = LineSearchKind::FixedSchedule;
        else bad_key("solver.line_search", "expected golden-section or fixed-schedule");
    }
    if (s.contains("transport")) {
        const std::string tm = s["transport"].get<std::string>();
        if (tm == "exact") c.transport_method = TransportMethod::Exact;
        else if (tm == "entropic") c.transport_method = TransportMethod::Entropic;
        else bad_key("solver.transport", "expected exact or entropic");
    }
    if (s.contains("entropic_epsilon")) c.entropic_epsilon = s["entropic_epsilon"].get<double>();
    if (c.entropic_epsilon <= 0) bad_key("solver.entropic_epsilon", "must be positive");
    if (s.contains("barrier_delta") && !s["barrier_delta"].is_null())
        c.barrier_delta = s["barrier_delta"].get<double>();
    if (s.contains("prox_weight") && !s["prox_weight"].is_null())
        c.prox_weight = s["prox_weight"].get<double>();
    if (s.contains("seed")) c.seed = s["seed"].get<std::uint64_t>();
    if (s.contains("multi_start")) c.multi_start = s["multi_start"].get<int>();
    if (c.multi_start < 1) bad_key("solver.multi_start", "must be >= 1");
    if (s.contains("away_steps")) c.away_steps = s["away_steps"].get<bool>();
    if (s.contains("support_threshold")) c.support_threshold = s["support_threshold"].get<double>();
    if (s.contains("max_sweeps")) c.max_sweeps = s["max_sweeps"].get<int>();
    if (c.max_sweeps < 1) bad_key("solver.max_sweeps", "must be >= 1");
    if (s.contains("line_search_probes")) c.line_search_probes = s["line_search_probes"].get<int>();
    if (c.line_search_probes < 6) bad_key("solver.line_search_probes", "must be >= 6");
    return c;
}

void apply_override(json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) bad_key(spec, "override must look like path.to.key=value");
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    json* node = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) bad_key(spec, "empty key path");
    for (size_t k = 0; k + 1 < parts.size(); ++k) node = &((*node)[parts[k]]);
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) (*node)[parts.back()] = value;  // plain string
    else (*node)[parts.back()] = parsed;
}

GridMeasure realize_source(const SourceSpec& src, const GridSpec& grid, const KernelSpec& kernel,
                           bool nu_side) {
    switch (src.kind) {
        case SourceSpec::Kind::Uniform:
            return GridMeasure::uniform(grid);
        case SourceSpec::Kind::Gaussian: {
            Vector c(grid.dim());
            for (int a = 0; a < grid.dim(); ++a)
                c[a] = a < static_cast<int>(src.center.size())
                           ? src.center[a]
                           : 0.5 * (grid.lower(a) + grid.upper(a));
            const double s2 = 2.0 * src.sigma * src.sigma;
            return build_from_density(grid, [&](const Vector& x) {
                return std::exp(-(x - c).squaredNorm() / s2);
            });
        }
        case SourceSpec::Kind::Csv: {
            GridMeasure m = read_measure_csv(src.path);
            if (!m.grid().same_grid(grid))
                throw ConfigError("measure CSV grid does not match the configured domain: " +
                                  src.path);
            return m;
        }
        case SourceSpec::Kind::Analytic: {
            const QuadraticInstance inst = QuadraticInstance::make(kernel.lambda, grid);
            return nu_side ? sample_nu(inst) : sample_mu(inst);
        }
    }
    throw ConfigError("unreachable source kind");
}

void write_trace_csv(const SolverReport& rep, const std::string& path, int dim) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << (dim == 1 ? "iter,objective,gap,step,max_density,barycenter_x\n"
                   : "iter,objective,gap,step,max_density,barycenter_x,barycenter_y\n");
    for (const auto& r : rep.iterations) {
        f << r.iter << ',' << g17(r.objective) << ',' << g17(r.gap) << ',' << g17(r.step) << ','
          << g17(r.max_density);
        for (int a = 0; a < dim; ++a) f << ',' << g17(r.barycenter[a]);
        f << '\n';
    }
}

json optimality_json(const OptimalityReport& r) {
    return json{{"m_constant", r.m_constant},
                {"support_violation", r.support_violation},
                {"global_violation", r.global_violation},
                {"support_threshold", r.support_threshold}};
}

json report_json(const RunConfig& cfg, const SolverReport& rep, const char* command_name) {
    json j;
    j["command"] = command_name;
    j["termination"] = rep.termination == Termination::Converged        ? "converged"
                       : rep.termination == Termination::IterationLimit ? "iteration-limit"
                                                                        : "stalled";
    j["final_objective"] = rep.final_objective;
    j["final_gap"] = rep.final_gap;
    j["termination_gap"] = rep.termination_gap;
    j["iterations"] = rep.iterations.size();
    j["sweeps"] = rep.sweeps;
    j["start_index"] = rep.start_index;
    j["optimality"] = optimality_json(rep.optimality);
    if (rep.mu_optimality) j["mu_optimality"] = optimality_json(*rep.mu_optimality);
    j["linf_bound_check"] = json{{"observed_max_density", rep.linf_bound_check.observed_max_density},
                                 {"theoretical_bound", rep.linf_bound_check.theoretical_bound},
                                 {"pass", rep.linf_bound_check.pass}};
    const Vector bn = barycenter(rep.final_nu);
    j["barycenter_nu"] = std::vector<double>(bn.data(), bn.data() + bn.size());
    if (rep.final_mu) {
        const Vector bm = barycenter(*rep.final_mu);
        j["barycenter_mu"] = std::vector<double>(bm.data(), bm.data() + bm.size());
    }
    if (rep.barycenter_distance) j["barycenter_distance"] = *rep.barycenter_distance;
    if (rep.homothety_ratio) {
        j["homothety_ratio_observed"] = *rep.homothety_ratio;
        j["homothety_ratio_expected"] = 1.0 / (2.0 * cfg.kernel.lambda + 1.0);
        j["homothety_residual_w1"] = *rep.homothety_residual_w1;
    }
    if (rep.prox_w2) j["prox_w2"] = *rep.prox_w2;
    if (rep.barrier_term) j["barrier_term"] = *rep.barrier_term;
    j["seed"] = cfg.solver.seed;
    j["fw_tol"] = cfg.solver.fw_tol;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
}

void write_solver_artifacts(const RunConfig& cfg, const SolverReport& rep, const GridMeasure& mu,
                            const GridMeasure& nu, const fs::path& dir, json extra_report,
                            const char* command_name) {
    write_measure_csv(mu, (dir / "mu.csv").string());
    write_measure_csv(nu, (dir / "nu.csv").string());
    write_trace_csv(rep, (dir / "trace.csv").string(), nu.grid().dim());

    // Fresh exact pair for the potentials/plan artifacts.
    const CostMatrix cm = CostMatrix::half_squared(nu.grid(), mu.grid());
    const auto [plan, duals] = solve_exact(nu, mu, cm);
    {
        std::ofstream f(dir / "potentials.csv");
        if (!f) throw IoError("cannot write potentials.csv");
        write_potentials_csv(duals.psi, f);
    }
    if (cfg.solver.transport_method == TransportMethod::Exact) {
        std::ofstream f(dir / "plan.csv");
        if (!f) throw IoError("cannot write plan.csv");
        write_plan_csv(plan, f);
    }

    json j = report_json(cfg, rep, command_name);
    for (auto& [k, v] : extra_report.items()) j[k] = v;
    write_text((dir / "report.json").string(), j.dump(2) + "\n");
}

int status_for(Termination t) {
    switch (t) {
        case Termination::Converged: return kExitConverged;
        case Termination::IterationLimit: return kExitIterationLimit;
        case Termination::Stalled: return kExitStalled;
    }
    return kExitInternal;
}

}  // namespace

InteractionKernel make_kernel(const KernelSpec& spec, const GridSpec& grid) {
    if (spec.name == "quadratic") return InteractionKernel::quadratic(spec.lambda, grid);
    if (spec.name == "power") return InteractionKernel::power(spec.lambda, spec.q, grid);
    return InteractionKernel::custom(spec.table, grid);
}

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    for (const auto& o : overrides) apply_override(j, o);

    RunConfig cfg;
    if (!j.contains("command")) bad_key("command", "missing");
    cfg.command = parse_command(j["command"].get<std::string>());
    cfg.domain = parse_domain(j);
    cfg.kernel = parse_kernel(j);
    if (j.contains("local_functional")) {
        const json& lf = j["local_functional"];
        if (lf.contains("name") && lf["name"].get<std::string>() != "quadratic")
            bad_key("local_functional.name", "only 'quadratic' is available");
        if (lf.contains("coeff")) cfg.local_coeff = lf["coeff"].get<double>();
        if (cfg.local_coeff <= 0) bad_key("local_functional.coeff", "must be positive");
    }
    cfg.solver = parse_solver(j);
    cfg.mu_source = parse_source(j, "mu_source");
    cfg.nu_source = parse_source(j, "nu_source");
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (cfg.output_dir.empty()) {
        if (const char* env = std::getenv("OTMIN_OUTPUT_DIR")) cfg.output_dir = env;
        else cfg.output_dir = "otmin-out";
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

int execute(const RunConfig& cfg) {
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + cfg.output_dir);

    if (cfg.command == Command::Analytic) {
        const QuadraticInstance inst = QuadraticInstance::make(cfg.kernel.lambda, cfg.domain);
        const GridMeasure mu = sample_mu(inst);
        const GridMeasure nu = sample_nu(inst);
        write_measure_csv(mu, (dir / "mu.csv").string());
        write_measure_csv(nu, (dir / "nu.csv").string());
        const HomothetyMaps maps = transport_maps(inst);
        {
            std::ofstream f(dir / "maps.csv");
            if (!f) throw IoError("cannot write maps.csv");
            const int d = cfg.domain.dim();
            f << (d == 1 ? "index,x,s_x,t_x\n" : "index,x,y,s_x,s_y,t_x,t_y\n");
            for (int i = 0; i < cfg.domain.num_nodes(); ++i) {
                const Vector x = cfg.domain.node(i);
                const Vector s = maps.s(x), t = maps.t(x);
                f << i;
                for (int a = 0; a < d; ++a) f << ',' << g17(x[a]);
                for (int a = 0; a < d; ++a) f << ',' << g17(s[a]);
                for (int a = 0; a < d; ++a) f << ',' << g17(t[a]);
                f << '\n';
            }
        }
        const LipschitzCheck lip = lipschitz_bound_check(inst, cfg.domain);
        json j;
        j["command"] = "analytic";
        j["lambda"] = inst.lambda;
        j["radius"] = inst.radius;
        j["normalization"] = inst.normalization;
        j["homothety_ratio"] = inst.ratio;
        j["center"] = std::vector<double>(inst.center.data(), inst.center.data() + inst.center.size());
        j["lipschitz"] = json{{"lip_constant", lip.lip_constant},
                              {"gradient_bound", lip.gradient_bound},
                              {"conservative_bound", lip.conservative_bound},
                              {"inf_u", lip.inf_u},
                              {"remark_inequality_holds", lip.remark_inequality_holds},
                              {"discontinuity_flag", lip.discontinuity_flag}};
        write_text((dir / "report.json").string(), j.dump(2) + "\n");
        return kExitConverged;
    }

    const InteractionKernel ker = make_kernel(cfg.kernel, cfg.domain);
    const LocalFunctional loc = LocalFunctional::quadratic(cfg.local_coeff);

    if (cfg.command == Command::SolveNu) {
        const GridMeasure mu = realize_source(cfg.mu_source, cfg.domain, cfg.kernel, false);
        const GridMeasure init = realize_source(cfg.nu_source, cfg.domain, cfg.kernel, true);
        const SolverReport rep = solve_nu(mu, ker, cfg.solver, init);
        write_solver_artifacts(cfg, rep, mu, rep.final_nu, dir, json::object(), "solve-nu");
        return status_for(rep.termination);
    }
    if (cfg.command == Command::SolveMu) {
        const GridMeasure nu = realize_source(cfg.nu_source, cfg.domain, cfg.kernel, true);
        const GridMeasure init = realize_source(cfg.mu_source, cfg.domain, cfg.kernel, false);
        const SolverReport rep = solve_mu(nu, loc, cfg.solver, init);
        write_solver_artifacts(cfg, rep, *rep.final_mu, nu, dir, json::object(), "solve-mu");
        return status_for(rep.termination);
    }
    if (cfg.command == Command::SolveBarrier) {
        const GridMeasure mu = realize_source(cfg.mu_source, cfg.domain, cfg.kernel, false);
        const GridMeasure nu_bar = realize_source(cfg.nu_source, cfg.domain, cfg.kernel, true);
        SolverConfig sc = cfg.solver;
        if (!sc.prox_weight) sc.prox_weight = 0.1;
        if (!sc.barrier_delta) {
            // Paper-rule default: delta = eps^2 / A(nu_bar).
            const double a_bar = eval_A(nu_bar, true);
            if (!std::isfinite(a_bar))
                throw ConfigError("solve-barrier: nu_source must be strictly positive");
            sc.barrier_delta = (*sc.prox_weight) * (*sc.prox_weight) / a_bar;
        }
        const SolverReport rep = solve_nu_barrier(mu, ker, nu_bar, sc);
        json extra;
        extra["barrier_delta"] = *sc.barrier_delta;
        extra["prox_weight"] = *sc.prox_weight;
        write_solver_artifacts(cfg, rep, mu, rep.final_nu, dir, extra, "solve-barrier");
        return status_for(rep.termination);
    }

    // solve-joint and validate
    if (cfg.command == Command::Validate && cfg.kernel.name != "quadratic")
        throw ConfigError("validate: kernel.name must be 'quadratic'");
    const GridMeasure init_mu = realize_source(cfg.mu_source, cfg.domain, cfg.kernel, false);
    const GridMeasure init_nu = realize_source(cfg.nu_source, cfg.domain, cfg.kernel, true);
    const SolverReport rep = solve_joint(ker, loc, cfg.solver, init_mu, init_nu);

    json extra;
    if (cfg.command == Command::Validate) {
        const double lambda = cfg.kernel.lambda;
        const double expected_coeff = lambda / (2 * lambda + 1);
        const ParabolaFit fit = fit_parabola(*rep.final_mu, 0.1);
        extra["parabola_coeff_fit"] = fit.coeff;
        extra["parabola_coeff_expected"] = expected_coeff;
        extra["parabola_coeff_ok"] =
            std::abs(fit.coeff - expected_coeff) <= 0.10 * expected_coeff;
        bool aligned = false;
        try {
            GridSpec g = rep.final_mu->grid();
            const QuadraticInstance inst =
                QuadraticInstance::make(lambda, g, barycenter(*rep.final_mu));
            extra["l1_mu_vs_oracle"] = l1_distance(*rep.final_mu, sample_mu(inst));
            extra["l1_bound_4h"] = 4.0 * g.max_spacing();
            aligned = true;
        } catch (const SupportTouchesBoundary&) {
            extra["l1_mu_vs_oracle"] = nullptr;
        }
        extra["oracle_aligned"] = aligned;
        if (rep.homothety_ratio) {
            const double expect = 1.0 / (2 * lambda + 1);
            extra["homothety_ratio_ok"] =
                std::abs(*rep.homothety_ratio - expect) <= 0.05 * expect;
        }
    }
    write_solver_artifacts(cfg, rep, *rep.final_mu, rep.final_nu, dir, extra,
                           cfg.command == Command::Validate ? "validate" : "solve-joint");
    return status_for(rep.termination);
}

int execute_catching(const RunConfig& cfg) {
    try {
        return execute(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFileIo;
    } catch (const InfeasibleMarginals& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const NoConvergence& e) {
        std::cerr << "error: " << e.what() << " (last marginal error " << e.last_marginal_error
                  << ")\n";
        return kExitNoConvergence;
    } catch (const NumericalUnderflow& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUnderflow;
    } catch (const BarrierBreach& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBarrierBreach;
    } catch (const SizeGuardExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSizeGuard;
    } catch (const InvalidKernel& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidFunctional;
    } catch (const InvalidLocalFunctional& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidFunctional;
    } catch (const NegativeDensity& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidFunctional;
    } catch (const AllZeroDensity& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidFunctional;
    } catch (const SupportTouchesBoundary& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitAnalyticRefusal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace otmin
