// Command-line front end: one subcommand per pipeline stage, JSON on stdout.

#include <oscbnd/oscbnd.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using nlohmann::json;
using namespace oscbnd;

namespace {

struct Globals {
    std::string config_path;
    std::string out_dir;
    std::optional<unsigned> seed;
    std::optional<int> threads;
    bool verbose = false;
};

void log(const Globals& g, const std::string& msg) {
    if (g.verbose) std::fprintf(stderr, "[oscbnd] %s\n", msg.c_str());
}

StudyConfig load_config(const Globals& g) {
    StudyConfig c;
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw Error("cannot open config file " + g.config_path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(std::string("config file: ") + e.what());
        }
        c = config_from_json(j);
    }
    if (!g.out_dir.empty()) c.out_dir = g.out_dir;
    if (g.seed) c.seed = *g.seed;
    if (g.threads) c.threads = *g.threads;
    return c;
}

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

void emit(const Globals& g, const std::string& name, const json& j) {
    std::cout << j.dump(2) << '\n';
    if (!g.out_dir.empty()) {
        std::filesystem::create_directories(g.out_dir);
        std::ofstream(std::filesystem::path(g.out_dir) / (name + ".json")) << j.dump(2) << '\n';
    }
}

const EigenCluster& analytic() {
    static const EigenCluster c = diagonalize_boundary_form(analytic_cluster());
    return c;
}

json series_json(const CosineSeries& s) { return s.coefficients(); }

// ------------------------------------------------------------ subcommands

json run_cell(const StudyConfig& c, const std::string& profile) {
    const Profile p = parse_profile(profile);
    const CellConstants k = compute_cell_constants(p, c.cell);
    const CellSolution lo = solve_cells(p, c.cell.T, c.cell.strip);
    const CellSolution hi = solve_cells(p, 1.5 * c.cell.T, c.cell.strip);
    return {{"profile", p.descriptor()},
            {"T", c.cell.T},
            {"resolution", {{"cells_per_half_period", c.cell.strip.cells_per_half_period}, {"cap", c.cell.strip.cap}, {"richardson", c.cell.richardson}}},
            {"C", k.C},
            {"C_I", k.C_I},
            {"C_II", k.C_II},
            {"decay_rate_X", num(k.decay_rate_X)},
            {"decay_rate_Xtilde", num(k.decay_rate_Xtilde)},
            {"checks", {{"two_height_delta_C", std::fabs(lo.C - hi.C)}, {"parity_max_err", lo.parity_max_err}, {"max_weak_residual", lo.max_weak_residual}}}};
}

EigenCluster make_cluster(const std::string& backend, double h) {
    if (backend == "analytic") return analytic();
    if (backend == "fem") {
        FemClusterOptions o;
        o.h = h;
        return diagonalize_boundary_form(fem_cluster(o));
    }
    throw Error("unknown limit backend '" + backend + "' (analytic or fem)");
}

json run_limit(const std::string& backend, double h, int samples) {
    const EigenCluster c = make_cluster(backend, h);
    json traces = json::array();
    for (int l = 0; l < 2; ++l) {
        json pts = json::array();
        for (int i = 0; i < samples; ++i) {
            const double x = -0.5 + static_cast<double>(i) / (samples - 1);
            pts.push_back({x, c.traces[static_cast<std::size_t>(l)](x)});
        }
        traces.push_back(pts);
    }
    return {{"backend", backend},
            {"lambda0", c.lambda0},
            {"values", c.values},
            {"G", {{c.G(0, 0), c.G(0, 1)}, {c.G(1, 0), c.G(1, 1)}}},
            {"rotation", {{c.rotation(0, 0), c.rotation(0, 1)}, {c.rotation(1, 0), c.rotation(1, 1)}}},
            {"rotation_angle", c.rotation_angle},
            {"branch_traces_sampled", traces},
            {"nerav_gap", c.nerav_gap}};
}

json corrector_json(const CorrectorSet& s) {
    json out = json::array();
    for (int l = 1; l <= 2; ++l) {
        const auto& r = s[l];
        out.push_back({{"branch", l},
                       {"lambda1", r.lambda1},
                       {"lambda2", r.lambda2},
                       {"lambda3", r.lambda3},
                       {"kappa1", r.kappa1},
                       {"kappa2", r.kappa2},
                       {"residues", {r.residues1, r.residues2}},
                       {"trace_modes", s.trace_modes},
                       {"alpha01", series_json(r.alpha01)}});
    }
    return out;
}

CorrectorSet correctors_for(const StudyConfig& c, const std::string& profile, const std::string& backend, double h) {
    const CellConstants k = compute_cell_constants(parse_profile(profile), c.cell);
    CorrectorOptions o;
    if (backend == "fem") {
        o.backend = CorrectorBackend::fem;
        o.fem_h = h;
    } else if (backend != "modal") {
        throw Error("unknown corrector backend '" + backend + "' (modal or fem)");
    }
    return run_correctors(analytic(), k.C, k.C_I, k.C_II, o);
}

json run_eig(const StudyConfig& c, const std::string& profile, int N, int count, int refine, std::optional<double> target) {
    const Profile p = parse_profile(profile);
    const EpsilonParam e(N);
    double tau;
    if (target) {
        tau = *target;
    } else {
        const CellConstants k = compute_cell_constants(p, c.cell);
        const auto l1 = compute_lambda1(analytic(), k.C);
        tau = kLambda0 + e.eps() * 0.5 * (l1[0] + l1[1]);
    }
    MeshOptions mo = c.mesh;
    mo.refine = refine;
    const Mesh m = mesh_perturbed_domain(p, e, mo);
    const FemMatrices fm = assemble(m);
    const DirichletMap dm = dirichlet_map(m, {BoundaryTag::GammaEps});
    EigenOptions eo;
    eo.tol = c.eigen_tol;
    eo.seed = c.seed;
    const auto pairs = eigs_smallest_near(dm.reduce(fm.K), dm.reduce(fm.M), tau, count, eo);
    json vals = json::array(), res = json::array(), sym = json::array();
    for (const auto& q : pairs) {
        vals.push_back(q.value);
        res.push_back(q.residual);
        sym.push_back(detail::mirror_asymmetry(m, dm.expand(q.vector)));
    }
    return {{"N", N}, {"eps", e.eps()}, {"target", tau}, {"refine", refine}, {"vertices", m.num_vertices()},
            {"values", vals}, {"residuals", res}, {"x1_asymmetry", sym}};
}

json run_residual(const StudyConfig& c, const std::string& profile, int N, double beta, int branch) {
    CompositeOptions o;
    o.beta = beta;
    o.T = c.cell.T;
    o.mesh = c.mesh;
    const auto r = evaluate_composite(parse_profile(profile), analytic(), N, o);
    json j{{"eps", r.eps}, {"beta", beta}, {"N", N}};
    if (branch == 0) {
        j["norm"] = {r.branch[0].residual, r.branch[1].residual};
        j["lambda"] = {r.branch[0].lambda, r.branch[1].lambda};
        j["l2"] = {r.branch[0].l2, r.branch[1].l2};
        j["overlap_mismatch"] = {r.branch[0].mismatch, r.branch[1].mismatch};
    } else {
        const auto& b = r.branch[static_cast<std::size_t>(branch - 1)];
        j["branch"] = branch;
        j["norm"] = b.residual;
        j["lambda"] = b.lambda;
        j["l2"] = b.l2;
        j["overlap_mismatch"] = b.mismatch;
    }
    j["strip_constants"] = {{"C", r.C}, {"C_I", r.C_I}, {"C_II", r.C_II}};
    return j;
}

void print_report(const ConvergenceReport& r) {
    std::printf("config %s  profile %s  lambda0 %.10g  C %.8g\n", r.hash.c_str(), r.config.profile.c_str(), r.lambda0, r.cell.C);
    std::printf("%4s %10s %3s %16s %12s %12s %12s %12s %10s %10s\n", "N", "eps", "br", "lambda_eps", "rem0", "rem1", "rem2", "rem3", "h1_err", "gap/eps");
    for (const auto& row : r.rows) {
        if (row.flagged) {
            std::printf("%4d %10.6f %3d  flagged: %s\n", row.N, row.eps, row.branch, row.message.c_str());
            continue;
        }
        std::printf("%4d %10.6f %3d %16.10f %12.4e %12.4e %12.4e %12.4e %10.4f %10.4f\n", row.N, row.eps, row.branch, row.lambda_eps, row.rem[0],
                    row.rem[1], row.rem[2], row.rem[3], row.h1_err, row.cluster_gap);
    }
    std::printf("slopes:\n");
    for (const auto& [k, f] : r.slopes)
        std::printf("  %-16s %8.4f  r2 %.4f%s\n", k.c_str(), f.slope, f.r2, f.flagged ? "  (flagged)" : "");
    for (const auto& [k, e] : r.slope_errors) std::printf("  %-16s %s\n", k.c_str(), e.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Eigenvalue asymptotics for a domain with a rapidly oscillating boundary"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--seed", g.seed, "seed for the eigensolver start basis");
    app.add_option("--threads", g.threads, "worker threads for studies")->check(CLI::PositiveNumber);
    app.add_flag("--verbose,-v", g.verbose, "progress messages on stderr");

    std::string profile;
    auto add_profile = [&](CLI::App* s) { s->add_option("--profile", profile, "profile descriptor, e.g. cosine:d=1,a=0.4"); };

    auto* cell = app.add_subcommand("cell", "cell constants C, C_I, C_II and decay fits");
    add_profile(cell);
    std::optional<double> T;
    cell->add_option("--T", T, "strip truncation height");

    auto* limit = app.add_subcommand("limit", "double eigenvalue of the limit rectangle and its diagonalised basis");
    std::string limit_backend = "analytic";
    double h = 1.0 / 32.0;
    int samples = 17;
    limit->add_option("--backend", limit_backend, "analytic or fem")->check(CLI::IsMember({"analytic", "fem"}));
    limit->add_option("--mesh-h", h, "mesh size for the fem backend");
    limit->add_option("--samples", samples, "trace samples per branch")->check(CLI::Range(2, 100000));

    auto* correct = app.add_subcommand("correct", "lambda1..lambda3 and kappa1, kappa2 per branch");
    add_profile(correct);
    std::string corr_backend = "modal";
    correct->add_option("--backend", corr_backend, "modal or fem")->check(CLI::IsMember({"modal", "fem"}));
    correct->add_option("--mesh-h", h, "mesh size for the fem backend");

    auto* predict = app.add_subcommand("predict", "asymptotic eigenvalue prediction");
    add_profile(predict);
    int branch = 1, order = 3;
    std::optional<int> N;
    std::optional<double> eps;
    predict->add_option("--branch", branch, "branch 1 or 2")->check(CLI::Range(1, 2));
    predict->add_option("--order", order, "order 0..3");
    auto* pN = predict->add_option("--N", N, "eps = 1/(2N+1)");
    predict->add_option("--eps", eps, "small parameter")->excludes(pN);

    auto* eig = app.add_subcommand("eig", "FEM eigenvalues of the perturbed domain near the cluster");
    add_profile(eig);
    int count = 6, refine = 0, eigN = 3;
    std::optional<double> target;
    eig->add_option("--N", eigN, "eps = 1/(2N+1)")->check(CLI::PositiveNumber);
    eig->add_option("--count", count, "number of eigenvalues")->check(CLI::PositiveNumber);
    eig->add_option("--refine", refine, "uniform mesh refinements")->check(CLI::Range(0, 4));
    eig->add_option("--target", target, "shift (default: first-order cluster centre)");

    auto* residual = app.add_subcommand("residual", "residual norm of the composite approximation");
    add_profile(residual);
    int resN = 3, res_branch = 0;
    std::optional<double> beta;
    residual->add_option("--N", resN, "eps = 1/(2N+1)")->check(CLI::PositiveNumber);
    residual->add_option("--beta", beta, "cut-off exponent in (0,1)");
    residual->add_option("--branch", res_branch, "1, 2, or 0 for both")->check(CLI::Range(0, 2));

    auto* study = app.add_subcommand("study", "convergence study over N, writes study.csv, study.json, slopes.json");
    add_profile(study);
    std::vector<int> Ns;
    study->add_option("--N", Ns, "list of N values (overrides the config)");

    auto* report = app.add_subcommand("report", "print a saved study");
    std::string report_in;
    report->add_option("--in", report_in, "study.json (default: <out>/study.json)");

    CLI11_PARSE(app, argc, argv);

    try {
        StudyConfig c = load_config(g);
        if (profile.empty()) profile = c.profile;
        if (T) c.cell.T = *T;

        if (*cell) {
            log(g, "solving cell problems for " + profile);
            emit(g, "cell", run_cell(c, profile));
        } else if (*limit) {
            emit(g, "limit", run_limit(limit_backend, h, samples));
        } else if (*correct) {
            log(g, "cell constants and corrector chain");
            const auto s = correctors_for(c, profile, corr_backend, h);
            emit(g, "correct", {{"backend", corr_backend}, {"profile", profile}, {"C", s.C}, {"C_I", s.C_I}, {"C_II", s.C_II},
                                {"max_residue", s.max_residue}, {"branches", corrector_json(s)}});
        } else if (*predict) {
            double e = 0.0;
            if (N) e = EpsilonParam(*N).eps();
            else if (eps) e = *eps;
            else throw Error("predict: give --N or --eps");
            if (e < 0.0) throw Error("predict: eps must be nonnegative");
            const auto s = correctors_for(c, profile, "modal", h);
            emit(g, "predict", {{"branch", branch}, {"eps", e}, {"order", order}, {"lambda_pred", predicted_lambda(s, branch, e, order)}});
        } else if (*eig) {
            log(g, "eigensolve on the perturbed domain");
            emit(g, "eig", run_eig(c, profile, eigN, count, refine, target));
        } else if (*residual) {
            log(g, "composite residual");
            emit(g, "residual", run_residual(c, profile, resN, beta.value_or(c.beta), res_branch));
        } else if (*study) {
            c.profile = profile;
            if (!Ns.empty()) c.N_list = Ns;
            c.validate();
            log(g, "study " + config_hash(c) + " over " + std::to_string(c.N_list.size()) + " values of N");
            const auto r = run_study(c);
            if (!c.out_dir.empty()) write_study(r, c.out_dir);
            log(g, std::string("cell constants ") + (r.cache_hit ? "from cache" : "computed"));
            std::cout << study_csv(r);
            if (g.verbose) print_report(r);
        } else if (*report) {
            std::filesystem::path in = report_in;
            if (in.empty()) {
                if (g.out_dir.empty()) throw Error("report: give --in or --out");
                in = std::filesystem::path(g.out_dir) / "study.json";
            }
            print_report(read_study(in));
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
