#pragma once

// Convergence studies over eps = 1/(2N+1): eigenvalues of the perturbed
// domain against the asymptotic predictions, slope fits, and persistence.

#include <oscbnd/cell.hpp>
#include <oscbnd/composite.hpp>
#include <oscbnd/corrector.hpp>
#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/limit.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/profile.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace oscbnd {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kStudyCsvHeader = "N,eps,branch,lambda_eps,pred0,pred1,pred2,pred3,rem0,rem1,rem2,rem3,h1_err,cluster_gap";

// ---------------------------------------------------------------- fitting

struct SlopeFit {
    double slope = 0.0;
    double r2 = 0.0;
    double intercept = 0.0;
    int points = 0;
    bool flagged = false;  // r2 below the quality threshold
};

/// Least squares on (log eps, log value).
inline SlopeFit fit_slope(const std::vector<std::pair<double, double>>& pts, double r2_min = 0.9) {
    if (pts.size() < 3) throw Error("fit_slope: need at least 3 points");
    double sx = 0, sy = 0;
    for (const auto& [e, v] : pts) {
        if (!(e > 0.0)) throw Error("fit_slope: eps must be positive");
        if (!(v > 0.0)) throw Error("fit_slope: nonpositive value");
        sx += std::log(e);
        sy += std::log(v);
    }
    const double n = static_cast<double>(pts.size());
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& [e, v] : pts) {
        const double dx = std::log(e) - mx, dy = std::log(v) - my;
        sxx += dx * dx, sxy += dx * dy, syy += dy * dy;
    }
    if (sxx <= 0.0) throw Error("fit_slope: eps values must differ");
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    f.points = static_cast<int>(pts.size());
    f.flagged = f.r2 < r2_min;
    return f;
}

// ---------------------------------------------------------------- pairing

struct Pairing {
    std::array<int, 2> fem_for_pred{0, 1};  // fem index assigned to each prediction
    bool swapped = false;
    bool ambiguous = false;
    double mismatch = 0.0;          // total |fem - pred| of the chosen pairing
    double swapped_mismatch = 0.0;  // same for the other pairing
};

/// Index-wise pairing of two ascending lists, checked against the swapped
/// assignment.  Crossed inputs are detected and swapped; a tie is ambiguous.
inline Pairing pair_branches(const std::array<double, 2>& fem, const std::array<double, 2>& pred, double tie_tol = 1e-12) {
    Pairing p;
    const double id = std::fabs(fem[0] - pred[0]) + std::fabs(fem[1] - pred[1]);
    const double sw = std::fabs(fem[0] - pred[1]) + std::fabs(fem[1] - pred[0]);
    p.ambiguous = std::fabs(id - sw) <= tie_tol || std::fabs(pred[0] - pred[1]) <= tie_tol;
    if (sw < id && !p.ambiguous) {
        p.swapped = true;
        p.fem_for_pred = {1, 0};
    }
    p.mismatch = std::min(id, sw);
    p.swapped_mismatch = std::max(id, sw);
    return p;
}

// ---------------------------------------------------------------- config

struct StudyConfig {
    std::string profile = "cosine:d=1,a=0.4";
    std::vector<int> N_list{3, 5, 7, 9, 11, 13};
    double beta = 0.5;
    MeshOptions mesh;
    bool richardson = true;
    CellConstantsOptions cell;
    std::vector<int> orders{0, 1, 2, 3};
    double eigen_tol = 1e-10;
    int eigen_count = 8;
    double pair_tol = 1e-12;
    double r2_min = 0.9;
    unsigned seed = 20240601u;
    int threads = 1;
    std::string out_dir;    // empty: no files written
    std::string cache_dir;  // empty: <out_dir>/cache

    void validate() const {
        if (N_list.empty()) throw Error("study config: N_list is empty");
        for (std::size_t i = 0; i < N_list.size(); ++i) {
            if (N_list[i] < 1) throw Error("study config: every N must be >= 1");
            if (i > 0 && N_list[i] <= N_list[i - 1]) throw Error("study config: N_list must be strictly increasing");
        }
        if (!(beta > 0.0 && beta < 1.0)) throw Error("study config: beta must lie in (0, 1)");
        for (int k : orders)
            if (k < 0 || k > 3) throw Error("study config: orders must lie in 0..3");
        if (eigen_count < 2) throw Error("study config: eigen_count must be >= 2");
        if (threads < 1) throw Error("study config: threads must be >= 1");
        parse_profile(profile);
    }
};

inline nlohmann::json to_json(const StudyConfig& c) {
    nlohmann::json j;
    j["profile"] = c.profile;
    j["N_list"] = c.N_list;
    j["beta"] = c.beta;
    j["mesh"] = {{"cells_per_half_period", c.mesh.cells_per_half_period},
                 {"h_bulk", c.mesh.h_bulk},
                 {"grading", c.mesh.grading},
                 {"layer_rows", c.mesh.layer_rows}};
    j["richardson"] = c.richardson;
    j["strip"] = {{"T", c.cell.T},
                  {"cells_per_half_period", c.cell.strip.cells_per_half_period},
                  {"cap", c.cell.strip.cap},
                  {"grading", c.cell.strip.grading},
                  {"richardson", c.cell.richardson}};
    j["orders"] = c.orders;
    j["eigen_tol"] = c.eigen_tol;
    j["eigen_count"] = c.eigen_count;
    j["pair_tol"] = c.pair_tol;
    j["r2_min"] = c.r2_min;
    j["seed"] = c.seed;
    return j;
}

/// Fields absent from `j` keep their defaults.  Unknown keys are rejected.
inline StudyConfig config_from_json(const nlohmann::json& j, StudyConfig c = {}) {
    static const std::vector<std::string> known{"profile", "N_list", "beta", "mesh", "richardson", "strip", "orders", "eigen_tol",
                                                "eigen_count", "pair_tol", "r2_min", "seed", "threads", "out", "cache"};
    if (!j.is_object()) throw Error("study config: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) throw Error("study config: unknown key '" + it.key() + "'");
    try {
        if (j.contains("profile")) c.profile = j["profile"].get<std::string>();
        if (j.contains("N_list")) c.N_list = j["N_list"].get<std::vector<int>>();
        if (j.contains("beta")) c.beta = j["beta"].get<double>();
        if (j.contains("mesh")) {
            const auto& m = j["mesh"];
            c.mesh.cells_per_half_period = m.value("cells_per_half_period", c.mesh.cells_per_half_period);
            c.mesh.h_bulk = m.value("h_bulk", c.mesh.h_bulk);
            c.mesh.grading = m.value("grading", c.mesh.grading);
            c.mesh.layer_rows = m.value("layer_rows", c.mesh.layer_rows);
        }
        if (j.contains("richardson")) c.richardson = j["richardson"].get<bool>();
        if (j.contains("strip")) {
            const auto& s = j["strip"];
            c.cell.T = s.value("T", c.cell.T);
            c.cell.strip.cells_per_half_period = s.value("cells_per_half_period", c.cell.strip.cells_per_half_period);
            c.cell.strip.cap = s.value("cap", c.cell.strip.cap);
            c.cell.strip.grading = s.value("grading", c.cell.strip.grading);
            c.cell.richardson = s.value("richardson", c.cell.richardson);
        }
        if (j.contains("orders")) c.orders = j["orders"].get<std::vector<int>>();
        if (j.contains("eigen_tol")) c.eigen_tol = j["eigen_tol"].get<double>();
        if (j.contains("eigen_count")) c.eigen_count = j["eigen_count"].get<int>();
        if (j.contains("pair_tol")) c.pair_tol = j["pair_tol"].get<double>();
        if (j.contains("r2_min")) c.r2_min = j["r2_min"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<unsigned>();
        if (j.contains("threads")) c.threads = j["threads"].get<int>();
        if (j.contains("out")) c.out_dir = j["out"].get<std::string>();
        if (j.contains("cache")) c.cache_dir = j["cache"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("study config: ") + e.what());
    }
    c.validate();
    return c;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of everything that affects the numbers (paths and thread count excluded).
inline std::string config_hash(const StudyConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

// ---------------------------------------------------------------- report

struct StudyRow {
    int N = 0;
    double eps = 0.0;
    int branch = 0;
    double lambda_eps = 0.0;
    std::array<double, 2> lambda_h{0.0, 0.0};  // per refinement level (second unused without Richardson)
    std::array<double, 4> pred{}, rem{};
    double h1_err = 0.0;
    double cluster_gap = 0.0;  // (lambda^(2) - lambda^(1)) / eps
    bool flagged = false;
    std::string message;
};

struct BranchConstants {
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0, kappa1 = 0.0, kappa2 = 0.0;
};

struct ConvergenceReport {
    StudyConfig config;
    std::string hash;
    double lambda0 = 0.0;
    CellConstants cell;
    std::array<BranchConstants, 2> branch{};
    std::vector<StudyRow> rows;
    std::map<std::string, SlopeFit> slopes;
    std::map<std::string, std::string> slope_errors;
    bool cache_hit = false;
    double seconds = 0.0;

    const StudyRow& row(int N, int branch_id) const {
        for (const auto& r : rows)
            if (r.N == N && r.branch == branch_id) return r;
        throw Error("report: no row for the requested N and branch");
    }
};

// ---------------------------------------------------------------- per-N work

namespace detail {

struct StudyContext {
    Profile profile;
    std::shared_ptr<const CorrectorSet> set;
    const EigenCluster* cluster = nullptr;
    const StudyConfig* cfg = nullptr;
};

/// ||u - P u|| / ||u|| with P the mirror x1 -> -x1 on the structured grid.
inline double mirror_asymmetry(const Mesh& m, const Vec& u) {
    const GridLayout& g = *m.grid;
    double d = 0.0, n = 0.0;
    for (int j = 0; j <= g.nrows; ++j)
        for (int i = 0; i <= g.ncols; ++i) {
            const double a = u[g.index(i, j)], b = u[g.index(g.ncols - i, j)];
            d += (a - b) * (a - b);
            n += a * a;
        }
    return n > 0.0 ? std::sqrt(d / n) : 0.0;
}

/// H1(Omega) norm of a nodal field over the triangles with x2 >= 0.
inline double h1_norm_upper(const Mesh& m, const Vec& e) {
    double s = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        const Point& a = m.vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = m.vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = m.vertices[static_cast<std::size_t>(tri[2])];
        if (std::min({a.y, b.y, c.y}) < -1e-14) continue;
        const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        const double area = 0.5 * det;
        const double ea = e[tri[0]], eb = e[tri[1]], ec = e[tri[2]];
        const double gx = ((eb - ea) * (c.y - a.y) - (ec - ea) * (b.y - a.y)) / det;
        const double gy = ((ec - ea) * (b.x - a.x) - (eb - ea) * (c.x - a.x)) / det;
        // exact P1 mass: area/12 (sum e_i^2 + (sum e_i)^2)
        const double l2 = area / 12.0 * (ea * ea + eb * eb + ec * ec + (ea + eb + ec) * (ea + eb + ec));
        s += area * (gx * gx + gy * gy) + l2;
    }
    return std::sqrt(s);
}

struct LevelResult {
    std::array<double, 2> values{};  // per branch
    std::array<Vec, 2> vectors;
    Mesh mesh;
};

/// Nodal interpolant of u0 on the part x2 >= 0 (zero below).
inline Vec interpolate_upper(const Mesh& m, const ModalField& u0) {
    Vec v = Vec::Zero(static_cast<Eigen::Index>(m.num_vertices()));
    for (std::size_t i = 0; i < m.num_vertices(); ++i)
        if (m.vertices[i].y >= 0.0) v[static_cast<Eigen::Index>(i)] = u0(m.vertices[i].x, m.vertices[i].y);
    return v;
}

/// Eigenpairs near the shift; each branch takes the x1-even candidate with
/// the largest mass overlap with its limit eigenfunction.
inline LevelResult solve_level(const StudyContext& ctx, const EpsilonParam& e, int refine, double shift) {
    MeshOptions mo = ctx.cfg->mesh;
    mo.refine = refine;
    LevelResult out;
    out.mesh = mesh_perturbed_domain(ctx.profile, e, mo);
    const FemMatrices fm = assemble(out.mesh);
    const DirichletMap dm = dirichlet_map(out.mesh, {BoundaryTag::GammaEps});
    EigenOptions eo;
    eo.tol = ctx.cfg->eigen_tol;
    eo.seed = ctx.cfg->seed;
    const auto pairs = eigs_smallest_near(dm.reduce(fm.K), dm.reduce(fm.M), shift, ctx.cfg->eigen_count, eo);
    std::array<Vec, 2> mu0;
    for (int l = 0; l < 2; ++l) mu0[static_cast<std::size_t>(l)] = fm.M * interpolate_upper(out.mesh, ctx.cluster->modal[static_cast<std::size_t>(l)]);
    std::array<int, 2> pick{-1, -1};
    std::array<double, 2> best{0.0, 0.0};
    std::vector<Vec> full;
    for (const auto& p : pairs) full.push_back(dm.expand(p.vector));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (mirror_asymmetry(out.mesh, full[i]) > 0.1) continue;
        for (std::size_t l = 0; l < 2; ++l) {
            const double o = std::fabs(full[i].dot(mu0[l]));
            if (o > best[l]) best[l] = o, pick[l] = static_cast<int>(i);
        }
    }
    if (pick[0] < 0 || pick[1] < 0 || pick[0] == pick[1]) throw Error("study: could not identify both branches among the eigenpairs near the shift");
    for (std::size_t l = 0; l < 2; ++l) {
        if (best[l] < 0.25) throw Error("study: weak overlap between a computed eigenfunction and its limit");
        out.values[l] = pairs[static_cast<std::size_t>(pick[l])].value;
        out.vectors[l] = full[static_cast<std::size_t>(pick[l])];
    }
    return out;
}

inline std::array<StudyRow, 2> study_point(const StudyContext& ctx, int N) {
    const EpsilonParam e(N);
    const double eps = e.eps();
    const StudyConfig& cfg = *ctx.cfg;
    std::array<StudyRow, 2> rows;
    for (int l = 0; l < 2; ++l) {
        rows[static_cast<std::size_t>(l)].N = N;
        rows[static_cast<std::size_t>(l)].eps = eps;
        rows[static_cast<std::size_t>(l)].branch = l + 1;
        for (int k = 0; k <= 3; ++k) rows[static_cast<std::size_t>(l)].pred[static_cast<std::size_t>(k)] = predicted_lambda(*ctx.set, l + 1, eps, k);
    }
    const double shift = ctx.set->lambda0() + eps * 0.5 * ((*ctx.set)[1].lambda1 + (*ctx.set)[2].lambda1);

    try {
        const int levels = cfg.richardson ? 2 : 1;
        std::vector<LevelResult> lv;
        for (int r = 0; r < levels; ++r) lv.push_back(solve_level(ctx, e, r, shift));
        // Index-wise pairing in ascending prediction order must not be crossed.
        const bool asc = rows[0].pred[2] <= rows[1].pred[2];
        const std::size_t lo = asc ? 0 : 1, hi = 1 - lo;
        for (const auto& L : lv) {
            const Pairing pr = pair_branches({L.values[lo], L.values[hi]}, {rows[lo].pred[2], rows[hi].pred[2]}, cfg.pair_tol);
            if (pr.ambiguous) throw Error("study: ambiguous branch pairing");
            if (pr.swapped) throw Error("study: eigenvalue order contradicts the branch predictions");
        }
        const LevelResult& fine = lv.back();
        for (std::size_t s = 0; s < 2; ++s) {
            StudyRow& row = rows[s];
            for (int r = 0; r < levels; ++r) row.lambda_h[static_cast<std::size_t>(r)] = lv[static_cast<std::size_t>(r)].values[s];
            row.lambda_eps = levels == 2 ? (4.0 * row.lambda_h[1] - row.lambda_h[0]) / 3.0 : row.lambda_h[0];
            for (int k = 0; k <= 3; ++k) row.rem[static_cast<std::size_t>(k)] = std::fabs(row.lambda_eps - row.pred[static_cast<std::size_t>(k)]);

            // H1(Omega) distance to the interpolant of u0, sign aligned.
            const Vec iu0 = interpolate_upper(fine.mesh, ctx.cluster->modal[s]);
            const Vec& uh = fine.vectors[s];
            row.h1_err = std::min(h1_norm_upper(fine.mesh, uh - iu0), h1_norm_upper(fine.mesh, uh + iu0));
        }
        const double gap = (rows[1].lambda_eps - rows[0].lambda_eps) / eps;
        rows[0].cluster_gap = rows[1].cluster_gap = gap;
    } catch (const std::exception& ex) {
        for (auto& r : rows) {
            r.flagged = true;
            r.message = ex.what();
        }
    }
    return rows;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// Cell constants and corrector constants for a config, read from or
/// written to `<cache>/<hash>/constants.json`.
struct StudyConstants {
    CellConstants cell;
    bool cache_hit = false;
};

inline std::filesystem::path cache_root(const StudyConfig& cfg) {
    if (!cfg.cache_dir.empty()) return cfg.cache_dir;
    if (!cfg.out_dir.empty()) return std::filesystem::path(cfg.out_dir) / "cache";
    return {};
}

inline StudyConstants load_or_compute_constants(const StudyConfig& cfg, const Profile& p, const EigenCluster& cluster) {
    StudyConstants sc;
    const auto root = cache_root(cfg);
    std::filesystem::path file;
    if (!root.empty()) {
        file = root / config_hash(cfg) / "constants.json";
        if (std::filesystem::exists(file)) {
            try {
                std::ifstream in(file);
                const auto j = nlohmann::json::parse(in);
                const auto& c = j.at("cell");
                sc.cell.C = c.at("C").get<double>();
                sc.cell.C_I = c.at("C_I").get<double>();
                sc.cell.C_II = c.at("C_II").get<double>();
                sc.cell.T = c.at("T").get<double>();
                sc.cell.extrapolated = c.at("extrapolated").get<bool>();
                sc.cell.h_min = c.at("h_min").get<double>();
                auto num = [](const nlohmann::json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
                sc.cell.decay_rate_X = num(c.at("decay_rate_X"));
                sc.cell.decay_rate_Xtilde = num(c.at("decay_rate_Xtilde"));
                sc.cache_hit = true;
                return sc;
            } catch (const std::exception&) {
                // unreadable cache entries are recomputed and overwritten
            }
        }
    }
    sc.cell = compute_cell_constants(p, cfg.cell);
    if (!file.empty()) {
        auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
        nlohmann::json j;
        j["hash"] = config_hash(cfg);
        j["profile"] = p.descriptor();
        j["cell"] = {{"C", sc.cell.C},
                     {"C_I", sc.cell.C_I},
                     {"C_II", sc.cell.C_II},
                     {"T", sc.cell.T},
                     {"extrapolated", sc.cell.extrapolated},
                     {"h_min", sc.cell.h_min},
                     {"decay_rate_X", num(sc.cell.decay_rate_X)},
                     {"decay_rate_Xtilde", num(sc.cell.decay_rate_Xtilde)}};
        j["cluster"] = {{"lambda0", cluster.lambda0},
                        {"G", {{cluster.G(0, 0), cluster.G(0, 1)}, {cluster.G(1, 0), cluster.G(1, 1)}}},
                        {"traces", {cluster.traces[0].coefficients(), cluster.traces[1].coefficients()}}};
        std::filesystem::create_directories(file.parent_path());
        std::ofstream(file) << j.dump(2) << '\n';
    }
    return sc;
}

/// Slope fits for every remainder order and branch, plus the H1 column.
inline void fit_report_slopes(ConvergenceReport& rep) {
    rep.slopes.clear();
    rep.slope_errors.clear();
    for (int l = 1; l <= 2; ++l) {
        auto fit = [&](const std::string& key, auto value) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& r : rep.rows)
                if (r.branch == l && !r.flagged) pts.emplace_back(r.eps, value(r));
            try {
                rep.slopes[key] = fit_slope(pts, rep.config.r2_min);
            } catch (const Error& e) {
                rep.slope_errors[key] = e.what();
            }
        };
        for (int k : rep.config.orders) fit("rem" + std::to_string(k) + "_branch" + std::to_string(l), [k](const StudyRow& r) { return r.rem[static_cast<std::size_t>(k)]; });
        fit("h1_err_branch" + std::to_string(l), [](const StudyRow& r) { return r.h1_err; });
    }
}

inline ConvergenceReport run_study(const StudyConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ConvergenceReport rep;
    rep.config = cfg;
    rep.hash = config_hash(cfg);

    static const EigenCluster cluster = diagonalize_boundary_form(analytic_cluster());
    detail::StudyContext ctx{parse_profile(cfg.profile), nullptr, &cluster, &cfg};
    const StudyConstants sc = load_or_compute_constants(cfg, ctx.profile, cluster);
    rep.cell = sc.cell;
    rep.cache_hit = sc.cache_hit;
    ctx.set = std::make_shared<const CorrectorSet>(run_correctors(cluster, sc.cell.C, sc.cell.C_I, sc.cell.C_II));
    rep.lambda0 = ctx.set->lambda0();
    for (int l = 1; l <= 2; ++l) {
        const auto& r = (*ctx.set)[l];
        rep.branch[static_cast<std::size_t>(l - 1)] = {r.lambda1, r.lambda2, r.lambda3, r.kappa1, r.kappa2};
    }

    // Per-N tasks run in batches of `threads`; results are stored by index.
    std::vector<std::array<StudyRow, 2>> results(cfg.N_list.size());
    for (std::size_t start = 0; start < cfg.N_list.size(); start += static_cast<std::size_t>(cfg.threads)) {
        const std::size_t stop = std::min(cfg.N_list.size(), start + static_cast<std::size_t>(cfg.threads));
        if (cfg.threads == 1) {
            results[start] = detail::study_point(ctx, cfg.N_list[start]);
            continue;
        }
        std::vector<std::future<std::array<StudyRow, 2>>> fut;
        for (std::size_t i = start; i < stop; ++i) fut.push_back(std::async(std::launch::async, [&ctx, &cfg, i] { return detail::study_point(ctx, cfg.N_list[i]); }));
        for (std::size_t i = start; i < stop; ++i) results[i] = fut[i - start].get();
    }
    std::size_t flagged = 0;
    for (const auto& pr : results)
        for (const auto& r : pr) {
            rep.rows.push_back(r);
            flagged += r.flagged ? 1 : 0;
        }
    if (2 * flagged > rep.rows.size()) {
        std::string msg = "study failed: " + std::to_string(flagged) + " of " + std::to_string(rep.rows.size()) + " rows flagged";
        for (const auto& r : rep.rows)
            if (r.flagged) {
                msg += " (first: N=" + std::to_string(r.N) + ": " + r.message + ")";
                break;
            }
        throw Error(msg);
    }
    fit_report_slopes(rep);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------- output

inline std::string study_csv(const ConvergenceReport& rep) {
    std::ostringstream os;
    os << kStudyCsvHeader << '\n';
    for (const auto& r : rep.rows) {
        os << r.N << ',' << detail::fmt(r.eps) << ',' << r.branch << ',' << detail::fmt(r.lambda_eps);
        for (double v : r.pred) os << ',' << detail::fmt(v);
        for (double v : r.rem) os << ',' << detail::fmt(v);
        os << ',' << detail::fmt(r.h1_err) << ',' << detail::fmt(r.cluster_gap) << '\n';
    }
    return os.str();
}

inline nlohmann::json slope_json(const SlopeFit& f) {
    return {{"slope", f.slope}, {"r2", f.r2}, {"intercept", f.intercept}, {"points", f.points}, {"flagged", f.flagged}};
}

inline nlohmann::json slopes_json(const ConvergenceReport& rep) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, f] : rep.slopes) j[k] = slope_json(f);
    for (const auto& [k, e] : rep.slope_errors) j[k] = {{"error", e}};
    return j;
}

inline nlohmann::json report_json(const ConvergenceReport& rep) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config_hash"] = rep.hash;
    j["config"] = to_json(rep.config);
    j["lambda0"] = rep.lambda0;
    j["cell"] = {{"C", rep.cell.C}, {"C_I", rep.cell.C_I}, {"C_II", rep.cell.C_II}, {"extrapolated", rep.cell.extrapolated}};
    for (int l = 0; l < 2; ++l) {
        const auto& b = rep.branch[static_cast<std::size_t>(l)];
        j["branches"].push_back({{"branch", l + 1},
                                 {"lambda1", b.lambda1},
                                 {"lambda2", b.lambda2},
                                 {"lambda3", b.lambda3},
                                 {"kappa1", b.kappa1},
                                 {"kappa2", b.kappa2}});
    }
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        nlohmann::json o{{"N", r.N},
                         {"eps", r.eps},
                         {"branch", r.branch},
                         {"lambda_eps", r.lambda_eps},
                         {"lambda_h", r.lambda_h},
                         {"pred", r.pred},
                         {"rem", r.rem},
                         {"h1_err", r.h1_err},
                         {"cluster_gap", r.cluster_gap},
                         {"flagged", r.flagged}};
        if (r.flagged) o["message"] = r.message;
        j["rows"].push_back(o);
    }
    j["slopes"] = slopes_json(rep);
    return j;
}

/// Writes study.csv, study.json and slopes.json into `dir`.
inline void write_study(const ConvergenceReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "study.csv") << study_csv(rep);
    std::ofstream(dir / "study.json") << report_json(rep).dump(2) << '\n';
    std::ofstream(dir / "slopes.json") << slopes_json(rep).dump(2) << '\n';
}

/// Rebuilds a report from study.json (for the `report` subcommand).
inline ConvergenceReport read_study(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw Error("report: cannot open " + file.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("report: ") + e.what());
    }
    ConvergenceReport rep;
    rep.config = config_from_json(j.at("config"));
    rep.hash = j.at("config_hash").get<std::string>();
    rep.lambda0 = j.at("lambda0").get<double>();
    rep.cell.C = j.at("cell").at("C").get<double>();
    rep.cell.C_I = j.at("cell").at("C_I").get<double>();
    rep.cell.C_II = j.at("cell").at("C_II").get<double>();
    for (const auto& b : j.at("branches")) {
        auto& out = rep.branch[static_cast<std::size_t>(b.at("branch").get<int>() - 1)];
        out = {b.at("lambda1").get<double>(), b.at("lambda2").get<double>(), b.at("lambda3").get<double>(), b.at("kappa1").get<double>(),
               b.at("kappa2").get<double>()};
    }
    for (const auto& o : j.at("rows")) {
        StudyRow r;
        r.N = o.at("N").get<int>();
        r.eps = o.at("eps").get<double>();
        r.branch = o.at("branch").get<int>();
        r.lambda_eps = o.at("lambda_eps").get<double>();
        r.lambda_h = o.at("lambda_h").get<std::array<double, 2>>();
        r.pred = o.at("pred").get<std::array<double, 4>>();
        r.rem = o.at("rem").get<std::array<double, 4>>();
        r.h1_err = o.at("h1_err").get<double>();
        r.cluster_gap = o.at("cluster_gap").get<double>();
        r.flagged = o.at("flagged").get<bool>();
        if (o.contains("message")) r.message = o.at("message").get<std::string>();
        rep.rows.push_back(r);
    }
    fit_report_slopes(rep);
    return rep;
}

} // namespace oscbnd
