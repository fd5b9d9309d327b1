#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include <shf/bounds_lab.hpp>
#include <shf/diagrams.hpp>
#include <shf/dpre_sim.hpp>
#include <shf/graph_gff.hpp>
#include <shf/json_io.hpp>
#include <shf/moment_kernel.hpp>
#include <shf/special_functions.hpp>

namespace {

using shf::json;

// JSON config files.  Top-level keys are global options; an object value
// keyed by a subcommand name holds that subcommand's options.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        return collect(app, default_also).dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw CLI::ConfigError(std::string("config: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConfigError("config: top level must be an object");
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        if (v.is_number() || v.is_null()) return v.dump();
        throw CLI::ConfigError("config: nested arrays and objects are not options");
    }

    static void flatten(const json& obj, std::vector<std::string> parents,
                        std::vector<CLI::ConfigItem>& out) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (it.value().is_object()) {
                auto p = parents;
                p.push_back(it.key());
                flatten(it.value(), p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = it.key();
            if (it.value().is_array()) {
                for (const auto& v : it.value()) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(it.value()));
            }
            out.push_back(std::move(item));
        }
    }

    // Numbers and booleans in canonical form, so 1e-6 and 0.000001 hash alike.
    static json canonical(const std::string& v) {
        json x = json::parse(v, nullptr, false);
        if (x.is_number() || x.is_boolean()) return x;
        return v;
    }

    static json collect(const CLI::App* app, bool default_also) {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options()) {
            if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
            const std::string& name = opt->get_lnames().front();
            if (name == "help" || name == "version" || name == "config" || name == "dump-config")
                continue;
            std::vector<std::string> vals = opt->results();
            if (vals.empty()) {
                if (!default_also || opt->get_default_str().empty()) continue;
                vals.push_back(opt->get_default_str());
            }
            json typed = json::array();
            for (const auto& v : vals) typed.push_back(canonical(v));
            if (opt->get_items_expected_max() > 1)
                j[name] = typed;
            else
                j[name] = typed.back();
        }
        for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = collect(sub, default_also);
        return j;
    }
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t x) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << x;
    return os.str();
}

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

struct Globals {
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::string output = "-";
    std::string format;
};

// What a subcommand hands back for writing.
struct Artifact {
    std::string default_format = "json";
    json result;
    std::function<void(std::ostream&)> csv;   // body rows, header included
    std::function<void(std::ostream&)> lines; // JSON-lines body, replaces result
    std::vector<std::string> failures;        // asserted checks that failed
    std::vector<std::string> warnings;
};

void write_atomic(const std::string& path, const std::string& content) {
    if (path == "-") {
        std::cout << content << std::flush;
        return;
    }
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f << content;
        f.flush();
        if (!f) throw std::runtime_error("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("rename to " + path + " failed: " + ec.message());
    }
}

std::string render(const Artifact& a, const json& meta, const json& params, const std::string& format) {
    std::ostringstream os;
    if (format == "csv") {
        if (!a.csv) throw shf::DomainError("this subcommand has no csv output; use --format json");
        os << "# shf " << meta["version"].get<std::string>() << "\n";
        os << "# command=" << meta["command"].get<std::string>() << "\n";
        os << "# config_hash=" << meta["config_hash"].get<std::string>() << "\n";
        os << "# seed=" << meta["seed"].get<std::uint64_t>() << "\n";
        os << "# params=" << params.dump() << "\n";
        for (const auto& w : a.warnings) os << "# warning=" << w << "\n";
        a.csv(os);
        return os.str();
    }
    json m = meta;
    if (!a.warnings.empty()) m["warnings"] = a.warnings;
    if (a.lines) {
        os << json{{"meta", m}, {"params", params}, {"result", a.result}}.dump() << "\n";
        a.lines(os);
        return os.str();
    }
    os << json{{"meta", m}, {"params", params}, {"result", a.result}}.dump(2) << "\n";
    return os.str();
}

shf::ParallelOptions parallel(const Globals& g) {
    shf::ParallelOptions p;
    p.workers = g.workers;
    return p;
}

std::vector<shf::Point> parse_points(const std::string& s) {
    std::vector<shf::Point> pts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) {
        std::replace(item.begin(), item.end(), ',', ' ');
        std::istringstream is(item);
        shf::Point p;
        std::string rest;
        if (!(is >> p.x >> p.y) || (is >> rest))
            throw shf::DomainError("--points: expected 'x,y;x,y;...', got '" + s + "'");
        pts.push_back(p);
    }
    if (pts.empty()) throw shf::DomainError("--points: no points given");
    return pts;
}

// ------------------------------------------------------------ subcommands

struct GthetaArgs {
    double theta = 0.0;
    std::vector<double> t;
    double rel_tol = 1e-10;
    bool integral = false;
};

json gtheta_point(const GthetaArgs& a, double t) {
    auto dp = shf::dickman(a.theta, a.rel_tol);
    auto rep = shf::g_theta_scaled_report(dp, t);
    double value = rep.value / t;
    json j{{"t", t},
           {"value", shf::detail::num(value)},
           {"rel_tol", a.rel_tol},
           {"error_estimate", shf::detail::num(rep.error_estimate / t)},
           {"tail_bound", shf::detail::num(rep.tail_bound / t)},
           {"log_scaled", shf::detail::num(value * t * std::pow(std::log(t), 2))}};
    if (a.integral) j["integral"] = shf::detail::num(shf::g_theta_integral(dp, t));
    return j;
}

Artifact run_gtheta(const GthetaArgs& a) {
    Artifact out;
    if (!shf::theta_in_tested_range(a.theta))
        out.warnings.push_back("theta outside the tested range [-5, 5]");
    json pts = json::array();
    for (double t : a.t) pts.push_back(gtheta_point(a, t));
    out.result = pts.size() == 1 ? pts[0] : json{{"points", pts}};
    out.csv = [pts, a](std::ostream& os) {
        os << "t,value,error_estimate,tail_bound" << (a.integral ? ",integral" : "") << "\n";
        for (const auto& p : pts) {
            os << p["t"].dump() << ',' << p["value"].dump() << ',' << p["error_estimate"].dump() << ','
               << p["tail_bound"].dump();
            if (a.integral) os << ',' << p["integral"].dump();
            os << "\n";
        }
    };
    return out;
}

struct PatternArgs {
    int h = 3;
    int m = 2;
    bool list = false;
    std::uint64_t sample = 0;
    std::uint64_t cap = 100000;
};

json pattern_json(const shf::CollisionPattern& p) {
    json pairs = json::array();
    for (const auto& q : p.pairs()) pairs.push_back({q.i, q.j});
    auto pm = shf::parent_map(p);
    auto gp = shf::gap_profile(p);
    return json{{"pairs", pairs},
                {"parents_i", pm.p_i},
                {"parents_j", pm.p_j},
                {"eta", gp.eta},
                {"amgm_log_margin", shf::detail::num(shf::amgm_log_margin(gp, p.m(), p.h()))}};
}

Artifact run_patterns(const PatternArgs& a, const Globals& g) {
    Artifact out;
    auto exact = shf::pattern_count_exact(a.h, a.m);
    if (a.h < 2 || a.m < 1) throw shf::DomainError("patterns: need h >= 2 and m >= 1");
    out.result = {{"h", a.h},
                  {"m", a.m},
                  {"count", shf::detail::num(shf::pattern_count(a.h, a.m))},
                  {"log_count", shf::detail::num(shf::log_pattern_count(a.h, a.m))}};
    if (exact) out.result["exact_count"] = *exact;
    std::vector<shf::CollisionPattern> pats;
    if (a.list) {
        pats = shf::enumerate_patterns(a.h, a.m, a.cap);
    } else if (a.sample > 0) {
        shf::Rng rng(g.seed, shf::StreamId::patterns, 0);
        for (std::uint64_t k = 0; k < a.sample; ++k) pats.push_back(shf::sample_pattern(a.h, a.m, rng));
        out.result["sampled"] = a.sample;
    }
    if (!pats.empty()) {
        out.lines = [pats](std::ostream& os) {
            for (const auto& p : pats) os << pattern_json(p).dump() << "\n";
        };
    }
    out.csv = [pats, r = out.result](std::ostream& os) {
        if (pats.empty()) {
            os << "h,m,count,log_count\n"
               << r["h"] << ',' << r["m"] << ',' << r["count"].dump() << ',' << r["log_count"].dump()
               << "\n";
            return;
        }
        os << "pattern,eta,amgm_log_margin\n";
        for (const auto& p : pats) {
            auto gp = shf::gap_profile(p);
            os << '"' << shf::to_string(p) << "\"," << gp.eta << ','
               << fmt(shf::amgm_log_margin(gp, p.m(), p.h())) << "\n";
        }
    };
    return out;
}

struct GffArgs {
    std::string graph;
    std::vector<double> alpha{1.0};
};

Artifact run_gff(const GffArgs& a) {
    Artifact out;
    json doc;
    try {
        if (a.graph == "-") {
            doc = json::parse(std::cin);
        } else {
            std::ifstream f(a.graph);
            if (!f) throw shf::DomainError("gff: cannot read " + a.graph);
            doc = json::parse(f);
        }
    } catch (const json::exception& e) {
        throw shf::DomainError(std::string("gff: ") + e.what());
    }
    auto spec = shf::graph_from_json(doc);
    const auto& G = spec.graph;
    auto cf = shf::gff_log_partition(G, spec.boundary);
    json r{{"n", G.vertex_count()},
           {"edges", G.edges().size()},
           {"boundary", spec.boundary},
           {"connected", G.is_connected()},
           {"log_partition", shf::detail::num(cf.log_partition)},
           {"log_reduced_det", shf::detail::num(cf.log_reduced_det)},
           {"reduced_det", shf::detail::num(cf.reduced_det)}};
    if (cf.tree_sum) r["tree_sum"] = shf::detail::num(*cf.tree_sum);
    if (G.vertex_count() <= shf::spanning_tree_vertex_guard) {
        auto tb = shf::tree_count_bound(G);
        r["tree_count"] = tb.count;
        r["tree_count_bound"] = shf::detail::num(tb.bound);
    }
    if (!spec.values.empty()) {
        auto H = shf::harmonic_extension(G, spec.values);
        json field = json::array();
        for (const auto& p : H) field.push_back({shf::detail::num(p.x), shf::detail::num(p.y)});
        auto pg = shf::pinned_gaussian(G, spec.values);
        json per_alpha = json::array();
        for (double al : a.alpha)
            per_alpha.push_back({{"alpha", al}, {"log_integral", shf::detail::num(pg.log_value(al))}});
        r["harmonic_extension"] = field;
        r["energy"] = shf::detail::num(pg.energy);
        r["pinned"] = per_alpha;
    }
    out.result = r;
    out.csv = [r](std::ostream& os) {
        os << "key,value\n";
        for (const char* k : {"log_partition", "log_reduced_det", "reduced_det", "tree_sum", "tree_count",
                              "tree_count_bound", "energy"})
            if (r.contains(k)) os << k << ',' << r[k].dump() << "\n";
    };
    return out;
}

struct MomentArgs {
    int h = 2;
    double theta = 0.0;
    int m_max = 6;
    std::uint64_t samples = 100000;
};

std::function<void(std::ostream&)> per_m_csv(std::vector<shf::MomentEstimate> es, std::vector<double> alphas) {
    return [es, alphas](std::ostream& os) {
        os << "alpha,m,value,std_error,samples,patterns,stratified\n";
        for (std::size_t k = 0; k < es.size(); ++k) {
            os << fmt(alphas[k]) << ",0," << fmt(es[k].value) << ',' << fmt(es[k].std_error) << ','
               << es[k].samples << ",,\n";
            for (const auto& p : es[k].per_m)
                os << fmt(alphas[k]) << ',' << p.m << ',' << fmt(p.value) << ',' << fmt(p.std_error)
                   << ',' << p.samples << ',' << fmt(p.patterns) << ',' << (p.stratified ? 1 : 0)
                   << "\n";
        }
    };
}

Artifact run_moment(const MomentArgs& a, const Globals& g) {
    Artifact out;
    if (!shf::theta_in_tested_range(a.theta))
        out.warnings.push_back("theta outside the tested range [-5, 5]");
    shf::MonteCarloOptions opt;
    opt.samples = a.samples;
    opt.seed = g.seed;
    opt.parallel = parallel(g);
    auto e = shf::moment_gaussian(a.h, a.theta, a.m_max, opt);
    out.result = e;
    out.csv = per_m_csv({e}, {1.0});
    return out;
}

struct KernelArgs {
    std::string points;
    double theta = 0.0;
    double t = 1.0;
    int m_max = 3;
    std::uint64_t samples = 100000;
    std::vector<double> alpha{1.0};
};

Artifact run_kernel(const KernelArgs& a, const Globals& g) {
    Artifact out;
    if (!shf::theta_in_tested_range(a.theta))
        out.warnings.push_back("theta outside the tested range [-5, 5]");
    auto zs = parse_points(a.points);
    shf::MonteCarloOptions opt;
    opt.samples = a.samples;
    opt.seed = g.seed;
    opt.parallel = parallel(g);
    auto es = shf::kernel_at_scaled_points(zs, a.alpha, a.theta, a.t, a.m_max, opt);
    json arr = json::array();
    for (std::size_t k = 0; k < es.size(); ++k) {
        json j = es[k];
        j["alpha"] = a.alpha[k];
        arr.push_back(j);
    }
    out.result = arr.size() == 1 ? arr[0] : arr;
    out.csv = per_m_csv(es, a.alpha);
    return out;
}

struct VerifyArgs {
    shf::VerifyOptions o;
};

Artifact run_verify(VerifyArgs a, const Globals& g) {
    Artifact out;
    out.default_format = "csv";
    a.o.seed = g.seed;
    a.o.parallel = parallel(g);
    auto rows = shf::verify_ledger(a.o);
    out.result = rows;
    for (const auto& r : rows)
        if (!r.passes())
            out.failures.push_back(r.check_name + "," + r.params + "," + fmt(r.lhs) + "," + fmt(r.rhs) +
                                   "," + fmt(r.margin) + "," + fmt(r.sigma));
    out.csv = [rows](std::ostream& os) {
        os << "check_name,params,lhs,rhs,margin,sigma,asserted,passes\n";
        for (const auto& r : rows)
            os << r.check_name << ',' << r.params << ',' << fmt(r.lhs) << ',' << fmt(r.rhs) << ','
               << fmt(r.margin) << ',' << fmt(r.sigma) << ',' << (r.asserted ? 1 : 0) << ','
               << (r.passes() ? 1 : 0) << "\n";
    };
    return out;
}

struct TailArgs {
    std::vector<double> log_log_z;
    std::vector<double> z;
    double c = 1.0;
    double c0 = 1.0;
};

Artifact run_tail(const TailArgs& a) {
    Artifact out;
    std::vector<shf::TailParams> ps;
    for (double z : a.z) ps.push_back(shf::TailParams::from_z(z, a.c, a.c0));
    for (double l : a.log_log_z) ps.push_back({a.c, a.c0, l});
    if (ps.empty()) throw shf::DomainError("tail: give --loglogz or --z");
    std::vector<shf::TailEnvelope> es;
    for (const auto& p : ps) es.push_back(shf::tail_envelope(p));
    out.result = es.size() == 1 ? json(es[0]) : json(es);
    out.csv = [es](std::ostream& os) {
        os << "L,M,h,log_log_w,upper_log_magnitude,lower_log_magnitude,ordering_margin,i3_neg_log,"
              "pointwise_margin,moment_margin\n";
        for (const auto& e : es)
            os << fmt(e.L) << ',' << fmt(e.M) << ',' << e.h << ',' << fmt(e.log_log_w) << ','
               << fmt(e.upper_log_magnitude) << ',' << fmt(e.lower_log_magnitude) << ','
               << fmt(e.ordering_margin) << ',' << fmt(e.i3_neg_log) << ',' << fmt(e.pointwise_margin)
               << ',' << fmt(e.moment_margin) << "\n";
    };
    return out;
}

struct DpreArgs {
    std::string mode = "moment";
    long long n = 128;
    double theta = 0.0;
    std::uint64_t samples = 10000;
    int h = 2;
    std::uint64_t direct_samples = 0;
    bool direct = true;
    std::string samples_out;
};

Artifact run_dpre(const DpreArgs& a, const Globals& g) {
    Artifact out;
    const auto par = parallel(g);
    if (a.mode == "rn") {
        double r = shf::compute_r_n(a.n);
        double ref = std::log(static_cast<double>(a.n)) / std::numbers::pi;
        out.result = {{"n", a.n}, {"r_n", r}, {"log_n_over_pi", ref}, {"ratio", r / ref}};
        out.csv = [r = out.result](std::ostream& os) {
            os << "n,r_n,ratio\n" << r["n"] << ',' << r["r_n"].dump() << ',' << r["ratio"].dump() << "\n";
        };
        return out;
    }
    auto w = shf::CriticalWindow::make(a.n, a.theta);
    if (a.mode == "partition") {
        auto zs = shf::simulate_partition(w, a.samples, g.seed, par);
        shf::RunningStats st;
        for (const auto& z : zs) st.add(z.partition_value);
        out.result = {{"window", w},
                      {"samples", zs.size()},
                      {"mean", st.mean()},
                      {"std_error", st.std_error()},
                      {"variance", st.variance()},
                      {"mean_z", st.std_error() > 0 ? (st.mean() - 1.0) / st.std_error() : 0.0},
                      {"truncation_bound", shf::truncation_bound(a.n, shf::transfer_half_width(a.n))}};
        auto csv = [zs](std::ostream& os) {
            os << "index,partition_value\n";
            for (const auto& z : zs) os << z.seed << ',' << fmt(z.partition_value) << "\n";
        };
        out.csv = csv;
        out.default_format = "json";
        if (!a.samples_out.empty()) {
            std::ostringstream os;
            csv(os);
            write_atomic(a.samples_out, os.str());
        }
        return out;
    }
    if (a.mode == "collision-law") {
        auto law = shf::collision_law(a.n, a.samples, g.seed, par);
        out.result = {{"n", a.n},
                      {"samples", law.counts.size()},
                      {"mean_scaled", law.mean},
                      {"ks_raw", law.ks_raw},
                      {"ks_jittered", law.ks_jittered}};
        auto csv = [law](std::ostream& os) {
            os << "count,scaled\n";
            for (std::size_t k = 0; k < law.counts.size(); ++k)
                os << law.counts[k] << ',' << fmt(law.scaled[k]) << "\n";
        };
        out.csv = csv;
        if (!a.samples_out.empty()) {
            std::ostringstream os;
            csv(os);
            write_atomic(a.samples_out, os.str());
        }
        return out;
    }
    if (a.mode == "moment") {
        auto m = shf::dpre_moment(a.h, w, a.samples, g.seed, par, a.direct, a.direct_samples);
        out.result = m;
        if (a.h == 2 && a.n <= shf::pair_moment_guard) out.result["exact"] = shf::pair_moment_exact(w);
        if (!m.warning.empty()) out.warnings.push_back(m.warning);
        if (auto z = m.cross_check_z(); z && m.warning.empty() && *z > 3.0)
            out.failures.push_back("dpre_cross_check,direct=" + fmt(m.direct->value) +
                                   ",collision=" + fmt(m.collision.value) + ",z=" + fmt(*z));
        out.csv = [m](std::ostream& os) {
            os << "estimator,value,std_error\n";
            os << "collision," << fmt(m.collision.value) << ',' << fmt(m.collision.std_error) << "\n";
            if (m.direct) os << "direct," << fmt(m.direct->value) << ',' << fmt(m.direct->std_error) << "\n";
            if (m.pairwise_product)
                os << "pairwise_product," << fmt(m.pairwise_product->value) << ','
                   << fmt(m.pairwise_product->std_error) << "\n";
        };
        return out;
    }
    throw shf::DomainError("dpre: unknown mode " + a.mode);
}

std::string version_table() {
    std::ostringstream os;
    os << "shf " << SHF_VERSION << "\n"
       << "build: " << __VERSION__ << ", C++ " << __cplusplus << ", Eigen " << EIGEN_WORLD_VERSION << '.'
       << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << ", Boost " << BOOST_VERSION / 100000 << '.'
       << BOOST_VERSION / 100 % 1000 << "\n\n"
       << "subcommand  module             computes\n"
       << "gtheta      special_functions  renewal density G_theta and its integral\n"
       << "patterns    diagrams           collision patterns, counts, gap profiles\n"
       << "gff         graph_gff          pinned planar GFF partition functions, tree sums\n"
       << "moment      moment_kernel      E[Z^h] by the collision-diagram series\n"
       << "kernel      moment_kernel      moment kernel at given points, several dilations\n"
       << "verify      bounds_lab         inequality ledger with margins\n"
       << "tail        bounds_lab         tail envelopes in log magnitude\n"
       << "dpre        dpre_sim           lattice polymer partition functions and moments\n";
    return os.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moment and collision-diagram toolkit for the critical 2D stochastic heat flow", "shf"};
    app.set_help_flag("--help", "Print this help and exit");
    app.set_version_flag("--version", version_table());
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    bool dump_config = false;
    app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
    app.add_option("--workers", g.workers, "Worker threads")->check(CLI::Range(1u, 1024u))->capture_default_str();
    app.add_option("-o,--output", g.output, "Output file, - for stdout")->capture_default_str();
    app.add_option("--format", g.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    app.add_flag("--dump-config", dump_config, "Print the effective configuration as JSON and exit")
        ->configurable(false);

    GthetaArgs ga;
    auto* c_gt = app.add_subcommand("gtheta", "Renewal density G_theta(t)");
    c_gt->add_option("--theta", ga.theta)->capture_default_str();
    c_gt->add_option("--t", ga.t, "Times in (0, 1]")->required();
    c_gt->add_option("--rel-tol", ga.rel_tol)->capture_default_str();
    c_gt->add_flag("--integral", ga.integral, "Also integrate G_theta over (0, t]");

    PatternArgs pa;
    auto* c_pat = app.add_subcommand("patterns", "Collision patterns");
    c_pat->add_option("--h", pa.h)->capture_default_str();
    c_pat->add_option("--m", pa.m)->capture_default_str();
    c_pat->add_flag("--list", pa.list, "Emit every pattern as a JSON line");
    c_pat->add_option("--sample", pa.sample, "Emit this many uniformly drawn patterns");
    c_pat->add_option("--cap", pa.cap, "Refuse to enumerate beyond this many")->capture_default_str();

    GffArgs fa;
    auto* c_gff = app.add_subcommand("gff", "Planar Gaussian free field on a weighted graph");
    c_gff->add_option("--graph", fa.graph, "Graph JSON file, - for stdin")->required();
    c_gff->add_option("--alpha", fa.alpha, "Boundary dilations")->capture_default_str();

    MomentArgs ma;
    auto* c_mom = app.add_subcommand("moment", "E[Z^h] for Gaussian initial data");
    c_mom->add_option("--h", ma.h)->required();
    c_mom->add_option("--theta", ma.theta)->capture_default_str();
    c_mom->add_option("--m-max", ma.m_max)->capture_default_str();
    c_mom->add_option("--samples", ma.samples, "Samples per collision number")->capture_default_str();

    KernelArgs ka;
    auto* c_ker = app.add_subcommand("kernel", "Moment kernel at points");
    c_ker->add_option("--points", ka.points, "x,y;x,y;...")->required();
    c_ker->add_option("--theta", ka.theta)->capture_default_str();
    c_ker->add_option("--t", ka.t)->capture_default_str();
    c_ker->add_option("--m-max", ka.m_max)->capture_default_str();
    c_ker->add_option("--samples", ka.samples)->capture_default_str();
    c_ker->add_option("--alpha", ka.alpha)->capture_default_str();

    VerifyArgs va;
    auto* c_ver = app.add_subcommand("verify", "Run the inequality ledger");
    c_ver->add_option("--h", va.o.h)->capture_default_str();
    c_ver->add_option("--m-max", va.o.m_max)->capture_default_str();
    c_ver->add_option("--theta", va.o.theta)->capture_default_str();
    c_ver->add_option("--grid-samples", va.o.grid_samples)->capture_default_str();
    c_ver->add_option("--chain-samples", va.o.chain_samples)->capture_default_str();
    c_ver->add_option("--kernel-samples", va.o.kernel_samples)->capture_default_str();
    c_ver->add_option("--nested-samples", va.o.nested_samples)->capture_default_str();
    c_ver->add_option("--pattern-cap", va.o.pattern_cap)->capture_default_str();

    TailArgs ta;
    auto* c_tail = app.add_subcommand("tail", "Tail envelopes");
    c_tail->add_option("--loglogz", ta.log_log_z, "Values of log log z");
    c_tail->add_option("--z", ta.z, "Values of z");
    c_tail->add_option("--c", ta.c, "Upper moment constant")->capture_default_str();
    c_tail->add_option("--c0", ta.c0, "Lower moment constant")->capture_default_str();

    DpreArgs da;
    auto* c_dp = app.add_subcommand("dpre", "Directed polymer in the critical window");
    c_dp->add_option("--mode", da.mode)
        ->check(CLI::IsMember({"rn", "partition", "collision-law", "moment"}))
        ->capture_default_str();
    c_dp->add_option("--n", da.n, "Polymer length N")->capture_default_str();
    c_dp->add_option("--theta", da.theta)->capture_default_str();
    c_dp->add_option("--samples", da.samples)->capture_default_str();
    c_dp->add_option("--h", da.h)->capture_default_str();
    c_dp->add_option("--direct-samples", da.direct_samples, "0 uses --samples")->capture_default_str();
    c_dp->add_flag("!--no-direct", da.direct, "Skip the direct transfer-matrix estimator");
    c_dp->add_option("--samples-out", da.samples_out, "Also write per-sample CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (dump_config) {
        std::cout << app.config_to_str(true, false);
        return 0;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    json params = json::parse(JsonConfig().to_config(sub, true, false, ""));
    const std::string canonical = json{{"command", name}, {"params", params}, {"seed", g.seed}}.dump();
    json meta{{"version", SHF_VERSION}, {"command", name}, {"config_hash", hex(fnv1a(canonical))}, {"seed", g.seed}};

    try {
        Artifact art;
        if (name == "gtheta") art = run_gtheta(ga);
        else if (name == "patterns") art = run_patterns(pa, g);
        else if (name == "gff") art = run_gff(fa);
        else if (name == "moment") art = run_moment(ma, g);
        else if (name == "kernel") art = run_kernel(ka, g);
        else if (name == "verify") art = run_verify(va, g);
        else if (name == "tail") art = run_tail(ta);
        else art = run_dpre(da, g);

        const std::string format = g.format.empty() ? art.default_format : g.format;
        write_atomic(g.output, render(art, meta, params, format));
        for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
        if (!art.failures.empty()) {
            std::cerr << "failed checks:\n";
            for (const auto& f : art.failures) std::cerr << "  " << f << "\n";
            return 1;
        }
        return 0;
    } catch (const shf::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const shf::CapacityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const shf::InvariantError& e) {
        std::cerr << "invariant violated: " << e.what() << "\n";
        return 1;
    } catch (const shf::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
