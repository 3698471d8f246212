#include "neuron_lab/config.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <sstream>

#include "neuron_lab/io.hpp"
#include "neuron_lab/rng.hpp"

namespace neuron_lab {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Strict reader for one JSON object: every key must be consumed.
class Fields {
public:
    Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) throw ConfigError(prefix_.empty() ? "config" : prefix_, "must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    std::string path(const std::string& key) const { return join(prefix_, key); }

    const json* get(const std::string& key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::optional<double> number(const std::string& key) {
        const json* v = get(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) throw ConfigError(path(key), "must be a number");
        const double x = v->get<double>();
        if (!std::isfinite(x)) throw ConfigError(path(key), "must be finite");
        return x;
    }

    std::optional<double> positive(const std::string& key) {
        auto x = number(key);
        if (x && !(*x > 0.0)) throw ConfigError(path(key), "must be positive (got " + format_double(*x) + ")");
        return x;
    }

    std::optional<std::uint64_t> count(const std::string& key) {
        const json* v = get(key);
        if (!v) return std::nullopt;
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v->get<std::int64_t>());
        if (v->is_number_float()) {
            const double x = v->get<double>();
            if (x >= 0.0 && x == std::floor(x) && x < 1.8e19) return static_cast<std::uint64_t>(x);
        }
        throw ConfigError(path(key), "must be a non-negative integer");
    }

    std::optional<int> dim(const std::string& key, int min) {
        auto n = count(key);
        if (!n) return std::nullopt;
        if (*n < static_cast<std::uint64_t>(min) || *n > 100000)
            throw ConfigError(path(key), "must be an integer >= " + std::to_string(min));
        return static_cast<int>(*n);
    }

    std::optional<bool> boolean(const std::string& key) {
        const json* v = get(key);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) throw ConfigError(path(key), "must be true or false");
        return v->get<bool>();
    }

    std::optional<std::string> string(const std::string& key) {
        const json* v = get(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) throw ConfigError(path(key), "must be a string");
        return v->get<std::string>();
    }

    std::optional<Vec> vector(const std::string& key) {
        const json* v = get(key);
        if (!v) return std::nullopt;
        if (!v->is_array() || v->empty()) throw ConfigError(path(key), "must be a non-empty array of numbers");
        Vec out(static_cast<Eigen::Index>(v->size()));
        for (std::size_t i = 0; i < v->size(); ++i) {
            const json& x = (*v)[i];
            if (!x.is_number() || !std::isfinite(x.get<double>()))
                throw ConfigError(path(key) + "[" + std::to_string(i) + "]", "must be a finite number");
            out(static_cast<Eigen::Index>(i)) = x.get<double>();
        }
        return out;
    }

    // Rejects keys that were never read.
    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!used_.count(key)) throw ConfigError(path(key), "unknown key");
    }

    // Rejects every key; used for blocks an experiment does not take.
    void forbid_all(const std::string& why) const {
        for (const auto& [key, _] : j_.items()) throw ConfigError(path(key), why);
    }

private:
    const json& j_;
    std::string prefix_;
    std::set<std::string> used_;
};

template <class T>
void assign(std::optional<T> v, T& target) {
    if (v) target = *v;
}

template <class T, class U>
void assign_as(std::optional<U> v, T& target) {
    if (v) target = static_cast<T>(*v);
}

InputDistribution parse_distribution(const json& j, const InputDistribution& fallback) {
    Fields f(j, "distribution");
    InputDistribution d = fallback;
    if (auto kind = f.string("kind")) {
        if (*kind == "uniform_ball") d.kind = DistributionKind::UniformBall;
        else if (*kind == "standard_gaussian") d.kind = DistributionKind::StandardGaussian;
        else if (*kind == "heavy_cap") d.kind = DistributionKind::HeavyCap;
        else throw ConfigError("distribution.kind", "must be uniform_ball, standard_gaussian or heavy_cap");
    }
    assign(f.dim("dim", 1), d.dim);
    if (d.kind != DistributionKind::StandardGaussian) {
        assign(f.positive("radius"), d.radius);
    }
    if (d.kind == DistributionKind::HeavyCap) {
        if (auto q = f.number("cap_fraction")) {
            if (!(*q > 0.0 && *q < 1.0)) throw ConfigError("distribution.cap_fraction", "must lie in (0, 1)");
            d.cap_fraction = *q;
        }
        if (auto depth = f.number("cap_depth")) {
            if (!(*depth > 2.0)) throw ConfigError("distribution.cap_depth", "must exceed 2");
            d.cap_depth = *depth;
        }
    }
    f.finish();
    return d;
}

GradientEngine parse_engine(const json& j) {
    Fields f(j, "engine");
    const std::string kind = f.string("kind").value_or("quadrature");
    GradientEngine e;
    if (kind == "quadrature") {
        QuadratureGrid grid;
        assign_as(f.dim("nodes", 2), grid.nodes);
        assign(f.positive("panel_width"), grid.panel_width);
        const bool est = f.boolean("estimate_error").value_or(false);
        e = GradientEngine::quadrature(grid, est);
    } else if (kind == "monte_carlo") {
        const std::uint64_t n = f.count("n_samples").value_or(1'000'000);
        if (n < 2) throw ConfigError("engine.n_samples", "must be >= 2");
        const std::uint64_t seed = f.count("seed").value_or(0);
        const bool crn = f.boolean("common_random_numbers").value_or(true);
        e = GradientEngine::monte_carlo(n, seed, crn);
    } else {
        throw ConfigError("engine.kind", "must be quadrature or monte_carlo");
    }
    if (auto s0 = f.number("relu_deriv_at_zero")) {
        if (!(*s0 >= 0.0 && *s0 <= 1.0)) throw ConfigError("engine.relu_deriv_at_zero", "must lie in [0, 1]");
        e.relu_deriv_at_zero = *s0;
    }
    f.finish();
    return e;
}

Integrator parse_integrator(const std::string& s) {
    if (s == "rk4") return Integrator::RK4;
    if (s == "euler") return Integrator::Euler;
    throw ConfigError("optimizer.integrator", "must be rk4 or euler");
}

const json kEmpty = json::object();

const json& block(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? kEmpty : *it;
}

void fill_params(ExperimentSpec& spec, const json& root) {
    Fields p(block(root, "params"), "params");
    Fields o(block(root, "optimizer"), "optimizer");
    const bool has_dist = root.contains("distribution");
    auto no_distribution = [&] {
        if (has_dist)
            throw ConfigError("distribution", "experiment '" + to_string(spec.id) +
                                                  "' fixes its input distribution");
    };

    switch (spec.id) {
        case ExperimentId::StuckAtInit: {
            no_distribution();
            StuckAtInitParams q;
            assign(p.dim("d", 1), q.d);
            assign(p.positive("epsilon"), q.epsilon);
            assign(o.positive("eta"), q.eta);
            assign_as(o.count("steps"), q.gd_steps);
            spec.params = q;
            break;
        }
        case ExperimentId::NegativeBiasFailure: {
            no_distribution();
            NegativeBiasParams q;
            assign(p.dim("d", 3), q.d);
            assign(p.positive("r"), q.r);
            assign(p.positive("rho"), q.rho);
            if (auto t = p.number("loss_tol")) {
                if (!(*t >= 0.0)) throw ConfigError("params.loss_tol", "must be >= 0");
                q.loss_tol = *t;
            }
            assign(p.number("band_lo"), q.band_lo);
            assign(p.number("band_hi"), q.band_hi);
            if (!(q.band_lo <= q.band_hi)) throw ConfigError("params.band_lo", "must not exceed params.band_hi");
            if (auto s = o.string("integrator")) q.integrator = parse_integrator(*s);
            assign(o.positive("dt"), q.dt);
            assign(o.positive("t_max"), q.t_max);
            assign_as(o.count("halving_every"), q.halving_every);
            spec.params = q;
            break;
        }
        case ExperimentId::F0Computation: {
            no_distribution();
            o.forbid_all("experiment 'f0_computation' runs no optimizer");
            F0Params q;
            if (const json* dims = p.get("dims")) {
                if (!dims->is_array() || dims->empty())
                    throw ConfigError("params.dims", "must be a non-empty array of integers >= 2");
                q.dims.clear();
                for (std::size_t i = 0; i < dims->size(); ++i) {
                    const json& x = (*dims)[i];
                    if (!x.is_number_integer() || x.get<std::int64_t>() < 2 || x.get<std::int64_t>() > 100000)
                        throw ConfigError("params.dims[" + std::to_string(i) + "]", "must be an integer >= 2");
                    q.dims.push_back(x.get<int>());
                }
            }
            assign(p.positive("r"), q.r);
            if (auto c = p.number("cap_fraction")) {
                if (!(*c > 0.0 && *c < 1.0)) throw ConfigError("params.cap_fraction", "must lie in (0, 1)");
                q.cap_fraction = *c;
            }
            if (auto c = p.number("cap_depth")) {
                if (!(*c > 2.0)) throw ConfigError("params.cap_depth", "must exceed 2");
                q.cap_depth = *c;
            }
            if (auto n = p.count("mc_samples")) {
                if (*n < 2) throw ConfigError("params.mc_samples", "must be >= 2");
                q.mc_samples = *n;
            }
            spec.params = q;
            break;
        }
        case ExperimentId::LinearRate: {
            LinearRateParams q;
            if (has_dist) q.dist = parse_distribution(root.at("distribution"), q.dist);
            if (!q.dist.bounded())
                throw ConfigError("distribution.kind", "linear_rate needs a bounded distribution");
            if (auto a = p.positive("alpha")) q.alpha = *a;
            if (auto s = p.string("init")) {
                if (*s == "small_sphere") q.init = InitRecipe::SmallSphere;
                else if (*s == "target") q.init = InitRecipe::Target;
                else throw ConfigError("params.init", "must be small_sphere or target");
            }
            const Eigen::Index want = q.dist.dim + 1;
            for (const char* key : {"w0", "v"}) {
                if (auto x = p.vector(key)) {
                    if (x->size() != want)
                        throw ConfigError(std::string("params.") + key,
                                          "length " + std::to_string(x->size()) +
                                              " does not match distribution.dim + 1 = " +
                                              std::to_string(want));
                    (std::string(key) == "w0" ? q.w0 : q.v) = *x;
                }
            }
            assign(o.positive("eta_scale"), q.eta_scale);
            if (auto n = o.count("steps")) {
                if (*n < 1) throw ConfigError("optimizer.steps", "must be >= 1");
                q.n_steps = *n;
            }
            spec.params = q;
            break;
        }
        case ExperimentId::RandomInit:
        case ExperimentId::NoBiasTarget: {
            RandomInitParams q;
            if (has_dist) q.dist = parse_distribution(root.at("distribution"), q.dist);
            if (q.dist.dim < 2) throw ConfigError("distribution.dim", "must be >= 2");
            if (!q.dist.spherically_symmetric())
                throw ConfigError("distribution.kind", "must be spherically symmetric");
            if (spec.id == ExperimentId::RandomInit) {
                if (auto b = p.number("b_v_ratio")) {
                    if (!(*b >= 0.0)) throw ConfigError("params.b_v_ratio", "must be >= 0");
                    q.b_v_ratio = *b;
                }
            }
            if (auto a = p.positive("alpha")) q.alpha = *a;
            if (auto s = p.string("init")) {
                if (*s == "sphere") q.init = InitScale::Sphere;
                else if (*s == "normal") q.init = InitScale::Normal;
                else throw ConfigError("params.init", "must be sphere or normal");
            }
            assign(p.boolean("learner_bias"), q.learner_bias);
            assign(o.positive("eta"), q.eta);
            if (auto n = o.count("max_iters")) {
                if (*n < 1) throw ConfigError("optimizer.max_iters", "must be >= 1");
                q.max_iters = *n;
            }
            assign(o.positive("success_tol"), q.success_tol);
            spec.params = q;
            break;
        }
        case ExperimentId::SymmetricConvergence: {
            no_distribution();
            SymmetricParams q;
            assign(p.dim("d", 2), q.d);
            if (auto b = p.number("b_v")) {
                if (!(*b >= 0.0)) throw ConfigError("params.b_v", "must be >= 0");
                q.b_v = *b;
            }
            assign(p.positive("alpha"), q.alpha);
            assign(p.positive("C"), q.C);
            if (auto s = p.string("init")) {
                if (*s == "perturb") q.init = SymmetricInit::Perturb;
                else if (*s == "standard") q.init = SymmetricInit::Standard;
                else if (*s == "target") q.init = SymmetricInit::Target;
                else throw ConfigError("params.init", "must be perturb, standard or target");
            }
            if (auto r = p.number("perturb_radius")) {
                if (!(*r > 0.0 && *r <= 1.0)) throw ConfigError("params.perturb_radius", "must lie in (0, 1]");
                q.perturb_radius = *r;
            }
            if (auto e = o.number("eta_fraction")) {
                if (!(*e > 0.0 && *e < 1.0)) throw ConfigError("optimizer.eta_fraction", "must lie in (0, 1)");
                q.eta_fraction = *e;
            }
            if (auto n = o.count("max_steps")) {
                if (*n < 1) throw ConfigError("optimizer.max_steps", "must be >= 1");
                q.max_steps = *n;
            }
            assign(o.positive("dist_tol"), q.dist_tol);
            spec.params = q;
            break;
        }
        case ExperimentId::Tightness: {
            no_distribution();
            TightnessParams q;
            assign(p.dim("d", 3), q.d);
            assign(p.positive("r"), q.r);
            if (auto n = p.count("n_ratios")) {
                if (*n < 2) throw ConfigError("params.n_ratios", "must be >= 2");
                q.n_ratios = *n;
            }
            assign(o.positive("eta"), q.eta);
            if (auto n = o.count("max_iters")) {
                if (*n < 1) throw ConfigError("optimizer.max_iters", "must be >= 1");
                q.max_iters = *n;
            }
            assign(o.positive("success_tol"), q.success_tol);
            spec.params = q;
            break;
        }
    }
    p.finish();
    o.finish();
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

RunConfig parse_run_config(const json& j, bool allow_sweep) {
    Fields f(j, "");
    RunConfig cfg;
    cfg.source = j;
    const auto name = f.string("experiment");
    if (!name) throw ConfigError("experiment", "required");
    const auto id = parse_experiment_id(*name);
    if (!id) {
        std::string names;
        for (ExperimentId e : all_experiment_ids()) names += (names.empty() ? "" : ", ") + to_string(e);
        throw ConfigError("experiment", "unknown experiment '" + *name + "' (expected one of " + names + ")");
    }
    cfg.spec = ExperimentSpec::defaults(*id);
    if (auto n = f.count("n_trials")) {
        if (*n < 1) throw ConfigError("n_trials", "must be >= 1");
        cfg.spec.n_trials = *n;
    }
    assign(f.count("seed"), cfg.spec.base_seed);
    if (auto w = f.count("workers")) {
        if (*w > 4096) throw ConfigError("workers", "must be at most 4096");
        cfg.spec.workers = static_cast<unsigned>(*w);
    }
    if (auto out = f.string("out")) cfg.out = *out;
    assign(f.positive("tolerance_scale"), cfg.spec.tolerance_scale);
    assign_as(f.count("trajectories"), cfg.spec.trajectories);
    if (const json* e = f.get("engine")) cfg.spec.engine = parse_engine(*e);
    f.get("params");
    f.get("optimizer");
    f.get("distribution");
    fill_params(cfg.spec, j);

    if (const json* s = f.get("sweep")) {
        if (!allow_sweep) throw ConfigError("sweep", "only the sweep command accepts a sweep block");
        Fields sw(*s, "sweep");
        for (const auto& [path, values] : s->items()) {
            sw.get(path);
            if (!values.is_array() || values.empty())
                throw ConfigError("sweep." + path, "must be a non-empty array of values");
            cfg.sweep.push_back({path, std::vector<json>(values.begin(), values.end())});
        }
        if (cfg.sweep.empty() || cfg.sweep.size() > 2)
            throw ConfigError("sweep", "must declare one or two swept parameters");
        // Every grid value must produce a valid config.
        for (const auto& axis : cfg.sweep) {
            if (axis.path == "sweep" || axis.path.rfind("sweep.", 0) == 0 || axis.path == "experiment")
                throw ConfigError("sweep." + axis.path, "cannot be swept");
            for (const auto& v : axis.values) {
                json probe = j;
                probe.erase("sweep");
                parse_run_config(with_value(probe, axis.path, v), false);
            }
        }
    } else if (allow_sweep) {
        throw ConfigError("sweep", "required by the sweep command");
    }
    f.finish();

    try {
        cfg.spec.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config", e.what());
    }
    if (const auto* lr = std::get_if<LinearRateParams>(&cfg.spec.params)) {
        try {
            cfg.spec.engine.validate(lr->dist);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("engine", e.what());
        }
    }
    if (const auto* ri = std::get_if<RandomInitParams>(&cfg.spec.params)) {
        try {
            cfg.spec.engine.validate(ri->dist);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("engine", e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, bool allow_sweep) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError("config", "cannot read " + path.string() + ": " + e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_run_config(j, allow_sweep);
}

json with_value(json j, const std::string& path, const json& value) {
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError(path, "malformed path");
        if (!node->is_object()) throw ConfigError(path, "path does not lead through objects");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return j;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

std::vector<json> sweep_points(const RunConfig& cfg) {
    json base = cfg.source;
    base.erase("sweep");
    std::vector<json> points{base};
    for (const auto& axis : cfg.sweep) {
        std::vector<json> next;
        for (const auto& p : points)
            for (const auto& v : axis.values) next.push_back(with_value(p, axis.path, v));
        points = std::move(next);
    }
    return points;
}

ordered_json make_manifest(const RunConfig& cfg, const std::vector<std::string>& argv) {
    ordered_json m;
    m["artifact"] = "neuron_lab";
    m["version"] = kArtifactVersion;
    m["created_utc"] = utc_now();
    m["command"] = argv;
    m["config"] = ordered_json::parse(cfg.source.dump());
    m["resolved"] = cfg.spec.to_json();
    std::ostringstream rule;
    rule << "std::mt19937_64 seeded through std::seed_seq with the 32-bit halves of "
            "(base_seed, a, b, c); trial i uses (a, b, c) = ("
         << stream::trial << ", " << static_cast<std::uint64_t>(cfg.spec.id) + 1
         << ", i); Monte Carlo sample chunk j uses (" << stream::mc_samples << ", j)";
    m["seed_derivation"] = {{"base_seed", cfg.spec.base_seed}, {"rule", rule.str()}};
    m["workers"] = cfg.spec.workers;
    m["note"] = "aggregates are independent of the worker count and execution order";
#ifdef __VERSION__
    m["compiler"] = __VERSION__;
#endif
    return m;
}

}  // namespace neuron_lab
