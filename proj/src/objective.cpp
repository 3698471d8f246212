#include "neuron_lab/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "neuron_lab/parallel.hpp"

namespace neuron_lab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_dims(const Vec& w, const Vec& v, const InputDistribution& dist) {
    const Eigen::Index want = dist.dim + 1;
    if (w.size() != want || v.size() != want)
        throw std::invalid_argument("objective: parameter length must be dim + 1 = " +
                                    std::to_string(want));
    if (!w.allFinite() || !v.allFinite())
        throw std::domain_error("objective: non-finite parameters");
}

// ---------------------------------------------------------------- quadrature

// Orthonormal frame of the plane spanned by w_tilde and v_tilde. In it
// w.x = nw * s + bw and v.x = vs * s + vt * t + bv with vt >= 0.
struct PlaneFrame {
    Vec e1, e2;
    double nw = 0.0, bw = 0.0;
    double vs = 0.0, vt = 0.0, bv = 0.0;
    double nv = 0.0;
};

Vec orthogonal_unit(const Vec& e1) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < e1.size(); ++i)
        if (std::abs(e1(i)) < std::abs(e1(best))) best = i;
    Vec u = unit(e1.size(), best) - e1(best) * e1;
    return u / u.norm();
}

PlaneFrame make_frame(const Vec& w, const Vec& v) {
    PlaneFrame f;
    const Eigen::Index d = ambient_dim(w);
    const Vec wt = tilde(w);
    const Vec vtil = tilde(v);
    f.nw = wt.norm();
    f.bw = bias(w);
    f.bv = bias(v);
    f.nv = vtil.norm();
    if (f.nw > 0.0) {
        f.e1 = wt / f.nw;
    } else if (f.nv > 0.0) {
        f.e1 = vtil / f.nv;
    } else {
        f.e1 = unit(d, 0);
    }
    f.vs = vtil.dot(f.e1);
    Vec rest = vtil - f.vs * f.e1;
    const double rn = rest.norm();
    if (rn > 1e-15 * f.nv) {
        f.vt = rn;
        f.e2 = rest / rn;
    } else {
        f.vt = 0.0;
        f.e2 = orthogonal_unit(f.e1);
    }
    return f;
}

struct QuadParts {
    double loss_minus_f0, f0, joint, cross, sigma_w_sq;
    double gs, gt, gb;
};

QuadParts quad_core(const PlaneFrame& f, const PlanarModel& model, double sigma0,
                    bool skip_overlap) {
    QuadParts q{};
    // One-dimensional moments of sigma(w.x) along e1.
    double I1 = 0.0, I2 = 0.0, J1 = 0.0, aw = 0.0;
    if (f.nw > 0.0) {
        aw = -f.bw / f.nw;
        const auto U = model.tail_moments(aw);
        I1 = f.nw * U[1];
        I2 = f.nw * f.nw * U[2];
        J1 = f.nw * (U[2] + aw * U[1]);
    } else if (f.bw > 0.0) {
        I1 = f.bw;
        I2 = f.bw * f.bw;
    }

    // F(0) and target moments along the direction of v_tilde.
    double ev = 0.0, evu = 0.0, pv = 0.0;
    if (f.nv > 0.0) {
        const double av = -f.bv / f.nv;
        const auto U = model.tail_moments(av);
        q.f0 = 0.5 * f.nv * f.nv * U[2];
        ev = f.nv * U[1];
        evu = f.nv * (U[2] + av * U[1]);
        pv = U[0];
    } else {
        q.f0 = 0.5 * std::max(f.bv, 0.0) * std::max(f.bv, 0.0);
        ev = std::max(f.bv, 0.0);
        pv = f.bv >= 0.0 ? 1.0 : 0.0;
    }

    // Overlap region {w.x > 0, v.x > 0}; moments are taken about s = aw so
    // that w.x = nw * (s - aw) carries no cancellation.
    double K0 = 0.0, Kv = 0.0, Kvs = 0.0, Kvt = 0.0, Kc = 0.0;
    const HalfPlane vplane{f.vs, f.vt, f.bv};
    if (skip_overlap) {
    } else if (f.nw > 0.0) {
        const CellMoments C = integrate_cell(model, aw, kInf, vplane, aw);
        const double cb = f.bv + f.vs * aw;
        K0 = C[0][0];
        Kv = f.vs * C[1][0] + f.vt * C[0][1] + cb * C[0][0];
        const double Kvx = f.vs * C[2][0] + f.vt * C[1][1] + cb * C[1][0];
        Kvs = Kvx + aw * Kv;
        Kvt = f.vs * C[1][1] + f.vt * C[0][2] + cb * C[0][1];
        Kc = f.nw * Kvx;
    } else if (f.bw > 0.0) {
        const CellMoments C = integrate_cell(model, -kInf, kInf, vplane, 0.0);
        K0 = C[0][0];
        Kv = f.vs * C[1][0] + f.vt * C[0][1] + f.bv * C[0][0];
        Kvs = f.vs * C[2][0] + f.vt * C[1][1] + f.bv * C[1][0];
        Kvt = f.vs * C[1][1] + f.vt * C[0][2] + f.bv * C[0][1];
        Kc = f.bw * Kv;
    }

    q.gb = I1 - Kv;
    q.gs = J1 - Kvs;
    q.gt = -Kvt;
    q.loss_minus_f0 = 0.5 * I2 - Kc;
    q.cross = Kc;
    q.sigma_w_sq = I2;
    q.joint = K0;

    const bool w_zero = f.nw == 0.0 && f.bw == 0.0;
    const bool v_zero = f.nv == 0.0 && f.bv == 0.0;
    if (w_zero) {
        // w.x = 0 everywhere: the indicator takes the value sigma'(0) and the
        // event {w.x >= 0} is the whole space. Here e1 is the direction of v.
        q.gb = -sigma0 * ev;
        q.gs = -sigma0 * evu;
        q.gt = 0.0;
        q.joint = pv;
    } else if (v_zero) {
        q.joint = f.nw > 0.0 ? model.tail_moments(aw)[0] : (f.bw >= 0.0 ? 1.0 : 0.0);
    }
    return q;
}

Evaluation quad_evaluate(const Vec& w, const Vec& v, const InputDistribution& dist,
                         const QuadratureMethod& m, double sigma0) {
    const PlaneFrame f = make_frame(w, v);
    auto model = make_planar_model(dist, m.grid);
    // The overlap moments vanish exactly when the active regions are disjoint.
    const bool skip = overlap_empty(w, v, dist);
    const QuadParts q = quad_core(f, *model, sigma0, skip);

    Evaluation e;
    e.f0 = q.f0;
    e.loss_minus_f0 = q.loss_minus_f0;
    e.loss = std::max(0.0, q.f0 + q.loss_minus_f0);
    e.joint_prob = std::clamp(q.joint, 0.0, 1.0);
    e.cross = q.cross;
    e.sigma_w_sq = q.sigma_w_sq;
    const Eigen::Index d = dist.dim;
    e.grad = Vec::Zero(d + 1);
    e.grad.head(d) = q.gs * f.e1 + q.gt * f.e2;
    e.grad(d) = q.gb;
    if (w == v) {
        // Global minimum: the residual vanishes identically.
        e.grad.setZero();
        e.loss = 0.0;
        e.loss_minus_f0 = -q.f0;
    }

    if (m.estimate_error) {
        QuadratureGrid fine = m.grid;
        fine.nodes *= 2;
        auto fine_model = make_planar_model(dist, fine);
        const QuadParts r = quad_core(f, *fine_model, sigma0, skip);
        const double vals[] = {q.loss_minus_f0 - r.loss_minus_f0, q.f0 - r.f0, q.gs - r.gs,
                               q.gt - r.gt, q.gb - r.gb, q.joint - r.joint};
        double err = 0.0;
        for (double x : vals) err = std::max(err, std::abs(x));
        // Rounding floor relative to the size of the accumulated terms.
        const double mag = std::abs(q.f0) + std::abs(q.sigma_w_sq) + std::abs(q.cross) +
                           std::abs(q.gs) + std::abs(q.gt) + std::abs(q.gb) + 1.0;
        e.error_estimate = err + 64.0 * std::numeric_limits<double>::epsilon() * mag;
    }
    return e;
}

// --------------------------------------------------------------- Monte Carlo

struct McSums {
    Vec g, g2;
    double loss = 0.0, loss2 = 0.0, lmf = 0.0, f0 = 0.0, cross = 0.0, sws = 0.0;
    std::size_t joint = 0;
};

void accumulate(const double* x, std::size_t count, int d1, const Vec& w, const Vec& v,
                double sigma0, McSums& acc) {
    for (std::size_t i = 0; i < count; ++i) {
        const double* row = x + i * d1;
        double zw = 0.0, zv = 0.0;
        for (int k = 0; k < d1; ++k) {
            zw += w(k) * row[k];
            zv += v(k) * row[k];
        }
        const double sw = zw > 0.0 ? zw : 0.0;
        const double sv = zv > 0.0 ? zv : 0.0;
        const double ind = zw > 0.0 ? 1.0 : (zw == 0.0 ? sigma0 : 0.0);
        const double res = sw - sv;
        const double r = res * ind;
        if (r != 0.0) {
            for (int k = 0; k < d1; ++k) {
                const double gk = r * row[k];
                acc.g(k) += gk;
                acc.g2(k) += gk * gk;
            }
        }
        const double l = 0.5 * res * res;
        acc.loss += l;
        acc.loss2 += l * l;
        acc.lmf += 0.5 * sw * sw - sw * sv;
        acc.f0 += 0.5 * sv * sv;
        acc.cross += sw * sv;
        acc.sws += sw * sw;
        if (zw >= 0.0 && zv >= 0.0) ++acc.joint;
    }
}

struct CacheKey {
    int kind, dim;
    double radius, q, depth;
    std::size_t n;
    std::uint64_t seed;
    bool operator<(const CacheKey& o) const {
        return std::tie(kind, dim, radius, q, depth, n, seed) <
               std::tie(o.kind, o.dim, o.radius, o.q, o.depth, o.n, o.seed);
    }
};

std::mutex g_cache_mu;
std::map<CacheKey, std::shared_ptr<const SampleMatrix>> g_cache;
constexpr std::size_t kCacheLimitDoubles = std::size_t{1} << 23;  // per entry
constexpr std::size_t kCacheEntries = 4;

std::shared_ptr<const SampleMatrix> cached_samples(const InputDistribution& dist, std::size_t n,
                                                   std::uint64_t seed) {
    if (n * static_cast<std::size_t>(dist.dim + 1) > kCacheLimitDoubles) return nullptr;
    const CacheKey key{static_cast<int>(dist.kind), dist.dim, dist.radius, dist.cap_fraction,
                       dist.cap_depth, n, seed};
    {
        std::lock_guard<std::mutex> lock(g_cache_mu);
        auto it = g_cache.find(key);
        if (it != g_cache.end()) return it->second;
    }
    auto x = std::make_shared<const SampleMatrix>(sample(dist, n, seed));
    std::lock_guard<std::mutex> lock(g_cache_mu);
    if (g_cache.size() >= kCacheEntries) g_cache.erase(g_cache.begin());
    g_cache.emplace(key, x);
    return x;
}

Evaluation mc_evaluate(const Vec& w, const Vec& v, const InputDistribution& dist,
                       const MonteCarloMethod& m, double sigma0) {
    const int d1 = dist.dim + 1;
    std::uint64_t seed = m.seed;
    if (!m.common_random_numbers) {
        seed = fnv1a(w.data(), sizeof(double) * w.size(), seed ^ stream::mc_unpaired);
        seed = fnv1a(v.data(), sizeof(double) * v.size(), seed);
    }
    const std::size_t n = m.n_samples;
    const std::size_t n_chunks = (n + kSampleChunk - 1) / kSampleChunk;
    auto cached = m.common_random_numbers ? cached_samples(dist, n, seed) : nullptr;

    std::vector<McSums> parts(n_chunks);
    parallel_for(n_chunks, [&](std::size_t j) {
        McSums& acc = parts[j];
        acc.g = Vec::Zero(d1);
        acc.g2 = Vec::Zero(d1);
        const std::size_t begin = j * kSampleChunk;
        const std::size_t count = std::min(kSampleChunk, n - begin);
        if (cached) {
            accumulate(cached->data() + begin * d1, count, d1, w, v, sigma0, acc);
        } else {
            std::vector<double> buf(count * d1);
            sample_chunk(dist, seed, j, count, buf.data());
            accumulate(buf.data(), count, d1, w, v, sigma0, acc);
        }
    });

    McSums tot;
    tot.g = Vec::Zero(d1);
    tot.g2 = Vec::Zero(d1);
    for (const auto& p : parts) {
        tot.g += p.g;
        tot.g2 += p.g2;
        tot.loss += p.loss;
        tot.loss2 += p.loss2;
        tot.lmf += p.lmf;
        tot.f0 += p.f0;
        tot.cross += p.cross;
        tot.sws += p.sws;
        tot.joint += p.joint;
    }
    const double nn = static_cast<double>(n);
    Evaluation e;
    e.loss = tot.loss / nn;
    e.f0 = tot.f0 / nn;
    e.loss_minus_f0 = tot.lmf / nn;
    e.joint_prob = static_cast<double>(tot.joint) / nn;
    e.cross = tot.cross / nn;
    e.sigma_w_sq = tot.sws / nn;
    e.grad = tot.g / nn;
    Vec var = (tot.g2 / nn - e.grad.cwiseProduct(e.grad)).cwiseMax(0.0);
    e.grad_se = (var / nn).cwiseSqrt();
    e.loss_se = std::sqrt(std::max(0.0, tot.loss2 / nn - e.loss * e.loss) / nn);
    return e;
}

// ------------------------------------------------------------ finite diffs

Evaluation evaluate_impl(const Vec& w, const Vec& v, const InputDistribution& dist,
                         const GradientEngine& engine);

Evaluation fd_evaluate(const Vec& w, const Vec& v, const InputDistribution& dist,
                       const FiniteDiffMethod& m) {
    GradientEngine base = *m.base;
    if (auto* mc = std::get_if<MonteCarloMethod>(&base.method)) mc->common_random_numbers = true;
    Evaluation e = evaluate_impl(w, v, dist, base);
    e.grad_se.reset();
    const double h = m.step;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        Vec wp = w, wm = w;
        wp(i) += h;
        wm(i) -= h;
        const double fp = evaluate_impl(wp, v, dist, base).loss_minus_f0;
        const double fm = evaluate_impl(wm, v, dist, base).loss_minus_f0;
        e.grad(i) = (fp - fm) / (2.0 * h);
    }
    return e;
}

Evaluation evaluate_impl(const Vec& w, const Vec& v, const InputDistribution& dist,
                         const GradientEngine& engine) {
    const double s0 = engine.relu_deriv_at_zero;
    if (auto* mc = std::get_if<MonteCarloMethod>(&engine.method)) return mc_evaluate(w, v, dist, *mc, s0);
    if (auto* q = std::get_if<QuadratureMethod>(&engine.method)) return quad_evaluate(w, v, dist, *q, s0);
    return fd_evaluate(w, v, dist, std::get<FiniteDiffMethod>(engine.method));
}

}  // namespace

GradientEngine GradientEngine::monte_carlo(std::size_t n, std::uint64_t seed, bool crn) {
    GradientEngine e;
    e.method = MonteCarloMethod{n, seed, crn};
    return e;
}

GradientEngine GradientEngine::quadrature(QuadratureGrid grid, bool estimate_error) {
    GradientEngine e;
    e.method = QuadratureMethod{grid, estimate_error};
    return e;
}

GradientEngine GradientEngine::finite_diff(const GradientEngine& base, double step) {
    GradientEngine e;
    e.method = FiniteDiffMethod{std::make_shared<const GradientEngine>(base), step};
    e.relu_deriv_at_zero = base.relu_deriv_at_zero;
    return e;
}

void GradientEngine::validate(const InputDistribution& dist) const {
    if (!(relu_deriv_at_zero >= 0.0 && relu_deriv_at_zero <= 1.0))
        throw std::invalid_argument("engine: relu_deriv_at_zero must lie in [0, 1]");
    if (auto* mc = std::get_if<MonteCarloMethod>(&method)) {
        if (mc->n_samples < 1) throw std::invalid_argument("engine: n_samples must be >= 1");
    } else if (auto* q = std::get_if<QuadratureMethod>(&method)) {
        if (!dist.spherically_symmetric())
            throw std::invalid_argument("engine: quadrature needs a spherically symmetric distribution");
        if (dist.dim < 2) throw std::invalid_argument("engine: quadrature needs dim >= 2");
        if (q->grid.nodes < 2 || q->grid.nodes > 256 || !(q->grid.panel_width > 0.0))
            throw std::invalid_argument("engine: quadrature grid out of range");
    } else {
        const auto& fd = std::get<FiniteDiffMethod>(method);
        if (!fd.base) throw std::invalid_argument("engine: finite-difference base engine missing");
        if (!(fd.step > 0.0)) throw std::invalid_argument("engine: finite-difference step must be positive");
        if (std::holds_alternative<FiniteDiffMethod>(fd.base->method))
            throw std::invalid_argument("engine: nested finite differences are not supported");
        fd.base->validate(dist);
    }
}

std::string GradientEngine::name() const {
    if (std::holds_alternative<MonteCarloMethod>(method)) return "monte_carlo";
    if (std::holds_alternative<QuadratureMethod>(method)) return "quadrature";
    return "finite_diff";
}

Evaluation evaluate(const Vec& w, const Vec& v, const InputDistribution& dist,
                    const GradientEngine& engine) {
    check_dims(w, v, dist);
    engine.validate(dist);
    Evaluation e = evaluate_impl(w, v, dist, engine);
    if (!e.grad.allFinite() || !std::isfinite(e.loss))
        throw std::domain_error("objective: non-finite result");
    return e;
}

double loss(const Vec& w, const Vec& v, const InputDistribution& dist, const GradientEngine& engine) {
    return evaluate(w, v, dist, engine).loss;
}

LossGradResult gradient(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine) {
    Evaluation e = evaluate(w, v, dist, engine);
    return LossGradResult{e.loss, e.grad, e.grad_se};
}

double joint_positive_prob(const Vec& w, const Vec& v, const InputDistribution& dist,
                           const GradientEngine& engine) {
    return evaluate(w, v, dist, engine).joint_prob;
}

double correlation_term(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine) {
    const double n = w.norm();
    if (n == 0.0) throw std::invalid_argument("correlation_term: w must be nonzero");
    // sigma is positively homogeneous, so E[sigma(w.x) sigma(v.x)] / ||w||.
    return evaluate(w, v, dist, engine).cross / n;
}

double loss_at_origin(const Vec& v, const InputDistribution& dist, const GradientEngine& engine) {
    return evaluate(Vec::Zero(v.size()), v, dist, engine).f0;
}

bool is_dead(const Vec& w, const InputDistribution& dist) {
    const double nw = tilde(w).norm();
    const double b = bias(w);
    if (nw == 0.0) return b < 0.0;
    return -b >= dist.effective_radius() * nw;
}

bool overlap_empty(const Vec& w, const Vec& v, const InputDistribution& dist) {
    if (!dist.bounded()) return false;
    const double R = *dist.support_radius();
    const PlaneFrame f = make_frame(w, v);
    // Largest value of v.x over the support part where w.x >= 0.
    double best;
    if (f.nw > 0.0) {
        const double aw = -f.bw / f.nw;
        if (aw >= R) return true;
        const double vn = std::hypot(f.vs, f.vt);
        if (vn == 0.0) {
            best = f.bv;
        } else if (R * f.vs / vn >= aw) {
            best = R * vn + f.bv;
        } else {
            const double T = std::sqrt(std::max(0.0, R * R - aw * aw));
            best = f.vs * aw + f.vt * T + f.bv;
        }
    } else if (f.bw > 0.0 || f.bw == 0.0) {
        best = R * f.nv + f.bv;
    } else {
        return true;
    }
    return best <= 0.0;
}

void clear_sample_cache() {
    std::lock_guard<std::mutex> lock(g_cache_mu);
    g_cache.clear();
}

}  // namespace neuron_lab
