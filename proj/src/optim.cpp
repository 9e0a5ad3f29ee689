#include "fedinv/optim.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <deque>

namespace fedinv {

const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::converged: return "converged";
        case StopReason::max_iterations: return "max_iterations";
        case StopReason::line_search_failed: return "line_search_failed";
        case StopReason::early_stop: return "early_stop";
    }
    return "?";
}

namespace {

using Vec = Eigen::VectorXd;

struct Packer {
    std::vector<Shape> shapes;
    std::vector<std::int64_t> sizes;
    std::int64_t total = 0;

    explicit Packer(const std::vector<Tensor>& ts) {
        for (const Tensor& t : ts) {
            shapes.push_back(t.shape());
            sizes.push_back(t.size());
            total += t.size();
        }
    }

    Vec flatten(const std::vector<Tensor>& ts) const {
        Vec v(total);
        std::int64_t off = 0;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const auto& d = ts[i].data();
            std::copy(d.begin(), d.end(), v.data() + off);
            off += sizes[i];
        }
        return v;
    }

    std::vector<Tensor> unflatten(const Vec& v) const {
        std::vector<Tensor> ts;
        ts.reserve(shapes.size());
        std::int64_t off = 0;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            std::vector<double> d(v.data() + off, v.data() + off + sizes[i]);
            ts.emplace_back(shapes[i], std::move(d));
            off += sizes[i];
        }
        return ts;
    }
};

struct Eval {
    double f;
    Vec g;
};

class FlatObjective {
public:
    FlatObjective(const Objective& fn, const Packer& packer) : fn_(fn), packer_(packer) {}

    // Non-finite objective anywhere in the evaluation surfaces as f = +inf so
    // a line search can back off. The caller decides whether that is fatal.
    Eval operator()(const Vec& x) const {
        std::vector<Tensor> ts = packer_.unflatten(x);
        std::pair<double, std::vector<Tensor>> r;
        try {
            r = fn_(ts);
        } catch (const NonFiniteError&) {
            return Eval{std::numeric_limits<double>::infinity(), Vec::Zero(packer_.total)};
        }
        if (!std::isfinite(r.first))
            return Eval{std::numeric_limits<double>::infinity(), Vec::Zero(packer_.total)};
        if (r.second.size() != packer_.shapes.size())
            throw Error("objective returned " + std::to_string(r.second.size()) +
                        " gradients for " + std::to_string(packer_.shapes.size()) + " tensors");
        for (std::size_t i = 0; i < r.second.size(); ++i)
            if (r.second[i].shape() != packer_.shapes[i])
                throw ShapeError("objective gradient " + std::to_string(i) +
                                 " has shape " + shape_str(r.second[i].shape()) + ", expected " +
                                 shape_str(packer_.shapes[i]));
        return Eval{r.first, packer_.flatten(r.second)};
    }

private:
    const Objective& fn_;
    const Packer& packer_;
};

struct LinePoint {
    double alpha;
    double phi;
    double dphi;
    Eval eval;
};

struct SearchResult {
    bool ok = false;
    LinePoint accepted{};
    int evals = 0;
};

// Strong-Wolfe line search (bracket + zoom). Derivative information is
// available at every trial point, so zoom interpolates with a secant on
// phi'; on a quadratic objective this lands on the exact minimizer.
class WolfeSearch {
public:
    WolfeSearch(const FlatObjective& obj, const Vec& x, const Vec& d, double f0, double dphi0,
                const LbfgsConfig& cfg)
        : obj_(obj), x_(x), d_(d), f0_(f0), dphi0_(dphi0), cfg_(cfg) {}

    SearchResult run(double alpha_init) {
        SearchResult out;
        LinePoint prev{0.0, f0_, dphi0_, {}};
        double alpha = alpha_init;
        for (int i = 0; i < cfg_.max_line_search_steps; ++i) {
            LinePoint cur = probe(alpha);
            ++out.evals;
            if (cur.phi > f0_ + cfg_.c1 * cur.alpha * dphi0_ || (i > 0 && cur.phi >= prev.phi)) {
                return zoom(prev, cur, out);
            }
            if (std::fabs(cur.dphi) <= -cfg_.c2 * dphi0_) {
                out.ok = true;
                out.accepted = cur;
                return out;
            }
            if (cur.dphi >= 0.0) {
                return zoom(cur, prev, out);
            }
            prev = cur;
            alpha = std::min(2.0 * alpha, 1e12);
        }
        return out;
    }

private:
    LinePoint probe(double alpha) {
        Eval e = obj_(x_ + alpha * d_);
        double dphi = std::isfinite(e.f) ? e.g.dot(d_) : std::numeric_limits<double>::quiet_NaN();
        return LinePoint{alpha, e.f, dphi, std::move(e)};
    }

    // lo always satisfies sufficient decrease with phi(lo) the lowest seen.
    SearchResult zoom(LinePoint lo, LinePoint hi, SearchResult out) {
        while (out.evals < cfg_.max_line_search_steps) {
            double span = hi.alpha - lo.alpha;
            if (std::fabs(span) < 1e-16 * std::max(1.0, std::fabs(lo.alpha))) break;
            double alpha;
            if (std::isfinite(hi.dphi) && hi.dphi != lo.dphi) {
                alpha = hi.alpha - hi.dphi * (hi.alpha - lo.alpha) / (hi.dphi - lo.dphi);
            } else {
                alpha = lo.alpha + 0.5 * span;
            }
            // keep the trial strictly interior
            double a = std::min(lo.alpha, hi.alpha), b = std::max(lo.alpha, hi.alpha);
            double margin = 0.05 * (b - a);
            if (!(alpha > a + margin && alpha < b - margin)) alpha = lo.alpha + 0.5 * span;

            LinePoint cur = probe(alpha);
            ++out.evals;
            if (cur.phi > f0_ + cfg_.c1 * cur.alpha * dphi0_ || cur.phi >= lo.phi) {
                hi = cur;
                continue;
            }
            if (std::fabs(cur.dphi) <= -cfg_.c2 * dphi0_) {
                out.ok = true;
                out.accepted = cur;
                return out;
            }
            if (cur.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
            lo = cur;
        }
        return out;
    }

    const FlatObjective& obj_;
    const Vec& x_;
    const Vec& d_;
    double f0_;
    double dphi0_;
    const LbfgsConfig& cfg_;
};

}  // namespace

MinimizeResult lbfgs_minimize(const Objective& objective, std::vector<Tensor> x0,
                              const LbfgsConfig& config, const IterationCallback& callback) {
    if (x0.empty()) throw Error("lbfgs_minimize: empty variable list");
    if (config.history < 1) throw Error("lbfgs_minimize: history must be positive");
    Packer packer(x0);
    FlatObjective obj(objective, packer);

    Vec x = packer.flatten(x0);
    Eval cur = obj(x);
    if (!std::isfinite(cur.f))
        throw NonFiniteError("lbfgs_minimize: objective is non-finite at the initial point");

    MinimizeResult res;
    res.trace.push_back(cur.f);
    if (callback) callback(0, cur.f, packer.unflatten(x));

    std::deque<Vec> s_hist, y_hist;
    std::deque<double> rho_hist;

    auto finish = [&](StopReason reason) {
        res.reason = reason;
        res.x = packer.unflatten(x);
        res.final_objective = res.trace.back();
        return res;
    };

    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        if (cur.g.norm() <= config.grad_tolerance) return finish(StopReason::converged);
        if (cur.f < config.stop_below) return finish(StopReason::early_stop);

        // two-loop recursion
        Vec d = -cur.g;
        std::vector<double> alpha_corr(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha_corr[k] = rho_hist[k] * s_hist[k].dot(d);
            d -= alpha_corr[k] * y_hist[k];
        }
        if (!s_hist.empty()) {
            double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            d *= gamma;
        }
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            double beta = rho_hist[k] * y_hist[k].dot(d);
            d += (alpha_corr[k] - beta) * s_hist[k];
        }

        double dphi0 = cur.g.dot(d);
        if (dphi0 >= 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -cur.g;
            dphi0 = cur.g.dot(d);
        }

        double alpha_init =
            iter == 1 ? std::min(1.0, 1.0 / std::max(1e-12, cur.g.lpNorm<1>())) : 1.0;
        WolfeSearch search(obj, x, d, cur.f, dphi0, config);
        SearchResult sr = search.run(alpha_init);
        if (!sr.ok) return finish(StopReason::line_search_failed);

        Vec step = sr.accepted.alpha * d;
        Vec y = sr.accepted.eval.g - cur.g;
        x += step;
        double ys = y.dot(step);
        if (ys > 1e-10) {
            s_hist.push_back(step);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / ys);
            if (static_cast<int>(s_hist.size()) > config.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        res.steps.push_back(StepInfo{sr.accepted.alpha, cur.f, dphi0, sr.accepted.phi,
                                     sr.accepted.dphi});
        cur.f = sr.accepted.phi;
        cur.g = sr.accepted.eval.g;
        res.trace.push_back(cur.f);
        res.iterations = iter;
        if (callback) callback(iter, cur.f, packer.unflatten(x));
    }
    if (cur.g.norm() <= config.grad_tolerance) return finish(StopReason::converged);
    if (cur.f < config.stop_below) return finish(StopReason::early_stop);
    return finish(StopReason::max_iterations);
}

MinimizeResult adam_minimize(const Objective& objective, std::vector<Tensor> x0,
                             const AdamConfig& config, const IterationCallback& callback) {
    if (x0.empty()) throw Error("adam_minimize: empty variable list");
    Packer packer(x0);
    FlatObjective obj(objective, packer);

    Vec x = packer.flatten(x0);
    Vec m = Vec::Zero(packer.total);
    Vec v = Vec::Zero(packer.total);

    Eval cur = obj(x);
    if (!std::isfinite(cur.f))
        throw NonFiniteError("adam_minimize: objective is non-finite at the initial point");

    MinimizeResult res;
    res.trace.push_back(cur.f);
    if (callback) callback(0, cur.f, packer.unflatten(x));

    auto finish = [&](StopReason reason) {
        res.reason = reason;
        res.x = packer.unflatten(x);
        res.final_objective = res.trace.back();
        return res;
    };

    double b1t = 1.0, b2t = 1.0;
    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        if (config.grad_tolerance > 0.0 && cur.g.norm() <= config.grad_tolerance)
            return finish(StopReason::converged);
        if (cur.f < config.stop_below) return finish(StopReason::early_stop);

        b1t *= config.beta1;
        b2t *= config.beta2;
        m = config.beta1 * m + (1.0 - config.beta1) * cur.g;
        v = config.beta2 * v + (1.0 - config.beta2) * cur.g.cwiseProduct(cur.g);
        Vec mhat = m / (1.0 - b1t);
        Vec vhat = v / (1.0 - b2t);
        Vec x_prev = x;
        x -= config.learning_rate *
             (mhat.array() / (vhat.array().sqrt() + config.epsilon)).matrix();

        Eval next = obj(x);
        if (!std::isfinite(next.f)) {
            // step into a non-finite region: back off and stop
            x = x_prev;
            return finish(StopReason::line_search_failed);
        }
        cur = next;
        res.trace.push_back(cur.f);
        res.iterations = iter;
        if (callback) callback(iter, cur.f, packer.unflatten(x));
    }
    if (config.grad_tolerance > 0.0 && cur.g.norm() <= config.grad_tolerance)
        return finish(StopReason::converged);
    if (cur.f < config.stop_below) return finish(StopReason::early_stop);
    return finish(StopReason::max_iterations);
}

}  // namespace fedinv
