#include "attnlab/exp2poly.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <thread>

#include <json.hpp>

#include "attnlab/util.hpp"

namespace attnlab::fastmath {

namespace {

// Certified fp32-pipeline bounds per degree. A fit that misses its bound is
// rejected rather than shipped.
double rel_err_bound(int degree) {
    switch (degree) {
        case 3: return 1.2e-4;
        case 4: return 5.0e-6;
        case 5: return 3.0e-7;
        default: throw std::invalid_argument("fit_minimax: degree must be 3, 4 or 5");
    }
}

// Gaussian elimination with partial pivoting; a is row-major n x n.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
        }
        if (a[piv * n + col] == 0.0) throw FitError("singular exchange system");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
            std::swap(b[piv], b[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
        x[r] = s / a[r * n + r];
    }
    return x;
}

struct ExchangeFit {
    std::vector<double> free_coeffs; // p_1..p_{n_free}
    double level = 0.0;              // signed equioscillation level
    bool converged = false;
};

// Minimax fit of the free leading coefficients p_1..p_{n_free} on relative
// error, with p_{n_free+1}..p_degree held at `fixed_tail` (used while
// rounding coefficients to fp32 one at a time). Weighted linear Remez:
// approximate g(x) = 1 - 2^-x - sum_fixed p_j x^j 2^-x  by
// sum_{i<=n_free} p_i x^i 2^-x  on [0,1].
ExchangeFit remez_exchange(int n_free, const std::vector<double>& fixed_tail) {
    constexpr int kGrid = 262145;
    const int m = n_free + 1; // alternation points

    auto residual_target = [&](double x) {
        double g = 1.0 - std::exp2(-x);
        double xp = std::pow(x, n_free + 1);
        for (std::size_t j = 0; j < fixed_tail.size(); ++j) {
            g -= fixed_tail[j] * xp * std::exp2(-x);
            xp *= x;
        }
        return g;
    };

    std::vector<double> nodes(m);
    for (int k = 0; k < m; ++k) {
        const double t = std::cos(M_PI * k / std::max(1, m - 1));
        nodes[m - 1 - k] = 0.5 * (0.05 + 0.999) + 0.5 * (0.999 - 0.05) * t;
    }

    std::vector<double> p(n_free, 0.0);
    double level = 0.0;
    auto err_at = [&](double x) {
        double acc = 0.0;
        for (int i = n_free; i >= 1; --i) acc = acc * x + p[i - 1];
        acc *= x; // sum_{i=1..n_free} p_i x^i
        double xp = std::pow(x, n_free + 1);
        for (std::size_t j = 0; j < fixed_tail.size(); ++j) {
            acc += fixed_tail[j] * xp;
            xp *= x;
        }
        return (1.0 + acc) * std::exp2(-x) - 1.0;
    };

    for (int iter = 0; iter < 100; ++iter) {
        std::vector<double> a(static_cast<std::size_t>(m) * m), b(m);
        for (int k = 0; k < m; ++k) {
            const double x = nodes[k];
            const double w = std::exp2(-x);
            double xi = x;
            for (int i = 1; i <= n_free; ++i) {
                a[static_cast<std::size_t>(k) * m + (i - 1)] = xi * w;
                xi *= x;
            }
            a[static_cast<std::size_t>(k) * m + n_free] = (k % 2 == 0) ? -1.0 : 1.0;
            b[k] = residual_target(x);
        }
        auto sol = solve_linear(std::move(a), std::move(b));
        std::copy(sol.begin(), sol.begin() + n_free, p.begin());
        level = sol[static_cast<std::size_t>(n_free)];

        // locate alternating extrema of the error on a dense grid
        std::vector<double> e(kGrid);
        for (int i = 0; i < kGrid; ++i) e[i] = err_at(static_cast<double>(i) / (kGrid - 1));
        std::vector<int> extrema;
        for (int i = 0; i < kGrid; ++i) {
            const bool up = (i == 0) || std::fabs(e[i]) >= std::fabs(e[i - 1]);
            const bool down = (i == kGrid - 1) || std::fabs(e[i]) >= std::fabs(e[i + 1]);
            if (up && down && std::fabs(e[i]) > 1e-15) extrema.push_back(i);
        }
        std::vector<int> alt;
        for (int i : extrema) {
            if (!alt.empty() && std::signbit(e[i]) == std::signbit(e[alt.back()])) {
                if (std::fabs(e[i]) > std::fabs(e[alt.back()])) alt.back() = i;
            } else {
                alt.push_back(i);
            }
        }
        if (static_cast<int>(alt.size()) > m) {
            int best = 0;
            double best_amp = -1.0;
            for (std::size_t s = 0; s + m <= alt.size(); ++s) {
                double amp = 1e300;
                for (int j = 0; j < m; ++j) amp = std::min(amp, std::fabs(e[alt[s + j]]));
                if (amp > best_amp) {
                    best_amp = amp;
                    best = static_cast<int>(s);
                }
            }
            alt.assign(alt.begin() + best, alt.begin() + best + m);
        }
        if (static_cast<int>(alt.size()) < m) {
            return {p, level, false};
        }
        std::vector<double> next(m);
        for (int k = 0; k < m; ++k) next[k] = static_cast<double>(alt[k]) / (kGrid - 1);
        double shift = 0.0;
        for (int k = 0; k < m; ++k) shift = std::max(shift, std::fabs(next[k] - nodes[k]));
        nodes = next;
        if (shift < 1e-10) return {p, level, true};
    }
    return {p, level, true};
}

// Weighted least-squares fallback on a dense grid (normal equations are
// well-conditioned enough at degree <= 5 on [0,1]).
std::vector<double> least_squares_fit(int n_free, const std::vector<double>& fixed_tail) {
    constexpr int kGrid = 8193;
    std::vector<double> ata(static_cast<std::size_t>(n_free) * n_free, 0.0), atb(n_free, 0.0);
    for (int g = 0; g <= kGrid; ++g) {
        const double x = static_cast<double>(g) / kGrid;
        const double w = std::exp2(-x);
        double target = 1.0 - w;
        double xp = std::pow(x, n_free + 1);
        for (std::size_t j = 0; j < fixed_tail.size(); ++j) {
            target -= fixed_tail[j] * xp * w;
            xp *= x;
        }
        std::array<double, 8> phi{};
        double xi = x;
        for (int i = 0; i < n_free; ++i) {
            phi[static_cast<std::size_t>(i)] = xi * w;
            xi *= x;
        }
        for (int r = 0; r < n_free; ++r) {
            for (int c = 0; c < n_free; ++c) {
                ata[static_cast<std::size_t>(r) * n_free + c] +=
                    phi[static_cast<std::size_t>(r)] * phi[static_cast<std::size_t>(c)];
            }
            atb[static_cast<std::size_t>(r)] += phi[static_cast<std::size_t>(r)] * target;
        }
    }
    return solve_linear(std::move(ata), std::move(atb));
}

std::vector<double> fit_free_coeffs(int n_free, const std::vector<double>& fixed_tail) {
    if (n_free == 0) return {};
    auto fit = remez_exchange(n_free, fixed_tail);
    if (!fit.converged) {
        return least_squares_fit(n_free, fixed_tail);
    }
    return fit.free_coeffs;
}

double certify(const Poly2x& poly) {
    // dense certification of the full fp32 pipeline against double 2^x
    constexpr int kGrid = 1 << 21;
    double worst = 0.0;
    for (int i = 0; i < kGrid; ++i) {
        const float x = static_cast<float>(i) * (1.0f / kGrid);
        const double r = std::exp2(static_cast<double>(x));
        const double v = static_cast<double>(exp2_emulated(x, poly));
        worst = std::max(worst, std::fabs(v - r) / r);
    }
    // edge of the binade
    for (float x = 1.0f - 0x1.0p-20f; x < 1.0f; x = std::nextafter(x, 2.0f)) {
        const double r = std::exp2(static_cast<double>(x));
        const double v = static_cast<double>(exp2_emulated(x, poly));
        worst = std::max(worst, std::fabs(v - r) / r);
    }
    return worst;
}

} // namespace

Poly2x fit_minimax(int degree) {
    const double bound = rel_err_bound(degree);

    // double-precision minimax first
    std::vector<double> coeffs = fit_free_coeffs(degree, {});

    // round to fp32 highest degree first, refitting what is still free
    std::vector<double> fixed; // p_{i+1}..p_n in ascending power order
    for (int i = degree; i >= 1; --i) {
        const float rounded = static_cast<float>(coeffs[static_cast<std::size_t>(i - 1)]);
        fixed.insert(fixed.begin(), static_cast<double>(rounded));
        coeffs = fit_free_coeffs(i - 1, fixed);
    }

    Poly2x poly;
    poly.degree = degree;
    poly.coeffs.resize(static_cast<std::size_t>(degree) + 1);
    poly.coeffs[0] = 1.0f;
    for (int i = 1; i <= degree; ++i) {
        poly.coeffs[static_cast<std::size_t>(i)] = static_cast<float>(fixed[static_cast<std::size_t>(i - 1)]);
    }

    // Positive coefficients make the FMA Horner chain monotone (rounding a
    // monotone sequence stays monotone), and p(1-) <= 2 keeps the spliced
    // result from overshooting the next binade at integer crossings.
    for (int i = 1; i <= degree; ++i) {
        if (!(poly.coeffs[static_cast<std::size_t>(i)] > 0.0f)) {
            throw FitError("fit produced a non-positive coefficient");
        }
    }
    float edge = poly.coeffs[static_cast<std::size_t>(degree)];
    for (int i = degree - 1; i >= 0; --i) {
        edge = std::fmaf(edge, 1.0f - 0x1.0p-24f, poly.coeffs[static_cast<std::size_t>(i)]);
    }
    if (edge > 2.0f) throw FitError("fit overshoots 2 at the right edge");

    poly.certified_max_rel_err = certify(poly);
    if (poly.certified_max_rel_err > bound) {
        throw FitError("certified error " + std::to_string(poly.certified_max_rel_err) +
                       " exceeds bound for degree " + std::to_string(degree));
    }
    return poly;
}

const char* to_string(AccuracyMethod m) {
    switch (m) {
        case AccuracyMethod::IdealRound: return "ideal-round";
        case AccuracyMethod::HardwareLike: return "hardware-like";
        case AccuracyMethod::PolyDegree3: return "poly-degree-3";
        case AccuracyMethod::PolyDegree4: return "poly-degree-4";
        case AccuracyMethod::PolyDegree5: return "poly-degree-5";
    }
    return "?";
}

AccuracyMethod accuracy_method_from_string(const std::string& s) {
    if (s == "ideal-round") return AccuracyMethod::IdealRound;
    if (s == "hardware-like") return AccuracyMethod::HardwareLike;
    if (s == "poly-degree-3") return AccuracyMethod::PolyDegree3;
    if (s == "poly-degree-4") return AccuracyMethod::PolyDegree4;
    if (s == "poly-degree-5") return AccuracyMethod::PolyDegree5;
    throw std::invalid_argument("unknown accuracy method: " + s);
}

const Poly2x& shared_poly(int degree) {
    if (degree < 3 || degree > 5) throw std::invalid_argument("shared_poly: degree must be 3, 4 or 5");
    static const Poly2x p3 = fit_minimax(3);
    static const Poly2x p4 = fit_minimax(4);
    static const Poly2x p5 = fit_minimax(5);
    switch (degree) {
        case 3: return p3;
        case 4: return p4;
        default: return p5;
    }
}

namespace {

struct SweepPartial {
    double fp32_max = 0.0, fp32_sum = 0.0;
    double bf16_max = 0.0, bf16_sum = 0.0;
    std::int64_t matches = 0;
};

constexpr std::int64_t kChunk = 65536;

SweepPartial sweep_chunk(AccuracyMethod method, std::uint64_t seed, std::int64_t chunk_index,
                         std::int64_t count) {
    Rng rng(chunk_seed(seed, static_cast<std::uint64_t>(chunk_index)));
    SweepPartial out;
    for (std::int64_t i = 0; i < count; ++i) {
        const float x = rng.next_float01();
        const double r = std::exp2(static_cast<double>(x));

        double fp32_val;
        Bf16 b;
        switch (method) {
            case AccuracyMethod::IdealRound:
                fp32_val = r; // no fp32 stage
                b = double_to_bf16(r);
                break;
            case AccuracyMethod::HardwareLike: {
                const float f = exp2_reference(x);
                fp32_val = static_cast<double>(f);
                b = float_to_bf16(f);
                break;
            }
            default: {
                const int deg = method == AccuracyMethod::PolyDegree3   ? 3
                                : method == AccuracyMethod::PolyDegree4 ? 4
                                                                        : 5;
                const float f = exp2_emulated(x, shared_poly(deg));
                fp32_val = static_cast<double>(f);
                b = float_to_bf16(f);
                break;
            }
        }
        const double fe = std::fabs(fp32_val - r) / r;
        const double be = std::fabs(static_cast<double>(bf16_to_float(b)) - r) / r;
        out.fp32_max = std::max(out.fp32_max, fe);
        out.fp32_sum += fe;
        out.bf16_max = std::max(out.bf16_max, be);
        out.bf16_sum += be;

        const Bf16 ref = float_to_bf16(exp2_reference(x));
        const int dist = std::abs(static_cast<int>(b.bits) - static_cast<int>(ref.bits));
        if (dist <= 1) ++out.matches;
    }
    return out;
}

} // namespace

AccuracyReport accuracy_sweep(AccuracyMethod method, std::int64_t n_samples,
                              std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("accuracy_sweep: n_samples must be >= 1");
    if (method == AccuracyMethod::PolyDegree3 || method == AccuracyMethod::PolyDegree4 ||
        method == AccuracyMethod::PolyDegree5) {
        shared_poly(3); // force fits before the worker threads start
        shared_poly(4);
        shared_poly(5);
    }

    const std::int64_t n_chunks = ceil_div(n_samples, kChunk);
    std::vector<SweepPartial> partials(static_cast<std::size_t>(n_chunks));
    std::atomic<std::int64_t> next{0};
    const unsigned n_threads =
        std::min<unsigned>(std::thread::hardware_concurrency() > 0
                               ? std::thread::hardware_concurrency()
                               : 1,
                           static_cast<unsigned>(n_chunks));
    auto worker = [&] {
        for (;;) {
            const std::int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            const std::int64_t count = std::min(kChunk, n_samples - c * kChunk);
            partials[static_cast<std::size_t>(c)] = sweep_chunk(method, seed, c, count);
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // combine in chunk order: identical result for any thread count
    AccuracyReport rep;
    rep.method = method;
    rep.n_samples = n_samples;
    double fp32_sum = 0.0, bf16_sum = 0.0;
    std::int64_t matches = 0;
    for (const auto& p : partials) {
        rep.fp32_max_rel = std::max(rep.fp32_max_rel, p.fp32_max);
        rep.bf16_max_rel = std::max(rep.bf16_max_rel, p.bf16_max);
        fp32_sum += p.fp32_sum;
        bf16_sum += p.bf16_sum;
        matches += p.matches;
    }
    rep.fp32_mean_rel = fp32_sum / static_cast<double>(n_samples);
    rep.bf16_mean_rel = bf16_sum / static_cast<double>(n_samples);
    rep.ulp_match_fraction = static_cast<double>(matches) / static_cast<double>(n_samples);
    return rep;
}

std::string poly_to_json(const Poly2x& poly) {
    nlohmann::json j;
    j["degree"] = poly.degree;
    j["coeffs"] = poly.coeffs;
    j["certified_max_rel_err"] = poly.certified_max_rel_err;
    return j.dump(2);
}

Poly2x poly_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Poly2x poly;
    poly.degree = j.at("degree").get<int>();
    poly.coeffs = j.at("coeffs").get<std::vector<float>>();
    poly.certified_max_rel_err = j.at("certified_max_rel_err").get<double>();
    if (poly.degree < 3 || poly.degree > 5) throw std::invalid_argument("poly degree out of range");
    if (poly.coeffs.size() != static_cast<std::size_t>(poly.degree) + 1) {
        throw std::invalid_argument("poly coefficient count does not match degree");
    }
    if (poly.coeffs[0] != 1.0f) throw std::invalid_argument("poly constant term must be 1");
    return poly;
}

std::string accuracy_csv_header() {
    return "method,fp32_max_rel,fp32_mean_rel,bf16_max_rel,bf16_mean_rel,n_samples,"
           "ulp_match_fraction";
}

std::string accuracy_csv_row(const AccuracyReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.9e,%.9e,%.9e,%.9e,%lld,%.6f", to_string(r.method),
                  r.fp32_max_rel, r.fp32_mean_rel, r.bf16_max_rel, r.bf16_mean_rel,
                  static_cast<long long>(r.n_samples), r.ulp_match_fraction);
    return buf;
}

} // namespace attnlab::fastmath
