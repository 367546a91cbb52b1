#include "sdcore/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sdcore/parser.hpp"

namespace sd {

namespace {

constexpr double kLogFloor = 1e-6;
constexpr double kSpreadTol = 1e-10;
constexpr int kMaxIterations = 2000;

double scale_value(LossScale scale, double v) {
    if (scale == LossScale::Log) return std::log(std::max(v, kLogFloor));
    return v;
}

long grid_index(const SimSpec& spec, double t) {
    double raw = (t - spec.t_start) / (spec.dt * spec.output_stride);
    double rounded = std::round(raw);
    if (std::abs(raw - rounded) > 1e-9) return -1;
    return static_cast<long>(rounded);
}

}  // namespace

void validate_problem(const CalibrationProblem& problem) {
    problem.spec.step_count();
    for (const auto& fp : problem.free) {
        const Variable* v = problem.model.find(fp.id);
        if (!v || v->kind != VarKind::Constant)
            throw std::invalid_argument("free parameter '" + fp.id + "' is not a constant");
        if (!std::isfinite(fp.lower) || !std::isfinite(fp.upper) || !(fp.lower < fp.upper))
            throw std::invalid_argument("free parameter '" + fp.id + "' has malformed bounds");
        if (fp.guess < fp.lower || fp.guess > fp.upper)
            throw std::invalid_argument("free parameter '" + fp.id + "' guess is out of bounds");
    }
    for (const auto& t : problem.targets) {
        if (!problem.model.find(t.variable))
            throw std::invalid_argument("target variable '" + t.variable + "' does not exist");
        for (const auto& s : t.samples) {
            if (grid_index(problem.spec, s.t) < 0)
                throw std::invalid_argument("target sample time " + format_double(s.t) +
                                            " is off the output grid");
            if (s.weight < 0.0)
                throw std::invalid_argument("target sample weights must be non-negative");
        }
    }
}

double evaluate_loss(const CalibrationProblem& problem, std::span<const double> candidate) {
    if (candidate.size() != problem.free.size())
        throw std::invalid_argument("candidate size does not match free parameter count");
    OverrideSet params;
    for (size_t i = 0; i < candidate.size(); ++i)
        params.set(problem.free[i].id, candidate[i]);
    const Model tuned =
        problem.free.empty() ? problem.model : apply_overrides(problem.model, params);

    double total = 0.0;
    for (const auto& target : problem.targets) {
        RunResult run = simulate(tuned, problem.spec, target.condition);
        if (!run.status.completed())
            return std::numeric_limits<double>::infinity();
        const auto& series = run.at(target.variable);
        for (const auto& s : target.samples) {
            if (s.weight == 0.0) continue;
            long ix = grid_index(problem.spec, s.t);
            double r = scale_value(problem.loss_scale, series[ix]) -
                       scale_value(problem.loss_scale, s.value);
            total += s.weight * r * r;
        }
    }
    return total;
}

namespace {

struct NmResult {
    std::vector<double> best;
    double loss;
    long evaluations;
    bool converged;
};

// Deterministic Nelder-Mead with box projection. Vertex ordering breaks ties
// by insertion index; coefficients are the textbook 1 / 2 / 0.5 / 0.5.
NmResult nelder_mead(const CalibrationProblem& problem, const std::vector<double>& start,
                     double simplex_frac) {
    const size_t n = problem.free.size();
    auto project = [&](std::vector<double> x) {
        for (size_t i = 0; i < n; ++i)
            x[i] = std::clamp(x[i], problem.free[i].lower, problem.free[i].upper);
        return x;
    };

    NmResult out{start, 0.0, 0, false};
    std::vector<std::vector<double>> verts;
    std::vector<double> vals;
    verts.push_back(project(start));
    for (size_t i = 0; i < n; ++i) {
        auto v = start;
        v[i] += simplex_frac * (problem.free[i].upper - problem.free[i].lower);
        verts.push_back(project(std::move(v)));
    }
    for (const auto& v : verts) {
        vals.push_back(evaluate_loss(problem, v));
        ++out.evaluations;
    }
    size_t bi = static_cast<size_t>(
        std::min_element(vals.begin(), vals.end()) - vals.begin());
    out.best = verts[bi];
    out.loss = vals[bi];

    auto update_best = [&](const std::vector<double>& x, double fx) {
        if (fx < out.loss) {
            out.best = x;
            out.loss = fx;
        }
    };

    for (int iter = 0; iter < kMaxIterations; ++iter) {
        // sort vertices by (loss, index) — stable and deterministic
        std::vector<size_t> order(verts.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return vals[a] < vals[b]; });
        std::vector<std::vector<double>> sv;
        std::vector<double> sf;
        for (size_t i : order) {
            sv.push_back(std::move(verts[i]));
            sf.push_back(vals[i]);
        }
        verts = std::move(sv);
        vals = std::move(sf);

        if (vals.back() - vals.front() < kSpreadTol) {
            out.converged = true;
            break;
        }

        std::vector<double> centroid(n, 0.0);
        for (size_t i = 0; i + 1 < verts.size(); ++i)
            for (size_t j = 0; j < n; ++j) centroid[j] += verts[i][j];
        for (size_t j = 0; j < n; ++j) centroid[j] /= static_cast<double>(n);

        auto& worst = verts.back();
        std::vector<double> reflected(n);
        for (size_t j = 0; j < n; ++j) reflected[j] = centroid[j] + (centroid[j] - worst[j]);
        reflected = project(std::move(reflected));
        double fr = evaluate_loss(problem, reflected);
        ++out.evaluations;
        update_best(reflected, fr);

        if (fr < vals.front()) {
            std::vector<double> expanded(n);
            for (size_t j = 0; j < n; ++j)
                expanded[j] = centroid[j] + 2.0 * (centroid[j] - worst[j]);
            expanded = project(std::move(expanded));
            double fe = evaluate_loss(problem, expanded);
            ++out.evaluations;
            update_best(expanded, fe);
            if (fe < fr) {
                verts.back() = std::move(expanded);
                vals.back() = fe;
            } else {
                verts.back() = std::move(reflected);
                vals.back() = fr;
            }
        } else if (fr < vals[vals.size() - 2]) {
            verts.back() = std::move(reflected);
            vals.back() = fr;
        } else {
            std::vector<double> contracted(n);
            if (fr < vals.back()) {
                for (size_t j = 0; j < n; ++j)
                    contracted[j] = centroid[j] + 0.5 * (reflected[j] - centroid[j]);
            } else {
                for (size_t j = 0; j < n; ++j)
                    contracted[j] = centroid[j] + 0.5 * (worst[j] - centroid[j]);
            }
            contracted = project(std::move(contracted));
            double fc = evaluate_loss(problem, contracted);
            ++out.evaluations;
            update_best(contracted, fc);
            if (fc < std::min(fr, vals.back())) {
                verts.back() = std::move(contracted);
                vals.back() = fc;
            } else {
                // shrink toward the best vertex
                for (size_t i = 1; i < verts.size(); ++i) {
                    for (size_t j = 0; j < n; ++j)
                        verts[i][j] = verts[0][j] + 0.5 * (verts[i][j] - verts[0][j]);
                    verts[i] = project(std::move(verts[i]));
                    vals[i] = evaluate_loss(problem, verts[i]);
                    ++out.evaluations;
                    update_best(verts[i], vals[i]);
                }
            }
        }
    }
    return out;
}

}  // namespace

FittedParams calibrate(const CalibrationProblem& problem) {
    validate_problem(problem);
    FittedParams out;
    if (problem.free.empty()) {
        out.loss = evaluate_loss(problem, {});
        out.evaluations = 1;
        out.converged = true;
        return out;
    }

    std::vector<double> guess;
    for (const auto& fp : problem.free) guess.push_back(fp.guess);

    NmResult first = nelder_mead(problem, guess, 0.05);
    NmResult second = nelder_mead(problem, first.best, 0.01);

    const NmResult& winner = second.loss <= first.loss ? second : first;
    for (size_t i = 0; i < problem.free.size(); ++i)
        out.values[problem.free[i].id] = winner.best[i];
    out.loss = winner.loss;
    out.evaluations = first.evaluations + second.evaluations;
    out.converged = winner.converged;
    return out;
}

FittedParams grid_search_oracle(const CalibrationProblem& problem, int resolution) {
    validate_problem(problem);
    if (problem.free.size() > 3)
        throw std::invalid_argument("grid_search_oracle: at most 3 free parameters");
    if (resolution < 2)
        throw std::invalid_argument("grid_search_oracle: resolution must be >= 2");

    FittedParams out;
    const size_t n = problem.free.size();
    if (n == 0) {
        out.loss = evaluate_loss(problem, {});
        out.evaluations = 1;
        out.converged = true;
        return out;
    }

    std::vector<double> best(n), current(n);
    double best_loss = std::numeric_limits<double>::infinity();
    long evals = 0;
    std::vector<int> ix(n, 0);
    for (;;) {
        for (size_t i = 0; i < n; ++i) {
            const auto& fp = problem.free[i];
            current[i] = fp.lower + (fp.upper - fp.lower) * ix[i] / (resolution - 1);
        }
        double loss = evaluate_loss(problem, current);
        ++evals;
        if (loss < best_loss) {
            best_loss = loss;
            best = current;
        }
        size_t k = n;
        while (k > 0) {
            if (++ix[k - 1] < resolution) break;
            ix[k - 1] = 0;
            --k;
        }
        if (k == 0) break;
    }

    for (size_t i = 0; i < n; ++i) out.values[problem.free[i].id] = best[i];
    out.loss = best_loss;
    out.evaluations = evals;
    out.converged = true;
    return out;
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t next = s.find(sep, pos);
        out.push_back(trim(s.substr(pos, next == std::string_view::npos ? std::string_view::npos
                                                                        : next - pos)));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

double to_number(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("calibration config: bad number for " + what + ": '" + s + "'");
    }
}

OverrideSet load_override_file(const std::filesystem::path& p) {
    auto parsed = parse_override_set(read_file(p));
    if (auto* err = std::get_if<ParseError>(&parsed))
        throw std::runtime_error(p.string() + ": " + err->to_string());
    return std::get<OverrideSet>(parsed);
}

std::vector<CalSample> load_samples_csv(const std::filesystem::path& p) {
    std::string text = read_file(p);
    std::vector<CalSample> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        if (line_no == 1 && body.rfind("t,", 0) == 0) continue;  // header
        auto cells = split(body, ',');
        if (cells.size() != 2 && cells.size() != 3)
            throw std::runtime_error(p.string() + ":" + std::to_string(line_no) +
                                     ": expected 't,value[,weight]'");
        CalSample s;
        s.t = to_number(cells[0], "sample time");
        s.value = to_number(cells[1], "sample value");
        s.weight = cells.size() == 3 ? to_number(cells[2], "sample weight") : 1.0;
        out.push_back(s);
    }
    return out;
}

}  // namespace

CalibrationProblem load_calibration_config(const std::filesystem::path& path) {
    const std::filesystem::path dir = path.parent_path();
    std::string text = read_file(path);

    CalibrationProblem problem;
    bool have_model = false;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        std::string key = trim(std::string_view(body).substr(0, eq));
        std::string value = trim(std::string_view(body).substr(eq + 1));

        if (key == "model") {
            auto parsed = parse_model(read_file(dir / value));
            if (auto* err = std::get_if<ParseError>(&parsed))
                throw std::runtime_error((dir / value).string() + ": " + err->to_string());
            problem.model = std::get<Model>(parsed);
            have_model = true;
        } else if (key == "t_start") {
            problem.spec.t_start = to_number(value, key);
        } else if (key == "t_stop") {
            problem.spec.t_stop = to_number(value, key);
        } else if (key == "dt") {
            problem.spec.dt = to_number(value, key);
        } else if (key == "stride") {
            problem.spec.output_stride = static_cast<int>(to_number(value, key));
        } else if (key == "method") {
            if (value == "euler") problem.spec.method = Method::Euler;
            else if (value == "rk4") problem.spec.method = Method::RK4;
            else throw std::runtime_error("calibration config: unknown method '" + value + "'");
        } else if (key == "loss_scale") {
            if (value == "log") problem.loss_scale = LossScale::Log;
            else if (value == "linear") problem.loss_scale = LossScale::Linear;
            else throw std::runtime_error("calibration config: unknown loss_scale '" + value + "'");
        } else if (key == "free") {
            auto cells = split(value, ',');
            if (cells.size() != 4)
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": free needs 'name, lower, upper, guess'");
            FreeParam fp;
            fp.id = cells[0];
            fp.lower = to_number(cells[1], "lower bound");
            fp.upper = to_number(cells[2], "upper bound");
            fp.guess = to_number(cells[3], "guess");
            problem.free.push_back(std::move(fp));
        } else if (key == "target") {
            auto cells = split(value, ',');
            if (cells.size() != 3)
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": target needs 'conditions, variable, samples.csv'");
            CalTarget target;
            if (cells[0] != "-") {
                for (const auto& f : split(cells[0], '+')) {
                    OverrideSet os = load_override_file(dir / f);
                    for (const auto& [id, ov] : os.entries) {
                        // sequential composition: later files win on Set,
                        // Scale multiplies into an earlier Set
                        auto it = target.condition.entries.find(id);
                        if (it != target.condition.entries.end() &&
                            ov.kind == Override::Kind::Scale &&
                            it->second.kind == Override::Kind::Set) {
                            it->second.value *= ov.value;
                        } else {
                            target.condition.entries[id] = ov;
                        }
                    }
                }
            }
            target.variable = cells[1];
            target.samples = load_samples_csv(dir / cells[2]);
            problem.targets.push_back(std::move(target));
        } else {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": unknown key '" + key + "'");
        }
    }
    if (!have_model)
        throw std::runtime_error(path.string() + ": missing 'model' entry");
    return problem;
}

}  // namespace sd
