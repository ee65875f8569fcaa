#include "skelsr/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "skelsr/batch_eval.hpp"
#include "skelsr/simd.hpp"

namespace skelsr {

namespace {

struct ProblemSpec {
    const char* id;
    const char* formula;
    std::vector<std::pair<double, double>> domains;
    std::vector<const char*> targets;    // univariate, in x
    std::vector<const char*> published;  // as printed
    std::vector<const char*> notes;
    const char* domain_note;
};

const char* kCorrectedTypo = "published target has a typo; registered the skeleton of f";
const char* kCorrectedKappa = "published target disagrees with the skeleton of f; registered the latter";

std::vector<ProblemSpec> problem_specs() {
    const std::pair<double, double> u5{-5, 5}, u10{-10, 10};
    return {
        {"E1",
         "div add mul 3.0375 mul x1 x2 mul 5.5 sin mul 2.25 mul add x1 -0.6666666666666666 add x2 "
         "-0.6666666666666666 5",
         {u5, u5},
         {"add mul c x mul c sin mul c add c x", "add mul c x mul c sin mul c add c x"},
         {"c1*x1 + c2*sin(c3*(c4 + x1))", "c1*x2 + c2*sin(c3*(c4 + x2))"},
         {"", ""},
         ""},
        {"E2",
         "add add 5.5 pow add 1 mul -0.25 x1 2 mul sqrt add x2 10 sin mul 0.2 x3",
         {u10, u10, u10},
         {"add c pow add c mul c x 2", "add mul c sqrt add x c c", "add c mul c sin mul c x"},
         {"c1 + (c2 + c3*x1)^2", "c1*sqrt(x2 + c2) + c3", "c1 + c2*sin(c3*x3)"},
         {"", "", ""},
         "printed as [-10, 10]^2 for three variables; [-10, 10] used for all three"},
        {"E3",
         "div add mul 1.5 exp mul 1.5 x1 mul 5 cos mul 3 x2 10",
         {u5, u5},
         {"add c mul c exp mul c x", "add c mul c cos mul c x"},
         {"c1 + c2*exp(c3*x1)", "c1 + c2*cos(c3*x2)"},
         {"", ""},
         ""},
        {"E4",
         "div add add add pow add 1 mul -1 x1 2 pow add 1 mul -1 x3 2 mul 100 pow add x2 mul -1 pow x1 2 2 mul 100 "
         "pow add x4 mul -1 pow x3 2 2 10000",
         {u5, u5, u5, u5},
         {"add add add c mul c x mul c pow x 2 mul c pow x 4", "add add c mul c x mul c pow x 2",
          "add add add c mul c x mul c pow x 2 mul c pow x 4", "add add c mul c x mul c pow x 2"},
         {"c1 + c2*x1 + c3*x1^2 + c4*x1^4", "c1 + c1*x2 + c3*x2^2", "c1 + c2*x3 + c3*x4^2 + c4*x3^4",
          "c1 + c2*x4 + c3*x4^2"},
         {"", kCorrectedTypo, kCorrectedTypo, ""},
         ""},
        {"E5",
         "add sin add x1 mul x2 x3 exp mul 1.2 x4",
         {{-10, 10}, u5, u5, {-3, 3}},
         {"add c sin add c x", "add c sin add c mul c x", "add c sin add c mul c x", "add c exp mul c x"},
         {"c1 + sin(c2 + c3*x1)", "c1 + sin(c2 + c3*x2)", "c1 + sin(c2 + c3*x3)", "c1 + exp(c2*x4)"},
         {kCorrectedKappa, "", "", ""},
         ""},
        {"E6",
         "add tanh div x1 2 mul abs x2 cos div pow x3 2 5",
         {u10, u10, u10},
         {"add c tanh mul c x", "add c mul c abs x", "add c mul c cos mul c pow x 2"},
         {"c1 + tanh(c2*x1)", "c1 + c2*|x2|", "c1 + c2*cos(c3*x3^2)"},
         {"", "", ""},
         ""},
        {"E7",
         "div add 1 mul -1 pow x2 2 add sin mul 6.283185307179586 x1 1.5",
         {u5, u5},
         {"div c add c sin mul c x", "add c mul c pow x 2"},
         {"c1/(c2 + sin(c3*x1))", "c1 + c2*x2^2"},
         {"", ""},
         ""},
        {"E8",
         "add div pow x1 4 add pow x1 4 1 div pow x2 4 add pow x2 4 1",
         {u5, u5},
         {"add c div pow x 4 add c pow x 4", "add c div pow x 4 add c pow x 4"},
         {"c1 + c2*x1^4/(c3 + c4*x1^4)", "c1 + c2*x2^4/(c3 + c4*x2^4)"},
         {kCorrectedKappa, kCorrectedKappa},
         ""},
        {"E9",
         "add log add mul 2 x2 1 mul -1 log add mul 4 pow x1 2 1",
         {{0, 5}, {0, 5}},
         {"add c mul c log add c mul c pow x 2", "add c log add c mul c x"},
         {"c1 + c2*log(c3 + c4*x1^2)", "c1 + log(c2 + c3*x2)"},
         {"", ""},
         ""},
        {"E10",
         "sin mul x1 exp x2",
         {{-2, 2}, {-4, 4}},
         {"sin mul c x", "sin mul c exp x"},
         {"sin(c1*x1)", "sin(c1*exp(x2))"},
         {"", ""},
         ""},
        {"E11",
         "mul x1 log pow x2 4",
         {u5, u5},
         {"mul c x", "mul c log pow x 4"},
         {"c1*x1", "c1*log(x2^4)"},
         {"", ""},
         ""},
        {"E12",
         "add 1 mul x1 sin pow x2 -1",
         {u10, u10},
         {"add c mul c x", "add c mul c sin pow x -1"},
         {"c1 + c2*x1", "c1 + c2*sin(1/x2)"},
         {"", ""},
         ""},
        {"E13",
         "mul sqrt x1 log pow x2 2",
         {{0, 20}, u5},
         {"mul c sqrt x", "mul c log pow x 2"},
         {"c1*sqrt(x1)", "c1*log(x2^2)"},
         {"", ""},
         ""},
    };
}

std::vector<BenchmarkProblem> build_registry() {
    std::vector<BenchmarkProblem> out;
    for (const auto& s : problem_specs()) {
        BenchmarkProblem p;
        p.id = s.id;
        p.tree = parse_prefix_text(s.formula);
        p.formula = to_prefix_text(p.tree);
        p.domains = s.domains;
        for (const char* t : s.targets) p.targets.push_back(skeleton_from_text(t));
        for (const char* t : s.published) p.published.emplace_back(t);
        for (const char* t : s.notes) p.notes.emplace_back(t);
        p.domain_note = s.domain_note;
        out.push_back(std::move(p));
    }
    return out;
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw std::invalid_argument("config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

nlohmann::ordered_json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

nlohmann::ordered_json eval_to_json(const EvalResult& r) {
    nlohmann::ordered_json j;
    j["mean"] = number_or_null(r.mean);
    j["std"] = number_or_null(r.std);
    j["mean_normalized"] = number_or_null(r.mean_normalized);
    j["std_normalized"] = number_or_null(r.std_normalized);
    auto arr = [](const std::vector<double>& v) {
        nlohmann::ordered_json a = nlohmann::ordered_json::array();
        for (double x : v) a.push_back(number_or_null(x));
        return a;
    };
    j["r"] = arr(r.r);
    j["r_normalized"] = arr(r.r_normalized);
    j["generations"] = r.generations;
    return j;
}

std::string csv_number(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

Skeleton BenchmarkProblem::univariate_target(int v) const {
    if (v < 1 || v > num_variables()) throw std::out_of_range("variable index out of range for " + id);
    return targets[static_cast<std::size_t>(v - 1)];
}

const std::vector<BenchmarkProblem>& benchmark_registry() {
    static const std::vector<BenchmarkProblem> registry = build_registry();
    return registry;
}

const BenchmarkProblem& find_problem(const std::string& id) {
    for (const auto& p : benchmark_registry())
        if (p.id == id) return p;
    throw std::invalid_argument("unknown problem '" + id + "'");
}

ResponseFn exact_response(const BenchmarkProblem& problem) {
    auto compiled = std::make_shared<CompiledExpr>(problem.tree);
    return [compiled](const Matrix& X) {
        std::vector<std::vector<double>> cols(X.cols, std::vector<double>(X.rows));
        for (std::size_t r = 0; r < X.rows; ++r)
            for (std::size_t c = 0; c < X.cols; ++c) cols[c][r] = X(r, c);
        std::vector<const double*> ptrs;
        for (const auto& c : cols) ptrs.push_back(c.data());
        std::vector<double> y(X.rows);
        compiled->eval(ptrs, X.rows, {}, y.data());
        return y;
    };
}

ResponseFn regressor_response(const MLPModel& model) {
    return [&model](const Matrix& X) { return predict(model, X); };
}

ObservedData make_observed_data(const BenchmarkProblem& problem, std::size_t n, Rng& rng) {
    const std::size_t t = static_cast<std::size_t>(problem.num_variables());
    ObservedData out{Matrix(n, t), std::vector<double>(n)};
    ResponseFn f = exact_response(problem);
    Matrix row(1, t);
    for (std::size_t i = 0; i < n; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt == 10000) throw std::runtime_error(problem.id + ": cannot draw a defined input");
            for (std::size_t c = 0; c < t; ++c) row(0, c) = rng.uniform(problem.domains[c].first, problem.domains[c].second);
            const double y = f(row)[0];
            if (is_valid_value(y)) {
                for (std::size_t c = 0; c < t; ++c) out.X(i, c) = row(0, c);
                out.y[i] = y;
                break;
            }
        }
    }
    return out;
}

SetCollection build_artificial_collection(const ResponseFn& response, const Matrix& observed, int v, int n_sets,
                                          int n, Rng& rng) {
    if (observed.rows == 0) throw EmptySet("no observed data");
    if (v < 1 || static_cast<std::size_t>(v) > observed.cols) throw std::out_of_range("variable index out of range");
    if (n_sets < 1 || n < 1) throw std::invalid_argument("n_sets and n must be positive");
    const std::size_t t = observed.cols;
    const std::size_t col = static_cast<std::size_t>(v - 1);
    std::vector<double> lo(t), hi(t);
    for (std::size_t c = 0; c < t; ++c) {
        lo[c] = hi[c] = observed(0, c);
        for (std::size_t r = 1; r < observed.rows; ++r) {
            lo[c] = std::min(lo[c], observed(r, c));
            hi[c] = std::max(hi[c], observed(r, c));
        }
    }
    SetCollection out;
    const std::size_t rows = static_cast<std::size_t>(n);
    for (int s = 0; s < n_sets; ++s) {
        Matrix X(rows, t);
        for (std::size_t c = 0; c < t; ++c) {
            if (c == col) continue;
            const double fixed = rng.uniform(lo[c], hi[c]);
            for (std::size_t r = 0; r < rows; ++r) X(r, c) = fixed;
        }
        for (std::size_t r = 0; r < rows; ++r) X(r, col) = rng.uniform(lo[col], hi[col]);
        for (std::size_t c = 0; c < t; ++c) {
            if (c == col) continue;
            for (std::size_t r = 1; r < rows; ++r)
                if (X(r, c) != X(0, c)) throw std::logic_error("non-analyzed column varies within a set");
        }
        DataSet d;
        d.y = response(X);
        if (d.y.size() != rows) throw std::logic_error("response returned the wrong number of values");
        d.x.resize(rows);
        for (std::size_t r = 0; r < rows; ++r) d.x[r] = X(r, col);
        out.sets.push_back(std::move(d));
    }
    return out;
}

DecodeResult OracleSolver::solve(const SetCollection&, const BenchmarkProblem& problem, int v) const {
    DecodeResult r;
    r.skeleton = fixed_ ? *fixed_ : problem.univariate_target(v);
    for (const auto& t : to_prefix(r.skeleton->tree)) r.tokens.push_back(to_string(t));
    return r;
}

DecodeResult MSTSolver::solve(const SetCollection& collection, const BenchmarkProblem&, int) const {
    return predict_skeleton(*model_, collection);
}

std::vector<VariablePrediction> predict_univariate_skeletons(const SkeletonSolver& solver, const ResponseFn& response,
                                                             const BenchmarkProblem& problem,
                                                             const Matrix& observed, const PipelineConfig& cfg,
                                                             Rng& rng) {
    std::vector<VariablePrediction> out;
    for (int v = 1; v <= problem.num_variables(); ++v) {
        SetCollection c = build_artificial_collection(response, observed, v, cfg.n_sets, cfg.n_points, rng);
        out.push_back({v, solver.solve(c, problem, v)});
    }
    return out;
}

RunReport run_benchmark(const PipelineConfig& cfg) {
    std::unique_ptr<SkeletonSolver> solver;
    if (cfg.oracle) {
        solver = std::make_unique<OracleSolver>();
    } else {
        if (cfg.mst_path.empty()) throw MissingArtifact("no MST checkpoint given (mst_path)");
        if (!std::filesystem::exists(cfg.mst_path)) throw MissingArtifact("MST checkpoint not found: " + cfg.mst_path);
        solver = std::make_unique<MSTSolver>(std::make_shared<const MSTModel>(load_model(cfg.mst_path)));
    }

    std::vector<const BenchmarkProblem*> selected;
    if (cfg.problems.empty()) {
        for (const auto& p : benchmark_registry()) selected.push_back(&p);
    } else {
        for (const auto& id : cfg.problems) selected.push_back(&find_problem(id));
    }

    RunReport report;
    report.solver = solver->name();
    report.seed = cfg.seed;
    report.isa = std::string(simd::kernels().name);
    for (const BenchmarkProblem* p : selected) {
        const std::uint64_t pid = static_cast<std::uint64_t>(p - benchmark_registry().data());
        Rng rng(stream_seed(cfg.seed, pid, 1));
        ObservedData obs = make_observed_data(*p, cfg.n_observed, rng);

        ResponseFn response;
        MLPModel mlp;
        if (cfg.oracle) {
            response = exact_response(*p);
        } else {
            MLPConfig mc = cfg.regressor;
            mc.seed = stream_seed(cfg.seed, pid, 2);
            TrainResult tr = train_mlp(obs.X, obs.y, mc);
            report.regressor_val_r2[p->id] = tr.report.val_r2;
            mlp = std::move(tr.model);
            response = regressor_response(mlp);
        }

        auto preds = predict_univariate_skeletons(*solver, response, *p, obs.X, cfg, rng);
        for (auto& pred : preds) {
            const auto t0 = std::chrono::steady_clock::now();
            CellReport cell;
            cell.problem = p->id;
            cell.variable = pred.variable;
            const Skeleton target = p->univariate_target(pred.variable);
            cell.target = target.prefix();
            if (pred.decoded.ok()) {
                const Skeleton& est = *pred.decoded.skeleton;
                cell.predicted = est.prefix();
                cell.canonical_match = canonical_equal(est, target);
                EvalConfig ec = cfg.eval;
                ec.seed = stream_seed(cfg.seed, pid, 100 + static_cast<std::uint64_t>(pred.variable));
                const auto& dom = p->domains[static_cast<std::size_t>(pred.variable - 1)];
                cell.eval = evaluate_skeleton(est, target, dom.first, dom.second, ec);
            } else {
                cell.diagnostic = pred.decoded.error;
            }
            cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

DecodeResult mssp_on_curves(const std::vector<DataSet>& curves, const SkeletonSolver& solver) {
    if (curves.empty()) throw EmptySet("no curves");
    SetCollection c;
    for (const auto& d : curves) {
        if (d.x.size() < 2) throw EmptySet("a curve needs at least two points");
        if (d.x.size() != d.y.size()) throw std::invalid_argument("curve x and y differ in length");
        c.sets.push_back(d);
    }
    static const BenchmarkProblem none = [] {
        BenchmarkProblem p;
        p.id = "curves";
        return p;
    }();
    return solver.solve(c, none, 1);
}

std::string report_json(const RunReport& report, bool include_timing) {
    nlohmann::ordered_json j;
    j["solver"] = report.solver;
    j["seed"] = report.seed;
    if (include_timing) j["isa"] = report.isa;
    nlohmann::ordered_json r2 = nlohmann::ordered_json::object();
    for (const auto& [id, v] : report.regressor_val_r2) r2[id] = number_or_null(v);
    j["regressor_val_r2"] = r2;
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : report.cells) {
        nlohmann::ordered_json cj;
        cj["problem"] = c.problem;
        cj["variable"] = c.variable;
        cj["target"] = c.target;
        cj["predicted"] = c.predicted.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.predicted);
        cj["canonical_match"] = c.canonical_match;
        if (!c.diagnostic.empty()) cj["diagnostic"] = c.diagnostic;
        cj["eval"] = c.eval ? eval_to_json(*c.eval) : nlohmann::ordered_json(nullptr);
        if (include_timing) cj["seconds"] = c.seconds;
        cells.push_back(std::move(cj));
    }
    j["cells"] = cells;
    return j.dump(2) + "\n";
}

std::string report_csv(const RunReport& report) {
    std::string out = "problem,variable,target,predicted,mean,std,mean_normalized,std_normalized\n";
    for (const auto& c : report.cells) {
        out += c.problem + ",x" + std::to_string(c.variable) + "," + csv_field(c.target) + "," + csv_field(c.predicted);
        if (c.eval) {
            out += "," + csv_number(c.eval->mean) + "," + csv_number(c.eval->std) + "," +
                   csv_number(c.eval->mean_normalized) + "," + csv_number(c.eval->std_normalized);
        } else {
            out += ",,,,";
        }
        out += "\n";
    }
    return out;
}

std::string eval_json(const std::string& est, const std::string& target, double low, double high,
                      const EvalConfig& cfg, const EvalResult& r) {
    nlohmann::ordered_json j;
    j["estimate"] = est;
    j["target"] = target;
    j["domain"] = {low, high};
    j["repeats"] = cfg.repeats;
    j["seed"] = cfg.seed;
    j["result"] = eval_to_json(r);
    return j.dump(2) + "\n";
}

// ---- configuration ---------------------------------------------------------

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        kv.values_[key] = trim(std::string_view(line).substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const std::string* KeyValueConfig::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_[key] = true;
    return &it->second;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

double KeyValueConfig::get(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? parse_number<double>(key, *v) : fallback;
}

long long KeyValueConfig::get(const std::string& key, long long fallback) const {
    const std::string* v = find(key);
    return v ? parse_number<long long>(key, *v) : fallback;
}

bool KeyValueConfig::get(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<int> KeyValueConfig::get_ints(const std::string& key, const std::vector<int>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<int> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_number<int>(key, item));
    return out;
}

std::vector<std::string> KeyValueConfig::unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
        if (!used_.count(k)) out.push_back(k);
    return out;
}

std::uint64_t default_seed(std::uint64_t fallback) {
    const char* env = std::getenv("SKELSR_SEED");
    if (!env || !*env) return fallback;
    return parse_number<std::uint64_t>("SKELSR_SEED", trim(env));
}

namespace {
std::uint64_t get_seed(const KeyValueConfig& kv, const std::string& key, std::uint64_t fallback) {
    const std::string v = kv.get(key, std::string());
    return v.empty() ? fallback : parse_number<std::uint64_t>(key, v);
}
}  // namespace

void apply_config(const KeyValueConfig& kv, MLPConfig& c, const std::string& p) {
    c.hidden = kv.get_ints(p + "hidden", c.hidden);
    c.learning_rate = kv.get(p + "learning_rate", c.learning_rate);
    c.momentum = kv.get(p + "momentum", c.momentum);
    c.lr_decay = kv.get(p + "lr_decay", c.lr_decay);
    c.epochs = kv.get(p + "epochs", c.epochs);
    c.batch_size = kv.get(p + "batch_size", c.batch_size);
    c.train_fraction = kv.get(p + "train_fraction", c.train_fraction);
    c.patience = kv.get(p + "patience", c.patience);
    c.seed = get_seed(kv, p + "seed", c.seed);
    c.validate();
}

void apply_config(const KeyValueConfig& kv, MSTConfig& c, const std::string& p) {
    c.isab_blocks = kv.get(p + "isab_blocks", c.isab_blocks);
    c.decoder_blocks = kv.get(p + "decoder_blocks", c.decoder_blocks);
    c.d = kv.get(p + "d", c.d);
    c.heads = kv.get(p + "heads", c.heads);
    c.inducing = kv.get(p + "inducing", c.inducing);
    c.seeds = kv.get(p + "seeds", c.seeds);
    c.ff_mult = kv.get(p + "ff_mult", c.ff_mult);
    c.max_len = kv.get(p + "max_len", c.max_len);
    c.seed = get_seed(kv, p + "seed", c.seed);
    c.validate();
}

void apply_config(const KeyValueConfig& kv, MSTTrainConfig& c, const std::string& p) {
    c.optimizer = kv.get(p + "optimizer", c.optimizer);
    c.learning_rate = kv.get(p + "learning_rate", c.learning_rate);
    c.clip_norm = kv.get(p + "clip_norm", c.clip_norm);
    c.beta1 = kv.get(p + "beta1", c.beta1);
    c.beta2 = kv.get(p + "beta2", c.beta2);
    c.adam_eps = kv.get(p + "adam_eps", c.adam_eps);
    if (c.optimizer != "sgd" && c.optimizer != "adam") throw std::invalid_argument("optimizer must be sgd or adam");
}

void apply_config(const KeyValueConfig& kv, EvalConfig& c, const std::string& p) {
    c.n_test = kv.get(p + "n_test", c.n_test);
    c.repeats = kv.get(p + "repeats", c.repeats);
    c.expansion = kv.get(p + "expansion", c.expansion);
    c.population = kv.get(p + "population", c.population);
    c.tournament = kv.get(p + "tournament", c.tournament);
    c.crossover_rate = kv.get(p + "crossover_rate", c.crossover_rate);
    c.mutation_rate = kv.get(p + "mutation_rate", c.mutation_rate);
    c.mutation_sd = kv.get(p + "mutation_sd", c.mutation_sd);
    c.init_low = kv.get(p + "init_low", c.init_low);
    c.init_high = kv.get(p + "init_high", c.init_high);
    c.penalty = kv.get(p + "penalty", c.penalty);
    c.stall_generations = kv.get(p + "stall_generations", c.stall_generations);
    c.stall_tolerance = kv.get(p + "stall_tolerance", c.stall_tolerance);
    c.max_generations = kv.get(p + "max_generations", c.max_generations);
    c.fit_points = kv.get(p + "fit_points", c.fit_points);
    c.rerank = kv.get(p + "rerank", c.rerank);
    c.threads = kv.get(p + "threads", c.threads);
    c.seed = get_seed(kv, p + "seed", c.seed);
    c.validate();
}

void apply_config(const KeyValueConfig& kv, GenConfig& c, const std::string& p) {
    c.max_operators = kv.get(p + "max_operators", c.max_operators);
    c.max_unary_nesting = kv.get(p + "max_unary_nesting", c.max_unary_nesting);
    c.max_unary_ops = kv.get(p + "max_unary_ops", c.max_unary_ops);
    c.weight_unary = kv.get(p + "weight_unary", c.weight_unary);
    c.weight_binary = kv.get(p + "weight_binary", c.weight_binary);
    c.weight_leaf = kv.get(p + "weight_leaf", c.weight_leaf);
    c.max_retries = kv.get(p + "max_retries", c.max_retries);
    c.seed = get_seed(kv, p + "seed", c.seed);
}

void apply_config(const KeyValueConfig& kv, DataConfig& c, const std::string& p) {
    c.constant_bound = kv.get(p + "constant_bound", c.constant_bound);
    c.min_abs_constant = kv.get(p + "min_abs_constant", c.min_abs_constant);
    c.support_limit_low = kv.get(p + "support_limit_low", c.support_limit_low);
    c.support_limit_high = kv.get(p + "support_limit_high", c.support_limit_high);
    c.max_abs_value = kv.get(p + "max_abs_value", c.max_abs_value);
    c.log_margin = kv.get(p + "log_margin", c.log_margin);
    c.exp_cap = kv.get(p + "exp_cap", c.exp_cap);
    c.singular_halfwidth = kv.get(p + "singular_halfwidth", c.singular_halfwidth);
    c.grid_factor = kv.get(p + "grid_factor", c.grid_factor);
    c.repair_passes = kv.get(p + "repair_passes", c.repair_passes);
    c.per_set_retries = kv.get(p + "per_set_retries", c.per_set_retries);
    c.per_collection_retries = kv.get(p + "per_collection_retries", c.per_collection_retries);
}

void apply_config(const KeyValueConfig& kv, PipelineConfig& c) {
    c.n_observed = static_cast<std::size_t>(kv.get("n_observed", static_cast<long long>(c.n_observed)));
    c.n_sets = kv.get("n_sets", c.n_sets);
    c.n_points = kv.get("n_points", c.n_points);
    c.mst_path = kv.get("mst_path", c.mst_path);
    c.oracle = kv.get("oracle", c.oracle);
    if (kv.has("problems")) c.problems = split_list(kv.get("problems", std::string()));
    c.seed = get_seed(kv, "seed", c.seed);
    apply_config(kv, c.regressor, "nn.");
    apply_config(kv, c.eval, "eval.");
    if (c.n_sets < 1 || c.n_points < 1 || c.n_observed < 2) throw std::invalid_argument("n_sets, n_points, n_observed too small");
}

}  // namespace skelsr
