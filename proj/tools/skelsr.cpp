// Command-line front end: corpus and record generation, training, prediction,
// evaluation and the benchmark run.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "skelsr/expr_gen.hpp"
#include "skelsr/mssp_data.hpp"
#include "skelsr/mst.hpp"
#include "skelsr/pipeline.hpp"
#include "skelsr/regressor.hpp"
#include "skelsr/skeleton_eval.hpp"

using namespace skelsr;
using json = nlohmann::ordered_json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

KeyValueConfig load_config(const Common& c) {
    KeyValueConfig kv = c.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(c.config_path);
    for (const auto& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    return kv;
}

std::uint64_t resolve_seed(const Common& c, const KeyValueConfig& kv) {
    if (c.seed_given) return c.seed;
    const std::string s = kv.get("seed", std::string());
    if (!s.empty()) return std::stoull(s);
    return default_seed(0);
}

void reject_unused(const KeyValueConfig& kv) {
    const auto keys = kv.unused();
    if (keys.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& k : keys) msg += " " + k;
    throw std::invalid_argument(msg);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open " + path);
    return in;
}

json decode_json(const DecodeResult& d) {
    json j;
    j["tokens"] = d.tokens;
    j["skeleton"] = d.ok() ? json(d.skeleton->prefix()) : json(nullptr);
    j["infix"] = d.ok() ? json(to_infix(d.skeleton->tree)) : json(nullptr);
    j["truncated"] = d.truncated;
    if (!d.error.empty()) j["error"] = d.error;
    return j;
}

// curve,x,y rows (header optional); curves keep their first-seen order.
std::vector<DataSet> read_curves(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<std::string> order;
    std::map<std::string, DataSet> by_id;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string id, xs, ys;
        if (!std::getline(ss, id, ',') || !std::getline(ss, xs, ',') || !std::getline(ss, ys))
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected curve,x,y");
        double x = 0, y = 0;
        try {
            x = std::stod(xs);
            y = std::stod(ys);
        } catch (const std::exception&) {
            if (lineno == 1) continue;  // header
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": bad number");
        }
        if (!by_id.count(id)) order.push_back(id);
        by_id[id].x.push_back(x);
        by_id[id].y.push_back(y);
    }
    std::vector<DataSet> out;
    for (const auto& id : order) out.push_back(by_id[id]);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skelsr: univariate skeleton prediction for multivariate symbolic regression"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", common.overrides, "override a config key (key=value)");
        sub->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& s) {
                common.seed = s;
                common.seed_given = true;
            },
            "random seed (default: SKELSR_SEED or 0)");
    };

    // gen-corpus
    std::size_t corpus_size = 1000;
    std::string corpus_out;
    auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a skeleton corpus");
    add_common(gen_corpus);
    gen_corpus->add_option("-n,--size", corpus_size, "number of distinct skeletons");
    gen_corpus->add_option("-o,--out", corpus_out, "corpus file")->required();

    // gen-records
    std::string records_corpus, records_out;
    int records_sets = 10, records_points = 256, records_per = 1;
    auto* gen_records = app.add_subcommand("gen-records", "generate multi-set training records from a corpus");
    add_common(gen_records);
    gen_records->add_option("--corpus", records_corpus, "corpus file")->required();
    gen_records->add_option("-o,--out", records_out, "records file")->required();
    gen_records->add_option("--sets", records_sets, "sets per record (N_S)");
    gen_records->add_option("--points", records_points, "points per set (n)");
    gen_records->add_option("--per-skeleton", records_per, "records per corpus entry");

    // train-nn
    std::string nn_problem, nn_out, nn_report;
    std::size_t nn_samples = 10000;
    auto* train_nn = app.add_subcommand("train-nn", "fit the regressor on a benchmark problem's observed data");
    add_common(train_nn);
    train_nn->add_option("-p,--problem", nn_problem, "problem id (E1..E13)")->required();
    train_nn->add_option("--samples", nn_samples, "observed samples (N_R)");
    train_nn->add_option("-o,--out", nn_out, "checkpoint file")->required();
    train_nn->add_option("--report", nn_report, "JSON report (default stdout)");

    // train-mst
    std::string mst_records, mst_out, mst_report;
    auto* train_mst = app.add_subcommand("train-mst", "train the Multi-Set Transformer on records");
    add_common(train_mst);
    train_mst->add_option("--records", mst_records, "records file")->required();
    train_mst->add_option("-o,--out", mst_out, "checkpoint file")->required();
    train_mst->add_option("--report", mst_report, "JSON report (default stdout)");

    // predict
    std::string pred_problem, pred_mst, pred_nn, pred_out;
    bool pred_oracle = false;
    auto* predict_cmd = app.add_subcommand("predict", "predict one skeleton per variable of a problem");
    add_common(predict_cmd);
    predict_cmd->add_option("-p,--problem", pred_problem, "problem id (E1..E13)")->required();
    predict_cmd->add_option("--mst", pred_mst, "MST checkpoint");
    predict_cmd->add_option("--nn", pred_nn, "regressor checkpoint (trained on the fly if absent)");
    predict_cmd->add_flag("--oracle", pred_oracle, "answer with the registered targets");
    predict_cmd->add_option("-o,--out", pred_out, "JSON output (default stdout)");

    // evaluate
    std::string ev_est, ev_target, ev_out;
    std::vector<double> ev_domain;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "fit an estimated skeleton against a target skeleton");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--est", ev_est, "estimated skeleton, prefix text")->required();
    evaluate_cmd->add_option("--target", ev_target, "target skeleton, prefix text")->required();
    evaluate_cmd->add_option("--domain", ev_domain, "sampling domain as low,high")
        ->required()
        ->delimiter(',')
        ->expected(2);
    evaluate_cmd->add_option("-o,--out", ev_out, "JSON output (default stdout)");

    // bench
    std::string bench_json, bench_csv, bench_mst, bench_problems;
    bool bench_oracle = false, bench_timing = false;
    auto* bench = app.add_subcommand("bench", "run the E1-E13 benchmark");
    add_common(bench);
    bench->add_flag("--oracle", bench_oracle, "registered targets instead of the MST");
    bench->add_option("--mst", bench_mst, "MST checkpoint");
    bench->add_option("--problems", bench_problems, "comma-separated ids (default all)");
    bench->add_option("--json", bench_json, "JSON report (default stdout)");
    bench->add_option("--csv", bench_csv, "CSV summary");
    bench->add_flag("--timing", bench_timing, "include timings and ISA in the JSON report");

    // curves
    std::string curves_in, curves_mst, curves_skeleton, curves_out;
    auto* curves = app.add_subcommand("curves", "predict one skeleton for a family of response curves");
    add_common(curves);
    curves->add_option("-i,--input", curves_in, "CSV with curve,x,y rows")->required();
    auto* cm = curves->add_option("--mst", curves_mst, "MST checkpoint");
    auto* cs = curves->add_option("--skeleton", curves_skeleton, "fixed answer (plumbing checks)");
    cm->excludes(cs);
    curves->add_option("-o,--out", curves_out, "JSON output (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        const KeyValueConfig kv = load_config(common);
        const std::uint64_t seed = resolve_seed(common, kv);

        if (gen_corpus->parsed()) {
            GenConfig g;
            apply_config(kv, g);
            g.seed = seed;
            reject_unused(kv);
            Corpus c = generate_corpus(corpus_size, g);
            std::ostringstream text;
            write_corpus(text, c);
            write_text(corpus_out, text.str());
            json j;
            j["entries"] = c.entries.size();
            j["seed"] = c.seed;
            j["config_hash"] = c.config_hash;
            std::cout << j.dump(2) << "\n";
        } else if (gen_records->parsed()) {
            DataConfig d;
            apply_config(kv, d);
            reject_unused(kv);
            std::ifstream in = open_in(records_corpus);
            Corpus c = read_corpus(in);
            std::vector<SetCollection> recs;
            for (std::size_t i = 0; i < c.entries.size(); ++i) {
                for (int k = 0; k < records_per; ++k) {
                    Rng rng(stream_seed(seed, i, static_cast<std::uint64_t>(k)));
                    recs.push_back(generate_sets(c.entries[i], records_sets, static_cast<std::size_t>(records_points), rng, d));
                }
            }
            std::ostringstream text;
            write_records(text, recs);
            write_text(records_out, text.str());
            json j;
            j["records"] = recs.size();
            j["sets"] = records_sets;
            j["points"] = records_points;
            j["seed"] = seed;
            std::cout << j.dump(2) << "\n";
        } else if (train_nn->parsed()) {
            MLPConfig mc;
            apply_config(kv, mc);
            reject_unused(kv);
            const BenchmarkProblem& p = find_problem(nn_problem);
            Rng rng(stream_seed(seed, 0, 1));
            ObservedData obs = make_observed_data(p, nn_samples, rng);
            mc.seed = stream_seed(seed, 0, 2);
            TrainResult tr = train_mlp(obs.X, obs.y, mc);
            save_mlp(nn_out, tr.model);
            json j;
            j["problem"] = p.id;
            j["samples"] = nn_samples;
            j["seed"] = seed;
            j["epochs_run"] = tr.report.epochs_run;
            j["best_epoch"] = tr.report.best_epoch;
            j["train_mse"] = tr.report.train_mse;
            j["val_mse"] = tr.report.val_mse;
            j["val_r2"] = tr.report.val_r2;
            j["parameters"] = tr.model.num_parameters();
            write_text(nn_report, j.dump(2) + "\n");
        } else if (train_mst->parsed()) {
            MSTConfig mc;
            apply_config(kv, mc);
            MSTFitConfig fc;
            apply_config(kv, fc.optim);
            fc.epochs = kv.get("train.epochs", fc.epochs);
            fc.batch_size = kv.get("train.batch_size", fc.batch_size);
            fc.eval_every = kv.get("train.eval_every", fc.eval_every);
            fc.stop_exact = kv.get("train.stop_exact", fc.stop_exact);
            reject_unused(kv);
            mc.seed = stream_seed(seed, 0, 3);
            fc.seed = stream_seed(seed, 0, 4);
            std::ifstream in = open_in(mst_records);
            std::vector<SetCollection> recs = read_records(in);
            MSTModel model(mc);
            MSTFitReport rep = fit_mst(model, recs, fc);
            save_model(mst_out, model);
            json j;
            j["records"] = recs.size();
            j["parameters"] = model.num_parameters();
            j["epochs_run"] = rep.epochs_run;
            j["epoch_loss"] = rep.epoch_loss;
            j["exact_match"] = exact_match_rate(model, recs);
            j["seed"] = seed;
            write_text(mst_report, j.dump(2) + "\n");
        } else if (predict_cmd->parsed()) {
            PipelineConfig pc;
            apply_config(kv, pc);
            reject_unused(kv);
            const BenchmarkProblem& p = find_problem(pred_problem);
            Rng rng(stream_seed(seed, 0, 1));
            ObservedData obs = make_observed_data(p, pc.n_observed, rng);
            std::unique_ptr<SkeletonSolver> solver;
            ResponseFn response;
            MLPModel mlp;
            if (pred_oracle) {
                solver = std::make_unique<OracleSolver>();
                response = exact_response(p);
            } else {
                if (pred_mst.empty()) throw MissingArtifact("predict needs --mst or --oracle");
                std::ifstream probe = open_in(pred_mst);
                solver = std::make_unique<MSTSolver>(std::make_shared<const MSTModel>(load_model(pred_mst)));
                if (!pred_nn.empty()) {
                    open_in(pred_nn);
                    mlp = load_mlp(pred_nn);
                } else {
                    MLPConfig mc = pc.regressor;
                    mc.seed = stream_seed(seed, 0, 2);
                    mlp = train_mlp(obs.X, obs.y, mc).model;
                }
                response = regressor_response(mlp);
            }
            auto preds = predict_univariate_skeletons(*solver, response, p, obs.X, pc, rng);
            json j;
            j["problem"] = p.id;
            j["solver"] = solver->name();
            j["seed"] = seed;
            json vars = json::array();
            for (const auto& v : preds) {
                json e = decode_json(v.decoded);
                e["variable"] = "x" + std::to_string(v.variable);
                e["target"] = p.univariate_target(v.variable).prefix();
                vars.push_back(e);
            }
            j["variables"] = vars;
            write_text(pred_out, j.dump(2) + "\n");
        } else if (evaluate_cmd->parsed()) {
            EvalConfig ec;
            apply_config(kv, ec);
            reject_unused(kv);
            ec.seed = seed;
            const Skeleton est = skeleton_from_text(ev_est);
            const Skeleton target = skeleton_from_text(ev_target);
            if (ev_domain.size() != 2 || !(ev_domain[0] < ev_domain[1]))
                throw std::invalid_argument("--domain needs low,high with low < high");
            EvalResult r = evaluate_skeleton(est, target, ev_domain[0], ev_domain[1], ec);
            write_text(ev_out, eval_json(est.prefix(), target.prefix(), ev_domain[0], ev_domain[1], ec, r));
        } else if (bench->parsed()) {
            PipelineConfig pc;
            apply_config(kv, pc);
            reject_unused(kv);
            pc.seed = seed;
            if (bench_oracle) pc.oracle = true;
            if (!bench_mst.empty()) pc.mst_path = bench_mst;
            if (!bench_problems.empty()) {
                pc.problems.clear();
                std::stringstream ss(bench_problems);
                for (std::string id; std::getline(ss, id, ',');)
                    if (!id.empty()) pc.problems.push_back(id);
            }
            RunReport report = run_benchmark(pc);
            write_text(bench_json, report_json(report, bench_timing));
            if (!bench_csv.empty()) write_text(bench_csv, report_csv(report));
        } else if (curves->parsed()) {
            reject_unused(kv);
            std::vector<DataSet> data = read_curves(curves_in);
            std::unique_ptr<SkeletonSolver> solver;
            if (!curves_skeleton.empty()) {
                solver = std::make_unique<OracleSolver>(skeleton_from_text(curves_skeleton));
            } else {
                if (curves_mst.empty()) throw MissingArtifact("curves needs --mst or --skeleton");
                open_in(curves_mst);
                solver = std::make_unique<MSTSolver>(std::make_shared<const MSTModel>(load_model(curves_mst)));
            }
            DecodeResult d = mssp_on_curves(data, *solver);
            json j = decode_json(d);
            j["curves"] = data.size();
            write_text(curves_out, j.dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "skelsr: %s\n", e.what());
        return 1;
    }
    return 0;
}
