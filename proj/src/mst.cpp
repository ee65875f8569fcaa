#include "skelsr/mst.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "skelsr/checkpoint.hpp"
#include "skelsr/rng.hpp"

namespace skelsr {

using ad::Tape;
using ad::Var;

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

std::vector<std::string> default_vocabulary() {
    std::vector<std::string> v = {"SOS", "EOS", "c", "x"};
    for (int i = 0; i < kUnaryCount; ++i) v.emplace_back(name_of(static_cast<Unary>(i)));
    for (int i = 0; i < kBinaryCount; ++i) v.emplace_back(name_of(static_cast<Binary>(i)));
    for (int k = -3; k <= 5; ++k) v.push_back(std::to_string(k));
    v.emplace_back("E");
    return v;
}

void MSTConfig::validate() const {
    if (d < 1 || heads < 1 || d % heads != 0) throw std::invalid_argument("d must be a positive multiple of heads");
    if (isab_blocks < 0 || decoder_blocks < 0) throw std::invalid_argument("block counts must be >= 0");
    if (inducing < 1 || seeds < 1 || ff_mult < 1 || max_len < 1)
        throw std::invalid_argument("inducing points, seeds, ff_mult and max_len must be >= 1");
    if (std::find(vocab.begin(), vocab.end(), "SOS") == vocab.end() ||
        std::find(vocab.begin(), vocab.end(), "EOS") == vocab.end())
        throw std::invalid_argument("vocabulary needs SOS and EOS");
    for (std::size_t i = 0; i < vocab.size(); ++i)
        for (std::size_t j = i + 1; j < vocab.size(); ++j)
            if (vocab[i] == vocab[j]) throw std::invalid_argument("duplicate vocabulary token " + vocab[i]);
}

int MSTModel::add_param(const std::string& name, std::size_t r, std::size_t c) {
    params_.emplace_back(name, r, c);
    return static_cast<int>(params_.size()) - 1;
}

MSTModel::Linear MSTModel::linear(const std::string& name, int in, int out) {
    return {add_param(name + ".w", in, out), add_param(name + ".b", 1, out)};
}

MSTModel::Norm MSTModel::norm(const std::string& name) {
    Norm n{add_param(name + ".g", 1, cfg_.d), add_param(name + ".b", 1, cfg_.d)};
    std::fill(params_[n.g].value.data.begin(), params_[n.g].value.data.end(), 1.0);
    return n;
}

MSTModel::Mab MSTModel::mab(const std::string& name) {
    const int d = cfg_.d, f = cfg_.d * cfg_.ff_mult;
    Mab m;
    m.ln_q = norm(name + ".ln_q");
    m.ln_kv = norm(name + ".ln_kv");
    m.ln_ff = norm(name + ".ln_ff");
    m.q = linear(name + ".q", d, d);
    m.k = linear(name + ".k", d, d);
    m.v = linear(name + ".v", d, d);
    m.o = linear(name + ".o", d, d);
    m.ff1 = linear(name + ".ff1", d, f);
    m.ff2 = linear(name + ".ff2", f, d);
    return m;
}

MSTModel::MSTModel(const MSTConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    sos_ = token_id("SOS");
    eos_ = token_id("EOS");
    const int d = cfg_.d, f = d * cfg_.ff_mult;
    in_proj_ = linear("enc.in", 2, d);
    for (int i = 0; i < cfg_.isab_blocks; ++i) {
        const std::string n = "enc.isab" + std::to_string(i);
        Isab b;
        b.inducing = add_param(n + ".inducing", cfg_.inducing, d);
        b.a = mab(n + ".a");
        b.b = mab(n + ".b");
        isabs_.push_back(b);
    }
    set_pool_.seeds = add_param("enc.set_pool.seeds", 1, d);
    set_pool_.mab = mab("enc.set_pool");
    cross_pool_.seeds = add_param("enc.cross_pool.seeds", cfg_.seeds, d);
    cross_pool_.mab = mab("enc.cross_pool");
    z_norm_ = norm("enc.z_norm");
    tok_emb_ = add_param("dec.tok_emb", vocab_size(), d);
    pos_emb_ = add_param("dec.pos_emb", cfg_.max_len + 1, d);
    for (int i = 0; i < cfg_.decoder_blocks; ++i) {
        const std::string n = "dec.block" + std::to_string(i);
        DecBlock b;
        b.ln_self = norm(n + ".ln_self");
        b.ln_cross = norm(n + ".ln_cross");
        b.ln_ff = norm(n + ".ln_ff");
        b.sq = linear(n + ".sq", d, d);
        b.sk = linear(n + ".sk", d, d);
        b.sv = linear(n + ".sv", d, d);
        b.so = linear(n + ".so", d, d);
        b.cq = linear(n + ".cq", d, d);
        b.ck = linear(n + ".ck", d, d);
        b.cv = linear(n + ".cv", d, d);
        b.co = linear(n + ".co", d, d);
        b.ff1 = linear(n + ".ff1", d, f);
        b.ff2 = linear(n + ".ff2", f, d);
        dec_.push_back(b);
    }
    out_norm_ = norm("dec.out_norm");
    out_w_ = add_param("dec.out.w", d, vocab_size());
    out_b_ = add_param("dec.out.b", 1, vocab_size());

    // Weights ~ N(0, 1/fan_in); biases and norm offsets 0; embeddings,
    // inducing points and seeds ~ N(0, 1).
    Rng rng(cfg_.seed);
    for (auto& p : params_) {
        const auto& n = p.name;
        const bool is_bias = n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0;
        const bool is_gain = n.size() > 2 && n.compare(n.size() - 2, 2, ".g") == 0;
        if (is_bias || is_gain) continue;
        const bool table = n.find("emb") != std::string::npos || n.find("seeds") != std::string::npos ||
                           n.find("inducing") != std::string::npos;
        const double sd = table ? 1.0 : 1.0 / std::sqrt(static_cast<double>(p.value.rows));
        for (auto& w : p.value.data) w = rng.normal(0.0, sd);
    }
}

int MSTModel::token_id(const std::string& tok) const {
    auto it = std::find(cfg_.vocab.begin(), cfg_.vocab.end(), tok);
    if (it == cfg_.vocab.end()) throw std::invalid_argument("token '" + tok + "' is not in the vocabulary");
    return static_cast<int>(it - cfg_.vocab.begin());
}

std::vector<int> MSTModel::encode_target(const Skeleton& s) const {
    std::vector<int> ids = {sos_};
    for (const auto& t : to_prefix(s.tree)) ids.push_back(token_id(to_string(t)));
    ids.push_back(eos_);
    return ids;
}

std::size_t MSTModel::num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

std::vector<double> MSTModel::flat_parameters() const {
    std::vector<double> t;
    t.reserve(num_parameters());
    for (const auto& p : params_) t.insert(t.end(), p.value.data.begin(), p.value.data.end());
    return t;
}

void MSTModel::set_flat_parameters(const std::vector<double>& theta) {
    if (theta.size() != num_parameters()) throw std::invalid_argument("parameter vector has wrong length");
    auto it = theta.begin();
    for (auto& p : params_) {
        std::copy(it, it + p.value.size(), p.value.data.begin());
        it += p.value.size();
    }
}

void MSTModel::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::vector<double> MSTModel::flat_gradient() const {
    std::vector<double> g;
    g.reserve(num_parameters());
    for (const auto& p : params_) g.insert(g.end(), p.grad.data.begin(), p.grad.data.end());
    return g;
}

Var MSTModel::apply(Tape& t, const Linear& l, Var x) {
    return ad::add_row(t, ad::matmul(t, x, t.param(params_[l.w])), t.param(params_[l.b]));
}

Var MSTModel::apply(Tape& t, const Norm& n, Var x) {
    return ad::layer_norm(t, x, t.param(params_[n.g]), t.param(params_[n.b]));
}

Var MSTModel::feed_forward(Tape& t, const Linear& a, const Linear& b, Var x) {
    return apply(t, b, ad::relu(t, apply(t, a, x)));
}

// Pre-norm MAB(X, Y): H = X + Attn(LN(X), LN(Y)); out = H + FF(LN(H)).
Var MSTModel::apply_mab(Tape& t, const Mab& m, Var x, Var y) {
    Var qn = apply(t, m.ln_q, x);
    Var kvn = apply(t, m.ln_kv, y);
    Var att = ad::attention(t, apply(t, m.q, qn), apply(t, m.k, kvn), apply(t, m.v, kvn), cfg_.heads, false);
    Var h = ad::add(t, x, apply(t, m.o, att));
    return ad::add(t, h, feed_forward(t, m.ff1, m.ff2, apply(t, m.ln_ff, h)));
}

Var MSTModel::encode_graph(Tape& t, const SetCollection& c, LatentZ* info) {
    if (c.sets.empty()) throw EmptySet("collection has no sets");
    std::vector<Var> pooled;
    for (std::size_t s = 0; s < c.sets.size(); ++s) {
        const DataSet& ds = c.sets[s];
        if (ds.x.empty()) throw EmptySet("set " + std::to_string(s + 1) + " is empty");
        if (ds.x.size() != ds.y.size()) throw std::invalid_argument("set has mismatched x/y lengths");
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < ds.x.size(); ++i) {
            sx = std::max(sx, std::fabs(ds.x[i]));
            sy = std::max(sy, std::fabs(ds.y[i]));
        }
        if (!std::isfinite(sx) || !std::isfinite(sy)) throw std::invalid_argument("set contains non-finite values");
        if (sx == 0.0) sx = 1.0;
        if (sy == 0.0) sy = 1.0;
        if (info) info->scales.emplace_back(sx, sy);
        Matrix rows(ds.x.size(), 2);
        for (std::size_t i = 0; i < ds.x.size(); ++i) {
            rows(i, 0) = ds.x[i] / sx;
            rows(i, 1) = ds.y[i] / sy;
        }
        Var h = apply(t, in_proj_, t.input(std::move(rows)));
        for (const auto& b : isabs_) {
            Var ind = apply_mab(t, b.a, t.param(params_[b.inducing]), h);
            h = apply_mab(t, b.b, h, ind);
        }
        pooled.push_back(apply_mab(t, set_pool_.mab, t.param(params_[set_pool_.seeds]), h));
    }
    Var sets = ad::concat_rows(t, pooled);
    Var z = apply_mab(t, cross_pool_.mab, t.param(params_[cross_pool_.seeds]), sets);
    return apply(t, z_norm_, z);
}

Var MSTModel::decode_graph(Tape& t, Var z, const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("decoder input is empty");
    if (static_cast<int>(ids.size()) > cfg_.max_len + 1) throw std::invalid_argument("decoder input exceeds max_len");
    std::vector<int> pos(ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
    Var h = ad::add(t, ad::gather_rows(t, t.param(params_[tok_emb_]), ids), ad::gather_rows(t, t.param(params_[pos_emb_]), pos));
    for (const auto& b : dec_) {
        Var n1 = apply(t, b.ln_self, h);
        Var sa = ad::attention(t, apply(t, b.sq, n1), apply(t, b.sk, n1), apply(t, b.sv, n1), cfg_.heads, true);
        h = ad::add(t, h, apply(t, b.so, sa));
        Var n2 = apply(t, b.ln_cross, h);
        Var ca = ad::attention(t, apply(t, b.cq, n2), apply(t, b.ck, z), apply(t, b.cv, z), cfg_.heads, false);
        h = ad::add(t, h, apply(t, b.co, ca));
        h = ad::add(t, h, feed_forward(t, b.ff1, b.ff2, apply(t, b.ln_ff, h)));
    }
    Var hn = apply(t, out_norm_, h);
    return ad::add_row(t, ad::matmul(t, hn, t.param(params_[out_w_])), t.param(params_[out_b_]));
}

LatentZ encode(const MSTModel& model, const SetCollection& collection) {
    // Inference never writes to parameters.
    auto& m = const_cast<MSTModel&>(model);
    Tape t(false);
    LatentZ z;
    Var v = m.encode_graph(t, collection, &z);
    z.z = t.value(v);
    return z;
}

Matrix decode_all(const MSTModel& model, const LatentZ& z, const std::vector<int>& prefix) {
    if (prefix.empty() || prefix[0] != model.sos()) throw std::invalid_argument("prefix must start with SOS");
    for (int id : prefix)
        if (id < 0 || id >= model.vocab_size()) throw std::invalid_argument("token id out of range");
    auto& m = const_cast<MSTModel&>(model);
    Tape t(false);
    Var logits = m.decode_graph(t, t.input(z.z), prefix);
    Matrix p = t.value(logits);
    ad::softmax_rows(p);
    return p;
}

std::vector<double> decode_step(const MSTModel& model, const LatentZ& z, const std::vector<int>& prefix) {
    Matrix p = decode_all(model, z, prefix);
    auto last = p.row(p.rows - 1);
    return {last.begin(), last.end()};
}

const Skeleton& DecodeResult::value() const {
    if (!skeleton) throw DecodeInvalid(error, tokens, truncated);
    return *skeleton;
}

DecodeResult greedy_decode(const MSTModel& model, const LatentZ& z) {
    DecodeResult r;
    std::vector<int> ids = {model.sos()};
    bool ended = false;
    for (int step = 0; step < model.config().max_len; ++step) {
        auto p = decode_step(model, z, ids);
        const int next = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        if (next == model.eos()) {
            ended = true;
            break;
        }
        ids.push_back(next);
        r.tokens.push_back(model.token(next));
    }
    if (!ended) {
        r.truncated = true;
        r.error = "maximum length reached without EOS";
        return r;
    }
    std::string text;
    for (const auto& tok : r.tokens) text += (text.empty() ? "" : " ") + tok;
    try {
        Expr tree = parse_prefix_text(text);
        reindex_placeholders(tree);
        Skeleton s;
        s.canonical = to_prefix_text(normal_form(tree));
        s.tree = std::move(tree);
        r.skeleton = std::move(s);
    } catch (const std::exception& e) {
        r.error = std::string("decoded tokens do not parse: ") + e.what();
    }
    return r;
}

DecodeResult predict_skeleton(const MSTModel& model, const SetCollection& collection) {
    return greedy_decode(model, encode(model, collection));
}

TrainBatch make_batch(const MSTModel& model, const std::vector<SetCollection>& records) {
    TrainBatch b;
    std::vector<std::vector<int>> seqs;
    std::size_t longest = 0;
    for (const auto& r : records) {
        if (!r.target) throw std::invalid_argument("training record has no target skeleton");
        seqs.push_back(model.encode_target(*r.target));
        if (static_cast<int>(seqs.back().size()) - 1 > model.config().max_len + 1)
            throw std::invalid_argument("target longer than max_len: " + r.target->prefix());
        longest = std::max(longest, seqs.back().size());
    }
    for (std::size_t j = 0; j < records.size(); ++j) {
        const auto& s = seqs[j];
        std::vector<int> in(longest - 1, model.eos()), out(longest - 1, model.eos());
        std::vector<double> w(longest - 1, 0.0);
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            in[i] = s[i];
            out[i] = s[i + 1];
            w[i] = 1.0;
        }
        b.collections.push_back(records[j]);
        b.inputs.push_back(std::move(in));
        b.targets.push_back(std::move(out));
        b.weights.push_back(std::move(w));
    }
    return b;
}

double batch_loss(MSTModel& model, const TrainBatch& batch, bool backprop) {
    const std::size_t B = batch.collections.size();
    if (B == 0) throw std::invalid_argument("empty batch");
    double total = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
        Tape t(backprop);
        Var z = model.encode_graph(t, batch.collections[j]);
        Var logits = model.decode_graph(t, z, batch.inputs[j]);
        Var ce = ad::scale(t, ad::cross_entropy(t, logits, batch.targets[j], batch.weights[j]), 1.0 / B);
        total += t.value(ce).data[0];
        if (backprop) t.backward(ce);
    }
    return total;
}

MSTOptimizer::MSTOptimizer(const MSTModel& model, MSTTrainConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.optimizer != "sgd" && cfg_.optimizer != "adam") throw std::invalid_argument("unknown optimizer " + cfg_.optimizer);
    if (cfg_.optimizer == "adam") {
        for (const auto& p : model.params()) {
            m_.emplace_back(p.value.size(), 0.0);
            v_.emplace_back(p.value.size(), 0.0);
        }
    }
}

void MSTOptimizer::update(MSTModel& model) {
    ++step_;
    double sq = 0.0;
    for (const auto& p : model.params())
        for (double g : p.grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    auto& ps = model.params();
    if (cfg_.optimizer == "sgd") {
        for (auto& p : ps)
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value.data[i] -= cfg_.learning_rate * clip * p.grad.data[i];
        return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& p = ps[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = clip * p.grad.data[i];
            m_[k][i] = cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * g;
            v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * g * g;
            p.value.data[i] -= cfg_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.adam_eps);
        }
    }
}

double train_step(MSTModel& model, const TrainBatch& batch, MSTOptimizer& opt) {
    model.zero_grad();
    const double loss = batch_loss(model, batch, true);
    if (!std::isfinite(loss)) throw NonFiniteLoss("training loss is not finite");
    opt.update(model);
    return loss;
}

void save_model(std::ostream& out, const MSTModel& model) {
    const auto& c = model.config();
    out << "skelsr-mst " << kCheckpointVersion << '\n';
    out << "config " << c.isab_blocks << ' ' << c.decoder_blocks << ' ' << c.d << ' ' << c.heads << ' ' << c.inducing
        << ' ' << c.seeds << ' ' << c.ff_mult << ' ' << c.max_len << ' ' << c.seed << '\n';
    out << "vocab " << c.vocab.size();
    for (const auto& v : c.vocab) out << ' ' << v;
    out << '\n';
    out << "params " << model.params().size() << '\n';
    for (const auto& p : model.params()) {
        out << p.name << ' ' << p.value.rows << ' ' << p.value.cols << '\n';
        ckpt::write_reals(out, p.value.data);
    }
    out << "end\n";
}

MSTModel load_model(std::istream& in) {
    ckpt::Reader r(in);
    r.expect("skelsr-mst");
    const int version = static_cast<int>(r.integer());
    if (version != kCheckpointVersion) throw VersionError("MST checkpoint", version, kCheckpointVersion);
    MSTConfig c;
    r.expect("config");
    c.isab_blocks = static_cast<int>(r.integer());
    c.decoder_blocks = static_cast<int>(r.integer());
    c.d = static_cast<int>(r.integer());
    c.heads = static_cast<int>(r.integer());
    c.inducing = static_cast<int>(r.integer());
    c.seeds = static_cast<int>(r.integer());
    c.ff_mult = static_cast<int>(r.integer());
    c.max_len = static_cast<int>(r.integer());
    {
        const std::string w = r.word();
        auto res = std::from_chars(w.data(), w.data() + w.size(), c.seed);
        if (res.ec != std::errc() || res.ptr != w.data() + w.size()) throw CorruptCheckpoint("bad seed '" + w + "'");
    }
    r.expect("vocab");
    const long long nv = r.integer();
    if (nv < 2 || nv > 100000) throw CorruptCheckpoint("bad vocabulary size");
    c.vocab.clear();
    for (long long i = 0; i < nv; ++i) c.vocab.push_back(r.word());
    std::optional<MSTModel> m;
    try {
        m.emplace(c);
    } catch (const std::invalid_argument& e) {
        throw CorruptCheckpoint(std::string("bad model configuration: ") + e.what());
    }
    r.expect("params");
    if (r.integer() != static_cast<long long>(m->params().size())) throw CorruptCheckpoint("parameter count mismatch");
    for (auto& p : m->params()) {
        r.expect(p.name);
        if (r.integer() != static_cast<long long>(p.value.rows) || r.integer() != static_cast<long long>(p.value.cols))
            throw CorruptCheckpoint("shape mismatch for " + p.name);
        r.reals(p.value.data, p.value.size());
    }
    r.expect("end");
    return std::move(*m);
}

void save_model(const std::string& path, const MSTModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    save_model(out, model);
}

MSTModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load_model(in);
}

double grad_check_mst(MSTModel& m, const TrainBatch& batch, double h) {
    m.zero_grad();
    batch_loss(m, batch, true);
    const auto analytic = m.flat_gradient();
    auto theta = m.flat_parameters();
    double worst = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        m.set_flat_parameters(theta);
        const double up = batch_loss(m, batch, false);
        theta[i] = saved - h;
        m.set_flat_parameters(theta);
        const double down = batch_loss(m, batch, false);
        theta[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-6});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / scale);
    }
    m.set_flat_parameters(theta);
    return worst;
}

MSTFitReport fit_mst(MSTModel& model, const std::vector<SetCollection>& records, const MSTFitConfig& cfg) {
    if (records.empty()) throw EmptySet("no training records");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("epochs and batch_size must be positive");
    for (const auto& r : records)
        if (!r.target) throw std::invalid_argument("training record without a target skeleton");
    MSTOptimizer opt(model, cfg.optim);
    Rng rng(cfg.seed);
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    MSTFitReport rep;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(idx.begin(), idx.end());
        double total = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < idx.size(); start += B) {
            std::vector<SetCollection> chunk;
            for (std::size_t k = start; k < std::min(idx.size(), start + B); ++k) chunk.push_back(records[idx[k]]);
            total += train_step(model, make_batch(model, chunk), opt);
            ++batches;
        }
        rep.epoch_loss.push_back(total / batches);
        rep.epochs_run = epoch;
        if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
            rep.exact_match = exact_match_rate(model, records);
            if (rep.exact_match >= cfg.stop_exact) break;
        }
    }
    return rep;
}

double exact_match_rate(const MSTModel& model, const std::vector<SetCollection>& records) {
    if (records.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& r : records) {
        DecodeResult d = predict_skeleton(model, r);
        if (d.ok() && r.target && d.skeleton->prefix() == r.target->prefix()) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(records.size());
}

}  // namespace skelsr
