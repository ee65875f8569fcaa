#include <cmath>
#include <sstream>

#include "doctest.h"
#include "skelsr/checkpoint.hpp"
#include "skelsr/mst.hpp"
#include "skelsr/rng.hpp"

using namespace skelsr;

namespace {

MSTConfig tiny_config(std::uint64_t seed = 1) {
    MSTConfig c;
    c.d = 8;
    c.heads = 2;
    c.isab_blocks = 1;
    c.decoder_blocks = 1;
    c.inducing = 3;
    c.seeds = 2;
    c.max_len = 8;
    c.vocab = {"SOS", "EOS", "c", "x", "add", "mul", "sin", "exp"};
    c.seed = seed;
    return c;
}

MSTConfig small_config(std::uint64_t seed) {
    MSTConfig c;
    c.d = 16;
    c.heads = 4;
    c.isab_blocks = 2;
    c.decoder_blocks = 1;
    c.inducing = 4;
    c.seeds = 3;
    c.seed = seed;
    return c;
}

SetCollection random_collection(Rng& rng, int n_sets, int n_min, int n_max) {
    SetCollection c;
    for (int s = 0; s < n_sets; ++s) {
        DataSet d;
        const auto n = rng.randint(n_min, n_max);
        const double a = rng.uniform(-3, 3), b = rng.uniform(0.5, 4);
        for (int i = 0; i < n; ++i) {
            const double x = rng.uniform(-5, 5);
            d.x.push_back(x);
            d.y.push_back(a * std::sin(b * x) + rng.normal(0, 0.1));
        }
        c.sets.push_back(std::move(d));
    }
    return c;
}

double rel_change(const Matrix& a, const Matrix& b) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::fabs(a.data[i] - b.data[i]));
        scale = std::max(scale, std::fabs(a.data[i]));
    }
    return diff / scale;
}

}  // namespace

TEST_CASE("autodiff ops match finite differences") {
    using namespace ad;
    Rng rng(3);
    auto rnd = [&](std::size_t r, std::size_t c) {
        Param p("p", r, c);
        for (auto& v : p.value.data) v = rng.normal();
        return p;
    };
    Param a = rnd(5, 6), b = rnd(6, 6), row = rnd(1, 6), g = rnd(1, 6), k = rnd(7, 6), v = rnd(7, 6), tab = rnd(9, 6);
    std::vector<Param*> ps = {&a, &b, &row, &g, &k, &v, &tab};
    auto build = [&](Tape& t) {
        Var x = matmul(t, t.param(a), t.param(b));
        x = add_row(t, x, t.param(row));
        x = layer_norm(t, x, t.param(g), t.param(row));
        Var kk = relu(t, t.param(k));
        Var self = attention(t, x, x, x, 2, true);
        Var cross = attention(t, x, kk, t.param(v), 3, false);
        Var e = gather_rows(t, t.param(tab), {1, 4, 4, 0, 8});
        Var s = add(t, add(t, self, scale(t, cross, 0.7)), e);
        Var all = concat_rows(t, {s, t.param(v)});
        Var logits = matmul(t, all, t.param(b));
        std::vector<int> targets = {0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5};
        std::vector<double> w = {1, 1, 0.5, 1, 0, 1, 1, 2, 1, 1, 1, 1};
        return cross_entropy(t, logits, targets, w);
    };
    {
        Tape t;
        t.backward(build(t));
    }
    double worst = 0;
    for (Param* p : ps) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data[i];
            p->value.data[i] = saved + 1e-6;
            Tape t1(false);
            const double up = t1.value(build(t1)).data[0];
            p->value.data[i] = saved - 1e-6;
            Tape t2(false);
            const double down = t2.value(build(t2)).data[0];
            p->value.data[i] = saved;
            const double num = (up - down) / 2e-6;
            const double an = p->grad.data[i];
            worst = std::max(worst, std::fabs(num - an) / std::max({std::fabs(num), std::fabs(an), 1e-6}));
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("tiny model gradient check") {
    MSTModel m(tiny_config(2));
    Rng rng(5);
    std::vector<SetCollection> recs;
    for (const char* target : {"add mul c x c", "mul c sin add mul c x c"}) {
        SetCollection c = random_collection(rng, 2, 4, 4);
        c.target = skeleton_from_text(target);
        recs.push_back(std::move(c));
    }
    TrainBatch batch = make_batch(m, recs);
    CHECK(grad_check_mst(m, batch) <= 1e-3);
}

TEST_CASE("encoder permutation invariance") {
    Rng rng(7);
    double worst_rows = 0, worst_sets = 0;
    for (int trial = 0; trial < 100; ++trial) {
        MSTModel m(small_config(100 + trial));
        SetCollection c = random_collection(rng, static_cast<int>(rng.randint(2, 5)), 3, 40);
        LatentZ z = encode(m, c);
        SetCollection rows = c;
        std::vector<std::size_t> perm(rows.sets[0].x.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm.begin(), perm.end());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            rows.sets[0].x[i] = c.sets[0].x[perm[i]];
            rows.sets[0].y[i] = c.sets[0].y[perm[i]];
        }
        SetCollection sets = c;
        std::reverse(sets.sets.begin(), sets.sets.end());
        worst_rows = std::max(worst_rows, rel_change(z.z, encode(m, rows).z));
        worst_sets = std::max(worst_sets, rel_change(z.z, encode(m, sets).z));
    }
    CHECK(worst_rows <= 1e-5);
    CHECK(worst_sets <= 1e-5);
}

TEST_CASE("encoder edge inputs") {
    MSTModel m(small_config(1));
    SetCollection zeros;
    zeros.sets.push_back({std::vector<double>(6, 0.0), std::vector<double>(6, 0.0)});
    LatentZ z = encode(m, zeros);
    for (double v : z.z.data) CHECK(std::isfinite(v));
    CHECK(z.z.rows == 3);
    CHECK(z.z.cols == 16);

    Rng rng(2);
    SetCollection mixed = random_collection(rng, 3, 8, 8);
    mixed.sets[1] = random_collection(rng, 1, 33, 33).sets[0];
    mixed.sets[2] = random_collection(rng, 1, 128, 128).sets[0];
    LatentZ zm = encode(m, mixed);
    for (double v : zm.z.data) CHECK(std::isfinite(v));
    REQUIRE(zm.scales.size() == 3);

    CHECK_THROWS_AS(encode(m, SetCollection{}), EmptySet);
    SetCollection empty_set;
    empty_set.sets.push_back({});
    CHECK_THROWS_AS(encode(m, empty_set), EmptySet);
}

TEST_CASE("decoder distributions and causality") {
    MSTModel m(small_config(4));
    Rng rng(3);
    LatentZ z = encode(m, random_collection(rng, 2, 10, 10));
    std::vector<int> seq = {m.sos()};
    for (const char* tok : {"add", "mul", "c", "x", "sin", "x"}) seq.push_back(m.token_id(tok));
    Matrix all = decode_all(m, z, seq);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        double sum = 0;
        for (double p : all.row(i)) sum += p;
        CHECK(std::fabs(sum - 1) <= 1e-6);
        std::vector<int> prefix(seq.begin(), seq.begin() + i + 1);
        auto p = decode_step(m, z, prefix);
        double diff = 0;
        for (std::size_t j = 0; j < p.size(); ++j) diff = std::max(diff, std::fabs(p[j] - all(i, j)));
        CHECK(diff <= 1e-14);
    }
    CHECK_THROWS(decode_step(m, z, {m.token_id("x")}));

    auto& w = m.output_weight().value.data;
    std::fill(w.begin(), w.end(), 0.0);
    auto& b = m.output_bias().value.data;
    std::fill(b.begin(), b.end(), 0.0);
    for (double p : decode_step(m, z, seq)) CHECK(p == doctest::Approx(1.0 / m.vocab_size()).epsilon(1e-12));
}

TEST_CASE("greedy decoding") {
    MSTModel m(small_config(5));
    Rng rng(4);
    LatentZ z = encode(m, random_collection(rng, 2, 10, 10));
    DecodeResult a = greedy_decode(m, z), b = greedy_decode(m, z);
    CHECK(a.tokens == b.tokens);
    CHECK(a.ok() == b.ok());

    // a model that always prefers "x" never emits EOS
    std::fill(m.output_weight().value.data.begin(), m.output_weight().value.data.end(), 0.0);
    m.output_bias().value.data[m.token_id("x")] = 10.0;
    DecodeResult r = greedy_decode(m, z);
    CHECK(r.truncated);
    CHECK_FALSE(r.ok());
    CHECK(r.tokens.size() == static_cast<std::size_t>(m.config().max_len));
    CHECK_THROWS_AS(r.value(), DecodeInvalid);
    try {
        r.value();
    } catch (const DecodeInvalid& e) {
        CHECK(e.truncated);
    }

    // "x" then EOS parses
    m.output_bias().value.data[m.token_id("x")] = 0.0;
    m.output_bias().value.data[m.eos()] = 10.0;
    DecodeResult e = greedy_decode(m, z);
    CHECK_FALSE(e.ok());  // empty sequence
    CHECK_FALSE(e.truncated);
}

TEST_CASE("training steps") {
    MSTModel m(small_config(6));
    Rng rng(9);
    SetCollection rec = random_collection(rng, 3, 16, 16);
    rec.target = skeleton_from_text("add mul c sin mul c x c");
    TrainBatch batch = make_batch(m, {rec, rec, rec, rec});
    MSTOptimizer opt(m, MSTTrainConfig{});
    double prev = INFINITY;
    bool decreasing = true;
    for (int s = 0; s < 50; ++s) {
        const double loss = train_step(m, batch, opt);
        decreasing = decreasing && loss < prev;
        prev = loss;
    }
    CHECK(decreasing);

    TrainBatch masked = batch;
    for (auto& w : masked.weights) std::fill(w.begin(), w.end(), 0.0);
    m.zero_grad();
    CHECK(batch_loss(m, masked, true) == 0.0);
    for (double g : m.flat_gradient()) CHECK(g == 0.0);

    MSTModel broken(small_config(6));
    broken.params()[0].value.data[0] = std::nan("");
    MSTOptimizer o2(broken, MSTTrainConfig{});
    CHECK_THROWS_AS(train_step(broken, batch, o2), NonFiniteLoss);

    SetCollection untargeted = rec;
    untargeted.target.reset();
    CHECK_THROWS(make_batch(m, {untargeted}));
}

TEST_CASE("batch padding") {
    MSTModel m(small_config(6));
    Rng rng(1);
    SetCollection a = random_collection(rng, 1, 4, 4), b = a;
    a.target = skeleton_from_text("mul c x");
    b.target = skeleton_from_text("add mul c sin x c");
    TrainBatch batch = make_batch(m, {a, b});
    REQUIRE(batch.inputs[0].size() == 7);  // SOS + 6 tokens of b
    CHECK(batch.weights[0] == std::vector<double>{1, 1, 1, 1, 0, 0, 0});
    CHECK(batch.weights[1] == std::vector<double>(7, 1.0));
    CHECK(batch.targets[0][3] == m.eos());
    CHECK(batch.inputs[1][0] == m.sos());
}

TEST_CASE("checkpoint round trip") {
    MSTModel m(small_config(8));
    Rng rng(6);
    SetCollection c = random_collection(rng, 2, 12, 12);
    std::stringstream ss;
    save_model(ss, m);
    const std::string text = ss.str();
    MSTModel back = load_model(ss);
    CHECK(back.flat_parameters() == m.flat_parameters());
    CHECK(encode(back, c).z.data == encode(m, c).z.data);
    CHECK(predict_skeleton(back, c).tokens == predict_skeleton(m, c).tokens);

    std::string wrong = text;
    wrong.replace(0, std::string("skelsr-mst 1").size(), "skelsr-mst 2");
    std::istringstream w(wrong);
    CHECK_THROWS_AS(load_model(w), VersionError);
    std::istringstream cut(text.substr(0, text.size() * 2 / 3));
    CHECK_THROWS_AS(load_model(cut), CorruptCheckpoint);
}

TEST_CASE("overfit one record") {
    MSTConfig c = small_config(11);
    c.d = 32;
    MSTModel m(c);
    Rng rng(12);
    SetCollection rec = random_collection(rng, 3, 24, 24);
    rec.target = skeleton_from_text("add mul c sin add mul c x c c");
    TrainBatch batch = make_batch(m, {rec});
    MSTOptimizer opt(m, MSTTrainConfig{});
    for (int s = 0; s < 150; ++s) train_step(m, batch, opt);
    DecodeResult r = predict_skeleton(m, rec);
    REQUIRE(r.ok());
    CHECK(r.value().prefix() == rec.target->prefix());
}

TEST_CASE("fit loop over records") {
    Rng rng(31);
    std::vector<SetCollection> recs;
    for (const char* target : {"add mul c x c", "mul c sin add mul c x c"}) {
        SetCollection c = random_collection(rng, 2, 10, 10);
        c.target = skeleton_from_text(target);
        recs.push_back(std::move(c));
    }
    MSTFitConfig fc;
    fc.epochs = 200;
    fc.batch_size = 1;
    fc.eval_every = 10;
    fc.seed = 4;
    MSTModel a(small_config(9)), b(small_config(9));
    MSTFitReport ra = fit_mst(a, recs, fc);
    MSTFitReport rb = fit_mst(b, recs, fc);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(ra.epoch_loss.back() < ra.epoch_loss.front());
    CHECK(ra.exact_match == 1.0);
    CHECK(ra.epochs_run < 200);
    CHECK(ra.epochs_run % 10 == 0);
    CHECK(exact_match_rate(a, recs) == 1.0);

    CHECK_THROWS_AS(fit_mst(a, {}, fc), EmptySet);
    SetCollection unlabeled = recs[0];
    unlabeled.target.reset();
    CHECK_THROWS_AS(fit_mst(a, {unlabeled}, fc), std::invalid_argument);
}
