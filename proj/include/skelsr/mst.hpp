#pragma once
// Multi-Set Transformer: per-set ISAB encoder + PMA pooling, cross-set PMA
// aggregation into a short latent sequence Z, and an autoregressive
// pre-norm transformer decoder over skeleton tokens.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "skelsr/autodiff.hpp"
#include "skelsr/matrix.hpp"
#include "skelsr/mssp_data.hpp"
#include "skelsr/skeleton.hpp"

namespace skelsr {

class EmptySet : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DecodeInvalid : public std::runtime_error {
public:
    DecodeInvalid(const std::string& what, std::vector<std::string> raw, bool truncated)
        : std::runtime_error(what), raw(std::move(raw)), truncated(truncated) {}
    std::vector<std::string> raw;
    bool truncated;
};

/// Default token list: SOS EOS c x, the 13 unary and 4 binary operators,
/// the integers -3..5 and E.
std::vector<std::string> default_vocabulary();

struct MSTConfig {
    int isab_blocks = 2;     // l
    int decoder_blocks = 2;  // M
    int d = 64;
    int heads = 4;
    int inducing = 16;  // m
    int seeds = 4;      // k_seed
    int ff_mult = 2;
    int max_len = 64;  // decoded tokens, excluding SOS
    std::vector<std::string> vocab = default_vocabulary();
    std::uint64_t seed = 0;

    void validate() const;
};

struct LatentZ {
    Matrix z;                                         // seeds x d
    std::vector<std::pair<double, double>> scales;  // per set max|x|, max|y|
};

class MSTModel {
public:
    explicit MSTModel(const MSTConfig& cfg);

    const MSTConfig& config() const { return cfg_; }
    int vocab_size() const { return static_cast<int>(cfg_.vocab.size()); }
    int sos() const { return sos_; }
    int eos() const { return eos_; }
    /// Throws std::invalid_argument for tokens outside the vocabulary.
    int token_id(const std::string& tok) const;
    const std::string& token(int id) const { return cfg_.vocab[id]; }
    /// [SOS, prefix tokens..., EOS]
    std::vector<int> encode_target(const Skeleton& s) const;

    std::vector<ad::Param>& params() { return params_; }
    const std::vector<ad::Param>& params() const { return params_; }
    std::size_t num_parameters() const;
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& theta);
    void zero_grad();
    std::vector<double> flat_gradient() const;

    // Graph builders (used by encode/decode/train and by tests).
    ad::Var encode_graph(ad::Tape& t, const SetCollection& c, LatentZ* info = nullptr);
    ad::Var decode_graph(ad::Tape& t, ad::Var z, const std::vector<int>& ids);

    /// Output projection, exposed so tests can zero it.
    ad::Param& output_weight() { return params_[out_w_]; }
    ad::Param& output_bias() { return params_[out_b_]; }

private:
    struct Linear {
        int w, b;
    };
    struct Norm {
        int g, b;
    };
    struct Mab {
        Norm ln_q, ln_kv, ln_ff;
        Linear q, k, v, o, ff1, ff2;
    };
    struct Isab {
        int inducing;
        Mab a, b;
    };
    struct Pma {
        int seeds;
        Mab mab;
    };
    struct DecBlock {
        Norm ln_self, ln_cross, ln_ff;
        Linear sq, sk, sv, so, cq, ck, cv, co, ff1, ff2;
    };

    int add_param(const std::string& name, std::size_t r, std::size_t c);
    Linear linear(const std::string& name, int in, int out);
    Norm norm(const std::string& name);
    Mab mab(const std::string& name);
    ad::Var apply(ad::Tape& t, const Linear& l, ad::Var x);
    ad::Var apply(ad::Tape& t, const Norm& n, ad::Var x);
    ad::Var apply_mab(ad::Tape& t, const Mab& m, ad::Var x, ad::Var y);
    ad::Var feed_forward(ad::Tape& t, const Linear& a, const Linear& b, ad::Var x);

    MSTConfig cfg_;
    int sos_ = 0, eos_ = 1;
    std::vector<ad::Param> params_;
    Linear in_proj_{};
    std::vector<Isab> isabs_;
    Pma set_pool_{}, cross_pool_{};
    Norm z_norm_{};
    int tok_emb_ = 0, pos_emb_ = 0;
    std::vector<DecBlock> dec_;
    Norm out_norm_{};
    int out_w_ = 0, out_b_ = 0;
};

LatentZ encode(const MSTModel& model, const SetCollection& collection);

/// Next-token distribution after `prefix` (token ids, starting with SOS).
std::vector<double> decode_step(const MSTModel& model, const LatentZ& z, const std::vector<int>& prefix);
/// Distributions at every position of `prefix` (row i predicts token i+1).
Matrix decode_all(const MSTModel& model, const LatentZ& z, const std::vector<int>& prefix);

struct DecodeResult {
    std::vector<std::string> tokens;  // without SOS/EOS
    std::optional<Skeleton> skeleton;
    bool truncated = false;
    std::string error;

    bool ok() const { return skeleton.has_value(); }
    /// Throws DecodeInvalid when decoding failed.
    const Skeleton& value() const;
};

DecodeResult greedy_decode(const MSTModel& model, const LatentZ& z);
DecodeResult predict_skeleton(const MSTModel& model, const SetCollection& collection);

struct TrainBatch {
    std::vector<SetCollection> collections;
    std::vector<std::vector<int>> inputs;      // teacher-forced decoder inputs (padded)
    std::vector<std::vector<int>> targets;     // next tokens (padded)
    std::vector<std::vector<double>> weights;  // omega: 0 on padding
};

/// Pads [SOS, tokens, EOS] sequences of the collections' targets to a
/// common length.
TrainBatch make_batch(const MSTModel& model, const std::vector<SetCollection>& records);

struct MSTTrainConfig {
    std::string optimizer = "sgd";  // "sgd" or "adam"
    double learning_rate = 0.1;
    double clip_norm = 1.0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

class MSTOptimizer {
public:
    MSTOptimizer(const MSTModel& model, MSTTrainConfig cfg);
    /// Applies one update from the gradients currently stored in the model.
    void update(MSTModel& model);
    const MSTTrainConfig& config() const { return cfg_; }
    long long steps() const { return step_; }

private:
    MSTTrainConfig cfg_;
    long long step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Masked mean cross-entropy over the batch; gradients accumulate into the
/// model's parameter grads when `backprop` is set.
double batch_loss(MSTModel& model, const TrainBatch& batch, bool backprop);

/// One teacher-forced step; returns the pre-update loss. Throws NonFiniteLoss.
double train_step(MSTModel& model, const TrainBatch& batch, MSTOptimizer& opt);

/// Max relative error between the tape gradient of batch_loss and central
/// differences over every parameter. Parameters are restored afterwards.
double grad_check_mst(MSTModel& model, const TrainBatch& batch, double h = 1e-5);

struct MSTFitConfig {
    int epochs = 250;
    int batch_size = 10;
    MSTTrainConfig optim;
    int eval_every = 0;        // epochs between exact-match checks; 0 = never
    double stop_exact = 1.0;   // stop once the exact-match rate reaches this
    std::uint64_t seed = 0;    // record shuffling
};

struct MSTFitReport {
    std::vector<double> epoch_loss;  // mean batch loss per epoch
    int epochs_run = 0;
    double exact_match = -1.0;       // last measured rate, -1 if never measured
};

/// Epochs of shuffled mini-batch teacher forcing over `records`.
MSTFitReport fit_mst(MSTModel& model, const std::vector<SetCollection>& records, const MSTFitConfig& cfg);

/// Fraction of records whose greedy decode reproduces the target tokens.
double exact_match_rate(const MSTModel& model, const std::vector<SetCollection>& records);

void save_model(std::ostream& out, const MSTModel& model);
MSTModel load_model(std::istream& in);
void save_model(const std::string& path, const MSTModel& model);
MSTModel load_model(const std::string& path);

}  // namespace skelsr
