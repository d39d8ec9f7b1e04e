#pragma once

// Multi-round server/edge simulation: the dataset grows every round, the
// server produces a candidate with the configured method, the candidate is
// encoded and applied on a simulated edge, and the validation gate decides
// whether the edge serves it.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpu/codec.hpp"
#include "dpu/contribution.hpp"
#include "dpu/data.hpp"
#include "dpu/error.hpp"
#include "dpu/nn.hpp"
#include "dpu/optim.hpp"
#include "dpu/rng.hpp"
#include "dpu/update.hpp"

namespace dpu {

enum class Method { dpu, gcpu, rpu, fu };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::dpu: return "dpu";
        case Method::gcpu: return "gcpu";
        case Method::rpu: return "rpu";
        case Method::fu: return "fu";
    }
    return "?";
}

inline Method parse_method(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "dpu") return Method::dpu;
    if (s == "gcpu") return Method::gcpu;
    if (s == "rpu") return Method::rpu;
    if (s == "fu") return Method::fu;
    throw InputError("unknown method '" + s + "' (expected dpu, gcpu, rpu or fu)");
}

// What happens when a candidate fails the validation gate. skip: nothing is
// sent beyond a skip frame and the server continues from the deployed
// weights. transmit: the candidate is still sent and becomes the base for
// the next round, while the edge keeps serving the previous model.
enum class RejectPolicy { skip, transmit };

struct TrainingConfig {
    OptimizerConfig optimizer;
    double learning_rate = 0.005;
    double decay_factor = 0.1;
    std::size_t decay_epochs = 10;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
};

struct CommConfig {
    unsigned weight_bits = 32;  // S_w, also the packet value width
    double sample_bits = 0.0;   // S_d
    std::size_t nodes = 1;      // N
};

struct ExperimentConfig {
    Architecture arch{std::vector<std::size_t>{2, 32, 32, 3}};
    Method method = Method::dpu;
    double k = 0.1;
    std::size_t rounds = 8;
    DataConfig data;
    TrainingConfig training;
    CommConfig comm;
    RejectPolicy reject = RejectPolicy::skip;
    std::uint64_t seed = 1;

    double effective_k() const { return method == Method::fu ? 1.0 : k; }

    void validate() const {
        detail::require(rounds >= 1, "rounds must be at least 1");
        detail::require(k > 0.0 && k <= 1.0, "updating ratio k must lie in (0, 1]");
        detail::require(training.epochs >= 1, "epochs must be at least 1");
        detail::require(training.decay_epochs >= 1, "decay interval must be at least one epoch");
        detail::require(training.learning_rate > 0.0, "learning rate must be positive");
        detail::require(comm.weight_bits == 32 || comm.weight_bits == 64, "weight bits must be 32 or 64");
        detail::require(comm.nodes >= 1, "node count must be at least 1");
        if (data.source == DataSource::synthetic_blobs) {
            detail::require(arch.input_dim() == data.blobs.dims, "network input size differs from data dimension");
            detail::require(arch.num_classes() == data.blobs.classes, "network output size differs from class count");
        }
    }
};

// True iff the training set has more than doubled since the last
// (re-)initialization.
inline bool reinit_due(std::size_t current_size, std::size_t last_reinit_size) {
    return current_size > 2 * last_reinit_size;
}

// Strict: a tie keeps the deployed model.
inline bool accept_update(double val_acc_candidate, double val_acc_deployed) {
    return val_acc_candidate > val_acc_deployed;
}

struct RoundLog {
    std::size_t round = 0;
    Method method = Method::dpu;
    double train_loss = 0.0;  // serving model on D^r
    double val_acc = 0.0;     // serving model
    double test_acc = 0.0;    // serving model
    std::size_t bytes_sent = 0;
    bool reinit = false;
    bool skipped = false;
    std::size_t mask_count = 0;
    std::size_t uploaded_samples = 0;
    FrameType frame = FrameType::skip;
    double wall_seconds = 0.0;
};

struct RoundSchedules {
    std::size_t steps_per_epoch = 1;
    std::size_t iterations = 0;  // Q
    LearningRateSchedule single;   // Q iterations, decays every decay_epochs
    LearningRateSchedule doubled;  // 2Q iterations, decays every 2 * decay_epochs
};

// Q = epochs * ceil(|D^r| / batch).
inline RoundSchedules round_schedules(std::size_t train_size, const TrainingConfig& t) {
    detail::require(train_size >= 1, "training set is empty");
    RoundSchedules s;
    const std::size_t batch = t.batch_size == 0 ? train_size : std::min(t.batch_size, train_size);
    s.steps_per_epoch = (train_size + batch - 1) / batch;
    s.iterations = t.epochs * s.steps_per_epoch;
    s.single = LearningRateSchedule::step_decay(t.learning_rate, t.decay_factor, t.decay_epochs * s.steps_per_epoch,
                                                s.iterations);
    s.doubled = LearningRateSchedule::step_decay(t.learning_rate, t.decay_factor,
                                                 2 * t.decay_epochs * s.steps_per_epoch, 2 * s.iterations);
    return s;
}

struct ExperimentState {
    std::size_t round = 0;             // last completed round
    std::optional<WeightVector> base;  // weights the edge holds for packet application
    std::optional<WeightVector> serving;
    double serving_val_acc = 0.0;
    std::size_t last_reinit_size = 0;
};

struct RoundOutcome {
    RoundLog log;
    std::vector<std::uint8_t> packet;  // bytes actually sent
    WeightVector start;                // weights training started from
    WeightVector server_candidate;     // before transport
    WeightVector edge_candidate;       // after encode/decode/apply
    bool accepted = true;
};

class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg)
        : cfg_(std::move(cfg)),
          stream_((cfg_.validate(), cfg_.data), cfg_.rounds, cfg_.seed),
          init_seed_(substream(cfg_.seed, "init")) {
        detail::require(stream_.input_dim() == cfg_.arch.input_dim(), "network input size differs from data dimension");
    }

    const ExperimentConfig& config() const { return cfg_; }
    const ExperimentState& state() const { return state_; }
    const DataStream& stream() const { return stream_; }
    std::uint64_t init_seed() const { return init_seed_; }
    bool done() const { return state_.round >= cfg_.rounds; }

    TrainPlan plan(const Dataset& data, std::size_t round, const LearningRateSchedule& schedule) const {
        TrainPlan p;
        p.data = &data;
        p.batch_size = cfg_.training.batch_size;
        p.shuffle_seed = substream(cfg_.seed, "shuffle", round);
        p.optimizer = cfg_.training.optimizer;
        p.schedule = schedule;
        return p;
    }

    RoundOutcome run_round() {
        detail::require(!done(), "experiment already finished");
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t r = state_.round + 1;
        const Architecture& arch = cfg_.arch;
        const Dataset train = stream_.training_set(r);
        const RoundSchedules sched = round_schedules(train.size(), cfg_.training);
        const unsigned vbits = cfg_.comm.weight_bits;
        const auto round_id = static_cast<std::uint32_t>(r);

        RoundOutcome out;
        out.log.round = r;
        out.log.method = cfg_.method;
        out.log.uploaded_samples = stream_.uploaded_samples(r);

        const WeightVector init = init_weights(arch, init_seed_);
        UpdatePacket packet;
        switch (cfg_.method) {
            case Method::fu: {
                out.start = init;
                out.server_candidate = train_full(init, plan(train, r, sched.doubled));
                packet = make_full_packet(round_id, out.server_candidate, vbits);
                break;
            }
            case Method::dpu: {
                const bool reinit = r == 1 || reinit_due(train.size(), state_.last_reinit_size);
                if (reinit) state_.last_reinit_size = train.size();
                out.start = reinit ? init : *state_.base;
                PartialUpdateResult res = dpu_round(out.start, plan(train, r, sched.single), cfg_.k);
                out.server_candidate = std::move(res.w_new);
                packet = make_sparse_packet(round_id, out.server_candidate, res.mask, vbits,
                                            reinit ? std::optional(init_seed_) : std::nullopt);
                break;
            }
            case Method::gcpu: {
                out.start = r == 1 ? init : *state_.base;
                PartialUpdateResult res = gcpu_round(out.start, plan(train, r, sched.single), cfg_.k);
                out.server_candidate = std::move(res.w_new);
                packet = make_sparse_packet(round_id, out.server_candidate, res.mask, vbits,
                                            r == 1 ? std::optional(init_seed_) : std::nullopt);
                break;
            }
            case Method::rpu: {
                out.start = r == 1 ? init : *state_.base;
                const Mask mask = rpu_mask(arch, cfg_.k, substream(cfg_.seed, "rpu-mask", r));
                PartialUpdateResult res = sparse_finetune(out.start, out.start, mask, plan(train, r, sched.doubled));
                out.server_candidate = std::move(res.w_new);
                packet = make_sparse_packet(round_id, out.server_candidate, mask, vbits,
                                            r == 1 ? std::optional(init_seed_) : std::nullopt);
                break;
            }
        }

        out.log.reinit = packet.frame_type == FrameType::reinit_sparse;
        out.log.mask_count = packet.k_count();
        out.packet = encode_packet(packet);
        const WeightVector edge_base = state_.base.value_or(WeightVector(arch));
        out.edge_candidate = apply_packet(edge_base, decode_packet(out.packet), arch);

        const double cand_val = accuracy(out.edge_candidate, stream_.validation());
        const bool gated = cfg_.method != Method::fu && state_.serving.has_value();
        out.accepted = !gated || accept_update(cand_val, state_.serving_val_acc);

        if (out.accepted) {
            state_.base = out.edge_candidate;
            state_.serving = out.edge_candidate;
            state_.serving_val_acc = cand_val;
            out.log.frame = packet.frame_type;
        } else if (cfg_.reject == RejectPolicy::skip) {
            out.packet = encode_packet(make_skip_packet(round_id, static_cast<std::uint32_t>(arch.weight_count())));
            out.log.skipped = true;
            out.log.mask_count = 0;
            out.log.frame = FrameType::skip;
        } else {
            state_.base = out.edge_candidate;
            out.log.skipped = true;
            out.log.frame = packet.frame_type;
        }

        out.log.bytes_sent = out.packet.size();
        out.log.train_loss = loss(*state_.serving, train);
        out.log.val_acc = state_.serving_val_acc;
        out.log.test_acc = accuracy(*state_.serving, stream_.test());
        state_.round = r;
        out.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return out;
    }

private:
    ExperimentConfig cfg_;
    DataStream stream_;
    std::uint64_t init_seed_;
    ExperimentState state_;
};

inline std::vector<RoundLog> run_experiment(const ExperimentConfig& cfg) {
    Experiment ex(cfg);
    std::vector<RoundLog> logs;
    logs.reserve(cfg.rounds);
    while (!ex.done()) logs.push_back(ex.run_round().log);
    return logs;
}

// Rewind losses of several masks applied to one shared full update.
struct AblationResult {
    double loss_full = 0.0;
    double loss_global = 0.0;
    double loss_local = 0.0;
    double loss_combined = 0.0;
    double loss_random = 0.0;
};

// One round of the rewinding ablation: train on D^1 from the fixed
// initialization, then run the full-update step on D^2 and rewind with each
// metric's top-kI mask. Needs at least two rounds of data.
inline AblationResult ablate_rewind(ExperimentConfig cfg) {
    cfg.rounds = std::max<std::size_t>(cfg.rounds, 2);
    cfg.validate();
    const DataStream stream(cfg.data, cfg.rounds, cfg.seed);
    const Architecture& arch = cfg.arch;
    const Dataset d1 = stream.training_set(1);
    const Dataset d2 = stream.training_set(2);

    auto make_plan = [&](const Dataset& d, std::size_t round, const LearningRateSchedule& s) {
        TrainPlan p;
        p.data = &d;
        p.batch_size = cfg.training.batch_size;
        p.shuffle_seed = substream(cfg.seed, "shuffle", round);
        p.optimizer = cfg.training.optimizer;
        p.schedule = s;
        return p;
    };

    const WeightVector w = train_full(init_weights(arch, substream(cfg.seed, "init")),
                                      make_plan(d1, 1, round_schedules(d1.size(), cfg.training).doubled));
    const FullUpdate fu =
        full_update_step(w, make_plan(d2, 2, round_schedules(d2.size(), cfg.training).single).reseeded(detail::kFirstStepTag));

    const ContributionVector cg = global_contribution(w, fu.w_f);
    const ContributionVector cl = fu.trace.local_contribution();
    const ContributionVector cc = combine(cg, cl);
    const std::size_t count = target_k_count(w.size(), cfg.k);

    AblationResult res;
    res.loss_full = fu.train_loss_full;
    res.loss_global = loss(rewind(w, fu.w_f, select_top(cg.values, count)), d2);
    res.loss_local = loss(rewind(w, fu.w_f, select_top(cl.values, count)), d2);
    res.loss_combined = loss(rewind(w, fu.w_f, select_top(cc.values, count)), d2);
    res.loss_random =
        loss(rewind(w, fu.w_f, uniform_random_mask(w.size(), count, substream(cfg.seed, "ablation-random"))), d2);
    return res;
}

}  // namespace dpu
