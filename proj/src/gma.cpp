#include "milbench/gma.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

#include <fmt/format.h>

#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/rng.hpp"

namespace milbench {

GmaParams GmaParams::zeros(int input_dim, int hidden, int outputs) {
    if (input_dim <= 0 || hidden <= 0 || outputs <= 0) {
        fail(ErrorCode::ShapeError, "GMA dimensions must be positive");
    }
    GmaParams p;
    p.tanh_proj = RowMatrix::Zero(hidden, input_dim);
    p.gate_proj = RowMatrix::Zero(hidden, input_dim);
    p.attn_vec = Eigen::VectorXd::Zero(hidden);
    p.head_weight = RowMatrix::Zero(outputs, input_dim);
    p.head_bias = Eigen::VectorXd::Zero(outputs);
    return p;
}

std::vector<std::span<double>> GmaParams::tensors() {
    return {
        {tanh_proj.data(), static_cast<std::size_t>(tanh_proj.size())},
        {gate_proj.data(), static_cast<std::size_t>(gate_proj.size())},
        {attn_vec.data(), static_cast<std::size_t>(attn_vec.size())},
        {head_weight.data(), static_cast<std::size_t>(head_weight.size())},
        {head_bias.data(), static_cast<std::size_t>(head_bias.size())},
    };
}

std::vector<std::span<const double>> GmaParams::tensors() const {
    return {
        {tanh_proj.data(), static_cast<std::size_t>(tanh_proj.size())},
        {gate_proj.data(), static_cast<std::size_t>(gate_proj.size())},
        {attn_vec.data(), static_cast<std::size_t>(attn_vec.size())},
        {head_weight.data(), static_cast<std::size_t>(head_weight.size())},
        {head_bias.data(), static_cast<std::size_t>(head_bias.size())},
    };
}

void GmaParams::validate() const {
    const auto h = tanh_proj.rows();
    const auto d = tanh_proj.cols();
    const auto c = head_weight.rows();
    if (h == 0 || d == 0 || c == 0 || gate_proj.rows() != h || gate_proj.cols() != d || attn_vec.size() != h ||
        head_weight.cols() != d || head_bias.size() != c) {
        fail(ErrorCode::ShapeError, "inconsistent GMA parameter shapes");
    }
    if (!tanh_proj.allFinite() || !gate_proj.allFinite() || !attn_vec.allFinite() || !head_weight.allFinite() ||
        !head_bias.allFinite()) {
        fail(ErrorCode::NumericalError, "non-finite GMA parameter");
    }
}

namespace {

struct Activations {
    RowMatrix tanh_act; // n x h
    RowMatrix gate_act; // n x h
    RowMatrix gated;    // n x h
    GmaForward out;
};

void check_bag(const GmaParams& p, const RowMatrix& features) {
    if (features.rows() == 0) {
        fail(ErrorCode::ShapeError, "bag has no tiles");
    }
    if (features.cols() != p.input_dim()) {
        fail(ErrorCode::ShapeError,
             fmt::format("bag feature dim {} does not match model dim {}", features.cols(), p.input_dim()));
    }
    if (!features.allFinite()) {
        fail(ErrorCode::InvalidData, "non-finite tile feature");
    }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
    const double top = x.maxCoeff();
    Eigen::VectorXd e = (x.array() - top).exp();
    return e / e.sum();
}

Activations forward_impl(const GmaParams& p, const RowMatrix& h) {
    check_bag(p, h);
    Activations act;
    // tanh(x) = 1 - 2 / (exp(2x) + 1) keeps both activations on Eigen's vectorised exp
    act.tanh_act = 1.0 - 2.0 * ((2.0 * (h * p.tanh_proj.transpose())).array().exp() + 1.0).inverse();
    act.gate_act = ((-(h * p.gate_proj.transpose()).array()).exp() + 1.0).inverse();
    act.gated = act.tanh_act.cwiseProduct(act.gate_act);
    const Eigen::VectorXd scores = act.gated * p.attn_vec;
    act.out.attention = softmax(scores);
    act.out.embedding = h.transpose() * act.out.attention;
    act.out.output = p.head_weight * act.out.embedding + p.head_bias;
    return act;
}

LossAndGrad loss_and_grad_impl(const GmaParams& p, const RowMatrix& h, double target, TaskKind kind) {
    Activations act = forward_impl(p, h);
    const Eigen::VectorXd& o = act.out.output;
    const auto c = o.size();

    LossAndGrad result;
    Eigen::VectorXd delta(c);
    if (kind == TaskKind::Classification) {
        const auto label = static_cast<Eigen::Index>(target);
        if (target < 0 || label >= c || static_cast<double>(label) != target) {
            fail(ErrorCode::InvalidInput, fmt::format("class target {} outside [0, {})", target, c));
        }
        const double top = o.maxCoeff();
        const double log_norm = top + std::log((o.array() - top).exp().sum());
        result.loss = log_norm - o(label);
        delta = (o.array() - log_norm).exp();
        delta(label) -= 1.0;
    } else {
        if (c != 1) {
            fail(ErrorCode::ShapeError, "regression head must have exactly one output");
        }
        const double diff = o(0) - target;
        result.loss = 0.5 * diff * diff;
        delta(0) = diff;
    }

    GmaParams& g = result.grads;
    const Eigen::VectorXd& alpha = act.out.attention;
    g.head_weight = delta * act.out.embedding.transpose();
    g.head_bias = delta;
    const Eigen::VectorXd d_embed = p.head_weight.transpose() * delta;
    const Eigen::VectorXd d_alpha = h * d_embed;
    const Eigen::VectorXd d_score = alpha.cwiseProduct((d_alpha.array() - alpha.dot(d_alpha)).matrix());
    g.attn_vec = act.gated.transpose() * d_score;
    const RowMatrix d_gated = d_score * p.attn_vec.transpose();
    const RowMatrix d_pre_tanh =
        d_gated.cwiseProduct(act.gate_act).cwiseProduct((1.0 - act.tanh_act.array().square()).matrix());
    const RowMatrix d_pre_gate = d_gated.cwiseProduct(act.tanh_act)
                                     .cwiseProduct(act.gate_act)
                                     .cwiseProduct((1.0 - act.gate_act.array()).matrix());
    g.tanh_proj = d_pre_tanh.transpose() * h;
    g.gate_proj = d_pre_gate.transpose() * h;
    result.forward = std::move(act.out);
    return result;
}

} // namespace

GmaForward gma_forward(const GmaParams& p, const Bag& bag) {
    return forward_impl(p, bag.features).out;
}

LossAndGrad loss_and_grad(const GmaParams& p, const Bag& bag, TaskKind kind) {
    return loss_and_grad_impl(p, bag.features, bag.target, kind);
}

GmaParams init_gma(int input_dim, int hidden, int outputs, std::uint64_t seed) {
    GmaParams p = GmaParams::zeros(input_dim, hidden, outputs);
    Rng rng(seed);
    auto fill = [&](double* data, Eigen::Index count, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < count; ++i) {
            data[i] = rng.uniform(-bound, bound);
        }
    };
    fill(p.tanh_proj.data(), p.tanh_proj.size(), input_dim);
    fill(p.gate_proj.data(), p.gate_proj.size(), input_dim);
    fill(p.attn_vec.data(), p.attn_vec.size(), hidden);
    fill(p.head_weight.data(), p.head_weight.size(), input_dim);
    return p;
}

namespace {

// Probabilities (classification) or raw outputs (regression) per bag.
Eigen::MatrixXd predict(const GmaParams& p, const BagRefs& bags, TaskKind kind) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(bags.size()), p.outputs());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const Eigen::VectorXd o = forward_impl(p, bags[i]->features).out.output;
        out.row(static_cast<Eigen::Index>(i)) = kind == TaskKind::Classification ? softmax(o) : o;
    }
    return out;
}

} // namespace

double evaluate_slide_model(const GmaParams& p, const BagRefs& val, TaskKind kind,
                            const std::optional<TargetStats>& stats, double* rmse_original) {
    if (val.empty()) {
        fail(ErrorCode::InvalidInput, "empty validation set");
    }
    const Eigen::MatrixXd pred = predict(p, val, kind);
    if (kind == TaskKind::Classification) {
        std::vector<int> labels;
        labels.reserve(val.size());
        for (const Bag* bag : val) {
            labels.push_back(bag->label());
        }
        if (pred.cols() == 2) {
            std::vector<double> scores(val.size());
            for (std::size_t i = 0; i < val.size(); ++i) {
                scores[i] = pred(static_cast<Eigen::Index>(i), 1);
            }
            return binary_auc(scores, labels);
        }
        return macro_ovr_auc(pred, labels).value;
    }

    if (!stats) {
        fail(ErrorCode::InvalidInput, "regression evaluation needs target statistics");
    }
    std::vector<double> preds(val.size());
    std::vector<double> targets(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) {
        preds[i] = stats->denormalize(pred(static_cast<Eigen::Index>(i), 0));
        targets[i] = val[i]->target;
    }
    if (rmse_original) {
        *rmse_original = rmse(preds, targets, *stats, RmseUnits::Original);
    }
    return -rmse(preds, targets, *stats, RmseUnits::Normalized);
}

TrainResult train_slide_model(const BagRefs& train, const BagRefs& val, TaskKind kind, int classes,
                              std::uint64_t seed, const TrainOptions& options) {
    if (train.empty() || val.empty()) {
        fail(ErrorCode::InvalidInput, "train_slide_model needs nonempty train and validation sets");
    }
    const auto dim = train.front()->features.cols();
    for (const BagRefs* set : {&train, &val}) {
        for (const Bag* bag : *set) {
            if (bag->features.cols() != dim) {
                fail(ErrorCode::ShapeError, "bags disagree on feature dim");
            }
        }
    }
    const int outputs = kind == TaskKind::Regression ? 1 : classes;
    if (kind == TaskKind::Classification && classes < 2) {
        fail(ErrorCode::InvalidInput, "classification needs at least two classes");
    }

    TrainResult result;
    std::vector<double> targets;
    targets.reserve(train.size());
    for (const Bag* bag : train) {
        targets.push_back(bag->target);
    }
    if (kind == TaskKind::Regression) {
        result.target_stats = TargetStats::from(targets);
        for (double& t : targets) {
            t = result.target_stats->normalize(t);
        }
    }

    OptimHyper hyper = options.optim;
    hyper.total_steps = static_cast<std::int64_t>(options.epochs) * static_cast<std::int64_t>(train.size());
    hyper.warmup_steps = std::llround(options.warmup_frac * static_cast<double>(hyper.total_steps));

    result.params = init_gma(static_cast<int>(dim), options.hidden, outputs, hash_combine(seed, "init"));
    AdamW optimizer(hyper);
    Rng order_rng(hash_combine(seed, "order"));
    std::vector<std::size_t> order(train.size());

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        for (const std::size_t idx : order) {
            LossAndGrad lg = loss_and_grad_impl(result.params, train[idx]->features, targets[idx], kind);
            if (!std::isfinite(lg.loss)) {
                fail(ErrorCode::NumericalError, fmt::format("non-finite loss at epoch {}", epoch + 1));
            }
            loss_sum += lg.loss;
            optimizer.step(result.params.tensors(), std::as_const(lg.grads).tensors());
        }
        if (options.track_curve) {
            EpochRecord record{epoch + 1, loss_sum / static_cast<double>(order.size()),
                               std::numeric_limits<double>::quiet_NaN()};
            try {
                record.val_metric = evaluate_slide_model(result.params, val, kind, result.target_stats);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::UndefinedMetric) {
                    throw;
                }
            }
            result.curve.push_back(record);
        }
    }

    result.params.validate();
    result.val_metric =
        evaluate_slide_model(result.params, val, kind, result.target_stats, &result.val_rmse_original);
    return result;
}

namespace {

constexpr char kParamMagic[4] = {'G', 'M', 'A', 'P'};

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) {
        fail(ErrorCode::CorruptFile, "GMA parameter file truncated");
    }
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

} // namespace

void write_gma_params(const GmaParams& p, const std::filesystem::path& path) {
    p.validate();
    std::string out(kParamMagic, 4);
    put<std::uint16_t>(out, 1);
    put<std::uint16_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.input_dim()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.hidden()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.outputs()));
    out.resize(64, '\0');
    for (const auto& t : p.tensors()) {
        out.append(reinterpret_cast<const char*>(t.data()), t.size_bytes());
    }
    write_text_atomic(path, out);
}

GmaParams read_gma_params(const std::filesystem::path& path) {
    const std::string bytes = read_text(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kParamMagic, 4) != 0) {
        fail(ErrorCode::FormatError, path.string() + ": bad magic");
    }
    std::size_t pos = 4;
    if (get<std::uint16_t>(bytes, pos) != 1) {
        fail(ErrorCode::FormatError, path.string() + ": unsupported version");
    }
    get<std::uint16_t>(bytes, pos);
    const auto d = get<std::uint32_t>(bytes, pos);
    const auto h = get<std::uint32_t>(bytes, pos);
    const auto c = get<std::uint32_t>(bytes, pos);
    if (d == 0 || h == 0 || c == 0 || d > (1U << 20) || h > (1U << 20) || c > (1U << 20)) {
        fail(ErrorCode::FormatError, path.string() + ": implausible dimensions");
    }
    GmaParams p = GmaParams::zeros(static_cast<int>(d), static_cast<int>(h), static_cast<int>(c));
    std::size_t expected = 64;
    for (const auto& t : p.tensors()) {
        expected += t.size_bytes();
    }
    if (bytes.size() != expected) {
        fail(ErrorCode::CorruptFile, path.string() + ": payload length mismatch");
    }
    pos = 64;
    for (auto& t : p.tensors()) {
        std::memcpy(t.data(), bytes.data() + pos, t.size_bytes());
        pos += t.size_bytes();
    }
    p.validate();
    return p;
}

std::string curve_csv(const std::vector<EpochRecord>& curve) {
    std::string out = "epoch,train_loss,val_metric\n";
    for (const auto& r : curve) {
        out += fmt::format("{},{},{}\n", r.epoch, r.train_loss, r.val_metric);
    }
    return out;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve) {
    write_text_atomic(path, curve_csv(curve));
}

Bag to_bag(const FeatureMatrix& m, double target) {
    Bag bag;
    bag.features.resize(static_cast<Eigen::Index>(m.rows), m.dim);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        bag.features.data()[i] = m.data[i];
    }
    bag.target = target;
    return bag;
}

} // namespace milbench
