#include "gpdense/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace gpdense {

namespace {

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.dim(1); ++k)
        if (logits.at(r, k) > logits.at(r, best)) best = k;
    return best;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < labels.size(); ++r)
        if (argmax_row(logits, r) == static_cast<std::size_t>(labels[r])) ++n;
    return n;
}

template <typename T>
void clip_gradients(const std::vector<Param<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (const Param<T>* p : params)
        for (T g : p->grad.values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const auto scale = static_cast<T>(max_norm / norm);
    for (Param<T>* p : params)
        for (T& g : p->grad.values()) g *= scale;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(lr0 > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
    if (halve_every < 1) throw std::invalid_argument("halve_every must be >= 1");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw std::invalid_argument("data fraction must be in (0,1]");
    if (clip_norm < 0.0) throw std::invalid_argument("clip norm must be >= 0");
    if (eval_batch_size < 1) throw std::invalid_argument("eval batch size must be >= 1");
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
    return cfg.lr0 * std::ldexp(1.0, -(epoch / cfg.halve_every));
}

template <typename T>
void sgd_momentum_step(const std::vector<Param<T>*>& params, double lr, double mu) {
    const auto lr_t = static_cast<T>(lr), mu_t = static_cast<T>(mu);
    for (Param<T>* p : params) {
        T* w = p->value.data();
        T* v = p->velocity.data();
        const T* g = p->grad.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            v[i] = mu_t * v[i] - lr_t * g[i];
            w[i] += v[i];
        }
    }
}

template void sgd_momentum_step<float>(const std::vector<Param<float>*>&, double, double);
template void sgd_momentum_step<double>(const std::vector<Param<double>*>&, double, double);

bool FitnessRecord::same_result(const FitnessRecord& o) const {
    return seed == o.seed && train_loss == o.train_loss && train_accuracy == o.train_accuracy &&
           val_loss == o.val_loss && val_accuracy == o.val_accuracy && fitness == o.fitness &&
           parameter_count == o.parameter_count && failed == o.failed && failure == o.failure &&
           test_accuracy == o.test_accuracy;
}

nlohmann::json record_to_json(const FitnessRecord& r) {
    nlohmann::json j{{"seed", r.seed},
                     {"fitness", r.fitness},
                     {"parameter_count", r.parameter_count},
                     {"failed", r.failed},
                     {"train_loss", r.train_loss},
                     {"train_accuracy", r.train_accuracy},
                     {"val_loss", r.val_loss},
                     {"val_accuracy", r.val_accuracy}};
    if (r.failed) j["failure"] = r.failure;
    if (r.test_accuracy) j["test_accuracy"] = *r.test_accuracy;
    return j;
}

FitnessRecord record_from_json(const nlohmann::json& j) {
    FitnessRecord r;
    r.seed = j.at("seed");
    r.fitness = j.at("fitness");
    r.parameter_count = j.at("parameter_count");
    r.failed = j.at("failed");
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
    r.val_loss = j.at("val_loss").get<std::vector<double>>();
    r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
    r.failure = j.value("failure", std::string());
    if (j.contains("test_accuracy")) r.test_accuracy = j.at("test_accuracy").get<double>();
    return r;
}

std::string curves_csv(const FitnessRecord& r) {
    std::ostringstream os;
    os << "epoch,split,metric,value\n";
    auto rows = [&](const std::vector<double>& v, const char* split, const char* metric) {
        for (std::size_t e = 0; e < v.size(); ++e) os << e + 1 << ',' << split << ',' << metric << ',' << format_real(v[e]) << '\n';
    };
    rows(r.train_loss, "train", "loss");
    rows(r.train_accuracy, "train", "accuracy");
    rows(r.val_loss, "validation", "loss");
    rows(r.val_accuracy, "validation", "accuracy");
    if (r.test_accuracy) os << r.train_loss.size() << ",test,accuracy," << format_real(*r.test_accuracy) << '\n';
    return os.str();
}

template <typename T>
EvalResult evaluate(DenseNetModel<T>& model, const std::vector<Sample>& samples, int max_len, int batch_size) {
    EvalResult out;
    if (samples.empty()) return out;
    std::size_t correct = 0;
    double loss = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        idx.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            idx.push_back(i);
        const TokenBatch b = make_batch(samples, idx, max_len);
        const Tensor<T> logits = model.forward(b, Mode::Eval);
        loss += softmax_cross_entropy(logits, b.labels, static_cast<Tensor<T>*>(nullptr)) * static_cast<double>(idx.size());
        correct += count_correct(logits, b.labels);
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    out.loss = loss / static_cast<double>(samples.size());
    return out;
}

template EvalResult evaluate<float>(DenseNetModel<float>&, const std::vector<Sample>&, int, int);
template EvalResult evaluate<double>(DenseNetModel<double>&, const std::vector<Sample>&, int, int);

FitnessRecord train_model(const NetworkPlan& plan, const DatasetSplit& data, const TrainConfig& cfg,
                          const TrainOptions& options, std::unique_ptr<DenseNetModel<float>>* model_out) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("training split is empty");
    if (plan.stem.max_len != data.max_len) throw std::invalid_argument("plan input length differs from dataset max_len");
    const auto started = std::chrono::steady_clock::now();

    FitnessRecord rec;
    rec.seed = cfg.seed;
    auto model = std::make_unique<DenseNetModel<float>>(plan);
    Rng init_rng(stable_hash(cfg.seed, 1));
    model->init(init_rng);
    Rng drop_rng(stable_hash(cfg.seed, 2));
    rec.parameter_count = model->parameter_count();
    const auto params = model->params();

    for (int epoch = 0; epoch < cfg.epochs && !rec.failed; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (const auto& idx : batches(data.train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.data_fraction,
                                       cfg.seed, epoch)) {
            const TokenBatch b = make_batch(data.train, idx, data.max_len);
            model->zero_grad();
            const Tensor<float> logits = model->forward(b, Mode::Train, &drop_rng);
            Tensor<float> dlogits;
            const double loss = softmax_cross_entropy(logits, b.labels, &dlogits);
            if (!std::isfinite(loss)) {
                rec.failed = true;
                rec.failure = "non-finite training loss in epoch " + std::to_string(epoch + 1);
                break;
            }
            model->backward(dlogits);
            if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
            sgd_momentum_step(params, lr, cfg.momentum);
            loss_sum += loss * static_cast<double>(idx.size());
            correct += count_correct(logits, b.labels);
            seen += idx.size();
        }
        if (rec.failed) break;
        rec.train_loss.push_back(loss_sum / static_cast<double>(seen));
        rec.train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(seen));
        if (options.evaluate_validation && !data.validation.empty()) {
            const EvalResult ev = evaluate(*model, data.validation, data.max_len, cfg.eval_batch_size);
            if (!std::isfinite(ev.loss)) {
                rec.failed = true;
                rec.failure = "non-finite validation loss in epoch " + std::to_string(epoch + 1);
                break;
            }
            rec.val_loss.push_back(ev.loss);
            rec.val_accuracy.push_back(ev.accuracy);
        }
    }

    if (rec.failed) {
        rec.fitness = 0.0;
    } else {
        for (double a : rec.val_accuracy) rec.fitness = std::max(rec.fitness, a);
        if (options.evaluate_test && !data.test.empty())
            rec.test_accuracy = evaluate(*model, data.test, data.max_len, cfg.eval_batch_size).accuracy;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (model_out) *model_out = std::move(model);
    return rec;
}

}  // namespace gpdense
