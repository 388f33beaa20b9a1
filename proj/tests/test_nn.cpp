#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpdense/layers.hpp"
#include "gpdense/model.hpp"
#include "gpdense/train.hpp"

using namespace gpdense;

namespace {

using T3 = Tensor<double>;

T3 random_tensor(std::vector<std::size_t> dims, Rng& rng, double scale = 1.0) {
    T3 t(std::move(dims));
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : t.values()) v = n(rng);
    return t;
}

// Values that are pairwise at least 0.05 apart, so pooling choices survive
// the finite-difference step.
T3 distinct_tensor(std::vector<std::size_t> dims, Rng& rng) {
    T3 t(std::move(dims));
    std::vector<double> vals(t.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05 * static_cast<double>(i) - 1.0;
    std::shuffle(vals.begin(), vals.end(), rng);
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
}

double dot(const T3& a, const T3& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    return denom < 1e-12 ? 0.0 : std::sqrt(diff) / denom;
}

// Central differences of loss() w.r.t. every entry of `x`.
std::vector<double> numeric_grad(T3& x, const std::function<double()>& loss, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = loss();
        x[i] = keep - h;
        const double down = loss();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

std::vector<double> as_vec(const T3& t) { return {t.values().begin(), t.values().end()}; }

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("conv1d gradients match finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t B = 1 + trial % 3, C = 1 + trial % 4, O = 2 + trial % 3, L = 1 + trial % 7;
        Conv1d<double> conv(static_cast<int>(C), static_cast<int>(O));
        conv.init(rng);
        conv.bias().value = random_tensor({O}, rng);
        T3 x = random_tensor({B, C, L}, rng);
        const T3 r = random_tensor({B, O, L}, rng);
        const auto loss = [&] { return dot(conv.forward(x), r); };

        conv.forward(x);
        conv.weight().zero_grad();
        conv.bias().zero_grad();
        const T3 dx = conv.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
        CHECK(rel_error(as_vec(conv.weight().grad), numeric_grad(conv.weight().value, loss)) < kTol);
        CHECK(rel_error(as_vec(conv.bias().grad), numeric_grad(conv.bias().value, loss)) < kTol);
    }
}

TEST_CASE("batch norm gradients match finite differences in train mode") {
    Rng rng(12);
    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t B = 2 + trial % 3, C = 1 + trial % 3, L = 1 + trial % 5;
        BatchNorm1d<double> bn(static_cast<int>(C));
        bn.init();
        bn.gamma().value = random_tensor({C}, rng);
        bn.beta().value = random_tensor({C}, rng);
        T3 x = random_tensor({B, C, L}, rng, 2.0);
        const T3 r = random_tensor({B, C, L}, rng);
        const auto loss = [&] { return dot(bn.forward(x, Mode::Train), r); };

        bn.forward(x, Mode::Train);
        bn.gamma().zero_grad();
        bn.beta().zero_grad();
        const T3 dx = bn.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
        CHECK(rel_error(as_vec(bn.gamma().grad), numeric_grad(bn.gamma().value, loss)) < kTol);
        CHECK(rel_error(as_vec(bn.beta().grad), numeric_grad(bn.beta().value, loss)) < kTol);
    }
}

TEST_CASE("batch norm eval mode uses running statistics") {
    BatchNorm1d<double> bn(1, 1e-5, 0.1);
    bn.init();
    T3 x({2, 1, 2});
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 6;
    bn.forward(x, Mode::Train);
    // batch mean 3, unbiased variance 14/3
    CHECK(bn.running_mean()[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(bn.running_var()[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0).epsilon(1e-12));
    const T3 y = bn.forward(x, Mode::Eval);
    CHECK(y[0] == doctest::Approx((1 - 0.3) / std::sqrt(bn.running_var()[0] + 1e-5)).epsilon(1e-12));
}

TEST_CASE("relu gradients match finite differences") {
    Rng rng(13);
    for (int trial = 0; trial < kInstances; ++trial) {
        T3 x = distinct_tensor({2, 3, static_cast<std::size_t>(1 + trial % 6)}, rng);
        for (double& v : x.values())
            if (std::abs(v) < 1e-3) v = 0.025;
        const T3 r = random_tensor(x.dims(), rng);
        Relu<double> relu;
        const auto loss = [&] { return dot(relu.forward(x), r); };
        relu.forward(x);
        const T3 dx = relu.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
    }
}

TEST_CASE("max pool gradients match finite differences") {
    Rng rng(14);
    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t L = 1 + trial % 9;
        T3 x = distinct_tensor({2, 2, L}, rng);
        MaxPool2<double> pool;
        const T3 y = pool.forward(x);
        REQUIRE(y.dim(2) == (L + 1) / 2);
        const T3 r = random_tensor(y.dims(), rng);
        const auto loss = [&] { return dot(pool.forward(x), r); };
        pool.forward(x);
        const T3 dx = pool.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
    }
}

TEST_CASE("max pool ceil mode and tie order") {
    T3 x({1, 1, 5});
    const double v[] = {1, 1, 0, 3, 7};
    std::copy(v, v + 5, x.data());
    MaxPool2<double> pool;
    const T3 y = pool.forward(x);
    REQUIRE(y.dim(2) == 3);
    CHECK(y[0] == 1);
    CHECK(y[1] == 3);
    CHECK(y[2] == 7);
    T3 dy({1, 1, 3}, 1.0);
    const T3 dx = pool.backward(dy);
    CHECK(as_vec(dx) == std::vector<double>{1, 0, 0, 1, 1});
}

TEST_CASE("k-max pool keeps the k largest in temporal order") {
    T3 x({1, 1, 5});
    const double v[] = {1, 3, 2, 5, 4};
    std::copy(v, v + 5, x.data());
    KMaxPool<double> pool(3);
    CHECK(as_vec(pool.forward(x)) == std::vector<double>{3, 5, 4});

    // ties resolve to the earlier position
    const double w[] = {2, 2, 2, 1, 2};
    std::copy(w, w + 5, x.data());
    pool.forward(x);
    CHECK(pool.selected() == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("k-max pool gradients match finite differences") {
    Rng rng(15);
    for (int trial = 0; trial < kInstances; ++trial) {
        const int k = 1 + trial % 4;
        T3 x = distinct_tensor({2, 3, static_cast<std::size_t>(k + trial % 5)}, rng);
        KMaxPool<double> pool(k);
        const T3 r = random_tensor(pool.forward(x).dims(), rng);
        const auto loss = [&] { return dot(pool.forward(x), r); };
        pool.forward(x);
        const T3 dx = pool.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(16);
    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t R = 1 + trial % 4, I = 1 + trial % 6, O = 1 + trial % 5;
        Linear<double> fc(static_cast<int>(I), static_cast<int>(O));
        fc.init(rng);
        fc.bias().value = random_tensor({O}, rng);
        T3 x = random_tensor({R, I}, rng);
        const T3 r = random_tensor({R, O}, rng);
        const auto loss = [&] { return dot(fc.forward(x), r); };
        fc.forward(x);
        fc.weight().zero_grad();
        fc.bias().zero_grad();
        const T3 dx = fc.backward(r);
        CHECK(rel_error(as_vec(dx), numeric_grad(x, loss)) < kTol);
        CHECK(rel_error(as_vec(fc.weight().grad), numeric_grad(fc.weight().value, loss)) < kTol);
        CHECK(rel_error(as_vec(fc.bias().grad), numeric_grad(fc.bias().value, loss)) < kTol);
    }
}

TEST_CASE("softmax cross-entropy gradients match finite differences") {
    Rng rng(17);
    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t R = 1 + trial % 5, K = 2 + trial % 4;
        T3 logits = random_tensor({R, K}, rng, 3.0);
        std::vector<int> labels(R);
        for (auto& l : labels) l = static_cast<int>(uniform_index(rng, K));
        T3 d;
        softmax_cross_entropy(logits, labels, &d);
        const auto loss = [&] { return softmax_cross_entropy<double>(logits, labels, nullptr); };
        CHECK(rel_error(as_vec(d), numeric_grad(logits, loss)) < kTol);
    }
}

TEST_CASE("softmax cross-entropy value") {
    T3 logits({1, 3});
    logits[0] = 1;
    logits[1] = 2;
    logits[2] = 3;
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    CHECK(softmax_cross_entropy<double>(logits, {0}, nullptr) == doctest::Approx(expected).epsilon(1e-12));
    // stable for large logits
    logits[2] = 1000;
    CHECK(std::isfinite(softmax_cross_entropy<double>(logits, {2}, nullptr)));
}

TEST_CASE("embedding gradient and frozen pad row") {
    Rng rng(18);
    Embedding<double> emb(5, 3);
    emb.init(rng);
    for (int c = 0; c < 3; ++c) CHECK(emb.weight().value.at(0, c) == 0.0);
    TokenBatch b{2, 3, {1, 0, 4, 4, 2, 0}, {0, 1}};
    const T3 r = random_tensor({2, 3, 3}, rng);
    const auto loss = [&] { return dot(emb.forward(b), r); };
    emb.forward(b);
    emb.weight().zero_grad();
    emb.backward(r);
    std::vector<double> num = numeric_grad(emb.weight().value, loss);
    for (int c = 0; c < 3; ++c) num[static_cast<std::size_t>(c)] = 0.0;  // PAD row is not trained
    CHECK(rel_error(as_vec(emb.weight().grad), num) < kTol);
}

TEST_CASE("kaiming init variance") {
    Rng rng(19);
    T3 w({256, 128, 3});
    kaiming_normal(w, 128 * 3, rng);
    double m = 0, v = 0;
    for (double x : w.values()) m += x;
    m /= static_cast<double>(w.size());
    for (double x : w.values()) v += (x - m) * (x - m);
    v /= static_cast<double>(w.size() - 1);
    CHECK(std::abs(v / (2.0 / 384.0) - 1.0) < 0.05);
    CHECK(std::abs(m) < 0.01);
}

TEST_CASE("learning-rate halving schedule") {
    TrainConfig cfg;
    const double expected[] = {0.01, 0.01, 0.01, 0.005, 0.005, 0.005, 0.0025, 0.0025, 0.0025, 0.00125};
    for (int e = 0; e < 10; ++e) CHECK(lr_at_epoch(e, cfg) == expected[e]);
}

TEST_CASE("momentum hand trace") {
    Param<double> p("w", {1});
    p.value[0] = 1.0;
    std::vector<Param<double>*> ps{&p};
    p.grad[0] = 1.0;
    sgd_momentum_step(ps, 0.1, 0.9);
    CHECK(std::abs(p.value[0] - 0.9) < 1e-12);
    sgd_momentum_step(ps, 0.1, 0.9);
    CHECK(std::abs(p.value[0] - 0.71) < 1e-12);
}

namespace {

PlanConfig tiny_plan_config() {
    PlanConfig pc;
    pc.stem.alphabet_size = 10;
    pc.stem.embed_dim = 3;
    pc.stem.max_len = 12;
    pc.stem.out_channels = 4;
    pc.channels = 4;
    pc.growth = 3;
    pc.head = {2, 6, 5, 3};
    return pc;
}

TokenBatch tiny_batch(Rng& rng, std::size_t B, std::size_t L) {
    TokenBatch b{B, L, std::vector<std::uint8_t>(B * L), std::vector<int>(B)};
    for (auto& c : b.ids) c = static_cast<std::uint8_t>(uniform_index(rng, 10));
    for (auto& l : b.labels) l = static_cast<int>(uniform_index(rng, 3));
    return b;
}

}  // namespace

TEST_CASE("whole-network gradients match finite differences") {
    for (const char* text : {"E", "S(2;E,E)", "P(1;E,E)", "S(3;P(1;E,E),P(2;E,E))", "P(2;S(1;E,E),E)"}) {
        CAPTURE(text);
        const NetworkPlan plan = decode(Genotype::parse(text), tiny_plan_config());
        REQUIRE(validate_plan(plan).empty());
        DenseNetModel<double> model(plan);
        Rng rng(21);
        model.init(rng);
        // Zero biases on all-zero ReLU rows put pre-activations exactly on the kink.
        for (auto& [name, p] : model.named_params())
            if (name.ends_with("bias")) p->value = random_tensor(p->value.dims(), rng, 0.5);
        const TokenBatch batch = tiny_batch(rng, 4, 12);
        const auto loss = [&] {
            return softmax_cross_entropy<double>(model.forward(batch, Mode::Train), batch.labels, nullptr);
        };
        model.zero_grad();
        T3 d;
        softmax_cross_entropy(model.forward(batch, Mode::Train), batch.labels, &d);
        model.backward(d);
        for (auto& [name, p] : model.named_params()) {
            CAPTURE(name);
            std::vector<double> num = numeric_grad(p->value, loss);
            if (name == "stem.embedding.weight")
                for (std::size_t c = 0; c < 3; ++c) num[c] = 0.0;
            CHECK(rel_error(as_vec(p->grad), num) < kTol);
        }
    }
}

TEST_CASE("ancestor parameter count") {
    // embedding 70*16, stem conv 16*32*3+32, two units (BN 2*32 + conv 32*32*3+32,
    // BN 2*64 + conv 64*32*3+32), transition 96*32*3+32, head 256*1024+1024 +
    // 1024*1024+1024 + 1024*4+4.
    const NetworkPlan plan = decode(Genotype{});
    CHECK(count_parameters(plan) == 1338276);
    DenseNetModel<float> model(plan);
    CHECK(model.parameter_count() == 1338276);
}

TEST_CASE("block dropout zeroes the block's new features in training only") {
    PlanConfig pc = tiny_plan_config();
    const NetworkPlan plan = decode(Genotype::parse("S(1,d=0.5;E,E)"), pc);
    DenseNetModel<double> model(plan);
    Rng init(3);
    model.init(init);
    Rng rng(4);
    const TokenBatch batch = tiny_batch(rng, 2, 12);
    int dropped = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        model.forward(batch, Mode::Train, &rng);
        dropped += model.last_dropped().at(1) ? 1 : 0;
        CHECK_FALSE(model.last_dropped().at(0));
    }
    CHECK(std::abs(dropped - n / 2) < 3 * std::sqrt(n * 0.25));
    model.forward(batch, Mode::Eval);
    CHECK_FALSE(model.last_dropped().at(1));
}

TEST_CASE("k-max pool matches a brute-force oracle") {
    Rng rng(40);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t L = 1 + uniform_index(rng, 20);
        const int k = 1 + static_cast<int>(uniform_index(rng, L));
        T3 x({1, 1, L});
        // small integer values force plenty of ties
        for (double& v : x.values()) v = static_cast<double>(uniform_index(rng, 5));
        std::vector<std::size_t> idx(L);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] > x[b]; });
        idx.resize(static_cast<std::size_t>(k));
        std::sort(idx.begin(), idx.end());
        KMaxPool<double> pool(k);
        const T3 y = pool.forward(x);
        CHECK(pool.selected() == idx);
        for (std::size_t i = 0; i < idx.size(); ++i) CHECK(y[i] == x[idx[i]]);
    }
}

TEST_CASE("batch norm normalizes each channel in train mode") {
    Rng rng(41);
    BatchNorm1d<double> bn(3);
    bn.init();
    T3 x = random_tensor({8, 3, 10}, rng, 4.0);
    for (double& v : x.values()) v += 7.0;
    const T3 y = bn.forward(x, Mode::Train);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0, v = 0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t l = 0; l < 10; ++l) m += y.at(b, c, l);
        m /= 80;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t l = 0; l < 10; ++l) v += (y.at(b, c, l) - m) * (y.at(b, c, l) - m);
        v /= 80;
        CHECK(std::abs(m) < 1e-9);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(42);
    const T3 p = softmax(random_tensor({6, 5}, rng, 10.0));
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(p.at(r, c) >= 0.0);
            s += p.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fresh model starts at uniform predictions") {
    for (const char* text : {"E", "S(3;P(2;E,E),S(4;E,E))"}) {
        const NetworkPlan plan = decode(Genotype::parse(text), tiny_plan_config());
        DenseNetModel<double> model(plan);
        Rng rng(43);
        model.init(rng);
        const TokenBatch batch = tiny_batch(rng, 5, 12);
        const double loss = softmax_cross_entropy<double>(model.forward(batch, Mode::Train), batch.labels, nullptr);
        CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
}

TEST_CASE("one small SGD step lowers the batch loss") {
    const NetworkPlan plan = decode(Genotype::parse("S(2;E,E)"), tiny_plan_config());
    DenseNetModel<double> model(plan);
    Rng rng(44);
    model.init(rng);
    const TokenBatch batch = tiny_batch(rng, 6, 12);
    // Eval mode keeps batch statistics out of the comparison.
    const auto loss = [&] { return softmax_cross_entropy<double>(model.forward(batch, Mode::Eval), batch.labels, nullptr); };
    const double before = loss();
    model.zero_grad();
    T3 d;
    softmax_cross_entropy(model.forward(batch, Mode::Eval), batch.labels, &d);
    model.backward(d);
    sgd_momentum_step(model.params(), 1e-3, 0.9);
    CHECK(loss() < before);
}

TEST_CASE("training is reproducible for a fixed seed") {
    SyntheticSizes sizes;
    sizes.train = 96;
    sizes.validation = 32;
    sizes.test = 32;
    sizes.length = 12;
    const DatasetSplit data = synthetic_task("trigram4", sizes, 45);
    PlanConfig pc = tiny_plan_config();
    pc.stem.alphabet_size = data.alphabet.size();
    pc.head.num_classes = data.num_classes;
    const NetworkPlan plan = decode(Genotype::parse("P(2,d=0.3;E,S(1;E,E))"), pc);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.data_fraction = 1.0;
    cfg.seed = 46;
    const FitnessRecord a = train_model(plan, data, cfg);
    const FitnessRecord b = train_model(plan, data, cfg);
    CHECK_FALSE(a.failed);
    CHECK(a.val_accuracy.size() == 3);
    CHECK(a.fitness == *std::max_element(a.val_accuracy.begin(), a.val_accuracy.end()));
    CHECK(a.same_result(b));
    CHECK(record_to_json(a).dump() == record_to_json(b).dump());
    cfg.seed = 47;
    CHECK(record_to_json(train_model(plan, data, cfg)).dump() != record_to_json(a).dump());
}
