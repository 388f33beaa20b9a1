#include "gpdense/model.hpp"

#include <stdexcept>

namespace gpdense {

namespace {

template <typename T>
struct ConvUnit {
    BatchNorm1d<T> bn;
    Relu<T> relu;
    Conv1d<T> conv;

    ConvUnit(int in_channels, int growth) : bn(in_channels), conv(in_channels, growth, 3) {}
};

template <typename T>
struct BlockModule {
    DenseBlockSpec spec;
    std::vector<ConvUnit<T>> units;
    Conv1d<T> transition;
    MaxPool2<T> pool;
    std::vector<int> in_edges;

    explicit BlockModule(const DenseBlockSpec& s) : spec(s), transition(s.concat_channels(), s.out_channels, 3) {
        units.reserve(static_cast<std::size_t>(s.num_conv_blocks));
        for (int i = 0; i < s.num_conv_blocks; ++i) units.emplace_back(s.in_channels + i * s.growth, s.growth);
    }
};

}  // namespace

template <typename T>
struct DenseNetModel<T>::Impl {
    NetworkPlan plan;
    Embedding<T> embedding;
    Conv1d<T> stem_conv;
    std::vector<BlockModule<T>> blocks;
    std::vector<std::vector<MaxPool2<T>>> edge_pools;
    std::vector<int> order;
    std::vector<int> head_in_edges;
    KMaxPool<T> kmax;
    Linear<T> fc1, fc2, fc3;
    Relu<T> relu1, relu2;

    Tensor<T> stem_out;
    std::vector<Tensor<T>> block_out;
    std::vector<bool> dropped;
    std::vector<std::size_t> kmax_dims;

    explicit Impl(const NetworkPlan& p)
        : plan(p),
          embedding(p.stem.alphabet_size, p.stem.embed_dim),
          stem_conv(p.stem.embed_dim, p.stem.out_channels, 3),
          kmax(p.head.k),
          fc1(p.head_in_channels * p.head.k, p.head.fc1),
          fc2(p.head.fc1, p.head.fc2),
          fc3(p.head.fc2, p.head.num_classes) {
        if (auto v = validate_plan(p); !v.empty()) throw std::invalid_argument("invalid network plan: " + v.front());
        blocks.reserve(p.blocks.size());
        for (const DenseBlockSpec& s : p.blocks) {
            blocks.emplace_back(s);
            blocks.back().in_edges = p.in_edges(s.id);
        }
        edge_pools.resize(p.edges.size());
        for (std::size_t e = 0; e < p.edges.size(); ++e)
            edge_pools[e].resize(static_cast<std::size_t>(p.edges[e].align_pools));
        order = topological_order(p);
        head_in_edges = p.in_edges(kHeadNode);
        dropped.assign(p.blocks.size(), false);
    }

    Tensor<T> gather(const std::vector<int>& in_edges) {
        Tensor<T> sum;
        for (int e : in_edges) {
            const int from = plan.edges[static_cast<std::size_t>(e)].from;
            Tensor<T> t = from == kStemNode ? stem_out : block_out[static_cast<std::size_t>(from)];
            for (auto& pool : edge_pools[static_cast<std::size_t>(e)]) t = pool.forward(t);
            if (sum.empty())
                sum = std::move(t);
            else
                sum += t;
        }
        return sum;
    }

    void scatter(const Tensor<T>& grad, const std::vector<int>& in_edges, Tensor<T>& d_stem,
                 std::vector<Tensor<T>>& d_out) {
        for (int e : in_edges) {
            Tensor<T> d = grad;
            auto& pools = edge_pools[static_cast<std::size_t>(e)];
            for (auto it = pools.rbegin(); it != pools.rend(); ++it) d = it->backward(d);
            const int from = plan.edges[static_cast<std::size_t>(e)].from;
            Tensor<T>& dst = from == kStemNode ? d_stem : d_out[static_cast<std::size_t>(from)];
            if (dst.empty())
                dst = std::move(d);
            else
                dst += d;
        }
    }
};

template <typename T>
DenseNetModel<T>::DenseNetModel(const NetworkPlan& plan) : impl_(std::make_unique<Impl>(plan)) {}
template <typename T>
DenseNetModel<T>::~DenseNetModel() = default;
template <typename T>
DenseNetModel<T>::DenseNetModel(DenseNetModel&&) noexcept = default;
template <typename T>
DenseNetModel<T>& DenseNetModel<T>::operator=(DenseNetModel&&) noexcept = default;

template <typename T>
void DenseNetModel<T>::init(Rng& rng) {
    Impl& m = *impl_;
    m.embedding.init(rng);
    m.stem_conv.init(rng);
    for (auto& b : m.blocks) {
        for (auto& u : b.units) {
            u.bn.init();
            u.conv.init(rng);
        }
        b.transition.init(rng);
    }
    m.fc1.init(rng);
    m.fc2.init(rng);
    m.fc3.init(rng);
    // Uniform initial softmax; Kaiming output logits diverge on deep graphs.
    m.fc3.weight().value.fill(T{});
    for (Param<T>* p : params()) p->velocity.fill(T{});
}

template <typename T>
Tensor<T> DenseNetModel<T>::forward(const TokenBatch& batch, Mode mode, Rng* rng) {
    Impl& m = *impl_;
    if (batch.length != static_cast<std::size_t>(m.plan.stem.max_len))
        throw std::invalid_argument("batch length " + std::to_string(batch.length) + " does not match plan length " +
                                    std::to_string(m.plan.stem.max_len));
    m.stem_out = m.stem_conv.forward(m.embedding.forward(batch));
    m.block_out.assign(m.blocks.size(), Tensor<T>{});
    m.dropped.assign(m.blocks.size(), false);

    for (int id : m.order) {
        auto& b = m.blocks[static_cast<std::size_t>(id)];
        Tensor<T> in = m.gather(b.in_edges);
        bool drop = false;
        if (mode == Mode::Train && b.spec.drop_prob > 0.0) {
            if (!rng) throw std::invalid_argument("training forward with block dropout needs an rng");
            drop = bernoulli(*rng, b.spec.drop_prob);
        }
        m.dropped[static_cast<std::size_t>(id)] = drop;

        Tensor<T> feat;
        if (drop) {
            // Bypassed: the block passes its input through; the missing
            // sub-block channels reach the transition as zeros.
            const std::size_t extra = static_cast<std::size_t>(b.spec.num_conv_blocks * b.spec.growth);
            feat = concat_channels(in, Tensor<T>({in.dim(0), extra, in.dim(2)}));
        } else {
            feat = std::move(in);
            for (auto& u : b.units) {
                Tensor<T> h = u.relu.forward(u.bn.forward(feat, mode));
                feat = concat_channels(feat, u.conv.forward(h));
            }
        }
        Tensor<T> y = b.transition.forward(feat);
        if (b.spec.pooled) y = b.pool.forward(y);
        m.block_out[static_cast<std::size_t>(id)] = std::move(y);
    }

    Tensor<T> pooled = m.kmax.forward(m.gather(m.head_in_edges));
    m.kmax_dims = pooled.dims();
    pooled.reshape({pooled.dim(0), pooled.dim(1) * pooled.dim(2)});
    Tensor<T> h = m.relu1.forward(m.fc1.forward(pooled));
    h = m.relu2.forward(m.fc2.forward(h));
    return m.fc3.forward(h);
}

template <typename T>
void DenseNetModel<T>::backward(const Tensor<T>& dlogits) {
    Impl& m = *impl_;
    Tensor<T> d = m.fc3.backward(dlogits);
    d = m.fc1.backward(m.relu1.backward(m.fc2.backward(m.relu2.backward(d))));
    d.reshape(m.kmax_dims);
    d = m.kmax.backward(d);

    Tensor<T> d_stem;
    std::vector<Tensor<T>> d_out(m.blocks.size());
    m.scatter(d, m.head_in_edges, d_stem, d_out);

    for (auto it = m.order.rbegin(); it != m.order.rend(); ++it) {
        const auto id = static_cast<std::size_t>(*it);
        auto& b = m.blocks[id];
        Tensor<T> g = std::move(d_out[id]);
        if (g.empty()) throw std::logic_error("block without downstream gradient");
        if (b.spec.pooled) g = b.pool.backward(g);
        Tensor<T> dfeat = b.transition.backward(g);
        if (!m.dropped[id]) {
            for (int i = b.spec.num_conv_blocks - 1; i >= 0; --i) {
                auto& u = b.units[static_cast<std::size_t>(i)];
                const auto c0 = static_cast<std::size_t>(b.spec.in_channels + i * b.spec.growth);
                Tensor<T> du = slice_channels(dfeat, c0, c0 + static_cast<std::size_t>(b.spec.growth));
                add_channels(dfeat, 0, u.bn.backward(u.relu.backward(u.conv.backward(du))));
            }
        }
        m.scatter(slice_channels(dfeat, 0, static_cast<std::size_t>(b.spec.in_channels)), b.in_edges, d_stem, d_out);
    }
    m.embedding.backward(m.stem_conv.backward(d_stem));
}

template <typename T>
std::vector<std::pair<std::string, Param<T>*>> DenseNetModel<T>::named_params() {
    Impl& m = *impl_;
    std::vector<std::pair<std::string, Param<T>*>> out;
    auto add = [&out](const std::string& prefix, std::vector<Param<T>*> ps) {
        for (Param<T>* p : ps) out.emplace_back(prefix + "." + p->name, p);
    };
    add("stem.embedding", m.embedding.params());
    add("stem.conv", m.stem_conv.params());
    for (auto& b : m.blocks) {
        const std::string prefix = "block" + std::to_string(b.spec.id);
        for (std::size_t i = 0; i < b.units.size(); ++i) {
            const std::string unit = prefix + ".unit" + std::to_string(i);
            add(unit + ".bn", b.units[i].bn.params());
            add(unit + ".conv", b.units[i].conv.params());
        }
        add(prefix + ".transition", b.transition.params());
    }
    add("head.fc1", m.fc1.params());
    add("head.fc2", m.fc2.params());
    add("head.fc3", m.fc3.params());
    return out;
}

template <typename T>
std::vector<Param<T>*> DenseNetModel<T>::params() {
    std::vector<Param<T>*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> DenseNetModel<T>::buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& b : impl_->blocks)
        for (std::size_t i = 0; i < b.units.size(); ++i) {
            const std::string unit = "block" + std::to_string(b.spec.id) + ".unit" + std::to_string(i) + ".bn";
            out.emplace_back(unit + ".running_mean", &b.units[i].bn.running_mean());
            out.emplace_back(unit + ".running_var", &b.units[i].bn.running_var());
        }
    return out;
}

template <typename T>
void DenseNetModel<T>::zero_grad() {
    for (Param<T>* p : params()) p->zero_grad();
}

template <typename T>
std::int64_t DenseNetModel<T>::parameter_count() {
    std::int64_t n = 0;
    for (Param<T>* p : params()) n += static_cast<std::int64_t>(p->value.size());
    return n;
}

template <typename T>
const std::vector<bool>& DenseNetModel<T>::last_dropped() const {
    return impl_->dropped;
}

template <typename T>
Linear<T>& DenseNetModel<T>::output_layer() {
    return impl_->fc3;
}

template <typename T>
const NetworkPlan& DenseNetModel<T>::plan() const {
    return impl_->plan;
}

template <typename T>
nlohmann::json model_to_json(DenseNetModel<T>& model, const nlohmann::json& cursor) {
    using nlohmann::json;
    auto dump = [](const std::string& name, const Tensor<T>& t) {
        return json{{"name", name}, {"dims", t.dims()}, {"values", std::vector<T>(t.values().begin(), t.values().end())}};
    };
    json j{{"format", "gpdense-model"}, {"version", 1}, {"plan", plan_to_json(model.plan())}, {"cursor", cursor}};
    j["params"] = json::array();
    for (auto& [name, p] : model.named_params()) j["params"].push_back(dump(name, p->value));
    j["buffers"] = json::array();
    for (auto& [name, t] : model.buffers()) j["buffers"].push_back(dump(name, *t));
    return j;
}

template <typename T>
nlohmann::json load_model_json(DenseNetModel<T>& model, const nlohmann::json& j) {
    if (j.at("format") != "gpdense-model" || j.at("version") != 1) throw std::runtime_error("unsupported model file");
    auto load = [](const nlohmann::json& arr, const std::string& name, Tensor<T>& t) {
        for (const auto& e : arr) {
            if (e.at("name") != name) continue;
            if (e.at("dims").get<std::vector<std::size_t>>() != t.dims())
                throw std::runtime_error("shape mismatch for " + name);
            const auto values = e.at("values").get<std::vector<T>>();
            std::copy(values.begin(), values.end(), t.data());
            return;
        }
        throw std::runtime_error("model file lacks tensor " + name);
    };
    for (auto& [name, p] : model.named_params()) load(j.at("params"), name, p->value);
    for (auto& [name, t] : model.buffers()) load(j.at("buffers"), name, *t);
    return j.at("cursor");
}

template class DenseNetModel<float>;
template class DenseNetModel<double>;
template nlohmann::json model_to_json<float>(DenseNetModel<float>&, const nlohmann::json&);
template nlohmann::json model_to_json<double>(DenseNetModel<double>&, const nlohmann::json&);
template nlohmann::json load_model_json<float>(DenseNetModel<float>&, const nlohmann::json&);
template nlohmann::json load_model_json<double>(DenseNetModel<double>&, const nlohmann::json&);

}  // namespace gpdense
