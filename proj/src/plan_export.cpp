#include <sstream>

#include "gpdense/plan.hpp"

namespace gpdense {

namespace {

nlohmann::json node_ref(int node) {
    if (node == kStemNode) return "stem";
    if (node == kHeadNode) return "head";
    return node;
}

int node_from(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "stem") return kStemNode;
        if (s == "head") return kHeadNode;
        throw std::invalid_argument("unknown plan node '" + s + "'");
    }
    return j.get<int>();
}

}  // namespace

nlohmann::json plan_to_json(const NetworkPlan& plan) {
    using nlohmann::json;
    json j;
    j["stem"] = {{"alphabet_size", plan.stem.alphabet_size},
                 {"embed_dim", plan.stem.embed_dim},
                 {"max_len", plan.stem.max_len},
                 {"out_channels", plan.stem.out_channels}};
    j["head"] = {{"k", plan.head.k},
                 {"fc1", plan.head.fc1},
                 {"fc2", plan.head.fc2},
                 {"num_classes", plan.head.num_classes},
                 {"in_channels", plan.head_in_channels},
                 {"in_length", plan.head_in_length}};
    j["merge"] = "sum";
    json blocks = json::array();
    for (const DenseBlockSpec& b : plan.blocks) {
        blocks.push_back({{"id", b.id},
                          {"num_conv_blocks", b.num_conv_blocks},
                          {"drop_prob", b.drop_prob},
                          {"in_channels", b.in_channels},
                          {"out_channels", b.out_channels},
                          {"growth", b.growth},
                          {"in_length", b.in_length},
                          {"out_length", b.out_length},
                          {"pooled", b.pooled}});
    }
    j["blocks"] = std::move(blocks);
    json edges = json::array();
    for (const Edge& e : plan.edges)
        edges.push_back({{"from", node_ref(e.from)}, {"to", node_ref(e.to)}, {"align_pools", e.align_pools}});
    j["edges"] = std::move(edges);
    j["parameters"] = count_parameters(plan);
    return j;
}

NetworkPlan plan_from_json(const nlohmann::json& j) {
    NetworkPlan p;
    const auto& s = j.at("stem");
    p.stem = {s.at("alphabet_size"), s.at("embed_dim"), s.at("max_len"), s.at("out_channels")};
    const auto& h = j.at("head");
    p.head = {h.at("k"), h.at("fc1"), h.at("fc2"), h.at("num_classes")};
    p.head_in_channels = h.at("in_channels");
    p.head_in_length = h.at("in_length");
    if (j.value("merge", std::string("sum")) != "sum") throw std::invalid_argument("unsupported merge mode");
    for (const auto& b : j.at("blocks")) {
        DenseBlockSpec d;
        d.id = b.at("id");
        d.num_conv_blocks = b.at("num_conv_blocks");
        d.drop_prob = b.at("drop_prob");
        d.in_channels = b.at("in_channels");
        d.out_channels = b.at("out_channels");
        d.growth = b.at("growth");
        d.in_length = b.at("in_length");
        d.out_length = b.at("out_length");
        d.pooled = b.at("pooled");
        p.blocks.push_back(d);
    }
    for (const auto& e : j.at("edges")) p.edges.push_back({node_from(e.at("from")), node_from(e.at("to")), e.at("align_pools")});
    return p;
}

std::string plan_to_dot(const NetworkPlan& plan) {
    std::ostringstream os;
    auto id = [](int node) {
        if (node == kStemNode) return std::string("stem");
        if (node == kHeadNode) return std::string("head");
        return "db" + std::to_string(node);
    };
    os << "digraph plan {\n  rankdir=TB;\n  node [shape=box];\n";
    os << "  stem [label=\"embedding " << plan.stem.alphabet_size << "x" << plan.stem.embed_dim << "\\nconv3 -> "
       << plan.stem.out_channels << "ch\\nL=" << plan.stem.max_len << "\"];\n";
    for (const DenseBlockSpec& b : plan.blocks) {
        os << "  " << id(b.id) << " [label=\"DB" << b.id << "\\n" << b.num_conv_blocks << " conv blocks";
        if (b.drop_prob > 0.0) os << "\\nD=" << format_real(b.drop_prob);
        os << "\\nL " << b.in_length << " -> " << b.out_length << "\"];\n";
    }
    os << "  head [label=\"" << plan.head.k << "-max pool\\nFC " << plan.head.fc1 << ", " << plan.head.fc2 << ", "
       << plan.head.num_classes << "\"];\n";
    for (const Edge& e : plan.edges) {
        os << "  " << id(e.from) << " -> " << id(e.to);
        if (e.align_pools > 0) os << " [label=\"pool x" << e.align_pools << "\"]";
        os << ";\n";
    }
    os << "}\n";
    return os.str();
}

}  // namespace gpdense
