#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "olora/model.hpp"

namespace olora {

using json = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;

inline json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = json::array();
    for (std::size_t i = 0; i < m.size(); ++i) j["data"].push_back(m.data()[i]);
    return j;
}

inline Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    const auto& data = j.at("data");
    if (data.size() != m.size()) {
        throw ConfigError("matrix payload size mismatch: expected " + std::to_string(m.size()) +
                          ", got " + std::to_string(data.size()));
    }
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = data[i].get<double>();
    return m;
}

inline json adapter_to_json(const Adapter& a) {
    json j;
    j["kind"] = std::holds_alternative<LoraAdapter>(a) ? "lora" : "adalora";
    j["d1"] = adapter_d1(a);
    j["d2"] = adapter_d2(a);
    j["r"] = adapter_rank(a);
    j["trainable"] = adapter_trainable(a);
    if (const auto* l = std::get_if<LoraAdapter>(&a)) {
        j["A"] = matrix_to_json(l->A.value);
        j["B"] = matrix_to_json(l->B.value);
    } else {
        const auto& ad = std::get<AdaLoraAdapter>(a);
        j["A"] = matrix_to_json(ad.A.value);
        j["lambda"] = matrix_to_json(ad.lambda.value);
        j["B"] = matrix_to_json(ad.B.value);
        j["mask"] = json::array();
        for (auto m : ad.mask) j["mask"].push_back(m ? 1 : 0);
    }
    return j;
}

inline Adapter adapter_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const bool trainable = j.at("trainable").get<bool>();
    if (kind == "lora") {
        LoraAdapter a;
        a.A = Parameter(matrix_from_json(j.at("A")), trainable);
        a.B = Parameter(matrix_from_json(j.at("B")), trainable);
        a.rank = j.at("r").get<int>();
        if (a.A.value.cols() != a.rank || a.B.value.rows() != a.rank) {
            throw ConfigError("lora adapter rank does not match its arrays");
        }
        return a;
    }
    if (kind == "adalora") {
        AdaLoraAdapter a;
        a.A = Parameter(matrix_from_json(j.at("A")), trainable);
        a.lambda = Parameter(matrix_from_json(j.at("lambda")), trainable);
        a.B = Parameter(matrix_from_json(j.at("B")), trainable);
        a.rank = j.at("r").get<int>();
        for (const auto& m : j.at("mask")) a.mask.push_back(m.get<int>() ? 1 : 0);
        if (static_cast<int>(a.mask.size()) != a.rank || a.lambda.value.cols() != a.rank) {
            throw ConfigError("adalora adapter rank does not match its arrays");
        }
        return a;
    }
    throw ConfigError("unknown adapter kind '" + kind + "'");
}

inline json layer_to_json(const LinearLayer& l) {
    json j;
    j["W"] = matrix_to_json(l.W.value);
    j["b"] = matrix_to_json(l.b.value);
    j["frozen"] = json::array();
    for (const Adapter& a : l.stack.frozen) j["frozen"].push_back(adapter_to_json(a));
    if (l.stack.active.has_value()) j["active"] = adapter_to_json(*l.stack.active);
    return j;
}

inline LinearLayer layer_from_json(const json& j) {
    LinearLayer l;
    l.W = Parameter(matrix_from_json(j.at("W")), false);
    l.b = Parameter(matrix_from_json(j.at("b")), false);
    for (const auto& a : j.at("frozen")) l.stack.frozen.push_back(adapter_from_json(a));
    if (j.contains("active")) l.stack.active = adapter_from_json(j.at("active"));
    return l;
}

inline json model_to_json(const ToyModel& m) {
    json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["config"] = {{"dim", m.cfg.dim},
                   {"ff_dim", m.cfg.ff_dim},
                   {"heads", m.cfg.heads},
                   {"blocks", m.cfg.blocks},
                   {"output_dim", m.cfg.output_dim}};
    j["embed"] = layer_to_json(m.embed);
    j["head"] = layer_to_json(m.head);
    j["blocks"] = json::array();
    for (const auto& b : m.blocks) {
        json bj;
        bj["wq"] = layer_to_json(b.wq);
        bj["wk"] = layer_to_json(b.wk);
        bj["wv"] = layer_to_json(b.wv);
        bj["wo"] = layer_to_json(b.wo);
        bj["fc1"] = layer_to_json(b.fc1);
        bj["fc2"] = layer_to_json(b.fc2);
        j["blocks"].push_back(std::move(bj));
    }
    return j;
}

inline ToyModel model_from_json(const json& j) {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
        throw ConfigError("unsupported checkpoint format version " + std::to_string(version));
    }
    ToyModel m;
    const auto& cj = j.at("config");
    m.cfg.dim = cj.at("dim").get<int>();
    m.cfg.ff_dim = cj.at("ff_dim").get<int>();
    m.cfg.heads = cj.at("heads").get<int>();
    m.cfg.blocks = cj.at("blocks").get<int>();
    m.cfg.output_dim = cj.at("output_dim").get<int>();
    m.cfg.validate();
    m.embed = layer_from_json(j.at("embed"));
    m.head = layer_from_json(j.at("head"));
    for (const auto& bj : j.at("blocks")) {
        TransformerBlock b;
        b.wq = layer_from_json(bj.at("wq"));
        b.wk = layer_from_json(bj.at("wk"));
        b.wv = layer_from_json(bj.at("wv"));
        b.wo = layer_from_json(bj.at("wo"));
        b.fc1 = layer_from_json(bj.at("fc1"));
        b.fc2 = layer_from_json(bj.at("fc2"));
        m.blocks.push_back(std::move(b));
    }
    if (static_cast<int>(m.blocks.size()) != m.cfg.blocks) {
        throw ConfigError("checkpoint block count does not match its config");
    }
    return m;
}

inline void save_checkpoint(const std::string& path, const ToyModel& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint to " + path);
    out << model_to_json(m).dump();
}

inline ToyModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint from " + path);
    json j = json::parse(in);
    return model_from_json(j);
}

}  // namespace olora
