#include "grounding/model_io.hpp"

#include <cmath>
#include <fstream>

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

json config_to_json(const EstimatorConfig& c) {
    return {
        {"max_frequency", c.max_frequency},
        {"hidden", c.hidden},
        {"layers", c.layers},
        {"attention_heads", c.attention_heads},
        {"lambda", c.lambda},
        {"seed", c.seed},
        {"epochs", c.epochs},
        {"learning_rate", c.learning_rate},
        {"clip_norm", c.clip_norm},
        {"workspace", {c.workspace.x_min, c.workspace.x_max, c.workspace.y_min, c.workspace.y_max}},
    };
}

EstimatorConfig config_from_json(const json& j) {
    if (!j.is_object()) {
        throw SchemaError("model config must be an object");
    }
    EstimatorConfig c;
    try {
        c.max_frequency = j.at("max_frequency").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.layers = j.at("layers").get<int>();
        c.attention_heads = j.at("attention_heads").get<int>();
        c.lambda = j.at("lambda").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.epochs = j.at("epochs").get<int>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.clip_norm = j.at("clip_norm").get<double>();
        const auto& ws = j.at("workspace");
        if (!ws.is_array() || ws.size() != 4) {
            throw SchemaError("config.workspace must be [x_min, x_max, y_min, y_max]");
        }
        c.workspace = {ws[0].get<double>(), ws[1].get<double>(), ws[2].get<double>(), ws[3].get<double>(), 128};
    } catch (const json::exception& e) {
        throw SchemaError("model config is missing a field or has the wrong type", e.what());
    }
    try {
        c.validate();
    } catch (const DomainError& e) {
        throw SchemaError(std::string("model config is invalid: ") + e.what());
    }
    return c;
}

json model_to_json(const EstimatorModel& model) {
    json params = json::array();
    for (const auto& p : model.params()) {
        json values = json::array();
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                values.push_back(p.value(r, c));
            }
        }
        params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"values", values}});
    }
    return {{"format", "grounding-estimator"},
            {"version", kModelFormatVersion},
            {"config", config_to_json(model.config())},
            {"parameters", std::move(params)}};
}

EstimatorModel model_from_json(const json& j) {
    if (!j.is_object() || j.value("format", "") != "grounding-estimator") {
        throw SchemaError("not an estimator model (format must be \"grounding-estimator\")");
    }
    if (j.value("version", 0) != kModelFormatVersion) {
        throw SchemaError("unsupported model version (expected " + std::to_string(kModelFormatVersion) + ")");
    }
    if (!j.contains("config") || !j.contains("parameters") || !j["parameters"].is_array()) {
        throw SchemaError("model needs 'config' and a 'parameters' array");
    }
    EstimatorModel model(config_from_json(j["config"]));
    auto& params = model.params();
    const auto& stored = j["parameters"];
    if (stored.size() != params.size()) {
        throw SchemaError("model has " + std::to_string(stored.size()) + " parameter arrays, config implies " +
                          std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& s = stored[k];
        auto& p = params[k];
        const std::string where = "parameters[" + std::to_string(k) + "]";
        try {
            if (s.at("name").get<std::string>() != p.name) {
                throw SchemaError(where + ": expected '" + p.name + "', found '" + s.at("name").get<std::string>() +
                                  "'");
            }
            if (s.at("rows").get<Eigen::Index>() != p.value.rows() ||
                s.at("cols").get<Eigen::Index>() != p.value.cols()) {
                throw SchemaError(where + " (" + p.name + "): shape does not match the config");
            }
            const auto& values = s.at("values");
            if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != p.value.size()) {
                throw SchemaError(where + " (" + p.name + "): wrong number of values");
            }
            std::size_t i = 0;
            for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
                for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                    const double v = values[i++].get<double>();
                    if (!std::isfinite(v)) {
                        throw SchemaError(where + " (" + p.name + "): non-finite value");
                    }
                    p.value(r, c) = v;
                }
            }
        } catch (const json::exception& e) {
            throw SchemaError(where + ": malformed parameter record", e.what());
        }
    }
    return model;
}

void save_model(const EstimatorModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << model_to_json(model).dump() << '\n';
    if (!out) {
        throw IoError("write to " + path + " failed");
    }
}

EstimatorModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read model file " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + " is not valid JSON", e.what());
    }
    return model_from_json(j);
}

}  // namespace grounding
