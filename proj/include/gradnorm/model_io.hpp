// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_MODEL_IO_HPP
#define GRADNORM_MODEL_IO_HPP

#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "gradnorm/errors.hpp"
#include "gradnorm/normfit.hpp"

namespace gradnorm {

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline double require_number(const nlohmann::json& j, const char* outer, const char* key,
                             const std::string& path) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw io_error("model json missing numeric field " + std::string(outer) + "." + key +
                       ": " + path);
    return j.at(key).get<double>();
}

inline const nlohmann::json& require_object(const nlohmann::json& j, const char* key,
                                            const std::string& path) {
    if (!j.contains(key) || !j.at(key).is_object())
        throw io_error("model json missing object " + std::string(key) + ": " + path);
    return j.at(key);
}

}  // namespace detail

/// Serialize the fitted normalization model and its power-law baseline to
/// a versioned JSON document. The document is byte-stable for identical
/// models.
inline void save_model_json(const NormalizationModel& m, const PowerLawModel& pl,
                            const std::string& path) {
    nlohmann::ordered_json j;
    j["version"] = kModelSchemaVersion;
    j["c"] = m.c_used;
    j["up"] = {{"a1", m.a1}, {"b1", m.b1}};
    j["down"] = {{"a2", m.a2}, {"b2", m.b2}, {"c2", m.c2}};
    j["lambda"] = {{"up", m.lambda_up}, {"down", m.lambda_down}};
    j["rmse"] = {{"up", m.rmse_up}, {"down", m.rmse_down}, {"total", m.rmse_total}};
    j["power_law"] = {{"amp", pl.amp}, {"exponent", pl.exponent}, {"rmse", pl.rmse}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

inline std::pair<NormalizationModel, PowerLawModel> load_model_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open model json: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("malformed model json: " + path + " (" + e.what() + ")");
    }

    if (!j.contains("version") || !j.at("version").is_number_integer())
        throw io_error("model json missing version: " + path);
    const int version = j.at("version").get<int>();
    if (version != kModelSchemaVersion)
        throw io_error("unsupported model schema version " + std::to_string(version) +
                       " (expected " + std::to_string(kModelSchemaVersion) + "): " + path);

    NormalizationModel m;
    PowerLawModel pl;
    m.c_used = detail::require_number(j, "", "c", path);

    const auto& up = detail::require_object(j, "up", path);
    m.a1 = detail::require_number(up, "up", "a1", path);
    m.b1 = detail::require_number(up, "up", "b1", path);

    const auto& down = detail::require_object(j, "down", path);
    m.a2 = detail::require_number(down, "down", "a2", path);
    m.b2 = detail::require_number(down, "down", "b2", path);
    m.c2 = detail::require_number(down, "down", "c2", path);

    const auto& lambda = detail::require_object(j, "lambda", path);
    m.lambda_up = detail::require_number(lambda, "lambda", "up", path);
    m.lambda_down = detail::require_number(lambda, "lambda", "down", path);

    const auto& rmse = detail::require_object(j, "rmse", path);
    m.rmse_up = detail::require_number(rmse, "rmse", "up", path);
    m.rmse_down = detail::require_number(rmse, "rmse", "down", path);
    m.rmse_total = detail::require_number(rmse, "rmse", "total", path);

    const auto& plj = detail::require_object(j, "power_law", path);
    pl.amp = detail::require_number(plj, "power_law", "amp", path);
    pl.exponent = detail::require_number(plj, "power_law", "exponent", path);
    pl.rmse = detail::require_number(plj, "power_law", "rmse", path);

    return {m, pl};
}

}  // namespace gradnorm

#endif  // GRADNORM_MODEL_IO_HPP
