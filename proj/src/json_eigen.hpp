#pragma once

// Row-major JSON <-> Eigen conversions shared by the serializers.

#include <string>

#include <Eigen/Core>

#include "ctxkmp/errors.hpp"
#include "json.hpp"

namespace ctxkmp::detail {

inline nlohmann::json vector_to_json(const Eigen::Ref<const Eigen::VectorXd> &v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline nlohmann::json matrix_to_json(const Eigen::Ref<const Eigen::MatrixXd> &m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

inline const nlohmann::json &field(const nlohmann::json &obj, const char *key) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw SchemaError(std::string("missing field '") + key + "'");
    }
    return obj.at(key);
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json &a, const std::string &name) {
    if (!a.is_array()) throw SchemaError("field '" + name + "' must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw SchemaError("field '" + name + "' holds a non-number");
        v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    }
    return v;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json &a, const std::string &name) {
    if (!a.is_array()) throw SchemaError("field '" + name + "' must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(a.size());
    const Eigen::Index cols = rows > 0 && a[0].is_array() ? static_cast<Eigen::Index>(a[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto &row = a[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw DimensionError("field '" + name + "' is not a rectangular matrix");
        }
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto &x = row[static_cast<std::size_t>(j)];
            if (!x.is_number()) throw SchemaError("field '" + name + "' holds a non-number");
            m(i, j) = x.get<double>();
        }
    }
    return m;
}

}  // namespace ctxkmp::detail
