#include "ctxkmp/demonstrations.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ctxkmp/errors.hpp"

namespace ctxkmp {

using nlohmann::json;

namespace {

constexpr int kCorpusVersion = 1;

const json &require(const json &obj, const char *key, const std::string &where) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw SchemaError("missing field '" + where + key + "'");
    }
    return obj.at(key);
}

Index require_count(const json &obj, const char *key, const std::string &where) {
    const json &v = require(obj, key, where);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw SchemaError("field '" + where + key + "' must be a non-negative integer");
    }
    return static_cast<Index>(v.get<long long>());
}

// Reads an array of rows, each with `width` numbers, into a width x rows matrix.
MatrixXd read_rows(const json &rows, Index width, const std::string &field) {
    if (!rows.is_array()) {
        throw SchemaError("field '" + field + "' must be an array of rows");
    }
    MatrixXd out(width, static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const json &row = rows[j];
        const std::string where = field + "[" + std::to_string(j) + "]";
        if (!row.is_array()) {
            throw SchemaError("field '" + where + "' must be an array");
        }
        if (static_cast<Index>(row.size()) != width) {
            throw DimensionError("field '" + where + "' has " + std::to_string(row.size()) +
                                 " entries, expected " + std::to_string(width));
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (!row[i].is_number()) {
                throw SchemaError("field '" + where + "[" + std::to_string(i) + "]' is not a number");
            }
            out(static_cast<Index>(i), static_cast<Index>(j)) = row[i].get<double>();
        }
    }
    return out;
}

json write_rows(const MatrixXd &m) {
    json rows = json::array();
    for (Index j = 0; j < m.cols(); ++j) {
        json row = json::array();
        for (Index i = 0; i < m.rows(); ++i) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void validate(const Demonstration &demo) {
    if (!(demo.dt > 0.0) || !std::isfinite(demo.dt)) {
        throw DataError("demonstration '" + demo.id + "': dt must be positive and finite");
    }
    if (demo.length() < 2) {
        throw DataError("demonstration '" + demo.id + "': needs at least 2 samples");
    }
    if (demo.position_dim() < 1) {
        throw DimensionError("demonstration '" + demo.id + "': position dimension is zero");
    }
    if (!demo.positions.allFinite()) {
        throw DataError("demonstration '" + demo.id + "': non-finite position");
    }
    if (demo.contexts) {
        if (demo.contexts->cols() != demo.length()) {
            throw DimensionError("demonstration '" + demo.id + "': " +
                                 std::to_string(demo.contexts->cols()) + " contexts for " +
                                 std::to_string(demo.length()) + " positions");
        }
        if (!demo.contexts->allFinite()) {
            throw DataError("demonstration '" + demo.id + "': non-finite context");
        }
    }
}

MatrixXd compute_velocities(const Demonstration &demo) {
    const Index m = demo.length();
    if (m < 2) {
        throw DataError("demonstration '" + demo.id + "': velocities need at least 2 samples");
    }
    const MatrixXd &x = demo.positions;
    MatrixXd v(x.rows(), m);
    v.col(0) = (x.col(1) - x.col(0)) / demo.dt;
    v.col(m - 1) = (x.col(m - 1) - x.col(m - 2)) / demo.dt;
    for (Index t = 1; t + 1 < m; ++t) {
        v.col(t) = (x.col(t + 1) - x.col(t - 1)) / (2.0 * demo.dt);
    }
    return v;
}

TrainingSet make_training_set(std::vector<Demonstration> demos) {
    if (demos.empty()) {
        throw DataError("training set has no demonstrations");
    }
    TrainingSet set;
    set.dims = Dims{demos.front().context_dim(), demos.front().position_dim()};
    Index total = 0;
    for (const auto &d : demos) {
        validate(d);
        const Dims dims{d.context_dim(), d.position_dim()};
        if (!(dims == set.dims)) {
            throw DimensionError("demonstration '" + d.id + "' has dims (C=" + std::to_string(dims.context) +
                                 ", P=" + std::to_string(dims.position) + "), expected (C=" +
                                 std::to_string(set.dims.context) + ", P=" + std::to_string(set.dims.position) +
                                 ")");
        }
        total += d.length();
    }

    const Index c = set.dims.context;
    const Index p = set.dims.position;
    const Index h = static_cast<Index>(demos.size());
    set.inputs.resize(c + p, total);
    set.outputs.resize(p, total);
    set.goal_inputs.resize(c + p, h);
    set.goal_positions.resize(p, h);

    Index offset = 0;
    for (Index k = 0; k < h; ++k) {
        const Demonstration &d = demos[static_cast<std::size_t>(k)];
        const Index m = d.length();
        if (c > 0) set.inputs.block(0, offset, c, m) = *d.contexts;
        set.inputs.block(c, offset, p, m) = d.positions;
        set.outputs.middleCols(offset, m) = compute_velocities(d);
        set.goal_inputs.col(k) = set.inputs.col(offset + m - 1);
        set.goal_positions.col(k) = d.positions.col(m - 1);
        offset += m;
    }
    set.demonstrations = std::move(demos);
    return set;
}

TrainingSet training_set_from_json(const json &doc) {
    if (!doc.is_object()) {
        throw SchemaError("corpus document must be a JSON object");
    }
    const json &version = require(doc, "version", "");
    if (!version.is_number_integer() || version.get<int>() != kCorpusVersion) {
        throw SchemaError("field 'version' must be " + std::to_string(kCorpusVersion));
    }
    const json &dims = require(doc, "dims", "");
    const Index c = require_count(dims, "context", "dims.");
    const Index p = require_count(dims, "position", "dims.");
    if (p < 1) {
        throw SchemaError("field 'dims.position' must be at least 1");
    }
    const json &list = require(doc, "demonstrations", "");
    if (!list.is_array()) {
        throw SchemaError("field 'demonstrations' must be an array");
    }

    std::vector<Demonstration> demos;
    for (std::size_t k = 0; k < list.size(); ++k) {
        const json &item = list[k];
        const std::string where = "demonstrations[" + std::to_string(k) + "].";
        Demonstration d;
        const json &id = require(item, "id", where);
        if (!id.is_string()) throw SchemaError("field '" + where + "id' must be a string");
        d.id = id.get<std::string>();
        const json &dt = require(item, "dt", where);
        if (!dt.is_number()) throw SchemaError("field '" + where + "dt' must be a number");
        d.dt = dt.get<double>();
        d.positions = read_rows(require(item, "positions", where), p, where + "positions");
        if (item.contains("contexts") && !item.at("contexts").is_null()) {
            if (c == 0) {
                throw DimensionError("field '" + where + "contexts' present but dims.context is 0");
            }
            d.contexts = read_rows(item.at("contexts"), c, where + "contexts");
        } else if (c > 0) {
            throw DimensionError("field '" + where + "contexts' missing but dims.context is " + std::to_string(c));
        }
        demos.push_back(std::move(d));
    }
    return make_training_set(std::move(demos));
}

json to_json(const TrainingSet &set) {
    json doc;
    doc["version"] = kCorpusVersion;
    doc["dims"] = {{"context", set.dims.context}, {"position", set.dims.position}};
    json list = json::array();
    for (const auto &d : set.demonstrations) {
        json item;
        item["id"] = d.id;
        item["dt"] = d.dt;
        item["positions"] = write_rows(d.positions);
        item["contexts"] = d.contexts ? write_rows(*d.contexts) : json(nullptr);
        list.push_back(std::move(item));
    }
    doc["demonstrations"] = std::move(list);
    return doc;
}

TrainingSet load_training_set(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open data set '" + path.string() + "'");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error &e) {
        throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return training_set_from_json(doc);
}

void save_training_set(const TrainingSet &set, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << to_json(set).dump() << '\n';
}

}  // namespace ctxkmp
