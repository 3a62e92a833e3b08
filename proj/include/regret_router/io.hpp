// io.hpp
//
// Dataset files. CSV and JSONL carry the same fields:
//   observational:  embedding, model, accuracy, cost
//   full feedback:  embedding, accuracy_0..accuracy_{T-1}, cost_0..cost_{T-1}
// In CSV the embedding is one quoted field holding a bracketed list, e.g.
// "[0.25,-1.5]". Numbers use '.' as the decimal separator and are written in
// shortest round-trip form.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "core_types.hpp"

namespace rr {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline double parse_double(std::string_view s, std::string_view what) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw DataError("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
    return v;
}

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a partial file behind.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::filesystem::path target(path);
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + path);
        os << content;
        os.flush();
        if (!os) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw DataError("write failed for " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw DataError("cannot move " + tmp.string() + " into place");
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Minimal CSV

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    if (quoted) throw DataError("unterminated quote in CSV line");
    out.push_back(std::move(field));
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw DataError("missing column '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != t.header.size()) throw DataError("CSV row has " + std::to_string(fields.size()) + " fields, header has " + std::to_string(t.header.size()));
            t.rows.push_back(std::move(fields));
        }
    }
    if (first) throw DataError("empty CSV file");
    return t;
}

inline std::vector<double> parse_embedding(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw DataError("embedding must be a bracketed list");
    s = s.substr(1, s.size() - 2);
    std::vector<double> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        out.push_back(parse_double(s.substr(0, comma), "embedding"));
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    if (out.empty()) throw DataError("empty embedding");
    return out;
}

inline std::string format_embedding(const FeatureVector& x) {
    std::string s = "[";
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (k) s += ',';
        s += format_double(x[k]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Dataset files

enum class FileFormat { csv, jsonl };

inline FileFormat format_for(const std::string& path) {
    return std::filesystem::path(path).extension() == ".jsonl" ? FileFormat::jsonl : FileFormat::csv;
}

enum class DataKind { observational, full_feedback };

namespace detail {
inline std::size_t count_prefixed(const std::vector<std::string>& keys, const std::string& prefix) {
    std::size_t T = 0;
    while (std::find(keys.begin(), keys.end(), prefix + std::to_string(T)) != keys.end()) ++T;
    return T;
}

inline std::vector<std::string> jsonl_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    return lines;
}

inline nlohmann::json parse_json_line(const std::string& line, std::size_t lineno) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
}

inline double json_number(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key) || !j.at(key).is_number()) throw DataError("missing numeric field '" + key + "'");
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v)) throw DataError("non-finite field '" + key + "'");
    return v;
}

inline std::vector<double> json_embedding(const nlohmann::json& j) {
    if (!j.contains("embedding") || !j.at("embedding").is_array()) throw DataError("missing array field 'embedding'");
    std::vector<double> x;
    for (const auto& v : j.at("embedding")) {
        if (!v.is_number()) throw DataError("embedding entries must be numbers");
        x.push_back(v.get<double>());
    }
    if (x.empty()) throw DataError("empty embedding");
    return x;
}
}  // namespace detail

/// Guesses the file kind from the header (CSV) or the first object (JSONL).
inline DataKind detect_kind(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<std::string> keys;
    if (format_for(path) == FileFormat::jsonl) {
        const auto lines = detail::jsonl_lines(text);
        if (lines.empty()) throw DataError("empty JSONL file " + path);
        const auto first = detail::parse_json_line(lines.front(), 1);
        for (const auto& [k, v] : first.items()) keys.push_back(k);
    } else {
        std::istringstream is(text);
        std::string line;
        std::getline(is, line);
        keys = split_csv_line(line);
    }
    if (std::find(keys.begin(), keys.end(), "accuracy_0") != keys.end()) return DataKind::full_feedback;
    if (std::find(keys.begin(), keys.end(), "model") != keys.end()) return DataKind::observational;
    throw DataError("cannot tell whether " + path + " is an observational or a full-feedback file");
}

inline Dataset read_observational(const std::string& path) {
    Dataset ds;
    const std::string text = read_file(path);
    auto add = [&](FeatureVector x, double model, double a, double c) {
        if (model < 0 || model != std::floor(model)) throw DataError("model must be a non-negative integer");
        ds.samples.push_back({std::move(x), static_cast<TreatmentId>(model), a, c});
    };
    if (format_for(path) == FileFormat::jsonl) {
        const auto lines = detail::jsonl_lines(text);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const auto j = detail::parse_json_line(lines[i], i + 1);
            add(detail::json_embedding(j), detail::json_number(j, "model"), detail::json_number(j, "accuracy"), detail::json_number(j, "cost"));
        }
    } else {
        const CsvTable t = parse_csv(text);
        const auto ce = t.column("embedding"), cm = t.column("model"), ca = t.column("accuracy"), cc = t.column("cost");
        for (const auto& r : t.rows)
            add(parse_embedding(r[ce]), parse_double(r[cm], "model"), parse_double(r[ca], "accuracy"), parse_double(r[cc], "cost"));
    }
    if (ds.samples.empty()) throw DataError("no samples in " + path);
    ds.d = ds.samples.front().x.size();
    TreatmentId max_t = 0;
    for (const auto& s : ds.samples) max_t = std::max(max_t, s.t);
    ds.T = max_t + 1;
    ds.split.assign(ds.samples.size(), Split::train);
    ds.validate();
    return ds;
}

inline std::vector<FullFeedbackRecord> read_full_feedback(const std::string& path) {
    std::vector<FullFeedbackRecord> records;
    const std::string text = read_file(path);
    if (format_for(path) == FileFormat::jsonl) {
        const auto lines = detail::jsonl_lines(text);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const auto j = detail::parse_json_line(lines[i], i + 1);
            std::vector<std::string> keys;
            for (const auto& [k, v] : j.items()) keys.push_back(k);
            const std::size_t T = detail::count_prefixed(keys, "accuracy_");
            FullFeedbackRecord r{detail::json_embedding(j), {}, {}};
            for (std::size_t t = 0; t < T; ++t) {
                r.accuracy.push_back(detail::json_number(j, "accuracy_" + std::to_string(t)));
                r.cost.push_back(detail::json_number(j, "cost_" + std::to_string(t)));
            }
            records.push_back(std::move(r));
        }
    } else {
        const CsvTable t = parse_csv(text);
        const std::size_t T = detail::count_prefixed(t.header, "accuracy_");
        const auto ce = t.column("embedding");
        std::vector<std::size_t> ca, cc;
        for (std::size_t k = 0; k < T; ++k) {
            ca.push_back(t.column("accuracy_" + std::to_string(k)));
            cc.push_back(t.column("cost_" + std::to_string(k)));
        }
        for (const auto& row : t.rows) {
            FullFeedbackRecord r{parse_embedding(row[ce]), {}, {}};
            for (std::size_t k = 0; k < T; ++k) {
                r.accuracy.push_back(parse_double(row[ca[k]], "accuracy"));
                r.cost.push_back(parse_double(row[cc[k]], "cost"));
            }
            records.push_back(std::move(r));
        }
    }
    validate_records(records);
    return records;
}

inline std::string observational_text(const Dataset& ds, FileFormat fmt) {
    std::string out;
    if (fmt == FileFormat::csv) out = "embedding,model,accuracy,cost\n";
    for (const auto& s : ds.samples) {
        if (fmt == FileFormat::csv) {
            out += '"' + format_embedding(s.x) + "\"," + std::to_string(s.t) + ',' + format_double(s.a) + ',' + format_double(s.c) + '\n';
        } else {
            out += "{\"embedding\":" + format_embedding(s.x) + ",\"model\":" + std::to_string(s.t) + ",\"accuracy\":" + format_double(s.a) +
                   ",\"cost\":" + format_double(s.c) + "}\n";
        }
    }
    return out;
}

inline std::string full_feedback_text(const std::vector<FullFeedbackRecord>& records, FileFormat fmt) {
    validate_records(records);
    const std::size_t T = records.front().treatments();
    std::string out;
    if (fmt == FileFormat::csv) {
        out = "embedding";
        for (std::size_t t = 0; t < T; ++t) out += ",accuracy_" + std::to_string(t);
        for (std::size_t t = 0; t < T; ++t) out += ",cost_" + std::to_string(t);
        out += '\n';
    }
    for (const auto& r : records) {
        if (fmt == FileFormat::csv) {
            out += '"' + format_embedding(r.x) + '"';
            for (double a : r.accuracy) out += ',' + format_double(a);
            for (double c : r.cost) out += ',' + format_double(c);
        } else {
            out += "{\"embedding\":" + format_embedding(r.x);
            for (std::size_t t = 0; t < T; ++t) out += ",\"accuracy_" + std::to_string(t) + "\":" + format_double(r.accuracy[t]);
            for (std::size_t t = 0; t < T; ++t) out += ",\"cost_" + std::to_string(t) + "\":" + format_double(r.cost[t]);
            out += '}';
        }
        out += '\n';
    }
    return out;
}

inline void write_observational(const std::string& path, const Dataset& ds) { write_file_atomic(path, observational_text(ds, format_for(path))); }

inline void write_full_feedback(const std::string& path, const std::vector<FullFeedbackRecord>& records) {
    write_file_atomic(path, full_feedback_text(records, format_for(path)));
}

// ---------------------------------------------------------------------------
// Utility matrix CSV: header y_0..y_{T-1}, one row per sample.

inline std::string utility_matrix_text(const UtilityMatrix& um) {
    std::string out;
    for (std::size_t t = 0; t < um.treatments(); ++t) out += (t ? ",y_" : "y_") + std::to_string(t);
    out += '\n';
    for (Eigen::Index i = 0; i < um.values.rows(); ++i) {
        for (Eigen::Index t = 0; t < um.values.cols(); ++t) {
            if (t) out += ',';
            out += format_double(um.values(i, t));
        }
        out += '\n';
    }
    return out;
}

inline void write_utility_matrix(const std::string& path, const UtilityMatrix& um) { write_file_atomic(path, utility_matrix_text(um)); }

inline UtilityMatrix read_utility_matrix(const std::string& path, CostSensitivity lambda) {
    const CsvTable t = parse_csv(read_file(path));
    const std::size_t T = detail::count_prefixed(t.header, "y_");
    if (T < 2 || T != t.header.size()) throw DataError("utility matrix header must be y_0..y_{T-1}");
    UtilityMatrix um{Matrix(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(T)), lambda};
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t k = 0; k < T; ++k) um.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = parse_double(t.rows[i][k], "utility");
    return um;
}

}  // namespace rr
