#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fpkit/common.hpp"

namespace fpkit {

/// Linear classifier head: logits = weights * features + bias.
struct ClassifierHead {
    Matrix weights;            // K x D
    std::vector<double> bias;  // K

    std::vector<double> apply(std::span<const double> features) const {
        std::vector<double> out(bias);
        for (std::size_t k = 0; k < weights.rows(); ++k) {
            double acc = 0.0;
            const auto w = weights.row(k);
            for (std::size_t d = 0; d < w.size(); ++d) acc += w[d] * features[d];
            out[k] += acc;
        }
        return out;
    }
};

/// Classifier outputs for one evaluation split: N x K logits with integer
/// labels, plus optional penultimate features and the linear head that maps
/// them to logits (only needed for activation-rectified scores).
struct EvalSet {
    Matrix logits;            // N x K
    std::vector<int> labels;  // N, each in [0, K)
    std::optional<Matrix> features;
    std::optional<ClassifierHead> head;

    std::size_t size() const { return logits.rows(); }
    std::size_t num_classes() const { return logits.cols(); }

    void validate() const {
        if (logits.rows() < 1) throw InvalidInput("EvalSet: need at least one sample");
        if (logits.cols() < 2) throw InvalidInput("EvalSet: need at least two classes");
        if (labels.size() != logits.rows())
            throw InvalidInput("EvalSet: labels length does not match logits rows");
        if (!logits.all_finite()) throw InvalidInput("EvalSet: non-finite logit");
        const int k = static_cast<int>(logits.cols());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= k)
                throw InvalidInput("EvalSet: label out of range at row " + std::to_string(i));
        }
        if (features) {
            if (features->rows() != logits.rows())
                throw InvalidInput("EvalSet: features rows do not match logits rows");
            if (!features->all_finite()) throw InvalidInput("EvalSet: non-finite feature");
        }
        if (head) {
            if (head->weights.rows() != logits.cols() || head->bias.size() != logits.cols())
                throw InvalidInput("EvalSet: head shape does not match class count");
            if (features && head->weights.cols() != features->cols())
                throw InvalidInput("EvalSet: head width does not match feature dimension");
        }
        // When both are present the stored logits must be reproducible from
        // the head, otherwise rectified scores would silently disagree.
        if (features && head) {
            for (std::size_t i = 0; i < logits.rows(); ++i) {
                const auto recomputed = head->apply(features->row(i));
                for (std::size_t c = 0; c < logits.cols(); ++c) {
                    if (std::abs(recomputed[c] - logits(i, c)) > 1e-6)
                        throw InvalidInput("EvalSet: head(features) does not reproduce logits at row " +
                                           std::to_string(i));
                }
            }
        }
    }
};

/// Argmax predictions (lowest index wins ties) and per-sample correctness.
struct CorrectnessMask {
    std::vector<int> predicted;
    std::vector<bool> correct;

    std::size_t size() const { return predicted.size(); }
};

inline int argmax_row(std::span<const double> row) {
    int best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = static_cast<int>(k);
    return best;
}

inline CorrectnessMask correctness(const EvalSet& eval) {
    CorrectnessMask mask;
    const std::size_t n = eval.size();
    mask.predicted.resize(n);
    mask.correct.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask.predicted[i] = argmax_row(eval.logits.row(i));
        mask.correct[i] = (mask.predicted[i] == eval.labels[i]);
    }
    return mask;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_number(const std::string& s, std::size_t line_no) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw InvalidInput("line " + std::to_string(line_no) + ": bad numeric field '" + s + "'");
    return v;
}

inline int parse_int(const std::string& s, std::size_t line_no) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw InvalidInput("line " + std::to_string(line_no) + ": bad integer field '" + s + "'");
    return static_cast<int>(v);
}

}  // namespace detail

/// Reads the `l0,...,l{K-1},label` CSV format. Errors carry 1-based line numbers.
inline EvalSet load_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header.back() != "label")
        throw InvalidInput(path + ": line 1: expected header l0,...,l{K-1},label");
    const std::size_t k = header.size() - 1;
    for (std::size_t c = 0; c < k; ++c) {
        if (header[c] != "l" + std::to_string(c))
            throw InvalidInput(path + ": line 1: expected column l" + std::to_string(c));
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != k + 1)
            throw InvalidInput(path + ": line " + std::to_string(line_no) + ": expected " +
                               std::to_string(k + 1) + " fields, got " + std::to_string(fields.size()));
        for (std::size_t c = 0; c < k; ++c) values.push_back(detail::parse_number(fields[c], line_no));
        labels.push_back(detail::parse_int(fields.back(), line_no));
    }
    if (labels.empty()) throw InvalidInput(path + ": no data rows");

    EvalSet eval;
    eval.logits = Matrix(labels.size(), k);
    eval.logits.data() = std::move(values);
    eval.labels = std::move(labels);
    eval.validate();
    return eval;
}

inline void save_eval_csv(const EvalSet& eval, std::ostream& out) {
    const std::size_t k = eval.num_classes();
    for (std::size_t c = 0; c < k; ++c) out << 'l' << c << ',';
    out << "label\n";
    for (std::size_t i = 0; i < eval.size(); ++i) {
        for (std::size_t c = 0; c < k; ++c) out << format_double(eval.logits(i, c)) << ',';
        out << eval.labels[i] << '\n';
    }
}

inline void save_eval_csv(const EvalSet& eval, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save_eval_csv(eval, out);
}

/// Row-aligned matrix CSV with header `<prefix>0,...,<prefix>{D-1}`; "f" for
/// feature files, "q" for posterior files.
inline Matrix load_matrix_csv(const std::string& path, const std::string& prefix) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
    auto header = detail::split_csv_line(line);
    const std::size_t d = header.size();
    for (std::size_t c = 0; c < d; ++c) {
        if (header[c] != prefix + std::to_string(c))
            throw InvalidInput(path + ": line 1: expected column " + prefix + std::to_string(c));
    }
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != d)
            throw InvalidInput(path + ": line " + std::to_string(line_no) + ": expected " +
                               std::to_string(d) + " fields");
        for (auto& f : fields) values.push_back(detail::parse_number(f, line_no));
        ++rows;
    }
    Matrix m(rows, d);
    m.data() = std::move(values);
    return m;
}

inline Matrix load_features_csv(const std::string& path) { return load_matrix_csv(path, "f"); }

/// Head JSON: {"weights": [[...], ...], "bias": [...]}.
inline ClassifierHead load_head_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw InvalidInput(path + ": " + e.what());
    }
    if (!j.contains("weights") || !j.contains("bias"))
        throw InvalidInput(path + ": head JSON needs 'weights' and 'bias'");
    const auto& w = j["weights"];
    if (!w.is_array() || w.empty()) throw InvalidInput(path + ": 'weights' must be a non-empty array");
    ClassifierHead head;
    const std::size_t rows = w.size();
    const std::size_t cols = w[0].size();
    head.weights = Matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (w[r].size() != cols) throw InvalidInput(path + ": ragged weight matrix");
        for (std::size_t c = 0; c < cols; ++c) head.weights(r, c) = w[r][c].get<double>();
    }
    head.bias = j["bias"].get<std::vector<double>>();
    if (head.bias.size() != rows) throw InvalidInput(path + ": bias length does not match weights");
    return head;
}

}  // namespace fpkit
