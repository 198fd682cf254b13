#pragma once

#include "json.hpp"

#include "fpkit/common.hpp"

namespace fpkit {

/// Parameter-shaped container used for gradients, momentum buffers and SAM
/// perturbations.
struct ParamVec {
    std::vector<Matrix> w;
    std::vector<std::vector<double>> b;

    double norm2() const {
        double s = 0.0;
        for (const auto& m : w)
            for (double v : m.data()) s += v * v;
        for (const auto& vec : b)
            for (double v : vec) s += v * v;
        return std::sqrt(s);
    }

    void scale(double a) {
        for (auto& m : w)
            for (double& v : m.data()) v *= a;
        for (auto& vec : b)
            for (double& v : vec) v *= a;
    }

    template <typename Fn>
    void zip(const ParamVec& other, Fn&& fn) {
        for (std::size_t l = 0; l < w.size(); ++l) {
            auto& mine = w[l].data();
            const auto& theirs = other.w[l].data();
            for (std::size_t i = 0; i < mine.size(); ++i) fn(mine[i], theirs[i]);
        }
        for (std::size_t l = 0; l < b.size(); ++l)
            for (std::size_t i = 0; i < b[l].size(); ++i) fn(b[l][i], other.b[l][i]);
    }
};

/// Fully connected ReLU network with a linear output layer. Layer sizes run
/// [input_dim, hidden..., num_classes].
struct MlpModel {
    std::vector<std::size_t> layers;
    std::vector<Matrix> w;                // w[l]: layers[l+1] x layers[l]
    std::vector<std::vector<double>> b;   // b[l]: layers[l+1]

    static MlpModel init(std::vector<std::size_t> layer_sizes, Rng& rng) {
        if (layer_sizes.size() < 2) throw InvalidParam("MlpModel: need at least input and output layer");
        for (std::size_t s : layer_sizes)
            if (s == 0) throw InvalidParam("MlpModel: zero-width layer");
        MlpModel m;
        m.layers = std::move(layer_sizes);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
            const std::size_t fan_in = m.layers[l];
            const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
            Matrix wl(m.layers[l + 1], m.layers[l]);
            for (double& v : wl.data()) v = std_dev * normal(rng);
            m.w.push_back(std::move(wl));
            m.b.emplace_back(m.layers[l + 1], 0.0);
        }
        return m;
    }

    std::size_t num_layers() const { return w.size(); }
    std::size_t input_dim() const { return layers.front(); }
    std::size_t output_dim() const { return layers.back(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& m : w) n += m.data().size();
        for (const auto& v : b) n += v.size();
        return n;
    }

    std::vector<double> to_flat() const {
        std::vector<double> flat;
        flat.reserve(param_count());
        for (const auto& m : w) flat.insert(flat.end(), m.data().begin(), m.data().end());
        for (const auto& v : b) flat.insert(flat.end(), v.begin(), v.end());
        return flat;
    }

    void from_flat(std::span<const double> flat) {
        std::size_t pos = 0;
        for (auto& m : w) {
            std::copy_n(flat.begin() + pos, m.data().size(), m.data().begin());
            pos += m.data().size();
        }
        for (auto& v : b) {
            std::copy_n(flat.begin() + pos, v.size(), v.begin());
            pos += v.size();
        }
    }

    ParamVec zeros_like() const {
        ParamVec p;
        for (const auto& m : w) p.w.emplace_back(m.rows(), m.cols());
        for (const auto& v : b) p.b.emplace_back(v.size(), 0.0);
        return p;
    }

    void add_scaled(const ParamVec& delta, double factor) {
        for (std::size_t l = 0; l < w.size(); ++l) {
            auto& mine = w[l].data();
            const auto& d = delta.w[l].data();
            for (std::size_t i = 0; i < mine.size(); ++i) mine[i] += factor * d[i];
        }
        for (std::size_t l = 0; l < b.size(); ++l)
            for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += factor * delta.b[l][i];
    }
};

/// Everything backward needs: acts[0] is the input batch, acts[l] the
/// post-ReLU output of layer l-1, pre[l] the pre-activation of layer l.
struct ForwardCache {
    std::vector<Matrix> acts;
    std::vector<Matrix> pre;

    const Matrix& logits() const { return acts.back(); }
};

inline ForwardCache forward_cached(const MlpModel& model, const Matrix& batch) {
    if (batch.cols() != model.input_dim()) throw InvalidInput("forward: input width mismatch");
    ForwardCache cache;
    cache.acts.push_back(batch);
    const std::size_t depth = model.num_layers();
    for (std::size_t l = 0; l < depth; ++l) {
        const Matrix& x = cache.acts.back();
        const Matrix& wl = model.w[l];
        Matrix z(x.rows(), wl.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto xi = x.row(i);
            for (std::size_t o = 0; o < wl.rows(); ++o) {
                double acc = model.b[l][o];
                const auto wrow = wl.row(o);
                for (std::size_t d = 0; d < wrow.size(); ++d) acc += wrow[d] * xi[d];
                z(i, o) = acc;
            }
        }
        cache.pre.push_back(z);
        if (l + 1 < depth) {
            for (double& v : z.data()) v = std::max(v, 0.0);
        }
        cache.acts.push_back(std::move(z));
    }
    return cache;
}

inline Matrix forward(const MlpModel& model, const Matrix& batch) {
    return forward_cached(model, batch).logits();
}

/// Backprop of dL/dlogits through the cache; returns parameter gradients of
/// the same shapes as the model.
inline ParamVec backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits) {
    ParamVec grads = model.zeros_like();
    Matrix delta = dlogits;
    for (std::size_t l = model.num_layers(); l-- > 0;) {
        const Matrix& input = cache.acts[l];
        Matrix& gw = grads.w[l];
        auto& gb = grads.b[l];
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            const auto di = delta.row(i);
            const auto xi = input.row(i);
            for (std::size_t o = 0; o < di.size(); ++o) {
                gb[o] += di[o];
                for (std::size_t d = 0; d < xi.size(); ++d) gw(o, d) += di[o] * xi[d];
            }
        }
        if (l == 0) break;
        const Matrix& wl = model.w[l];
        const Matrix& pre_prev = cache.pre[l - 1];
        Matrix next(delta.rows(), wl.cols());
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            const auto di = delta.row(i);
            for (std::size_t d = 0; d < wl.cols(); ++d) {
                double acc = 0.0;
                for (std::size_t o = 0; o < wl.rows(); ++o) acc += di[o] * wl(o, d);
                next(i, d) = pre_prev(i, d) > 0.0 ? acc : 0.0;
            }
        }
        delta = std::move(next);
    }
    return grads;
}

inline nlohmann::json model_to_json(const MlpModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t s : model.layers) layers.push_back(s);
    nlohmann::json weights = nlohmann::json::array();
    for (const auto& m : model.w) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(std::move(row));
        }
        weights.push_back(std::move(rows));
    }
    nlohmann::json biases = nlohmann::json::array();
    for (const auto& v : model.b) biases.push_back(v);
    return nlohmann::json{{"layers", layers}, {"weights", weights}, {"biases", biases}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
    MlpModel model;
    if (!j.contains("layers") || !j.contains("weights") || !j.contains("biases"))
        throw InvalidInput("model JSON needs 'layers', 'weights' and 'biases'");
    model.layers = j["layers"].get<std::vector<std::size_t>>();
    for (const auto& wj : j["weights"]) {
        const std::size_t rows = wj.size();
        const std::size_t cols = rows ? wj[0].size() : 0;
        Matrix m(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            if (wj[r].size() != cols) throw InvalidInput("model JSON: ragged weight matrix");
            for (std::size_t c = 0; c < cols; ++c) m(r, c) = wj[r][c].get<double>();
        }
        model.w.push_back(std::move(m));
    }
    for (const auto& bj : j["biases"]) model.b.push_back(bj.get<std::vector<double>>());
    if (model.w.size() + 1 != model.layers.size() || model.b.size() != model.w.size())
        throw InvalidInput("model JSON: inconsistent layer structure");
    for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
        if (model.w[l].rows() != model.layers[l + 1] || model.w[l].cols() != model.layers[l] ||
            model.b[l].size() != model.layers[l + 1])
            throw InvalidInput("model JSON: weight shape does not match layers");
    }
    return model;
}

}  // namespace fpkit
