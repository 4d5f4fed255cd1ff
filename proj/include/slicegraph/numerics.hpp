#pragma once

#include <slicegraph/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace slicegraph {

/// Dense row-major 64-bit matrix. Node features, hidden states and weights all live here.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Random engine keyed by a tuple of 64-bit values (both halves of each key are used).
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

/// A trainable tensor with its gradient accumulator.
struct ParamTensor {
    Matrix value;
    Matrix grad;

    ParamTensor() = default;
    explicit ParamTensor(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
    ParamTensor(Eigen::Index rows, Eigen::Index cols)
        : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    Eigen::Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// ---------------------------------------------------------------------------
// affine: out = x W + b

inline Matrix affine(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
    if (x.cols() != w.value.rows() || b.value.rows() != 1 || b.value.cols() != w.value.cols())
        throw ConfigError("affine: shape mismatch x=" + shape_string(x) + " W=" + shape_string(w.value) +
                          " b=" + shape_string(b.value));
    Matrix out = x * w.value;
    out.rowwise() += b.value.row(0);
    return out;
}

/// Accumulates dL/dW and dL/db and returns dL/dx (empty when `need_input_grad` is false).
inline Matrix affine_backward(const Matrix& x, ParamTensor& w, ParamTensor& b, const Matrix& grad_out,
                              bool need_input_grad = true) {
    if (grad_out.rows() != x.rows() || grad_out.cols() != w.value.cols())
        throw ConfigError("affine_backward: upstream gradient shape " + shape_string(grad_out));
    w.grad.noalias() += x.transpose() * grad_out;
    b.grad.row(0) += grad_out.colwise().sum();
    if (!need_input_grad) return {};
    return grad_out * w.value.transpose();
}

// ---------------------------------------------------------------------------
// rectify: max(x, slope * x). The derivative at exactly 0 takes the slope branch.

inline Matrix rectify(const Matrix& x, double negative_slope = 0.0) {
    return x.unaryExpr([negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; });
}

inline Matrix rectify_backward(const Matrix& x, const Matrix& grad_out, double negative_slope = 0.0) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        g.data()[i] = grad_out.data()[i] * (x.data()[i] > 0.0 ? 1.0 : negative_slope);
    return g;
}

// ---------------------------------------------------------------------------
// masked_softmax: row-wise softmax over the entries where mask is true.

inline Matrix masked_softmax(const Matrix& scores, const Mask& mask) {
    if (scores.rows() != mask.rows() || scores.cols() != mask.cols())
        throw ConfigError("masked_softmax: mask shape does not match scores");
    Matrix out = Matrix::Zero(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        double row_max = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (Eigen::Index c = 0; c < scores.cols(); ++c)
            if (mask(r, c)) {
                row_max = std::max(row_max, scores(r, c));
                any = true;
            }
        if (!any) throw GraphError("masked_softmax: row " + std::to_string(r) + " has no unmasked entry");
        double total = 0.0;
        for (Eigen::Index c = 0; c < scores.cols(); ++c)
            if (mask(r, c)) {
                out(r, c) = std::exp(scores(r, c) - row_max);
                total += out(r, c);
            }
        out.row(r) /= total;
    }
    return out;
}

/// Given the softmax output `probs` and dL/dprobs, returns dL/dscores. Masked entries
/// have zero probability and therefore receive zero gradient.
inline Matrix masked_softmax_backward(const Matrix& probs, const Matrix& grad_out) {
    Matrix g(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double dot = probs.row(r).dot(grad_out.row(r));
        g.row(r) = probs.row(r).cwiseProduct((grad_out.row(r).array() - dot).matrix());
    }
    return g;
}

// ---------------------------------------------------------------------------
// cross_entropy: mean over rows of -log softmax(logits)[label].

struct LossResult {
    double loss = 0.0;
    Matrix grad; ///< dL/dlogits, already scaled by 1/batch
};

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        p.row(r) = (logits.row(r).array() - m).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const auto batch = logits.rows();
    const auto classes = logits.cols();
    if (batch == 0 || static_cast<std::size_t>(batch) != labels.size())
        throw ConfigError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(batch) + " rows");
    LossResult result;
    result.grad.resize(batch, classes);
    for (Eigen::Index r = 0; r < batch; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= classes)
            throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
        const double m = logits.row(r).maxCoeff();
        const auto shifted = (logits.row(r).array() - m).eval();
        const double log_z = std::log(shifted.exp().sum());
        result.loss += log_z - shifted(y);
        result.grad.row(r) = (shifted - log_z).exp().matrix();
        result.grad(r, y) -= 1.0;
    }
    result.loss /= static_cast<double>(batch);
    result.grad /= static_cast<double>(batch);
    return result;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Plain SGD (no momentum) with L2 weight decay folded into the gradient:
/// p <- p - lr * (grad + weight_decay * p). Gradients are zeroed afterwards.
/// All gradients are checked before any parameter is touched.
inline void sgd_step(std::span<ParamTensor* const> params, double lr, double weight_decay) {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i]->grad.allFinite())
            throw NumericError("sgd_step: non-finite gradient in parameter tensor " + std::to_string(i) + " (" +
                               shape_string(params[i]->value) + ")");
    for (ParamTensor* p : params) {
        p->value -= lr * (p->grad + weight_decay * p->value);
        p->zero_grad();
    }
}

struct LrSchedule {
    double initial_lr = 1e-3;
    double decay_per_epoch = 0.995;

    void validate() const {
        if (!(initial_lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(decay_per_epoch > 0.0 && decay_per_epoch <= 1.0))
            throw ConfigError("learning-rate decay must lie in (0, 1]");
    }
};

inline double lr_at_epoch(const LrSchedule& s, int epoch) {
    return s.initial_lr * std::pow(s.decay_per_epoch, static_cast<double>(epoch));
}

} // namespace slicegraph
