#pragma once

// Trainable stack: backbone F, projection head H, All-in-One classifier C
// (2K logits on the head embedding) and an optional K-way closed-set head.
// Forward evaluation, reverse-mode gradients, SGD with inverse decay,
// inference rules and the binary checkpoint format.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "san/core_math.hpp"
#include "san/errors.hpp"
#include "san/losses.hpp"
#include "san/rng.hpp"

namespace san {

enum class Activation { Relu, Tanh, Identity };

inline Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "identity") return Activation::Identity;
    throw InvalidArgument("unknown activation '" + name + "'");
}

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "?";
}

struct NetworkSpec {
    int input_dim = 2;
    /// Hidden widths followed by the embedding width. The last layer is linear.
    std::vector<int> backbone_layers{256, 256};
    /// Projection head widths; last is the head output width. The last layer is linear.
    std::vector<int> head_layers{2048, 256};
    /// 2K, two channels per known class.
    int aio_outputs = 4;
    bool closed_head = true;
    Activation activation = Activation::Relu;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim < 1) throw InvalidArgument("NetworkSpec: input_dim must be >= 1");
        if (backbone_layers.empty()) throw InvalidArgument("NetworkSpec: backbone needs at least one layer");
        if (head_layers.empty()) throw InvalidArgument("NetworkSpec: head needs at least one layer");
        for (int w : backbone_layers)
            if (w < 1) throw InvalidArgument("NetworkSpec: layer widths must be >= 1");
        for (int w : head_layers)
            if (w < 1) throw InvalidArgument("NetworkSpec: layer widths must be >= 1");
        if (aio_outputs < 4 || aio_outputs % 2 != 0) throw InvalidArgument("NetworkSpec: aio_outputs must be even and >= 4");
    }

    int known_classes() const { return aio_outputs / 2; }
    int embedding_dim() const { return backbone_layers.back(); }
    int head_dim() const { return head_layers.back(); }
};

template <typename T>
struct DenseLayer {
    Mat<T> w;  ///< out x in
    Vec<T> b;  ///< out

    Eigen::Index in() const { return w.cols(); }
    Eigen::Index out() const { return w.rows(); }
};

/// All layers in one flat list: backbone, head, AIO, closed-set (if enabled).
template <typename T>
struct Parameters {
    std::vector<DenseLayer<T>> layers;
    std::size_t backbone_count = 0;
    std::size_t head_count = 0;
    bool has_closed = false;

    std::size_t aio_index() const { return backbone_count + head_count; }
    std::size_t closed_index() const { return aio_index() + 1; }

    /// Zero tensor with the same shapes.
    Parameters zeros_like() const {
        Parameters g = *this;
        for (auto& l : g.layers) {
            l.w.setZero();
            l.b.setZero();
        }
        return g;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
        return n;
    }

    /// Flat coordinate access: per layer, weights (column-major) then biases.
    T& coord(std::size_t idx) {
        for (auto& l : layers) {
            const auto nw = static_cast<std::size_t>(l.w.size());
            if (idx < nw) return l.w.data()[idx];
            idx -= nw;
            const auto nb = static_cast<std::size_t>(l.b.size());
            if (idx < nb) return l.b.data()[idx];
            idx -= nb;
        }
        throw InvalidArgument("Parameters::coord: index out of range");
    }
    T coord(std::size_t idx) const { return const_cast<Parameters*>(this)->coord(idx); }

    /// Index of the layer owning flat coordinate `idx`.
    std::size_t layer_of(std::size_t idx) const {
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto n = static_cast<std::size_t>(layers[li].w.size() + layers[li].b.size());
            if (idx < n) return li;
            idx -= n;
        }
        throw InvalidArgument("Parameters::layer_of: index out of range");
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.w.allFinite() || !l.b.allFinite()) return false;
        return true;
    }

    /// -1 if all finite, else the first layer holding a non-finite value.
    int first_non_finite_layer() const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (!layers[i].w.allFinite() || !layers[i].b.allFinite()) return static_cast<int>(i);
        return -1;
    }

    Parameters& operator+=(const Parameters& o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].w += o.layers[i].w;
            layers[i].b += o.layers[i].b;
        }
        return *this;
    }

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> p;
        p.backbone_count = backbone_count;
        p.head_count = head_count;
        p.has_closed = has_closed;
        for (const auto& l : layers) p.layers.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
        return p;
    }
};

namespace detail {

inline std::vector<std::pair<int, int>> layer_shapes(const NetworkSpec& spec) {
    std::vector<std::pair<int, int>> shapes;  // (in, out)
    int in = spec.input_dim;
    for (int w : spec.backbone_layers) {
        shapes.emplace_back(in, w);
        in = w;
    }
    for (int w : spec.head_layers) {
        shapes.emplace_back(in, w);
        in = w;
    }
    shapes.emplace_back(spec.head_dim(), spec.aio_outputs);
    if (spec.closed_head) shapes.emplace_back(spec.head_dim(), spec.known_classes());
    return shapes;
}

}  // namespace detail

/// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases, drawn from the spec seed.
template <typename T = double>
Parameters<T> init_parameters(const NetworkSpec& spec) {
    spec.validate();
    Parameters<T> p;
    p.backbone_count = spec.backbone_layers.size();
    p.head_count = spec.head_layers.size();
    p.has_closed = spec.closed_head;
    Rng rng = make_stream(spec.seed, {kTagInit});
    for (auto [in, out] : detail::layer_shapes(spec)) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        DenseLayer<T> l{Mat<T>(out, in), Vec<T>::Zero(out)};
        for (Eigen::Index c = 0; c < l.w.cols(); ++c)
            for (Eigen::Index r = 0; r < l.w.rows(); ++r) l.w(r, c) = static_cast<T>(dist(rng));
        p.layers.push_back(std::move(l));
    }
    return p;
}

template <typename T>
void check_shapes(const Parameters<T>& p, const NetworkSpec& spec) {
    const auto shapes = detail::layer_shapes(spec);
    if (shapes.size() != p.layers.size()) throw InvalidArgument("parameters do not match network spec (layer count)");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (p.layers[i].in() != shapes[i].first || p.layers[i].out() != shapes[i].second ||
            p.layers[i].b.size() != shapes[i].second)
            throw InvalidArgument("parameters do not match network spec (layer " + std::to_string(i) + ")");
    }
}

template <typename T>
struct ForwardResult {
    Mat<T> backbone;       ///< m x embedding_dim
    Mat<T> head;           ///< m x head_dim
    Mat<T> aio_logits;     ///< m x 2K
    Mat<T> closed_logits;  ///< m x K, empty when the closed head is disabled
    /// inputs[l] is the input to layer l; pre[l] is its pre-activation output.
    std::vector<Mat<T>> inputs;
    std::vector<Mat<T>> pre;
};

namespace detail {

template <typename T>
Mat<T> activate(const Mat<T>& x, Activation a) {
    switch (a) {
        case Activation::Relu: return x.cwiseMax(T(0));
        case Activation::Tanh: return x.array().tanh().matrix();
        case Activation::Identity: return x;
    }
    return x;
}

/// Multiplies `grad` by the activation derivative evaluated at `pre`.
template <typename T>
Mat<T> activate_backward(const Mat<T>& pre, const Mat<T>& grad, Activation a) {
    switch (a) {
        case Activation::Relu: return (pre.array() > T(0)).select(grad, T(0));
        case Activation::Tanh: return (grad.array() * (T(1) - pre.array().tanh().square())).matrix();
        case Activation::Identity: return grad;
    }
    return grad;
}

template <typename T>
Mat<T> affine(const Mat<T>& x, const DenseLayer<T>& l) {
    Mat<T> y = x * l.w.transpose();
    y.rowwise() += l.b.transpose();
    return y;
}

}  // namespace detail

/// Rows of `x` are samples.
template <typename T>
ForwardResult<T> forward(const Parameters<T>& params, const NetworkSpec& spec, const Mat<T>& x) {
    if (x.cols() != spec.input_dim)
        throw InvalidArgument("forward: feature dimension " + std::to_string(x.cols()) + " does not match spec " +
                              std::to_string(spec.input_dim));
    check_shapes(params, spec);
    ForwardResult<T> r;
    r.inputs.reserve(params.layers.size());
    r.pre.reserve(params.layers.size());

    auto run_block = [&](Mat<T> h, std::size_t first, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t li = first + i;
            r.inputs.push_back(h);
            r.pre.push_back(detail::affine(h, params.layers[li]));
            h = (i + 1 == count) ? r.pre.back() : detail::activate(r.pre.back(), spec.activation);
        }
        return h;
    };
    r.backbone = run_block(x, 0, params.backbone_count);
    r.head = run_block(r.backbone, params.backbone_count, params.head_count);
    r.aio_logits = run_block(r.head, params.aio_index(), 1);
    if (params.has_closed) r.closed_logits = run_block(r.head, params.closed_index(), 1);
    return r;
}

/// Upstream gradients of a scalar objective with respect to forward outputs.
/// Empty matrices mean "no contribution".
template <typename T>
struct OutputGrads {
    Mat<T> backbone;
    Mat<T> head;
    Mat<T> aio_logits;
    Mat<T> closed_logits;
};

/// Reverse pass; accumulates into `grad` (which must be shaped like params).
template <typename T>
void backward(const Parameters<T>& params, const NetworkSpec& spec, const ForwardResult<T>& fwd,
              const OutputGrads<T>& up, Parameters<T>& grad) {
    const Eigen::Index m = fwd.backbone.rows();
    auto layer_back = [&](std::size_t li, const Mat<T>& g_out) {
        grad.layers[li].w += g_out.transpose() * fwd.inputs[li];
        grad.layers[li].b += g_out.colwise().sum().transpose();
        return Mat<T>(g_out * params.layers[li].w);
    };
    auto block_back = [&](Mat<T> g, std::size_t first, std::size_t count) {
        for (std::size_t i = count; i-- > 0;) {
            const std::size_t li = first + i;
            if (i + 1 != count) g = detail::activate_backward(fwd.pre[li], g, spec.activation);
            g = layer_back(li, g);
        }
        return g;
    };

    Mat<T> g_head = up.head.size() ? up.head : Mat<T>::Zero(m, fwd.head.cols());
    if (up.aio_logits.size()) g_head += layer_back(params.aio_index(), up.aio_logits);
    if (params.has_closed && up.closed_logits.size()) g_head += layer_back(params.closed_index(), up.closed_logits);

    Mat<T> g_bb = block_back(g_head, params.backbone_count, params.head_count);
    if (up.backbone.size()) g_bb += up.backbone;
    block_back(g_bb, 0, params.backbone_count);
}

// ---------------------------------------------------------------------------
// Optimizer.

struct ScheduleConfig {
    double lr0 = 0.01;
    double decay_gamma = 10.0;
    double decay_power = 0.75;
};

/// lr0 * (1 + gamma * t / T)^(-p)
inline double learning_rate(const ScheduleConfig& s, std::size_t step, std::size_t total_steps) {
    const double frac = total_steps == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(total_steps);
    return s.lr0 * std::pow(1.0 + s.decay_gamma * frac, -s.decay_power);
}

/// Scales `grad` down so its global L2 norm is at most `max_norm`.
template <typename T>
void clip_gradient(Parameters<T>& grad, T max_norm) {
    T sq = T(0);
    for (const auto& l : grad.layers) sq += l.w.squaredNorm() + l.b.squaredNorm();
    const T norm = std::sqrt(sq);
    if (!(norm > max_norm)) return;
    const T f = max_norm / norm;
    for (auto& l : grad.layers) {
        l.w *= f;
        l.b *= f;
    }
}

template <typename T>
void sgd_step(Parameters<T>& params, const Parameters<T>& grad, std::size_t step, std::size_t total_steps,
              const ScheduleConfig& sched) {
    const T lr = static_cast<T>(learning_rate(sched, step, total_steps));
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        params.layers[i].w -= lr * grad.layers[i].w;
        params.layers[i].b -= lr * grad.layers[i].b;
    }
}

// ---------------------------------------------------------------------------
// Inference.

/// Known(k) with 0-based k, or Unknown.
struct Decision {
    int known_class = -1;

    static Decision unknown() { return {}; }
    static Decision known(int k) { return Decision{k}; }
    bool is_unknown() const { return known_class < 0; }
    bool operator==(const Decision&) const = default;
};

/// Argmax over all 2K channels. Ties: any unknown channel at the maximum wins;
/// among known channels the lower index wins.
template <typename T>
Decision aio_infer(const AIOProbabilities<T>& probs) {
    const T best = std::max(probs.c.maxCoeff(), probs.c_tilde.maxCoeff());
    for (Eigen::Index k = 0; k < probs.c_tilde.size(); ++k)
        if (probs.c_tilde(k) == best) return Decision::unknown();
    for (Eigen::Index k = 0; k < probs.c.size(); ++k)
        if (probs.c(k) == best) return Decision::known(static_cast<int>(k));
    return Decision::unknown();
}

/// One-vs-all rule: closed-set argmax k, then Unknown if that class's binary
/// head gives p(positive) < threshold.
template <typename T>
Decision ova_infer(const Vec<T>& closed_logits, const Vec<T>& ova_logits, double threshold = 0.5) {
    const Eigen::Index k_count = closed_logits.size();
    if (ova_logits.size() != 2 * k_count) throw InvalidArgument("ova_infer: logits size mismatch");
    Eigen::Index k = 0;
    for (Eigen::Index i = 1; i < k_count; ++i)
        if (closed_logits(i) > closed_logits(k)) k = i;
    const T u = ova_logits(k) - ova_logits(k_count + k);
    const double p_pos = 1.0 / (1.0 + std::exp(-static_cast<double>(u)));
    return p_pos < threshold ? Decision::unknown() : Decision::known(static_cast<int>(k));
}

// ---------------------------------------------------------------------------
// Checkpoints: "SANP", u32 version, u32 tensor count, then per tensor
// u32 rows, u32 cols, rows*cols little-endian f64 in row-major order.
// Each layer contributes two tensors: weights (out x in) then bias (out x 1).

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint truncated");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Parameters<double>& p) {
    os.write("SANP", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(2 * p.layers.size()));
    for (const auto& l : p.layers) {
        detail::put_u32(os, static_cast<std::uint32_t>(l.w.rows()));
        detail::put_u32(os, static_cast<std::uint32_t>(l.w.cols()));
        for (Eigen::Index r = 0; r < l.w.rows(); ++r)
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) detail::put_f64(os, l.w(r, c));
        detail::put_u32(os, static_cast<std::uint32_t>(l.b.size()));
        detail::put_u32(os, 1);
        for (Eigen::Index r = 0; r < l.b.size(); ++r) detail::put_f64(os, l.b(r));
    }
}

/// Reads a checkpoint and validates it against `spec`.
inline Parameters<double> read_checkpoint(std::istream& is, const NetworkSpec& spec) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SANP", 4) != 0) throw IoError("checkpoint: bad magic");
    const auto version = detail::get_u32(is);
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const auto tensors = detail::get_u32(is);
    if (tensors % 2 != 0) throw IoError("checkpoint: odd tensor count");
    Parameters<double> p;
    p.backbone_count = spec.backbone_layers.size();
    p.head_count = spec.head_layers.size();
    p.has_closed = spec.closed_head;
    for (std::uint32_t t = 0; t < tensors / 2; ++t) {
        DenseLayer<double> l;
        const auto rows = detail::get_u32(is), cols = detail::get_u32(is);
        l.w.resize(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) l.w(r, c) = detail::get_f64(is);
        const auto brows = detail::get_u32(is), bcols = detail::get_u32(is);
        if (bcols != 1 || brows != rows) throw IoError("checkpoint: bias shape mismatch");
        l.b.resize(brows);
        for (std::uint32_t r = 0; r < brows; ++r) l.b(r) = detail::get_f64(is);
        p.layers.push_back(std::move(l));
    }
    check_shapes(p, spec);
    return p;
}

inline void save_checkpoint(const std::string& path, const Parameters<double>& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_checkpoint(os, p);
    if (!os) throw IoError("write failed: " + path);
}

inline Parameters<double> load_checkpoint(const std::string& path, const NetworkSpec& spec) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_checkpoint(is, spec);
}

}  // namespace san
