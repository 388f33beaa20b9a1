#include "gpdense/layers.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace gpdense {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(std::size_t rank, std::size_t want, const char* layer) {
    if (rank != want)
        throw std::invalid_argument(std::string(layer) + ": expected rank " + std::to_string(want) + " input");
}

// col[(c*K + t), b*L + j] = x[b, c, j + t - K/2] (zero outside).
template <typename T>
RowMat<T> im2col(const Tensor<T>& x, int kernel) {
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const long pad = kernel / 2;
    RowMat<T> col(static_cast<long>(C) * kernel, static_cast<long>(B * L));
    for (std::size_t c = 0; c < C; ++c) {
        for (int t = 0; t < kernel; ++t) {
            T* row = col.row(static_cast<long>(c) * kernel + t).data();
            for (std::size_t b = 0; b < B; ++b) {
                const T* src = x.data() + (b * C + c) * L;
                T* dst = row + b * L;
                for (std::size_t j = 0; j < L; ++j) {
                    const long s = static_cast<long>(j) + t - pad;
                    dst[j] = (s >= 0 && s < static_cast<long>(L)) ? src[s] : T{};
                }
            }
        }
    }
    return col;
}

}  // namespace

template <typename T>
void kaiming_normal(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
    if (fan_in == 0) throw std::invalid_argument("kaiming_normal: fan_in must be >= 1");
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------- Embedding

template <typename T>
Embedding<T>::Embedding(int vocab, int dim)
    : vocab_(vocab), dim_(dim), weight_("weight", {static_cast<std::size_t>(vocab), static_cast<std::size_t>(dim)}) {}

template <typename T>
void Embedding<T>::init(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : weight_.value.values()) v = static_cast<T>(dist(rng));
    for (int d = 0; d < dim_; ++d) weight_.value.at(0, d) = T{};
}

template <typename T>
Tensor<T> Embedding<T>::forward(const TokenBatch& batch) {
    const std::size_t B = batch.batch, L = batch.length, D = static_cast<std::size_t>(dim_);
    if (batch.ids.size() != B * L) throw std::invalid_argument("Embedding: token count does not match batch shape");
    Tensor<T> y({B, D, L});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t id = batch.ids[b * L + j];
            if (id >= static_cast<std::size_t>(vocab_)) throw std::out_of_range("Embedding: index outside alphabet");
            for (std::size_t d = 0; d < D; ++d) y.at(b, d, j) = weight_.value.at(id, d);
        }
    cached_ = batch;
    return y;
}

template <typename T>
void Embedding<T>::backward(const Tensor<T>& dy) {
    const std::size_t B = cached_.batch, L = cached_.length, D = static_cast<std::size_t>(dim_);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t id = cached_.ids[b * L + j];
            if (id == 0) continue;  // PAD row stays frozen at zero
            for (std::size_t d = 0; d < D; ++d) weight_.grad.at(id, d) += dy.at(b, d, j);
        }
}

// ---------------------------------------------------------------- Conv1d

template <typename T>
Conv1d<T>::Conv1d(int in_channels, int out_channels, int kernel)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_("weight", {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(in_channels),
                         static_cast<std::size_t>(kernel)}),
      bias_("bias", {static_cast<std::size_t>(out_channels)}) {}

template <typename T>
void Conv1d<T>::init(Rng& rng) {
    kaiming_normal(weight_.value, static_cast<std::size_t>(in_) * kernel_, rng);
    bias_.value.fill(T{});
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x) {
    require_rank(x.rank(), 3, "Conv1d");
    if (x.dim(1) != static_cast<std::size_t>(in_)) throw std::invalid_argument("Conv1d: channel mismatch");
    const std::size_t B = x.dim(0), L = x.dim(2), O = static_cast<std::size_t>(out_);
    const RowMat<T> col = im2col(x, kernel_);
    ConstMapMat<T> w(weight_.value.data(), out_, static_cast<long>(in_) * kernel_);
    const RowMat<T> y = w * col;
    Tensor<T> out({B, O, L});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            const T* src = y.row(static_cast<long>(o)).data() + b * L;
            T* dst = out.data() + (b * O + o) * L;
            const T bias = bias_.value[o];
            for (std::size_t j = 0; j < L; ++j) dst[j] = src[j] + bias;
        }
    input_ = x;
    return out;
}

template <typename T>
Tensor<T> Conv1d<T>::backward(const Tensor<T>& dy) {
    const std::size_t B = input_.dim(0), C = input_.dim(1), L = input_.dim(2), O = static_cast<std::size_t>(out_);
    if (dy.dims() != std::vector<std::size_t>{B, O, L}) throw std::invalid_argument("Conv1d: gradient shape mismatch");
    RowMat<T> g(static_cast<long>(O), static_cast<long>(B * L));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            const T* src = dy.data() + (b * O + o) * L;
            std::copy(src, src + L, g.row(static_cast<long>(o)).data() + b * L);
        }
    const RowMat<T> col = im2col(input_, kernel_);
    MapMat<T> dw(weight_.grad.data(), out_, static_cast<long>(in_) * kernel_);
    dw.noalias() += g * col.transpose();
    for (std::size_t o = 0; o < O; ++o) bias_.grad[o] += g.row(static_cast<long>(o)).sum();

    ConstMapMat<T> w(weight_.value.data(), out_, static_cast<long>(in_) * kernel_);
    const RowMat<T> dcol = w.transpose() * g;
    Tensor<T> dx({B, C, L});
    const long pad = kernel_ / 2;
    for (std::size_t c = 0; c < C; ++c)
        for (int t = 0; t < kernel_; ++t) {
            const T* row = dcol.row(static_cast<long>(c) * kernel_ + t).data();
            for (std::size_t b = 0; b < B; ++b) {
                T* dst = dx.data() + (b * C + c) * L;
                const T* src = row + b * L;
                for (std::size_t j = 0; j < L; ++j) {
                    const long s = static_cast<long>(j) + t - pad;
                    if (s >= 0 && s < static_cast<long>(L)) dst[s] += src[j];
                }
            }
        }
    return dx;
}

// ---------------------------------------------------------------- BatchNorm1d

template <typename T>
BatchNorm1d<T>::BatchNorm1d(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_("gamma", {static_cast<std::size_t>(channels)}),
      beta_("beta", {static_cast<std::size_t>(channels)}),
      running_mean_({static_cast<std::size_t>(channels)}),
      running_var_({static_cast<std::size_t>(channels)}, T{1}) {
    init();
}

template <typename T>
void BatchNorm1d<T>::init() {
    gamma_.value.fill(T{1});
    beta_.value.fill(T{});
    running_mean_.fill(T{});
    running_var_.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm1d<T>::forward(const Tensor<T>& x, Mode mode) {
    require_rank(x.rank(), 3, "BatchNorm1d");
    if (x.dim(1) != static_cast<std::size_t>(channels_)) throw std::invalid_argument("BatchNorm1d: channel mismatch");
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const double n = static_cast<double>(B * L);
    Tensor<T> y(x.dims());
    xhat_ = Tensor<T>(x.dims());
    inv_std_.assign(C, T{});
    last_mode_ = mode;
    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < L; ++j) sum += x.at(b, c, j);
            mean = sum / n;
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < L; ++j) {
                    const double d = x.at(b, c, j) - mean;
                    sq += d * d;
                }
            var = sq / n;
            const double unbiased = n > 1 ? sq / (n - 1) : var;
            running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = static_cast<T>(inv);
        const T g = gamma_.value[c], bt = beta_.value[c];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < L; ++j) {
                const T xh = static_cast<T>((x.at(b, c, j) - mean) * inv);
                xhat_.at(b, c, j) = xh;
                y.at(b, c, j) = g * xh + bt;
            }
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm1d<T>::backward(const Tensor<T>& dy) {
    check_same_shape(dy, xhat_, "BatchNorm1d::backward");
    const std::size_t B = dy.dim(0), C = dy.dim(1), L = dy.dim(2);
    const double n = static_cast<double>(B * L);
    Tensor<T> dx(dy.dims());
    for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < L; ++j) {
                sum_dy += dy.at(b, c, j);
                sum_dy_xhat += static_cast<double>(dy.at(b, c, j)) * xhat_.at(b, c, j);
            }
        gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
        beta_.grad[c] += static_cast<T>(sum_dy);
        const double g = gamma_.value[c], inv = inv_std_[c];
        if (last_mode_ == Mode::Eval) {
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < L; ++j) dx.at(b, c, j) = static_cast<T>(dy.at(b, c, j) * g * inv);
            continue;
        }
        // dx = g*inv/n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
        const double scale = g * inv / n;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < L; ++j)
                dx.at(b, c, j) =
                    static_cast<T>(scale * (n * dy.at(b, c, j) - sum_dy - xhat_.at(b, c, j) * sum_dy_xhat));
    }
    return dx;
}

// ---------------------------------------------------------------- Relu

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
    Tensor<T> y(x.dims());
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T{}) {
            y[i] = x[i];
            mask_[i] = 1;
        }
    }
    dims_ = x.dims();
    return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy) {
    if (dy.dims() != dims_) throw std::invalid_argument("Relu: gradient shape mismatch");
    Tensor<T> dx(dims_);
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (mask_[i]) dx[i] = dy[i];
    return dx;
}

// ---------------------------------------------------------------- MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
    require_rank(x.rank(), 3, "MaxPool2");
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), Lo = (L + 1) / 2;
    Tensor<T> y({B, C, Lo});
    argmax_.assign(y.size(), 0);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * L;
        for (std::size_t j = 0; j < Lo; ++j) {
            std::size_t best = base + 2 * j;
            if (2 * j + 1 < L && x[base + 2 * j + 1] > x[best]) best = base + 2 * j + 1;
            y[bc * Lo + j] = x[best];
            argmax_[bc * Lo + j] = best;
        }
    }
    in_dims_ = x.dims();
    return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) {
    if (dy.size() != argmax_.size()) throw std::invalid_argument("MaxPool2: gradient shape mismatch");
    Tensor<T> dx(in_dims_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
}

// ---------------------------------------------------------------- KMaxPool

template <typename T>
Tensor<T> KMaxPool<T>::forward(const Tensor<T>& x) {
    require_rank(x.rank(), 3, "KMaxPool");
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), K = static_cast<std::size_t>(k_);
    if (k_ < 1 || L < K)
        throw std::invalid_argument("KMaxPool: input length " + std::to_string(L) + " < k=" + std::to_string(k_));
    Tensor<T> y({B, C, K});
    selected_.assign(y.size(), 0);
    std::vector<std::size_t> idx(L);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* row = x.data() + bc * L;
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        auto by_value = [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
        std::nth_element(idx.begin(), idx.begin() + static_cast<long>(K) - 1, idx.end(), by_value);
        std::sort(idx.begin(), idx.begin() + static_cast<long>(K));
        for (std::size_t j = 0; j < K; ++j) {
            y[bc * K + j] = row[idx[j]];
            selected_[bc * K + j] = bc * L + idx[j];
        }
    }
    in_dims_ = x.dims();
    return y;
}

template <typename T>
Tensor<T> KMaxPool<T>::backward(const Tensor<T>& dy) {
    if (dy.size() != selected_.size()) throw std::invalid_argument("KMaxPool: gradient shape mismatch");
    Tensor<T> dx(in_dims_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[selected_[i]] += dy[i];
    return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_("weight", {static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)}),
      bias_("bias", {static_cast<std::size_t>(out_features)}) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
    kaiming_normal(weight_.value, static_cast<std::size_t>(in_), rng);
    bias_.value.fill(T{});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
    require_rank(x.rank(), 2, "Linear");
    if (x.dim(1) != static_cast<std::size_t>(in_)) throw std::invalid_argument("Linear: feature mismatch");
    const long rows = static_cast<long>(x.dim(0));
    Tensor<T> y({x.dim(0), static_cast<std::size_t>(out_)});
    ConstMapMat<T> xm(x.data(), rows, in_);
    ConstMapMat<T> w(weight_.value.data(), out_, in_);
    MapMat<T> ym(y.data(), rows, out_);
    ym.noalias() = xm * w.transpose();
    for (long r = 0; r < rows; ++r)
        for (long o = 0; o < out_; ++o) ym(r, o) += bias_.value[static_cast<std::size_t>(o)];
    input_ = x;
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
    const long rows = static_cast<long>(input_.dim(0));
    if (dy.dims() != std::vector<std::size_t>{input_.dim(0), static_cast<std::size_t>(out_)})
        throw std::invalid_argument("Linear: gradient shape mismatch");
    ConstMapMat<T> g(dy.data(), rows, out_);
    ConstMapMat<T> xm(input_.data(), rows, in_);
    MapMat<T> dw(weight_.grad.data(), out_, in_);
    dw.noalias() += g.transpose() * xm;
    for (long o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += g.col(o).sum();
    Tensor<T> dx(input_.dims());
    ConstMapMat<T> w(weight_.value.data(), out_, in_);
    MapMat<T> dxm(dx.data(), rows, in_);
    dxm.noalias() = g * w;
    return dx;
}

// ---------------------------------------------------------------- loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    require_rank(logits.rank(), 2, "softmax");
    const std::size_t R = logits.dim(0), K = logits.dim(1);
    Tensor<T> p(logits.dims());
    for (std::size_t r = 0; r < R; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(r, k)));
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at(r, k) - mx);
        for (std::size_t k = 0; k < K; ++k) p.at(r, k) = static_cast<T>(std::exp(logits.at(r, k) - mx) / z);
    }
    return p;
}

template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits) {
    require_rank(logits.rank(), 2, "softmax_cross_entropy");
    const std::size_t R = logits.dim(0), K = logits.dim(1);
    if (labels.size() != R) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    if (dlogits) *dlogits = Tensor<T>(logits.dims());
    double loss = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        if (y >= K) throw std::out_of_range("softmax_cross_entropy: label out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(r, k)));
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at(r, k) - mx);
        const double log_z = mx + std::log(z);
        loss += log_z - logits.at(r, y);
        if (dlogits) {
            for (std::size_t k = 0; k < K; ++k) {
                const double p = std::exp(logits.at(r, k) - log_z);
                dlogits->at(r, k) = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(R));
            }
        }
    }
    return loss / static_cast<double>(R);
}

// ---------------------------------------------------------------- channel helpers

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) throw std::invalid_argument("concat_channels: shape mismatch");
    const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), L = a.dim(2);
    Tensor<T> y({B, Ca + Cb, L});
    for (std::size_t n = 0; n < B; ++n) {
        std::copy_n(a.data() + n * Ca * L, Ca * L, y.data() + n * (Ca + Cb) * L);
        std::copy_n(b.data() + n * Cb * L, Cb * L, y.data() + (n * (Ca + Cb) + Ca) * L);
    }
    return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), W = end - begin;
    if (begin > end || end > C) throw std::invalid_argument("slice_channels: range out of bounds");
    Tensor<T> y({B, W, L});
    for (std::size_t n = 0; n < B; ++n) std::copy_n(x.data() + (n * C + begin) * L, W * L, y.data() + n * W * L);
    return y;
}

template <typename T>
void add_channels(Tensor<T>& dst, std::size_t begin, const Tensor<T>& src) {
    const std::size_t B = dst.dim(0), C = dst.dim(1), L = dst.dim(2), W = src.dim(1);
    if (src.dim(0) != B || src.dim(2) != L || begin + W > C) throw std::invalid_argument("add_channels: shape mismatch");
    for (std::size_t n = 0; n < B; ++n) {
        T* d = dst.data() + (n * C + begin) * L;
        const T* s = src.data() + n * W * L;
        for (std::size_t i = 0; i < W * L; ++i) d[i] += s[i];
    }
}

#define GPDENSE_INSTANTIATE(T)                                                                  \
    template void kaiming_normal<T>(Tensor<T>&, std::size_t, Rng&);                             \
    template class Embedding<T>;                                                                \
    template class Conv1d<T>;                                                                   \
    template class BatchNorm1d<T>;                                                              \
    template class Relu<T>;                                                                     \
    template class MaxPool2<T>;                                                                 \
    template class KMaxPool<T>;                                                                 \
    template class Linear<T>;                                                                   \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                            \
    template double softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&, Tensor<T>*); \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);          \
    template void add_channels<T>(Tensor<T>&, std::size_t, const Tensor<T>&);

GPDENSE_INSTANTIATE(float)
GPDENSE_INSTANTIATE(double)

#undef GPDENSE_INSTANTIATE

}  // namespace gpdense
