#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace reanno {

/// Raised when inputs violate a documented contract (bad shapes, ranges, ids).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for unreadable/unwritable files and corrupt encodings.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConflictError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Numerically stable log(sum(exp(x))). Returns -inf when every entry is -inf
/// or the input is empty.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
    const auto a = x.derived().array();
    using Scalar = typename Derived::Scalar;
    if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
    const Scalar m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    // std::exp keeps exp(-inf) exactly 0; Eigen's packet exp clamps it to a denormal.
    return m + std::log((a - m).unaryExpr([](Scalar v) { return std::exp(v); }).sum());
}

/// Squared Euclidean distance accumulated in double, strictly in index order.
/// The fixed order keeps d(a, b) == d(b, a) bit for bit.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    double acc = 0.0;
    const Eigen::Index n = a.size();
    for (Eigen::Index j = 0; j < n; ++j) {
        const double diff = static_cast<double>(a(j)) - static_cast<double>(b(j));
        acc += diff * diff;
    }
    return acc;
}

/// Row-wise softmax with max-shift.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    Matrix<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const Scalar m = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t stable_hash(std::string_view s);

/// SplitMix64 finalizer, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Small deterministic generator. Distribution transforms are implemented here
/// rather than with <random> distributions so that streams are identical across
/// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix_seed(seed)) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double normal();

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Worker cap for internal parallel loops. 0 means "use hardware concurrency".
void set_thread_limit(unsigned n);
unsigned thread_limit();

/// Runs body(i) for i in [0, n) across up to thread_limit() workers. Each index
/// is visited exactly once; callers write to disjoint slots so results equal
/// the sequential loop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace reanno
