#pragma once

// Semantic isotropy of a set of response embeddings.
//
// Pipeline: normalize rows -> cosine (Gram) kernel -> eigenvalues of the
// trace-normalized kernel -> von Neumann entropy -> entropy / ln N.
// Frobenius norm, log-determinant and trace of the inverse are offered as
// alternative dispersion measures over the raw (unit-diagonal) kernel.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isotropy/errors.h"
#include "isotropy/matrix.h"

namespace isotropy {

// Serial paths are the reference implementations; parallel paths use
// OpenMP and must produce bit-identical results.
enum class Exec { serial, parallel };

class InvalidEmbedding : public Error {
public:
    using Error::Error;
};

class ZeroNormEmbedding : public Error {
public:
    explicit ZeroNormEmbedding(std::size_t index);
    std::size_t index;
};

class NotSymmetric : public Error {
public:
    using Error::Error;
};

class InvalidKernel : public Error {
public:
    using Error::Error;
};

class IndefiniteKernel : public Error {
public:
    explicit IndefiniteKernel(double eigenvalue);
    double eigenvalue;
};

class InvalidSpectrum : public Error {
public:
    using Error::Error;
};

class TooFewSamples : public Error {
public:
    explicit TooFewSamples(std::size_t n);
    std::size_t n;
};

class UnknownMeasure : public Error {
public:
    using Error::Error;
};

inline constexpr double kZeroNormThreshold = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-9;
inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr double kDiagonalTolerance = 1e-9;
inline constexpr double kEntryTolerance = 1e-9;
// Normalized eigenvalues in [-kNegativeEigenTolerance, 0) are clamped to 0;
// anything lower means the kernel is genuinely indefinite.
inline constexpr double kNegativeEigenTolerance = 1e-8;
inline constexpr double kSpectrumSumTolerance = 1e-8;
inline constexpr double kDefaultEigenFloor = 1e-12;

class Embedding {
public:
    // Throws InvalidEmbedding when empty or when any entry is NaN/Inf.
    explicit Embedding(std::vector<double> values);

    std::size_t dim() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double norm() const;

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<double> values_;
};

class EmbeddingSet {
public:
    // Requires at least one row and a common dimension. When normalized is
    // true every row is checked to be unit-norm.
    explicit EmbeddingSet(std::vector<Embedding> rows, bool normalized = false);

    std::size_t size() const { return rows_.size(); }
    std::size_t dim() const { return rows_.front().dim(); }
    bool normalized() const { return normalized_; }
    const Embedding& operator[](std::size_t i) const { return rows_[i]; }
    std::span<const Embedding> rows() const { return rows_; }

    // The first n rows, in order.
    EmbeddingSet first(std::size_t n) const;

private:
    std::vector<Embedding> rows_;
    bool normalized_ = false;
};

class CosineKernel {
public:
    // Validates symmetry, unit diagonal and entry bounds. Positive
    // semidefiniteness is checked when eigenvalues are computed.
    static CosineKernel from_matrix(Matrix entries);

    std::size_t n() const { return entries_.rows(); }
    const Matrix& entries() const { return entries_; }
    double operator()(std::size_t i, std::size_t j) const { return entries_(i, j); }

private:
    explicit CosineKernel(Matrix entries) : entries_(std::move(entries)) {}
    Matrix entries_;
};

// Eigenvalues of a trace-normalized kernel, sorted descending.
struct EigenSpectrum {
    std::vector<double> eigenvalues;
};

enum class Measure { vne, frobenius, log_det, trace_inverse };

std::string_view measure_name(Measure m);
Measure parse_measure(std::string_view name);
std::vector<Measure> all_measures();

struct MeasureConfig {
    double eigen_floor = kDefaultEigenFloor;
    double negative_eigen_tolerance = kNegativeEigenTolerance;
    double jacobi_tolerance = 1e-12;
    std::vector<Measure> measures;
};

struct IsotropyReport {
    double vne = 0.0;          // nats
    double score = 0.0;        // vne / ln n
    double frobenius = 0.0;
    double log_det = 0.0;
    double trace_inverse = 0.0;
    std::size_t n = 0;
    MeasureConfig measure_config;

    // The regressor for a measure: the isotropy score for vne, the raw value
    // otherwise.
    double value(Measure m) const;
};

EmbeddingSet normalize_rows(const EmbeddingSet& set);

CosineKernel cosine_kernel(const EmbeddingSet& set, Exec exec = Exec::parallel);

// Throws NotSymmetric, InvalidKernel (non-positive trace) or IndefiniteKernel.
EigenSpectrum eigen_symmetric(const Matrix& kernel);
EigenSpectrum eigen_symmetric(const CosineKernel& kernel);

double von_neumann_entropy(const EigenSpectrum& spectrum);

double isotropy_score(const CosineKernel& kernel);
double frobenius_measure(const CosineKernel& kernel);
double log_det_measure(const CosineKernel& kernel, double floor = kDefaultEigenFloor);
double trace_inverse_measure(const CosineKernel& kernel, double floor = kDefaultEigenFloor);

IsotropyReport score_topic(const EmbeddingSet& set, const std::vector<Measure>& measures,
                           const MeasureConfig& config = {}, Exec exec = Exec::serial);

// One entry per input set; failures are captured per topic so a single bad
// topic does not abort the batch.
struct TopicScore {
    std::optional<IsotropyReport> report;
    std::string error;
};

std::vector<TopicScore> score_topics(std::span<const EmbeddingSet> sets,
                                     const std::vector<Measure>& measures,
                                     const MeasureConfig& config = {},
                                     Exec exec = Exec::parallel);

}  // namespace isotropy
